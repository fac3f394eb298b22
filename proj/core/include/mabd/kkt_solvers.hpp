#pragma once

#include <map>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "mabd/corotated_body.hpp"

namespace mabd {

// One body of a constrained Newton step. Its Hessian is diag4(R) Hbar diag4(R^T).
struct KKTBody {
    const BodyModel* model = nullptr;
    Mat3 R = Mat3::Identity();
    Mat3 A = Mat3::Identity();  // current affine block, used for the rigid embedding
    Vec12 f = Vec12::Zero();
    double h = 0.0;

    Vec12 apply_inverse(const Vec12& x) const { return rotated_solve(*model, R, x, h); }
    Mat12 hessian() const;
};

// Rows grad_a dq_a + grad_b dq_b = rhs. b = -1 means the world side.
struct KKTJoint {
    int a = 0;
    int b = -1;
    MatX grad_a;
    MatX grad_b;
    VecX rhs;
    MatX motion_subspace;  // optional 6 x m relative twist basis, used to order the tree basis

    int rank() const { return static_cast<int>(rhs.size()); }
};

struct KKTProblem {
    std::vector<KKTBody> bodies;
    std::vector<KKTJoint> joints;

    int primal_dim() const { return 12 * static_cast<int>(bodies.size()); }
    int dual_dim() const;
};

struct KKTSolution {
    std::vector<Vec12> dq;
    std::vector<VecX> dlambda;
};

// ||H dq + grad^T dlambda - f|| / ||f|| and the constraint row residual.
struct KKTResidual {
    double primal = 0.0;
    double constraint = 0.0;
};
KKTResidual kkt_residual(const KKTProblem& problem, const KKTSolution& solution);

enum class TopologyKind { Chain, Tree, Loop, Graph };
const char* topology_name(TopologyKind kind);

struct TopologyInfo {
    TopologyKind kind = TopologyKind::Chain;
    std::vector<int> chain_order;  // joints along the path (Chain)
    int root = -1;                 // Tree
    std::vector<int> breakers;     // Loop
};

// Classifies one connected component. Joint endpoints use local body ids, -1 is the world.
TopologyInfo classify_connected(int num_bodies, const std::vector<std::pair<int, int>>& joints, int max_breakers = 4);

struct Island {
    std::vector<int> bodies;
    std::vector<int> joints;
    TopologyInfo topology;  // in island-local indices
};

std::vector<Island> classify_topology(int num_bodies, const std::vector<std::pair<int, int>>& joints,
                                      int max_breakers = 4);

struct SolverStats {
    long block_ops = 0;
    std::vector<int> upward_touches;
    std::vector<int> downward_touches;
    int gs_sweeps = 0;
    double gs_residual = 0.0;
    bool gs_converged = true;
    std::vector<double> gs_history;
};

class DualSystem {
public:
    std::vector<int> sizes;
    std::vector<int> offsets;
    int dim = 0;
    VecX rhs;
    TopologyInfo topology;
    std::vector<std::vector<int>> neighbors;  // joints sharing a body, including self

    // Cached body solves reused by primal recovery.
    std::vector<Vec12> free_step;             // H^-1 f per body
    std::vector<MatX> coupling_a, coupling_b;  // H^-1 grad^T per joint side

    bool has_block(int k, int l) const;
    MatX block(int k, int l) const;
    void add_block(int k, int l, const MatX& value);
    MatX dense() const;
    Eigen::SparseMatrix<double> sparse() const;
    VecX multiply(const VecX& x) const;
    int joint_count() const { return static_cast<int>(sizes.size()); }

private:
    std::map<std::pair<int, int>, MatX> blocks_;  // k <= l only
};

DualSystem assemble_dual(const KKTProblem& problem);
// Checks symmetry and SPD diagonal blocks; throws SolverFailure otherwise.
void check_dual_invariants(const DualSystem& dual, double tol = 1e-8);

KKTSolution recover_primal(const KKTProblem& problem, const DualSystem& dual, const VecX& dlambda);
KKTSolution recover_primal(const KKTProblem& problem, const VecX& dlambda);

// Block Thomas along a joint path; rhs is stacked in path order.
VecX block_thomas(const DualSystem& dual, const std::vector<int>& path, const VecX& rhs, SolverStats* stats = nullptr);
VecX solve_chain(const DualSystem& dual, SolverStats* stats = nullptr);
VecX solve_direct(const DualSystem& dual);

KKTSolution solve_tree_aba(const KKTProblem& problem, int root = -1, SolverStats* stats = nullptr);
KKTSolution solve_loop(const KKTProblem& problem, const std::vector<int>& breakers, SolverStats* stats = nullptr);

std::vector<std::vector<int>> chain_cover(const DualSystem& dual);
struct GaussSeidelResult {
    VecX dlambda;
    double residual = 0.0;
    int sweeps = 0;
    bool converged = false;
    std::vector<double> history;
};
// Forward-then-backward chain relaxation. With accelerate, each sweep preconditions a conjugate-gradient step.
GaussSeidelResult solve_graph_gs(const DualSystem& dual, const std::vector<std::vector<int>>& chains, double tol,
                                 int max_sweeps, bool accelerate = true);

enum class SolverChoice { Auto, Dense, Chain, Aba, Loop, GaussSeidel };
const char* solver_name(SolverChoice choice);

struct SolverSettings {
    SolverChoice choice = SolverChoice::Auto;
    double gs_tol = 1e-6;
    int gs_max_sweeps = 200;
    bool gs_accelerate = true;
    int direct_limit = 250000;  // Auto uses the sparse direct solve up to this dual size on graphs
};

// Solves one island with the solver its topology (or the override) selects.
KKTSolution solve_island(const KKTProblem& problem, const TopologyInfo& topology, const SolverSettings& settings,
                         SolverStats* stats = nullptr);

}  // namespace mabd
