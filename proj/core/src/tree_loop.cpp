#include <algorithm>
#include <deque>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "mabd/kkt_solvers.hpp"

namespace mabd {

namespace {

struct LocalKKT {
    Vec12 dq;
    VecX dlambda;
};

// min 1/2 x^T H x - f^T x  subject to  G x = r.
LocalKKT solve_local_kkt(const Mat12& H, const Vec12& f, const MatX& G, const VecX& r) {
    Eigen::LLT<Mat12> llt(H);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularD, "condensed Hessian is not positive definite");
    LocalKKT out;
    const Vec12 free = llt.solve(f);
    if (G.rows() == 0) {
        out.dq = free;
        out.dlambda = VecX();
        return out;
    }
    const MatX Z = llt.solve(G.transpose());
    const MatX D = G * Z;
    Eigen::LLT<MatX> dllt(D);
    if (dllt.info() != Eigen::Success) throw Error(ErrorCode::SingularD, "local joint system is singular");
    out.dlambda = dllt.solve(G * free - r);
    out.dq = free - Z * out.dlambda;
    return out;
}

struct TreeNode {
    int parent = -1;
    int parent_joint = -1;
    bool child_is_a = true;
    Mat12 Hhat;
    Vec12 fhat;
    MatX S_abd;  // joint-consistent null-space basis of the child gradient
    MatX U;
    MatX D;
    VecX alpha;
    Mat12 X;  // transfer from parent increment to the child particular solution
    Vec12 x0;
};

// Components of a problem that is a forest once some bodies are taken out.
class ForestSolver {
public:
    explicit ForestSolver(const KKTProblem& problem) : problem_(problem) {
        const int M = static_cast<int>(problem.bodies.size());
        std::vector<int> parent(M);
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (const auto& jt : problem.joints) {
            if (jt.b >= 0) parent[std::max(find(jt.a), find(jt.b))] = std::min(find(jt.a), find(jt.b));
        }
        std::vector<int> comp_of(M, -1);
        for (int j = 0; j < M; ++j) {
            const int r = find(j);
            if (comp_of[r] < 0) {
                comp_of[r] = static_cast<int>(components_.size());
                components_.emplace_back();
            }
            comp_of[j] = comp_of[r];
            components_[comp_of[j]].bodies.push_back(j);
        }
        for (int k = 0; k < static_cast<int>(problem.joints.size()); ++k) {
            components_[comp_of[problem.joints[k].a]].joints.push_back(k);
        }
        for (auto& comp : components_) {
            std::vector<int> local(M, -1);
            for (int i = 0; i < static_cast<int>(comp.bodies.size()); ++i) local[comp.bodies[i]] = i;
            comp.problem.bodies.reserve(comp.bodies.size());
            for (int j : comp.bodies) comp.problem.bodies.push_back(problem.bodies[j]);
            std::vector<std::pair<int, int>> ends;
            for (int k : comp.joints) {
                KKTJoint jt = problem.joints[k];
                jt.a = local[jt.a];
                jt.b = jt.b >= 0 ? local[jt.b] : -1;
                ends.emplace_back(jt.a, jt.b);
                comp.problem.joints.push_back(std::move(jt));
            }
            comp.topology = classify_connected(static_cast<int>(comp.bodies.size()), ends, 0);
        }
    }

    KKTSolution solve(const std::vector<Vec12>& f, const std::vector<VecX>& rhs) {
        KKTSolution sol;
        sol.dq.assign(problem_.bodies.size(), Vec12::Zero());
        sol.dlambda.resize(problem_.joints.size());
        for (auto& comp : components_) {
            for (std::size_t i = 0; i < comp.bodies.size(); ++i) comp.problem.bodies[i].f = f[comp.bodies[i]];
            for (std::size_t i = 0; i < comp.joints.size(); ++i) comp.problem.joints[i].rhs = rhs[comp.joints[i]];
            KKTSolution part;
            if (comp.topology.kind == TopologyKind::Chain || comp.topology.kind == TopologyKind::Tree) {
                SolverSettings settings;
                part = solve_island(comp.problem, comp.topology, settings, nullptr);
            } else {
                DualSystem dual = assemble_dual(comp.problem);
                part = recover_primal(comp.problem, dual, solve_direct(dual));
            }
            for (std::size_t i = 0; i < comp.bodies.size(); ++i) sol.dq[comp.bodies[i]] = part.dq[i];
            for (std::size_t i = 0; i < comp.joints.size(); ++i) sol.dlambda[comp.joints[i]] = part.dlambda[i];
        }
        return sol;
    }

private:
    struct Component {
        std::vector<int> bodies;
        std::vector<int> joints;
        KKTProblem problem;
        TopologyInfo topology;
    };
    const KKTProblem& problem_;
    std::vector<Component> components_;
};

}  // namespace

KKTSolution solve_tree_aba(const KKTProblem& problem, int root, SolverStats* stats) {
    const int M = static_cast<int>(problem.bodies.size());
    const int K = static_cast<int>(problem.joints.size());
    if (M == 0) throw Error(ErrorCode::EmptyScene, "tree has no bodies");

    std::vector<std::vector<std::pair<int, int>>> adj(M);  // (joint, other body)
    std::vector<std::vector<int>> world_joints(M);
    int tree_edges = 0;
    for (int k = 0; k < K; ++k) {
        const auto& jt = problem.joints[k];
        if (jt.b < 0) {
            world_joints[jt.a].push_back(k);
        } else {
            adj[jt.a].push_back({k, jt.b});
            adj[jt.b].push_back({k, jt.a});
            ++tree_edges;
        }
    }
    if (tree_edges != M - 1) throw Error(ErrorCode::NotATree, "joint graph has " + std::to_string(tree_edges) + " edges for " + std::to_string(M) + " bodies");
    if (root < 0) {
        for (int j = 0; j < M; ++j) {
            if (!world_joints[j].empty()) {
                root = j;
                break;
            }
        }
    }
    if (root < 0) {
        root = 0;
        for (int j = 1; j < M; ++j) {
            if (adj[j].size() > adj[root].size()) root = j;
        }
    }
    for (int j = 0; j < M; ++j) {
        if (j != root && !world_joints[j].empty()) throw Error(ErrorCode::NotATree, "world joints must attach to the root");
    }

    std::vector<TreeNode> nodes(M);
    std::vector<int> order;
    std::vector<char> seen(M, 0);
    std::deque<int> queue{root};
    seen[root] = 1;
    while (!queue.empty()) {
        const int j = queue.front();
        queue.pop_front();
        order.push_back(j);
        for (const auto& [k, other] : adj[j]) {
            if (seen[other]) continue;
            seen[other] = 1;
            nodes[other].parent = j;
            nodes[other].parent_joint = k;
            nodes[other].child_is_a = problem.joints[k].a == other;
            queue.push_back(other);
        }
    }
    if (static_cast<int>(order.size()) != M) throw Error(ErrorCode::NotATree, "joint graph is disconnected");

    for (int j = 0; j < M; ++j) {
        nodes[j].Hhat = problem.bodies[j].hessian();
        nodes[j].fhat = problem.bodies[j].f;
    }
    if (stats) {
        stats->upward_touches.assign(M, 0);
        stats->downward_touches.assign(M, 0);
    }

    // Leaf-to-root condensation.
    for (int idx = M - 1; idx >= 0; --idx) {
        const int j = order[idx];
        if (stats) ++stats->upward_touches[j];
        if (j == root) continue;
        TreeNode& node = nodes[j];
        const KKTJoint& jt = problem.joints[node.parent_joint];
        const MatX& G = node.child_is_a ? jt.grad_a : jt.grad_b;
        const MatX& P = node.child_is_a ? jt.grad_b : jt.grad_a;
        const int C = jt.rank();
        if (C > 12) throw Error(ErrorCode::SingularD, "joint has more rows than body coordinates");

        Eigen::HouseholderQR<MatX> qr(G.transpose());
        const MatX Q = qr.householderQ() * MatX::Identity(12, 12);
        const MatX R1 = qr.matrixQR().topLeftCorner(C, C).triangularView<Eigen::Upper>();
        const double rscale = std::max(R1.cwiseAbs().maxCoeff(), 1e-300);
        for (int i = 0; i < C; ++i) {
            if (std::abs(R1(i, i)) <= 1e-12 * rscale) throw Error(ErrorCode::SingularD, "joint gradient is rank deficient");
        }
        const MatX Q1 = Q.leftCols(C);
        const MatX Q2 = Q.rightCols(12 - C);

        // Order the null-space basis so its leading columns span the projected rigid joint motions.
        node.S_abd = Q2;
        if (jt.motion_subspace.cols() > 0 && C < 12) {
            const MatX rigid = embedding_matrix(problem.bodies[j].A) * jt.motion_subspace;
            const MatX coords = Q2.transpose() * rigid;
            Eigen::HouseholderQR<MatX> sub(coords);
            node.S_abd = Q2 * (sub.householderQ() * MatX::Identity(12 - C, 12 - C));
        }

        Mat12 dH = node.Hhat;
        Vec12 df = node.fhat;
        if (C < 12) {
            node.U = node.Hhat * node.S_abd;
            node.D = node.S_abd.transpose() * node.U;
            Eigen::LLT<MatX> dllt(node.D);
            if (dllt.info() != Eigen::Success) throw Error(ErrorCode::SingularD, "joint subspace block is not positive definite");
            node.alpha = dllt.solve(node.S_abd.transpose() * node.fhat);
            dH -= node.U * dllt.solve(node.U.transpose());
            df -= node.U * node.alpha;
        }
        const MatX Rt_inv = R1.transpose().triangularView<Eigen::Lower>().solve(MatX::Identity(C, C));
        const MatX Xr = Q1 * Rt_inv;  // G^T (G G^T)^-1
        node.X = -Xr * P;
        node.x0 = Xr * jt.rhs;
        TreeNode& parent = nodes[node.parent];
        parent.Hhat += node.X.transpose() * dH * node.X;
        parent.fhat += node.X.transpose() * (df - dH * node.x0);
    }

    KKTSolution sol;
    sol.dq.assign(M, Vec12::Zero());
    sol.dlambda.assign(K, VecX());
    // Root: its world joints form the local KKT constraint.
    {
        int rows = 0;
        for (int k : world_joints[root]) rows += problem.joints[k].rank();
        MatX G(rows, 12);
        VecX r(rows);
        int off = 0;
        for (int k : world_joints[root]) {
            const int c = problem.joints[k].rank();
            G.middleRows(off, c) = problem.joints[k].grad_a;
            r.segment(off, c) = problem.joints[k].rhs;
            off += c;
        }
        const LocalKKT local = solve_local_kkt(nodes[root].Hhat, nodes[root].fhat, G, r);
        sol.dq[root] = local.dq;
        off = 0;
        for (int k : world_joints[root]) {
            const int c = problem.joints[k].rank();
            sol.dlambda[k] = local.dlambda.segment(off, c);
            off += c;
        }
        if (stats) ++stats->downward_touches[root];
    }
    for (int idx = 1; idx < M; ++idx) {
        const int j = order[idx];
        const TreeNode& node = nodes[j];
        const KKTJoint& jt = problem.joints[node.parent_joint];
        const MatX& G = node.child_is_a ? jt.grad_a : jt.grad_b;
        const MatX& P = node.child_is_a ? jt.grad_b : jt.grad_a;
        const VecX r = jt.rhs - P * sol.dq[node.parent];
        const LocalKKT local = solve_local_kkt(node.Hhat, node.fhat, G, r);
        sol.dq[j] = local.dq;
        sol.dlambda[node.parent_joint] = local.dlambda;
        if (stats) ++stats->downward_touches[j];
    }
    return sol;
}

KKTSolution solve_loop(const KKTProblem& problem, const std::vector<int>& breakers, SolverStats* stats) {
    const int M = static_cast<int>(problem.bodies.size());
    const int K = static_cast<int>(problem.joints.size());
    std::vector<int> breaker_slot(M, -1);
    for (int i = 0; i < static_cast<int>(breakers.size()); ++i) {
        if (breakers[i] < 0 || breakers[i] >= M) throw Error(ErrorCode::WrongBodies, "breaker out of range");
        breaker_slot[breakers[i]] = i;
    }
    auto is_breaker = [&](int b) { return b >= 0 && breaker_slot[b] >= 0; };

    // Block A: the remaining bodies and the joints that avoid every breaker.
    std::vector<int> rest_bodies, rest_local(M, -1), cut_joints;
    for (int j = 0; j < M; ++j) {
        if (!is_breaker(j)) {
            rest_local[j] = static_cast<int>(rest_bodies.size());
            rest_bodies.push_back(j);
        }
    }
    KKTProblem inner;
    std::vector<int> inner_joint_of(K, -1);
    for (int j : rest_bodies) inner.bodies.push_back(problem.bodies[j]);
    for (int k = 0; k < K; ++k) {
        const auto& jt = problem.joints[k];
        if (is_breaker(jt.a) || is_breaker(jt.b)) {
            cut_joints.push_back(k);
            continue;
        }
        KKTJoint copy = jt;
        copy.a = rest_local[jt.a];
        copy.b = jt.b >= 0 ? rest_local[jt.b] : -1;
        inner_joint_of[k] = static_cast<int>(inner.joints.size());
        inner.joints.push_back(std::move(copy));
    }
    ForestSolver forest(inner);
    (void)stats;
    const int nb = static_cast<int>(breakers.size());

    std::vector<Vec12> f_rest;
    std::vector<VecX> g_rest;
    for (int j : rest_bodies) f_rest.push_back(problem.bodies[j].f);
    for (const auto& jt : inner.joints) g_rest.push_back(jt.rhs);
    const KKTSolution y = rest_bodies.empty() ? KKTSolution{} : forest.solve(f_rest, g_rest);

    std::vector<int> cut_offset(cut_joints.size());
    int nD = 12 * nb;
    for (std::size_t c = 0; c < cut_joints.size(); ++c) {
        cut_offset[c] = nD;
        nD += problem.joints[cut_joints[c]].rank();
    }
    MatX S = MatX::Zero(nD, nD);
    VecX rhs = VecX::Zero(nD);
    for (int i = 0; i < nb; ++i) {
        S.block<12, 12>(12 * i, 12 * i) = problem.bodies[breakers[i]].hessian();
        rhs.segment<12>(12 * i) = problem.bodies[breakers[i]].f;
    }
    // Applies the rest-side gradients of the cut joints to the block-A primal.
    auto rest_rows = [&](const std::vector<Vec12>& dq_rest, VecX& out) {
        for (std::size_t c = 0; c < cut_joints.size(); ++c) {
            const auto& jt = problem.joints[cut_joints[c]];
            if (!is_breaker(jt.a)) out.segment(cut_offset[c], jt.rank()) += jt.grad_a * dq_rest[rest_local[jt.a]];
            if (jt.b >= 0 && !is_breaker(jt.b)) out.segment(cut_offset[c], jt.rank()) += jt.grad_b * dq_rest[rest_local[jt.b]];
        }
    };
    for (std::size_t c = 0; c < cut_joints.size(); ++c) {
        const auto& jt = problem.joints[cut_joints[c]];
        const int off = cut_offset[c];
        rhs.segment(off, jt.rank()) = jt.rhs;
        if (is_breaker(jt.a)) {
            const int slot = breaker_slot[jt.a];
            S.block(off, 12 * slot, jt.rank(), 12) += jt.grad_a;
            S.block(12 * slot, off, 12, jt.rank()) += jt.grad_a.transpose();
        }
        if (is_breaker(jt.b)) {
            const int slot = breaker_slot[jt.b];
            S.block(off, 12 * slot, jt.rank(), 12) += jt.grad_b;
            S.block(12 * slot, off, 12, jt.rank()) += jt.grad_b.transpose();
        }
    }
    if (!rest_bodies.empty()) {
        VecX Cy = VecX::Zero(nD);
        rest_rows(y.dq, Cy);
        rhs -= Cy;
        // Low-rank correction C A^-1 C^T, one inner solve per cut-joint row touching block A.
        std::vector<VecX> zero_g;
        for (const auto& jt : inner.joints) zero_g.push_back(VecX::Zero(jt.rank()));
        for (std::size_t c = 0; c < cut_joints.size(); ++c) {
            const auto& jt = problem.joints[cut_joints[c]];
            const bool a_rest = !is_breaker(jt.a);
            const bool b_rest = jt.b >= 0 && !is_breaker(jt.b);
            if (!a_rest && !b_rest) continue;
            for (int i = 0; i < jt.rank(); ++i) {
                std::vector<Vec12> f(rest_bodies.size(), Vec12::Zero());
                if (a_rest) f[rest_local[jt.a]] += jt.grad_a.row(i).transpose();
                if (b_rest) f[rest_local[jt.b]] += jt.grad_b.row(i).transpose();
                const KKTSolution col = forest.solve(f, zero_g);
                VecX out = VecX::Zero(nD);
                rest_rows(col.dq, out);
                S.col(cut_offset[c] + i) -= out;
            }
        }
    }
    Eigen::FullPivLU<MatX> lu(S);
    if (!lu.isInvertible()) throw Error(ErrorCode::SingularSchur, "loop Schur complement is singular");
    const VecX w = lu.solve(rhs);

    KKTSolution sol;
    sol.dq.assign(M, Vec12::Zero());
    sol.dlambda.assign(K, VecX());
    for (int i = 0; i < nb; ++i) sol.dq[breakers[i]] = w.segment<12>(12 * i);
    for (std::size_t c = 0; c < cut_joints.size(); ++c) {
        sol.dlambda[cut_joints[c]] = w.segment(cut_offset[c], problem.joints[cut_joints[c]].rank());
    }
    if (!rest_bodies.empty()) {
        std::vector<Vec12> f = f_rest;
        for (std::size_t c = 0; c < cut_joints.size(); ++c) {
            const auto& jt = problem.joints[cut_joints[c]];
            const VecX& lam = sol.dlambda[cut_joints[c]];
            if (!is_breaker(jt.a)) f[rest_local[jt.a]] -= jt.grad_a.transpose() * lam;
            if (jt.b >= 0 && !is_breaker(jt.b)) f[rest_local[jt.b]] -= jt.grad_b.transpose() * lam;
        }
        const KKTSolution wa = forest.solve(f, g_rest);
        for (std::size_t i = 0; i < rest_bodies.size(); ++i) sol.dq[rest_bodies[i]] = wa.dq[i];
        for (int k = 0; k < K; ++k) {
            if (inner_joint_of[k] >= 0) sol.dlambda[k] = wa.dlambda[inner_joint_of[k]];
        }
    }
    return sol;
}

const char* solver_name(SolverChoice choice) {
    switch (choice) {
        case SolverChoice::Auto: return "auto";
        case SolverChoice::Dense: return "dense";
        case SolverChoice::Chain: return "chain";
        case SolverChoice::Aba: return "aba";
        case SolverChoice::Loop: return "loop";
        case SolverChoice::GaussSeidel: return "gs";
    }
    return "unknown";
}

KKTSolution solve_island(const KKTProblem& problem, const TopologyInfo& topology, const SolverSettings& settings,
                         SolverStats* stats) {
    if (problem.joints.empty()) {
        KKTSolution sol;
        for (const auto& b : problem.bodies) sol.dq.push_back(b.apply_inverse(b.f));
        return sol;
    }
    SolverChoice choice = settings.choice;
    if (choice == SolverChoice::Auto) {
        switch (topology.kind) {
            case TopologyKind::Chain: choice = SolverChoice::Chain; break;
            case TopologyKind::Tree: choice = SolverChoice::Aba; break;
            case TopologyKind::Loop: choice = SolverChoice::Loop; break;
            case TopologyKind::Graph:
                choice = problem.dual_dim() <= settings.direct_limit ? SolverChoice::Dense : SolverChoice::GaussSeidel;
                break;
        }
    }
    auto require = [&](bool ok) {
        if (!ok) {
            throw Error(ErrorCode::SolverFailure, std::string("solver '") + solver_name(choice) + "' does not apply to " +
                                                      topology_name(topology.kind) + " topology");
        }
    };
    switch (choice) {
        case SolverChoice::Chain: {
            require(topology.kind == TopologyKind::Chain);
            DualSystem dual = assemble_dual(problem);
            dual.topology = topology;
            return recover_primal(problem, dual, solve_chain(dual, stats));
        }
        case SolverChoice::Aba:
            require(topology.kind == TopologyKind::Chain || topology.kind == TopologyKind::Tree);
            return solve_tree_aba(problem, topology.root, stats);
        case SolverChoice::Loop:
            require(topology.kind != TopologyKind::Graph);
            return solve_loop(problem, topology.breakers, stats);
        case SolverChoice::GaussSeidel: {
            DualSystem dual = assemble_dual(problem);
            dual.topology = topology;
            const GaussSeidelResult gs = solve_graph_gs(dual, chain_cover(dual), settings.gs_tol, settings.gs_max_sweeps, settings.gs_accelerate);
            if (stats) {
                stats->gs_sweeps = gs.sweeps;
                stats->gs_residual = gs.residual;
                stats->gs_converged = gs.converged;
                stats->gs_history = gs.history;
            }
            return recover_primal(problem, dual, gs.dlambda);
        }
        case SolverChoice::Dense:
        case SolverChoice::Auto: {
            DualSystem dual = assemble_dual(problem);
            dual.topology = topology;
            return recover_primal(problem, dual, solve_direct(dual));
        }
    }
    throw Error(ErrorCode::SolverFailure, "unknown solver");
}

}  // namespace mabd
