#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "mabd/experiments.hpp"
#include "mabd/oracles.hpp"
#include "support.hpp"

using namespace mabd;
using namespace mabd::testing;

namespace {

VecX stack(const std::vector<Vec12>& v) {
    VecX out(12 * v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.segment<12>(12 * i) = v[i];
    return out;
}

VecX stack(const std::vector<VecX>& v) {
    int n = 0;
    for (const auto& x : v) n += static_cast<int>(x.size());
    VecX out(n);
    n = 0;
    for (const auto& x : v) {
        out.segment(n, x.size()) = x;
        n += static_cast<int>(x.size());
    }
    return out;
}

// Problem on the current state of a scene with perturbed forces.
struct SceneProblem {
    std::unique_ptr<Simulator> sim;
    KKTProblem problem;
    TopologyInfo topology;
};

SceneProblem scene_problem(const SceneDescription& scene, unsigned seed) {
    SceneProblem out;
    out.sim = std::make_unique<Simulator>(scene);
    std::mt19937 rng(seed);
    std::vector<Vec12> forces(out.sim->models().size());
    for (std::size_t j = 0; j < forces.size(); ++j) {
        forces[j] = out.sim->models()[j].hbar(scene.integrator.h) * random12(rng, 1e-3);
    }
    const Island& island = out.sim->islands().front();
    out.problem = out.sim->island_problem(island, forces);
    out.topology = island.topology;
    return out;
}

// Block system built by hand: diagonal SPD blocks plus optional couplings.
DualSystem manual_dual(int K, int size, const std::vector<std::pair<int, int>>& couplings, double coupling,
                       std::mt19937& rng) {
    DualSystem d;
    d.sizes.assign(K, size);
    d.neighbors.assign(K, {});
    for (int k = 0; k < K; ++k) {
        d.offsets.push_back(d.dim);
        d.dim += size;
        const MatX G = MatX::Random(size, size);
        d.add_block(k, k, G * G.transpose() + size * MatX::Identity(size, size));
        d.neighbors[k].push_back(k);
    }
    for (const auto& [k, l] : couplings) {
        d.add_block(k, l, coupling * MatX::Random(size, size));
        d.neighbors[k].push_back(l);
        d.neighbors[l].push_back(k);
    }
    for (auto& n : d.neighbors) std::sort(n.begin(), n.end());
    d.rhs = VecX::Zero(d.dim);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < d.dim; ++i) d.rhs(i) = u(rng);
    return d;
}

}  // namespace

TEST(Topology, Examples) {
    EXPECT_EQ(classify_connected(3, {{0, 1}, {1, 2}}).kind, TopologyKind::Chain);
    EXPECT_EQ(classify_connected(4, {{0, 1}, {0, 2}, {0, 3}}).kind, TopologyKind::Tree);
    const TopologyInfo ring = classify_connected(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
    EXPECT_EQ(ring.kind, TopologyKind::Loop);
    EXPECT_EQ(ring.breakers.size(), 1u);
}

TEST(Topology, NetIsGraphAndIslandsSplit) {
    std::vector<std::pair<int, int>> joints;
    const int n = 5;
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n; ++i) {
            if (i + 1 < n) joints.emplace_back(k * n + i, k * n + i + 1);
            if (k + 1 < n) joints.emplace_back(k * n + i, (k + 1) * n + i);
        }
    }
    EXPECT_EQ(classify_connected(n * n, joints).kind, TopologyKind::Graph);

    const std::vector<Island> islands = classify_topology(5, {{0, 1}, {3, 4}});
    ASSERT_EQ(islands.size(), 3u);
    for (const auto& isl : islands) EXPECT_EQ(isl.topology.kind, TopologyKind::Chain);
}

TEST(Topology, Deterministic) {
    const std::vector<std::pair<int, int>> joints{{0, 1}, {1, 2}, {2, 0}, {2, 3}, {3, 4}, {4, 2}};
    const TopologyInfo a = classify_connected(5, joints);
    const TopologyInfo b = classify_connected(5, joints);
    EXPECT_EQ(a.kind, b.kind);
    EXPECT_EQ(a.breakers, b.breakers);
}

TEST(Topology, EmptyIsAnError) {
    try {
        classify_topology(0, {});
        FAIL() << "expected EmptyScene";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyScene);
    }
}

TEST(Dual, SingleJointGivesOneSpdBlock) {
    SceneDescription s = fixtures::chain(2, 1e-3);
    s.anchors.clear();
    const SceneProblem sp = scene_problem(s, 1);
    const DualSystem d = assemble_dual(sp.problem);
    ASSERT_EQ(d.joint_count(), 1);
    Eigen::SelfAdjointEigenSolver<MatX> es(d.block(0, 0));
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    EXPECT_NO_THROW(check_dual_invariants(d));
}

TEST(Dual, ChainIsBlockTridiagonal) {
    SceneDescription s = fixtures::chain(4, 1e-3);
    s.anchors.clear();
    const SceneProblem sp = scene_problem(s, 2);
    const DualSystem d = assemble_dual(sp.problem);
    ASSERT_EQ(d.joint_count(), 3);
    EXPECT_TRUE(d.has_block(0, 1));
    EXPECT_TRUE(d.has_block(1, 2));
    EXPECT_FALSE(d.has_block(0, 2));
}

TEST(Dual, MatchesExplicitDenseProduct) {
    std::mt19937 rng(3);
    for (int i = 0; i < 5; ++i) {
        const fixtures::RandomInstance inst = fixtures::random_instance(fixtures::InstanceShape::Tree, 5, rng);
        const DualSystem d = assemble_dual(inst.problem);
        const MatX ref = oracles::dense_dual_matrix(inst.problem);
        EXPECT_LT((d.dense() - ref).norm() / ref.norm(), 1e-10);
        EXPECT_LT((MatX(d.sparse()) - ref).norm() / ref.norm(), 1e-10);
        EXPECT_NO_THROW(check_dual_invariants(d));
    }
}

TEST(Chain, SingleJointIsDirectSolve) {
    SceneDescription s = fixtures::chain(2, 1e-3);
    s.anchors.clear();
    const SceneProblem sp = scene_problem(s, 4);
    DualSystem d = assemble_dual(sp.problem);
    d.topology = sp.topology;
    const VecX x = solve_chain(d);
    const VecX ref = d.block(0, 0).ldlt().solve(d.rhs);
    EXPECT_LT(rel(x, ref), 1e-12);
}

TEST(Chain, TenLinksMatchDenseFactorization) {
    const SceneProblem sp = scene_problem(fixtures::chain(10, 1e-3, JointKind::Hinge), 5);
    DualSystem d = assemble_dual(sp.problem);
    d.topology = sp.topology;
    ASSERT_EQ(d.topology.kind, TopologyKind::Chain);
    const VecX x = solve_chain(d);
    const VecX ref = d.dense().fullPivLu().solve(d.rhs);
    EXPECT_LT(rel(x, ref), 1e-10);
    EXPECT_LT(rel(d.multiply(x), d.rhs), 1e-10);
}

TEST(Chain, DecoupledBlocksSolveIndependently) {
    std::mt19937 rng(6);
    DualSystem d = manual_dual(4, 3, {}, 0.0, rng);
    d.topology.kind = TopologyKind::Chain;
    d.topology.chain_order = {0, 1, 2, 3};
    const VecX x = solve_chain(d);
    for (int k = 0; k < 4; ++k) {
        const VecX own = d.block(k, k).ldlt().solve(d.rhs.segment(3 * k, 3));
        EXPECT_LT(rel(x.segment(3 * k, 3), own), 1e-13);
    }
}

TEST(Chain, BlockOperationsGrowLinearly) {
    const experiments::ComplexityResult c = experiments::complexity(100, 1000);
    EXPECT_NEAR(c.linearity, 1.0, 0.1);
    EXPECT_TRUE(c.aba_touch_once_each);
}

TEST(RecoverPrimal, ZeroMultipliersGiveFreeSteps) {
    const SceneProblem sp = scene_problem(fixtures::chain(3, 1e-3), 7);
    const KKTSolution sol = recover_primal(sp.problem, VecX::Zero(sp.problem.dual_dim()));
    for (std::size_t j = 0; j < sp.problem.bodies.size(); ++j) {
        const KKTBody& b = sp.problem.bodies[j];
        EXPECT_LT(rel(sol.dq[j], b.apply_inverse(b.f)), 1e-14);
    }
}

TEST(RecoverPrimal, TwoBodyBallSatisfiesFullSystem) {
    SceneDescription s = fixtures::chain(2, 1e-3);
    s.anchors.clear();
    const SceneProblem sp = scene_problem(s, 8);
    DualSystem d = assemble_dual(sp.problem);
    d.topology = sp.topology;
    const KKTSolution sol = recover_primal(sp.problem, d, solve_chain(d));
    const KKTResidual r = kkt_residual(sp.problem, sol);
    EXPECT_LT(r.primal, 1e-10);
    EXPECT_LT(r.constraint, 1e-10);
}

TEST(TreeAba, SingleBodyReducesToNewtonStep) {
    SceneDescription s;
    s.bodies.push_back(fixtures::by_name("cube_momentum").bodies.front());
    const SceneProblem sp = scene_problem(s, 9);
    const KKTSolution sol = solve_tree_aba(sp.problem, 0);
    const KKTBody& b = sp.problem.bodies.front();
    EXPECT_LT(rel(sol.dq.front(), b.apply_inverse(b.f)), 1e-12);
}

TEST(TreeAba, TwoLinkPendulumMatchesDense) {
    const SceneProblem sp = scene_problem(fixtures::two_link_pendulum(1e-3), 10);
    SolverStats stats;
    const KKTSolution sol = solve_tree_aba(sp.problem, sp.topology.root, &stats);
    const oracles::DenseKKTResult ref = oracles::dense_kkt_solve(sp.problem);
    EXPECT_LT(rel(stack(sol.dq), stack(ref.solution.dq)), 1e-8);
    EXPECT_LT(rel(stack(sol.dlambda), stack(ref.solution.dlambda)), 1e-8);
    EXPECT_EQ(stats.upward_touches.size(), 2u);
    EXPECT_EQ(stats.downward_touches.size(), 2u);
}

TEST(TreeAba, FifteenBodyTreeMatchesDenseAndHoldsJoints) {
    const SceneDescription scene = fixtures::random_tree(15, 77, 1e-3);
    const SceneProblem sp = scene_problem(scene, 11);
    ASSERT_EQ(sp.topology.kind, TopologyKind::Tree);
    const KKTSolution sol = solve_tree_aba(sp.problem, sp.topology.root);
    const oracles::DenseKKTResult ref = oracles::dense_kkt_solve(sp.problem);
    EXPECT_LT(rel(stack(sol.dq), stack(ref.solution.dq)), 1e-8);

    Simulator sim(scene);
    for (int i = 0; i < 20; ++i) {
        sim.step();
        EXPECT_LE(sim.max_joint_residual(), 1e-6);
    }
}

TEST(TreeAba, RejectsLoops) {
    const SceneProblem sp = scene_problem(fixtures::ring(4, 1e-3), 12);
    try {
        solve_tree_aba(sp.problem, 0);
        FAIL() << "expected NotATree";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotATree);
    }
}

TEST(Loop, RingOfFourMatchesDense) {
    SceneDescription scene = fixtures::ring(4, 1e-3);
    scene.anchors.clear();
    const SceneProblem sp = scene_problem(scene, 13);
    ASSERT_EQ(sp.topology.kind, TopologyKind::Loop);
    ASSERT_EQ(sp.topology.breakers.size(), 1u);
    const KKTSolution sol = solve_loop(sp.problem, sp.topology.breakers);
    const oracles::DenseKKTResult ref = oracles::dense_kkt_solve(sp.problem);
    EXPECT_LT(rel(stack(sol.dq), stack(ref.solution.dq)), 1e-8);
    EXPECT_LT(rel(stack(sol.dlambda), stack(ref.solution.dlambda)), 1e-8);
}

TEST(Loop, BrokenRingReducesToChain) {
    // Removing one ring joint leaves a chain; the loop solver with the same breaker must agree with it.
    SceneDescription scene = fixtures::ring(5, 1e-3);
    scene.anchors.clear();
    scene.joints.pop_back();
    const SceneProblem sp = scene_problem(scene, 14);
    ASSERT_EQ(sp.topology.kind, TopologyKind::Chain);
    DualSystem d = assemble_dual(sp.problem);
    d.topology = sp.topology;
    const KKTSolution chain = recover_primal(sp.problem, d, solve_chain(d));
    const KKTSolution loop = solve_loop(sp.problem, {0});
    EXPECT_LT(rel(stack(loop.dq), stack(chain.dq)), 1e-8);
}

TEST(GaussSeidel, SingleChainConvergesInOneSweep) {
    const SceneProblem sp = scene_problem(fixtures::chain(6, 1e-3), 15);
    DualSystem d = assemble_dual(sp.problem);
    d.topology = sp.topology;
    const std::vector<std::vector<int>> cover = chain_cover(d);
    ASSERT_EQ(cover.size(), 1u);
    for (bool accelerate : {false, true}) {
        const GaussSeidelResult gs = solve_graph_gs(d, cover, 1e-10, 50, accelerate);
        EXPECT_TRUE(gs.converged);
        EXPECT_EQ(gs.sweeps, 1);
        EXPECT_LE(gs.residual, 1e-10);
    }
}

TEST(GaussSeidel, FiveByFiveNetMatchesDense) {
    const experiments::GaussSeidelEquivalence g = experiments::gauss_seidel_equivalence(5, 5, 16);
    EXPECT_TRUE(g.all_converged);
    EXPECT_LE(g.max_dual_residual, 1e-6);
    EXPECT_LE(g.max_relative, 1e-6);
}

TEST(GaussSeidel, WeakCouplingDecreasesMonotonically) {
    std::mt19937 rng(17);
    std::vector<std::pair<int, int>> couplings{{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}, {1, 3}, {3, 4}, {4, 5}, {5, 2}};
    DualSystem d = manual_dual(6, 3, couplings, 0.2, rng);
    d.topology.kind = TopologyKind::Graph;
    const GaussSeidelResult gs = solve_graph_gs(d, chain_cover(d), 1e-12, 100, false);
    EXPECT_TRUE(gs.converged);
    ASSERT_GE(gs.history.size(), 2u);
    for (std::size_t i = 1; i < gs.history.size(); ++i) EXPECT_LT(gs.history[i], gs.history[i - 1]);
    const VecX ref = d.dense().ldlt().solve(d.rhs);
    EXPECT_LT(rel(gs.dlambda, ref), 1e-10);
}

TEST(GaussSeidel, ChainCoverVisitsEveryJointOnce) {
    std::mt19937 rng(18);
    const fixtures::RandomInstance inst = fixtures::random_instance(fixtures::InstanceShape::Net, 36, rng);
    const DualSystem d = assemble_dual(inst.problem);
    const auto cover = chain_cover(d);
    std::vector<int> seen(d.joint_count(), 0);
    for (const auto& path : cover) {
        for (int k : path) ++seen[k];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    EXPECT_EQ(chain_cover(d), cover);
}

TEST(Solvers, KktResidualIdentityAcrossTopologies) {
    const std::pair<fixtures::InstanceShape, SolverChoice> cases[] = {
        {fixtures::InstanceShape::Chain, SolverChoice::Chain},
        {fixtures::InstanceShape::Tree, SolverChoice::Aba},
        {fixtures::InstanceShape::Loop, SolverChoice::Loop},
        {fixtures::InstanceShape::Net, SolverChoice::Dense},
    };
    std::mt19937 rng(19);
    for (const auto& [shape, choice] : cases) {
        for (int i = 0; i < 3; ++i) {
            const fixtures::RandomInstance inst = fixtures::random_instance(shape, 12, rng);
            SolverSettings settings;
            settings.choice = choice;
            const KKTSolution sol = solve_island(inst.problem, inst.topology, settings);
            EXPECT_LE(kkt_residual(inst.problem, sol).primal, 1e-8) << solver_name(choice);
        }
    }
}

TEST(Solvers, EquivalenceOnRandomInstances) {
    for (auto shape : {fixtures::InstanceShape::Chain, fixtures::InstanceShape::Tree, fixtures::InstanceShape::Loop}) {
        const experiments::EquivalenceResult r = experiments::solver_equivalence(shape, 8, 20);
        EXPECT_EQ(r.wrong_topology, 0);
        EXPECT_LE(r.max_relative, 1e-8);
        EXPECT_LE(r.max_kkt_residual, 1e-8);
    }
}

TEST(Solvers, MismatchedOverrideFails) {
    std::mt19937 rng(21);
    const fixtures::RandomInstance inst = fixtures::random_instance(fixtures::InstanceShape::Loop, 6, rng);
    SolverSettings settings;
    settings.choice = SolverChoice::Chain;
    try {
        solve_island(inst.problem, inst.topology, settings);
        FAIL() << "expected SolverFailure";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SolverFailure);
    }
}
