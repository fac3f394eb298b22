#include <random>

#include <benchmark/benchmark.h>

#include "mabd/experiments.hpp"
#include "mabd/oracles.hpp"

using namespace mabd;

namespace {

BodyModel cube() {
    return precompute_body(box_moments(Vec3::Constant(0.1)), fixtures::stiff_material(), 1e-3);
}

AffineState spinning() {
    AffineState s;
    for (int c = 0; c < 3; ++c) s.qdot.segment<3>(3 * c) = Vec3(0.0, 0.0, 3.0).cross(Vec3::Unit(c));
    return s;
}

fixtures::RandomInstance instance(fixtures::InstanceShape shape, int bodies) {
    std::mt19937 rng(5);
    return fixtures::random_instance(shape, bodies, rng);
}

void BM_CorotatedStep(benchmark::State& state) {
    const BodyModel model = cube();
    const AffineState s = spinning();
    for (auto _ : state) benchmark::DoNotOptimize(newton_step_single(model, s, Vec12::Zero(), 1e-3, true));
}
BENCHMARK(BM_CorotatedStep);

void BM_VanillaStep(benchmark::State& state) {
    const BodyModel model = cube();
    const AffineState s = spinning();
    const oracles::VanillaAbdSettings settings;
    for (auto _ : state) benchmark::DoNotOptimize(oracles::vanilla_abd_step(model, s, Vec12::Zero(), 1e-3, settings));
}
BENCHMARK(BM_VanillaStep);

void BM_AssembleDual(benchmark::State& state) {
    const auto inst = instance(fixtures::InstanceShape::Chain, static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(assemble_dual(inst.problem));
}
BENCHMARK(BM_AssembleDual)->Arg(10)->Arg(50);

// Dual assembly, block Thomas and primal recovery on a hanging chain.
void BM_SolveChain(benchmark::State& state) {
    Simulator sim(fixtures::chain(static_cast<int>(state.range(0)), 1e-3));
    std::vector<Vec12> forces(sim.models().size(), Vec12::Zero());
    const Island& island = sim.islands().front();
    const KKTProblem problem = sim.island_problem(island, forces);
    SolverSettings settings;
    settings.choice = SolverChoice::Chain;
    for (auto _ : state) benchmark::DoNotOptimize(solve_island(problem, island.topology, settings));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SolveChain)->RangeMultiplier(4)->Range(16, 1024)->Complexity(benchmark::oN);

void BM_TreeAba(benchmark::State& state) {
    const auto inst = instance(fixtures::InstanceShape::Tree, static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(solve_tree_aba(inst.problem, inst.topology.root));
}
BENCHMARK(BM_TreeAba)->Arg(10)->Arg(50);

void BM_GraphGaussSeidel(benchmark::State& state) {
    const auto inst = instance(fixtures::InstanceShape::Net, 25);
    const DualSystem dual = assemble_dual(inst.problem);
    const auto chains = chain_cover(dual);
    for (auto _ : state) benchmark::DoNotOptimize(solve_graph_gs(dual, chains, 1e-6, 200));
}
BENCHMARK(BM_GraphGaussSeidel);

}  // namespace
BENCHMARK_MAIN();
