#pragma once

#include <map>
#include <string>
#include <vector>

#include "mabd/fixtures.hpp"

// Measurement routines behind the benchmark suite and the acceptance tests.
namespace mabd::experiments {

struct CubeMomentumResult {
    double h = 0.0;
    double linear_drift = 0.0;   // max |p - p0| / |p0| over the run
    double angular_initial = 0.0;  // |L(0) - L0| / |L0|
    Trajectory trajectory;
};
CubeMomentumResult cube_momentum(double h, int steps = 1000);

struct PendulumResult {
    double h = 0.0;
    double max_error = 0.0;  // rad, against the elliptic solution
    std::vector<double> times, simulated, reference;
    Trajectory trajectory;
};
PendulumResult pendulum(double h, double duration = 5.0, bool keep_trajectory = false);

struct FlipResult {
    std::vector<double> simulated_flips;
    std::vector<double> reference_flips;
    double flip_period = 0.0;     // mean spacing of the reference flips
    double max_time_error = 0.0;  // over the flips both runs share
    Trajectory trajectory;
};
FlipResult t_handle(double h, double duration, double reference_h = 1e-4, bool keep_trajectory = false);

struct TopResult {
    double simulated_rate = 0.0;
    double reference_rate = 0.0;
    double relative_error = 0.0;
    double nutation_peak_to_peak = 0.0;
    Trajectory trajectory;
};
TopResult heavy_top(double h, double duration, double reference_h = 1e-4, bool keep_trajectory = false);

struct GyroResult {
    int states = 0;
    double max_relative = 0.0;
};
GyroResult gyroscopic(int count, unsigned seed);

struct GradientResult {
    std::map<std::string, double> joint_max_relative;  // per joint kind
    double elastic_max_relative = 0.0;
};
GradientResult gradients(int count, unsigned seed);

struct EquivalenceResult {
    int instances = 0;
    double max_relative = 0.0;       // solver vs dense KKT, primal and dual stacked
    double max_kkt_residual = 0.0;   // primal KKT residual of the specialized solver
    int wrong_topology = 0;
};
EquivalenceResult solver_equivalence(fixtures::InstanceShape shape, int instances, unsigned seed);

struct GaussSeidelEquivalence {
    int instances = 0;
    double max_relative = 0.0;  // primal update vs dense
    double max_dual_residual = 0.0;
    int max_sweeps = 0;
    bool all_converged = true;
};
GaussSeidelEquivalence gauss_seidel_equivalence(int n, int instances, unsigned seed, double tol = 1e-6);

struct ComplexityResult {
    long ops_small = 0;
    long ops_large = 0;
    int k_small = 0;
    int k_large = 0;
    double linearity = 0.0;  // (ops_large / ops_small) / (k_large / k_small)
    int aba_bodies = 0;
    bool aba_touch_once_each = false;
};
ComplexityResult complexity(int k_small = 1000, int k_large = 10000, unsigned seed = 7);

struct NetResult {
    int n = 0;
    int steps = 0;
    double max_residual = 0.0;
    int max_iterations = 0;
    std::string topology;
    int joints = 0;  // body-body joints, anchors excluded
    Trajectory trajectory;
};
NetResult hanging_net(int n, double h, int steps, bool keep_trajectory = false);

struct PerfResult {
    double corotated_us = 0.0;  // median over repeats, whole run
    double vanilla_us = 0.0;
    double speedup = 0.0;
    int steps = 0;
};
PerfResult perf_corotated(int steps = 10000, int repeats = 5);

struct Check {
    std::string metric;
    std::string comparator;  // "<=", ">=", "=="
    double tolerance = 0.0;
    double value = 0.0;
    bool pass = false;
};

struct BenchmarkSpec {
    std::string name;
    std::string fixture;
    int n_steps = 0;
    double h = 0.0;
    std::vector<Check> checks;
    std::vector<std::string> emit;
};

struct BenchmarkResult {
    std::string name;
    std::vector<Check> checks;
    std::map<std::string, double> metrics;
    std::vector<std::string> outputs;
    double seconds = 0.0;
    bool passed() const;
};

std::vector<BenchmarkSpec> benchmark_suite();
// Runs one suite; CSVs go to out_dir when it is not empty.
BenchmarkResult run_benchmark(const BenchmarkSpec& spec, const std::string& out_dir);
bool evaluate(Check& check, double value);

}  // namespace mabd::experiments
