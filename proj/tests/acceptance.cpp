// One PASS/FAIL line per acceptance criterion; exit status is nonzero if any fails.
#include <chrono>
#include <cstdio>
#include <string>

#include "mabd/experiments.hpp"

using namespace mabd;
namespace ex = mabd::experiments;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), pattern, a, b, c, d);
    return buf;
}

Verdict linear_momentum() {
    double worst = 0.0, initial = 0.0;
    for (double h : {1e-2, 1e-3, 1e-4}) {
        const ex::CubeMomentumResult r = ex::cube_momentum(h, 1000);
        worst = std::max(worst, r.linear_drift);
        initial = std::max(initial, r.angular_initial);
    }
    return {worst <= 1e-10, fmt("max relative drift %.3g (<= 1e-10), initial L error %.3g", worst, initial)};
}

Verdict pendulum() {
    double errors[3];
    const double hs[3] = {1e-2, 1e-3, 1e-4};
    for (int i = 0; i < 3; ++i) errors[i] = ex::pendulum(hs[i], 5.0).max_error;
    const bool decreasing = errors[1] < errors[0] && errors[2] < errors[1];
    return {errors[2] <= 0.01 && decreasing,
            fmt("max error %.3g / %.3g / %.3g rad at h = 1e-2 / 1e-3 / 1e-4", errors[0], errors[1], errors[2])};
}

Verdict intermediate_axis() {
    const ex::FlipResult r = ex::t_handle(1e-4, 30.0, 1e-4);
    const double ratio = r.flip_period > 0.0 ? r.max_time_error / r.flip_period : 1e300;
    const bool pass = r.simulated_flips.size() >= 2 && ratio <= 0.05;
    return {pass, fmt("%g flips (reference %g), worst flip-time error %.3g of the period %.3g s",
                      static_cast<double>(r.simulated_flips.size()), static_cast<double>(r.reference_flips.size()), ratio,
                      r.flip_period)};
}

Verdict heavy_top() {
    const ex::TopResult r = ex::heavy_top(1e-3, 3.0, 1e-4);
    return {r.relative_error <= 0.03 && r.nutation_peak_to_peak > 0.0,
            fmt("precession %.5g vs %.5g rad/s (rel %.3g), nutation p-p %.3g", r.simulated_rate, r.reference_rate,
                r.relative_error, r.nutation_peak_to_peak)};
}

Verdict gyroscopic() {
    const ex::GyroResult r = ex::gyroscopic(100, fixtures::seed_from_env());
    return {r.states == 100 && r.max_relative <= 1e-8, fmt("max relative residual %.3g over %g states", r.max_relative, r.states)};
}

Verdict solver_equivalence() {
    const unsigned seed = fixtures::seed_from_env();
    double worst = 0.0;
    int wrong = 0, count = 0;
    for (auto shape : {fixtures::InstanceShape::Chain, fixtures::InstanceShape::Tree, fixtures::InstanceShape::Loop}) {
        const ex::EquivalenceResult r = ex::solver_equivalence(shape, 50, seed);
        worst = std::max(worst, r.max_relative);
        wrong += r.wrong_topology;
        count += r.instances;
    }
    const ex::GaussSeidelEquivalence gs = ex::gauss_seidel_equivalence(5, 10, seed, 1e-6);
    const bool pass = count == 150 && wrong == 0 && worst <= 1e-8 && gs.all_converged && gs.max_relative <= 1e-6;
    return {pass, fmt("direct solvers %.3g over %g instances, GS on 5x5 nets %.3g (%g sweeps max)", worst, count,
                      gs.max_relative, gs.max_sweeps)};
}

Verdict one_iteration() {
    const ex::NetResult r = ex::hanging_net(10, 1.0 / 30.0, 300);
    const bool pass = r.steps == 300 && r.max_residual <= 1e-6 && r.max_iterations == 1;
    return {pass, fmt("%g steps, max joint residual %.3g, Newton iterations %g, %g joints", r.steps, r.max_residual,
                      r.max_iterations, r.joints) +
                      ", " + r.topology};
}

Verdict gradients() {
    const ex::GradientResult r = ex::gradients(100, fixtures::seed_from_env());
    double joint = 0.0;
    for (const auto& [kind, value] : r.joint_max_relative) joint = std::max(joint, value);
    const bool pass = r.joint_max_relative.size() == 4 && joint <= 1e-4 && r.elastic_max_relative <= 1e-5;
    return {pass, fmt("joints %.3g (<= 1e-4, %g kinds), elastic %.3g (<= 1e-5)", joint,
                      static_cast<double>(r.joint_max_relative.size()), r.elastic_max_relative)};
}

Verdict complexity() {
    const ex::ComplexityResult r = ex::complexity(1000, 10000, fixtures::seed_from_env());
    const bool pass = std::abs(r.linearity - 1.0) <= 0.1 && r.aba_touch_once_each;
    return {pass, fmt("ops ratio / K ratio = %.4f, ABA on %g bodies touches each twice: %g", r.linearity, r.aba_bodies,
                      r.aba_touch_once_each ? 1.0 : 0.0)};
}

Verdict performance() {
    const ex::PerfResult r = ex::perf_corotated(10000, 5);
    return {r.speedup >= 2.0, fmt("co-rotated %.4g us, vanilla %.4g us per run, speedup %.3g", r.corotated_us, r.vanilla_us,
                                  r.speedup)};
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        Verdict (*run)();
    };
    const Criterion criteria[] = {
        {"1 linear momentum conservation", linear_momentum},
        {"2 pendulum vs elliptic solution", pendulum},
        {"3 intermediate-axis flips", intermediate_axis},
        {"4 heavy top precession", heavy_top},
        {"5 gyroscopic cancellation", gyroscopic},
        {"6 solver-oracle equivalence", solver_equivalence},
        {"7 one-iteration net constraints", one_iteration},
        {"8 gradient correctness", gradients},
        {"9 solver complexity", complexity},
        {"10 relative performance", performance},
    };
    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s  criterion %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str(), secs);
        std::fflush(stdout);
        failures += v.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
