#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mabd/experiments.hpp"
#include "mabd/fixtures.hpp"
#include "mabd/scene.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kInvalid = 2, kSolver = 3, kBenchFailed = 4 };

std::string classification(const mabd::Simulator& sim) {
    if (sim.islands().empty()) return "Free";
    std::string out;
    for (const mabd::Island& island : sim.islands()) {
        if (!out.empty()) out += " + ";
        out += mabd::topology_name(island.topology.kind);
        if (island.topology.kind == mabd::TopologyKind::Loop) {
            out += "(breakers=" + std::to_string(island.topology.breakers.size()) + ")";
        }
    }
    return out;
}

std::string format_g(double x, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, x);
    return buf;
}

int report(const mabd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
        case mabd::ErrorCode::ParseError:
        case mabd::ErrorCode::ValidationError:
        case mabd::ErrorCode::EmptyScene:
            return kInvalid;
        default:
            return kSolver;
    }
}

struct RunOptions {
    std::string scene;
    int steps = -1;
    double h = 0.0;
    std::string out;
    std::string solver = "auto";
    std::string polar = "on";
    bool no_timing = false;
    bool verbose = false;
};

int cmd_run(const RunOptions& opt) {
    mabd::SceneDescription scene;
    try {
        scene = mabd::load_scene_file(opt.scene);
        scene.integrator.solver = mabd::parse_solver_choice(opt.solver);
        scene.integrator.use_polar = opt.polar == "on";
        if (opt.h > 0.0) scene.integrator.h = opt.h;
        if (opt.steps >= 0) scene.integrator.steps = opt.steps;
        mabd::validate_scene(scene);
    } catch (const mabd::Error& e) {
        return report(e);
    }

    int steps = scene.integrator.steps;
    mabd::Trajectory traj;
    double worst = 0.0;
    std::vector<double> micros;
    try {
        mabd::Simulator sim(scene);
        traj.rows.reserve(steps + 1);
        traj.rows.push_back(sim.record());
        for (int i = 0; i < steps; ++i) {
            traj.rows.push_back(sim.step());
            const double r = sim.max_joint_residual();
            worst = std::max(worst, r);
            micros.push_back(traj.rows.back().micros);
            if (opt.verbose) std::cout << "step " << i + 1 << " max_residual " << format_g(r) << '\n';
        }
    } catch (const mabd::Error& e) {
        return report(e);
    }

    if (!opt.out.empty()) {
        try {
            traj.write_csv_file(opt.out, !opt.no_timing);
        } catch (const std::exception& e) {
            std::cerr << "error: cannot write '" << opt.out << "': " << e.what() << '\n';
            return kInvalid;
        }
    }
    std::sort(micros.begin(), micros.end());
    double total = 0.0;
    for (double m : micros) total += m;
    std::cout << "steps " << steps << ", h " << format_g(scene.integrator.h, 6) << ", solver " << opt.solver << '\n';
    std::cout << "max joint residual per step: " << format_g(worst) << '\n';
    if (!micros.empty()) {
        std::cout << "step time us: median " << format_g(micros[micros.size() / 2]) << ", mean "
                  << format_g(total / micros.size()) << ", max " << format_g(micros.back()) << ", total "
                  << format_g(total * 1e-6) << " s\n";
    }
    if (!opt.out.empty()) std::cout << "wrote " << traj.rows.size() << " rows to " << opt.out << '\n';
    return kOk;
}

int cmd_bench(const std::string& which, const std::string& out_dir) {
    const auto suite = mabd::experiments::benchmark_suite();
    std::vector<mabd::experiments::BenchmarkSpec> selected;
    for (const auto& spec : suite) {
        if (which == "all" || which == spec.name) selected.push_back(spec);
    }
    if (selected.empty()) {
        std::cerr << "error: unknown benchmark '" << which << "'; expected all or one of:";
        for (const auto& spec : suite) std::cerr << ' ' << spec.name;
        std::cerr << '\n';
        return kInvalid;
    }

    std::vector<mabd::experiments::BenchmarkResult> results;
    for (const auto& spec : selected) {
        std::cout << "== " << spec.name << std::flush;
        try {
            results.push_back(mabd::experiments::run_benchmark(spec, out_dir));
        } catch (const mabd::Error& e) {
            std::cout << '\n';
            return report(e);
        }
        const auto& r = results.back();
        std::cout << "  " << (r.passed() ? "PASS" : "FAIL") << "  (" << format_g(r.seconds) << " s)\n";
        for (const auto& [k, v] : r.metrics) std::cout << "   " << k << " = " << format_g(v, 6) << '\n';
    }

    std::vector<std::string> failing;
    std::ostringstream table;
    table << "benchmark,metric,comparator,tolerance,value,pass\n";
    for (const auto& r : results) {
        for (const auto& c : r.checks) {
            table << r.name << ',' << c.metric << ',' << c.comparator << ',' << format_g(c.tolerance, 17) << ','
                  << format_g(c.value, 17) << ',' << (c.pass ? "pass" : "fail") << '\n';
            if (!c.pass) {
                failing.push_back(r.name + "." + c.metric + " = " + format_g(c.value, 6) + " (needs " + c.comparator + " " +
                                  format_g(c.tolerance, 6) + ")");
            }
        }
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream(std::filesystem::path(out_dir) / "summary.csv") << table.str();
    }
    std::cout << '\n' << table.str();
    if (!failing.empty()) {
        std::cerr << failing.size() << " failing check(s):\n";
        for (const auto& f : failing) std::cerr << "  " << f << '\n';
        return kBenchFailed;
    }
    return kOk;
}

int cmd_validate(const std::string& path) {
    try {
        const mabd::SceneDescription scene = mabd::load_scene_file(path);
        mabd::validate_scene(scene);
        mabd::Simulator sim(scene);
        std::size_t anchors = 0;  // reported joints are body-to-body
        for (const auto& j : sim.joints()) anchors += j.kind == mabd::JointKind::Anchor ? 1 : 0;
        std::cout << classification(sim) << ", " << sim.joints().size() - anchors << " joints";
        std::cout << ", max residual " << format_g(sim.max_joint_residual(), 2) << '\n';
    } catch (const mabd::Error& e) {
        return report(e);
    }
    return kOk;
}

int cmd_fixture(const std::string& name, const std::string& out) {
    mabd::SceneDescription scene;
    try {
        scene = mabd::fixtures::by_name(name);
    } catch (const mabd::Error& e) {
        return report(e);
    }
    const std::string text = mabd::scene_to_json(scene);
    if (out.empty()) {
        std::cout << text << '\n';
    } else {
        std::ofstream f(out);
        if (!f) {
            std::cerr << "error: cannot write '" << out << "'\n";
            return kInvalid;
        }
        f << text << '\n';
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Co-rotated affine body multibody simulator"};
    app.require_subcommand(1);

    RunOptions run;
    auto* run_cmd = app.add_subcommand("run", "Simulate a scene and write its trajectory");
    run_cmd->set_help_flag("--help", "Print this help message and exit");
    run_cmd->add_option("scene", run.scene, "Scene JSON")->required();
    run_cmd->add_option("--steps", run.steps, "Number of steps (default: scene value)");
    run_cmd->add_option("--h", run.h, "Time step in seconds (default: scene value)");
    run_cmd->add_option("--out", run.out, "Trajectory CSV path");
    run_cmd->add_option("--solver", run.solver, "Dual solver")
        ->check(CLI::IsMember({"auto", "dense", "chain", "aba", "loop", "gs"}));
    run_cmd->add_option("--polar", run.polar, "Polar rotation in the linear solve")->check(CLI::IsMember({"on", "off"}));
    run_cmd->add_flag("--no-timing", run.no_timing, "Write 0 in the us_per_step column");
    run_cmd->add_flag("-v,--verbose", run.verbose, "Print the residual after every step");

    std::string bench_name = "all";
    std::string bench_out;
    auto* bench_cmd = app.add_subcommand("bench", "Run the benchmark suite");
    bench_cmd->add_option("suite", bench_name, "Benchmark name or all");
    bench_cmd->add_option("--out", bench_out, "Directory for CSV outputs and summary.csv");

    std::string validate_path;
    auto* validate_cmd = app.add_subcommand("validate", "Check a scene without simulating it");
    validate_cmd->add_option("scene", validate_path, "Scene JSON")->required();

    std::string fixture_name, fixture_out;
    auto* fixture_cmd = app.add_subcommand("fixture", "Print or write a built-in fixture scene");
    fixture_cmd->add_option("name", fixture_name, "Fixture name")->required();
    fixture_cmd->add_option("--out", fixture_out, "Output JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    if (*run_cmd) return cmd_run(run);
    if (*bench_cmd) return cmd_bench(bench_name, bench_out);
    if (*validate_cmd) return cmd_validate(validate_path);
    if (*fixture_cmd) return cmd_fixture(fixture_name, fixture_out);
    return kUsage;
}
