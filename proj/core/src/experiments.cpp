#include "mabd/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include <Eigen/Geometry>

#include "mabd/oracles.hpp"

namespace mabd::experiments {

namespace {

constexpr double kPi = 3.14159265358979323846;

double wrap(double a) { return std::remainder(a, 2.0 * kPi); }

Vec3 center_of_mass(const BodyModel& m, const AffineState& s) { return s.A() * m.center_of_mass + s.t(); }

// Linear-interpolated times where the sampled signal changes sign.
void record_crossing(double t0, double v0, double t1, double v1, std::vector<double>& out) {
    if ((v0 < 0.0 && v1 >= 0.0) || (v0 > 0.0 && v1 <= 0.0)) out.push_back(t0 + (t1 - t0) * v0 / (v0 - v1));
}

double relative_difference(const VecX& x, const VecX& ref) {
    const double scale = ref.norm();
    return scale > 0.0 ? (x - ref).norm() / scale : x.norm();
}

VecX stack(const std::vector<Vec12>& parts) {
    VecX out(12 * parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) out.segment<12>(12 * i) = parts[i];
    return out;
}

VecX stack(const std::vector<VecX>& parts) {
    int n = 0;
    for (const auto& p : parts) n += static_cast<int>(p.size());
    VecX out(n);
    int off = 0;
    for (const auto& p : parts) {
        out.segment(off, p.size()) = p;
        off += static_cast<int>(p.size());
    }
    return out;
}

Mat3 random_rotation(std::mt19937& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

Mat3 random_symmetric(std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Mat3 s;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) s(r, c) = u(rng);
    }
    return 0.5 * (s + s.transpose());
}

Vec3 random_vec(std::mt19937& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    return Vec3(u(rng), u(rng), u(rng));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

CubeMomentumResult cube_momentum(double h, int steps) {
    Simulator sim(fixtures::cube_momentum(h));
    CubeMomentumResult res;
    res.h = h;
    res.trajectory.rows.push_back(sim.record());
    const Vec3 p0 = res.trajectory.rows.front().diagnostics.linear_momentum;
    const Vec3 L0 = res.trajectory.rows.front().diagnostics.angular_momentum;
    const Vec3 target_p(100.0, 0.0, 0.0);
    const Vec3 target_L(0.0, 100.0, 0.0);
    res.angular_initial = std::max((L0 - target_L).norm() / target_L.norm(), (p0 - target_p).norm() / target_p.norm());
    for (int i = 0; i < steps; ++i) {
        res.trajectory.rows.push_back(sim.step());
        const Vec3 p = res.trajectory.rows.back().diagnostics.linear_momentum;
        res.linear_drift = std::max(res.linear_drift, (p - p0).norm() / p0.norm());
    }
    return res;
}

PendulumResult pendulum(double h, double duration, bool keep_trajectory) {
    const fixtures::PendulumGeometry geo;
    Simulator sim(fixtures::pendulum(h, duration));
    const BodyModel& model = sim.models().front();
    const Vec3 arm0 = center_of_mass(model, sim.states().front()) - geo.pivot;
    const double d = arm0.norm();
    const double inertia_pivot = model.rest_inertia()(2, 2) + model.total_mass * d * d;
    const auto oracle = oracles::make_pendulum(model.total_mass, -sim.scene().gravity.y(), d, inertia_pivot, 0.5 * kPi);

    PendulumResult res;
    res.h = h;
    const int steps = sim.scene().integrator.steps;
    double theta_prev = 0.0;
    auto sample = [&](double t) {
        const Vec3 arm = center_of_mass(model, sim.states().front()) - geo.pivot;
        const double raw = std::atan2(-arm.y(), arm.x());
        const double theta = theta_prev + wrap(raw - theta_prev);
        theta_prev = theta;
        const double ref = oracles::pendulum_theta(t, oracle);
        res.times.push_back(t);
        res.simulated.push_back(theta);
        res.reference.push_back(ref);
        res.max_error = std::max(res.max_error, std::abs(theta - ref));
    };
    if (keep_trajectory) res.trajectory.rows.push_back(sim.record());
    sample(0.0);
    for (int i = 0; i < steps; ++i) {
        if (keep_trajectory) {
            res.trajectory.rows.push_back(sim.step());
        } else {
            sim.step();
        }
        sample(sim.time());
    }
    return res;
}

FlipResult t_handle(double h, double duration, double reference_h, bool keep_trajectory) {
    const fixtures::THandleSetup setup = fixtures::t_handle_setup();
    const int axis = setup.intermediate_axis;
    Simulator sim(fixtures::t_handle(h, duration));
    const BodyModel& model = sim.models().front();
    FlipResult res;

    auto body_omega = [&](const AffineState& s) {
        const Mat3 R = polar_rotation(s.A());
        return Vec3(R.transpose() * twist_map(s).omega);
    };
    double prev = body_omega(sim.states().front())(axis);
    if (keep_trajectory) res.trajectory.rows.push_back(sim.record());
    const int steps = sim.scene().integrator.steps;
    for (int i = 0; i < steps; ++i) {
        const double t0 = sim.time();
        if (keep_trajectory) {
            res.trajectory.rows.push_back(sim.step());
        } else {
            sim.step();
        }
        const double cur = body_omega(sim.states().front())(axis);
        record_crossing(t0, prev, sim.time(), cur, res.simulated_flips);
        prev = cur;
    }

    oracles::RigidReference ref;
    ref.inertia_body = model.rest_inertia();
    ref.mass = model.total_mass;
    ref.omega_body = sim.scene().bodies.front().omega;
    const int ref_steps = static_cast<int>(std::llround(duration / reference_h));
    double rprev = ref.omega_body(axis);
    for (int i = 0; i < ref_steps; ++i) {
        ref = oracles::rk4_rigid_step(ref, nullptr, i * reference_h, reference_h);
        const double cur = ref.omega_body(axis);
        record_crossing(i * reference_h, rprev, (i + 1) * reference_h, cur, res.reference_flips);
        rprev = cur;
    }

    if (res.reference_flips.size() >= 2) {
        res.flip_period = (res.reference_flips.back() - res.reference_flips.front()) / (res.reference_flips.size() - 1);
    }
    const std::size_t shared = std::min(res.simulated_flips.size(), res.reference_flips.size());
    for (std::size_t i = 0; i < shared; ++i) {
        res.max_time_error = std::max(res.max_time_error, std::abs(res.simulated_flips[i] - res.reference_flips[i]));
    }
    if (res.simulated_flips.size() != res.reference_flips.size()) res.max_time_error = std::numeric_limits<double>::infinity();
    return res;
}

TopResult heavy_top(double h, double duration, double reference_h, bool keep_trajectory) {
    const fixtures::HeavyTopGeometry geo;
    Simulator sim(fixtures::heavy_top(h, duration));
    const BodyModel& model = sim.models().front();
    TopResult res;

    auto axis_of = [&](const Mat3& R) { return Vec3(R * Vec3::UnitY()); };
    double phi_prev = 0.0;
    auto azimuth = [&](const Vec3& s) {
        const double raw = std::atan2(s.z(), s.x());
        phi_prev = phi_prev + wrap(raw - phi_prev);
        return phi_prev;
    };
    Vec3 s0 = axis_of(polar_rotation(sim.states().front().A()));
    phi_prev = std::atan2(s0.z(), s0.x());
    const double phi0 = phi_prev;
    double tilt_min = std::acos(std::clamp(s0.y(), -1.0, 1.0));
    double tilt_max = tilt_min;
    if (keep_trajectory) res.trajectory.rows.push_back(sim.record());
    const int steps = sim.scene().integrator.steps;
    double phi = phi0;
    for (int i = 0; i < steps; ++i) {
        if (keep_trajectory) {
            res.trajectory.rows.push_back(sim.step());
        } else {
            sim.step();
        }
        const Vec3 s = axis_of(polar_rotation(sim.states().front().A()));
        phi = azimuth(s);
        const double tilt = std::acos(std::clamp(s.y(), -1.0, 1.0));
        tilt_min = std::min(tilt_min, tilt);
        tilt_max = std::max(tilt_max, tilt);
    }
    res.simulated_rate = (phi - phi0) / sim.time();
    res.nutation_peak_to_peak = tilt_max - tilt_min;

    oracles::RigidReference ref;
    ref.pinned = true;
    ref.pivot = Vec3::Zero();
    ref.com_offset = Vec3(0.0, geo.pivot_offset, 0.0);
    ref.mass = model.total_mass;
    const Vec3& r = ref.com_offset;
    ref.inertia_body = model.rest_inertia() + ref.mass * (r.squaredNorm() * Mat3::Identity() - r * r.transpose());
    ref.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(geo.tilt, Vec3::UnitX()));
    ref.omega_body = Vec3(0.0, geo.spin, 0.0);
    const Vec3 gravity = sim.scene().gravity;
    const oracles::WrenchField field = [gravity](double, const oracles::RigidReference& s) {
        SpatialWrench w;
        w.f = s.mass * gravity;
        w.tau = (s.R() * s.com_offset).cross(w.f);
        return w;
    };
    const int ref_steps = static_cast<int>(std::llround(duration / reference_h));
    phi_prev = phi0;
    double ref_phi = phi0;
    for (int i = 0; i < ref_steps; ++i) {
        ref = oracles::rk4_rigid_step(ref, field, i * reference_h, reference_h);
        ref_phi = azimuth(axis_of(ref.R()));
    }
    res.reference_rate = (ref_phi - phi0) / (ref_steps * reference_h);
    res.relative_error = std::abs(res.simulated_rate - res.reference_rate) / std::abs(res.reference_rate);
    return res;
}

GyroResult gyroscopic(int count, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 0.3);
    GyroResult res;
    for (int i = 0; i < count; ++i) {
        MassMoments m = box_moments(Vec3(u(rng), u(rng), u(rng)));
        const Vec3 offset = random_vec(rng, 0.1);
        m.second += m.volume * offset * offset.transpose();
        m.first = m.volume * offset;
        const BodyModel model = precompute_body(m, fixtures::stiff_material(), 1e-3);
        AffineState s = AffineState::from_pose(random_rotation(rng), random_vec(rng, 1.0));
        SpatialTwist V;
        V.omega = random_vec(rng, 10.0);
        V.v = random_vec(rng, 5.0);
        s.qdot = embedding_map(s, V);

        // Scale: magnitude of the spatial velocity-product force pulled back to affine coordinates.
        const Mat6 I = spatial_inertia(model, s);
        const Vec6 IV = I * V.stacked();
        Vec6 cross;
        cross << V.omega.cross(IV.head<3>()) + V.v.cross(IV.tail<3>()), V.omega.cross(IV.tail<3>());
        const double scale = (twist_matrix(s.A()).transpose() * cross).norm();
        const double r = gyroscopic_residual(model, s).norm() / std::max(scale, 1e-300);
        res.max_relative = std::max(res.max_relative, r);
        ++res.states;
    }
    return res;
}

GradientResult gradients(int count, unsigned seed) {
    std::mt19937 rng(seed);
    GradientResult res;
    const Material mat = fixtures::stiff_material();
    const BodyModel model_a = precompute_body(box_moments(Vec3(0.2, 0.05, 0.08)), mat, 1e-3);
    const BodyModel model_b = precompute_body(box_moments(Vec3(0.06, 0.15, 0.1)), mat, 1e-3);
    const JointKind kinds[4] = {JointKind::Ball, JointKind::Hinge, JointKind::Universal, JointKind::Prismatic};
    for (JointKind kind : kinds) {
        double worst = 0.0;
        for (int i = 0; i < count; ++i) {
            const AffineState pose_a = AffineState::from_pose(random_rotation(rng), random_vec(rng, 0.1));
            const AffineState pose_b = AffineState::from_pose(random_rotation(rng), random_vec(rng, 0.1) + Vec3(0.2, 0, 0));
            JointAuthoring au;
            au.kind = kind;
            au.body_a = 0;
            au.body_b = 1;
            au.point = 0.5 * (pose_a.t() + pose_b.t()) + random_vec(rng, 0.02);
            std::normal_distribution<double> n(0.0, 1.0);
            au.axis = Vec3(n(rng), n(rng), n(rng)).normalized();
            Vec3 second = Vec3(n(rng), n(rng), n(rng));
            second -= au.axis * au.axis.dot(second);
            au.axis2 = second.normalized();
            const JointSpec joint = build_joint(au, pose_a, pose_b, model_a.length_scale, model_b.length_scale);

            // Near-rigid state away from the build pose, with the joint violated.
            AffineState a = pose_a;
            AffineState b = pose_b;
            const Mat3 Ra = Eigen::AngleAxisd(0.3, random_vec(rng, 1.0).normalized()).toRotationMatrix();
            const Mat3 Rb = Eigen::AngleAxisd(0.3, random_vec(rng, 1.0).normalized()).toRotationMatrix();
            a.set_A(Ra * (Mat3::Identity() + 1e-6 * random_symmetric(rng)) * pose_a.A());
            b.set_A(Rb * (Mat3::Identity() + 1e-6 * random_symmetric(rng)) * pose_b.A());
            a.set_t(a.t() + random_vec(rng, 1e-3));
            b.set_t(b.t() + random_vec(rng, 1e-3));

            const ConstraintBlock block = eval_gradient(joint, a, b);
            VecX x(24);
            x << a.q, b.q;
            const auto fn = [&](const VecX& y) {
                AffineState sa = a;
                AffineState sb = b;
                sa.q = y.head<12>();
                sb.q = y.tail<12>();
                return eval_constraint(joint, sa, sb);
            };
            const MatX fd = oracles::finite_difference_jacobian(fn, x, 1e-6);
            MatX analytic(block.grad_a.rows(), 24);
            analytic << block.grad_a, block.grad_b;
            worst = std::max(worst, (analytic - fd).norm() / fd.norm());
        }
        res.joint_max_relative[joint_kind_name(kind)] = worst;
    }

    for (int i = 0; i < count; ++i) {
        AffineState s = AffineState::from_pose(random_rotation(rng) * (Mat3::Identity() + 1e-3 * random_symmetric(rng)),
                                               random_vec(rng, 0.1));
        const Vec12 g = elastic_gradient(model_a, s);
        const auto energy = [&](const VecX& q) {
            AffineState p = s;
            p.q = q;
            return elastic_energy(model_a, p);
        };
        const VecX fd = oracles::finite_difference_gradient(energy, s.q, 1e-6);
        res.elastic_max_relative = std::max(res.elastic_max_relative, (g - fd).norm() / fd.norm());
    }
    return res;
}

EquivalenceResult solver_equivalence(fixtures::InstanceShape shape, int instances, unsigned seed) {
    std::mt19937 rng(seed);
    EquivalenceResult res;
    SolverSettings settings;
    int min_bodies = 2;
    switch (shape) {
        case fixtures::InstanceShape::Chain: settings.choice = SolverChoice::Chain; break;
        case fixtures::InstanceShape::Tree: settings.choice = SolverChoice::Aba; min_bodies = 3; break;
        case fixtures::InstanceShape::Loop: settings.choice = SolverChoice::Loop; min_bodies = 3; break;
        case fixtures::InstanceShape::Net: settings.choice = SolverChoice::Dense; min_bodies = 4; break;
    }
    std::uniform_int_distribution<int> size(min_bodies, 50);
    for (int i = 0; i < instances; ++i) {
        const fixtures::RandomInstance inst = fixtures::random_instance(shape, size(rng), rng);
        const bool accepted =
            (shape == fixtures::InstanceShape::Chain && inst.topology.kind == TopologyKind::Chain) ||
            (shape == fixtures::InstanceShape::Tree &&
             (inst.topology.kind == TopologyKind::Tree || inst.topology.kind == TopologyKind::Chain)) ||
            (shape == fixtures::InstanceShape::Loop && inst.topology.kind == TopologyKind::Loop) ||
            shape == fixtures::InstanceShape::Net;
        if (!accepted) {
            ++res.wrong_topology;
            continue;
        }
        const KKTSolution sol = solve_island(inst.problem, inst.topology, settings);
        const oracles::DenseKKTResult ref = oracles::dense_kkt_solve(inst.problem);
        const double primal = relative_difference(stack(sol.dq), stack(ref.solution.dq));
        const double dual = relative_difference(stack(sol.dlambda), stack(ref.solution.dlambda));
        res.max_relative = std::max({res.max_relative, primal, dual});
        res.max_kkt_residual = std::max(res.max_kkt_residual, kkt_residual(inst.problem, sol).primal);
        ++res.instances;
    }
    return res;
}

GaussSeidelEquivalence gauss_seidel_equivalence(int n, int instances, unsigned seed, double tol) {
    std::mt19937 rng(seed);
    GaussSeidelEquivalence res;
    for (int i = 0; i < instances; ++i) {
        const fixtures::RandomInstance inst = fixtures::random_instance(fixtures::InstanceShape::Net, n * n, rng);
        DualSystem dual = assemble_dual(inst.problem);
        dual.topology = inst.topology;
        const GaussSeidelResult gs = solve_graph_gs(dual, chain_cover(dual), tol, 200);
        const KKTSolution sol = recover_primal(inst.problem, dual, gs.dlambda);
        const oracles::DenseKKTResult ref = oracles::dense_kkt_solve(inst.problem);
        res.max_relative = std::max(res.max_relative, relative_difference(stack(sol.dq), stack(ref.solution.dq)));
        res.max_dual_residual = std::max(res.max_dual_residual, gs.residual);
        res.max_sweeps = std::max(res.max_sweeps, gs.sweeps);
        res.all_converged = res.all_converged && gs.converged;
        ++res.instances;
    }
    return res;
}

ComplexityResult complexity(int k_small, int k_large, unsigned seed) {
    ComplexityResult res;
    res.k_small = k_small;
    res.k_large = k_large;
    auto count_ops = [](int joints) {
        // chain(links) carries one anchor plus links - 1 joints.
        Simulator sim(fixtures::chain(joints, 1e-3));
        std::vector<Vec12> forces(sim.models().size());
        for (std::size_t j = 0; j < forces.size(); ++j) forces[j] = sim.external_force(static_cast<int>(j), 0.0, sim.states()[j]);
        const Island& island = sim.islands().front();
        const KKTProblem problem = sim.island_problem(island, forces);
        SolverSettings settings;
        settings.choice = SolverChoice::Chain;
        SolverStats stats;
        solve_island(problem, island.topology, settings, &stats);
        return stats.block_ops;
    };
    res.ops_small = count_ops(k_small);
    res.ops_large = count_ops(k_large);
    res.linearity = (static_cast<double>(res.ops_large) / res.ops_small) / (static_cast<double>(k_large) / k_small);

    std::mt19937 rng(seed);
    const fixtures::RandomInstance inst = fixtures::random_instance(fixtures::InstanceShape::Tree, 40, rng);
    SolverStats stats;
    solve_tree_aba(inst.problem, inst.topology.root, &stats);
    res.aba_bodies = static_cast<int>(inst.problem.bodies.size());
    res.aba_touch_once_each = static_cast<int>(stats.upward_touches.size()) == res.aba_bodies &&
                              static_cast<int>(stats.downward_touches.size()) == res.aba_bodies;
    for (int j = 0; j < res.aba_bodies && res.aba_touch_once_each; ++j) {
        res.aba_touch_once_each = stats.upward_touches[j] == 1 && stats.downward_touches[j] == 1;
    }
    return res;
}

NetResult hanging_net(int n, double h, int steps, bool keep_trajectory) {
    Simulator sim(fixtures::net(n, h));
    NetResult res;
    res.n = n;
    res.steps = steps;
    for (const auto& j : sim.joints()) res.joints += j.kind == JointKind::Anchor ? 0 : 1;
    res.topology = topology_name(sim.islands().front().topology.kind);
    res.max_residual = sim.max_joint_residual();
    if (keep_trajectory) res.trajectory.rows.push_back(sim.record());
    for (int i = 0; i < steps; ++i) {
        if (keep_trajectory) {
            res.trajectory.rows.push_back(sim.step());
        } else {
            sim.step();
        }
        res.max_residual = std::max(res.max_residual, sim.max_joint_residual());
        res.max_iterations = std::max(res.max_iterations, sim.last_iterations());
    }
    return res;
}

PerfResult perf_corotated(int steps, int repeats) {
    const double h = 1e-3;
    const BodyModel model = precompute_body(box_moments(Vec3::Constant(0.1)), fixtures::stiff_material(), h);
    AffineState start;
    SpatialTwist twist;
    twist.omega = Vec3(1.0, 2.0, 3.0);
    twist.v = Vec3(0.5, 0.0, 0.0);
    start.qdot = embedding_map(start, twist);

    oracles::VanillaAbdSettings vanilla;
    vanilla.stiffness = model.material.youngs;
    vanilla.iterations = 1;

    std::vector<double> fast, slow;
    double sink = 0.0;
    for (int r = 0; r < repeats; ++r) {
        AffineState s = start;
        auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < steps; ++i) {
            const Vec12 f = model.mass * s.qdot / h - elastic_gradient(model, s);
            const Vec12 dq = newton_step_single(model, s, f, h, true);
            s.qdot = dq / h;
            s.q += dq;
        }
        auto t1 = std::chrono::steady_clock::now();
        fast.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        sink += s.q.sum();

        AffineState v = start;
        t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < steps; ++i) v = oracles::vanilla_abd_step(model, v, Vec12::Zero(), h, vanilla);
        t1 = std::chrono::steady_clock::now();
        slow.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        sink += v.q.sum();
    }
    PerfResult res;
    res.steps = steps;
    res.corotated_us = median(fast);
    res.vanilla_us = median(slow);
    res.speedup = res.vanilla_us / res.corotated_us;
    if (!std::isfinite(sink)) res.speedup = 0.0;
    return res;
}

bool evaluate(Check& check, double value) {
    check.value = value;
    if (check.comparator == "<=") {
        check.pass = value <= check.tolerance;
    } else if (check.comparator == ">=") {
        check.pass = value >= check.tolerance;
    } else if (check.comparator == ">") {
        check.pass = value > check.tolerance;
    } else if (check.comparator == "==") {
        check.pass = value == check.tolerance;
    } else {
        check.pass = false;
    }
    return check.pass;
}

bool BenchmarkResult::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::vector<BenchmarkSpec> benchmark_suite() {
    auto check = [](const char* metric, const char* cmp, double tol) { return Check{metric, cmp, tol, 0.0, false}; };
    return {
        {"cube_momentum", "cube_momentum", 1000, 1e-3,
         {check("linear_drift_max", "<=", 1e-10)}, {"cube_momentum_h1e-2.csv", "cube_momentum_h1e-3.csv", "cube_momentum_h1e-4.csv"}},
        {"t_handle", "t_handle", 0, 1e-4,
         {check("flips", ">=", 2), check("flip_time_error_over_period", "<=", 0.05)}, {"t_handle_flips.csv"}},
        {"heavy_top", "heavy_top", 3000, 1e-3,
         {check("precession_relative_error", "<=", 0.03), check("nutation_peak_to_peak", ">", 0.0)}, {"heavy_top.csv"}},
        {"pendulum", "pendulum", 50000, 1e-4,
         {check("max_error_h1e-4", "<=", 0.01), check("error_decreases_with_h", "==", 1.0)}, {"pendulum_theta.csv"}},
        {"chain_scaling", "chain", 10000, 1e-3,
         {check("linearity_deviation", "<=", 0.1), check("chain_oracle_relative", "<=", 1e-8),
          check("long_chain_max_residual", "<=", 1e-6)},
         {"chain_scaling.csv"}},
        {"net", "net", 300, 1.0 / 30.0,
         {check("max_residual", "<=", 1e-6), check("max_newton_iterations", "==", 1.0), check("net100_max_residual", "<=", 1e-6)},
         {"net.csv"}},
        {"tree_aba", "random_tree", 0, 1e-3,
         {check("oracle_relative", "<=", 1e-8), check("kkt_residual", "<=", 1e-8), check("touch_once_each_direction", "==", 1.0)},
         {}},
        {"loop_ring", "ring", 0, 1e-3, {check("oracle_relative", "<=", 1e-8), check("kkt_residual", "<=", 1e-8)}, {}},
        {"graph_gs", "net", 0, 1e-3, {check("oracle_relative", "<=", 1e-6), check("converged", "==", 1.0)}, {}},
        {"perf_corotated", "cube", 10000, 1e-3, {check("speedup", ">=", 2.0)}, {}},
    };
}

BenchmarkResult run_benchmark(const BenchmarkSpec& spec, const std::string& out_dir) {
    const auto start = std::chrono::steady_clock::now();
    BenchmarkResult res;
    res.name = spec.name;
    const unsigned seed = fixtures::seed_from_env();
    auto out_path = [&](const std::string& file) {
        std::filesystem::create_directories(out_dir);
        const std::string path = (std::filesystem::path(out_dir) / file).string();
        res.outputs.push_back(path);
        return path;
    };
    std::map<std::string, double>& m = res.metrics;

    if (spec.name == "cube_momentum") {
        const double hs[3] = {1e-2, 1e-3, 1e-4};
        const char* files[3] = {"cube_momentum_h1e-2.csv", "cube_momentum_h1e-3.csv", "cube_momentum_h1e-4.csv"};
        double worst = 0.0;
        for (int i = 0; i < 3; ++i) {
            const CubeMomentumResult r = cube_momentum(hs[i], spec.n_steps);
            worst = std::max(worst, r.linear_drift);
            char key[64];
            std::snprintf(key, sizeof(key), "linear_drift_h%.0e", hs[i]);
            m[key] = r.linear_drift;
            m["initial_momentum_error"] = std::max(m["initial_momentum_error"], r.angular_initial);
            if (!out_dir.empty()) r.trajectory.write_csv_file(out_path(files[i]));
        }
        m["linear_drift_max"] = worst;
    } else if (spec.name == "t_handle") {
        const FlipResult r = t_handle(spec.h, 30.0, 1e-4);
        m["flips"] = static_cast<double>(r.simulated_flips.size());
        m["reference_flips"] = static_cast<double>(r.reference_flips.size());
        m["flip_period"] = r.flip_period;
        m["flip_time_error_over_period"] = r.flip_period > 0.0 ? r.max_time_error / r.flip_period : 1e300;
        if (!out_dir.empty()) {
            std::ofstream f(out_path("t_handle_flips.csv"));
            f << "index,simulated,reference\n";
            const std::size_t n = std::max(r.simulated_flips.size(), r.reference_flips.size());
            for (std::size_t i = 0; i < n; ++i) {
                f << i << ',' << (i < r.simulated_flips.size() ? r.simulated_flips[i] : NAN) << ','
                  << (i < r.reference_flips.size() ? r.reference_flips[i] : NAN) << '\n';
            }
        }
    } else if (spec.name == "heavy_top") {
        const TopResult r = heavy_top(spec.h, spec.n_steps * spec.h, 1e-4, !out_dir.empty());
        m["simulated_precession_rate"] = r.simulated_rate;
        m["reference_precession_rate"] = r.reference_rate;
        m["precession_relative_error"] = r.relative_error;
        m["nutation_peak_to_peak"] = r.nutation_peak_to_peak;
        if (!out_dir.empty()) r.trajectory.write_csv_file(out_path("heavy_top.csv"));
    } else if (spec.name == "pendulum") {
        const double hs[3] = {1e-2, 1e-3, 1e-4};
        double errors[3];
        std::vector<PendulumResult> runs;
        for (int i = 0; i < 3; ++i) {
            runs.push_back(pendulum(hs[i], 5.0));
            errors[i] = runs.back().max_error;
        }
        m["max_error_h1e-2"] = errors[0];
        m["max_error_h1e-3"] = errors[1];
        m["max_error_h1e-4"] = errors[2];
        m["error_decreases_with_h"] = (errors[1] < errors[0] && errors[2] < errors[1]) ? 1.0 : 0.0;
        if (!out_dir.empty()) {
            std::ofstream f(out_path("pendulum_theta.csv"));
            f << "time,theta_h1e-4,theta_reference\n";
            const PendulumResult& fine = runs[2];
            char buf[96];
            for (std::size_t i = 0; i < fine.times.size(); i += 10) {
                std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", fine.times[i], fine.simulated[i], fine.reference[i]);
                f << buf;
            }
        }
    } else if (spec.name == "chain_scaling") {
        const ComplexityResult c = complexity(1000, spec.n_steps, seed);
        m["block_ops_k1000"] = static_cast<double>(c.ops_small);
        m["block_ops_k10000"] = static_cast<double>(c.ops_large);
        m["linearity_deviation"] = std::abs(c.linearity - 1.0);
        const EquivalenceResult e = solver_equivalence(fixtures::InstanceShape::Chain, 50, seed);
        m["chain_oracle_relative"] = e.max_relative;
        Simulator sim(fixtures::chain(spec.n_steps, spec.h));
        double worst = sim.max_joint_residual();
        for (int i = 0; i < 3; ++i) {
            sim.step();
            worst = std::max(worst, sim.max_joint_residual());
        }
        m["long_chain_max_residual"] = worst;
        if (!out_dir.empty()) {
            std::ofstream f(out_path("chain_scaling.csv"));
            f << "joints,block_ops\n" << c.k_small << ',' << c.ops_small << '\n' << c.k_large << ',' << c.ops_large << '\n';
        }
    } else if (spec.name == "net") {
        const NetResult r = hanging_net(10, spec.h, spec.n_steps, !out_dir.empty());
        m["max_residual"] = r.max_residual;
        m["max_newton_iterations"] = r.max_iterations;
        m["joints"] = r.joints;
        const NetResult big = hanging_net(100, spec.h, 3);
        m["net100_max_residual"] = big.max_residual;
        m["net100_joints"] = big.joints;
        if (!out_dir.empty()) r.trajectory.write_csv_file(out_path("net.csv"));
    } else if (spec.name == "tree_aba") {
        const EquivalenceResult e = solver_equivalence(fixtures::InstanceShape::Tree, 50, seed);
        m["oracle_relative"] = e.max_relative;
        m["kkt_residual"] = e.max_kkt_residual;
        m["instances"] = e.instances;
        const ComplexityResult c = complexity(10, 20, seed);
        m["touch_once_each_direction"] = c.aba_touch_once_each ? 1.0 : 0.0;
    } else if (spec.name == "loop_ring") {
        const EquivalenceResult e = solver_equivalence(fixtures::InstanceShape::Loop, 50, seed);
        m["oracle_relative"] = e.max_relative;
        m["kkt_residual"] = e.max_kkt_residual;
        m["instances"] = e.instances;
    } else if (spec.name == "graph_gs") {
        const GaussSeidelEquivalence g = gauss_seidel_equivalence(5, 5, seed);
        m["oracle_relative"] = g.max_relative;
        m["dual_residual"] = g.max_dual_residual;
        m["sweeps"] = g.max_sweeps;
        m["converged"] = g.all_converged ? 1.0 : 0.0;
    } else if (spec.name == "perf_corotated") {
        const PerfResult p = perf_corotated(spec.n_steps, 5);
        m["corotated_us"] = p.corotated_us;
        m["vanilla_us"] = p.vanilla_us;
        m["speedup"] = p.speedup;
    } else {
        throw Error(ErrorCode::ValidationError, "unknown benchmark '" + spec.name + "'");
    }

    for (Check c : spec.checks) {
        const auto it = m.find(c.metric);
        evaluate(c, it == m.end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
        res.checks.push_back(c);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

}  // namespace mabd::experiments
