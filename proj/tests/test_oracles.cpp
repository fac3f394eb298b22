#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mabd/oracles.hpp"
#include "support.hpp"

using namespace mabd;
using namespace mabd::testing;

namespace {

// Composite Simpson on the incomplete first-kind integral, independent of the library code.
double incomplete_F(double phi, double k, int panels = 2000) {
    auto f = [k](double t) { return 1.0 / std::sqrt(1.0 - k * k * std::sin(t) * std::sin(t)); };
    const double step = phi / panels;
    double sum = f(0.0) + f(phi);
    for (int i = 1; i < panels; ++i) sum += (i % 2 ? 4.0 : 2.0) * f(i * step);
    return sum * step / 3.0;
}

// sn by bisection on the amplitude, for 0 <= u <= K.
double sn_by_bisection(double u, double k) {
    double lo = 0.0, hi = std::numbers::pi / 2;
    for (int i = 0; i < 60; ++i) {
        const double mid = 0.5 * (lo + hi);
        (incomplete_F(mid, k) < u ? lo : hi) = mid;
    }
    return std::sin(0.5 * (lo + hi));
}

oracles::RigidReference free_body(const Mat3& inertia, const Vec3& omega) {
    oracles::RigidReference r;
    r.inertia_body = inertia;
    r.omega_body = omega;
    r.mass = 1.0;
    return r;
}

const oracles::WrenchField kNoWrench = [](double, const oracles::RigidReference&) { return SpatialWrench{}; };

}  // namespace

TEST(Elliptic, CompleteIntegral) {
    EXPECT_NEAR(oracles::elliptic_K(0.0), std::numbers::pi / 2, 1e-15);
    EXPECT_NEAR(oracles::elliptic_K(0.5), 1.685750354812596, 1e-14);
    for (double k : {0.1, 0.5, 0.9, 0.99}) {
        EXPECT_NEAR(oracles::elliptic_K(k), incomplete_F(std::numbers::pi / 2, k, 20000), 1e-9) << k;
    }
}

TEST(Elliptic, JacobiSn) {
    for (double u : {0.0, 0.3, 1.0, 2.5, -0.7}) EXPECT_NEAR(oracles::jacobi_sn(u, 0.0), std::sin(u), 1e-14);
    for (double k : {0.2, 0.6, 0.95}) EXPECT_NEAR(oracles::jacobi_sn(oracles::elliptic_K(k), k), 1.0, 1e-12);
    EXPECT_NEAR(oracles::jacobi_sn(0.7, 0.6), 0.6299171153234867, 1e-13);
    EXPECT_NEAR(sn_by_bisection(0.7, 0.6), 0.6299171153234867, 1e-9);
    for (double u : {0.2, 0.9, 1.4}) EXPECT_NEAR(oracles::jacobi_sn(u, 0.8), sn_by_bisection(u, 0.8), 1e-9) << u;
}

TEST(Elliptic, OddAndPeriodic) {
    const double k = 0.7;
    const double K = oracles::elliptic_K(k);
    for (double u : {0.1, 0.8, 1.3}) {
        EXPECT_NEAR(oracles::jacobi_sn(-u, k), -oracles::jacobi_sn(u, k), 1e-13);
        EXPECT_NEAR(oracles::jacobi_sn(u + 4 * K, k), oracles::jacobi_sn(u, k), 1e-11);
        EXPECT_NEAR(oracles::jacobi_sn(2 * K - u, k), oracles::jacobi_sn(u, k), 1e-12);
    }
}

TEST(Elliptic, OutOfDomain) {
    for (double k : {1.0, 1.5, -1.0}) {
        try {
            oracles::elliptic_K(k);
            FAIL() << k;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::OutOfDomain);
        }
        EXPECT_THROW(oracles::jacobi_sn(0.3, k), Error);
    }
}

TEST(PendulumOracle, StartsAtReleaseAndRepeats) {
    const double mass = 2.0, g = 9.81, d = 0.5, inertia = mass * (1.0 / 3.0);
    const oracles::EllipticPendulum p = oracles::make_pendulum(mass, g, d, inertia, std::numbers::pi / 2);
    EXPECT_NEAR(oracles::pendulum_theta(0.0, p), 0.0, 1e-12);
    const double T = oracles::pendulum_period(p);
    EXPECT_NEAR(T, 4.0 * oracles::elliptic_K(p.kappa) / p.omega_lin, 1e-12);
    for (double t : {0.1, 0.37, 1.2}) EXPECT_NEAR(oracles::pendulum_theta(t + T, p), oracles::pendulum_theta(t, p), 1e-9);
    EXPECT_NEAR(oracles::pendulum_theta(0.5 * T, p), std::numbers::pi, 1e-9);
}

TEST(PendulumOracle, ConservesEnergy) {
    const double mass = 1.0, g = 9.81, d = 0.5, inertia = 1.0 / 3.0;
    const oracles::EllipticPendulum p = oracles::make_pendulum(mass, g, d, inertia, std::numbers::pi / 2);
    const double dt = 1e-6;
    for (double t = 0.05; t < 3.0; t += 0.173) {
        const double th = oracles::pendulum_theta(t, p);
        const double rate = (oracles::pendulum_theta(t + dt, p) - oracles::pendulum_theta(t - dt, p)) / (2 * dt);
        // theta is measured from the horizontal release, so the drop of the center of mass is d sin(theta).
        const double energy = 0.5 * inertia * rate * rate - mass * g * d * std::sin(th);
        EXPECT_NEAR(energy, 0.0, 1e-6) << t;
    }
}

TEST(RigidReference, SymmetricBodyKeepsSpin) {
    const Vec3 omega(0.3, -1.2, 2.0);
    oracles::RigidReference r = free_body(Mat3::Identity() * 0.4, omega);
    for (int i = 0; i < 1000; ++i) r = oracles::rk4_rigid_step(r, kNoWrench, i * 1e-3, 1e-3);
    EXPECT_LT((r.omega_body - omega).norm(), 1e-12);
    EXPECT_LT((r.omega_world() - omega).norm(), 1e-10);
}

TEST(RigidReference, AsymmetricBodyConservesInvariants) {
    const Mat3 I = Vec3(1.0, 2.0, 3.0).asDiagonal();
    oracles::RigidReference r = free_body(I, Vec3(0.01, 3.0, 0.02));
    auto energy = [&](const oracles::RigidReference& s) { return 0.5 * s.omega_body.dot(I * s.omega_body); };
    auto world_L = [&](const oracles::RigidReference& s) { return Vec3(s.R() * (I * s.omega_body)); };
    const double e0 = energy(r);
    const Vec3 L0 = world_L(r);
    const double h = 1e-3;
    int flips = 0;
    double prev = r.omega_body.y();
    for (int i = 0; i < 30000; ++i) {
        r = oracles::rk4_rigid_step(r, kNoWrench, i * h, h);
        if (r.omega_body.y() * prev < 0.0) ++flips;
        prev = r.omega_body.y();
    }
    EXPECT_LT(std::abs(energy(r) - e0) / e0, 1e-8);
    EXPECT_LT((world_L(r) - L0).norm() / L0.norm(), 1e-8);
    EXPECT_GE(flips, 2);
}

TEST(RigidReference, FreeFallIsExact) {
    oracles::RigidReference r = free_body(Mat3::Identity(), Vec3::Zero());
    r.velocity = Vec3(1.0, 2.0, 0.0);
    const oracles::WrenchField gravity = [](double, const oracles::RigidReference& s) {
        SpatialWrench w;
        w.f = Vec3(0.0, -9.81 * s.mass, 0.0);
        return w;
    };
    for (int i = 0; i < 100; ++i) r = oracles::rk4_rigid_step(r, gravity, i * 0.01, 0.01);
    EXPECT_LT((r.position - Vec3(1.0, 2.0 - 0.5 * 9.81, 0.0)).norm(), 1e-12);
}

TEST(DenseKKT, SolvesRandomInstances) {
    std::mt19937 rng(11);
    for (auto shape : {fixtures::InstanceShape::Chain, fixtures::InstanceShape::Tree, fixtures::InstanceShape::Loop}) {
        for (int i = 0; i < 5; ++i) {
            const fixtures::RandomInstance inst = fixtures::random_instance(shape, 12, rng);
            const oracles::DenseKKTResult r = oracles::dense_kkt_solve(inst.problem);
            EXPECT_LE(r.relative_residual, 1e-10);
        }
    }
}

TEST(FiniteDifference, QuadraticGradientAndJacobian) {
    const MatX Q = (MatX(2, 2) << 3.0, 1.0, 1.0, 2.0).finished();
    const auto energy = [&](const VecX& x) { return 0.5 * x.dot(Q * x); };
    const auto map = [&](const VecX& x) { return VecX(Q * x); };
    const VecX x = (VecX(2) << 0.4, -1.1).finished();
    EXPECT_LT((oracles::finite_difference_gradient(energy, x, 1e-5) - Q * x).norm(), 1e-8);
    EXPECT_LT((oracles::finite_difference_jacobian(map, x, 1e-5) - Q).norm(), 1e-8);
}

TEST(VanillaStep, MatchesCorotatedOnRigidMotion) {
    const BodyModel model = cube_model();
    AffineState s;
    s.qdot = rigid_qdot(Mat3::Identity(), Vec3(0.0, 0.0, 1.0), Vec3(0.1, 0.0, 0.0));
    oracles::VanillaAbdSettings settings;
    const AffineState next = oracles::vanilla_abd_step(model, s, Vec12::Zero(), 1e-3, settings);
    EXPECT_LT((next.t() - Vec3(1e-4, 0.0, 0.0)).norm(), 1e-9);
    EXPECT_LT((next.A().transpose() * next.A() - Mat3::Identity()).norm(), 1e-5);
    EXPECT_EQ(oracles::orthogonality_energy(model, AffineState{}, settings.stiffness), 0.0);
    EXPECT_EQ(oracles::orthogonality_gradient(model, AffineState{}, settings.stiffness), Vec12::Zero());
}
