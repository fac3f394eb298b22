#pragma once

#include <array>
#include <functional>

#include <Eigen/Geometry>

#include "mabd/corotated_body.hpp"
#include "mabd/kkt_solvers.hpp"

// Reference implementations used to check the fast paths. Nothing here calls
// into the solver or body-step code.
namespace mabd::oracles {

double elliptic_K(double kappa);
double jacobi_sn(double u, double kappa);

// Physical pendulum released from rest at release_angle from the downward vertical.
struct EllipticPendulum {
    double kappa = 0.0;
    double omega_lin = 0.0;
    double length = 0.0;  // pivot to center of mass
    double mass = 0.0;
    double gravity = 0.0;
    double inertia_pivot = 0.0;
};

EllipticPendulum make_pendulum(double mass, double gravity, double com_distance, double inertia_pivot,
                               double release_angle);
// Swept angle from the horizontal: pi/2 - 2 asin(kappa sn(K - omega t)).
double pendulum_theta(double t, const EllipticPendulum& p);
double pendulum_period(const EllipticPendulum& p);

struct RigidReference {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Vec3 position = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();
    Vec3 omega_body = Vec3::Zero();
    Mat3 inertia_body = Mat3::Identity();  // about the center of mass, or about the pivot when pinned
    double mass = 1.0;
    bool pinned = false;
    Vec3 pivot = Vec3::Zero();       // world pivot when pinned
    Vec3 com_offset = Vec3::Zero();  // pivot to center of mass in body axes when pinned

    Mat3 R() const { return rotation.toRotationMatrix(); }
    Vec3 omega_world() const { return R() * omega_body; }
    Vec3 center_of_mass() const { return pinned ? Vec3(pivot + R() * com_offset) : position; }
};

// World torque (about the center of mass, or the pivot when pinned) and world force.
using WrenchField = std::function<SpatialWrench(double t, const RigidReference&)>;

RigidReference rk4_rigid_step(const RigidReference& ref, const WrenchField& wrench, double t, double h);

struct DenseKKTResult {
    KKTSolution solution;
    double relative_residual = 0.0;
};
// Assembles the full symmetric indefinite system from the body constants and solves it with full pivoting.
DenseKKTResult dense_kkt_solve(const KKTProblem& problem);
// Dual matrix grad H^-1 grad^T formed with explicit dense inverses.
MatX dense_dual_matrix(const KKTProblem& problem);

MatX finite_difference_jacobian(const std::function<VecX(const VecX&)>& fn, const VecX& x, double step);
VecX finite_difference_gradient(const std::function<double(const VecX&)>& fn, const VecX& x, double step);

// Collapsed-coordinate Gauss product rule over one tetrahedron.
MassMoments quadrature_tet_moments(const std::array<Vec3, 4>& vertices, int points_per_axis = 5);

// Implicit affine body stepping with the orthogonality potential kappa V |A A^T - I|^2,
// re-assembling and re-factorizing the 12x12 Hessian every iteration.
struct VanillaAbdSettings {
    double stiffness = 1e9;
    int iterations = 1;
    bool project_psd = true;
};
double orthogonality_energy(const BodyModel& model, const AffineState& state, double stiffness);
Vec12 orthogonality_gradient(const BodyModel& model, const AffineState& state, double stiffness);
Mat12 orthogonality_hessian(const BodyModel& model, const AffineState& state, double stiffness, bool project_psd);
AffineState vanilla_abd_step(const BodyModel& model, const AffineState& state, const Vec12& f_ext, double h,
                             const VanillaAbdSettings& settings);

}  // namespace mabd::oracles
