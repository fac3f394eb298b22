#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>

#include "mabd/error.hpp"
#include "mabd/types.hpp"

namespace mabd {

// Generalized affine coordinate q = [a1; a2; a3; t] where a_i are the columns
// of A, so a rest point x maps to A x + t.
struct AffineState {
    Vec12 q = rest_q();
    Vec12 qdot = Vec12::Zero();

    static Vec12 rest_q();
    static AffineState from_pose(const Mat3& A, const Vec3& t);

    Mat3 A() const;
    Vec3 t() const { return q.segment<3>(9); }
    void set_A(const Mat3& A);
    void set_t(const Vec3& t) { q.segment<3>(9) = t; }
};

struct TetMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 4>> tets;
};

struct Material {
    double density = 1000.0;
    double youngs = 1e9;
    double poisson = 0.3;

    double mu() const { return youngs / (2.0 * (1.0 + poisson)); }
    double lambda() const { return youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson)); }
};

// Volume integrals of 1, x and x x^T over the rest shape.
struct MassMoments {
    double volume = 0.0;
    Vec3 first = Vec3::Zero();
    Mat3 second = Mat3::Zero();
};

MassMoments tet_mesh_moments(const TetMesh& mesh);
MassMoments box_moments(const Vec3& size);
// Cylinder and capsule are aligned with the local y axis and centered at the origin.
MassMoments cylinder_moments(double radius, double height);
MassMoments capsule_moments(double radius, double cylinder_length);

// Cholesky factor of M/h^2 + K tagged with the step size it was built for.
class HessianFactor {
public:
    HessianFactor() = default;
    HessianFactor(const Mat12& hbar, double h);

    bool valid() const { return valid_; }
    double h() const { return h_; }
    Vec12 solve(const Vec12& rhs, double h) const;

private:
    Eigen::LLT<Mat12> llt_;
    double h_ = 0.0;
    bool valid_ = false;
};

struct BodyModel {
    Mat12 mass = Mat12::Zero();
    Mat12 stiffness = Mat12::Zero();
    Mat12 jbar = Mat12::Zero();
    Mat4 scalar_mass = Mat4::Zero();  // rho * integral of [x;1][x;1]^T
    double volume = 0.0;
    double total_mass = 0.0;
    Vec3 center_of_mass = Vec3::Zero();
    double length_scale = 1.0;
    Material material;
    Mat34 rest_ct = Mat34::Zero();
    HessianFactor hbar_factor;

    Mat12 hbar(double h) const { return mass / (h * h) + stiffness; }
    // Rigid inertia about the rest center of mass, in rest coordinates.
    Mat3 rest_inertia() const;
};

BodyModel precompute_body(const TetMesh& mesh, const Material& material, double h,
                          const std::optional<Mat34>& control_tet = std::nullopt);
BodyModel precompute_body(const MassMoments& moments, const Material& material, double h,
                          const std::optional<Mat34>& control_tet = std::nullopt);
// Rebuilds the cached factor when h changed.
void refactor(BodyModel& model, double h);

Mat3 polar_rotation(const Mat3& A);
Vec3 length_preserving_rotate(const Mat3& A, const Vec3& a);

// Applies diag4(R) Hbar^{-1} diag4(R^T) with a given rotation.
Vec12 rotated_solve(const BodyModel& model, const Mat3& R, const Vec12& rhs, double h);
Vec12 newton_step_single(const BodyModel& model, const AffineState& state, const Vec12& f_A, double h,
                         bool use_polar);

// Co-rotated linear elasticity.
double elastic_energy(const BodyModel& model, const AffineState& state);
Vec12 elastic_gradient(const BodyModel& model, const AffineState& state);
Vec12 elastic_gradient(const BodyModel& model, const AffineState& state, const Mat3& R);
// Rotation-invariant quadratic-strain variant used when the polar decomposition is skipped.
double green_strain_energy(const BodyModel& model, const AffineState& state);
Vec12 green_strain_gradient(const BodyModel& model, const AffineState& state);

struct SpatialTwist {
    Vec3 omega = Vec3::Zero();
    Vec3 v = Vec3::Zero();
    Vec6 stacked() const;
    static SpatialTwist from_stacked(const Vec6& x);
};

struct SpatialWrench {
    Vec3 tau = Vec3::Zero();
    Vec3 f = Vec3::Zero();
    Vec6 stacked() const;
};

Mat6x12 twist_matrix(const Mat3& A);
Mat12x6 embedding_matrix(const Mat3& A);
SpatialTwist twist_map(const AffineState& state);
Vec12 wrench_to_affine(const AffineState& state, const SpatialWrench& W);
Vec12 embedding_map(const AffineState& state, const SpatialTwist& V);
Mat6 twist_embedding_product(const Mat3& A);
Mat6 spatial_inertia(const BodyModel& model, const AffineState& state);
Vec12 gyroscopic_residual(const BodyModel& model, const AffineState& state);

Vec3 linear_momentum(const BodyModel& model, const AffineState& state);
Vec3 angular_momentum(const BodyModel& model, const AffineState& state);
double kinetic_energy(const BodyModel& model, const AffineState& state);
// Rigid initial velocity reproducing the given linear and angular momentum.
SpatialTwist twist_from_momentum(const BodyModel& model, const AffineState& state, const Vec3& p, const Vec3& L);

}  // namespace mabd
