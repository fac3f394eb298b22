#pragma once

#include <array>
#include <optional>
#include <vector>

#include "mabd/corotated_body.hpp"

namespace mabd {

inline constexpr int kWorld = -1;

// Maps q to the stacked control points y = T q of one control tetrahedron.
struct ControlMap {
    Mat12 T = Mat12::Identity();
    Mat12 T_inv = Mat12::Identity();
    Mat34 ct = Mat34::Zero();

    Vec3 point(const Vec12& q, int k) const { return T.block<3, 12>(3 * k, 0) * q; }
    Eigen::Matrix<double, 3, 12> point_jacobian(int k) const { return T.block<3, 12>(3 * k, 0); }
};

ControlMap build_control_map(const Mat34& rest_ct);

enum class JointKind { Ball, Hinge, Universal, Prismatic, Anchor };

const char* joint_kind_name(JointKind kind);

struct JointLimit {
    double lower = 0.0;
    double upper = 0.0;
    double stiffness = 0.0;  // 0 selects the default scale
};

// World-space description of a joint as a scene author writes it.
struct JointAuthoring {
    JointKind kind = JointKind::Ball;
    int body_a = 0;
    int body_b = kWorld;
    Vec3 point = Vec3::Zero();
    Vec3 axis = Vec3::UnitY();   // hinge, prismatic, first universal axis (fixed in body a)
    Vec3 axis2 = Vec3::UnitZ();  // second universal axis (fixed in body b)
    std::optional<JointLimit> limit;
    bool linear = false;       // six-row hinge variant
    bool full_anchor = false;  // anchor every control point instead of one
};

// One scalar row: component of R_J (y^a[cp_a] - y^b[cp_b]).
struct ConstraintRow {
    int component = 0;
    int cp_a = 0;
    int cp_b = 0;
};

struct JointSpec {
    JointKind kind = JointKind::Ball;
    int body_a = 0;
    int body_b = kWorld;
    int rank = 0;
    bool joint_frame = false;  // rows measured in the rotating joint frame
    bool linear = false;
    std::vector<ConstraintRow> rows;
    MatX S_a, S_b;  // rank x 12 selection over stacked control points
    ControlMap map_a, map_b;
    Mat3 dR_a = Mat3::Identity();
    Mat3 dR_b = Mat3::Identity();
    Vec3 axis = Vec3::UnitY();   // world axis at build time
    Vec3 axis2 = Vec3::UnitZ();
    Vec3 point = Vec3::Zero();   // world joint point at build time
    Vec3 axis_rest_a = Vec3::UnitY();  // axis in body a rest coordinates
    Vec3 axis2_rest_b = Vec3::UnitZ(); // second universal axis in body b rest coordinates
    Vec3 perp_rest_a = Vec3::UnitX();  // reference direction for the hinge angle
    Vec3 perp_rest_b = Vec3::UnitX();
    bool axis_flipped = false;
    std::optional<JointLimit> limit;
};

// Builds the per-joint control tetrahedra from the build-time poses. pose_b is
// ignored when body_b is the world.
JointSpec build_joint(const JointAuthoring& authoring, const AffineState& pose_a, const AffineState& pose_b,
                      double length_a, double length_b);

Mat3 axis_alignment_rotation(const Vec3& axis);
std::array<double, 9> skew_symmetrize(const std::array<double, 9>& entries);
Mat3 skew_symmetrize(const Mat3& M);

// Rotation from world into the joint frame for the current state of body a.
Mat3 joint_rotation(const JointSpec& joint, const AffineState& a);

struct ConstraintBlock {
    VecX residual;
    MatX grad_a;  // rank x 12
    MatX grad_b;  // rank x 12, zero when body_b is the world
};

// For world joints pass the rest state for b (it is never read).
VecX eval_constraint(const JointSpec& joint, const AffineState& a, const AffineState& b);
ConstraintBlock eval_gradient(const JointSpec& joint, const AffineState& a, const AffineState& b);
int constraint_rank(const JointSpec& joint, const AffineState& a, const AffineState& b, double tol = 1e-9);

// Relative motion basis of the joint (6 x m) as twists [omega; velocity of the
// origin of the moving body], expressed for the given moving body state.
MatX joint_motion_subspace(const JointSpec& joint, const AffineState& a, const AffineState& moving);

double measure_joint_coordinate(const JointSpec& joint, const AffineState& a, const AffineState& b);

struct LimitState {
    bool initialized = false;
    double theta_prev = 0.0;
    int hold_iterations = 0;
    double theta_hold = 0.0;
};

struct LimitResult {
    bool clamped = false;
    double theta = 0.0;
    double theta_hat = 0.0;
    double penalty = 0.0;  // k (theta - theta_hat)
    Vec12 force_a = Vec12::Zero();
    Vec12 force_b = Vec12::Zero();
};

// 10 E V / L^2 for prismatic limits; the hinge variant is scaled by L^2 to act on radians.
double default_limit_stiffness(const BodyModel& model, JointKind kind);
// Stateless evaluation against the joint's range.
LimitResult apply_joint_limits(const JointSpec& joint, const AffineState& a, const AffineState& b);
// Unwraps the hinge angle and applies the one-iteration hold.
LimitResult apply_joint_limits(const JointSpec& joint, const AffineState& a, const AffineState& b, LimitState& state);

}  // namespace mabd
