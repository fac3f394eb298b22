#include "mabd/joints.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

namespace mabd {

namespace {

constexpr double kPi = 3.14159265358979323846;

double wrap_angle(double x) {
    return std::remainder(x, 2.0 * kPi);
}

// Control tetrahedron whose first point sits at the joint and whose remaining
// points are offset along the given world directions.
Mat34 joint_ct(const AffineState& pose, const Vec3& point, const std::array<Vec3, 3>& dirs, double length) {
    const Mat3 A_inv = pose.A().inverse();
    const Vec3 rest_point = A_inv * (point - pose.t());
    Mat34 ct;
    ct.col(0) = rest_point;
    for (int k = 0; k < 3; ++k) ct.col(k + 1) = rest_point + length * (A_inv * dirs[k]);
    return ct;
}

// Same tetrahedron expressed directly in world coordinates (world side of a joint).
Mat34 world_ct(const Vec3& point, const std::array<Vec3, 3>& dirs, double length) {
    Mat34 ct;
    ct.col(0) = point;
    for (int k = 0; k < 3; ++k) ct.col(k + 1) = point + length * dirs[k];
    return ct;
}

void fill_selection(JointSpec& joint) {
    joint.rank = static_cast<int>(joint.rows.size());
    joint.S_a = MatX::Zero(joint.rank, 12);
    joint.S_b = MatX::Zero(joint.rank, 12);
    for (int r = 0; r < joint.rank; ++r) {
        const auto& row = joint.rows[r];
        joint.S_a(r, 3 * row.cp_a + row.component) = 1.0;
        joint.S_b(r, 3 * row.cp_b + row.component) = 1.0;
    }
}

Vec3 require_unit(const Vec3& axis, const char* what) {
    if (std::abs(axis.norm() - 1.0) > 1e-9) {
        throw Error(ErrorCode::ValidationError, std::string(what) + " must be a unit vector");
    }
    return axis;
}

}  // namespace

const char* joint_kind_name(JointKind kind) {
    switch (kind) {
        case JointKind::Ball: return "ball";
        case JointKind::Hinge: return "hinge";
        case JointKind::Universal: return "universal";
        case JointKind::Prismatic: return "prismatic";
        case JointKind::Anchor: return "anchor";
    }
    return "unknown";
}

ControlMap build_control_map(const Mat34& rest_ct) {
    Mat3 edges;
    for (int i = 0; i < 3; ++i) edges.col(i) = rest_ct.col(i + 1) - rest_ct.col(0);
    if (!(std::abs(edges.determinant()) > 1e-12)) throw Error(ErrorCode::DegenerateCT, "control tetrahedron is flat");
    ControlMap map;
    map.ct = rest_ct;
    map.T.setZero();
    for (int k = 0; k < 4; ++k) {
        for (int i = 0; i < 3; ++i) map.T.block<3, 3>(3 * k, 3 * i) = rest_ct(i, k) * Mat3::Identity();
        map.T.block<3, 3>(3 * k, 9) = Mat3::Identity();
    }
    map.T_inv = map.T.fullPivLu().inverse();
    if ((map.T * map.T_inv - Mat12::Identity()).cwiseAbs().maxCoeff() > 1e-10) {
        throw Error(ErrorCode::DegenerateCT, "control map inverse is inaccurate");
    }
    return map;
}

Mat3 axis_alignment_rotation(const Vec3& axis) {
    if (axis.y() <= -1.0 + 1e-9) throw Error(ErrorCode::AntiParallelAxis, "axis is anti-parallel to +y");
    const Vec3 v = axis.cross(Vec3::UnitY());
    const Mat3 V = skew(v);
    return Mat3::Identity() + V + V * V / (1.0 + axis.y());
}

std::array<double, 9> skew_symmetrize(const std::array<double, 9>& s) {
    std::array<double, 9> out{};
    constexpr int pairs[3][2] = {{1, 3}, {2, 6}, {5, 7}};
    for (const auto& pr : pairs) {
        const double a = s[pr[0]];
        const double b = s[pr[1]];
        const double mag = 0.5 * (std::abs(a) + std::abs(b));
        // The larger member keeps its sign; ties go to the lower index.
        double sign_a;
        if (std::abs(a) >= std::abs(b)) {
            sign_a = a >= 0.0 ? 1.0 : -1.0;
        } else {
            sign_a = b >= 0.0 ? -1.0 : 1.0;
        }
        out[pr[0]] = sign_a * mag;
        out[pr[1]] = -sign_a * mag;
    }
    return out;
}

Mat3 skew_symmetrize(const Mat3& M) {
    std::array<double, 9> flat;
    Eigen::Map<Mat3>(flat.data()) = M;
    const auto out = skew_symmetrize(flat);
    return Eigen::Map<const Mat3>(out.data());
}

JointSpec build_joint(const JointAuthoring& au, const AffineState& pose_a, const AffineState& pose_b_in,
                      double length_a, double length_b) {
    if (au.body_a == kWorld) throw Error(ErrorCode::WrongBodies, "body_a must be a simulated body");
    if (au.body_a == au.body_b) throw Error(ErrorCode::WrongBodies, "joint connects a body to itself");
    const bool world_b = au.body_b == kWorld;
    const AffineState pose_b = world_b ? AffineState{} : pose_b_in;
    const double length = world_b ? length_a : std::min(length_a, length_b);

    JointSpec joint;
    joint.kind = au.kind;
    joint.body_a = au.body_a;
    joint.body_b = au.body_b;
    joint.point = au.point;
    joint.limit = au.limit;
    joint.linear = au.linear;

    const Mat3 Ra0 = polar_rotation(pose_a.A());
    const Mat3 Rb0 = polar_rotation(pose_b.A());
    const auto make_b = [&](const std::array<Vec3, 3>& dirs) {
        return world_b ? world_ct(au.point, dirs, length) : joint_ct(pose_b, au.point, dirs, length);
    };
    const std::array<Vec3, 3> world_axes = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};

    switch (au.kind) {
        case JointKind::Ball: {
            joint.map_a = build_control_map(joint_ct(pose_a, au.point, world_axes, length));
            joint.map_b = build_control_map(make_b(world_axes));
            for (int c = 0; c < 3; ++c) joint.rows.push_back({c, 0, 0});
            break;
        }
        case JointKind::Anchor: {
            if (!world_b) throw Error(ErrorCode::WrongBodies, "anchor must attach to the world");
            const Mat34 ct_a = joint_ct(pose_a, au.point, world_axes, length);
            joint.map_a = build_control_map(ct_a);
            Mat34 ct_w;
            for (int k = 0; k < 4; ++k) ct_w.col(k) = pose_a.A() * ct_a.col(k) + pose_a.t();
            joint.map_b = build_control_map(ct_w);
            const int n_points = au.full_anchor ? 4 : 1;
            for (int k = 0; k < n_points; ++k) {
                for (int c = 0; c < 3; ++c) joint.rows.push_back({c, k, k});
            }
            break;
        }
        case JointKind::Hinge:
        case JointKind::Prismatic: {
            Vec3 n = require_unit(au.axis, "axis");
            if (n.y() < 0.0) {
                n = -n;
                joint.axis_flipped = true;
                if (joint.limit) joint.limit = JointLimit{-au.limit->upper, -au.limit->lower, au.limit->stiffness};
            }
            const Mat3 align = axis_alignment_rotation(n);
            const Vec3 ex = align.transpose() * Vec3::UnitX();
            const Vec3 ez = align.transpose() * Vec3::UnitZ();
            joint.axis = n;
            joint.axis_rest_a = Ra0.transpose() * n;
            joint.perp_rest_a = Ra0.transpose() * ex;
            joint.perp_rest_b = Rb0.transpose() * ex;
            joint.map_a = build_control_map(joint_ct(pose_a, au.point, {n, ex, ez}, length));
            if (au.kind == JointKind::Hinge) {
                joint.map_b = build_control_map(make_b({n, ex, ez}));
                if (au.linear) {
                    for (int k = 0; k < 2; ++k) {
                        for (int c = 0; c < 3; ++c) joint.rows.push_back({c, k, k});
                    }
                } else {
                    joint.joint_frame = true;
                    joint.rows = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {0, 1, 1}, {2, 1, 1}};
                }
            } else {
                joint.map_b = build_control_map(make_b({n, ez, ex}));
                joint.joint_frame = true;
                joint.rows = {{0, 1, 0}, {2, 1, 0}, {0, 1, 1}, {2, 1, 1}, {0, 1, 2}};
            }
            joint.dR_a = align * Ra0;
            joint.dR_b = align * Rb0;
            break;
        }
        case JointKind::Universal: {
            const Vec3 a1 = require_unit(au.axis, "axis");
            const Vec3 a2 = require_unit(au.axis2, "axis2");
            if (std::abs(a1.dot(a2)) > 1e-10) throw Error(ErrorCode::ValidationError, "universal axes must be orthogonal");
            const Vec3 a3 = a1.cross(a2);
            Mat3 frame;
            frame.row(0) = a3.transpose();
            frame.row(1) = a1.transpose();
            frame.row(2) = a2.transpose();
            joint.axis = a1;
            joint.axis2 = a2;
            joint.axis_rest_a = Ra0.transpose() * a1;
            joint.axis2_rest_b = Rb0.transpose() * a2;
            joint.perp_rest_a = Ra0.transpose() * a3;
            joint.perp_rest_b = Rb0.transpose() * a3;
            joint.map_a = build_control_map(joint_ct(pose_a, au.point, {a1, a2, a3}, length));
            joint.map_b = build_control_map(make_b({a2, a1, a3}));
            joint.joint_frame = true;
            joint.rows = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {1, 0, 1}};
            joint.dR_a = frame * Ra0;
            joint.dR_b = frame * Rb0;
            break;
        }
    }
    if (joint.limit && au.kind != JointKind::Hinge && au.kind != JointKind::Prismatic) {
        throw Error(ErrorCode::ValidationError, "limits are only defined for hinge and prismatic joints");
    }
    fill_selection(joint);
    return joint;
}

Mat3 joint_rotation(const JointSpec& joint, const AffineState& a) {
    if (!joint.joint_frame) return Mat3::Identity();
    return joint.dR_a * polar_rotation(a.A()).transpose();
}

VecX eval_constraint(const JointSpec& joint, const AffineState& a, const AffineState& b) {
    const Mat3 RJ = joint_rotation(joint, a);
    const Vec12 qb = joint.body_b == kWorld ? AffineState::rest_q() : b.q;
    const Vec12 ya = joint.map_a.T * a.q;
    const Vec12 yb = joint.map_b.T * qb;
    VecX c(joint.rank);
    for (int r = 0; r < joint.rank; ++r) {
        const auto& row = joint.rows[r];
        const Vec3 d = ya.segment<3>(3 * row.cp_a) - yb.segment<3>(3 * row.cp_b);
        c(r) = RJ.row(row.component).dot(d);
    }
    return c;
}

ConstraintBlock eval_gradient(const JointSpec& joint, const AffineState& a, const AffineState& b) {
    const bool world_b = joint.body_b == kWorld;
    const Mat3 Ra = joint.joint_frame ? polar_rotation(a.A()) : Mat3::Identity();
    const Mat3 RJ = joint.joint_frame ? Mat3(joint.dR_a * Ra.transpose()) : Mat3::Identity();
    const Vec12 qb = world_b ? AffineState::rest_q() : b.q;
    const Vec12 ya = joint.map_a.T * a.q;
    const Vec12 yb = joint.map_b.T * qb;

    ConstraintBlock block;
    block.residual.resize(joint.rank);
    block.grad_a = MatX::Zero(joint.rank, 12);
    block.grad_b = MatX::Zero(joint.rank, 12);

    // d R_J / d A_ij, with the joint-frame factor skew-symmetrized.
    std::array<Mat3, 9> rot_derivs;
    if (joint.joint_frame) {
        for (int j = 0; j < 3; ++j) {
            for (int i = 0; i < 3; ++i) {
                Mat3 M = Mat3::Zero();
                M.col(i) = Ra.col(j);
                rot_derivs[3 * j + i] = RJ * skew_symmetrize(M);
            }
        }
    }

    for (int r = 0; r < joint.rank; ++r) {
        const auto& row = joint.rows[r];
        const Vec3 d = ya.segment<3>(3 * row.cp_a) - yb.segment<3>(3 * row.cp_b);
        const Eigen::RowVector3d e = RJ.row(row.component);
        block.residual(r) = e.dot(d);
        block.grad_a.row(r) = e * joint.map_a.point_jacobian(row.cp_a);
        if (!world_b) block.grad_b.row(r) = -e * joint.map_b.point_jacobian(row.cp_b);
        if (joint.joint_frame) {
            for (int l = 0; l < 9; ++l) block.grad_a(r, l) += rot_derivs[l].row(row.component).dot(d);
        }
    }
    return block;
}

int constraint_rank(const JointSpec& joint, const AffineState& a, const AffineState& b, double tol) {
    const ConstraintBlock blk = eval_gradient(joint, a, b);
    MatX J(joint.rank, 24);
    J << blk.grad_a, blk.grad_b;
    Eigen::JacobiSVD<MatX> svd(J);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) return 0;
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i) {
        if (sv(i) > tol * sv(0)) ++rank;
    }
    return rank;
}

MatX joint_motion_subspace(const JointSpec& joint, const AffineState& a, const AffineState& moving) {
    const Vec3 p = joint.map_a.point(a.q, 0);
    const Vec3 r = moving.t() - p;
    const Mat3 Ra = polar_rotation(a.A());
    auto rotation_column = [&](const Vec3& w) {
        Vec6 col;
        col << w, w.cross(r);
        return col;
    };
    MatX S;
    switch (joint.kind) {
        case JointKind::Ball:
            S.resize(6, 3);
            for (int i = 0; i < 3; ++i) S.col(i) = rotation_column(Vec3::Unit(i));
            break;
        case JointKind::Anchor:
            if (joint.rank == 12) {
                S.resize(6, 0);
            } else {
                S.resize(6, 3);
                for (int i = 0; i < 3; ++i) S.col(i) = rotation_column(Vec3::Unit(i));
            }
            break;
        case JointKind::Hinge:
            S.resize(6, 1);
            S.col(0) = rotation_column(Ra * joint.axis_rest_a);
            break;
        case JointKind::Prismatic:
            S.resize(6, 1);
            S.col(0) << Vec3::Zero(), Ra * joint.axis_rest_a;
            break;
        case JointKind::Universal: {
            S.resize(6, 2);
            const Vec3 a1 = Ra * joint.axis_rest_a;
            const Vec3 a2 = joint.body_b == kWorld ? joint.axis2 : Vec3(polar_rotation(moving.A()) * joint.axis2_rest_b);
            S.col(0) = rotation_column(a1);
            S.col(1) = rotation_column(a2);
            break;
        }
    }
    return S;
}

double measure_joint_coordinate(const JointSpec& joint, const AffineState& a, const AffineState& b) {
    const AffineState bb = joint.body_b == kWorld ? AffineState{} : b;
    const Mat3 Ra = polar_rotation(a.A());
    const Vec3 n = Ra * joint.axis_rest_a;
    if (joint.kind == JointKind::Hinge) {
        const Vec3 ua = Ra * joint.perp_rest_a;
        const Vec3 ub = polar_rotation(bb.A()) * joint.perp_rest_b;
        return std::atan2(n.dot(ua.cross(ub)), ua.dot(ub));
    }
    if (joint.kind == JointKind::Prismatic) {
        const Vec3 pa = joint.map_a.point(a.q, 0);
        const Vec3 pb = joint.map_b.point(bb.q, 0);
        return n.dot(pb - pa);
    }
    throw Error(ErrorCode::NoLimitDefined, std::string(joint_kind_name(joint.kind)) + " joint has no scalar coordinate");
}

double default_limit_stiffness(const BodyModel& model, JointKind kind) {
    const double L = model.length_scale;
    const double linear = 10.0 * model.material.youngs * model.volume / (L * L);
    return kind == JointKind::Hinge ? linear * L * L : linear;
}

namespace {

LimitResult limit_forces(const JointSpec& joint, const AffineState& a, const AffineState& b, double theta,
                         double theta_hat, bool clamped, bool active) {
    LimitResult res;
    res.theta = theta;
    res.theta_hat = theta_hat;
    res.clamped = clamped;
    if (!active) return res;
    res.penalty = joint.limit->stiffness * (theta - theta_hat);
    const bool world_b = joint.body_b == kWorld;
    const Vec3 n = polar_rotation(a.A()) * joint.axis_rest_a;
    if (joint.kind == JointKind::Hinge) {
        SpatialWrench wb;
        wb.tau = -res.penalty * n;
        SpatialWrench wa;
        wa.tau = res.penalty * n;
        res.force_a = wrench_to_affine(a, wa);
        if (!world_b) res.force_b = wrench_to_affine(b, wb);
    } else {
        const Vec3 F = -res.penalty * n;
        if (!world_b) res.force_b = joint.map_b.point_jacobian(0).transpose() * F;
        res.force_a = -(joint.map_a.point_jacobian(0).transpose() * F);
    }
    return res;
}

void require_limit(const JointSpec& joint) {
    if (!joint.limit) throw Error(ErrorCode::NoLimitDefined, "joint has no limits");
    if (joint.kind != JointKind::Hinge && joint.kind != JointKind::Prismatic) {
        throw Error(ErrorCode::NoLimitDefined, "limits need a hinge or prismatic joint");
    }
}

}  // namespace

LimitResult apply_joint_limits(const JointSpec& joint, const AffineState& a, const AffineState& b) {
    require_limit(joint);
    const double theta = measure_joint_coordinate(joint, a, b);
    const double hat = std::clamp(theta, joint.limit->lower, joint.limit->upper);
    const bool clamped = hat != theta;
    return limit_forces(joint, a, b, theta, hat, clamped, clamped);
}

LimitResult apply_joint_limits(const JointSpec& joint, const AffineState& a, const AffineState& b, LimitState& state) {
    require_limit(joint);
    double theta = measure_joint_coordinate(joint, a, b);
    if (joint.kind == JointKind::Hinge && state.initialized) theta = state.theta_prev + wrap_angle(theta - state.theta_prev);
    state.initialized = true;
    state.theta_prev = theta;

    const double hat = std::clamp(theta, joint.limit->lower, joint.limit->upper);
    if (hat != theta) {
        state.hold_iterations = 1;
        state.theta_hold = hat;
        return limit_forces(joint, a, b, theta, hat, true, true);
    }
    if (state.hold_iterations > 0) {
        --state.hold_iterations;
        return limit_forces(joint, a, b, theta, state.theta_hold, false, true);
    }
    return limit_forces(joint, a, b, theta, hat, false, false);
}

}  // namespace mabd
