#pragma once

#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "mabd/corotated_body.hpp"
#include "mabd/fixtures.hpp"
#include "mabd/joints.hpp"
#include "mabd/types.hpp"

namespace mabd::testing {

inline double rel(const VecX& a, const VecX& b) {
    const double scale = std::max(b.norm(), 1e-300);
    return (a - b).norm() / scale;
}

inline Vec3 random_vec(std::mt19937& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    return Vec3(u(rng), u(rng), u(rng));
}

inline Mat3 random_rotation(std::mt19937& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline Vec12 random12(std::mt19937& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Vec12 x;
    for (int i = 0; i < 12; ++i) x(i) = u(rng);
    return x;
}

inline Mat12 block_rotation(const Mat3& R) {
    Mat12 D = Mat12::Zero();
    for (int b = 0; b < 4; ++b) D.block<3, 3>(3 * b, 3 * b) = R;
    return D;
}

inline BodyModel cube_model(double side = 0.1, double h = 1e-3) {
    return precompute_body(box_moments(Vec3::Constant(side)), fixtures::stiff_material(), h);
}

inline BodyModel box_model(const Vec3& size, double h = 1e-3) {
    return precompute_body(box_moments(size), fixtures::stiff_material(), h);
}

// Rigid velocity qdot_i = omega x a_i, tdot = v.
inline Vec12 rigid_qdot(const Mat3& A, const Vec3& omega, const Vec3& v) {
    Vec12 qd;
    for (int c = 0; c < 3; ++c) qd.segment<3>(3 * c) = omega.cross(A.col(c));
    qd.segment<3>(9) = v;
    return qd;
}

}  // namespace mabd::testing
