#include "mabd/corotated_body.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace mabd {

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat3 central_second_moment(const MassMoments& m) {
    const Vec3 c = m.first / m.volume;
    return m.second - m.volume * c * c.transpose();
}

Mat34 default_control_tet(const MassMoments& m) {
    const Vec3 c = m.first / m.volume;
    Eigen::SelfAdjointEigenSolver<Mat3> es(central_second_moment(m));
    Mat3 axes = es.eigenvectors();
    if (axes.determinant() < 0.0) axes.col(2) = -axes.col(2);
    Mat34 ct;
    ct.col(0) = c;
    for (int i = 0; i < 3; ++i) ct.col(i + 1) = c + axes.col(i);
    return ct;
}

double principal_extent(const MassMoments& m) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(central_second_moment(m));
    return std::sqrt(12.0 * es.eigenvalues().maxCoeff() / m.volume);
}

// Ψ(F) = mu |sym(F) - I|^2 + lambda/2 tr(F - I)^2 and its first Piola stress.
Mat3 linear_stress(const Mat3& F, double mu, double lambda) {
    return mu * (F + F.transpose() - 2.0 * Mat3::Identity()) + lambda * (F.trace() - 3.0) * Mat3::Identity();
}

double linear_energy_density(const Mat3& F, double mu, double lambda) {
    const Mat3 eps = 0.5 * (F + F.transpose()) - Mat3::Identity();
    const double tr = eps.trace();
    return mu * eps.squaredNorm() + 0.5 * lambda * tr * tr;
}

Vec12 pack_A_gradient(const Mat3& P, double volume) {
    Vec12 g = Vec12::Zero();
    g.head<9>() = volume * Eigen::Map<const Eigen::Matrix<double, 9, 1>>(P.data());
    return g;
}

}  // namespace

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::DegenerateMesh: return "DegenerateMesh";
        case ErrorCode::NonSPD: return "NonSPD";
        case ErrorCode::NearSingular: return "NearSingular";
        case ErrorCode::StaleFactor: return "StaleFactor";
        case ErrorCode::DegenerateCT: return "DegenerateCT";
        case ErrorCode::AntiParallelAxis: return "AntiParallelAxis";
        case ErrorCode::WrongBodies: return "WrongBodies";
        case ErrorCode::NoLimitDefined: return "NoLimitDefined";
        case ErrorCode::EmptyScene: return "EmptyScene";
        case ErrorCode::SingularDiagonalBlock: return "SingularDiagonalBlock";
        case ErrorCode::SingularD: return "SingularD";
        case ErrorCode::NotATree: return "NotATree";
        case ErrorCode::SingularSchur: return "SingularSchur";
        case ErrorCode::NotConverged: return "NotConverged";
        case ErrorCode::SingularKKT: return "SingularKKT";
        case ErrorCode::OutOfDomain: return "OutOfDomain";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::ValidationError: return "ValidationError";
        case ErrorCode::SolverFailure: return "SolverFailure";
    }
    return "Unknown";
}

Vec12 AffineState::rest_q() {
    Vec12 q = Vec12::Zero();
    q(0) = q(4) = q(8) = 1.0;
    return q;
}

AffineState AffineState::from_pose(const Mat3& A, const Vec3& t) {
    AffineState s;
    s.set_A(A);
    s.set_t(t);
    return s;
}

Mat3 AffineState::A() const { return Eigen::Map<const Mat3>(q.data()); }

void AffineState::set_A(const Mat3& A) { Eigen::Map<Mat3>(q.data()) = A; }

MassMoments tet_mesh_moments(const TetMesh& mesh) {
    if (mesh.tets.empty()) throw Error(ErrorCode::DegenerateMesh, "mesh has no tetrahedra");
    MassMoments m;
    const int nv = static_cast<int>(mesh.vertices.size());
    for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
        const auto& tet = mesh.tets[e];
        for (int idx : tet) {
            if (idx < 0 || idx >= nv) throw Error(ErrorCode::DegenerateMesh, "tet index out of range");
        }
        const Vec3& v0 = mesh.vertices[tet[0]];
        Mat3 edges;
        for (int i = 0; i < 3; ++i) edges.col(i) = mesh.vertices[tet[i + 1]] - v0;
        const double vol = edges.determinant() / 6.0;
        if (!(vol > 0.0)) {
            throw Error(ErrorCode::DegenerateMesh, "tet " + std::to_string(e) + " has non-positive volume");
        }
        Vec3 sum = Vec3::Zero();
        Mat3 outer = Mat3::Zero();
        for (int idx : tet) {
            sum += mesh.vertices[idx];
            outer += mesh.vertices[idx] * mesh.vertices[idx].transpose();
        }
        m.volume += vol;
        m.first += vol * sum / 4.0;
        m.second += vol / 20.0 * (outer + sum * sum.transpose());
    }
    return m;
}

MassMoments box_moments(const Vec3& size) {
    if (!(size.minCoeff() > 0.0)) throw Error(ErrorCode::DegenerateMesh, "box dimensions must be positive");
    MassMoments m;
    m.volume = size.prod();
    m.second = (m.volume / 12.0) * size.cwiseProduct(size).asDiagonal();
    return m;
}

MassMoments cylinder_moments(double radius, double height) {
    if (!(radius > 0.0 && height > 0.0)) throw Error(ErrorCode::DegenerateMesh, "cylinder dimensions must be positive");
    MassMoments m;
    m.volume = kPi * radius * radius * height;
    const double radial = m.volume * radius * radius / 4.0;
    m.second.diagonal() << radial, m.volume * height * height / 12.0, radial;
    return m;
}

MassMoments capsule_moments(double radius, double cylinder_length) {
    if (!(radius > 0.0 && cylinder_length >= 0.0)) {
        throw Error(ErrorCode::DegenerateMesh, "capsule dimensions must be positive");
    }
    const double vc = kPi * radius * radius * cylinder_length;
    const double vs = 4.0 / 3.0 * kPi * radius * radius * radius;
    const double L = cylinder_length;
    MassMoments m;
    m.volume = vc + vs;
    const double radial = vc * radius * radius / 4.0 + vs * radius * radius / 5.0;
    const double axial = vc * L * L / 12.0 + vs * (L * L / 4.0 + radius * radius / 5.0) + L * vs * 3.0 * radius / 8.0;
    m.second.diagonal() << radial, axial, radial;
    return m;
}

HessianFactor::HessianFactor(const Mat12& hbar, double h) : llt_(hbar), h_(h), valid_(true) {
    if (llt_.info() != Eigen::Success) throw Error(ErrorCode::NonSPD, "Hbar factorization failed");
    // LLT does not flag every indefinite input; check the pivots explicitly.
    for (int i = 0; i < 12; ++i) {
        const double d = llt_.matrixLLT()(i, i);
        if (!(d > 0.0) || !std::isfinite(d)) throw Error(ErrorCode::NonSPD, "Hbar is not positive definite");
    }
}

Vec12 HessianFactor::solve(const Vec12& rhs, double h) const {
    if (!valid_) throw Error(ErrorCode::StaleFactor, "Hbar factor not built");
    if (h != h_) {
        throw Error(ErrorCode::StaleFactor, "factor built for h=" + std::to_string(h_) + " used with h=" + std::to_string(h));
    }
    return llt_.solve(rhs);
}

Mat3 BodyModel::rest_inertia() const {
    const double rho = material.density;
    MassMoments m;
    m.volume = volume;
    m.first = scalar_mass.block<3, 1>(0, 3) / rho;
    m.second = scalar_mass.topLeftCorner<3, 3>() / rho;
    const Mat3 c = rho * central_second_moment(m);
    return c.trace() * Mat3::Identity() - c;
}

BodyModel precompute_body(const TetMesh& mesh, const Material& material, double h,
                          const std::optional<Mat34>& control_tet) {
    return precompute_body(tet_mesh_moments(mesh), material, h, control_tet);
}

BodyModel precompute_body(const MassMoments& moments, const Material& material, double h,
                          const std::optional<Mat34>& control_tet) {
    if (!(moments.volume > 0.0)) throw Error(ErrorCode::DegenerateMesh, "zero volume");
    if (!(material.density > 0.0) || !(material.youngs > 0.0) || !(h > 0.0)) {
        throw Error(ErrorCode::NonSPD, "density, youngs and h must be positive");
    }
    if (!(material.poisson > -1.0 && material.poisson < 0.5)) {
        throw Error(ErrorCode::NonSPD, "poisson ratio must lie in (-1, 0.5)");
    }
    BodyModel model;
    model.material = material;
    model.volume = moments.volume;
    const double rho = material.density;
    model.total_mass = rho * moments.volume;
    model.center_of_mass = moments.first / moments.volume;
    model.length_scale = principal_extent(moments);

    Mat4 mt;
    mt.topLeftCorner<3, 3>() = moments.second;
    mt.block<3, 1>(0, 3) = moments.first;
    mt.block<1, 3>(3, 0) = moments.first.transpose();
    mt(3, 3) = moments.volume;
    model.scalar_mass = rho * mt;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) model.mass.block<3, 3>(3 * i, 3 * j) = model.scalar_mass(i, j) * Mat3::Identity();
    }

    const double mu = material.mu();
    const double lambda = material.lambda();
    Eigen::Matrix<double, 9, 9> transpose_perm = Eigen::Matrix<double, 9, 9>::Zero();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) transpose_perm(3 * c + r, 3 * r + c) = 1.0;
    }
    Eigen::Matrix<double, 9, 1> vec_identity = Eigen::Matrix<double, 9, 1>::Zero();
    vec_identity(0) = vec_identity(4) = vec_identity(8) = 1.0;
    const Eigen::Matrix<double, 9, 9> h_lin =
        mu * (Eigen::Matrix<double, 9, 9>::Identity() + transpose_perm) + lambda * vec_identity * vec_identity.transpose();
    model.stiffness.topLeftCorner<9, 9>() = moments.volume * h_lin;
    model.jbar.topLeftCorner<9, 9>() = moments.volume * Eigen::Matrix<double, 9, 9>::Identity();

    model.rest_ct = control_tet ? *control_tet : default_control_tet(moments);
    Mat3 edges;
    for (int i = 0; i < 3; ++i) edges.col(i) = model.rest_ct.col(i + 1) - model.rest_ct.col(0);
    if (!(std::abs(edges.determinant()) > 1e-12)) throw Error(ErrorCode::DegenerateCT, "control tetrahedron is flat");

    model.hbar_factor = HessianFactor(model.hbar(h), h);
    return model;
}

void refactor(BodyModel& model, double h) {
    if (model.hbar_factor.valid() && model.hbar_factor.h() == h) return;
    model.hbar_factor = HessianFactor(model.hbar(h), h);
}

Mat3 polar_rotation(const Mat3& A) {
    const double det = A.determinant();
    if (!(det > 1e-9)) throw Error(ErrorCode::NearSingular, "det(A) = " + std::to_string(det));
    Eigen::SelfAdjointEigenSolver<Mat3> es(A.transpose() * A);
    const Vec3 ev = es.eigenvalues();
    if (ev(0) < 1e-12) {
        Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 U = svd.matrixU();
        const Mat3 V = svd.matrixV();
        if ((U * V.transpose()).determinant() < 0.0) U.col(2) = -U.col(2);
        return U * V.transpose();
    }
    const Mat3& Q = es.eigenvectors();
    const Vec3 inv_sqrt = ev.cwiseSqrt().cwiseInverse();
    return A * (Q * inv_sqrt.asDiagonal() * Q.transpose());
}

Vec3 length_preserving_rotate(const Mat3& A, const Vec3& a) {
    const double na = a.norm();
    if (na == 0.0) return Vec3::Zero();
    const Vec3 Aa = A * a;
    const double nAa = Aa.norm();
    if (!(nAa > 1e-12)) return Vec3::Zero();
    return (na / nAa) * Aa;
}

Vec12 rotated_solve(const BodyModel& model, const Mat3& R, const Vec12& rhs, double h) {
    Vec12 local;
    for (int k = 0; k < 4; ++k) local.segment<3>(3 * k) = R.transpose() * rhs.segment<3>(3 * k);
    const Vec12 x = model.hbar_factor.solve(local, h);
    Vec12 out;
    for (int k = 0; k < 4; ++k) out.segment<3>(3 * k) = R * x.segment<3>(3 * k);
    return out;
}

Vec12 newton_step_single(const BodyModel& model, const AffineState& state, const Vec12& f_A, double h,
                         bool use_polar) {
    const Mat3 A = state.A();
    if (use_polar) return rotated_solve(model, polar_rotation(A), f_A, h);
    const Mat3 At = A.transpose();
    Vec12 local;
    for (int k = 0; k < 4; ++k) local.segment<3>(3 * k) = length_preserving_rotate(At, f_A.segment<3>(3 * k));
    const Vec12 x = model.hbar_factor.solve(local, h);
    Vec12 out;
    for (int k = 0; k < 4; ++k) out.segment<3>(3 * k) = length_preserving_rotate(A, x.segment<3>(3 * k));
    return out;
}

double elastic_energy(const BodyModel& model, const AffineState& state) {
    const Mat3 A = state.A();
    const Mat3 local = polar_rotation(A).transpose() * A;
    return model.volume * linear_energy_density(local, model.material.mu(), model.material.lambda());
}

Vec12 elastic_gradient(const BodyModel& model, const AffineState& state) {
    return elastic_gradient(model, state, polar_rotation(state.A()));
}

Vec12 elastic_gradient(const BodyModel& model, const AffineState& state, const Mat3& R) {
    const Mat3 local = R.transpose() * state.A();
    return pack_A_gradient(R * linear_stress(local, model.material.mu(), model.material.lambda()), model.volume);
}

double green_strain_energy(const BodyModel& model, const AffineState& state) {
    const Mat3 A = state.A();
    const Mat3 E = 0.5 * (A.transpose() * A - Mat3::Identity());
    const double tr = E.trace();
    return model.volume * (model.material.mu() * E.squaredNorm() + 0.5 * model.material.lambda() * tr * tr);
}

Vec12 green_strain_gradient(const BodyModel& model, const AffineState& state) {
    const Mat3 A = state.A();
    const Mat3 E = 0.5 * (A.transpose() * A - Mat3::Identity());
    const Mat3 S = 2.0 * model.material.mu() * E + model.material.lambda() * E.trace() * Mat3::Identity();
    return pack_A_gradient(A * S, model.volume);
}

Vec6 SpatialTwist::stacked() const {
    Vec6 x;
    x << omega, v;
    return x;
}

SpatialTwist SpatialTwist::from_stacked(const Vec6& x) {
    return SpatialTwist{x.head<3>(), x.tail<3>()};
}

Vec6 SpatialWrench::stacked() const {
    Vec6 x;
    x << tau, f;
    return x;
}

Mat6x12 twist_matrix(const Mat3& A) {
    Mat6x12 G = Mat6x12::Zero();
    for (int i = 0; i < 3; ++i) G.block<3, 3>(0, 3 * i) = 0.5 * skew(A.col(i));
    G.block<3, 3>(3, 9) = Mat3::Identity();
    return G;
}

Mat12x6 embedding_matrix(const Mat3& A) {
    Mat12x6 E = Mat12x6::Zero();
    for (int i = 0; i < 3; ++i) E.block<3, 3>(3 * i, 0) = -skew(A.col(i));
    E.block<3, 3>(9, 3) = Mat3::Identity();
    return E;
}

SpatialTwist twist_map(const AffineState& state) {
    return SpatialTwist::from_stacked(twist_matrix(state.A()) * state.qdot);
}

Vec12 wrench_to_affine(const AffineState& state, const SpatialWrench& W) {
    return twist_matrix(state.A()).transpose() * W.stacked();
}

Vec12 embedding_map(const AffineState& state, const SpatialTwist& V) {
    return embedding_matrix(state.A()) * V.stacked();
}

Mat6 twist_embedding_product(const Mat3& A) { return twist_matrix(A) * embedding_matrix(A); }

Mat6 spatial_inertia(const BodyModel& model, const AffineState& state) {
    const Mat12x6 E = embedding_matrix(state.A());
    return E.transpose() * model.mass * E;
}

Vec12 gyroscopic_residual(const BodyModel& model, const AffineState& state) {
    const Mat3 A = state.A();
    const Mat6x12 G = twist_matrix(A);
    const Mat12x6 E = embedding_matrix(A);
    const Mat6 inertia = E.transpose() * model.mass * E;
    const Vec6 V = G * state.qdot;
    const Vec3 omega = V.head<3>();
    const Vec3 v = V.tail<3>();

    // Rate of the twist basis when the reference point moves with the body.
    Vec6 basis_rate;
    basis_rate << Vec3::Zero(), -omega.cross(v);
    const Vec6 IV = inertia * V;
    Vec6 cross_force;
    cross_force << omega.cross(IV.head<3>()) + v.cross(IV.tail<3>()), omega.cross(IV.tail<3>());
    const Vec6 spatial_term = inertia * basis_rate + cross_force;

    // Velocity-product term the affine inertia carries on its own: E^T M dE/dt V.
    Mat12x6 E_rate = Mat12x6::Zero();
    for (int i = 0; i < 3; ++i) E_rate.block<3, 3>(3 * i, 0) = -skew(state.qdot.segment<3>(3 * i));
    const Vec6 affine_term = E.transpose() * model.mass * (E_rate * V);

    return G.transpose() * (spatial_term - affine_term);
}

Vec3 linear_momentum(const BodyModel& model, const AffineState& state) {
    Vec3 p = Vec3::Zero();
    for (int k = 0; k < 4; ++k) p += model.scalar_mass(3, k) * state.qdot.segment<3>(3 * k);
    return p;
}

Vec3 angular_momentum(const BodyModel& model, const AffineState& state) {
    Vec3 L = Vec3::Zero();
    for (int i = 0; i < 4; ++i) {
        const Vec3 qi = state.q.segment<3>(3 * i);
        Vec3 weighted = Vec3::Zero();
        for (int k = 0; k < 4; ++k) weighted += model.scalar_mass(i, k) * state.qdot.segment<3>(3 * k);
        L += qi.cross(weighted);
    }
    return L;
}

double kinetic_energy(const BodyModel& model, const AffineState& state) {
    return 0.5 * state.qdot.dot(model.mass * state.qdot);
}

SpatialTwist twist_from_momentum(const BodyModel& model, const AffineState& state, const Vec3& p, const Vec3& L) {
    Mat6 map;
    AffineState probe = state;
    for (int c = 0; c < 6; ++c) {
        probe.qdot = embedding_matrix(state.A()) * Vec6::Unit(c);
        map.block<3, 1>(0, c) = linear_momentum(model, probe);
        map.block<3, 1>(3, c) = angular_momentum(model, probe);
    }
    Vec6 target;
    target << p, L;
    return SpatialTwist::from_stacked(map.fullPivLu().solve(target));
}

}  // namespace mabd
