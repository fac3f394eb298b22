#include "mabd/oracles.hpp"

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace mabd::oracles {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_modulus(double kappa) {
    if (!(kappa >= 0.0 && kappa < 1.0)) throw Error(ErrorCode::OutOfDomain, "elliptic modulus must lie in [0, 1)");
}

// Gauss-Legendre nodes and weights on [0, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = z;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0;
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
}

Mat12 block_rotation(const Mat3& R) {
    Mat12 B = Mat12::Zero();
    for (int k = 0; k < 4; ++k) B.block<3, 3>(3 * k, 3 * k) = R;
    return B;
}

Mat12 dense_body_hessian(const KKTBody& body) {
    const Mat12 local = body.model->mass / (body.h * body.h) + body.model->stiffness;
    const Mat12 B = block_rotation(body.R);
    return B * local * B.transpose();
}

}  // namespace

double elliptic_K(double kappa) {
    check_modulus(kappa);
    double a = 1.0;
    double b = std::sqrt((1.0 - kappa) * (1.0 + kappa));
    for (int i = 0; i < 64 && std::abs(a - b) > 1e-16 * a; ++i) {
        const double an = 0.5 * (a + b);
        b = std::sqrt(a * b);
        a = an;
    }
    return kPi / (2.0 * a);
}

double jacobi_sn(double u, double kappa) {
    check_modulus(kappa);
    if (kappa == 0.0) return std::sin(u);
    std::vector<double> a{1.0};
    std::vector<double> c{kappa};
    double b = std::sqrt((1.0 - kappa) * (1.0 + kappa));
    while (std::abs(c.back()) > 1e-16 && a.size() < 64) {
        const double an = 0.5 * (a.back() + b);
        const double cn = 0.5 * (a.back() - b);
        b = std::sqrt(a.back() * b);
        a.push_back(an);
        c.push_back(cn);
    }
    const int N = static_cast<int>(a.size()) - 1;
    double phi = std::ldexp(a[N] * u, N);
    for (int n = N; n >= 1; --n) phi = 0.5 * (phi + std::asin(c[n] / a[n] * std::sin(phi)));
    return std::sin(phi);
}

EllipticPendulum make_pendulum(double mass, double gravity, double com_distance, double inertia_pivot,
                               double release_angle) {
    EllipticPendulum p;
    p.mass = mass;
    p.gravity = gravity;
    p.length = com_distance;
    p.inertia_pivot = inertia_pivot;
    p.kappa = std::sin(0.5 * release_angle);
    p.omega_lin = std::sqrt(mass * gravity * com_distance / inertia_pivot);
    return p;
}

double pendulum_theta(double t, const EllipticPendulum& p) {
    const double K = elliptic_K(p.kappa);
    return 0.5 * kPi - 2.0 * std::asin(p.kappa * jacobi_sn(K - p.omega_lin * t, p.kappa));
}

double pendulum_period(const EllipticPendulum& p) { return 4.0 * elliptic_K(p.kappa) / p.omega_lin; }

namespace {

struct RigidRate {
    Eigen::Vector4d dq;  // quaternion rate (w, x, y, z)
    Vec3 dx, dv, dw;
};

RigidRate rigid_rate(const RigidReference& s, const WrenchField& wrench, double t) {
    RigidRate r;
    const SpatialWrench W = wrench ? wrench(t, s) : SpatialWrench{};
    const Eigen::Quaterniond omega_q(0.0, s.omega_body.x(), s.omega_body.y(), s.omega_body.z());
    const Eigen::Quaterniond qd = s.rotation * omega_q;
    r.dq << 0.5 * qd.w(), 0.5 * qd.x(), 0.5 * qd.y(), 0.5 * qd.z();
    const Vec3 tau_body = s.R().transpose() * W.tau;
    const Vec3 Iw = s.inertia_body * s.omega_body;
    r.dw = s.inertia_body.ldlt().solve(tau_body - s.omega_body.cross(Iw));
    if (s.pinned) {
        r.dx.setZero();
        r.dv.setZero();
    } else {
        r.dx = s.velocity;
        r.dv = W.f / s.mass;
    }
    return r;
}

RigidReference advance(const RigidReference& s, const RigidRate& r, double h) {
    RigidReference out = s;
    out.rotation.coeffs() += h * Eigen::Vector4d(r.dq(1), r.dq(2), r.dq(3), r.dq(0));
    out.position += h * r.dx;
    out.velocity += h * r.dv;
    out.omega_body += h * r.dw;
    return out;
}

}  // namespace

RigidReference rk4_rigid_step(const RigidReference& s, const WrenchField& wrench, double t, double h) {
    const RigidRate k1 = rigid_rate(s, wrench, t);
    const RigidRate k2 = rigid_rate(advance(s, k1, 0.5 * h), wrench, t + 0.5 * h);
    const RigidRate k3 = rigid_rate(advance(s, k2, 0.5 * h), wrench, t + 0.5 * h);
    const RigidRate k4 = rigid_rate(advance(s, k3, h), wrench, t + h);
    RigidRate sum;
    sum.dq = (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq) / 6.0;
    sum.dx = (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx) / 6.0;
    sum.dv = (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv) / 6.0;
    sum.dw = (k1.dw + 2.0 * k2.dw + 2.0 * k3.dw + k4.dw) / 6.0;
    RigidReference out = advance(s, sum, h);
    out.rotation.normalize();
    return out;
}

DenseKKTResult dense_kkt_solve(const KKTProblem& problem) {
    const int M = static_cast<int>(problem.bodies.size());
    int nd = 0;
    for (const auto& jt : problem.joints) nd += static_cast<int>(jt.rhs.size());
    const int n = 12 * M + nd;
    MatX Kmat = MatX::Zero(n, n);
    VecX rhs = VecX::Zero(n);
    for (int j = 0; j < M; ++j) {
        Kmat.block<12, 12>(12 * j, 12 * j) = dense_body_hessian(problem.bodies[j]);
        rhs.segment<12>(12 * j) = problem.bodies[j].f;
    }
    int off = 12 * M;
    for (const auto& jt : problem.joints) {
        const int c = static_cast<int>(jt.rhs.size());
        Kmat.block(off, 12 * jt.a, c, 12) = jt.grad_a;
        Kmat.block(12 * jt.a, off, 12, c) = jt.grad_a.transpose();
        if (jt.b >= 0) {
            Kmat.block(off, 12 * jt.b, c, 12) = jt.grad_b;
            Kmat.block(12 * jt.b, off, 12, c) = jt.grad_b.transpose();
        }
        rhs.segment(off, c) = jt.rhs;
        off += c;
    }
    // Symmetric Ruiz equilibration: stiffness and gradient entries differ by many orders of magnitude.
    VecX scale = VecX::Ones(n);
    MatX scaled = Kmat;
    for (int pass = 0; pass < 20; ++pass) {
        VecX d(n);
        for (int i = 0; i < n; ++i) {
            const double m = scaled.row(i).cwiseAbs().maxCoeff();
            d(i) = m > 0.0 ? 1.0 / std::sqrt(m) : 1.0;
        }
        scaled = d.asDiagonal() * scaled * d.asDiagonal();
        scale = scale.cwiseProduct(d);
        if ((d.array() - 1.0).abs().maxCoeff() < 1e-3) break;
    }
    Eigen::FullPivLU<MatX> lu(scaled);
    if (!lu.isInvertible()) throw Error(ErrorCode::SingularKKT, "global KKT matrix is singular");
    const VecX x = scale.asDiagonal() * lu.solve(VecX(scale.asDiagonal() * rhs));
    DenseKKTResult res;
    res.relative_residual = (Kmat * x - rhs).norm() / std::max(rhs.norm(), 1e-300);
    for (int j = 0; j < M; ++j) res.solution.dq.push_back(x.segment<12>(12 * j));
    off = 12 * M;
    for (const auto& jt : problem.joints) {
        const int c = static_cast<int>(jt.rhs.size());
        res.solution.dlambda.push_back(x.segment(off, c));
        off += c;
    }
    return res;
}

MatX dense_dual_matrix(const KKTProblem& problem) {
    const int M = static_cast<int>(problem.bodies.size());
    int nd = 0;
    for (const auto& jt : problem.joints) nd += static_cast<int>(jt.rhs.size());
    MatX G = MatX::Zero(nd, 12 * M);
    MatX Hinv = MatX::Zero(12 * M, 12 * M);
    for (int j = 0; j < M; ++j) Hinv.block<12, 12>(12 * j, 12 * j) = dense_body_hessian(problem.bodies[j]).inverse();
    int off = 0;
    for (const auto& jt : problem.joints) {
        const int c = static_cast<int>(jt.rhs.size());
        G.block(off, 12 * jt.a, c, 12) = jt.grad_a;
        if (jt.b >= 0) G.block(off, 12 * jt.b, c, 12) = jt.grad_b;
        off += c;
    }
    return G * Hinv * G.transpose();
}

MatX finite_difference_jacobian(const std::function<VecX(const VecX&)>& fn, const VecX& x, double step) {
    const VecX f0 = fn(x);
    MatX J(f0.size(), x.size());
    for (int i = 0; i < x.size(); ++i) {
        VecX xp = x;
        VecX xm = x;
        xp(i) += step;
        xm(i) -= step;
        J.col(i) = (fn(xp) - fn(xm)) / (2.0 * step);
    }
    return J;
}

VecX finite_difference_gradient(const std::function<double(const VecX&)>& fn, const VecX& x, double step) {
    VecX g(x.size());
    for (int i = 0; i < x.size(); ++i) {
        VecX xp = x;
        VecX xm = x;
        xp(i) += step;
        xm(i) -= step;
        g(i) = (fn(xp) - fn(xm)) / (2.0 * step);
    }
    return g;
}

MassMoments quadrature_tet_moments(const std::array<Vec3, 4>& v, int n) {
    std::vector<double> x, w;
    gauss_legendre(n, x, w);
    Mat3 edges;
    for (int i = 0; i < 3; ++i) edges.col(i) = v[i + 1] - v[0];
    const double jac = std::abs(edges.determinant());
    MassMoments m;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            for (int k = 0; k < n; ++k) {
                const double u = x[i], s = x[j], r = x[k];
                const Vec3 xi(u, s * (1.0 - u), r * (1.0 - u) * (1.0 - s));
                const double weight = w[i] * w[j] * w[k] * (1.0 - u) * (1.0 - u) * (1.0 - s) * jac;
                const Vec3 p = v[0] + edges * xi;
                m.volume += weight;
                m.first += weight * p;
                m.second += weight * p * p.transpose();
            }
        }
    }
    return m;
}

double orthogonality_energy(const BodyModel& model, const AffineState& state, double stiffness) {
    const Mat3 A = state.A();
    return stiffness * model.volume * (A * A.transpose() - Mat3::Identity()).squaredNorm();
}

Vec12 orthogonality_gradient(const BodyModel& model, const AffineState& state, double stiffness) {
    const Mat3 A = state.A();
    const Mat3 E = A * A.transpose() - Mat3::Identity();
    const Mat3 G = 4.0 * stiffness * model.volume * E * A;
    Vec12 g = Vec12::Zero();
    g.head<9>() = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(G.data());
    return g;
}

Mat12 orthogonality_hessian(const BodyModel& model, const AffineState& state, double stiffness, bool project_psd) {
    const Mat3 A = state.A();
    const Mat3 E = A * A.transpose() - Mat3::Identity();
    Eigen::Matrix<double, 9, 9> H9;
    for (int l = 0; l < 9; ++l) {
        Mat3 dA = Mat3::Zero();
        dA(l % 3, l / 3) = 1.0;
        const Mat3 dG = 4.0 * ((dA * A.transpose() + A * dA.transpose()) * A + E * dA);
        H9.col(l) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(dG.data());
    }
    H9 = 0.5 * (H9 + H9.transpose()).eval();
    if (project_psd) {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> es(H9);
        const Eigen::Matrix<double, 9, 1> lam = es.eigenvalues().cwiseMax(0.0);
        H9 = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    }
    Mat12 H = Mat12::Zero();
    H.topLeftCorner<9, 9>() = stiffness * model.volume * H9;
    return H;
}

AffineState vanilla_abd_step(const BodyModel& model, const AffineState& state, const Vec12& f_ext, double h,
                             const VanillaAbdSettings& settings) {
    AffineState next = state;
    const Vec12 predicted = state.q + h * state.qdot;
    for (int it = 0; it < settings.iterations; ++it) {
        const Mat12 H = model.mass / (h * h) + orthogonality_hessian(model, next, settings.stiffness, settings.project_psd);
        const Vec12 f = -model.mass * (next.q - predicted) / (h * h) + f_ext -
                        orthogonality_gradient(model, next, settings.stiffness);
        Eigen::LDLT<Mat12> ldlt(H);
        next.q += ldlt.solve(f);
    }
    next.qdot = (next.q - state.q) / h;
    return next;
}

}  // namespace mabd::oracles
