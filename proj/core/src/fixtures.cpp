#include "mabd/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include <Eigen/Geometry>

namespace mabd::fixtures {

namespace {

constexpr double kPi = 3.14159265358979323846;

BodyDescription box_body(const Vec3& size, const Vec3& center, const std::string& name) {
    BodyDescription b;
    b.name = name;
    b.geometry.kind = GeometryKind::Box;
    b.geometry.size = size;
    b.material = stiff_material();
    b.position = center;
    return b;
}

JointAuthoring joint(JointKind kind, int a, int b, const Vec3& point, const Vec3& axis = Vec3::UnitZ(),
                     const Vec3& axis2 = Vec3::UnitY()) {
    JointAuthoring j;
    j.kind = kind;
    j.body_a = a;
    j.body_b = b;
    j.point = point;
    j.axis = axis;
    j.axis2 = axis2;
    return j;
}

int steps_for(double duration, double h) { return static_cast<int>(std::llround(duration / h)); }

// Six positively oriented tets filling an axis-aligned box.
void append_box(TetMesh& mesh, const Vec3& lo, const Vec3& hi) {
    const int base = static_cast<int>(mesh.vertices.size());
    for (int k = 0; k < 2; ++k) {
        for (int j = 0; j < 2; ++j) {
            for (int i = 0; i < 2; ++i) {
                mesh.vertices.emplace_back(i ? hi.x() : lo.x(), j ? hi.y() : lo.y(), k ? hi.z() : lo.z());
            }
        }
    }
    const int axes[6][2] = {{1, 2}, {1, 4}, {2, 1}, {2, 4}, {4, 1}, {4, 2}};
    for (const auto& p : axes) {
        std::array<int, 4> tet{base, base + p[0], base + p[0] + p[1], base + 7};
        Mat3 e;
        for (int c = 0; c < 3; ++c) e.col(c) = mesh.vertices[tet[c + 1]] - mesh.vertices[tet[0]];
        if (e.determinant() < 0.0) std::swap(tet[1], tet[2]);
        mesh.tets.push_back(tet);
    }
}

Vec3 random_unit(std::mt19937& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v(n(rng), n(rng), n(rng));
    while (v.norm() < 1e-3) v = Vec3(n(rng), n(rng), n(rng));
    return v.normalized();
}

Vec3 orthogonal_unit(const Vec3& a, std::mt19937& rng) {
    Vec3 v = random_unit(rng);
    v -= a * a.dot(v);
    while (v.norm() < 1e-3) {
        v = random_unit(rng);
        v -= a * a.dot(v);
    }
    return v.normalized();
}

JointAuthoring random_joint(int a, int b, const Vec3& point, std::mt19937& rng) {
    std::uniform_int_distribution<int> pick(0, 3);
    const JointKind kinds[4] = {JointKind::Ball, JointKind::Hinge, JointKind::Universal, JointKind::Prismatic};
    const Vec3 axis = random_unit(rng);
    return joint(kinds[pick(rng)], a, b, point, axis, orthogonal_unit(axis, rng));
}

}  // namespace

unsigned seed_from_env(unsigned fallback) {
    if (const char* s = std::getenv("M_ABD_SEED")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(s, &end, 10);
        if (end != s) return static_cast<unsigned>(v);
    }
    return fallback;
}

Material stiff_material() {
    Material m;
    m.density = 1000.0;
    m.youngs = 1e9;
    m.poisson = 0.3;
    return m;
}

SceneDescription cube_momentum(double h) {
    SceneDescription s;
    s.name = "cube_momentum";
    BodyDescription cube = box_body(Vec3::Constant(0.1), Vec3::Zero(), "cube");
    cube.from_momentum = true;
    cube.momentum = Vec3(100.0, 0.0, 0.0);
    cube.angular_momentum = Vec3(0.0, 100.0, 0.0);
    s.bodies.push_back(cube);
    s.gravity = Vec3::Zero();
    s.integrator.h = h;
    s.integrator.steps = 1000;
    return s;
}

SceneDescription pendulum(double h, double duration) {
    const PendulumGeometry g;
    SceneDescription s;
    s.name = "pendulum";
    s.bodies.push_back(box_body(g.size, g.pivot + Vec3(0.5 * g.size.x(), 0.0, 0.0), "bar"));
    s.joints.push_back(joint(JointKind::Hinge, 0, kWorld, g.pivot, Vec3::UnitZ()));
    s.integrator.h = h;
    s.integrator.steps = steps_for(duration, h);
    return s;
}

TetMesh t_handle_mesh() {
    TetMesh mesh;
    append_box(mesh, Vec3(-0.01, -0.10, -0.01), Vec3(0.01, 0.04, 0.01));  // stem
    append_box(mesh, Vec3(-0.06, 0.04, -0.01), Vec3(0.06, 0.06, 0.01));   // bar
    const MassMoments m = tet_mesh_moments(mesh);
    const Vec3 com = m.first / m.volume;
    for (auto& v : mesh.vertices) v -= com;
    return mesh;
}

THandleSetup t_handle_setup() {
    const MassMoments m = tet_mesh_moments(t_handle_mesh());
    const Mat3 c = m.second - m.first * m.first.transpose() / m.volume;
    const Vec3 moments = (c.trace() * Mat3::Identity() - c).diagonal();
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) { return moments(a) < moments(b); });
    THandleSetup setup;
    setup.intermediate_axis = order[1];
    setup.perturbed_axis = order[2];
    return setup;
}

SceneDescription t_handle(double h, double duration) {
    const THandleSetup setup = t_handle_setup();
    SceneDescription s;
    s.name = "t_handle";
    BodyDescription body;
    body.name = "t_handle";
    body.geometry.kind = GeometryKind::Mesh;
    body.geometry.mesh = t_handle_mesh();
    body.material = stiff_material();
    body.omega = setup.spin * Vec3::Unit(setup.intermediate_axis) + setup.perturbation * Vec3::Unit(setup.perturbed_axis);
    s.bodies.push_back(body);
    s.gravity = Vec3::Zero();
    s.integrator.h = h;
    s.integrator.steps = steps_for(duration, h);
    return s;
}

SceneDescription heavy_top(double h, double duration) {
    const HeavyTopGeometry g;
    SceneDescription s;
    s.name = "heavy_top";
    BodyDescription disk;
    disk.name = "top";
    disk.geometry.kind = GeometryKind::Cylinder;
    disk.geometry.radius = g.radius;
    disk.geometry.height = g.thickness;
    disk.material = stiff_material();
    const Mat3 R = Eigen::AngleAxisd(g.tilt, Vec3::UnitX()).toRotationMatrix();
    disk.A = R;
    disk.position = R * Vec3(0.0, g.pivot_offset, 0.0);
    disk.omega = g.spin * (R * Vec3::UnitY());
    s.bodies.push_back(disk);
    AnchorDescription pivot;
    pivot.body = 0;
    pivot.point = Vec3::Zero();
    s.anchors.push_back(pivot);
    s.integrator.h = h;
    s.integrator.steps = steps_for(duration, h);
    return s;
}

SceneDescription chain(int links, double h, JointKind kind) {
    if (links < 1) throw Error(ErrorCode::ValidationError, "chain needs at least one link");
    SceneDescription s;
    s.name = "chain";
    const double len = 0.2;
    for (int i = 0; i < links; ++i) {
        s.bodies.push_back(box_body(Vec3(len, 0.04, 0.04), Vec3(len * i + 0.5 * len, 0.0, 0.0), "link" + std::to_string(i)));
    }
    AnchorDescription root;
    root.body = 0;
    s.anchors.push_back(root);
    const Vec3 axis = kind == JointKind::Prismatic ? Vec3::UnitX() : Vec3::UnitZ();
    for (int i = 1; i < links; ++i) s.joints.push_back(joint(kind, i - 1, i, Vec3(len * i, 0.0, 0.0), axis, Vec3::UnitY()));
    s.integrator.h = h;
    s.integrator.steps = 100;
    return s;
}

SceneDescription two_link_pendulum(double h) {
    SceneDescription s;
    s.name = "two_link_pendulum";
    s.bodies.push_back(box_body(Vec3(0.1, 0.1, 0.1), Vec3::Zero(), "base"));
    s.bodies.push_back(box_body(Vec3(0.4, 0.04, 0.04), Vec3(0.25, 0.0, 0.0), "arm"));
    AnchorDescription base;
    base.body = 0;
    base.full = true;
    s.anchors.push_back(base);
    s.joints.push_back(joint(JointKind::Hinge, 0, 1, Vec3(0.05, 0.0, 0.0), Vec3::UnitZ()));
    s.integrator.h = h;
    s.integrator.steps = 1000;
    return s;
}

SceneDescription random_tree(int bodies, unsigned seed, double h) {
    std::mt19937 rng(seed);
    SceneDescription s;
    s.name = "random_tree";
    std::vector<Vec3> centers{Vec3::Zero()};
    s.bodies.push_back(box_body(Vec3::Constant(0.08), Vec3::Zero(), "body0"));
    AnchorDescription root;
    root.body = 0;
    s.anchors.push_back(root);
    for (int i = 1; i < bodies; ++i) {
        std::uniform_int_distribution<int> parent_pick(0, i - 1);
        const int parent = parent_pick(rng);
        const Vec3 c = centers[parent] + 0.2 * random_unit(rng);
        centers.push_back(c);
        s.bodies.push_back(box_body(Vec3::Constant(0.08), c, "body" + std::to_string(i)));
        s.joints.push_back(joint(JointKind::Ball, parent, i, 0.5 * (centers[parent] + c)));
    }
    s.integrator.h = h;
    s.integrator.steps = 100;
    return s;
}

SceneDescription ring(int bodies, double h) {
    if (bodies < 3) throw Error(ErrorCode::ValidationError, "ring needs at least three bodies");
    SceneDescription s;
    s.name = "ring";
    const double radius = 0.2 * bodies / (2.0 * kPi);
    std::vector<Vec3> centers;
    for (int i = 0; i < bodies; ++i) {
        const double a = 2.0 * kPi * i / bodies;
        centers.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
        s.bodies.push_back(box_body(Vec3::Constant(0.08), centers.back(), "body" + std::to_string(i)));
    }
    for (int i = 0; i < bodies; ++i) {
        const int j = (i + 1) % bodies;
        s.joints.push_back(joint(JointKind::Ball, i, j, 0.5 * (centers[i] + centers[j])));
    }
    AnchorDescription pin;
    pin.body = 0;
    pin.point = centers[0];
    s.anchors.push_back(pin);
    s.integrator.h = h;
    s.integrator.steps = 100;
    return s;
}

SceneDescription net(int cells, double h) {
    if (cells < 1) throw Error(ErrorCode::ValidationError, "net needs at least one cell");
    const int n = cells + 1;
    SceneDescription s;
    s.name = "net";
    const double spacing = 0.1;
    auto id = [n](int i, int k) { return k * n + i; };
    // vertical x-y plane, row 0 on top
    auto center = [&](int i, int k) { return Vec3(spacing * i, -spacing * k, 0.0); };
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n; ++i) {
            s.bodies.push_back(box_body(Vec3::Constant(0.06), center(i, k), "knot" + std::to_string(id(i, k))));
        }
    }
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n; ++i) {
            if (i + 1 < n) s.joints.push_back(joint(JointKind::Ball, id(i, k), id(i + 1, k), 0.5 * (center(i, k) + center(i + 1, k))));
            if (k + 1 < n) s.joints.push_back(joint(JointKind::Ball, id(i, k), id(i, k + 1), 0.5 * (center(i, k) + center(i, k + 1))));
        }
    }
    // hung from a rail half a spacing above the top row
    for (int i = 0; i < n; ++i) {
        AnchorDescription pin;
        pin.body = id(i, 0);
        pin.point = center(i, 0) + Vec3(0.0, 0.5 * spacing, 0.0);
        s.anchors.push_back(pin);
    }
    s.integrator.h = h;
    s.integrator.steps = 300;
    return s;
}

namespace {

// Hinge with limits, a limited slider and a universal joint hanging from a fixed base.
SceneDescription mechanism(double h) {
    SceneDescription s;
    s.name = "mechanism";
    s.bodies.push_back(box_body(Vec3::Constant(0.1), Vec3::Zero(), "base"));
    s.bodies.push_back(box_body(Vec3(0.3, 0.04, 0.04), Vec3(0.2, 0.0, 0.0), "arm"));
    s.bodies.push_back(box_body(Vec3(0.2, 0.03, 0.03), Vec3(0.45, 0.0, 0.0), "slider"));
    s.bodies.push_back(box_body(Vec3(0.04, 0.2, 0.04), Vec3(0.55, -0.1, 0.0), "tip"));
    AnchorDescription base;
    base.body = 0;
    base.full = true;
    s.anchors.push_back(base);
    JointAuthoring hinge = joint(JointKind::Hinge, 0, 1, Vec3(0.05, 0.0, 0.0), Vec3::UnitZ());
    hinge.limit = JointLimit{-0.6, 0.6, 0.0};
    s.joints.push_back(hinge);
    JointAuthoring slide = joint(JointKind::Prismatic, 1, 2, Vec3(0.35, 0.0, 0.0), Vec3::UnitX());
    slide.limit = JointLimit{-0.05, 0.05, 0.0};
    s.joints.push_back(slide);
    s.joints.push_back(joint(JointKind::Universal, 2, 3, Vec3(0.55, 0.0, 0.0), Vec3::UnitX(), Vec3::UnitZ()));
    s.integrator.h = h;
    s.integrator.steps = 1000;
    return s;
}

}  // namespace

std::vector<std::string> fixture_names() {
    return {"cube_momentum", "pendulum", "t_handle", "heavy_top", "chain",     "two_link_pendulum",
            "random_tree",   "ring",     "net",      "net100",    "mechanism"};
}

SceneDescription by_name(const std::string& name) {
    if (name == "cube_momentum") return cube_momentum(1e-3);
    if (name == "pendulum") return pendulum(1e-3);
    if (name == "t_handle") return t_handle(1e-3, 20.0);
    if (name == "heavy_top") return heavy_top(1e-3, 3.0);
    if (name == "chain") return chain(10, 1e-3);
    if (name == "two_link_pendulum") return two_link_pendulum(1e-3);
    if (name == "random_tree") return random_tree(15, seed_from_env(), 1e-3);
    if (name == "ring") return ring(8, 1e-3);
    if (name == "net") return net(10, 1.0 / 30.0);
    if (name == "net100") {
        SceneDescription s = net(100, 1.0 / 30.0);
        s.integrator.steps = 3;
        return s;
    }
    if (name == "mechanism") return mechanism(1e-3);
    throw Error(ErrorCode::ValidationError, "unknown fixture '" + name + "'");
}

RandomInstance random_instance(InstanceShape shape, int bodies, std::mt19937& rng) {
    const double h = 1e-3;
    SceneDescription s;
    switch (shape) {
        case InstanceShape::Chain: {
            s.name = "random_chain";
            Vec3 c = Vec3::Zero();
            std::vector<Vec3> centers;
            for (int i = 0; i < bodies; ++i) {
                if (i > 0) c += 0.2 * random_unit(rng);
                centers.push_back(c);
                s.bodies.push_back(box_body(Vec3(0.1, 0.06, 0.05), c, "body" + std::to_string(i)));
            }
            AnchorDescription root;
            root.body = 0;
            s.anchors.push_back(root);
            for (int i = 1; i < bodies; ++i) s.joints.push_back(random_joint(i - 1, i, 0.5 * (centers[i - 1] + centers[i]), rng));
            break;
        }
        case InstanceShape::Tree: {
            s = random_tree(bodies, rng(), h);
            for (auto& j : s.joints) {
                const JointAuthoring r = random_joint(j.body_a, j.body_b, j.point, rng);
                j = r;
            }
            break;
        }
        case InstanceShape::Loop: s = ring(std::max(bodies, 3), h); break;
        case InstanceShape::Net: s = net(std::max(1, static_cast<int>(std::lround(std::sqrt(bodies))) - 1), h); break;
    }
    s.integrator.h = h;

    RandomInstance inst;
    inst.simulator = std::make_unique<Simulator>(s);
    Simulator& sim = *inst.simulator;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& st : sim.mutable_states()) {
        const Vec3 w(u(rng), u(rng), u(rng));
        Mat3 strain;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) strain(r, c) = u(rng);
        }
        strain = 0.5 * (strain + strain.transpose()).eval();
        const Mat3 A = Eigen::AngleAxisd(0.05 * w.norm(), w.normalized()).toRotationMatrix() *
                       (Mat3::Identity() + 1e-4 * strain) * st.A();
        st.set_A(A);
        st.set_t(st.t() + 0.005 * Vec3(u(rng), u(rng), u(rng)));
    }
    std::vector<Vec12> forces(sim.models().size());
    for (std::size_t j = 0; j < forces.size(); ++j) {
        Vec12 x;
        for (int k = 0; k < 12; ++k) x(k) = 1e-3 * u(rng);
        forces[j] = sim.models()[j].hbar(h) * x;
    }
    const Island& island = sim.islands().front();
    inst.problem = sim.island_problem(island, forces);
    inst.topology = island.topology;
    return inst;
}

}  // namespace mabd::fixtures
