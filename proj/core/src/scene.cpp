#include "mabd/scene.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <json.hpp>

namespace mabd {

namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& message) { throw Error(ErrorCode::ValidationError, message); }

const json* find(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& obj, const char* key, double fallback, const std::string& where) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number()) invalid(where + "." + key + ": expected a number");
    return v->get<double>();
}

int get_int(const json& obj, const char* key, int fallback, const std::string& where) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer()) invalid(where + "." + key + ": expected an integer");
    return v->get<int>();
}

bool get_bool(const json& obj, const char* key, bool fallback, const std::string& where) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_boolean()) invalid(where + "." + key + ": expected true or false");
    return v->get<bool>();
}

Vec3 to_vec3(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 3) invalid(where + ": expected an array of 3 numbers");
    Vec3 out;
    for (int i = 0; i < 3; ++i) {
        if (!v[i].is_number()) invalid(where + ": expected an array of 3 numbers");
        out(i) = v[i].get<double>();
    }
    return out;
}

Vec3 get_vec3(const json& obj, const char* key, const Vec3& fallback, const std::string& where) {
    const json* v = find(obj, key);
    return v ? to_vec3(*v, where + "." + key) : fallback;
}

Mat3 to_mat3(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 3) invalid(where + ": expected 3 rows of 3 numbers");
    Mat3 out;
    for (int r = 0; r < 3; ++r) out.row(r) = to_vec3(v[r], where).transpose();
    return out;
}

json vec_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

json mat_json(const Mat3& m) {
    json rows = json::array();
    for (int r = 0; r < 3; ++r) rows.push_back(vec_json(m.row(r).transpose()));
    return rows;
}

JointKind parse_kind(const std::string& s, const std::string& where) {
    if (s == "ball") return JointKind::Ball;
    if (s == "hinge") return JointKind::Hinge;
    if (s == "universal") return JointKind::Universal;
    if (s == "prismatic") return JointKind::Prismatic;
    if (s == "anchor") return JointKind::Anchor;
    invalid(where + ".kind: unknown joint kind '" + s + "'");
}

std::string kind_key(JointKind kind) {
    switch (kind) {
        case JointKind::Ball: return "ball";
        case JointKind::Hinge: return "hinge";
        case JointKind::Universal: return "universal";
        case JointKind::Prismatic: return "prismatic";
        case JointKind::Anchor: return "anchor";
    }
    return "ball";
}

int parse_body_ref(const json& v, const std::string& where) {
    if (v.is_string() && v.get<std::string>() == "world") return kWorld;
    if (!v.is_number_integer()) invalid(where + ": expected a body index or \"world\"");
    const int id = v.get<int>();
    return id < 0 ? kWorld : id;
}

Geometry parse_geometry(const json& g, const std::string& where) {
    if (!g.is_object()) invalid(where + ": expected an object");
    const json* type = find(g, "type");
    if (!type || !type->is_string()) invalid(where + ".type: missing geometry type");
    const std::string t = type->get<std::string>();
    Geometry geo;
    if (t == "box") {
        geo.kind = GeometryKind::Box;
        geo.size = get_vec3(g, "size", geo.size, where);
    } else if (t == "cylinder") {
        geo.kind = GeometryKind::Cylinder;
        geo.radius = get_number(g, "radius", geo.radius, where);
        geo.height = get_number(g, "height", geo.height, where);
    } else if (t == "capsule") {
        geo.kind = GeometryKind::Capsule;
        geo.radius = get_number(g, "radius", geo.radius, where);
        geo.height = get_number(g, "length", geo.height, where);
    } else if (t == "mesh") {
        geo.kind = GeometryKind::Mesh;
        const json* verts = find(g, "vertices");
        const json* tets = find(g, "tets");
        if (!verts || !verts->is_array() || !tets || !tets->is_array()) invalid(where + ": mesh needs vertices and tets");
        for (std::size_t i = 0; i < verts->size(); ++i) {
            geo.mesh.vertices.push_back(to_vec3((*verts)[i], where + ".vertices[" + std::to_string(i) + "]"));
        }
        for (std::size_t i = 0; i < tets->size(); ++i) {
            const json& tet = (*tets)[i];
            if (!tet.is_array() || tet.size() != 4) invalid(where + ".tets[" + std::to_string(i) + "]: expected 4 indices");
            std::array<int, 4> ids{};
            for (int k = 0; k < 4; ++k) {
                if (!tet[k].is_number_integer()) invalid(where + ".tets[" + std::to_string(i) + "]: expected 4 indices");
                ids[k] = tet[k].get<int>();
            }
            geo.mesh.tets.push_back(ids);
        }
    } else {
        invalid(where + ".type: unknown geometry '" + t + "'");
    }
    return geo;
}

json geometry_json(const Geometry& geo) {
    json g;
    switch (geo.kind) {
        case GeometryKind::Box:
            g["type"] = "box";
            g["size"] = vec_json(geo.size);
            break;
        case GeometryKind::Cylinder:
            g["type"] = "cylinder";
            g["radius"] = geo.radius;
            g["height"] = geo.height;
            break;
        case GeometryKind::Capsule:
            g["type"] = "capsule";
            g["radius"] = geo.radius;
            g["length"] = geo.height;
            break;
        case GeometryKind::Mesh: {
            g["type"] = "mesh";
            json verts = json::array();
            for (const auto& v : geo.mesh.vertices) verts.push_back(vec_json(v));
            json tets = json::array();
            for (const auto& t : geo.mesh.tets) tets.push_back(json::array({t[0], t[1], t[2], t[3]}));
            g["vertices"] = verts;
            g["tets"] = tets;
            break;
        }
    }
    return g;
}

Mat3 axis_angle_matrix(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 4) invalid(where + ": expected [x, y, z, angle]");
    Vec3 axis;
    for (int i = 0; i < 3; ++i) axis(i) = v[i].get<double>();
    if (axis.norm() <= 0.0) invalid(where + ": zero rotation axis");
    return Eigen::AngleAxisd(v[3].get<double>(), axis.normalized()).toRotationMatrix();
}

BodyDescription parse_body(const json& b, const std::string& where) {
    if (!b.is_object()) invalid(where + ": expected an object");
    BodyDescription body;
    if (const json* n = find(b, "name"); n && n->is_string()) body.name = n->get<std::string>();
    const json* geo = find(b, "geometry");
    if (!geo) invalid(where + ".geometry: missing");
    body.geometry = parse_geometry(*geo, where + ".geometry");
    body.material.density = get_number(b, "density", body.material.density, where);
    body.material.youngs = get_number(b, "youngs", body.material.youngs, where);
    body.material.poisson = get_number(b, "poisson", body.material.poisson, where);
    body.position = get_vec3(b, "position", body.position, where);
    if (const json* r = find(b, "rotation")) body.A = to_mat3(*r, where + ".rotation");
    if (const json* aa = find(b, "axis_angle")) body.A = axis_angle_matrix(*aa, where + ".axis_angle");
    if (find(b, "momentum") || find(b, "angular_momentum")) {
        body.from_momentum = true;
        body.momentum = get_vec3(b, "momentum", Vec3::Zero(), where);
        body.angular_momentum = get_vec3(b, "angular_momentum", Vec3::Zero(), where);
    }
    body.omega = get_vec3(b, "omega", body.omega, where);
    body.velocity = get_vec3(b, "velocity", body.velocity, where);
    return body;
}

JointAuthoring parse_joint(const json& j, const std::string& where) {
    if (!j.is_object()) invalid(where + ": expected an object");
    const json* kind = find(j, "kind");
    if (!kind || !kind->is_string()) invalid(where + ".kind: missing joint kind");
    JointAuthoring au;
    au.kind = parse_kind(kind->get<std::string>(), where);
    const json* a = find(j, "body_a");
    if (!a) invalid(where + ".body_a: missing");
    au.body_a = parse_body_ref(*a, where + ".body_a");
    au.body_b = kWorld;
    if (const json* b = find(j, "body_b")) au.body_b = parse_body_ref(*b, where + ".body_b");
    au.point = get_vec3(j, "point", au.point, where);
    au.axis = get_vec3(j, "axis", au.axis, where);
    au.axis2 = get_vec3(j, "axis2", au.axis2, where);
    au.linear = get_bool(j, "linear", false, where);
    au.full_anchor = get_bool(j, "full", false, where);
    if (const json* lim = find(j, "limit")) {
        if (!lim->is_object()) invalid(where + ".limit: expected an object");
        JointLimit limit;
        limit.lower = get_number(*lim, "lower", 0.0, where + ".limit");
        limit.upper = get_number(*lim, "upper", 0.0, where + ".limit");
        limit.stiffness = get_number(*lim, "stiffness", 0.0, where + ".limit");
        au.limit = limit;
    }
    return au;
}

json body_ref_json(int id) { return id == kWorld ? json("world") : json(id); }

const char* solver_key(SolverChoice c) {
    switch (c) {
        case SolverChoice::Auto: return "auto";
        case SolverChoice::Dense: return "dense";
        case SolverChoice::Chain: return "chain";
        case SolverChoice::Aba: return "aba";
        case SolverChoice::Loop: return "loop";
        case SolverChoice::GaussSeidel: return "gs";
    }
    return "auto";
}

double extent_of(const MassMoments& m) {
    const Vec3 c = m.first / m.volume;
    const Mat3 central = m.second - m.volume * c * c.transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(central);
    return std::sqrt(12.0 * std::max(es.eigenvalues().maxCoeff(), 0.0) / m.volume);
}

bool unit_length(const Vec3& v) { return std::abs(v.norm() - 1.0) <= 1e-9; }

}  // namespace

MassMoments geometry_moments(const Geometry& geometry) {
    switch (geometry.kind) {
        case GeometryKind::Box: return box_moments(geometry.size);
        case GeometryKind::Cylinder: return cylinder_moments(geometry.radius, geometry.height);
        case GeometryKind::Capsule: return capsule_moments(geometry.radius, geometry.height);
        case GeometryKind::Mesh: return tet_mesh_moments(geometry.mesh);
    }
    return {};
}

SolverChoice parse_solver_choice(const std::string& name) {
    if (name == "auto") return SolverChoice::Auto;
    if (name == "dense") return SolverChoice::Dense;
    if (name == "chain") return SolverChoice::Chain;
    if (name == "aba") return SolverChoice::Aba;
    if (name == "loop") return SolverChoice::Loop;
    if (name == "gs") return SolverChoice::GaussSeidel;
    invalid("unknown solver '" + name + "' (auto, dense, chain, aba, loop, gs)");
}

SceneDescription load_scene(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, "at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::ParseError, "top level must be an object");

    SceneDescription scene;
    try {
        const json* version = find(doc, "schema_version");
        if (!version) invalid("schema_version: missing");
        if (!version->is_number_integer() || version->get<int>() != 1) invalid("schema_version: only version 1 is supported");
        if (const json* n = find(doc, "name"); n && n->is_string()) scene.name = n->get<std::string>();
        scene.gravity = get_vec3(doc, "gravity", scene.gravity, "scene");

        if (const json* integ = find(doc, "integrator")) {
            const std::string w = "integrator";
            IntegratorSettings& s = scene.integrator;
            s.h = get_number(*integ, "h", s.h, w);
            s.steps = get_int(*integ, "steps", s.steps, w);
            s.newton_iters = get_int(*integ, "newton_iters", s.newton_iters, w);
            s.newton_tol = get_number(*integ, "newton_tol", s.newton_tol, w);
            if (const json* sv = find(*integ, "solver")) {
                if (!sv->is_string()) invalid("integrator.solver: expected a string");
                s.solver = parse_solver_choice(sv->get<std::string>());
            }
            s.use_polar = get_bool(*integ, "use_polar", s.use_polar, w);
            s.gs_tol = get_number(*integ, "gs_tol", s.gs_tol, w);
            s.gs_max_sweeps = get_int(*integ, "gs_max_sweeps", s.gs_max_sweeps, w);
            s.direct_limit = get_int(*integ, "direct_limit", s.direct_limit, w);
            s.constraint_rhs = get_bool(*integ, "constraint_rhs", s.constraint_rhs, w);
            s.max_breakers = get_int(*integ, "max_breakers", s.max_breakers, w);
            s.expand_universal = get_bool(*integ, "expand_universal", s.expand_universal, w);
        }

        const json* bodies = find(doc, "bodies");
        if (!bodies || !bodies->is_array()) invalid("bodies: expected an array");
        for (std::size_t i = 0; i < bodies->size(); ++i) {
            scene.bodies.push_back(parse_body((*bodies)[i], "bodies[" + std::to_string(i) + "]"));
        }
        if (const json* joints = find(doc, "joints")) {
            if (!joints->is_array()) invalid("joints: expected an array");
            for (std::size_t i = 0; i < joints->size(); ++i) {
                scene.joints.push_back(parse_joint((*joints)[i], "joints[" + std::to_string(i) + "]"));
            }
        }
        if (const json* anchors = find(doc, "anchors")) {
            if (!anchors->is_array()) invalid("anchors: expected an array");
            for (std::size_t i = 0; i < anchors->size(); ++i) {
                const json& a = (*anchors)[i];
                const std::string w = "anchors[" + std::to_string(i) + "]";
                if (!a.is_object()) invalid(w + ": expected an object");
                AnchorDescription anchor;
                anchor.body = get_int(a, "body", -1, w);
                anchor.point = get_vec3(a, "point", anchor.point, w);
                anchor.full = get_bool(a, "full", false, w);
                scene.anchors.push_back(anchor);
            }
        }
        if (const json* schedule = find(doc, "schedule")) {
            if (!schedule->is_array()) invalid("schedule: expected an array");
            for (std::size_t i = 0; i < schedule->size(); ++i) {
                const json& e = (*schedule)[i];
                const std::string w = "schedule[" + std::to_string(i) + "]";
                if (!e.is_object()) invalid(w + ": expected an object");
                WrenchEvent ev;
                ev.body = get_int(e, "body", -1, w);
                ev.start = get_number(e, "start", 0.0, w);
                ev.end = get_number(e, "end", 0.0, w);
                ev.wrench.tau = get_vec3(e, "torque", Vec3::Zero(), w);
                ev.wrench.f = get_vec3(e, "force", Vec3::Zero(), w);
                scene.schedule.push_back(ev);
            }
        }
    } catch (const json::exception& e) {
        invalid(std::string("malformed value: ") + e.what());
    }
    validate_scene(scene);
    return scene;
}

SceneDescription load_scene_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open scene file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return load_scene(buffer.str());
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.detail());
    }
}

void validate_scene(const SceneDescription& scene) {
    const IntegratorSettings& s = scene.integrator;
    if (!(s.h > 0.0) || !std::isfinite(s.h)) invalid("integrator.h: time step must be positive");
    if (s.steps < 0) invalid("integrator.steps: must be non-negative");
    if (s.newton_iters < 1) invalid("integrator.newton_iters: must be at least 1");
    if (!(s.gs_tol > 0.0)) invalid("integrator.gs_tol: must be positive");
    if (s.gs_max_sweeps < 1) invalid("integrator.gs_max_sweeps: must be at least 1");
    if (s.max_breakers < 0) invalid("integrator.max_breakers: must be non-negative");
    if (!scene.gravity.allFinite()) invalid("gravity: must be finite");
    if (scene.bodies.empty()) invalid("bodies: scene has no bodies");

    const int n = static_cast<int>(scene.bodies.size());
    for (int i = 0; i < n; ++i) {
        const BodyDescription& b = scene.bodies[i];
        const std::string w = "bodies[" + std::to_string(i) + "]";
        if (!(b.material.density > 0.0)) invalid(w + ".density: must be positive");
        if (!(b.material.youngs > 0.0)) invalid(w + ".youngs: must be positive");
        if (!(b.material.poisson > -1.0 && b.material.poisson < 0.5)) invalid(w + ".poisson: must lie in (-1, 0.5)");
        const Geometry& g = b.geometry;
        switch (g.kind) {
            case GeometryKind::Box:
                if ((g.size.array() <= 0.0).any()) invalid(w + ".geometry.size: extents must be positive");
                break;
            case GeometryKind::Cylinder:
                if (!(g.radius > 0.0 && g.height > 0.0)) invalid(w + ".geometry: radius and height must be positive");
                break;
            case GeometryKind::Capsule:
                if (!(g.radius > 0.0 && g.height >= 0.0)) invalid(w + ".geometry: radius must be positive and length non-negative");
                break;
            case GeometryKind::Mesh: {
                if (g.mesh.tets.empty()) invalid(w + ".geometry: mesh has no tetrahedra");
                const int nv = static_cast<int>(g.mesh.vertices.size());
                for (std::size_t t = 0; t < g.mesh.tets.size(); ++t) {
                    for (int id : g.mesh.tets[t]) {
                        if (id < 0 || id >= nv) invalid(w + ".geometry.tets[" + std::to_string(t) + "]: vertex index out of range");
                    }
                    const auto& tet = g.mesh.tets[t];
                    Mat3 e;
                    for (int k = 0; k < 3; ++k) e.col(k) = g.mesh.vertices[tet[k + 1]] - g.mesh.vertices[tet[0]];
                    if (!(e.determinant() > 0.0)) invalid(w + ".geometry.tets[" + std::to_string(t) + "]: non-positive volume");
                }
                break;
            }
        }
        if (!(b.A.determinant() > 0.0)) invalid(w + ".rotation: initial A must have positive determinant");
        if (!b.position.allFinite() || !b.omega.allFinite() || !b.velocity.allFinite()) invalid(w + ": non-finite initial state");
    }

    auto check_body = [&](int id, bool world_ok, const std::string& where) {
        if (id == kWorld) {
            if (!world_ok) invalid(where + ": the world is not allowed here");
            return;
        }
        if (id < 0 || id >= n) invalid(where + ": unknown body id " + std::to_string(id));
    };
    for (std::size_t k = 0; k < scene.joints.size(); ++k) {
        const JointAuthoring& j = scene.joints[k];
        const std::string w = "joints[" + std::to_string(k) + "] (" + kind_key(j.kind) + ")";
        check_body(j.body_a, false, w + ".body_a");
        check_body(j.body_b, true, w + ".body_b");
        if (j.body_a == j.body_b) invalid(w + ": joint connects a body to itself");
        if (j.kind == JointKind::Anchor && j.body_b != kWorld) invalid(w + ": anchors attach to the world");
        if ((j.kind == JointKind::Hinge || j.kind == JointKind::Prismatic || j.kind == JointKind::Universal) &&
            !unit_length(j.axis)) {
            invalid(w + ": axis is not unit length (norm " + std::to_string(j.axis.norm()) + ")");
        }
        if (j.kind == JointKind::Universal) {
            if (!unit_length(j.axis2)) invalid(w + ": axis2 is not unit length (norm " + std::to_string(j.axis2.norm()) + ")");
            if (std::abs(j.axis.dot(j.axis2)) > 1e-10) invalid(w + ": axes are not orthogonal");
        }
        if (j.limit) {
            if (j.kind != JointKind::Hinge && j.kind != JointKind::Prismatic) invalid(w + ": limits apply to hinge and prismatic joints only");
            if (!(j.limit->lower <= j.limit->upper)) invalid(w + ".limit: lower exceeds upper");
            if (j.limit->stiffness < 0.0) invalid(w + ".limit.stiffness: must be non-negative");
        }
    }
    for (std::size_t k = 0; k < scene.anchors.size(); ++k) {
        check_body(scene.anchors[k].body, false, "anchors[" + std::to_string(k) + "].body");
    }
    for (std::size_t k = 0; k < scene.schedule.size(); ++k) {
        const WrenchEvent& e = scene.schedule[k];
        const std::string w = "schedule[" + std::to_string(k) + "]";
        check_body(e.body, false, w + ".body");
        if (!(e.end >= e.start)) invalid(w + ": end precedes start");
    }
}

std::string scene_to_json(const SceneDescription& scene) {
    json doc;
    doc["schema_version"] = 1;
    if (!scene.name.empty()) doc["name"] = scene.name;
    doc["gravity"] = vec_json(scene.gravity);
    const IntegratorSettings& s = scene.integrator;
    doc["integrator"] = {{"h", s.h},
                         {"steps", s.steps},
                         {"newton_iters", s.newton_iters},
                         {"newton_tol", s.newton_tol},
                         {"solver", solver_key(s.solver)},
                         {"use_polar", s.use_polar},
                         {"gs_tol", s.gs_tol},
                         {"gs_max_sweeps", s.gs_max_sweeps},
                         {"direct_limit", s.direct_limit},
                         {"constraint_rhs", s.constraint_rhs},
                         {"max_breakers", s.max_breakers},
                         {"expand_universal", s.expand_universal}};
    json bodies = json::array();
    for (const auto& b : scene.bodies) {
        json jb;
        if (!b.name.empty()) jb["name"] = b.name;
        jb["geometry"] = geometry_json(b.geometry);
        jb["density"] = b.material.density;
        jb["youngs"] = b.material.youngs;
        jb["poisson"] = b.material.poisson;
        jb["position"] = vec_json(b.position);
        if (!b.A.isIdentity(0.0)) jb["rotation"] = mat_json(b.A);
        if (b.from_momentum) {
            jb["momentum"] = vec_json(b.momentum);
            jb["angular_momentum"] = vec_json(b.angular_momentum);
        } else {
            if (!b.omega.isZero(0.0)) jb["omega"] = vec_json(b.omega);
            if (!b.velocity.isZero(0.0)) jb["velocity"] = vec_json(b.velocity);
        }
        bodies.push_back(jb);
    }
    doc["bodies"] = bodies;
    json joints = json::array();
    for (const auto& j : scene.joints) {
        json jj;
        jj["kind"] = kind_key(j.kind);
        jj["body_a"] = body_ref_json(j.body_a);
        jj["body_b"] = body_ref_json(j.body_b);
        jj["point"] = vec_json(j.point);
        if (j.kind == JointKind::Hinge || j.kind == JointKind::Prismatic || j.kind == JointKind::Universal) {
            jj["axis"] = vec_json(j.axis);
        }
        if (j.kind == JointKind::Universal) jj["axis2"] = vec_json(j.axis2);
        if (j.linear) jj["linear"] = true;
        if (j.full_anchor) jj["full"] = true;
        if (j.limit) jj["limit"] = {{"lower", j.limit->lower}, {"upper", j.limit->upper}, {"stiffness", j.limit->stiffness}};
        joints.push_back(jj);
    }
    doc["joints"] = joints;
    json anchors = json::array();
    for (const auto& a : scene.anchors) anchors.push_back({{"body", a.body}, {"point", vec_json(a.point)}, {"full", a.full}});
    doc["anchors"] = anchors;
    json schedule = json::array();
    for (const auto& e : scene.schedule) {
        schedule.push_back({{"body", e.body},
                            {"start", e.start},
                            {"end", e.end},
                            {"torque", vec_json(e.wrench.tau)},
                            {"force", vec_json(e.wrench.f)}});
    }
    doc["schedule"] = schedule;
    return doc.dump(2) + "\n";
}

SceneDescription expand_universal_joints(const SceneDescription& scene) {
    SceneDescription out = scene;
    out.joints.clear();
    out.integrator.expand_universal = false;
    for (const auto& j : scene.joints) {
        if (j.kind != JointKind::Universal) {
            out.joints.push_back(j);
            continue;
        }
        const BodyDescription& a = scene.bodies[j.body_a];
        double length = extent_of(geometry_moments(a.geometry));
        if (j.body_b != kWorld) length = std::min(length, extent_of(geometry_moments(scene.bodies[j.body_b].geometry)));

        BodyDescription link;
        link.name = "universal_link_" + std::to_string(out.bodies.size());
        link.geometry.kind = GeometryKind::Box;
        link.geometry.size = Vec3::Constant(0.1 * length);
        link.material = a.material;
        link.position = j.point;
        if (!a.from_momentum) {
            const MassMoments m = geometry_moments(a.geometry);
            const Vec3 com = a.A * (m.first / m.volume) + a.position;
            link.omega = a.omega;
            link.velocity = a.velocity + a.omega.cross(j.point - com);
        }
        const int link_id = static_cast<int>(out.bodies.size());
        out.bodies.push_back(link);

        JointAuthoring first;
        first.kind = JointKind::Hinge;
        first.body_a = j.body_a;
        first.body_b = link_id;
        first.point = j.point;
        first.axis = j.axis;
        JointAuthoring second = first;
        second.body_a = link_id;
        second.body_b = j.body_b;
        second.axis = j.axis2;
        out.joints.push_back(first);
        out.joints.push_back(second);
    }
    return out;
}

Diagnostics momentum_energy(const std::vector<BodyModel>& models, const std::vector<AffineState>& states,
                            bool use_polar) {
    Diagnostics d;
    for (std::size_t j = 0; j < models.size(); ++j) {
        d.linear_momentum += linear_momentum(models[j], states[j]);
        d.angular_momentum += angular_momentum(models[j], states[j]);
        d.kinetic += kinetic_energy(models[j], states[j]);
        d.elastic += use_polar ? elastic_energy(models[j], states[j]) : green_strain_energy(models[j], states[j]);
    }
    return d;
}

void Trajectory::write_csv(std::ostream& out, bool include_timing) const {
    if (rows.empty()) return;
    const std::size_t nb = rows.front().q.size();
    const std::size_t nj = rows.front().joint_residual.size();
    out << "time";
    for (std::size_t i = 0; i < nb; ++i) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) out << ",body" << i << "_A" << r << c;
        }
        out << ",body" << i << "_tx,body" << i << "_ty,body" << i << "_tz";
    }
    for (std::size_t k = 0; k < nj; ++k) out << ",joint" << k << "_residual";
    out << ",px,py,pz,Lx,Ly,Lz,energy,us_per_step\n";

    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), ",%.17g", v);
        out << buf;
    };
    for (const StepRecord& row : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", row.time);
        out << buf;
        for (std::size_t i = 0; i < nb; ++i) {
            const Vec12& q = row.q[i];
            // q stores A column by column; the CSV lists it row by row.
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) put(q(3 * c + r));
            }
            for (int k = 9; k < 12; ++k) put(q(k));
        }
        for (double r : row.joint_residual) put(r);
        for (int k = 0; k < 3; ++k) put(row.diagnostics.linear_momentum(k));
        for (int k = 0; k < 3; ++k) put(row.diagnostics.angular_momentum(k));
        put(row.diagnostics.energy());
        put(include_timing ? row.micros : 0.0);
        out << '\n';
    }
}

void Trajectory::write_csv_file(const std::string& path, bool include_timing) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::ValidationError, "cannot write '" + path + "'");
    write_csv(out, include_timing);
}

Simulator::Simulator(const SceneDescription& scene_in)
    : scene_(scene_in.integrator.expand_universal ? expand_universal_joints(scene_in) : scene_in) {
    validate_scene(scene_);
    h_ = scene_.integrator.h;
    settings_.choice = scene_.integrator.solver;
    settings_.gs_tol = scene_.integrator.gs_tol;
    settings_.gs_max_sweeps = scene_.integrator.gs_max_sweeps;
    settings_.direct_limit = scene_.integrator.direct_limit;

    for (const auto& b : scene_.bodies) {
        models_.push_back(precompute_body(geometry_moments(b.geometry), b.material, h_));
        AffineState s = AffineState::from_pose(b.A, b.position);
        const BodyModel& m = models_.back();
        SpatialTwist twist;
        if (b.from_momentum) {
            twist = twist_from_momentum(m, s, b.momentum, b.angular_momentum);
        } else {
            twist.omega = b.omega;
            twist.v = b.velocity - b.omega.cross(b.A * m.center_of_mass);
        }
        s.qdot = embedding_map(s, twist);
        states_.push_back(s);
    }

    std::vector<JointAuthoring> all = scene_.joints;
    for (const auto& a : scene_.anchors) {
        JointAuthoring au;
        au.kind = JointKind::Anchor;
        au.body_a = a.body;
        au.body_b = kWorld;
        au.point = a.point;
        au.full_anchor = a.full;
        all.push_back(au);
    }
    const AffineState world_state;
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t k = 0; k < all.size(); ++k) {
        const JointAuthoring& au = all[k];
        const bool world = au.body_b == kWorld;
        const double lb = world ? models_[au.body_a].length_scale : models_[au.body_b].length_scale;
        try {
            JointSpec joint = build_joint(au, states_[au.body_a], world ? world_state : states_[au.body_b],
                                          models_[au.body_a].length_scale, lb);
            if (joint.limit && joint.limit->stiffness <= 0.0) {
                joint.limit->stiffness = default_limit_stiffness(models_[au.body_a], joint.kind);
            }
            joints_.push_back(std::move(joint));
        } catch (const Error& e) {
            invalid("joint " + std::to_string(k) + " (" + kind_key(au.kind) + "): " + e.what());
        }
        pairs.emplace_back(au.body_a, au.body_b);
    }
    limit_states_.assign(joints_.size(), LimitState{});
    islands_ = classify_topology(static_cast<int>(models_.size()), pairs, scene_.integrator.max_breakers);
}

void Simulator::set_time_step(double h) {
    if (!(h > 0.0)) invalid("time step must be positive");
    h_ = h;
    for (auto& m : models_) refactor(m, h);
}

std::vector<double> Simulator::joint_residuals() const {
    const AffineState world_state;
    std::vector<double> out;
    out.reserve(joints_.size());
    for (const auto& j : joints_) {
        const AffineState& b = j.body_b == kWorld ? world_state : states_[j.body_b];
        out.push_back(eval_constraint(j, states_[j.body_a], b).cwiseAbs().maxCoeff());
    }
    return out;
}

double Simulator::max_joint_residual() const {
    double m = 0.0;
    for (double r : joint_residuals()) m = std::max(m, r);
    return m;
}

StepRecord Simulator::record(double micros) const {
    StepRecord r;
    r.time = time_;
    for (const auto& s : states_) {
        r.q.push_back(s.q);
        r.qdot.push_back(s.qdot);
    }
    r.joint_residual = joint_residuals();
    r.diagnostics = momentum_energy(models_, states_, scene_.integrator.use_polar);
    r.micros = micros;
    return r;
}

Vec12 Simulator::external_force(int body, double time, const AffineState& state) const {
    const BodyModel& m = models_[body];
    const Vec3 arm = state.A() * m.center_of_mass;  // rest origin image to center of mass
    SpatialWrench about_com;
    about_com.f = m.total_mass * scene_.gravity;
    for (const auto& e : scene_.schedule) {
        if (e.body == body && time >= e.start && time < e.end) {
            about_com.tau += e.wrench.tau;
            about_com.f += e.wrench.f;
        }
    }
    if (callback_) {
        const SpatialWrench extra = callback_(body, time, state);
        about_com.tau += extra.tau;
        about_com.f += extra.f;
    }
    SpatialWrench about_origin;
    about_origin.f = about_com.f;
    about_origin.tau = about_com.tau + arm.cross(about_com.f);
    return wrench_to_affine(state, about_origin);
}

KKTProblem Simulator::build_problem(const Island& island, const std::vector<Vec12>& forces,
                                    const std::vector<Mat3>& rotations) const {
    KKTProblem problem;
    std::vector<int> local(models_.size(), -1);
    for (std::size_t i = 0; i < island.bodies.size(); ++i) {
        const int g = island.bodies[i];
        local[g] = static_cast<int>(i);
        KKTBody body;
        body.model = &models_[g];
        body.R = rotations[g];
        body.A = states_[g].A();
        body.f = forces[g];
        body.h = h_;
        problem.bodies.push_back(body);
    }
    const AffineState world_state;
    for (int k : island.joints) {
        const JointSpec& j = joints_[k];
        const bool world = j.body_b == kWorld;
        const AffineState& sa = states_[j.body_a];
        const AffineState& sb = world ? world_state : states_[j.body_b];
        const ConstraintBlock block = eval_gradient(j, sa, sb);
        KKTJoint kj;
        kj.a = local[j.body_a];
        kj.b = world ? -1 : local[j.body_b];
        kj.grad_a = block.grad_a;
        kj.grad_b = block.grad_b;
        kj.rhs = scene_.integrator.constraint_rhs ? VecX(-block.residual) : VecX::Zero(block.residual.size());
        kj.motion_subspace = joint_motion_subspace(j, sa, world ? sa : sb);
        problem.joints.push_back(std::move(kj));
    }
    return problem;
}

KKTProblem Simulator::island_problem(const Island& island, const std::vector<Vec12>& forces) const {
    std::vector<Mat3> rotations(models_.size(), Mat3::Identity());
    for (int j : island.bodies) rotations[j] = polar_rotation(states_[j].A());
    return build_problem(island, forces, rotations);
}

StepRecord Simulator::step() {
    const auto start = std::chrono::steady_clock::now();
    const double h = h_;
    const double t_next = time_ + h;
    const int n = static_cast<int>(models_.size());
    const std::vector<AffineState> previous = states_;
    const IntegratorSettings& cfg = scene_.integrator;
    const AffineState world_state;
    stats_ = SolverStats{};

    try {
        int it = 0;
        for (; it < cfg.newton_iters; ++it) {
            std::vector<Vec12> forces(n);
            std::vector<Mat3> rotations(n);
            for (int j = 0; j < n; ++j) {
                const BodyModel& m = models_[j];
                const AffineState& s = states_[j];
                rotations[j] = polar_rotation(s.A());
                const Vec12 predicted = previous[j].q + h * previous[j].qdot;
                const Vec12 elastic = cfg.use_polar ? elastic_gradient(m, s, rotations[j]) : green_strain_gradient(m, s);
                forces[j] = -m.mass * (s.q - predicted) / (h * h) + external_force(j, t_next, s) - elastic;
            }
            for (std::size_t k = 0; k < joints_.size(); ++k) {
                const JointSpec& jt = joints_[k];
                if (!jt.limit) continue;
                const bool world = jt.body_b == kWorld;
                const LimitResult lim =
                    apply_joint_limits(jt, states_[jt.body_a], world ? world_state : states_[jt.body_b], limit_states_[k]);
                forces[jt.body_a] += lim.force_a;
                if (!world) forces[jt.body_b] += lim.force_b;
            }

            std::vector<Vec12> dq(n, Vec12::Zero());
            for (const Island& island : islands_) {
                if (island.joints.empty()) {
                    for (int j : island.bodies) dq[j] = newton_step_single(models_[j], states_[j], forces[j], h, cfg.use_polar);
                    continue;
                }
                const KKTProblem problem = build_problem(island, forces, rotations);
                SolverStats local;
                const KKTSolution sol = solve_island(problem, island.topology, settings_, &local);
                stats_.block_ops += local.block_ops;
                stats_.upward_touches = local.upward_touches;
                stats_.downward_touches = local.downward_touches;
                stats_.gs_sweeps = std::max(stats_.gs_sweeps, local.gs_sweeps);
                stats_.gs_residual = std::max(stats_.gs_residual, local.gs_residual);
                stats_.gs_converged = stats_.gs_converged && local.gs_converged;
                if (!local.gs_history.empty()) stats_.gs_history = local.gs_history;
                for (std::size_t i = 0; i < island.bodies.size(); ++i) dq[island.bodies[i]] = sol.dq[i];
            }
            double step_size = 0.0;
            for (int j = 0; j < n; ++j) {
                if (!dq[j].allFinite()) throw Error(ErrorCode::SolverFailure, "non-finite update for body " + std::to_string(j));
                states_[j].q += dq[j];
                step_size = std::max(step_size, dq[j].cwiseAbs().maxCoeff());
            }
            if (cfg.newton_tol > 0.0 && step_size <= cfg.newton_tol && max_joint_residual() <= cfg.newton_tol) {
                ++it;
                break;
            }
        }
        last_iterations_ = it;
        for (int j = 0; j < n; ++j) {
            states_[j].qdot = (states_[j].q - previous[j].q) / h;
            if (!(states_[j].A().determinant() > 0.0)) {
                throw Error(ErrorCode::SolverFailure, "body " + std::to_string(j) + " inverted");
            }
        }
    } catch (const Error& e) {
        states_ = previous;
        const std::string cause = e.code() == ErrorCode::SolverFailure ? e.detail() : std::string(e.what());
        throw Error(ErrorCode::SolverFailure, "step " + std::to_string(step_index_) + ": " + cause);
    }

    time_ = t_next;
    ++step_index_;
    const double micros =
        std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
    return record(micros);
}

Trajectory Simulator::run(int n_steps) {
    if (n_steps < 0) invalid("step count must be non-negative");
    Trajectory traj;
    traj.rows.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.rows.push_back(record(0.0));
    for (int i = 0; i < n_steps; ++i) traj.rows.push_back(step());
    return traj;
}

}  // namespace mabd
