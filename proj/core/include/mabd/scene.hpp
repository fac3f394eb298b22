#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mabd/corotated_body.hpp"
#include "mabd/joints.hpp"
#include "mabd/kkt_solvers.hpp"

namespace mabd {

enum class GeometryKind { Box, Cylinder, Capsule, Mesh };

struct Geometry {
    GeometryKind kind = GeometryKind::Box;
    Vec3 size = Vec3::Constant(0.1);  // box extents
    double radius = 0.05;             // cylinder, capsule
    double height = 0.1;              // cylinder height or capsule straight length, along local y
    TetMesh mesh;
};

MassMoments geometry_moments(const Geometry& geometry);

struct BodyDescription {
    std::string name;
    Geometry geometry;
    Material material;
    Mat3 A = Mat3::Identity();
    Vec3 position = Vec3::Zero();  // t, the image of the rest origin
    // Initial motion, either a twist (world omega, center-of-mass velocity) or momenta about the world origin.
    bool from_momentum = false;
    Vec3 omega = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();
    Vec3 momentum = Vec3::Zero();
    Vec3 angular_momentum = Vec3::Zero();
};

struct AnchorDescription {
    int body = 0;
    Vec3 point = Vec3::Zero();
    bool full = false;
};

// Constant world wrench on [start, end); torque is about the body's center of mass.
struct WrenchEvent {
    int body = 0;
    double start = 0.0;
    double end = 0.0;
    SpatialWrench wrench;
};

struct IntegratorSettings {
    double h = 1e-3;
    int steps = 100;
    int newton_iters = 1;
    double newton_tol = 0.0;  // > 0 stops early once the update and constraint residual fall below it
    SolverChoice solver = SolverChoice::Auto;
    bool use_polar = true;
    double gs_tol = 1e-6;
    int gs_max_sweeps = 200;
    int direct_limit = 250000;
    bool constraint_rhs = true;
    int max_breakers = 4;
    bool expand_universal = false;
};

struct SceneDescription {
    std::string name;
    std::vector<BodyDescription> bodies;
    std::vector<JointAuthoring> joints;
    std::vector<AnchorDescription> anchors;
    Vec3 gravity = Vec3(0.0, -9.81, 0.0);
    std::vector<WrenchEvent> schedule;
    IntegratorSettings integrator;
};

// JSON, schema_version 1. Throws ParseError or ValidationError.
SceneDescription load_scene(const std::string& text);
SceneDescription load_scene_file(const std::string& path);
void validate_scene(const SceneDescription& scene);
std::string scene_to_json(const SceneDescription& scene);

SolverChoice parse_solver_choice(const std::string& name);

// Replaces every universal joint by a small virtual body and two hinges.
SceneDescription expand_universal_joints(const SceneDescription& scene);

struct Diagnostics {
    Vec3 linear_momentum = Vec3::Zero();
    Vec3 angular_momentum = Vec3::Zero();
    double kinetic = 0.0;
    double elastic = 0.0;
    double energy() const { return kinetic + elastic; }
};

Diagnostics momentum_energy(const std::vector<BodyModel>& models, const std::vector<AffineState>& states,
                            bool use_polar = true);

struct StepRecord {
    double time = 0.0;
    std::vector<Vec12> q;
    std::vector<Vec12> qdot;
    std::vector<double> joint_residual;
    Diagnostics diagnostics;
    double micros = 0.0;
};

struct Trajectory {
    std::vector<StepRecord> rows;

    // Timing is written as 0 when include_timing is false so reruns compare byte for byte.
    void write_csv(std::ostream& out, bool include_timing = true) const;
    void write_csv_file(const std::string& path, bool include_timing = true) const;
};

// Extra world wrench (torque about the center of mass) evaluated at the end-of-step time.
using WrenchCallback = std::function<SpatialWrench(int body, double time, const AffineState& state)>;

class Simulator {
public:
    explicit Simulator(const SceneDescription& scene);

    double time() const { return time_; }
    double time_step() const { return h_; }
    int step_index() const { return step_index_; }
    const SceneDescription& scene() const { return scene_; }
    const std::vector<BodyModel>& models() const { return models_; }
    const std::vector<AffineState>& states() const { return states_; }
    std::vector<AffineState>& mutable_states() { return states_; }
    const std::vector<JointSpec>& joints() const { return joints_; }
    const std::vector<Island>& islands() const { return islands_; }
    const SolverStats& last_stats() const { return stats_; }
    int last_iterations() const { return last_iterations_; }

    // Rebuilds every cached factor for the new step size.
    void set_time_step(double h);
    void set_wrench_callback(WrenchCallback callback) { callback_ = std::move(callback); }

    std::vector<double> joint_residuals() const;
    double max_joint_residual() const;
    StepRecord record(double micros = 0.0) const;

    StepRecord step();
    Trajectory run(int n_steps);

    // World wrench on one body at the given time, torque about the rest origin image t.
    Vec12 external_force(int body, double time, const AffineState& state) const;

    // Linearized KKT problem of one island at the current states, in island-local indices.
    KKTProblem island_problem(const Island& island, const std::vector<Vec12>& forces) const;

private:
    KKTProblem build_problem(const Island& island, const std::vector<Vec12>& forces,
                             const std::vector<Mat3>& rotations) const;

    SceneDescription scene_;
    std::vector<BodyModel> models_;
    std::vector<AffineState> states_;
    std::vector<JointSpec> joints_;
    std::vector<LimitState> limit_states_;
    std::vector<Island> islands_;
    SolverSettings settings_;
    SolverStats stats_;
    WrenchCallback callback_;
    double h_ = 1e-3;
    double time_ = 0.0;
    int step_index_ = 0;
    int last_iterations_ = 0;
};

}  // namespace mabd
