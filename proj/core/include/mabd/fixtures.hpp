#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mabd/scene.hpp"

// Deterministic scene builders shared by the CLI, tests and benchmarks.
namespace mabd::fixtures {

// M_ABD_SEED when set, otherwise the fallback.
unsigned seed_from_env(unsigned fallback = 20240611u);

Material stiff_material();

// 0.1 m cube, 1 kg, released with p0 = [100, 0, 0] and L0 = [0, 100, 0].
SceneDescription cube_momentum(double h);

// 1 m bar hinged at one end to the world about z, released horizontally.
struct PendulumGeometry {
    Vec3 size = Vec3(1.0, 0.05, 0.05);
    Vec3 pivot = Vec3::Zero();
};
SceneDescription pendulum(double h, double duration = 5.0);

// T-shaped tet mesh with its center of mass at the origin and principal axes along x, y, z.
TetMesh t_handle_mesh();
// Spins about the intermediate principal axis with a small transverse perturbation.
struct THandleSetup {
    double spin = 3.0;
    double perturbation = 1e-3;
    int intermediate_axis = 0;
    int perturbed_axis = 0;
};
THandleSetup t_handle_setup();
SceneDescription t_handle(double h, double duration);

// Thin disk spinning about its symmetry axis, pinned below its center, tilted 5 degrees.
struct HeavyTopGeometry {
    double radius = 0.2;
    double thickness = 0.02;
    double pivot_offset = 0.02;  // pivot to center of mass along the symmetry axis
    double spin = 10.0;
    double tilt = 5.0 * 3.14159265358979323846 / 180.0;
};
SceneDescription heavy_top(double h, double duration);

// Links along x joined end to end, the first one anchored to the world at its free end.
SceneDescription chain(int links, double h, JointKind kind = JointKind::Ball);
// Body 0 fully anchored, body 1 hinged to it.
SceneDescription two_link_pendulum(double h);
// Random tree of ball joints rooted at an anchored body.
SceneDescription random_tree(int bodies, unsigned seed, double h);
// Closed loop of ball joints, one body anchored.
SceneDescription ring(int bodies, double h);
// (cells + 1)^2 knots hanging in the x-y plane, ball joints between neighbours,
// the top row hung from ball anchors on a fixed rail. Starts at rest.
SceneDescription net(int cells, double h);

std::vector<std::string> fixture_names();
// Named fixture at its default step size.
SceneDescription by_name(const std::string& name);

// A linearized KKT problem on a perturbed state; the simulator owns the body models.
struct RandomInstance {
    std::unique_ptr<Simulator> simulator;
    KKTProblem problem;
    TopologyInfo topology;
};
enum class InstanceShape { Chain, Tree, Loop, Net };
RandomInstance random_instance(InstanceShape shape, int bodies, std::mt19937& rng);

}  // namespace mabd::fixtures
