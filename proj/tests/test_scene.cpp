#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mabd/experiments.hpp"
#include "mabd/oracles.hpp"
#include "support.hpp"

using namespace mabd;
using namespace mabd::testing;

namespace {

const std::string kSource = MABD_SOURCE_DIR;

const char* kMinimal = R"({
  "schema_version": 1,
  "gravity": [0, -9.81, 0],
  "integrator": {"h": 0.001, "steps": 10},
  "bodies": [{"geometry": {"type": "box", "size": [0.1, 0.1, 0.1]}}]
})";

std::string csv_of(const Trajectory& t) {
    std::ostringstream out;
    t.write_csv(out, false);
    return out.str();
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace

TEST(LoadScene, MinimalDocument) {
    const SceneDescription s = load_scene(kMinimal);
    EXPECT_EQ(s.bodies.size(), 1u);
    EXPECT_TRUE(s.joints.empty());
    EXPECT_EQ(s.integrator.steps, 10);
    EXPECT_EQ(s.gravity, Vec3(0, -9.81, 0));
    const Simulator sim(s);
    EXPECT_NEAR(sim.models().front().total_mass, 1.0, 1e-12);
}

TEST(LoadScene, PendulumHasOneJoint) {
    const SceneDescription s = load_scene_file(kSource + "/fixtures/pendulum.json");
    EXPECT_EQ(s.bodies.size(), 1u);
    ASSERT_EQ(s.joints.size(), 1u);
    EXPECT_EQ(s.joints.front().kind, JointKind::Hinge);
    EXPECT_EQ(s.joints.front().body_b, kWorld);
    const Simulator sim(s);
    EXPECT_EQ(sim.joints().size(), 1u);
    EXPECT_EQ(sim.joints().front().rank, 5);
}

TEST(LoadScene, UnknownBodyIsNamed) {
    std::string doc = kMinimal;
    doc.insert(doc.rfind('}'), R"(, "joints": [{"kind": "ball", "body_a": 0, "body_b": 7}])");
    try {
        validate_scene(load_scene(doc));
        FAIL() << "expected ValidationError";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ValidationError);
        EXPECT_NE(std::string(e.what()).find('7'), std::string::npos) << e.what();
    }
}

TEST(LoadScene, MalformedJsonReportsPosition) {
    try {
        load_scene("{\"schema_version\": 1, \"bodies\": [}");
        FAIL() << "expected ParseError";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ParseError);
        EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
    }
}

TEST(LoadScene, RejectsWrongSchemaAndBadValues) {
    const std::pair<std::string, std::string> cases[] = {
        {"\"schema_version\": 1", "\"schema_version\": 2"},
        {"\"h\": 0.001", "\"h\": -0.001"},
        {"[0.1, 0.1, 0.1]", "[0.1, 0.0, 0.1]"},
    };
    for (const auto& [from, to] : cases) {
        std::string doc = kMinimal;
        doc.replace(doc.find(from), from.size(), to);
        EXPECT_THROW(validate_scene(load_scene(doc)), Error) << to;
    }
}

TEST(LoadScene, NonUnitHingeAxisIsRejected) {
    std::string doc = kMinimal;
    doc.insert(doc.rfind('}'), R"(, "joints": [{"kind": "hinge", "body_a": 0, "axis": [0, 0, 2]}])");
    try {
        validate_scene(load_scene(doc));
        FAIL() << "expected ValidationError";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ValidationError);
        EXPECT_NE(std::string(e.what()).find("joints[0]"), std::string::npos) << e.what();
    }
}

TEST(LoadScene, JsonRoundTrip) {
    for (const std::string& name : fixtures::fixture_names()) {
        if (name == "net100") continue;
        const SceneDescription s = fixtures::by_name(name);
        const std::string text = scene_to_json(s);
        EXPECT_EQ(scene_to_json(load_scene(text)), text) << name;
    }
}

TEST(LoadScene, BundledFixturesAreSatisfied) {
    int count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(kSource + "/fixtures")) {
        if (entry.path().extension() != ".json") continue;
        const SceneDescription s = load_scene_file(entry.path().string());
        validate_scene(s);
        const Simulator sim(s);
        EXPECT_LE(sim.max_joint_residual(), 1e-12) << entry.path();
        ++count;
    }
    EXPECT_GE(count, 9);
}

TEST(Step, EquilibriumIsAFixedPoint) {
    SceneDescription s = fixtures::chain(5, 1e-3, JointKind::Hinge);
    s.gravity = Vec3::Zero();
    Simulator sim(s);
    const std::vector<AffineState> start = sim.states();
    for (int i = 0; i < 10; ++i) sim.step();
    for (std::size_t j = 0; j < start.size(); ++j) {
        EXPECT_LT((sim.states()[j].q - start[j].q).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT(sim.states()[j].qdot.cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Step, AnchoredBodyStaysPinned) {
    SceneDescription s = load_scene(kMinimal);
    AnchorDescription a;
    a.body = 0;
    a.point = Vec3(0.05, 0.05, 0.0);
    s.anchors.push_back(a);
    Simulator sim(s);
    for (int i = 0; i < 200; ++i) {
        sim.step();
        EXPECT_LE(sim.max_joint_residual(), 1e-6);
    }
    EXPECT_GT(sim.states().front().qdot.norm(), 0.0);
}

TEST(Step, FreeCubeConservesLinearMomentum) {
    for (double h : {1e-2, 1e-3, 1e-4}) {
        const experiments::CubeMomentumResult r = experiments::cube_momentum(h, 1000);
        EXPECT_LE(r.linear_drift, 1e-10) << h;
        EXPECT_LE(r.angular_initial, 1e-10) << h;
    }
}

TEST(Step, ConstantForceChangesMomentumExactly) {
    SceneDescription s = load_scene(kMinimal);
    s.gravity = Vec3::Zero();
    WrenchEvent push;
    push.body = 0;
    // forces are sampled at the end of each step; the window covers steps 1..50
    push.start = 0.0005;
    push.end = 0.0505;
    push.wrench.f = Vec3(2.0, 0.0, -1.0);
    s.schedule.push_back(push);
    Simulator sim(s);
    sim.run(100);
    const Diagnostics d = momentum_energy(sim.models(), sim.states());
    EXPECT_LT((d.linear_momentum - 0.05 * Vec3(2.0, 0.0, -1.0)).norm(), 1e-10);
}

TEST(Step, SkippingPolarKeepsStiffBodiesRigid) {
    SceneDescription s = fixtures::two_link_pendulum(1e-3);
    s.integrator.use_polar = false;
    Simulator sim(s);
    for (int i = 0; i < 300; ++i) {
        sim.step();
        for (const auto& st : sim.states()) {
            EXPECT_GT(st.A().determinant(), 0.0);
            EXPECT_LE((st.A().transpose() * st.A() - Mat3::Identity()).norm(), 1e-3);
        }
        EXPECT_LE(sim.max_joint_residual(), 1e-6);
    }
}

TEST(Step, ChangingStepSizeRefactors) {
    Simulator sim(fixtures::two_link_pendulum(1e-3));
    sim.set_time_step(5e-4);
    for (const auto& m : sim.models()) EXPECT_EQ(m.hbar_factor.h(), 5e-4);
    EXPECT_NO_THROW(sim.step());
    EXPECT_NEAR(sim.time(), 5e-4, 1e-18);
}

TEST(Step, ExpandedUniversalMatchesMinimalForm) {
    SceneDescription minimal = fixtures::by_name("mechanism");
    SceneDescription expanded = minimal;
    expanded.integrator.expand_universal = true;
    Simulator a(minimal);
    Simulator b(expanded);
    EXPECT_EQ(b.states().size(), a.states().size() + 1);
    for (int i = 0; i < 200; ++i) {
        a.step();
        b.step();
    }
    // the light virtual link makes the expanded system stiffer to linearize
    EXPECT_LE(b.max_joint_residual(), 1e-5);
    for (std::size_t j = 0; j < a.states().size(); ++j) {
        EXPECT_LT((a.states()[j].t() - b.states()[j].t()).norm(), 1e-3) << j;
    }
}

TEST(Run, ZeroStepsRecordsInitialState) {
    Simulator sim(fixtures::pendulum(1e-3));
    const Trajectory t = sim.run(0);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows.front().time, 0.0);
}

TEST(Run, RowsAreMonotoneAndCounted) {
    Simulator sim(fixtures::two_link_pendulum(1e-3));
    const Trajectory t = sim.run(25);
    ASSERT_EQ(t.rows.size(), 26u);
    for (std::size_t i = 1; i < t.rows.size(); ++i) EXPECT_GT(t.rows[i].time, t.rows[i - 1].time);
}

TEST(Run, DeterministicBytes) {
    const SceneDescription s = fixtures::random_tree(12, 5, 1e-3);
    Simulator a(s);
    Simulator b(s);
    EXPECT_EQ(csv_of(a.run(30)), csv_of(b.run(30)));
}

TEST(Run, CsvMatchesGoldenFile) {
    Simulator sim(load_scene_file(kSource + "/fixtures/mechanism.json"));
    const std::string produced = csv_of(sim.run(20));
    std::ifstream in(kSource + "/tests/golden/mechanism_20.csv");
    ASSERT_TRUE(in.good());
    std::stringstream golden;
    golden << in.rdbuf();

    std::stringstream a(produced), b(golden.str());
    std::string la, lb;
    std::getline(a, la);
    std::getline(b, lb);
    EXPECT_EQ(la, lb) << "header changed";
    int rows = 0;
    while (std::getline(b, lb)) {
        ASSERT_TRUE(std::getline(a, la));
        const auto ca = split(la);
        const auto cb = split(lb);
        ASSERT_EQ(ca.size(), cb.size());
        for (std::size_t i = 0; i < ca.size(); ++i) {
            const double x = std::stod(ca[i]);
            const double y = std::stod(cb[i]);
            EXPECT_NEAR(x, y, 1e-9 * std::max(1.0, std::abs(y))) << "row " << rows << " col " << i;
        }
        ++rows;
    }
    EXPECT_EQ(rows, 21);
    EXPECT_FALSE(std::getline(a, la));
}

TEST(Run, PendulumFollowsEllipticSolution) {
    const experiments::PendulumResult r = experiments::pendulum(1e-4, 5.0);
    ASSERT_FALSE(r.simulated.empty());
    const double final_error = std::abs(r.simulated.back() - r.reference.back());
    EXPECT_LE(final_error, 0.01 * std::abs(r.reference.back()));
    EXPECT_LE(r.max_error, 0.01);
}

TEST(Diagnostics, RestStateHasOnlyElasticEnergy) {
    Simulator sim(fixtures::two_link_pendulum(1e-3));
    const Diagnostics d = momentum_energy(sim.models(), sim.states());
    EXPECT_EQ(d.linear_momentum, Vec3::Zero());
    EXPECT_EQ(d.angular_momentum, Vec3::Zero());
    EXPECT_EQ(d.kinetic, 0.0);
    EXPECT_NEAR(d.energy(), d.elastic, 0.0);
}

TEST(Diagnostics, CubeStartsWithPrescribedMomenta) {
    Simulator sim(fixtures::cube_momentum(1e-3));
    const Diagnostics d = momentum_energy(sim.models(), sim.states());
    EXPECT_LT((d.angular_momentum - Vec3(0, 100, 0)).norm(), 1e-10);
    EXPECT_LT((d.linear_momentum - Vec3(100, 0, 0)).norm(), 1e-10);
}
