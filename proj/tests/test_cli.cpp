#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

const std::string kCli = MABD_CLI_PATH;
const std::string kSource = MABD_SOURCE_DIR;

struct Outcome {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

Outcome run(const std::string& args) {
    Outcome out;
    const std::string cmd = "\"" + kCli + "\" " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return out;
    std::array<char, 4096> buf{};
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.output.append(buf.data(), n);
    const int status = pclose(pipe);
    out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "mabd_cli_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<std::vector<double>> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST(Cli, PendulumRunWritesEveryStep) {
    const auto out = scratch("pendulum.csv");
    const Outcome r = run("run \"" + kSource + "/fixtures/pendulum.json\" --steps 5000 --out \"" + out.string() + "\"");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto rows = read_csv(out);
    EXPECT_EQ(rows.size(), 5001u);
    EXPECT_NEAR(rows.back().front(), 5.0, 1e-9);
}

TEST(Cli, MissingSceneIsInvalidInput) {
    const Outcome r = run("run /nonexistent/scene.json");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("/nonexistent/scene.json"), std::string::npos) << r.output;
}

TEST(Cli, NonUnitAxisNamesTheJoint) {
    std::ifstream in(kSource + "/fixtures/pendulum.json");
    std::stringstream text;
    text << in.rdbuf();
    std::string doc = text.str();
    const std::string key = "\"axis\":";
    const auto at = doc.find(key);
    ASSERT_NE(at, std::string::npos);
    const auto close = doc.find(']', at);
    doc.replace(at, close - at + 1, key + " [0, 0, 3]");
    const auto path = scratch("bad_axis.json");
    std::ofstream(path) << doc;

    const Outcome r = run("run \"" + path.string() + "\" --steps 1");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("joints[0]"), std::string::npos) << r.output;
    EXPECT_EQ(run("validate \"" + path.string() + "\"").code, 2);
}

TEST(Cli, ValidateReportsTopology) {
    const Outcome ring = run("validate \"" + kSource + "/fixtures/ring.json\"");
    EXPECT_EQ(ring.code, 0) << ring.output;
    EXPECT_NE(ring.output.find("Loop(breakers=1)"), std::string::npos) << ring.output;

    const Outcome net = run("validate \"" + kSource + "/fixtures/net.json\"");
    EXPECT_EQ(net.code, 0) << net.output;
    EXPECT_NE(net.output.find("Graph, 220 joints"), std::string::npos) << net.output;
}

TEST(Cli, DenseAndChainSolversAgree) {
    const auto a = scratch("chain_auto.csv");
    const auto b = scratch("chain_dense.csv");
    const std::string scene = "\"" + kSource + "/fixtures/chain.json\" --steps 50 --no-timing";
    ASSERT_EQ(run("run " + scene + " --solver chain --out \"" + a.string() + "\"").code, 0);
    ASSERT_EQ(run("run " + scene + " --solver dense --out \"" + b.string() + "\"").code, 0);
    const auto ra = read_csv(a);
    const auto rb = read_csv(b);
    ASSERT_EQ(ra.size(), rb.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ASSERT_EQ(ra[i].size(), rb[i].size());
        for (std::size_t c = 0; c < ra[i].size(); ++c) {
            worst = std::max(worst, std::abs(ra[i][c] - rb[i][c]) / std::max(1.0, std::abs(rb[i][c])));
        }
    }
    EXPECT_LE(worst, 1e-8);
}

TEST(Cli, NoTimingRunsAreByteIdentical) {
    const auto a = scratch("tree_a.csv");
    const auto b = scratch("tree_b.csv");
    const std::string scene = "\"" + kSource + "/fixtures/random_tree.json\" --steps 20 --no-timing --out ";
    ASSERT_EQ(run("run " + scene + "\"" + a.string() + "\"").code, 0);
    ASSERT_EQ(run("run " + scene + "\"" + b.string() + "\"").code, 0);
    std::ifstream fa(a), fb(b);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    EXPECT_FALSE(sa.str().empty());
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("run").code, 1);
    EXPECT_EQ(run("run x.json --solver nonsense").code, 1);
    EXPECT_EQ(run("bench no_such_suite").code, 2);
}

TEST(Cli, BenchSuitePasses) {
    const auto dir = scratch("bench_out");
    const Outcome r = run("bench cube_momentum --out \"" + dir.string() + "\"");
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(std::filesystem::exists(dir / "cube_momentum_h1e-3.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir / "summary.csv"));
}

TEST(Cli, FixtureRoundTripsThroughValidate) {
    const auto path = scratch("two_link.json");
    ASSERT_EQ(run("fixture two_link_pendulum --out \"" + path.string() + "\"").code, 0);
    const Outcome r = run("validate \"" + path.string() + "\"");
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("Chain"), std::string::npos) << r.output;
}
