#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nibb/experiment.hpp"

using namespace nibb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / "nibb_cli_test" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string write_config(const fs::path& dir, const json& j) {
    auto path = (dir / "config.json").string();
    std::ofstream(path) << j.dump(2);
    return path;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

int run(const std::string& command, const std::string& config, const fs::path& out, RunOverrides ov = {}) {
    std::ostringstream log, err;
    return run_command(command, config, out.string(), ov, log, err);
}

// Runs the built executable and returns (exit code, stdout).
std::pair<int, std::string> run_binary(const std::string& args) {
    std::string cmd = std::string(NIBB_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    std::string out;
    char buf[256];
    while (fgets(buf, sizeof buf, pipe)) out += buf;
    int status = pclose(pipe);
    return {WEXITSTATUS(status), out};
}

const json kSmall = {{"preset", "watermelon"}, {"n", 8}, {"samples", 12}, {"record_times", {0.25, 0.5}}, {"seed", 3}};

}  // namespace

TEST(Config, PresetsAndOverrides) {
    auto c = parse_config("simulate", json{{"preset", "semicircle-to-semicircle"}, {"n", 10}});
    EXPECT_EQ(c.start, "semicircle(2)");
    EXPECT_EQ(c.n, 10u);
    auto d = parse_config("simulate", json{{"preset", "watermelon"}, {"end", "point(1)"}});
    EXPECT_EQ(d.end, "point(1)");
    EXPECT_FALSE(parse_config("simulate", json{{"workers", 4}}).echo.contains("workers"));
    EXPECT_THROW(parse_config("simulate", json{{"samples", 0}}), ValidationError);
    EXPECT_THROW(parse_config("simulate", json{{"sample", 10}}), ValidationError);
    EXPECT_THROW(parse_config("simulate", json{{"preset", "tacnode"}}), ValidationError);
    EXPECT_THROW(parse_config("simulate", json{{"n", "many"}}), ValidationError);
}

TEST(Config, AssumptionWarnings) {
    auto dir = scratch("warn");
    {
        std::ofstream f(dir / "gap.csv");
        f << "x,rho\n";
        for (int k = 0; k <= 300; ++k) {
            double x = -1.5 + 0.01 * k;
            double v = std::max(0.0, 0.25 - (x + 1) * (x + 1)) + std::max(0.0, 0.25 - (x - 1) * (x - 1));
            f << x << ',' << v << '\n';
        }
    }
    auto cfg = parse_config("simulate", json{{"end", json{{"density_csv", (dir / "gap.csv").string()}}}});
    Pipeline p(cfg);
    ASSERT_EQ(p.cfg.warnings.size(), 1u);
    EXPECT_NE(p.cfg.warnings[0].find("end"), std::string::npos);
}

TEST(Cli, Tw2PrintsOracleValue) {
    auto dir = scratch("tw2");
    auto [code, out] = run_binary("tw2 --s -1.0 --out " + dir.string());
    EXPECT_EQ(code, 0);
    EXPECT_NEAR(std::stod(out), tw2_cdf(-1.0), 1e-11);
    EXPECT_TRUE(fs::exists(dir / "tw2.json"));
    EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST(Cli, ZeroSamplesIsValidationError) {
    auto dir = scratch("zero");
    json cfg = kSmall;
    cfg["samples"] = 0;
    auto [code, out] = run_binary("simulate --config " + write_config(dir, cfg) + " --out " + dir.string());
    EXPECT_EQ(code, 2);
    auto err = read_json(dir / "error.json");
    EXPECT_EQ(err["error"]["kind"], "validation");
}

TEST(Cli, BadArgumentsAreValidationErrors) {
    auto dir = scratch("badargs");
    EXPECT_EQ(run_binary("simulate --bogus 1").first, 2);
    EXPECT_EQ(run_binary("simulate --out " + dir.string()).first, 2);
    EXPECT_EQ(run_binary("simulate --config /nonexistent.json --out " + dir.string()).first, 2);
}

TEST(Cli, SolverFailureIsNumericalError) {
    auto dir = scratch("solverfail");
    json cfg{{"preset", "semicircle-to-semicircle"}, {"solver", {{"max_iter", 1}}}, {"tol", 1e-15}};
    EXPECT_EQ(run("limitshape", write_config(dir, cfg), dir), 3);
    EXPECT_EQ(read_json(dir / "error.json")["error"]["kind"], "numerical");
}

TEST(Cli, SimulateArtifactsAreReproducible) {
    auto d1 = scratch("sim1"), d2 = scratch("sim2"), d3 = scratch("sim3");
    auto cfg = write_config(d1, kSmall);
    ASSERT_EQ(run("simulate", cfg, d1, {std::nullopt, 1, std::nullopt}), 0);
    ASSERT_EQ(run("simulate", cfg, d2, {std::nullopt, 1, std::nullopt}), 0);
    ASSERT_EQ(run("simulate", cfg, d3, {std::nullopt, 3, std::nullopt}), 0);
    for (const char* f : {"paths.csv", "paths.bin", "density_t0.25.csv", "summary.json", "manifest.json"}) {
        ASSERT_TRUE(fs::exists(d1 / f)) << f;
        EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
        EXPECT_EQ(slurp(d1 / f), slurp(d3 / f)) << f;
    }
    EXPECT_TRUE(fs::exists(d1 / "timings.json"));
    auto summary = read_json(d1 / "summary.json");
    EXPECT_EQ(summary["wasserstein1_to_limit"].size(), 2u);

    auto back = read_ensemble_binary((d1 / "paths.bin").string());
    EXPECT_EQ(back.n(), 8u);
    EXPECT_EQ(back.samples(), 12u);
    ASSERT_EQ(back.times().size(), 2u);
    EXPECT_EQ(back.times()[1], 0.5);

    ASSERT_EQ(run("simulate", cfg, d2, {std::uint64_t{4}, 1, std::nullopt}), 0);
    EXPECT_NE(slurp(d1 / "paths.csv"), slurp(d2 / "paths.csv"));
}

TEST(Cli, EdgestatsSummary) {
    auto dir = scratch("edge");
    json cfg{{"preset", "watermelon"}, {"n", 16}, {"samples", 40}, {"t", 0.5}, {"tw2", {{"step", 0.1}, {"nodes", 32}}}};
    ASSERT_EQ(run("edgestats", write_config(dir, cfg), dir), 0);
    auto s = read_json(dir / "summary.json");
    EXPECT_GE(s["ks_tw2"].get<double>(), 0.0);
    EXPECT_LE(s["ks_tw2"].get<double>(), 1.0);
    EXPECT_EQ(s["samples"], 40);
    EXPECT_TRUE(fs::exists(dir / "edge_samples.csv"));
    // cdf overlay: first column increasing, F2 monotone
    std::ifstream in(dir / "cdf_overlay.csv");
    std::string line;
    std::getline(in, line);
    double prev_s = -1e300, prev_f = -1.0;
    while (std::getline(in, line)) {
        double s_val, f_val;
        char comma;
        std::istringstream ls(line);
        ls >> s_val >> comma >> f_val;
        EXPECT_GT(s_val, prev_s);
        EXPECT_GE(f_val, prev_f);
        prev_s = s_val;
        prev_f = f_val;
    }
}

TEST(Cli, LimitshapeRoundTrip) {
    auto dir = scratch("shape");
    json cfg{{"preset", "semicircle-to-semicircle"}, {"shape_times", {0.0, 0.5, 1.0}}, {"solver", {{"rank_cells", 128}, {"time_steps", 32}}}};
    ASSERT_EQ(run("limitshape", write_config(dir, cfg), dir), 0);
    auto shape = shape_from_json(read_json(dir / "shape.json"));
    ASSERT_EQ(shape.slices().size(), 5u);  // shape times plus the default record times
    auto [a, b] = shape.edges(0.5);
    EXPECT_LT(a, -2.0);
    EXPECT_GT(b, 2.0);
    EXPECT_TRUE(fs::exists(dir / "edges.csv"));
}

TEST(Cli, RigidityAndDominance) {
    auto dir = scratch("rig");
    json cfg{{"preset", "watermelon"}, {"samples", 10}, {"ns", {8, 16}}};
    ASSERT_EQ(run("rigidity", write_config(dir, cfg), dir), 0);
    auto r = read_json(dir / "rigidity.json");
    EXPECT_EQ(r["bulk_ratios"].size(), 1u);
    EXPECT_TRUE(fs::exists(dir / "rigidity_n16.csv"));

    auto dd = scratch("dom");
    json dcfg{{"preset", "watermelon"}, {"n", 4}, {"samples", 30}, {"shift", 0.1}, {"record_times", {0.5}}};
    ASSERT_EQ(run("dominance", write_config(dd, dcfg), dd), 0);
    auto d = read_json(dd / "dominance.json");
    EXPECT_EQ(d["per_time"].size(), 1u);
    EXPECT_EQ(d["per_time"][0]["excess"].size(), 4u);
}

TEST(PlotData, Errors) {
    auto dir = scratch("plot");
    auto path = (dir / "x.csv").string();
    EXPECT_THROW(emit_plotdata({}, "density", path), UsageError);
    EXPECT_THROW(emit_plotdata({}, "cdf", path), UsageError);
    EXPECT_THROW(emit_plotdata({}, "rigidity", path), UsageError);
    EXPECT_THROW(emit_plotdata({}, "histogram", path), UsageError);
}

TEST(PlotData, DensityOverlay) {
    auto dir = scratch("overlay");
    BridgeSpec spec;
    spec.n = 8;
    spec.a = WeylPoint::closed(std::vector<double>(8, 0.0));
    spec.b = spec.a;
    spec.record_times = {0.5};
    spec.drift_mode = DriftMode::confluent;
    spec.samples = 20;
    auto e = simulate_bridge(spec);
    auto shape = watermelon_shape({0.5}, 257);
    emit_plotdata({&e, &shape, 0.5, nullptr, nullptr, nullptr}, "density", (dir / "d.csv").string());
    std::ifstream in(dir / "d.csv");
    std::string header, line;
    std::getline(in, header);
    EXPECT_EQ(header, "x,rho_limit,rho_empirical");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 257);
}
