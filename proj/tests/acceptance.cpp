// Acceptance runs: one PASS/FAIL line per criterion. Usage: acceptance [out_dir]

#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "nibb/experiment.hpp"

using namespace nibb;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("[%s] %2d %-22s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path fresh(const fs::path& root, const std::string& name) {
    fs::path p = root / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string write_config(const fs::path& dir, const json& j) {
    auto path = (dir / "config.json").string();
    std::ofstream(path) << j.dump(2);
    return path;
}

int run(const std::string& cmd, const json& cfg, const fs::path& dir, std::size_t workers) {
    std::ostringstream log;
    return run_command(cmd, write_config(dir, cfg), dir.string(), {std::nullopt, workers, std::nullopt}, log, std::cerr);
}

const json kDensityRun = {{"preset", "watermelon"}, {"n", 64}, {"samples", 200}, {"seed", 2024},
                          {"record_times", {0.5}}, {"drift_mode", "mean-field"}};
const json kEdgeRun = {{"preset", "watermelon"}, {"n", 64}, {"samples", 2000}, {"seed", 7},
                       {"t", 0.5}, {"side", "right"}, {"drift_mode", "mean-field"}};

}  // namespace

int main(int argc, char** argv) {
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "nibb_acceptance";
    fs::create_directories(root);
    const std::size_t many = std::max<std::size_t>(4, std::thread::hardware_concurrency());

    report(1, "kernel correctness", [] {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> u(-1.0, 1.0), ut(0.05, 0.95);
        double worst_fd = 0.0, worst_cof = 0.0;
        for (int k = 0; k < 100; ++k) {
            const std::size_t n = 2 + static_cast<std::size_t>(k % 7);
            std::vector<double> x(n), b(n);
            for (auto& v : x) v = u(rng);
            for (auto& v : b) v = u(rng);
            std::sort(x.begin(), x.end());
            std::sort(b.begin(), b.end());
            const double t = ut(rng), nd = static_cast<double>(n);
            const auto d = km_drift(x, b, t, nd);
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                // central differences at 1e-6 and 5e-7, one Richardson step
                auto central = [&](double h) {
                    auto xp = x, xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    return (log_km_density(xp, b, 1 - t, nd).log_density - log_km_density(xm, b, 1 - t, nd).log_density) /
                           (xp[i] - xm[i]);
                };
                const double fd = (4.0 * central(5e-7) - central(1e-6)) / 3.0;
                num = std::max(num, std::abs(d[i] - fd));
                den = std::max(den, std::abs(d[i]));
            }
            worst_fd = std::max(worst_fd, num / den);
            if (n == 2) {
                auto g = [&](double dd) { return std::sqrt(nd / (2 * std::numbers::pi * t)) * std::exp(-nd * dd * dd / (2 * t)); };
                const double det = g(x[0] - b[0]) * g(x[1] - b[1]) - g(x[0] - b[1]) * g(x[1] - b[0]);
                const auto e = log_km_density(x, b, t, nd);
                worst_cof = std::max(worst_cof, std::abs(std::exp(e.log_density) * e.sign - det) / std::abs(det));
            }
        }
        const double secs = elapsed_since(t0);
        return Outcome{worst_fd < 1e-6 && worst_cof < 1e-12 && secs < 10.0,
                       "max rel err vs finite differences " + fmt("%.2e", worst_fd) + ", n=2 cofactor " + fmt("%.2e", worst_cof)};
    });

    report(2, "closed-form shape", [] {
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<double> ts{0.25, 0.5, 0.75};
        const auto shape = solve_characteristics(AtomicMeasure({0.0}), AtomicMeasure({0.0}), ts, 1e-9);
        double err_a = 0.0, err_s = 0.0, fit_a = 0.0, fit_s = 0.0;
        for (double t : ts) {
            const double a = -2 * std::sqrt(t * (1 - t)), s = std::pow(t * (1 - t), -0.75);
            err_a = std::max(err_a, std::abs(shape.edges(t).first - a));
            err_s = std::max(err_s, std::abs(shape.edge_coefficients(t).first - s));
            // the same quantities fitted from the sampled density grid
            const auto fit = edge_coefficient(shape.density_at(t), Side::left);
            fit_a = std::max(fit_a, std::abs(fit.edge - a));
            fit_s = std::max(fit_s, std::abs(fit.s - s));
        }
        const double secs = elapsed_since(t0);
        return Outcome{std::max({err_a, err_s, fit_a, fit_s}) < 1e-3 && secs < 60.0,
                       "max |a err| " + fmt("%.1e", err_a) + ", |s err| " + fmt("%.1e", err_s) + "; grid fit |a err| " +
                           fmt("%.1e", fit_a) + ", |s err| " + fmt("%.1e", fit_s)};
    });

    report(3, "drift identity", [] {
        const auto t0 = std::chrono::steady_clock::now();
        const auto shape = watermelon_shape({0.5});
        std::mt19937_64 rng(3);
        std::normal_distribution<double> z(0.0, 0.5);
        double worst_g = 0.0;
        for (double t : {0.05, 0.25, 0.5, 0.75, 0.95}) {
            std::vector<double> x(16);
            for (auto& v : x) v = z(rng);
            std::sort(x.begin(), x.end());
            const double n = 16.0;
            const auto km = km_drift_confluent(x, 0.0, t, n);
            for (std::size_t i = 0; i < x.size(); ++i) {
                double inter = 0.0;
                for (std::size_t j = 0; j < x.size(); ++j)
                    if (j != i) inter += 1.0 / (x[i] - x[j]);
                worst_g = std::max(worst_g, std::abs(compute_g(shape, t, x[i]) - (km[i] - inter) / n));
            }
        }
        BridgeSpec spec;
        spec.n = 16;
        spec.a = WeylPoint::closed(std::vector<double>(16, 0.0));
        spec.b = spec.a;
        spec.record_times = {0.25, 0.5, 0.75, 0.99};
        spec.drift_mode = DriftMode::confluent;
        spec.samples = 20;
        spec.seed = 11;
        const auto exact = simulate_bridge(spec);
        const auto mf = simulate_meanfield(spec, shape);
        double worst_path = 0.0;
        for (std::size_t k = 0; k < exact.positions().size(); ++k)
            worst_path = std::max(worst_path, std::abs(exact.positions()[k] - mf.positions()[k]));
        const double secs = elapsed_since(t0);
        return Outcome{worst_g < 1e-6 && worst_path < 1e-10 && secs < 10.0,
                       "max |g - drift| " + fmt("%.1e", worst_g) + ", pathwise max dev " + fmt("%.1e", worst_path)};
    });

    const fs::path d4 = fresh(root, "density_w1");
    report(4, "density law", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        if (run("simulate", kDensityRun, d4, 1) != 0) return Outcome{false, "simulate run failed"};
        const double secs = elapsed_since(t0);
        const auto e = read_ensemble_binary((d4 / "paths.bin").string());
        const double w1 = wasserstein1(e.pooled(e.time_index(0.5)), semicircle_density(1.0));
        return Outcome{w1 < 0.05 && secs < 120.0, "n=64 t=0.5 200 samples, W1 to semicircle(1) = " + fmt("%.4f", w1)};
    });

    const fs::path d5 = fresh(root, "edge");
    report(5, "edge universality", [&] {
        if (run("edgestats", kEdgeRun, d5, 1) != 0) return Outcome{false, "edgestats run failed"};
        const auto s = read_json(d5 / "summary.json");
        const double ks = s["ks_tw2"], mean = s["eta_mean"], tw = s["tw2_mean"];
        return Outcome{ks <= 0.10 && std::abs(mean - tw) <= 0.2,
                       "m=2000 KS " + fmt("%.4f", ks) + ", mean eta " + fmt("%.4f", mean) + " vs TW2 " + fmt("%.4f", tw) +
                           ", var eta " + fmt("%.4f", s["eta_variance"].get<double>())};
    });

    report(6, "rigidity scaling", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const fs::path d = fresh(root, "rigidity");
        json cfg{{"preset", "watermelon"}, {"ns", {32, 64, 128}}, {"samples", 200}, {"seed", 5}, {"t", 0.5},
                 {"z", json::array({json::array({0.0, 1.0})})}};
        if (run("rigidity", cfg, d, 1) != 0) return Outcome{false, "rigidity run failed"};
        const double secs = elapsed_since(t0);
        const auto r = read_json(d / "rigidity.json");
        bool ok = secs < 600.0;
        std::string detail = "bulk ratios";
        for (const auto* key : {"bulk_ratios", "stieltjes_ratios"}) {
            if (std::string(key) == "stieltjes_ratios") detail += ", Stieltjes(z=i) ratios";
            for (const auto& v : r[key]) {
                if (v.is_null()) {
                    ok = false;
                    detail += " null";
                    continue;
                }
                const double x = v;
                ok = ok && x >= 1.4 && x <= 3.0;
                detail += fmt(" %.2f", x);
            }
        }
        return Outcome{ok, detail};
    });

    report(7, "dominance", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const fs::path d = fresh(root, "dominance");
        json cfg{{"preset", "watermelon"}, {"n", 16}, {"samples", 1000}, {"shift", 0.1}, {"seed", 9},
                 {"record_times", {0.25, 0.5, 0.75}}};
        if (run("dominance", cfg, d, 1) != 0) return Outcome{false, "dominance run failed"};
        const double secs = elapsed_since(t0);
        const auto r = read_json(d / "dominance.json");
        double worst = 0.0;
        for (const auto& pt : r["per_time"])
            for (double e : pt["excess"]) worst = std::max(worst, e);
        const std::size_t v = r["total_violations"];
        return Outcome{v == 0 && secs < 120.0, "violations " + std::to_string(v) + " (max excess " + fmt("%.4f", worst) +
                                                   ", band " + fmt("%.4f", r["per_time"][0]["band"].get<double>()) + ")"};
    });

    report(8, "TW2 oracle", [] {
        const auto t0 = std::chrono::steady_clock::now();
        const auto table = TWTable::build();
        const double secs = elapsed_since(t0);
        // published constants of the GUE Tracy-Widom law
        const double dm = std::abs(table.mean() - (-1.7710868074)), dv = std::abs(table.variance() - 0.8131947928);
        return Outcome{table.max_node_difference() < 1e-6 && dm < 5e-4 && dv < 5e-4 && secs < 60.0,
                       "|F64-F128| max " + fmt("%.1e", table.max_node_difference()) + ", mean " + fmt("%.6f", table.mean()) +
                           ", var " + fmt("%.6f", table.variance())};
    });

    report(9, "Calogero-Moser energy", [] {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> x(8), v(8);
        for (int i = 0; i < 8; ++i) {
            x[static_cast<std::size_t>(i)] = -3.5 + 1.0 * i + 0.1 * u(rng);
            v[static_cast<std::size_t>(i)] = 0.3 * u(rng);
        }
        std::sort(v.begin(), v.end());  // attractive pair force: spreading data avoid collisions before t = 1
        const auto traj = cm_integrate(make_cm_state(x, v), 1.0, 1e-4);
        const double h0 = traj.front().energy;
        double worst = 0.0;
        for (const auto& s : traj) worst = std::max(worst, std::abs(s.energy - h0) / std::abs(h0));
        const double secs = elapsed_since(t0);
        return Outcome{worst < 1e-8 && secs < 10.0, "max relative energy drift " + fmt("%.2e", worst)};
    });

    report(10, "determinism", [&] {
        const fs::path r4 = fresh(root, "density_w1_rerun"), r5 = fresh(root, "edge_rerun");
        if (run("simulate", kDensityRun, r4, many) != 0 || run("edgestats", kEdgeRun, r5, many) != 0)
            return Outcome{false, "rerun failed"};
        bool same = true;
        std::string diff;
        for (const char* f : {"paths.csv", "paths.bin", "density_t0.5.csv", "summary.json", "manifest.json"})
            if (slurp(d4 / f) != slurp(r4 / f)) same = false, diff += std::string(" ") + f;
        for (const char* f : {"edge_samples.csv", "cdf_overlay.csv", "summary.json", "manifest.json"})
            if (slurp(d5 / f) != slurp(r5 / f)) same = false, diff += std::string(" edge/") + f;
        return Outcome{same, same ? "runs 4 and 5 byte-identical at 1 and " + std::to_string(many) + " workers"
                                  : "differs:" + diff};
    });

    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
