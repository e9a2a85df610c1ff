#pragma once

// Batch experiments driven by a JSON config: simulate, limitshape,
// edgestats, rigidity, dominance, tw2. Each run writes manifest.json
// (deterministic) and timings.json (wall times, worker count) next to its
// artifacts.

#include <chrono>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "nibb/airy.hpp"
#include "nibb/burgers.hpp"
#include "nibb/errors.hpp"
#include "nibb/io.hpp"
#include "nibb/measures.hpp"
#include "nibb/sde.hpp"
#include "nibb/stats.hpp"

namespace nibb {

inline constexpr const char* kVersion = "0.1.0";

enum class ExitCode : int { ok = 0, validation = 2, numerical = 3 };

struct ExperimentConfig {
    std::string command;
    std::string preset;
    std::size_t n = 64;
    std::size_t samples = 200;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    json start = "point(0)";
    json end = "point(0)";
    std::vector<double> record_times{0.25, 0.5, 0.75};
    DriftMode drift_mode = DriftMode::mean_field;
    double dt_max = 1e-3;
    double dt_edge_factor = 0.1;
    double opening_time = 1e-4;
    double t = 0.5;
    Side side = Side::right;
    std::vector<std::size_t> ns{32, 64, 128};
    std::vector<std::complex<double>> z{{0.0, 1.0}};
    double shift = 0.1;
    std::size_t grid_points = kDefaultGridPoints;
    double tol = 1e-9;
    SolverOptions solver;
    std::vector<double> shape_times;  // empty: 0, 0.02, ..., 1
    std::optional<double> s;
    double tw_lo = -10.0, tw_hi = 6.0, tw_step = 0.02;
    std::size_t tw_nodes = 64;
    bool write_paths = true;

    json echo;  // effective config, without the worker count
    std::vector<std::string> warnings;
};

namespace detail {

inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "preset", "n", "samples", "seed", "workers", "start", "end", "record_times", "drift_mode", "dt_max",
        "dt_edge_factor", "opening_time", "t", "side", "ns", "z", "shift", "grid_points", "tol", "solver",
        "shape_times", "s", "tw2", "write_paths"};
    return keys;
}

template <class T>
T get_checked(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

inline json preset_values(const std::string& name) {
    if (name == "watermelon") return json{{"start", "point(0)"}, {"end", "point(0)"}};
    if (name == "semicircle-to-semicircle") return json{{"start", "semicircle(2)"}, {"end", "semicircle(2)"}};
    throw ValidationError("config: unknown preset '" + name + "'");
}

}  // namespace detail

/// Parses a config object. Preset values are applied first; explicit keys override them.
inline ExperimentConfig parse_config(const std::string& command, const json& raw) {
    if (!raw.is_object()) throw ValidationError("config: top level must be a JSON object");
    for (auto it = raw.begin(); it != raw.end(); ++it)
        if (!detail::known_keys().count(it.key())) throw ValidationError("config: unknown key '" + it.key() + "'");

    json j = json::object();
    if (raw.contains("preset")) {
        j = detail::preset_values(detail::get_checked<std::string>(raw, "preset"));
        j["preset"] = raw["preset"];
    }
    for (auto it = raw.begin(); it != raw.end(); ++it) j[it.key()] = it.value();

    ExperimentConfig c;
    c.command = command;
    if (j.contains("preset")) c.preset = j["preset"].get<std::string>();
    if (j.contains("n")) c.n = detail::get_checked<std::size_t>(j, "n");
    if (j.contains("samples")) {
        if (j["samples"].is_number_integer() && j["samples"].get<long long>() < 0)
            throw ValidationError("config: samples must be >= 1");
        c.samples = detail::get_checked<std::size_t>(j, "samples");
    }
    if (j.contains("seed")) c.seed = detail::get_checked<std::uint64_t>(j, "seed");
    if (j.contains("workers")) c.workers = detail::get_checked<std::size_t>(j, "workers");
    if (j.contains("start")) c.start = j["start"];
    if (j.contains("end")) c.end = j["end"];
    if (j.contains("record_times")) c.record_times = detail::get_checked<std::vector<double>>(j, "record_times");
    if (j.contains("drift_mode")) c.drift_mode = parse_drift_mode(detail::get_checked<std::string>(j, "drift_mode"));
    if (j.contains("dt_max")) c.dt_max = detail::get_checked<double>(j, "dt_max");
    if (j.contains("dt_edge_factor")) c.dt_edge_factor = detail::get_checked<double>(j, "dt_edge_factor");
    if (j.contains("opening_time")) c.opening_time = detail::get_checked<double>(j, "opening_time");
    if (j.contains("t")) c.t = detail::get_checked<double>(j, "t");
    if (j.contains("side")) {
        auto s = detail::get_checked<std::string>(j, "side");
        if (s != "left" && s != "right") throw ValidationError("config: side must be left or right");
        c.side = s == "left" ? Side::left : Side::right;
    }
    if (j.contains("ns")) c.ns = detail::get_checked<std::vector<std::size_t>>(j, "ns");
    if (j.contains("z")) {
        c.z.clear();
        for (const auto& zz : j["z"]) {
            if (!zz.is_array() || zz.size() != 2) throw ValidationError("config: z entries must be [re, im]");
            c.z.emplace_back(zz[0].get<double>(), zz[1].get<double>());
        }
    }
    if (j.contains("shift")) c.shift = detail::get_checked<double>(j, "shift");
    if (j.contains("grid_points")) c.grid_points = detail::get_checked<std::size_t>(j, "grid_points");
    if (j.contains("tol")) c.tol = detail::get_checked<double>(j, "tol");
    if (j.contains("solver")) {
        const auto& js = j["solver"];
        if (js.contains("rank_cells")) c.solver.rank_cells = detail::get_checked<std::size_t>(js, "rank_cells");
        if (js.contains("time_steps")) c.solver.time_steps = detail::get_checked<std::size_t>(js, "time_steps");
        if (js.contains("max_iter")) c.solver.max_iter = detail::get_checked<int>(js, "max_iter");
    }
    c.solver.grid_points = c.grid_points;
    if (j.contains("shape_times")) c.shape_times = detail::get_checked<std::vector<double>>(j, "shape_times");
    if (j.contains("s")) c.s = detail::get_checked<double>(j, "s");
    if (j.contains("tw2")) {
        const auto& jt = j["tw2"];
        if (jt.contains("lo")) c.tw_lo = detail::get_checked<double>(jt, "lo");
        if (jt.contains("hi")) c.tw_hi = detail::get_checked<double>(jt, "hi");
        if (jt.contains("step")) c.tw_step = detail::get_checked<double>(jt, "step");
        if (jt.contains("nodes")) c.tw_nodes = detail::get_checked<std::size_t>(jt, "nodes");
    }
    if (j.contains("write_paths")) c.write_paths = detail::get_checked<bool>(j, "write_paths");

    if (c.n == 0) throw ValidationError("config: n must be >= 1");
    if (c.samples == 0) throw ValidationError("config: samples must be >= 1");
    if (c.grid_points < 16) throw ValidationError("config: grid_points must be >= 16");
    j.erase("workers");
    c.echo = j;
    return c;
}

inline ExperimentConfig load_config(const std::string& command, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    json raw;
    try {
        raw = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config: JSON parse error: ") + e.what());
    }
    return parse_config(command, raw);
}

inline Measure1D measure_from_config(const json& j, std::size_t points) {
    if (j.is_string()) return parse_named_measure(j.get<std::string>(), points);
    if (j.is_object() && j.contains("density_csv")) return load_density_csv(j["density_csv"].get<std::string>());
    if (j.is_object() && j.contains("atoms_csv")) return load_atomic_csv(j["atoms_csv"].get<std::string>());
    throw ValidationError("config: boundary measure must be a named measure or {density_csv|atoms_csv: path}");
}

// Single-interval, bounded-below check on a boundary density; reported as a warning.
inline void check_assumptions(const Measure1D& m, const char* which, std::vector<std::string>& warnings) {
    auto* d = std::get_if<GridDensity>(&m);
    if (!d) return;
    try {
        detail::check_single_interval(*d, 1e-3, which);
    } catch (const TopologyError& e) {
        warnings.emplace_back(e.what());
    }
}

/// Everything a run needs after the config is resolved.
struct Pipeline {
    ExperimentConfig cfg;
    Measure1D mu_a, mu_b;
    std::optional<LimitShape> shape;
    json timings = json::object();

    explicit Pipeline(ExperimentConfig c)
        : cfg(std::move(c)),
          mu_a(measure_from_config(cfg.start, cfg.grid_points)),
          mu_b(measure_from_config(cfg.end, cfg.grid_points)) {
        check_assumptions(mu_a, "start", cfg.warnings);
        check_assumptions(mu_b, "end", cfg.warnings);
    }

    bool point_to_point() const {
        auto pt = [](const Measure1D& m) {
            auto* a = std::get_if<AtomicMeasure>(&m);
            return a && a->lo() == a->hi();
        };
        return pt(mu_a) && pt(mu_b);
    }

    template <class F>
    auto timed(const std::string& phase, F&& f) {
        auto t0 = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            timings[phase] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        } else {
            auto r = f();
            timings[phase] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            return r;
        }
    }

    const LimitShape& limit_shape() {
        if (shape) return *shape;
        std::vector<double> times = cfg.shape_times;
        if (times.empty()) {
            for (int k = 0; k <= 50; ++k) times.push_back(k / 50.0);
        }
        for (double t : cfg.record_times) times.push_back(t);
        times.push_back(cfg.t);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
        if (point_to_point()) {
            std::erase_if(times, [](double t) { return t <= 0.0 || t >= 1.0; });
        }
        shape = timed("limit_shape", [&] { return solve_characteristics(mu_a, mu_b, times, cfg.tol, cfg.solver); });
        return *shape;
    }

    BridgeSpec bridge_spec(std::size_t n, std::vector<double> record_times) const {
        BridgeSpec s;
        s.n = n;
        s.a = boundary_configuration(mu_a, n);
        s.b = boundary_configuration(mu_b, n);
        s.record_times = std::move(record_times);
        s.drift_mode = cfg.drift_mode;
        s.dt_max = cfg.dt_max;
        s.dt_edge_factor = cfg.dt_edge_factor;
        s.opening_time = cfg.opening_time;
        s.seed = cfg.seed;
        s.samples = cfg.samples;
        s.workers = cfg.workers;
        if (s.drift_mode == DriftMode::exact_kernel && s.b.is_confluent()) s.drift_mode = DriftMode::confluent;
        return s;
    }

    PathEnsemble sample(const BridgeSpec& spec, const std::string& phase) {
        if (spec.drift_mode == DriftMode::mean_field) {
            const LimitShape& sh = limit_shape();
            return timed(phase, [&] { return simulate_meanfield(spec, sh); });
        }
        return timed(phase, [&] { return simulate_bridge(spec); });
    }
};

// --- plot data -------------------------------------------------------------

struct PlotInputs {
    const PathEnsemble* ensemble = nullptr;
    const LimitShape* shape = nullptr;
    double t = 0.0;
    const EdgeSampleSet* edges = nullptr;
    const TWTable* table = nullptr;
    const RigidityReport* rigidity = nullptr;
};

/// Writes one plot-ready CSV: "density" (x, rho*, rho_hat), "cdf" (s, F2, F_hat)
/// or "rigidity" (rank, median, p95).
inline void emit_plotdata(const PlotInputs& in, const std::string& kind, const std::string& path) {
    if (kind == "density") {
        if (!in.ensemble || in.ensemble->samples() == 0 || !in.shape) throw UsageError("emit_plotdata: density overlay needs an ensemble and a shape");
        const GridDensity rho = in.shape->density_at(in.t);
        const AtomicMeasure pooled = in.ensemble->pooled(in.ensemble->time_index(in.t));
        // Histogram estimate on 64 bins spanning the support.
        const std::size_t bins = 64;
        const double lo = rho.lo(), hi = rho.hi(), w = (hi - lo) / static_cast<double>(bins);
        std::vector<double> h(bins, 0.0);
        for (double x : pooled.atoms()) {
            if (x < lo || x >= hi) continue;
            h[std::min(bins - 1, static_cast<std::size_t>((x - lo) / w))] += 1.0;
        }
        for (double& v : h) v /= static_cast<double>(pooled.size()) * w;
        auto out = open_out(path);
        out << "x,rho_limit,rho_empirical\n";
        for (std::size_t k = 0; k < rho.points(); ++k) {
            const double x = rho.grid()[k];
            const std::size_t b = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, (x - lo) / w)));
            out << format_double(x) << ',' << format_double(rho.values()[k]) << ',' << format_double(h[b]) << '\n';
        }
        return;
    }
    if (kind == "cdf") {
        if (!in.edges || in.edges->eta.empty() || !in.table) throw UsageError("emit_plotdata: cdf overlay needs edge samples and a TW2 table");
        std::vector<double> eta = in.edges->eta;
        std::sort(eta.begin(), eta.end());
        auto out = open_out(path);
        out << "s,F2,F_empirical\n";
        for (double s : in.table->s_grid()) {
            const auto cnt = std::upper_bound(eta.begin(), eta.end(), s) - eta.begin();
            out << format_double(s) << ',' << format_double(in.table->cdf(s)) << ','
                << format_double(static_cast<double>(cnt) / static_cast<double>(eta.size())) << '\n';
        }
        return;
    }
    if (kind == "rigidity") {
        if (!in.rigidity || in.rigidity->samples == 0) throw UsageError("emit_plotdata: rigidity curve needs a report");
        auto out = open_out(path);
        out << "rank,median_dev,p95_dev\n";
        for (std::size_t i = 0; i < in.rigidity->n; ++i)
            out << i + 1 << ',' << format_double(in.rigidity->median_dev[i]) << ','
                << format_double(in.rigidity->p95_dev[i]) << '\n';
        return;
    }
    throw UsageError("emit_plotdata: unknown kind '" + kind + "'");
}

// --- commands --------------------------------------------------------------

struct RunResult {
    json manifest;
    json summary;
};

namespace detail {

inline std::string path_in(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

inline std::string time_tag(double t) {
    std::ostringstream os;
    os << t;
    return os.str();
}

inline double ratio_or_null(double a, double b) { return b > 0.0 ? a / b : std::numeric_limits<double>::quiet_NaN(); }

inline RunResult cmd_simulate(Pipeline& p, const std::string& out, std::vector<std::string>& artifacts) {
    const BridgeSpec spec = p.bridge_spec(p.cfg.n, p.cfg.record_times);
    const PathEnsemble e = p.sample(spec, "simulate");
    if (p.cfg.write_paths) {
        write_ensemble_csv(e, path_in(out, "paths.csv"));
        write_ensemble_binary(e, path_in(out, "paths.bin"));
        artifacts.insert(artifacts.end(), {"paths.csv", "paths.bin"});
    }
    json summary = json::object();
    summary["drift_mode"] = to_string(spec.drift_mode);
    json w1 = json::array();
    if (p.shape || p.point_to_point()) {
        const LimitShape& sh = p.limit_shape();
        for (double t : spec.record_times) {
            if (t <= 0.0 || t >= 1.0 || !sh.covers(t)) continue;
            const std::string name = "density_t" + time_tag(t) + ".csv";
            emit_plotdata({&e, &sh, t, nullptr, nullptr, nullptr}, "density", path_in(out, name));
            artifacts.push_back(name);
            w1.push_back(json{{"t", t}, {"w1", wasserstein1(e.pooled(e.time_index(t)), sh.density_at(t))}});
        }
    }
    summary["wasserstein1_to_limit"] = w1;
    write_json(summary, path_in(out, "summary.json"));
    artifacts.push_back("summary.json");
    return {json::object(), summary};
}

inline RunResult cmd_limitshape(Pipeline& p, const std::string& out, std::vector<std::string>& artifacts) {
    const LimitShape& sh = p.limit_shape();
    write_json(to_json(sh), path_in(out, "shape.json"));
    auto csv = open_out(path_in(out, "edges.csv"));
    csv << "t,a,b,s_left,s_right\n";
    for (const auto& s : sh.slices())
        csv << format_double(s.t) << ',' << format_double(s.a) << ',' << format_double(s.b) << ','
            << format_double(s.s_left) << ',' << format_double(s.s_right) << '\n';
    artifacts.insert(artifacts.end(), {"shape.json", "edges.csv"});
    json summary{{"diagnostics", to_json(sh.diagnostics())}};
    write_json(summary, path_in(out, "summary.json"));
    artifacts.push_back("summary.json");
    return {json::object(), summary};
}

inline RunResult cmd_edgestats(Pipeline& p, const std::string& out, std::vector<std::string>& artifacts) {
    if (!(p.cfg.t > 0.0 && p.cfg.t < 1.0)) throw ValidationError("edgestats: t must lie in (0,1)");
    const BridgeSpec spec = p.bridge_spec(p.cfg.n, {p.cfg.t});
    const PathEnsemble e = p.sample(spec, "simulate");
    const LimitShape& sh = p.limit_shape();
    const EdgeSampleSet edges = edge_statistics(e, sh, p.cfg.t, p.cfg.side);
    const TWTable table = p.timed("tw2_table", [&] {
        return TWTable::build(p.cfg.tw_lo, p.cfg.tw_hi, p.cfg.tw_step, p.cfg.tw_nodes, p.cfg.workers);
    });
    write_edge_samples_csv(edges, path_in(out, "edge_samples.csv"));
    emit_plotdata({nullptr, nullptr, 0.0, &edges, &table, nullptr}, "cdf", path_in(out, "cdf_overlay.csv"));
    artifacts.insert(artifacts.end(), {"edge_samples.csv", "cdf_overlay.csv"});

    double mean = 0.0, var = 0.0;
    for (double v : edges.eta) mean += v;
    mean /= static_cast<double>(edges.eta.size());
    for (double v : edges.eta) var += (v - mean) * (v - mean);
    var /= static_cast<double>(std::max<std::size_t>(1, edges.eta.size() - 1));
    json summary = edge_summary(edges);
    summary["drift_mode"] = to_string(spec.drift_mode);
    summary["ks_tw2"] = ks_distance(edges.eta, table);
    summary["eta_mean"] = mean;
    summary["eta_variance"] = var;
    summary["tw2_mean"] = table.mean();
    summary["tw2_variance"] = table.variance();
    write_json(summary, path_in(out, "summary.json"));
    artifacts.push_back("summary.json");
    return {json::object(), summary};
}

inline RunResult cmd_rigidity(Pipeline& p, const std::string& out, std::vector<std::string>& artifacts) {
    if (p.cfg.ns.empty()) throw ValidationError("rigidity: ns must not be empty");
    json per_n = json::array();
    std::vector<double> bulk, stj;
    const LimitShape& sh = p.limit_shape();
    for (std::size_t n : p.cfg.ns) {
        const BridgeSpec spec = p.bridge_spec(n, {p.cfg.t});
        const PathEnsemble e = p.sample(spec, "simulate_n" + std::to_string(n));
        const RigidityReport r = rigidity_report(e, sh, p.cfg.t);
        const auto sc = stieltjes_compare(e, sh, p.cfg.t, p.cfg.z);
        json js = json::array();
        for (const auto& pt : sc) js.push_back(to_json(pt));
        per_n.push_back(json{{"n", n}, {"rigidity", to_json(r)}, {"stieltjes", js}});
        bulk.push_back(r.bulk_median);
        stj.push_back(!sc.empty() && sc.front().in_domain ? sc.front().median : std::numeric_limits<double>::quiet_NaN());
        const std::string name = "rigidity_n" + std::to_string(n) + ".csv";
        emit_plotdata({nullptr, nullptr, 0.0, nullptr, nullptr, &r}, "rigidity", path_in(out, name));
        artifacts.push_back(name);
    }
    json ratios_bulk = json::array(), ratios_st = json::array();
    for (std::size_t k = 1; k < bulk.size(); ++k) {
        ratios_bulk.push_back(nan_as_null(ratio_or_null(bulk[k - 1], bulk[k])));
        ratios_st.push_back(nan_as_null(ratio_or_null(stj[k - 1], stj[k])));
    }
    json summary{{"t", p.cfg.t}, {"per_n", per_n}, {"bulk_ratios", ratios_bulk}, {"stieltjes_ratios", ratios_st}};
    write_json(summary, path_in(out, "rigidity.json"));
    artifacts.push_back("rigidity.json");
    return {json::object(), json{{"bulk_ratios", ratios_bulk}, {"stieltjes_ratios", ratios_st}}};
}

inline RunResult cmd_dominance(Pipeline& p, const std::string& out, std::vector<std::string>& artifacts) {
    if (!(p.cfg.shift > 0.0)) throw ValidationError("dominance: shift must be positive");
    const BridgeSpec lo = p.bridge_spec(p.cfg.n, p.cfg.record_times);
    BridgeSpec hi = lo;
    std::vector<double> bh = hi.b.coords();
    for (double& v : bh) v += p.cfg.shift;
    hi.b = WeylPoint::closed(bh);
    hi.seed = lo.seed + 1;  // independent ensembles for the two-sample band
    if (hi.drift_mode == DriftMode::mean_field) {
        if (!p.point_to_point()) throw ValidationError("dominance: mean-field mode needs point-mass boundary data");
        hi.drift_mode = DriftMode::confluent;
    }
    BridgeSpec lo2 = lo;
    if (lo2.drift_mode == DriftMode::mean_field) lo2.drift_mode = DriftMode::confluent;
    const PathEnsemble el = p.sample(lo2, "simulate_lo");
    const PathEnsemble eh = p.sample(hi, "simulate_hi");
    json reports = json::array();
    std::size_t total = 0;
    for (double t : lo.record_times) {
        const DominanceReport r = dominance_test(eh, el, t);
        total += r.violations.size();
        reports.push_back(to_json(r));
    }
    json summary{{"shift", p.cfg.shift}, {"seed_lo", lo2.seed}, {"seed_hi", hi.seed}, {"total_violations", total},
                 {"per_time", reports}};
    write_json(summary, path_in(out, "dominance.json"));
    artifacts.push_back("dominance.json");
    return {json::object(), json{{"total_violations", total}}};
}

inline RunResult cmd_tw2(Pipeline& p, const std::string& out, std::vector<std::string>& artifacts, std::ostream& log) {
    if (p.cfg.s) {
        const double F = p.timed("tw2", [&] { return tw2_cdf(*p.cfg.s, p.cfg.tw_nodes); });
        log << std::setprecision(12) << F << '\n';
        json summary{{"s", *p.cfg.s}, {"F2", F}, {"nodes", p.cfg.tw_nodes}};
        write_json(summary, path_in(out, "tw2.json"));
        artifacts.push_back("tw2.json");
        return {json::object(), summary};
    }
    const TWTable table = p.timed("tw2_table", [&] {
        return TWTable::build(p.cfg.tw_lo, p.cfg.tw_hi, p.cfg.tw_step, p.cfg.tw_nodes, p.cfg.workers);
    });
    table.write_csv(path_in(out, "tw2_table.csv"));
    json summary{{"mean", table.mean()}, {"variance", table.variance()},
                 {"max_node_difference", table.max_node_difference()},
                 {"published_mean", kTw2Mean}, {"published_variance", kTw2Variance}};
    write_json(summary, path_in(out, "tw2_summary.json"));
    artifacts.insert(artifacts.end(), {"tw2_table.csv", "tw2_summary.json"});
    return {json::object(), summary};
}

}  // namespace detail

struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<double> s;
};

inline json error_json(const std::string& kind, const std::string& category, const std::string& message) {
    return json{{"error", json{{"kind", kind}, {"category", category}, {"message", message}}}};
}

/// Runs one command. Returns the process exit code; errors are written to
/// <out>/error.json and to `err`.
inline int run_command(const std::string& command, const std::optional<std::string>& config_path,
                       const std::string& out_dir, const RunOverrides& ov, std::ostream& log = std::cout,
                       std::ostream& err = std::cerr) {
    auto fail = [&](ExitCode code, const json& j) {
        err << j.dump() << '\n';
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (!ec) {
            std::ofstream f(detail::path_in(out_dir, "error.json"));
            if (f) f << j.dump(2) << '\n';
        }
        return static_cast<int>(code);
    };
    try {
        static const std::set<std::string> commands{"simulate", "limitshape", "edgestats", "rigidity", "dominance", "tw2"};
        if (!commands.count(command)) throw UsageError("unknown command '" + command + "'");
        json raw = json::object();
        if (config_path) {
            std::ifstream in(*config_path);
            if (!in) throw ValidationError("cannot open config " + *config_path);
            try {
                raw = json::parse(in);
            } catch (const json::parse_error& e) {
                throw ValidationError(std::string("config: JSON parse error: ") + e.what());
            }
        } else if (command != "tw2") {
            throw UsageError(command + " requires --config");
        }
        if (ov.seed) raw["seed"] = *ov.seed;
        if (ov.s) raw["s"] = *ov.s;
        ExperimentConfig cfg = parse_config(command, raw);
        if (ov.workers) cfg.workers = *ov.workers;
        if (cfg.workers == 0) cfg.workers = std::max(1u, std::thread::hardware_concurrency());

        std::filesystem::create_directories(out_dir);
        auto t0 = std::chrono::steady_clock::now();
        Pipeline p(std::move(cfg));
        std::vector<std::string> artifacts;
        RunResult r;
        if (command == "simulate") r = detail::cmd_simulate(p, out_dir, artifacts);
        else if (command == "limitshape") r = detail::cmd_limitshape(p, out_dir, artifacts);
        else if (command == "edgestats") r = detail::cmd_edgestats(p, out_dir, artifacts);
        else if (command == "rigidity") r = detail::cmd_rigidity(p, out_dir, artifacts);
        else if (command == "dominance") r = detail::cmd_dominance(p, out_dir, artifacts);
        else r = detail::cmd_tw2(p, out_dir, artifacts, log);

        json manifest{{"command", command},
                      {"version", kVersion},
                      {"config", p.cfg.echo},
                      {"seed", p.cfg.seed},
                      {"compiler", __VERSION__},
                      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"warnings", p.cfg.warnings},
                      {"artifacts", artifacts},
                      {"summary", r.summary}};
        if (p.shape) manifest["shape_diagnostics"] = to_json(p.shape->diagnostics());
        write_json(manifest, detail::path_in(out_dir, "manifest.json"));
        json timings = p.timings;
        timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        timings["workers"] = p.cfg.workers;
        write_json(timings, detail::path_in(out_dir, "timings.json"));
        for (const auto& w : p.cfg.warnings) err << "warning: " << w << '\n';
        return static_cast<int>(ExitCode::ok);
    } catch (const Error& e) {
        const bool validation = e.kind() == ErrorKind::validation;
        json j = error_json(validation ? "validation" : "numerical", e.category(), e.what());
        if (auto* se = dynamic_cast<const SolverError*>(&e)) j["error"]["final_mismatch"] = se->final_mismatch;
        return fail(validation ? ExitCode::validation : ExitCode::numerical, j);
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(ExitCode::validation, error_json("validation", "io", e.what()));
    }
}

}  // namespace nibb
