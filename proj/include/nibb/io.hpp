#pragma once

// File formats: ensembles as CSV (sample,time,rank,position) or a binary
// slice file; shapes and reports as JSON; edge samples as one-column CSV.
//
// Binary layout (little-endian):
//   char[8] "NIBPATH1", u64 n, u64 times, u64 samples,
//   f64 times[times], f64 positions[samples][times][n].

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nibb/burgers.hpp"
#include "nibb/errors.hpp"
#include "nibb/sde.hpp"
#include "nibb/stats.hpp"

namespace nibb {

using json = nlohmann::ordered_json;

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw UsageError("cannot open " + path + " for writing");
    return out;
}

// --- ensembles -------------------------------------------------------------

inline void write_ensemble_csv(const PathEnsemble& e, const std::string& path) {
    auto out = open_out(path);
    out << "sample,time,rank,position\n";
    for (std::size_t s = 0; s < e.samples(); ++s)
        for (std::size_t k = 0; k < e.times().size(); ++k) {
            auto x = e.slice(s, k);
            for (std::size_t i = 0; i < e.n(); ++i)
                out << s << ',' << format_double(e.times()[k]) << ',' << i + 1 << ',' << format_double(x[i]) << '\n';
        }
}

namespace detail {
static_assert(std::endian::native == std::endian::little, "binary ensemble format assumes a little-endian host");

template <class T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw ValidationError("binary ensemble: truncated file");
    return v;
}
inline constexpr char kPathMagic[8] = {'N', 'I', 'B', 'P', 'A', 'T', 'H', '1'};
}  // namespace detail

inline void write_ensemble_binary(const PathEnsemble& e, const std::string& path) {
    auto out = open_out(path, std::ios::binary);
    out.write(detail::kPathMagic, 8);
    detail::put<std::uint64_t>(out, e.n());
    detail::put<std::uint64_t>(out, e.times().size());
    detail::put<std::uint64_t>(out, e.samples());
    for (double t : e.times()) detail::put(out, t);
    out.write(reinterpret_cast<const char*>(e.positions().data()),
              static_cast<std::streamsize>(e.positions().size() * sizeof(double)));
}

/// Reads the binary slice file back. The spec fields that are not stored
/// (boundary data, seed) are left at their defaults.
inline PathEnsemble read_ensemble_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, detail::kPathMagic, 8) != 0) throw ValidationError(path + ": not a path ensemble file");
    BridgeSpec spec;
    spec.n = detail::get<std::uint64_t>(in);
    const auto nt = detail::get<std::uint64_t>(in);
    spec.samples = detail::get<std::uint64_t>(in);
    for (std::uint64_t k = 0; k < nt; ++k) spec.record_times.push_back(detail::get<double>(in));
    std::vector<double> pos(spec.n * nt * spec.samples);
    in.read(reinterpret_cast<char*>(pos.data()), static_cast<std::streamsize>(pos.size() * sizeof(double)));
    if (!in) throw ValidationError(path + ": truncated position block");
    return PathEnsemble(std::move(spec), std::move(pos));
}

// --- shapes ----------------------------------------------------------------

inline json to_json(const ShapeDiagnostics& d) {
    return json{{"method", d.method},
                {"iterations", d.iterations},
                {"final_mismatch", d.final_mismatch},
                {"stationarity", d.stationarity},
                {"continuity_residual", d.continuity_residual},
                {"burgers_residual", d.burgers_residual},
                {"tolerance", d.tolerance}};
}

inline json nan_as_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const LimitShape& shape) {
    json j;
    j["times"] = shape.times();
    json slices = json::array();
    for (const auto& s : shape.slices()) {
        slices.push_back(json{{"t", s.t},
                              {"a", s.a},
                              {"b", s.b},
                              {"s_left", nan_as_null(s.s_left)},
                              {"s_right", nan_as_null(s.s_right)},
                              {"grid", s.density.grid()},
                              {"density", s.density.values()},
                              {"velocity", s.velocity},
                              {"drift", s.drift}});
    }
    j["slices"] = slices;
    j["diagnostics"] = to_json(shape.diagnostics());
    if (shape.closed_form()) j["closed_form"] = json{{"c0", shape.closed_form()->c0}, {"c1", shape.closed_form()->c1}};
    return j;
}

inline LimitShape shape_from_json(const json& j) {
    if (j.contains("closed_form")) {
        FreeBridgeClosedForm cf{j["closed_form"]["c0"].get<double>(), j["closed_form"]["c1"].get<double>()};
        auto times = j["times"].get<std::vector<double>>();
        std::size_t points = j["slices"].empty() ? kDefaultGridPoints : j["slices"][0]["grid"].size();
        return LimitShape::from_closed_form(cf, times, points);
    }
    std::vector<ShapeSlice> slices;
    for (const auto& js : j.at("slices")) {
        ShapeSlice s;
        s.t = js.at("t").get<double>();
        s.density = GridDensity(js.at("grid").get<std::vector<double>>(), js.at("density").get<std::vector<double>>());
        s.velocity = js.at("velocity").get<std::vector<double>>();
        s.drift = js.at("drift").get<std::vector<double>>();
        s.a = js.at("a").get<double>();
        s.b = js.at("b").get<double>();
        auto opt = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
        s.s_left = opt(js.at("s_left"));
        s.s_right = opt(js.at("s_right"));
        slices.push_back(std::move(s));
    }
    ShapeDiagnostics d;
    if (j.contains("diagnostics")) {
        const auto& jd = j["diagnostics"];
        d.method = jd.value("method", "");
        d.iterations = jd.value("iterations", 0);
        d.final_mismatch = jd.value("final_mismatch", 0.0);
        d.stationarity = jd.value("stationarity", 0.0);
        d.continuity_residual = jd.value("continuity_residual", 0.0);
        d.burgers_residual = jd.value("burgers_residual", 0.0);
        d.tolerance = jd.value("tolerance", 0.0);
    }
    return LimitShape::from_slices(std::move(slices), d);
}

// --- reports ---------------------------------------------------------------

inline json to_json(const RigidityReport& r) {
    return json{{"t", r.t},
                {"n", r.n},
                {"samples", r.samples},
                {"bulk_median", r.bulk_median},
                {"median_dev", r.median_dev},
                {"p95_dev", r.p95_dev},
                {"edge_excess", r.edge_excess}};
}

inline json to_json(const StieltjesPoint& p) {
    json j{{"z_re", p.z.real()},
           {"z_im", p.z.imag()},
           {"in_domain", p.in_domain},
           {"threshold", p.threshold},
           {"domain_value", p.domain_value}};
    if (p.in_domain) {
        j["median"] = p.median;
        j["max"] = p.max;
    }
    return j;
}

inline json to_json(const DominanceReport& r) {
    return json{{"t", r.t}, {"alpha", r.alpha}, {"band", r.band}, {"excess", r.excess}, {"violations", r.violations}};
}

inline json edge_summary(const EdgeSampleSet& e) {
    return json{{"t", e.t}, {"side", to_string(e.side)}, {"edge", e.edge}, {"s", e.s}, {"n", e.n},
                {"samples", e.eta.size()}, {"convention", e.convention}};
}

inline void write_edge_samples_csv(const EdgeSampleSet& e, const std::string& path) {
    auto out = open_out(path);
    out << "eta\n";
    for (double v : e.eta) out << format_double(v) << '\n';
}

inline void write_json(const json& j, const std::string& path) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

}  // namespace nibb
