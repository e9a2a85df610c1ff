#pragma once

// Probability measures on the real line: sorted atomic measures and
// piecewise-linear densities on a grid, together with the transforms the
// rest of the library needs (quantiles, Stieltjes and Hilbert transforms,
// Wasserstein-1 distance).

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <limits>
#include <numbers>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "nibb/errors.hpp"

namespace nibb {

using cplx = std::complex<double>;

inline constexpr std::size_t kDefaultGridPoints = 2048;

/// Point of the Weyl chamber. Interior points are strictly increasing; the
/// closed variant (ties allowed) is only used for boundary data.
class WeylPoint {
public:
    WeylPoint() = default;

    static WeylPoint strict(std::vector<double> coords) {
        check_finite(coords);
        for (std::size_t i = 1; i < coords.size(); ++i)
            if (!(coords[i - 1] < coords[i]))
                throw ValidationError("WeylPoint: coordinates must be strictly increasing");
        return WeylPoint(std::move(coords), true);
    }

    static WeylPoint closed(std::vector<double> coords) {
        check_finite(coords);
        for (std::size_t i = 1; i < coords.size(); ++i)
            if (coords[i - 1] > coords[i])
                throw ValidationError("WeylPoint: coordinates must be non-decreasing");
        bool strict = true;
        for (std::size_t i = 1; i < coords.size(); ++i) strict = strict && coords[i - 1] < coords[i];
        return WeylPoint(std::move(coords), strict);
    }

    std::size_t size() const noexcept { return coords_.size(); }
    double operator[](std::size_t i) const { return coords_[i]; }
    const std::vector<double>& coords() const noexcept { return coords_; }
    std::span<const double> span() const noexcept { return coords_; }
    bool is_strict() const noexcept { return strict_; }

    /// True when every coordinate is the same value (confluent point).
    bool is_confluent() const noexcept {
        return !coords_.empty() && coords_.front() == coords_.back();
    }

private:
    WeylPoint(std::vector<double> c, bool strict) : coords_(std::move(c)), strict_(strict) {}

    static void check_finite(const std::vector<double>& v) {
        for (double x : v)
            if (!std::isfinite(x)) throw ValidationError("WeylPoint: non-finite coordinate");
    }

    std::vector<double> coords_;
    bool strict_ = true;
};

/// Uniform-mass atomic measure (1/n per atom).
class AtomicMeasure {
public:
    AtomicMeasure() = default;

    explicit AtomicMeasure(std::vector<double> atoms) : atoms_(std::move(atoms)) {
        if (atoms_.empty()) throw ValidationError("AtomicMeasure: no atoms");
        for (double x : atoms_)
            if (!std::isfinite(x)) throw ValidationError("AtomicMeasure: non-finite atom");
        std::sort(atoms_.begin(), atoms_.end());
    }

    std::size_t size() const noexcept { return atoms_.size(); }
    const std::vector<double>& atoms() const noexcept { return atoms_; }
    double lo() const { return atoms_.front(); }
    double hi() const { return atoms_.back(); }

    double cdf(double x) const {
        auto it = std::upper_bound(atoms_.begin(), atoms_.end(), x);
        return static_cast<double>(it - atoms_.begin()) / static_cast<double>(atoms_.size());
    }

    double mean() const {
        double s = 0.0;
        for (double x : atoms_) s += x;
        return s / static_cast<double>(atoms_.size());
    }

private:
    std::vector<double> atoms_;
};

/// Piecewise-linear probability density on a strictly increasing grid.
/// The grid spans the support; the density is zero outside it.
class GridDensity {
public:
    GridDensity() = default;

    GridDensity(std::vector<double> grid, std::vector<double> values)
        : grid_(std::move(grid)), values_(std::move(values)) {
        validate_shape();
        build_cdf();
        if (std::abs(cdf_.back() - 1.0) > 1e-8)
            throw ValidationError("GridDensity: density not normalized (mass " +
                                  std::to_string(cdf_.back()) + ")");
    }

    /// Rescales the values so the trapezoidal mass is one.
    static GridDensity normalized(std::vector<double> grid, std::vector<double> values) {
        GridDensity d;
        d.grid_ = std::move(grid);
        d.values_ = std::move(values);
        d.validate_shape();
        d.build_cdf();
        double mass = d.cdf_.back();
        if (!(mass > 0.0)) throw ValidationError("GridDensity: zero total mass");
        for (double& v : d.values_) v /= mass;
        d.build_cdf();
        return d;
    }

    template <class F>
    static GridDensity from_function(F&& f, double lo, double hi, std::size_t points = kDefaultGridPoints) {
        if (!(hi > lo) || points < 2) throw ValidationError("GridDensity: bad support or point count");
        std::vector<double> g(points), v(points);
        for (std::size_t i = 0; i < points; ++i) {
            g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
            v[i] = std::max(0.0, static_cast<double>(f(g[i])));
        }
        g.back() = hi;
        return normalized(std::move(g), std::move(v));
    }

    const std::vector<double>& grid() const noexcept { return grid_; }
    const std::vector<double>& values() const noexcept { return values_; }
    std::size_t points() const noexcept { return grid_.size(); }
    double lo() const { return grid_.front(); }
    double hi() const { return grid_.back(); }

    double operator()(double x) const {
        if (x < lo() || x > hi()) return 0.0;
        std::size_t k = cell_of(x);
        double t = (x - grid_[k]) / (grid_[k + 1] - grid_[k]);
        return values_[k] + t * (values_[k + 1] - values_[k]);
    }

    double cdf(double x) const {
        if (x <= lo()) return 0.0;
        if (x >= hi()) return 1.0;
        std::size_t k = cell_of(x);
        double d = x - grid_[k];
        return cdf_[k] + values_[k] * d + 0.5 * slope(k) * d * d;
    }

    /// Inverse CDF; exact for the piecewise-linear density.
    double quantile(double p) const {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile: probability outside [0,1]");
        if (p <= 0.0) return lo();
        if (p >= 1.0) return hi();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), p);
        std::size_t k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - cdf_.begin()) - 1));
        k = std::min(k, grid_.size() - 2);
        double r = p - cdf_[k];
        double a = values_[k], b = slope(k);
        double disc = std::max(0.0, a * a + 2.0 * b * r);
        double denom = a + std::sqrt(disc);
        double d = denom > 0.0 ? 2.0 * r / denom : 0.0;
        return std::clamp(grid_[k] + d, grid_[k], grid_[k + 1]);
    }

    double mass() const { return cdf_.back(); }

    double mean() const {
        double s = 0.0;
        for (std::size_t k = 0; k + 1 < grid_.size(); ++k) {
            double h = grid_[k + 1] - grid_[k];
            double xm = 0.5 * (grid_[k] + grid_[k + 1]);
            double vm = 0.5 * (values_[k] + values_[k + 1]);
            s += h / 6.0 * (grid_[k] * values_[k] + 4.0 * xm * vm + grid_[k + 1] * values_[k + 1]);
        }
        return s;
    }

    double max_value() const { return *std::max_element(values_.begin(), values_.end()); }

    /// Slope of the density on cell k.
    double slope(std::size_t k) const { return (values_[k + 1] - values_[k]) / (grid_[k + 1] - grid_[k]); }

    /// Same density translated by c.
    GridDensity shifted(double c) const {
        GridDensity d = *this;
        for (double& x : d.grid_) x += c;
        return d;
    }

private:
    void validate_shape() const {
        if (grid_.size() < 2 || grid_.size() != values_.size())
            throw ValidationError("GridDensity: grid and values must have equal length >= 2");
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            if (!std::isfinite(grid_[i]) || !std::isfinite(values_[i]))
                throw ValidationError("GridDensity: non-finite entry");
            if (values_[i] < 0.0) throw ValidationError("GridDensity: negative density value");
            if (i > 0 && !(grid_[i - 1] < grid_[i]))
                throw ValidationError("GridDensity: grid must be strictly increasing");
        }
    }

    void build_cdf() {
        cdf_.assign(grid_.size(), 0.0);
        for (std::size_t k = 0; k + 1 < grid_.size(); ++k)
            cdf_[k + 1] = cdf_[k] + 0.5 * (values_[k] + values_[k + 1]) * (grid_[k + 1] - grid_[k]);
    }

    std::size_t cell_of(double x) const {
        auto it = std::upper_bound(grid_.begin(), grid_.end(), x);
        std::ptrdiff_t k = (it - grid_.begin()) - 1;
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(grid_.size()) - 2));
    }

    std::vector<double> grid_;
    std::vector<double> values_;
    std::vector<double> cdf_;
};

using Measure1D = std::variant<AtomicMeasure, GridDensity>;

// ---------------------------------------------------------------------------
// Named densities

inline GridDensity semicircle_density(double radius, double center = 0.0,
                                      std::size_t points = kDefaultGridPoints) {
    if (!(radius > 0.0)) throw ValidationError("semicircle: radius must be positive");
    return GridDensity::from_function(
        [&](double x) {
            double y = x - center;
            return std::sqrt(std::max(0.0, radius * radius - y * y));
        },
        center - radius, center + radius, points);
}

inline GridDensity uniform_density(double lo, double hi, std::size_t points = kDefaultGridPoints) {
    if (!(hi > lo)) throw ValidationError("uniform: need lo < hi");
    return GridDensity::from_function([](double) { return 1.0; }, lo, hi, points);
}

/// Parses "semicircle(r)", "uniform(lo,hi)" or "point(c)".
inline Measure1D parse_named_measure(const std::string& text, std::size_t points = kDefaultGridPoints) {
    static const std::regex re(R"(^\s*(semicircle|uniform|point)\s*\(([^)]*)\)\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, re)) throw ValidationError("unknown named measure: " + text);
    std::vector<double> args;
    std::stringstream ss(m[2].str());
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            args.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ValidationError("bad numeric argument in " + text);
        }
    }
    const std::string name = m[1].str();
    if (name == "semicircle" && args.size() == 1) return semicircle_density(args[0], 0.0, points);
    if (name == "uniform" && args.size() == 2) return uniform_density(args[0], args[1], points);
    if (name == "point" && args.size() == 1) return AtomicMeasure({args[0]});
    throw ValidationError("wrong argument count in " + text);
}

namespace detail {
inline std::vector<std::vector<double>> read_csv_rows(const std::string& path, std::size_t columns) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool ok = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                ok = false;
                break;
            }
        }
        if (!ok || row.size() != columns) {
            if (first) {  // header line
                first = false;
                continue;
            }
            throw ValidationError(path + ": malformed row '" + line + "'");
        }
        first = false;
        rows.push_back(std::move(row));
    }
    return rows;
}
}  // namespace detail

/// Two-column CSV (abscissa, density). Values are renormalized.
inline GridDensity load_density_csv(const std::string& path) {
    auto rows = detail::read_csv_rows(path, 2);
    std::vector<double> g, v;
    for (auto& r : rows) {
        g.push_back(r[0]);
        v.push_back(r[1]);
    }
    return GridDensity::normalized(std::move(g), std::move(v));
}

/// One-column CSV of atom positions.
inline AtomicMeasure load_atomic_csv(const std::string& path) {
    auto rows = detail::read_csv_rows(path, 1);
    std::vector<double> a;
    for (auto& r : rows) a.push_back(r[0]);
    return AtomicMeasure(std::move(a));
}

// ---------------------------------------------------------------------------
// Operations

/// Midpoint 1/n-quantiles: F(gamma_i) = (i - 1/2)/n, i = 1..n.
inline std::vector<double> quantiles(const GridDensity& density, std::size_t n) {
    if (n == 0) throw ValidationError("quantiles: n must be >= 1");
    if (std::abs(density.mass() - 1.0) > 1e-8) throw ValidationError("quantiles: density not normalized");
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i)
        q[i] = density.quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n));
    for (std::size_t i = 1; i < n; ++i) q[i] = std::max(q[i], q[i - 1]);
    return q;
}

inline WeylPoint discretize(const GridDensity& density, std::size_t n) {
    return WeylPoint::closed(quantiles(density, n));
}

/// n-point boundary configuration for any measure: quantiles of a density,
/// n copies of a point mass, or the atoms themselves when there are n.
inline WeylPoint boundary_configuration(const Measure1D& mu, std::size_t n) {
    if (n == 0) throw ValidationError("boundary_configuration: n must be >= 1");
    if (auto* d = std::get_if<GridDensity>(&mu)) return discretize(*d, n);
    const auto& a = std::get<AtomicMeasure>(mu);
    if (a.size() == n) return WeylPoint::closed(a.atoms());
    if (a.size() == 1) return WeylPoint::closed(std::vector<double>(n, a.atoms()[0]));
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i) {
        double p = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        auto idx = static_cast<std::size_t>(std::floor(p * static_cast<double>(a.size())));
        q[i] = a.atoms()[std::min(idx, a.size() - 1)];
    }
    return WeylPoint::closed(std::move(q));
}

inline cplx stieltjes(const AtomicMeasure& mu, cplx z) {
    if (z.imag() == 0.0 && std::binary_search(mu.atoms().begin(), mu.atoms().end(), z.real()))
        throw DomainError("stieltjes: z on an atom");
    cplx s = 0.0;
    for (double x : mu.atoms()) s += 1.0 / (z - x);
    return s / static_cast<double>(mu.size());
}

/// Exact Stieltjes transform of the piecewise-linear density. On each cell
/// the integral of (alpha + beta y)/(z - y) is rho_cell(z) log-difference
/// minus beta * width; the log terms are telescoped over nodes.
inline cplx stieltjes(const GridDensity& rho, cplx z) {
    const auto& g = rho.grid();
    const auto& v = rho.values();
    const std::size_t N = g.size();
    const bool real_axis = z.imag() == 0.0;
    if (real_axis && z.real() >= rho.lo() && z.real() <= rho.hi())
        throw DomainError("stieltjes: real z inside the support");
    cplx s = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
        cplx right = k + 1 < N ? v[k] + rho.slope(k) * (z - g[k]) : cplx(0.0);
        cplx left = k > 0 ? v[k] + rho.slope(k - 1) * (z - g[k]) : cplx(0.0);
        cplx c = right - left;
        cplx lg = real_axis ? cplx(std::log(std::abs(z.real() - g[k]))) : std::log(z - g[k]);
        s += c * lg;
    }
    s -= v[N - 1] - v[0];
    return s;
}

inline cplx stieltjes(const Measure1D& mu, cplx z) {
    return std::visit([&](const auto& m) { return stieltjes(m, z); }, mu);
}

/// Principal-value Hilbert transform PV int rho(y)/(x - y) dy, exact for the
/// piecewise-linear density.
inline double hilbert(const GridDensity& rho, double x) {
    if (!(x > rho.lo() && x < rho.hi())) throw DomainError("hilbert: x must lie strictly inside the support");
    const auto& g = rho.grid();
    const auto& v = rho.values();
    const std::size_t N = g.size();
    double s = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
        double d = x - g[k];
        if (d == 0.0) continue;  // coefficient vanishes by continuity
        double right = k + 1 < N ? v[k] + rho.slope(k) * d : 0.0;
        double left = k > 0 ? v[k] + rho.slope(k - 1) * d : 0.0;
        s += (right - left) * std::log(std::abs(d));
    }
    return s - (v[N - 1] - v[0]);
}

namespace detail {
inline double measure_lo(const Measure1D& m) { return std::visit([](const auto& x) { return x.lo(); }, m); }
inline double measure_hi(const Measure1D& m) { return std::visit([](const auto& x) { return x.hi(); }, m); }

inline void append_breakpoints(const Measure1D& m, std::vector<double>& out) {
    if (auto* a = std::get_if<AtomicMeasure>(&m))
        out.insert(out.end(), a->atoms().begin(), a->atoms().end());
    else {
        const auto& g = std::get<GridDensity>(m).grid();
        out.insert(out.end(), g.begin(), g.end());
    }
}

// CDF on the open interval (u, v) between consecutive breakpoints: atomic CDFs
// are constant there; density CDFs are quadratic.
inline double cdf_inside(const Measure1D& m, double u, double v, double x) {
    if (auto* a = std::get_if<AtomicMeasure>(&m)) return a->cdf(0.5 * (u + v));
    return std::get<GridDensity>(m).cdf(x);
}

// Exact integral of |q| over [u,v] for the quadratic q through (u,qa),(mid,qm),(v,qb).
inline double abs_quadratic_integral(double u, double v, double qa, double qm, double qb) {
    double h = v - u;
    // q(s) = A s^2 + B s + C on s in [0,1]
    double C = qa;
    double A = 2.0 * qa - 4.0 * qm + 2.0 * qb;
    double B = qb - qa - A;
    std::vector<double> cuts{0.0, 1.0};
    if (std::abs(A) > 1e-300) {
        double disc = B * B - 4.0 * A * C;
        if (disc > 0.0) {
            double sq = std::sqrt(disc);
            for (double r : {(-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)})
                if (r > 0.0 && r < 1.0) cuts.push_back(r);
        }
    } else if (std::abs(B) > 1e-300) {
        double r = -C / B;
        if (r > 0.0 && r < 1.0) cuts.push_back(r);
    }
    std::sort(cuts.begin(), cuts.end());
    auto q = [&](double s) { return (A * s + B) * s + C; };
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        double a = cuts[i], b = cuts[i + 1];
        total += std::abs((b - a) / 6.0 * (q(a) + 4.0 * q(0.5 * (a + b)) + q(b)));
    }
    return total * h;
}
}  // namespace detail

/// W1(mu, nu) = int |F_mu - F_nu| dx over the merged breakpoint grid.
inline double wasserstein1(const Measure1D& mu, const Measure1D& nu) {
    std::vector<double> pts;
    detail::append_breakpoints(mu, pts);
    detail::append_breakpoints(nu, pts);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        double u = pts[i], v = pts[i + 1], m = 0.5 * (u + v);
        auto diff = [&](double x) {
            return detail::cdf_inside(mu, u, v, x) - detail::cdf_inside(nu, u, v, x);
        };
        total += detail::abs_quadratic_integral(u, v, diff(u), diff(m), diff(v));
    }
    return total;
}

}  // namespace nibb
