#pragma once

// Ensemble statistics: rigidity around the quantiles of the limit shape,
// Stieltjes-transform deviations, rescaled edge samples, KS distances and
// rankwise stochastic dominance.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "nibb/airy.hpp"
#include "nibb/burgers.hpp"
#include "nibb/errors.hpp"
#include "nibb/measures.hpp"
#include "nibb/sde.hpp"

namespace nibb {

namespace detail {

// Linear-interpolated empirical quantile of a sorted sample (type 7).
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw UsageError("quantile of an empty sample");
    const double h = p * static_cast<double>(sorted.size() - 1);
    const auto k = static_cast<std::size_t>(std::floor(h));
    if (k + 1 >= sorted.size()) return sorted.back();
    return sorted[k] + (h - static_cast<double>(k)) * (sorted[k + 1] - sorted[k]);
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return sorted_quantile(v, 0.5);
}

}  // namespace detail

struct RigidityReport {
    double t = 0.0;
    std::size_t n = 0;
    std::size_t samples = 0;
    std::vector<double> median_dev;  // per rank
    std::vector<double> p95_dev;     // per rank
    std::vector<double> edge_excess; // per sample
    double bulk_median = 0.0;        // median of per-rank medians over ranks n/4 .. 3n/4
};

/// Deviations |x_i - gamma_i(t)| from the midpoint quantiles of rho*_t.
inline RigidityReport rigidity_report(const PathEnsemble& ens, const LimitShape& shape, double t) {
    const std::size_t ti = ens.time_index(t);
    const std::size_t n = ens.n(), m = ens.samples();
    const auto gamma = quantiles(shape.density_at(t), n);
    const auto [a, b] = shape.edges(t);
    RigidityReport r;
    r.t = t;
    r.n = n;
    r.samples = m;
    r.median_dev.resize(n);
    r.p95_dev.resize(n);
    r.edge_excess.resize(m);
    std::vector<double> dev(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < m; ++s) dev[s] = std::fabs(ens.slice(s, ti)[i] - gamma[i]);
        std::sort(dev.begin(), dev.end());
        r.median_dev[i] = detail::sorted_quantile(dev, 0.5);
        r.p95_dev[i] = detail::sorted_quantile(dev, 0.95);
    }
    for (std::size_t s = 0; s < m; ++s) {
        auto x = ens.slice(s, ti);
        r.edge_excess[s] = std::max({a - x.front(), x.back() - b, 0.0});
    }
    const std::size_t lo = n / 4, hi = std::max(lo + 1, (3 * n) / 4);
    r.bulk_median = detail::median_of(std::vector<double>(r.median_dev.begin() + static_cast<std::ptrdiff_t>(lo),
                                                          r.median_dev.begin() + static_cast<std::ptrdiff_t>(std::min(hi, n))));
    return r;
}

struct StieltjesPoint {
    cplx z;
    bool in_domain = false;
    double threshold = 0.0;  // (log n)^2 / n
    double domain_value = 0.0;  // min(dist(z, [a,b]) |Im m(z)|, Im z)
    double median = 0.0;
    double max = 0.0;
};

/// |m~_t(z) - m_t(z)| over samples. Points with
/// min(dist(z,[a,b]) |Im m_t(z)|, Im z) < (log n)^2 / n are flagged and skipped.
inline std::vector<StieltjesPoint> stieltjes_compare(const PathEnsemble& ens, const LimitShape& shape, double t,
                                                     const std::vector<cplx>& z_list) {
    const std::size_t ti = ens.time_index(t);
    const GridDensity rho = shape.density_at(t);
    const auto [a, b] = shape.edges(t);
    const double n = static_cast<double>(ens.n());
    const double thr = std::log(n) * std::log(n) / n;
    std::vector<StieltjesPoint> out;
    for (cplx z : z_list) {
        StieltjesPoint p;
        p.z = z;
        p.threshold = thr;
        if (!(z.imag() > 0.0)) {
            out.push_back(p);
            continue;
        }
        const cplx m = stieltjes(rho, z);
        const double dx = z.real() < a ? a - z.real() : (z.real() > b ? z.real() - b : 0.0);
        const double dist = std::hypot(dx, z.imag());
        p.domain_value = std::min(dist * std::fabs(m.imag()), z.imag());
        p.in_domain = p.domain_value >= thr;
        if (p.in_domain) {
            std::vector<double> dev(ens.samples());
            for (std::size_t s = 0; s < ens.samples(); ++s) {
                cplx e = 0.0;
                for (double x : ens.slice(s, ti)) e += 1.0 / (z - x);
                dev[s] = std::abs(e / n - m);
            }
            p.max = *std::max_element(dev.begin(), dev.end());
            p.median = detail::median_of(std::move(dev));
        }
        out.push_back(p);
    }
    return out;
}

struct EdgeSampleSet {
    double t = 0.0;
    Side side = Side::right;
    std::vector<double> eta;
    double edge = 0.0;  // a(t) or b(t)
    double s = 0.0;
    std::size_t n = 0;
    std::string convention;
};

inline EdgeSampleSet edge_statistics(const PathEnsemble& ens, double t, Side side, double edge, double s) {
    if (!(s > 0.0) || !std::isfinite(s) || !std::isfinite(edge))
        throw UsageError("edge_statistics: no valid edge fit at t=" + std::to_string(t));
    const std::size_t ti = ens.time_index(t);
    EdgeSampleSet e;
    e.t = t;
    e.side = side;
    e.edge = edge;
    e.s = s;
    e.n = ens.n();
    e.convention = side == Side::left ? "eta = (s n)^(2/3) (a - x_1)" : "eta = (s n)^(2/3) (x_n - b)";
    const double scale = std::pow(s * static_cast<double>(ens.n()), 2.0 / 3.0);
    for (std::size_t k = 0; k < ens.samples(); ++k) {
        auto x = ens.slice(k, ti);
        e.eta.push_back(side == Side::left ? scale * (edge - x.front()) : scale * (x.back() - edge));
    }
    return e;
}

inline EdgeSampleSet edge_statistics(const PathEnsemble& ens, const LimitShape& shape, double t, Side side) {
    double edge = 0.0, s = 0.0;
    try {
        const auto ab = shape.edges(t);
        const auto ss = shape.edge_coefficients(t);
        edge = side == Side::left ? ab.first : ab.second;
        s = side == Side::left ? ss.first : ss.second;
    } catch (const DomainError& err) {
        throw UsageError(std::string("edge_statistics: ") + err.what());
    }
    return edge_statistics(ens, t, side, edge, s);
}

/// sup_x |F_m(x) - F(x)| evaluated on both sides of every jump.
inline double ks_distance(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw UsageError("ks_distance: empty sample");
    std::sort(samples.begin(), samples.end());
    const double m = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double F = cdf(samples[i]);
        d = std::max({d, std::fabs(static_cast<double>(i + 1) / m - F), std::fabs(static_cast<double>(i) / m - F)});
    }
    return d;
}

inline double ks_distance(std::vector<double> samples, const TWTable& table) {
    return ks_distance(std::move(samples), [&](double s) { return table.cdf(s); });
}

struct DominanceReport {
    double t = 0.0;
    double alpha = 0.01;
    double band = 0.0;
    std::vector<double> excess;            // per rank: sup_x (F_hi - F_lo)
    std::vector<std::size_t> violations;   // ranks with excess > band
};

inline constexpr double kDominanceAlpha = 0.01;

/// Checks F_hi(x) <= F_lo(x) + band for every rank, band = sqrt(ln(2/alpha) / (2 m_eff)),
/// m_eff = m_hi m_lo / (m_hi + m_lo).
inline DominanceReport dominance_test(const PathEnsemble& hi, const PathEnsemble& lo, double t,
                                      double alpha = kDominanceAlpha) {
    if (hi.n() != lo.n()) throw UsageError("dominance_test: ensembles have different n");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("dominance_test: alpha must be in (0,1)");
    const std::size_t th = hi.time_index(t), tl = lo.time_index(t);
    const double mh = static_cast<double>(hi.samples()), ml = static_cast<double>(lo.samples());
    DominanceReport r;
    r.t = t;
    r.alpha = alpha;
    r.band = std::sqrt(std::log(2.0 / alpha) / (2.0 * mh * ml / (mh + ml)));
    r.excess.resize(hi.n());
    std::vector<double> xh(hi.samples()), xl(lo.samples());
    for (std::size_t i = 0; i < hi.n(); ++i) {
        for (std::size_t s = 0; s < hi.samples(); ++s) xh[s] = hi.slice(s, th)[i];
        for (std::size_t s = 0; s < lo.samples(); ++s) xl[s] = lo.slice(s, tl)[i];
        std::sort(xh.begin(), xh.end());
        std::sort(xl.begin(), xl.end());
        // sup of F_hi - F_lo is attained just right of a jump of F_hi.
        double sup = 0.0;
        std::size_t j = 0;
        for (std::size_t k = 0; k < xh.size(); ++k) {
            if (k + 1 < xh.size() && xh[k + 1] == xh[k]) continue;
            while (j < xl.size() && xl[j] <= xh[k]) ++j;
            sup = std::max(sup, static_cast<double>(k + 1) / mh - static_cast<double>(j) / ml);
        }
        r.excess[i] = sup;
        if (sup > r.band) r.violations.push_back(i);
    }
    return r;
}

}  // namespace nibb
