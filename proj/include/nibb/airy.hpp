#pragma once

// Airy function and the GUE Tracy-Widom distribution
// F2(s) = det(I - K_Ai) on L^2(s, inf), by Nystrom discretization.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "nibb/errors.hpp"

namespace nibb {

inline constexpr double kAiryDomain = 50.0;
inline constexpr double kAirySeriesLimit = 8.0;

namespace detail {

struct AiryPair {
    double ai;
    double aip;
};

// Maclaurin series in long double. Ai = c1 f - c2 g, Ai' = c1 f' - c2 g'.
inline AiryPair airy_series(double xd) {
    const long double x = xd;
    const long double c1 = 0.355028053887817239260063186004183176L;
    const long double c2 = 0.258819403792806798405183560189203963L;
    const long double x3 = x * x * x;
    long double f = 1.0L, g = x, fp = 0.0L, gp = 1.0L;
    long double tf = 1.0L, tg = x;  // current terms of f and g
    for (int k = 1; k < 200; ++k) {
        const long double kk = k;
        tf *= x3 / ((3 * kk - 1) * (3 * kk));
        tg *= x3 / ((3 * kk) * (3 * kk + 1));
        f += tf;
        g += tg;
        if (x != 0.0L) {
            fp += tf * (3 * kk) / x;
            gp += tg * (3 * kk + 1) / x;
        }
        if (std::fabs(tf) + std::fabs(tg) < 1e-22L * (std::fabs(f) + std::fabs(g)) && k > 3) break;
    }
    return {static_cast<double>(c1 * f - c2 * g), static_cast<double>(c1 * fp - c2 * gp)};
}

// Asymptotic expansions in zeta = (2/3)|x|^{3/2}, truncated at the smallest term.
inline AiryPair airy_asymptotic(double x) {
    const double ax = std::fabs(x);
    const double zeta = 2.0 / 3.0 * ax * std::sqrt(ax);
    std::vector<double> u{1.0}, v{1.0};
    for (int k = 1; k < 60; ++k) {
        const double kk = k;
        u.push_back(u.back() * (6 * kk - 5) * (6 * kk - 3) * (6 * kk - 1) / ((2 * kk - 1) * 216.0 * kk));
        v.push_back(-(6 * kk + 1) / (6 * kk - 1) * u.back());
    }
    const double sqpi = std::sqrt(std::numbers::pi);
    if (x > 0) {
        double su = 0.0, sv = 0.0, p = 1.0, last = 1e300;
        for (std::size_t k = 0; k < u.size(); ++k) {
            const double term = std::fabs(u[k] * p);
            if (term > last) break;
            last = term;
            const double sgn = (k % 2) ? -1.0 : 1.0;
            su += sgn * u[k] * p;
            sv += sgn * v[k] * p;
            p /= zeta;
        }
        const double e = std::exp(-zeta);
        const double q = std::pow(ax, 0.25);
        return {e / (2.0 * sqpi * q) * su, -q * e / (2.0 * sqpi) * sv};
    }
    double ue = 0.0, uo = 0.0, ve = 0.0, vo = 0.0, p = 1.0, last = 1e300;
    for (std::size_t k = 0; k < u.size(); ++k) {
        const double term = std::fabs(u[k] * p);
        if (term > last) break;
        last = term;
        const double sgn = ((k / 2) % 2) ? -1.0 : 1.0;
        if (k % 2 == 0) {
            ue += sgn * u[k] * p;
            ve += sgn * v[k] * p;
        } else {
            uo += sgn * u[k] * p;
            vo += sgn * v[k] * p;
        }
        p /= zeta;
    }
    const double th = zeta - std::numbers::pi / 4.0;
    const double c = std::cos(th), s = std::sin(th);
    const double q = std::pow(ax, 0.25);
    return {(c * ue + s * uo) / (sqpi * q), q * (s * ve - c * vo) / sqpi};
}

inline AiryPair airy_pair(double x) {
    if (!std::isfinite(x) || std::fabs(x) > kAiryDomain)
        throw DomainError("airy: |x| must be <= 50, got " + std::to_string(x));
    return std::fabs(x) <= kAirySeriesLimit ? airy_series(x) : airy_asymptotic(x);
}

}  // namespace detail

inline double airy_ai(double x) { return detail::airy_pair(x).ai; }
inline double airy_ai_prime(double x) { return detail::airy_pair(x).aip; }

/// Airy kernel K(x,y) = (Ai(x)Ai'(y) - Ai'(x)Ai(y))/(x - y), diagonal Ai'(x)^2 - x Ai(x)^2.
inline double airy_kernel(double x, double y) {
    const auto px = detail::airy_pair(x);
    if (x == y) return px.aip * px.aip - x * px.ai * px.ai;
    const auto py = detail::airy_pair(y);
    return (px.ai * py.aip - px.aip * py.ai) / (x - y);
}

/// Gauss-Legendre nodes and weights on [-1, 1].
inline void gauss_legendre(std::size_t m, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(m, 0.0);
    weights.assign(m, 0.0);
    for (std::size_t i = 0; i < (m + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(m) + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (std::size_t j = 1; j <= m; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / static_cast<double>(j);
            }
            dp = static_cast<double>(m) * (z * p0 - p1) / (z * z - 1.0);
            double dz = p0 / dp;
            z -= dz;
            if (std::fabs(dz) < 1e-16) break;
        }
        nodes[i] = -z;
        nodes[m - 1 - i] = z;
        weights[i] = weights[m - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

inline constexpr double kTwTail = 12.0;

/// F2(s) with quad_nodes Gauss-Legendre nodes on [s, max(s,0) + 12]; the
/// kernel is below 1e-20 past the right end.
inline double tw2_cdf_nodes(double s, std::size_t quad_nodes) {
    if (!std::isfinite(s)) throw DomainError("tw2_cdf: s must be finite");
    if (s < -kAiryDomain + 1.0) throw DomainError("tw2_cdf: s below the supported range");
    if (quad_nodes < 2) throw ValidationError("tw2_cdf: need at least 2 nodes");
    const double hi = std::max(s, 0.0) + kTwTail;
    if (s >= hi) return 1.0;
    std::vector<double> z, w;
    gauss_legendre(quad_nodes, z, w);
    const auto m = static_cast<Eigen::Index>(quad_nodes);
    std::vector<double> x(quad_nodes), sw(quad_nodes);
    std::vector<detail::AiryPair> a(quad_nodes);
    for (std::size_t i = 0; i < quad_nodes; ++i) {
        x[i] = s + 0.5 * (hi - s) * (z[i] + 1.0);
        sw[i] = std::sqrt(0.5 * (hi - s) * w[i]);
        a[i] = detail::airy_pair(x[i]);
    }
    Eigen::MatrixXd M(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
            const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
            double k = (i == j) ? a[ui].aip * a[ui].aip - x[ui] * a[ui].ai * a[ui].ai
                                : (a[ui].ai * a[uj].aip - a[ui].aip * a[uj].ai) / (x[ui] - x[uj]);
            M(i, j) = (i == j ? 1.0 : 0.0) - sw[ui] * k * sw[uj];
        }
    return std::clamp(M.partialPivLu().determinant(), 0.0, 1.0);
}

inline constexpr double kTwNodeTolerance = 1e-6;

/// F2(s); raises OracleError when quad_nodes and 2*quad_nodes disagree by more than 1e-6.
inline double tw2_cdf(double s, std::size_t quad_nodes = 64) {
    const double f = tw2_cdf_nodes(s, quad_nodes);
    const double f2 = tw2_cdf_nodes(s, 2 * quad_nodes);
    if (std::fabs(f - f2) > kTwNodeTolerance)
        throw OracleError("tw2_cdf: node doubling changed F2(" + std::to_string(s) + ") by " +
                          std::to_string(std::fabs(f - f2)));
    return f;
}

class TWTable {
public:
    TWTable() = default;
    TWTable(std::vector<double> s_grid, std::vector<double> cdf) : s_(std::move(s_grid)), F_(std::move(cdf)) {
        if (s_.size() != F_.size() || s_.size() < 2) throw ValidationError("TWTable: grid and cdf sizes differ");
        for (std::size_t i = 1; i < s_.size(); ++i) {
            if (!(s_[i - 1] < s_[i])) throw ValidationError("TWTable: grid must increase");
            if (F_[i] < F_[i - 1]) throw OracleError("TWTable: cdf not monotone");
        }
    }

    const std::vector<double>& s_grid() const noexcept { return s_; }
    const std::vector<double>& cdf_values() const noexcept { return F_; }
    double max_node_difference() const noexcept { return max_diff_; }

    /// Linear interpolation, clamped to the end values outside the grid.
    double cdf(double s) const {
        if (s <= s_.front()) return F_.front();
        if (s >= s_.back()) return F_.back();
        auto it = std::upper_bound(s_.begin(), s_.end(), s);
        auto k = static_cast<std::size_t>(it - s_.begin()) - 1;
        double w = (s - s_[k]) / (s_[k + 1] - s_[k]);
        return F_[k] + w * (F_[k + 1] - F_[k]);
    }

    /// Inverse of the interpolated cdf.
    double quantile(double p) const {
        if (p <= F_.front()) return s_.front();
        if (p >= F_.back()) return s_.back();
        auto it = std::upper_bound(F_.begin(), F_.end(), p);
        auto k = static_cast<std::size_t>(it - F_.begin()) - 1;
        if (F_[k + 1] == F_[k]) return s_[k];
        double w = (p - F_[k]) / (F_[k + 1] - F_[k]);
        return s_[k] + w * (s_[k + 1] - s_[k]);
    }

    // E[X] = hi - int F, E[X^2] = hi^2 - 2 int s F (Simpson when the interval count is even).
    double mean() const {
        return s_.back() - integrate([](double, double F) { return F; }) - s_.front() * F_.front();
    }
    double variance() const {
        const double lo = s_.front(), hi = s_.back();
        const double m2 = hi * hi - lo * lo * F_.front() - 2.0 * integrate([](double s, double F) { return s * F; });
        const double m = mean();
        return m2 - m * m;
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw UsageError("cannot write " + path);
        out.precision(17);
        out << "s,F2\n";
        for (std::size_t i = 0; i < s_.size(); ++i) out << s_[i] << ',' << F_[i] << '\n';
    }

    static TWTable build(double lo = -10.0, double hi = 6.0, double step = 0.02, std::size_t quad_nodes = 64,
                         std::size_t workers = 1) {
        if (!(hi > lo) || !(step > 0.0)) throw ValidationError("TWTable: need lo < hi and step > 0");
        const auto count = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
        std::vector<double> s(count), F(count), diff(count);
        for (std::size_t i = 0; i < count; ++i) s[i] = lo + step * static_cast<double>(i);
        auto eval = [&](std::size_t i) {
            F[i] = tw2_cdf_nodes(s[i], quad_nodes);
            diff[i] = std::fabs(F[i] - tw2_cdf_nodes(s[i], 2 * quad_nodes));
        };
        workers = std::max<std::size_t>(1, workers);
        if (workers == 1) {
            for (std::size_t i = 0; i < count; ++i) eval(i);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w)
                pool.emplace_back([&, w] {
                    for (std::size_t i = w; i < count; i += workers) eval(i);
                });
            for (auto& th : pool) th.join();
        }
        const double worst = *std::max_element(diff.begin(), diff.end());
        if (worst > kTwNodeTolerance)
            throw OracleError("TWTable: node doubling changed F2 by " + std::to_string(worst));
        TWTable t(std::move(s), std::move(F));
        t.max_diff_ = worst;
        return t;
    }

private:
    template <class G>
    double integrate(G&& g) const {
        const std::size_t m = s_.size() - 1;
        bool uniform = true;
        const double h = s_[1] - s_[0];
        for (std::size_t k = 1; k <= m; ++k)
            if (std::fabs(s_[k] - s_[k - 1] - h) > 1e-9 * h) uniform = false;
        double acc = 0.0;
        if (uniform && m % 2 == 0) {
            for (std::size_t k = 0; k <= m; ++k) {
                const double c = (k == 0 || k == m) ? 1.0 : (k % 2 ? 4.0 : 2.0);
                acc += c * g(s_[k], F_[k]);
            }
            return acc * h / 3.0;
        }
        for (std::size_t k = 1; k <= m; ++k)
            acc += 0.5 * (s_[k] - s_[k - 1]) * (g(s_[k], F_[k]) + g(s_[k - 1], F_[k - 1]));
        return acc;
    }

    std::vector<double> s_, F_;
    double max_diff_ = 0.0;
};

/// Published moments of the GUE Tracy-Widom law.
inline constexpr double kTw2Mean = -1.7710868074;
inline constexpr double kTw2Variance = 0.8131947928;

}  // namespace nibb
