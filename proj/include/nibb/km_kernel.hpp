#pragma once

// Karlin-McGregor transition density of n nonintersecting Brownian motions
// with diffusion 1/n, and the gradient of its logarithm, which is the drift of
// the exact bridge sampler.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "nibb/errors.hpp"
#include "nibb/measures.hpp"

namespace nibb {

struct KernelEval {
    double log_density = -std::numeric_limits<double>::infinity();
    int sign = 0;
};

inline constexpr double kMinReciprocalCondition = 1e-14;
// relative agreement required between double and long double drifts when rcond is small
inline constexpr double kDriftAgreement = 1e-8;

namespace detail {

inline void check_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw ValidationError(std::string(what) + ": non-finite coordinate");
}

inline bool has_tie(std::span<const double> v) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    return std::adjacent_find(s.begin(), s.end()) != s.end();
}

// Row-shifted kernel matrix M_ij = exp(L_ij - r_i), L_ij = -n (x_i - y_j)^2 / (2t),
// r_i = max_j L_ij. Returns the shifts through `shifts`.
inline Eigen::MatrixXd shifted_kernel(std::span<const double> x, std::span<const double> y, double t,
                                      double n_scale, Eigen::VectorXd& shifts) {
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd L(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            double d = x[i] - y[j];
            L(i, j) = -n_scale * d * d / (2.0 * t);
        }
    shifts = L.rowwise().maxCoeff();
    Eigen::MatrixXd M(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) M(i, j) = std::exp(L(i, j) - shifts(i));
    return M;
}

inline std::string describe(std::span<const double> x, std::span<const double> b, double t) {
    std::ostringstream os;
    os.precision(17);
    os << "x=(";
    for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
    os << ") b=(";
    for (std::size_t i = 0; i < b.size(); ++i) os << (i ? "," : "") << b[i];
    os << ") t=" << t;
    return os.str();
}

}  // namespace detail

/// log|p_t(x, y)| and the sign of the Karlin-McGregor determinant
/// det[ sqrt(n/(2 pi t)) exp(-n (x_i - y_j)^2 / (2t)) ].
inline KernelEval log_km_density(std::span<const double> x, std::span<const double> y, double t,
                                 double n_scale) {
    detail::check_finite(x, "log_km_density");
    detail::check_finite(y, "log_km_density");
    if (!std::isfinite(t) || !std::isfinite(n_scale)) throw ValidationError("log_km_density: non-finite t or n");
    if (x.size() != y.size() || x.empty()) throw ValidationError("log_km_density: x and y must have equal nonzero length");
    if (!(t > 0.0)) throw DomainError("log_km_density: t must be positive");
    if (!(n_scale > 0.0)) throw ValidationError("log_km_density: n_scale must be positive");
    if (detail::has_tie(x) || detail::has_tie(y)) return {};

    // Extended precision: log|det| loses about eps * cond, and nearly
    // coincident points make the kernel matrix badly conditioned.
    using LD = long double;
    using MatrixLD = Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic>;
    const auto n = static_cast<Eigen::Index>(x.size());
    MatrixLD M(n, n);
    LD shift_sum = 0.0L;
    for (Eigen::Index i = 0; i < n; ++i) {
        LD rmax = -std::numeric_limits<LD>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            const LD d = static_cast<LD>(x[i]) - static_cast<LD>(y[j]);
            M(i, j) = -static_cast<LD>(n_scale) * d * d / (2.0L * static_cast<LD>(t));
            rmax = std::max(rmax, M(i, j));
        }
        for (Eigen::Index j = 0; j < n; ++j) M(i, j) = std::exp(M(i, j) - rmax);
        shift_sum += rmax;
    }
    Eigen::PartialPivLU<MatrixLD> lu(M);
    const auto& LU = lu.matrixLU();
    LD logdet = 0.0L;
    int sign = static_cast<int>(std::lround(static_cast<double>(lu.permutationP().determinant())));
    for (Eigen::Index k = 0; k < n; ++k) {
        const LD u = LU(k, k);
        if (u == 0.0L) return {};
        if (u < 0.0L) sign = -sign;
        logdet += std::log(std::abs(u));
    }
    logdet += shift_sum + 0.5L * static_cast<LD>(n) * std::log(static_cast<LD>(n_scale) / (2.0L * std::numbers::pi_v<LD> * static_cast<LD>(t)));
    return {static_cast<double>(logdet), sign};
}

inline KernelEval log_km_density(const WeylPoint& x, const WeylPoint& y, double t, double n_scale) {
    return log_km_density(x.span(), y.span(), t, n_scale);
}

namespace detail {

template <class T>
struct DriftResult {
    std::vector<double> drift;
    double rcond;
};

// Row-shifted, column-equilibrated kernel in precision T; the gradient of
// log det is unchanged by either scaling.
template <class T>
DriftResult<T> drift_in(std::span<const double> x, std::span<const double> b, double tau, double n_scale) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    const auto n = static_cast<Eigen::Index>(x.size());
    const T k = static_cast<T>(n_scale) / (2 * static_cast<T>(tau));
    Mat M(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        T rmax = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            const T d = static_cast<T>(x[i]) - static_cast<T>(b[j]);
            M(i, j) = -k * d * d;
            rmax = std::max(rmax, M(i, j));
        }
        for (Eigen::Index j = 0; j < n; ++j) M(i, j) = std::exp(M(i, j) - rmax);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const T c = M.col(j).maxCoeff();
        if (c > 0) M.col(j) /= c;
    }
    Eigen::PartialPivLU<Mat> lu(M);
    const Mat A = lu.inverse();
    DriftResult<T> r{std::vector<double>(x.size(), 0.0), static_cast<double>(lu.rcond())};
    for (Eigen::Index i = 0; i < n; ++i) {
        T s = 0;
        for (Eigen::Index j = 0; j < n; ++j)
            s += A(j, i) * M(i, j) * static_cast<T>(n_scale) * (static_cast<T>(b[j]) - static_cast<T>(x[i])) /
                 static_cast<T>(tau);
        r.drift[static_cast<std::size_t>(i)] = static_cast<double>(s);
    }
    return r;
}

}  // namespace detail

/// Gradient in x of log p_{1-t}(x, b). One LU factorization of the
/// row-shifted kernel M, A = M^{-1} from n triangular solves, then
/// drift_i = sum_j A_ji dM_ij/dx_i.
inline std::vector<double> km_drift(std::span<const double> x, std::span<const double> b, double t,
                                    double n_scale) {
    detail::check_finite(x, "km_drift");
    detail::check_finite(b, "km_drift");
    if (x.size() != b.size() || x.empty()) throw ValidationError("km_drift: x and b must have equal nonzero length");
    if (!(t < 1.0) || !std::isfinite(t)) throw DomainError("km_drift: t must be < 1");
    if (!(n_scale > 0.0)) throw ValidationError("km_drift: n_scale must be positive");
    for (std::size_t j = 1; j < b.size(); ++j)
        if (!(b[j - 1] < b[j])) throw ValidationError("km_drift: b must be strictly increasing (use km_drift_confluent)");

    const double tau = 1.0 - t;
    const auto d = detail::drift_in<double>(x, b, tau, n_scale);
    if (d.rcond >= kMinReciprocalCondition) return d.drift;

    // A small rcond does not by itself spoil the drift. Recompute in extended
    // precision and accept when the two agree.
    const auto e = detail::drift_in<long double>(x, b, tau, n_scale);
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        scale = std::max(scale, std::abs(e.drift[i]));
        diff = std::max(diff, std::abs(e.drift[i] - d.drift[i]));
    }
    if (!(std::isfinite(scale) && std::isfinite(diff) && diff <= kDriftAgreement * std::max(scale, 1.0)))
        throw ConditioningError("km_drift: kernel matrix numerically singular (rcond " + std::to_string(d.rcond) +
                                ") at " + detail::describe(x, b, t));
    return e.drift;
}

inline std::vector<double> km_drift(const WeylPoint& x, const WeylPoint& b, double t, double n_scale) {
    return km_drift(x.span(), b.span(), t, n_scale);
}

/// Drift for the confluent endpoint b = (c, ..., c):
/// sum_{j != i} 1/(x_i - x_j) - n (x_i - c)/(1 - t).
inline std::vector<double> km_drift_confluent(std::span<const double> x, double c, double t, double n_scale) {
    detail::check_finite(x, "km_drift_confluent");
    if (!std::isfinite(c)) throw ValidationError("km_drift_confluent: non-finite endpoint");
    if (!(t < 1.0) || !std::isfinite(t)) throw DomainError("km_drift_confluent: t must be < 1");
    const double tau = 1.0 - t;
    std::vector<double> drift(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j)
            if (j != i) s += 1.0 / (x[i] - x[j]);
        drift[i] = s - n_scale * (x[i] - c) / tau;
    }
    return drift;
}

inline std::vector<double> km_drift_confluent(const WeylPoint& x, double c, double t, double n_scale) {
    return km_drift_confluent(x.span(), c, t, n_scale);
}

}  // namespace nibb
