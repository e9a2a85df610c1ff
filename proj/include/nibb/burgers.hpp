#pragma once

// Limit shape of nonintersecting Brownian bridges: density rho_t, velocity
// u_t, complex slope f_t = u_t - i pi rho_t, support edges with their
// square-root coefficients, and the mean-field drift g_t = u_t - H(rho_t).
//
// Point-mass boundary data have a closed form (a semicircle that opens and
// closes). General single-interval densities are solved in quantile
// coordinates: X(p, t) is the position of the particle of rank p, and the
// action (1/2) int int [X_t^2 + (pi^2/3) X_p^{-2}] dp dt is minimized with
// X(., 0) and X(., 1) fixed by the boundary quantile functions. Its
// stationarity condition X_tt = pi^2 rho rho_x (rho = 1/X_p) is the real form
// of the complex Burgers equation; the paths p -> X(p, t) are the real
// characteristics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "nibb/errors.hpp"
#include "nibb/measures.hpp"

namespace nibb {

enum class Side { left, right };

inline const char* to_string(Side s) { return s == Side::left ? "left" : "right"; }

struct EdgeFit {
    double edge = 0.0;
    double s = 0.0;
    double residual = 0.0;  // RMS residual of the rho^2 fit relative to its window maximum
};

inline constexpr double kEdgeWindowFraction = 0.2;
inline constexpr double kEdgeResidualLimit = 0.1;

/// Fits rho(x) ~ s sqrt(|x - edge|)/pi at one end of the support by least
/// squares on rho^2 over the window where rho <= 0.2 max rho. rho^2 is fitted
/// with a quadratic so that the next-order term does not bias s.
inline EdgeFit edge_coefficient(const GridDensity& density, Side side) {
    const auto& g = density.grid();
    const auto& v = density.values();
    const std::size_t N = g.size();
    const double vmax = density.max_value();
    const double end_value = side == Side::left ? v.front() : v.back();
    if (end_value > 0.05 * vmax)
        throw FitError(std::string("edge_coefficient: density does not vanish at the ") + to_string(side) +
                       " end (hard edge)");

    std::vector<double> ys, qs;  // offset from the support end, rho^2
    const double end = side == Side::left ? g.front() : g.back();
    for (std::size_t k = 0; k < N; ++k) {
        std::size_t idx = side == Side::left ? k : N - 1 - k;
        if (v[idx] > kEdgeWindowFraction * vmax) break;
        ys.push_back(g[idx] - end);
        qs.push_back(v[idx] * v[idx]);
    }
    if (ys.size() < 4) throw FitError("edge_coefficient: too few points in the fit window");

    const double scale = std::abs(ys.back()) > 0.0 ? std::abs(ys.back()) : 1.0;
    Eigen::MatrixXd A(static_cast<Eigen::Index>(ys.size()), 3);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(ys.size()));
    for (std::size_t i = 0; i < ys.size(); ++i) {
        double y = ys[i] / scale;
        A(static_cast<Eigen::Index>(i), 0) = 1.0;
        A(static_cast<Eigen::Index>(i), 1) = y;
        A(static_cast<Eigen::Index>(i), 2) = y * y;
        rhs(static_cast<Eigen::Index>(i)) = qs[i];
    }
    Eigen::Vector3d c = A.colPivHouseholderQr().solve(rhs);
    const double qmax = *std::max_element(qs.begin(), qs.end());
    const double rms = std::sqrt((A * c - rhs).squaredNorm() / static_cast<double>(ys.size()));

    // Root of c0 + c1 y + c2 y^2 closest to the support end.
    double root;
    if (std::abs(c(2)) < 1e-14 * std::max(std::abs(c(1)), 1e-300)) {
        if (c(1) == 0.0) throw FitError("edge_coefficient: degenerate fit");
        root = -c(0) / c(1);
    } else {
        double disc = c(1) * c(1) - 4.0 * c(2) * c(0);
        if (disc < 0.0) throw FitError("edge_coefficient: fitted rho^2 has no real root");
        double sq = std::sqrt(disc);
        double q = -0.5 * (c(1) + std::copysign(sq, c(1)));
        double r1 = q / c(2), r2 = q != 0.0 ? c(0) / q : r1;
        root = std::abs(r1) < std::abs(r2) ? r1 : r2;
    }
    double slope = (c(1) + 2.0 * c(2) * root) / scale;  // d(rho^2)/dx at the edge
    if (side == Side::right) slope = -slope;
    if (!(slope > 0.0)) throw FitError("edge_coefficient: fitted edge has the wrong orientation");
    EdgeFit fit{end + root * scale, std::numbers::pi * std::sqrt(slope), qmax > 0.0 ? rms / qmax : 0.0};
    if (fit.residual > kEdgeResidualLimit)
        throw FitError("edge_coefficient: square-root model rejected (residual " + std::to_string(fit.residual) + ")");
    return fit;
}

/// Closed-form shape for point-mass boundary data c0 -> c1: at time t the
/// density is a semicircle of radius 2 sqrt(t(1-t)) centred on (1-t)c0 + t c1.
struct FreeBridgeClosedForm {
    double c0 = 0.0;
    double c1 = 0.0;

    double variance(double t) const { return t * (1.0 - t); }
    double center(double t) const { return (1.0 - t) * c0 + t * c1; }
    double radius(double t) const { return 2.0 * std::sqrt(variance(t)); }
    double edge_coefficient(double t) const { return std::pow(variance(t), -0.75); }
    double density(double t, double x) const {
        double v = variance(t), y = x - center(t);
        return std::sqrt(std::max(0.0, 4.0 * v - y * y)) / (2.0 * std::numbers::pi * v);
    }
    double velocity(double t, double x) const {
        return (c1 - c0) + (x - center(t)) * (1.0 - 2.0 * t) / (2.0 * variance(t));
    }
    double hilbert(double t, double x) const { return (x - center(t)) / (2.0 * variance(t)); }
    double drift(double t, double x) const { return (c1 - x) / (1.0 - t); }
};

/// Quantile-coordinate solution X(p, t) on the solver's time grid.
struct LagrangianSolution {
    std::vector<double> p;                  // node ranks in [0,1]
    std::vector<double> times;              // uniform in [0,1]
    std::vector<std::vector<double>> X;     // X[k][j]
    std::vector<std::vector<double>> U;     // dX/dt at the nodes
};

struct ShapeSlice {
    double t = 0.0;
    GridDensity density;
    std::vector<double> velocity;  // u_t on density.grid()
    std::vector<double> drift;     // g_t on density.grid()
    double a = 0.0, b = 0.0;
    double s_left = std::numeric_limits<double>::quiet_NaN();
    double s_right = std::numeric_limits<double>::quiet_NaN();

    double width() const { return b - a; }
};

struct ShapeDiagnostics {
    int iterations = 0;
    double final_mismatch = 0.0;       // W1 between the t=1 slice and mu_B
    double stationarity = 0.0;         // max |gradient| of the discrete action at exit
    double continuity_residual = 0.0;  // max |d_t rho + d_x(rho u)|, relative to the larger of the two terms
    double burgers_residual = 0.0;     // max |d_t u + u u_x - pi^2 rho rho_x|, relative to the largest term
    double tolerance = 0.0;
    std::string method;
};

inline constexpr double kWindowFraction = 0.1;

class LimitShape {
public:
    LimitShape() = default;

    const std::vector<ShapeSlice>& slices() const noexcept { return slices_; }
    std::vector<double> times() const {
        std::vector<double> t;
        for (const auto& s : slices_) t.push_back(s.t);
        return t;
    }
    const ShapeDiagnostics& diagnostics() const noexcept { return diag_; }
    const std::optional<FreeBridgeClosedForm>& closed_form() const noexcept { return closed_; }
    std::size_t grid_points() const noexcept { return grid_points_; }

    /// True when the shape can be evaluated at time t.
    bool covers(double t) const {
        if (closed_) return t > 0.0 && t < 1.0;
        if (lagrangian_) return t >= 0.0 && t <= 1.0;
        return !slices_.empty() && t >= slices_.front().t && t <= slices_.back().t;
    }

    /// Density at any covered time (closed form or rebuilt from quantile paths).
    GridDensity density_at(double t) const { return slice_at(t).density; }

    /// Full slice (density, velocity, drift, edges) at time t.
    ShapeSlice slice_at(double t) const {
        for (const auto& s : slices_)
            if (s.t == t) return s;
        if (!covers(t)) throw DomainError("LimitShape: time " + std::to_string(t) + " not covered");
        if (closed_) return closed_slice(*closed_, t, grid_points_);
        if (lagrangian_) return lagrangian_slice(t);
        throw DomainError("LimitShape: time " + std::to_string(t) + " is not a slice");
    }

    /// Mean-field drift g_t(x) = u_t(x) - H(rho_t)(x). Between slices the
    /// drift is linear in t; outside the support it is continued linearly
    /// from the nearest edge, up to the evaluation window (support widened
    /// by 10% of its width).
    double g(double t, double x) const {
        if (closed_) {
            if (!(t < 1.0)) throw DomainError("compute_g: t must be < 1");
            return closed_->drift(t, x);
        }
        return interpolate_in_time(t, [&](const ShapeSlice& s) { return slice_drift(s, x); });
    }

    /// Same as g() but positions beyond the window use the window-edge value;
    /// `excess` receives the distance beyond the window relative to the width.
    double g_clamped(double t, double x, double& excess) const {
        excess = 0.0;
        if (closed_) return closed_->drift(t, x);
        return interpolate_in_time(t, [&](const ShapeSlice& s) {
            double lo = s.a - kWindowFraction * s.width(), hi = s.b + kWindowFraction * s.width();
            double e = std::max(lo - x, x - hi) / s.width();
            excess = std::max(excess, e);
            return slice_drift(s, std::clamp(x, lo, hi));
        });
    }

    double u(double t, double x) const {
        if (closed_) return closed_->velocity(t, x);
        return interpolate_in_time(t, [&](const ShapeSlice& s) { return interp(s.density.grid(), s.velocity, x); });
    }

    /// Edges (a(t), b(t)) and square-root coefficients (s_left, s_right).
    std::pair<double, double> edges(double t) const {
        if (closed_) return {closed_->center(t) - closed_->radius(t), closed_->center(t) + closed_->radius(t)};
        auto s = slice_at(t);
        return {s.a, s.b};
    }
    std::pair<double, double> edge_coefficients(double t) const {
        if (closed_) return {closed_->edge_coefficient(t), closed_->edge_coefficient(t)};
        auto s = slice_at(t);
        return {s.s_left, s.s_right};
    }

    // Builders -------------------------------------------------------------

    static LimitShape from_closed_form(FreeBridgeClosedForm cf, const std::vector<double>& times,
                                       std::size_t grid_points = kDefaultGridPoints) {
        LimitShape shape;
        shape.closed_ = cf;
        shape.grid_points_ = grid_points;
        for (double t : times) {
            if (!(t > 0.0 && t < 1.0)) throw DomainError("closed-form shape: times must lie in (0,1)");
            shape.slices_.push_back(closed_slice(cf, t, grid_points));
        }
        std::sort(shape.slices_.begin(), shape.slices_.end(), [](auto& l, auto& r) { return l.t < r.t; });
        shape.diag_.method = "closed_form";
        return shape;
    }

    static LimitShape from_lagrangian(LagrangianSolution sol, GridDensity mu_a, GridDensity mu_b,
                                      const std::vector<double>& times, ShapeDiagnostics diag,
                                      std::size_t grid_points) {
        LimitShape shape;
        shape.lagrangian_ = std::move(sol);
        shape.mu_a_ = std::move(mu_a);
        shape.mu_b_ = std::move(mu_b);
        shape.grid_points_ = grid_points;
        shape.diag_ = std::move(diag);
        std::vector<double> ts = times;
        std::sort(ts.begin(), ts.end());
        for (double t : ts) {
            if (!(t >= 0.0 && t <= 1.0)) throw DomainError("limit shape: times must lie in [0,1]");
            shape.slices_.push_back(shape.lagrangian_slice(t));
        }
        return shape;
    }

    /// Numerical slices only (used when loading serialized shapes).
    static LimitShape from_slices(std::vector<ShapeSlice> slices, ShapeDiagnostics diag) {
        LimitShape shape;
        shape.slices_ = std::move(slices);
        shape.diag_ = std::move(diag);
        std::sort(shape.slices_.begin(), shape.slices_.end(), [](auto& l, auto& r) { return l.t < r.t; });
        if (!shape.slices_.empty()) shape.grid_points_ = shape.slices_.front().density.points();
        return shape;
    }

    static double interp(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
        if (x <= xs.front()) return ys.front();
        if (x >= xs.back()) return ys.back();
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        std::size_t k = static_cast<std::size_t>(it - xs.begin()) - 1;
        double w = (x - xs[k]) / (xs[k + 1] - xs[k]);
        return ys[k] + w * (ys[k + 1] - ys[k]);
    }

private:
    template <class F>
    double interpolate_in_time(double t, F&& at_slice) const {
        if (slices_.empty()) throw DomainError("LimitShape: no slices");
        if (t < slices_.front().t || t > slices_.back().t)
            throw DomainError("compute_g: time " + std::to_string(t) + " outside the shape's slices");
        auto it = std::lower_bound(slices_.begin(), slices_.end(), t, [](const ShapeSlice& s, double v) { return s.t < v; });
        if (it->t == t) return at_slice(*it);
        const ShapeSlice& hi = *it;
        const ShapeSlice& lo = *(it - 1);
        double w = (t - lo.t) / (hi.t - lo.t);
        return (1.0 - w) * at_slice(lo) + w * at_slice(hi);
    }

    static double slice_drift(const ShapeSlice& s, double x) {
        const double lo = s.a - kWindowFraction * s.width(), hi = s.b + kWindowFraction * s.width();
        if (x < lo || x > hi) throw DomainError("compute_g: x outside the evaluation window");
        const auto& g = s.density.grid();
        const auto& d = s.drift;
        if (x >= g.front() && x <= g.back()) return interp(g, d, x);
        // Linear continuation from the nearest edge.
        const std::size_t m = std::min<std::size_t>(8, g.size() - 1);
        if (x < g.front()) {
            double slope = (d[m] - d[0]) / (g[m] - g[0]);
            return d[0] + slope * (x - g.front());
        }
        const std::size_t N = g.size() - 1;
        double slope = (d[N] - d[N - m]) / (g[N] - g[N - m]);
        return d[N] + slope * (x - g.back());
    }

    static std::vector<double> drift_on_grid(const GridDensity& rho, const std::vector<double>& u) {
        const auto& g = rho.grid();
        const std::size_t N = g.size();
        std::vector<double> out(N);
        for (std::size_t k = 1; k + 1 < N; ++k) out[k] = u[k] - hilbert(rho, g[k]);
        if (N >= 4) {
            out[0] = out[1] + (out[2] - out[1]) * (g[0] - g[1]) / (g[2] - g[1]);
            out[N - 1] = out[N - 2] + (out[N - 2] - out[N - 3]) * (g[N - 1] - g[N - 2]) / (g[N - 2] - g[N - 3]);
        }
        return out;
    }

    static void fit_edges(ShapeSlice& s) {
        s.a = s.density.lo();
        s.b = s.density.hi();
        try {
            auto f = edge_coefficient(s.density, Side::left);
            s.a = f.edge;
            s.s_left = f.s;
        } catch (const FitError&) {
        }
        try {
            auto f = edge_coefficient(s.density, Side::right);
            s.b = f.edge;
            s.s_right = f.s;
        } catch (const FitError&) {
        }
    }

    static ShapeSlice closed_slice(const FreeBridgeClosedForm& cf, double t, std::size_t points) {
        ShapeSlice s;
        s.t = t;
        s.density = semicircle_density(cf.radius(t), cf.center(t), points);
        const auto& g = s.density.grid();
        s.velocity.resize(g.size());
        s.drift.resize(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) {
            s.velocity[k] = cf.velocity(t, g[k]);
            s.drift[k] = cf.drift(t, g[k]);
        }
        s.a = cf.center(t) - cf.radius(t);
        s.b = cf.center(t) + cf.radius(t);
        s.s_left = s.s_right = cf.edge_coefficient(t);
        return s;
    }

public:
    // Density from quantile nodes: cell densities dp/dX placed at cell
    // midpoints, rho^2 interpolated linearly in x (exact near a square-root
    // edge), zero at both ends of the support.
    static GridDensity density_from_nodes(const std::vector<double>& p, const std::vector<double>& X,
                                          std::size_t points) {
        std::vector<double> xs{X.front()}, r2{0.0};
        for (std::size_t c = 0; c + 1 < X.size(); ++c) {
            double dx = X[c + 1] - X[c];
            double rho = (p[c + 1] - p[c]) / dx;
            xs.push_back(0.5 * (X[c] + X[c + 1]));
            r2.push_back(rho * rho);
        }
        xs.push_back(X.back());
        r2.push_back(0.0);
        return GridDensity::from_function([&](double x) { return std::sqrt(std::max(0.0, interp(xs, r2, x))); },
                                          X.front(), X.back(), points);
    }

private:
    ShapeSlice lagrangian_slice(double t) const {
        const auto& L = *lagrangian_;
        const std::size_t K = L.times.size() - 1;
        double pos = std::clamp(t, 0.0, 1.0) * static_cast<double>(K);
        std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::floor(pos)), K - 1);
        double w = pos - static_cast<double>(k);
        std::vector<double> X(L.p.size()), U(L.p.size());
        for (std::size_t j = 0; j < L.p.size(); ++j) {
            X[j] = (1.0 - w) * L.X[k][j] + w * L.X[k + 1][j];
            U[j] = (1.0 - w) * L.U[k][j] + w * L.U[k + 1][j];
        }
        ShapeSlice s;
        s.t = t;
        if (t == 0.0)
            s.density = *mu_a_;
        else if (t == 1.0)
            s.density = *mu_b_;
        else
            s.density = density_from_nodes(L.p, X, grid_points_);
        const auto& g = s.density.grid();
        s.velocity.resize(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) s.velocity[i] = interp(X, U, g[i]);
        s.drift = drift_on_grid(s.density, s.velocity);
        fit_edges(s);
        return s;
    }

    std::vector<ShapeSlice> slices_;
    std::optional<FreeBridgeClosedForm> closed_;
    std::optional<LagrangianSolution> lagrangian_;
    std::optional<GridDensity> mu_a_, mu_b_;
    ShapeDiagnostics diag_;
    std::size_t grid_points_ = kDefaultGridPoints;
};

// ---------------------------------------------------------------------------

/// Closed-form shape for a = b = 0.
inline LimitShape watermelon_shape(const std::vector<double>& time_grid,
                                   std::size_t grid_points = kDefaultGridPoints) {
    return LimitShape::from_closed_form({0.0, 0.0}, time_grid, grid_points);
}

inline double compute_g(const LimitShape& shape, double t, double x) { return shape.g(t, x); }

struct SolverOptions {
    std::size_t rank_cells = 512;   // cells in the quantile coordinate
    std::size_t time_steps = 128;   // uniform steps on [0,1]
    std::size_t grid_points = kDefaultGridPoints;
    int max_iter = 500;
    double split_threshold = 1e-3;  // interior density / peak below this => support splitting
};

namespace detail {

/// Checks that a boundary density has a single interval of support with a
/// density bounded below away from its ends.
inline void check_single_interval(const GridDensity& d, double threshold, const char* which) {
    const double lo = d.quantile(0.05), hi = d.quantile(0.95);
    const double peak = d.max_value();
    for (std::size_t k = 0; k < d.points(); ++k) {
        double x = d.grid()[k];
        if (x > lo && x < hi && d.values()[k] < threshold * peak)
            throw TopologyError(std::string("solve_characteristics: ") + which +
                                " has a density gap inside its support (multi-interval support is unsupported)");
    }
}

struct ActionProblem {
    std::vector<double> p, w, dp3;  // ranks, node masses, cached (pi^2/6) dp^3
    std::size_t nodes = 0, K = 0;
    double h = 0.0;

    double value(const std::vector<std::vector<double>>& X) const {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < nodes; ++j) {
                double d = X[k + 1][j] - X[k][j];
                s += 0.5 * w[j] * d * d / h;
            }
        for (std::size_t k = 1; k < K; ++k)
            for (std::size_t c = 0; c + 1 < nodes; ++c) {
                double dx = X[k][c + 1] - X[k][c];
                if (!(dx > 0.0)) return std::numeric_limits<double>::infinity();
                s += h * dp3[c] / (dx * dx);
            }
        return s;
    }
};

}  // namespace detail

/// Limit shape for single-interval boundary densities (point masses on both
/// ends are routed to the closed form).
inline LimitShape solve_characteristics(const Measure1D& mu_A, const Measure1D& mu_B,
                                        const std::vector<double>& time_grid, double tol,
                                        const SolverOptions& opt = {}) {
    if (!(tol > 0.0)) throw ValidationError("solve_characteristics: tol must be positive");
    auto is_point = [](const Measure1D& m) {
        auto* a = std::get_if<AtomicMeasure>(&m);
        return a && a->lo() == a->hi();
    };
    if (is_point(mu_A) && is_point(mu_B)) {
        LimitShape shape = LimitShape::from_closed_form(
            {std::get<AtomicMeasure>(mu_A).lo(), std::get<AtomicMeasure>(mu_B).lo()}, time_grid, opt.grid_points);
        return shape;
    }
    if (!std::holds_alternative<GridDensity>(mu_A) || !std::holds_alternative<GridDensity>(mu_B))
        throw ValidationError("solve_characteristics: boundary measures must both be densities or both point masses");
    const auto& A = std::get<GridDensity>(mu_A);
    const auto& B = std::get<GridDensity>(mu_B);
    detail::check_single_interval(A, opt.split_threshold, "mu_A");
    detail::check_single_interval(B, opt.split_threshold, "mu_B");
    if (opt.rank_cells < 8 || opt.time_steps < 4) throw ValidationError("solve_characteristics: grid too coarse");

    // Rank nodes clustered at both ends, where the density vanishes.
    detail::ActionProblem P;
    const std::size_t Nc = opt.rank_cells;
    P.nodes = Nc + 1;
    P.K = opt.time_steps;
    P.h = 1.0 / static_cast<double>(P.K);
    P.p.resize(P.nodes);
    for (std::size_t j = 0; j < P.nodes; ++j)
        P.p[j] = 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(j) / static_cast<double>(Nc)));
    P.p.front() = 0.0;
    P.p.back() = 1.0;
    P.w.assign(P.nodes, 0.0);
    P.dp3.assign(Nc, 0.0);
    for (std::size_t c = 0; c < Nc; ++c) {
        double dp = P.p[c + 1] - P.p[c];
        P.w[c] += 0.5 * dp;
        P.w[c + 1] += 0.5 * dp;
        P.dp3[c] = std::numbers::pi * std::numbers::pi / 6.0 * dp * dp * dp;
    }

    std::vector<std::vector<double>> X(P.K + 1, std::vector<double>(P.nodes));
    for (std::size_t j = 0; j < P.nodes; ++j) {
        double qa = A.quantile(P.p[j]), qb = B.quantile(P.p[j]);
        for (std::size_t k = 0; k <= P.K; ++k) {
            double t = static_cast<double>(k) * P.h;
            X[k][j] = (1.0 - t) * qa + t * qb;
        }
    }
    // Boundary quantile functions must be strictly increasing on the rank nodes.
    for (std::size_t k : {std::size_t{0}, P.K})
        for (std::size_t j = 0; j + 1 < P.nodes; ++j)
            if (!(X[k][j + 1] > X[k][j]))
                throw TopologyError("solve_characteristics: boundary density has a gap (flat quantile function)");

    const std::size_t unknowns = P.nodes * (P.K - 1);
    auto index = [&](std::size_t k, std::size_t j) { return static_cast<Eigen::Index>((k - 1) * P.nodes + j); };
    const double width = std::max(A.hi(), B.hi()) - std::min(A.lo(), B.lo());

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    bool analyzed = false;
    double value = P.value(X);
    int iter = 0;
    double gmax = std::numeric_limits<double>::infinity();
    for (; iter < opt.max_iter; ++iter) {
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(unknowns));
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(unknowns * 7);
        for (std::size_t k = 1; k < P.K; ++k) {
            for (std::size_t j = 0; j < P.nodes; ++j) {
                const Eigen::Index r = index(k, j);
                const double wj = P.w[j] / P.h;
                grad(r) += wj * (2.0 * X[k][j] - X[k - 1][j] - X[k + 1][j]);
                trip.emplace_back(r, r, 2.0 * wj);
                if (k > 1) trip.emplace_back(r, index(k - 1, j), -wj);
                if (k + 1 < P.K) trip.emplace_back(r, index(k + 1, j), -wj);
            }
            for (std::size_t c = 0; c + 1 < P.nodes; ++c) {
                const double dx = X[k][c + 1] - X[k][c];
                const double g1 = -2.0 * P.h * P.dp3[c] / (dx * dx * dx);  // dE/d(dx)
                const double kappa = 6.0 * P.h * P.dp3[c] / (dx * dx * dx * dx);
                const Eigen::Index r0 = index(k, c), r1 = index(k, c + 1);
                grad(r0) -= g1;
                grad(r1) += g1;
                trip.emplace_back(r0, r0, kappa);
                trip.emplace_back(r1, r1, kappa);
                trip.emplace_back(r0, r1, -kappa);
                trip.emplace_back(r1, r0, -kappa);
            }
        }
        gmax = grad.cwiseAbs().maxCoeff();
        Eigen::SparseMatrix<double> H(static_cast<Eigen::Index>(unknowns), static_cast<Eigen::Index>(unknowns));
        H.setFromTriplets(trip.begin(), trip.end());
        if (!analyzed) {
            solver.analyzePattern(H);
            analyzed = true;
        }
        solver.factorize(H);
        if (solver.info() != Eigen::Success) throw SolverError("solve_characteristics: Hessian factorization failed", gmax);
        Eigen::VectorXd step = -solver.solve(grad);
        const double decrement = -grad.dot(step);
        const double step_max = step.cwiseAbs().maxCoeff();
        // Converged, or the decrement is at the rounding floor of the action.
        if ((step_max < tol * width && decrement < tol * tol) ||
            decrement <= 64.0 * std::numeric_limits<double>::epsilon() * std::abs(value))
            break;
        double alpha = 1.0;
        std::vector<std::vector<double>> trial = X;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t k = 1; k < P.K; ++k)
                for (std::size_t j = 0; j < P.nodes; ++j) trial[k][j] = X[k][j] + alpha * step(index(k, j));
            double tv = P.value(trial);
            if (std::isfinite(tv) && tv <= value - 1e-4 * alpha * decrement) {
                value = tv;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            if (step_max < 1e3 * tol * width) break;  // at the floating-point floor
            throw SolverError("solve_characteristics: line search failed", gmax);
        }
        X.swap(trial);
    }
    if (iter >= opt.max_iter)
        throw SolverError("solve_characteristics: no convergence after " + std::to_string(opt.max_iter) + " iterations",
                          gmax);

    LagrangianSolution sol;
    sol.p = P.p;
    sol.times.resize(P.K + 1);
    for (std::size_t k = 0; k <= P.K; ++k) sol.times[k] = static_cast<double>(k) * P.h;
    sol.U.assign(P.K + 1, std::vector<double>(P.nodes));
    for (std::size_t j = 0; j < P.nodes; ++j) {
        for (std::size_t k = 1; k < P.K; ++k) sol.U[k][j] = (X[k + 1][j] - X[k - 1][j]) / (2.0 * P.h);
        sol.U[0][j] = (-3.0 * X[0][j] + 4.0 * X[1][j] - X[2][j]) / (2.0 * P.h);
        sol.U[P.K][j] = (3.0 * X[P.K][j] - 4.0 * X[P.K - 1][j] + X[P.K - 2][j]) / (2.0 * P.h);
    }
    sol.X = X;

    // Residuals of the Eulerian equations on interior cells (middle 80% of the
    // support, interior solver times), from the rebuilt densities and velocities,
    // relative to the size of the terms being balanced.
    ShapeDiagnostics diag;
    diag.method = "quantile_action_newton";
    diag.iterations = iter;
    diag.stationarity = gmax;
    diag.tolerance = tol;
    {
        double cont = 0.0, burg = 0.0, cont_scale = 0.0, burg_scale = 0.0;
        const std::size_t G = 64;
        auto rebuilt = [&](std::size_t k) { return LimitShape::density_from_nodes(P.p, X[k], 1024); };
        for (std::size_t k = 2; k + 2 <= P.K; k += std::max<std::size_t>(1, P.K / 16)) {
            const GridDensity rm = rebuilt(k - 1), r0 = rebuilt(k), rp = rebuilt(k + 1);
            auto u_at = [&](std::size_t kk, double x) { return LimitShape::interp(X[kk], sol.U[kk], x); };
            const double lo = X[k][static_cast<std::size_t>(0.1 * Nc)], hi = X[k][static_cast<std::size_t>(0.9 * Nc)];
            const double dx = (hi - lo) / static_cast<double>(G);
            for (std::size_t i = 1; i < G; ++i) {
                const double x = lo + dx * static_cast<double>(i);
                const double xr = x + 0.5 * dx, xl = x - 0.5 * dx;
                const double dtr = (rp(x) - rm(x)) / (2.0 * P.h);
                const double dflux = (r0(xr) * u_at(k, xr) - r0(xl) * u_at(k, xl)) / dx;
                cont = std::max(cont, std::abs(dtr + dflux));
                cont_scale = std::max({cont_scale, std::abs(dtr), std::abs(dflux)});
                const double uu = u_at(k, x);
                const double dtu = (u_at(k + 1, x) - u_at(k - 1, x)) / (2.0 * P.h);
                const double adv = uu * (u_at(k, xr) - u_at(k, xl)) / dx;
                const double prs = std::numbers::pi * std::numbers::pi * r0(x) * (r0(xr) - r0(xl)) / dx;
                burg = std::max(burg, std::abs(dtu + adv - prs));
                burg_scale = std::max({burg_scale, std::abs(dtu), std::abs(adv), std::abs(prs)});
            }
        }
        diag.continuity_residual = cont_scale > 0.0 ? cont / cont_scale : cont;
        diag.burgers_residual = burg_scale > 0.0 ? burg / burg_scale : burg;
    }

    // Terminal mismatch: the t=1 quantile nodes rebuilt as a density, against mu_B.
    diag.final_mismatch = wasserstein1(LimitShape::density_from_nodes(P.p, X[P.K], opt.grid_points), B);
    // Support splitting: a rank cell in the bulk whose density collapses.
    for (std::size_t k = 1; k < P.K; ++k) {
        double peak = 0.0;
        std::vector<double> rho(Nc);
        for (std::size_t c = 0; c < Nc; ++c) {
            rho[c] = (P.p[c + 1] - P.p[c]) / (X[k][c + 1] - X[k][c]);
            peak = std::max(peak, rho[c]);
        }
        for (std::size_t c = 0; c < Nc; ++c)
            if (P.p[c] > 0.05 && P.p[c + 1] < 0.95 && rho[c] < opt.split_threshold * peak)
                throw TopologyError("solve_characteristics: support splits at t=" + std::to_string(sol.times[k]));
    }

    LimitShape shape = LimitShape::from_lagrangian(std::move(sol), A, B, time_grid, diag, opt.grid_points);
    return shape;
}

}  // namespace nibb
