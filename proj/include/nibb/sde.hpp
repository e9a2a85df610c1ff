#pragma once

// Euler-Maruyama samplers for nonintersecting Brownian bridges
//
//   dx_i = dB_i / sqrt(n) + v_i(t, x) dt,
//
// with the exact drift v = (1/n) grad log p_{1-t}(x, b) or the mean-field
// drift v_i = (1/n) sum_{j!=i} 1/(x_i - x_j) + g_t(x_i). Also the
// bridge <-> drifted-motion time change and the Calogero-Moser flow.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Eigenvalues>

#include "nibb/burgers.hpp"
#include "nibb/errors.hpp"
#include "nibb/km_kernel.hpp"
#include "nibb/measures.hpp"
#include "nibb/rng.hpp"

namespace nibb {

enum class DriftMode { exact_kernel, mean_field, confluent };

inline const char* to_string(DriftMode m) {
    switch (m) {
        case DriftMode::exact_kernel: return "exact-kernel";
        case DriftMode::mean_field: return "mean-field";
        case DriftMode::confluent: return "confluent";
    }
    return "?";
}

inline DriftMode parse_drift_mode(const std::string& s) {
    if (s == "exact-kernel" || s == "exact") return DriftMode::exact_kernel;
    if (s == "mean-field" || s == "meanfield") return DriftMode::mean_field;
    if (s == "confluent") return DriftMode::confluent;
    throw ValidationError("unknown drift mode: " + s);
}

struct BridgeSpec {
    std::size_t n = 0;
    WeylPoint a;  // start, ties allowed
    WeylPoint b;  // end, strictly increasing or confluent
    std::vector<double> record_times;
    DriftMode drift_mode = DriftMode::exact_kernel;
    double dt_max = 1e-3;
    double dt_edge_factor = 0.1;
    std::uint64_t seed = 0;
    std::size_t samples = 1;
    double opening_time = 1e-4;  // coincident starting particles are opened up at this time
    double step_floor = 1e-12;
    std::size_t workers = 1;

    void validate() const {
        if (n == 0) throw ValidationError("BridgeSpec: n must be >= 1");
        if (a.size() != n || b.size() != n) throw ValidationError("BridgeSpec: a and b must have n coordinates");
        if (samples == 0) throw ValidationError("BridgeSpec: samples must be >= 1");
        if (!(dt_max > 0.0)) throw ValidationError("BridgeSpec: dt_max must be positive");
        if (!(dt_edge_factor > 0.0)) throw ValidationError("BridgeSpec: dt_edge_factor must be positive");
        if (!(opening_time > 0.0 && opening_time < 0.5)) throw ValidationError("BridgeSpec: opening_time must be in (0, 0.5)");
        if (!(step_floor > 0.0)) throw ValidationError("BridgeSpec: step_floor must be positive");
        if (record_times.empty()) throw ValidationError("BridgeSpec: no record times");
        for (std::size_t i = 0; i < record_times.size(); ++i) {
            double t = record_times[i];
            if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("BridgeSpec: record times must lie in [0,1]");
            if (i > 0 && !(record_times[i - 1] < t)) throw ValidationError("BridgeSpec: record times must be strictly increasing");
        }
        if (drift_mode == DriftMode::confluent && !b.is_confluent())
            throw ValidationError("BridgeSpec: confluent mode needs all b_j equal");
        if (drift_mode == DriftMode::exact_kernel && !b.is_strict() && !b.is_confluent())
            throw ValidationError("BridgeSpec: exact-kernel mode needs strictly increasing b or a confluent b (mixed ties unsupported)");
    }
};

/// Sampled trajectories: positions[(sample * times + time_index) * n + rank].
class PathEnsemble {
public:
    PathEnsemble() = default;
    PathEnsemble(BridgeSpec spec, std::vector<double> positions)
        : spec_(std::move(spec)), positions_(std::move(positions)) {
        if (positions_.size() != spec_.samples * spec_.record_times.size() * spec_.n)
            throw ValidationError("PathEnsemble: position array has the wrong size");
    }

    const BridgeSpec& spec() const noexcept { return spec_; }
    std::size_t n() const noexcept { return spec_.n; }
    std::size_t samples() const noexcept { return spec_.samples; }
    const std::vector<double>& times() const noexcept { return spec_.record_times; }
    const std::vector<double>& positions() const noexcept { return positions_; }

    std::size_t time_index(double t) const {
        const auto& ts = spec_.record_times;
        auto it = std::find(ts.begin(), ts.end(), t);
        if (it == ts.end()) throw UsageError("time " + std::to_string(t) + " is not a recorded slice");
        return static_cast<std::size_t>(it - ts.begin());
    }

    std::span<const double> slice(std::size_t sample, std::size_t ti) const {
        return {positions_.data() + (sample * spec_.record_times.size() + ti) * spec_.n, spec_.n};
    }

    /// All particles of all samples at one recorded time, pooled.
    AtomicMeasure pooled(std::size_t ti) const {
        std::vector<double> all;
        all.reserve(spec_.n * spec_.samples);
        for (std::size_t s = 0; s < spec_.samples; ++s) {
            auto sl = slice(s, ti);
            all.insert(all.end(), sl.begin(), sl.end());
        }
        return AtomicMeasure(std::move(all));
    }

private:
    BridgeSpec spec_;
    std::vector<double> positions_;
};

/// Runs fn(sample) for every sample on `workers` threads. Results are stored
/// by index; the first failure in index order is rethrown.
template <class F>
void for_each_sample(std::size_t samples, std::size_t workers, F&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, samples));
    std::vector<std::exception_ptr> errors(samples);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (;;) {
            std::size_t s = next.fetch_add(1);
            if (s >= samples || failed.load()) return;
            try {
                fn(s);
            } catch (...) {
                errors[s] = std::current_exception();
                failed.store(true);
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

namespace detail {

inline std::string format_sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline double min_gap(std::span<const double> x) {
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < x.size(); ++i) g = std::min(g, x[i] - x[i - 1]);
    return g;
}

inline bool strictly_ordered(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (!(x[i - 1] < x[i])) return false;
    return true;
}

// Opens groups of coincident starting particles at time tau: a group of k
// particles at c is replaced by the eigenvalues of a k x k GUE matrix with
// entry variance tau(1-tau)/n, centred where the free bridge puts it. This is
// the exact law when a and b are both confluent.
inline std::vector<double> open_start(const BridgeSpec& spec, std::size_t sample, double tau) {
    const auto& a = spec.a.coords();
    const auto& b = spec.b.coords();
    const double n = static_cast<double>(spec.n);
    std::vector<double> x(a.begin(), a.end());
    std::size_t group = 0;
    for (std::size_t i = 0; i < a.size();) {
        std::size_t j = i;
        while (j + 1 < a.size() && a[j + 1] == a[i]) ++j;
        const std::size_t k = j - i + 1;
        double btarget = 0.0;
        for (std::size_t r = i; r <= j; ++r) btarget += b[r];
        btarget /= static_cast<double>(k);
        const double center = (1.0 - tau) * a[i] + tau * btarget;
        if (k == 1) {
            x[i] = center + std::sqrt(tau * (1.0 - tau) / n) *
                                counter_normal(spec.seed, Stream::initial, sample, 2 * group, 0);
        } else {
            const double sd = std::sqrt(tau * (1.0 - tau) / n);
            Eigen::MatrixXcd H(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
            for (std::size_t r = 0; r < k; ++r)
                for (std::size_t c = r; c < k; ++c) {
                    const auto idx = static_cast<std::uint32_t>(r * k + c);
                    double re = counter_normal(spec.seed, Stream::initial, sample, 2 * group, idx);
                    if (r == c) {
                        H(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sd * re;
                    } else {
                        double im = counter_normal(spec.seed, Stream::initial, sample, 2 * group + 1, idx);
                        std::complex<double> z = sd / std::sqrt(2.0) * std::complex<double>(re, im);
                        H(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = z;
                        H(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = std::conj(z);
                    }
                }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H, Eigen::EigenvaluesOnly);
            for (std::size_t r = 0; r < k; ++r) x[i + r] = center + es.eigenvalues()(static_cast<Eigen::Index>(r));
        }
        ++group;
        i = j + 1;
    }
    if (!strictly_ordered(x))
        throw IntegrationError("opening of coincident start overlaps neighbouring particles; reduce opening_time");
    return x;
}

using DriftFn = std::function<void(double t, std::span<const double> x, std::vector<double>& v)>;

// Integrates one sample and writes its recorded slices into out (times x n).
inline void integrate_sample(const BridgeSpec& spec, std::size_t sample, const DriftFn& drift,
                             std::span<double> out) {
    const std::size_t n = spec.n;
    const double nd = static_cast<double>(n);
    const auto& rec = spec.record_times;
    std::size_t next = 0;
    auto record = [&](std::span<const double> x) {
        std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(next * n));
        ++next;
    };

    double t = 0.0;
    std::vector<double> x(spec.a.coords());
    while (next < rec.size() && rec[next] == 0.0) record(x);
    if (next == rec.size()) return;

    const double t_last = rec.back() == 1.0 ? (rec.size() >= 2 ? rec[rec.size() - 2] : 0.0) : rec.back();
    if (!spec.a.is_strict() && t_last > 0.0) {
        double first = rec[next] == 1.0 ? 1.0 : rec[next];
        t = std::min(spec.opening_time, 0.5 * first);
        x = open_start(spec, sample, t);
    }

    std::vector<double> v(n), v_new(n), x_new(n);
    if (t < t_last) drift(t, x, v);
    std::uint64_t step = 0;
    while (next < rec.size() && rec[next] < 1.0) {
        const double target = rec[next];
        while (t < target) {
            double dt = std::min({spec.dt_max, spec.dt_edge_factor * (1.0 - t), target - t});
            if (n > 1) {
                double g = min_gap(x);
                dt = std::min(dt, g * g * nd / 4.0);
            }
            // The floor bounds the halvings; when the gap cap alone is below it
            // (a near-collision), 20 halvings of the capped step are still allowed.
            const double floor = std::min(spec.step_floor, std::ldexp(dt, -20));
            for (;;) {
                if (dt < floor)
                    throw IntegrationError("step size fell below " + format_sci(floor) + " at t=" + format_sci(t) +
                                           " (sample " + std::to_string(sample) + ", min gap " +
                                           format_sci(n > 1 ? min_gap(x) : 0.0) + ")");
                const double sd = std::sqrt(dt / nd);
                for (std::size_t i = 0; i < n; ++i)
                    x_new[i] = x[i] + v[i] * dt +
                               sd * counter_normal(spec.seed, Stream::brownian, sample, step, static_cast<std::uint32_t>(i));
                ++step;
                const bool lands = dt >= target - t;
                const double t_new = lands ? target : t + dt;
                bool ok = strictly_ordered(x_new);
                if (ok && t_new < t_last) {
                    try {
                        drift(t_new, x_new, v_new);
                    } catch (const ConditioningError&) {
                        ok = false;
                    }
                }
                if (ok) {
                    x.swap(x_new);
                    v.swap(v_new);
                    t = t_new;
                    break;
                }
                dt *= 0.5;
            }
        }
        record(x);
    }
    if (next < rec.size()) record(spec.b.coords());  // t = 1: pinned endpoint
}

inline void interaction(std::span<const double> x, std::vector<double>& v) {
    const std::size_t n = x.size();
    const double nd = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) s += 1.0 / (x[i] - x[j]);
        v[i] = s / nd;
    }
}

inline PathEnsemble run_ensemble(const BridgeSpec& spec, const DriftFn& drift) {
    const std::size_t per_sample = spec.record_times.size() * spec.n;
    std::vector<double> positions(spec.samples * per_sample);
    for_each_sample(spec.samples, spec.workers, [&](std::size_t s) {
        integrate_sample(spec, s, drift, std::span<double>(positions.data() + s * per_sample, per_sample));
    });
    return PathEnsemble(spec, std::move(positions));
}

}  // namespace detail

/// Exact-kernel (or confluent closed-form) bridge sampler.
inline PathEnsemble simulate_bridge(const BridgeSpec& spec) {
    spec.validate();
    if (spec.drift_mode == DriftMode::mean_field)
        throw ValidationError("simulate_bridge: mean-field mode needs a limit shape (use simulate_meanfield)");
    const double nd = static_cast<double>(spec.n);
    detail::DriftFn drift;
    if (spec.b.is_confluent()) {
        const double c = spec.b[0];
        drift = [c, nd](double t, std::span<const double> x, std::vector<double>& v) {
            auto d = km_drift_confluent(x, c, t, nd);
            for (std::size_t i = 0; i < x.size(); ++i) v[i] = d[i] / nd;
        };
    } else {
        const std::vector<double> b = spec.b.coords();
        drift = [b, nd](double t, std::span<const double> x, std::vector<double>& v) {
            auto d = km_drift(x, b, t, nd);
            for (std::size_t i = 0; i < x.size(); ++i) v[i] = d[i] / nd;
        };
    }
    return detail::run_ensemble(spec, drift);
}

/// Mean-field sampler: Dyson interaction plus the limit-shape drift g_t.
inline PathEnsemble simulate_meanfield(const BridgeSpec& spec, const LimitShape& shape) {
    BridgeSpec s = spec;
    s.drift_mode = DriftMode::mean_field;
    s.validate();
    double tmax = 0.0;
    for (double t : s.record_times)
        if (t < 1.0) tmax = std::max(tmax, t);
    if (!shape.closed_form()) {
        const auto ts = shape.times();
        if (ts.empty() || ts.front() > 0.0 || ts.back() < tmax)
            throw ValidationError("simulate_meanfield: shape does not cover [0, max record time]");
    }
    detail::DriftFn drift = [&shape](double t, std::span<const double> x, std::vector<double>& v) {
        detail::interaction(x, v);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double excess = 0.0;
            v[i] += shape.g_clamped(t, x[i], excess);
            if (excess > kWindowFraction)
                throw IntegrationError("simulate_meanfield: particle left the shape window by more than 10% of the support width at t=" +
                                       std::to_string(t));
        }
    };
    return detail::run_ensemble(s, drift);
}

// ---------------------------------------------------------------------------
// Bridge <-> drifted Brownian motion: W(t) = (1 - t) B(t / (1 - t)).

struct ScalarPath {
    std::vector<double> times;
    std::vector<double> values;
};

enum class DualDirection { bridge_to_motion, motion_to_bridge };

/// Maps a trajectory through the time change. Without an output grid the
/// image times are the mapped input times; with one, the mapped path is
/// interpolated linearly in the reparametrized time.
inline ScalarPath dual_transform(const ScalarPath& path, DualDirection dir,
                                 const std::vector<double>& output_times = {}) {
    if (path.times.size() != path.values.size() || path.times.empty())
        throw ValidationError("dual_transform: times and values must have equal nonzero length");
    ScalarPath mapped;
    for (std::size_t k = 0; k < path.times.size(); ++k) {
        const double t = path.times[k];
        if (k > 0 && !(path.times[k - 1] < t)) throw ValidationError("dual_transform: times must increase");
        if (dir == DualDirection::bridge_to_motion) {
            if (!(t >= 0.0 && t < 1.0)) throw DomainError("dual_transform: bridge times must lie in [0,1)");
            mapped.times.push_back(t / (1.0 - t));
            mapped.values.push_back(path.values[k] / (1.0 - t));
        } else {
            if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("dual_transform: motion times must be finite and >= 0");
            const double u = t / (1.0 + t);
            mapped.times.push_back(u);
            mapped.values.push_back((1.0 - u) * path.values[k]);
        }
    }
    if (output_times.empty()) return mapped;
    ScalarPath out;
    for (double t : output_times) {
        if (t < mapped.times.front() || t > mapped.times.back())
            throw DomainError("dual_transform: output time outside the mapped range");
        out.times.push_back(t);
        out.values.push_back(LimitShape::interp(mapped.times, mapped.values, t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Calogero-Moser flow: dx_i/dt = v_i, dv_i/dt = -(2/n^2) sum_{j!=i} (x_i - x_j)^{-3},
// the Hamiltonian flow of H = (1/2) sum v_i^2 - (1/(2n^2)) sum_{i!=j} (x_i - x_j)^{-2}.

struct CMState {
    double t = 0.0;
    std::vector<double> x;
    std::vector<double> v;
    double energy = 0.0;
};

inline double cm_energy(std::span<const double> x, std::span<const double> v) {
    const double n = static_cast<double>(x.size());
    double kin = 0.0, pot = 0.0;
    for (double vi : v) kin += 0.5 * vi * vi;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j)
            if (i != j) pot += 1.0 / ((x[i] - x[j]) * (x[i] - x[j]));
    return kin - pot / (2.0 * n * n);
}

inline CMState make_cm_state(std::vector<double> x, std::vector<double> v, double t = 0.0) {
    if (x.size() != v.size() || x.empty()) throw ValidationError("CMState: x and v must have equal nonzero length");
    if (!detail::strictly_ordered(x)) throw ValidationError("CMState: x must be strictly increasing");
    CMState s{t, std::move(x), std::move(v), 0.0};
    s.energy = cm_energy(s.x, s.v);
    return s;
}

namespace detail {
inline void cm_accel(const std::vector<double>& x, std::vector<double>& acc) {
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j)
            if (j != i) {
                double d = x[i] - x[j];
                s += 1.0 / (d * d * d);
            }
        acc[i] = -2.0 * s / (n * n);
    }
}
}  // namespace detail

inline constexpr double kCollisionGap = 1e-9;

/// Classic RK4 on the Calogero-Moser system; returns every state including
/// the initial one.
inline std::vector<CMState> cm_integrate(const CMState& initial, double t_end, double dt) {
    if (!(dt > 0.0)) throw ValidationError("cm_integrate: dt must be positive");
    if (!(t_end >= initial.t)) throw ValidationError("cm_integrate: t_end before the initial time");
    if (!detail::strictly_ordered(initial.x)) throw ValidationError("cm_integrate: x must be strictly increasing");
    const std::size_t n = initial.x.size();
    const auto steps = static_cast<std::size_t>(std::ceil((t_end - initial.t) / dt - 1e-9));
    const double h = steps ? (t_end - initial.t) / static_cast<double>(steps) : 0.0;
    std::vector<CMState> traj;
    traj.reserve(steps + 1);
    traj.push_back(make_cm_state(initial.x, initial.v, initial.t));

    std::vector<double> x = initial.x, v = initial.v, xt(n), vt(n);
    std::vector<double> k1x(n), k2x(n), k3x(n), k4x(n), k1v(n), k2v(n), k3v(n), k4v(n);
    for (std::size_t s = 0; s < steps; ++s) {
        k1x = v;
        detail::cm_accel(x, k1v);
        for (std::size_t i = 0; i < n; ++i) {
            xt[i] = x[i] + 0.5 * h * k1x[i];
            vt[i] = v[i] + 0.5 * h * k1v[i];
        }
        k2x = vt;
        detail::cm_accel(xt, k2v);
        for (std::size_t i = 0; i < n; ++i) {
            xt[i] = x[i] + 0.5 * h * k2x[i];
            vt[i] = v[i] + 0.5 * h * k2v[i];
        }
        k3x = vt;
        detail::cm_accel(xt, k3v);
        for (std::size_t i = 0; i < n; ++i) {
            xt[i] = x[i] + h * k3x[i];
            vt[i] = v[i] + h * k3v[i];
        }
        k4x = vt;
        detail::cm_accel(xt, k4v);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        const double t = initial.t + h * static_cast<double>(s + 1);
        if (n > 1 && !(detail::min_gap(x) >= kCollisionGap))
            throw IntegrationError("cm_integrate: particle collision at t=" + std::to_string(t));
        CMState st{t, x, v, cm_energy(x, v)};
        traj.push_back(std::move(st));
    }
    return traj;
}

}  // namespace nibb
