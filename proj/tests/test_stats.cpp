#include <gtest/gtest.h>

#include <cmath>

#include "nibb/airy.hpp"
#include "nibb/stats.hpp"

using namespace nibb;

namespace {

// Ensemble whose every sample is the given configuration (plus a per-sample offset).
PathEnsemble constant_ensemble(const std::vector<double>& x, std::size_t samples, double t,
                               const std::vector<double>& offsets = {}) {
    BridgeSpec spec;
    spec.n = x.size();
    spec.a = WeylPoint::closed(std::vector<double>(x.size(), 0.0));
    spec.b = WeylPoint::closed(std::vector<double>(x.size(), 0.0));
    spec.record_times = {t};
    spec.samples = samples;
    std::vector<double> pos;
    for (std::size_t s = 0; s < samples; ++s)
        for (double v : x) pos.push_back(v + (offsets.empty() ? 0.0 : offsets[s]));
    return PathEnsemble(spec, pos);
}

}  // namespace

TEST(Rigidity, QuantileConfigurationHasZeroDeviation) {
    auto shape = watermelon_shape({0.5});
    auto gamma = quantiles(shape.density_at(0.5), 16);
    auto r = rigidity_report(constant_ensemble(gamma, 5, 0.5), shape, 0.5);
    ASSERT_EQ(r.median_dev.size(), 16u);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_EQ(r.median_dev[i], 0.0);
        EXPECT_EQ(r.p95_dev[i], 0.0);
    }
    for (double e : r.edge_excess) EXPECT_EQ(e, 0.0);
    EXPECT_EQ(r.bulk_median, 0.0);
}

TEST(Rigidity, ShiftedConfiguration) {
    auto shape = watermelon_shape({0.5});
    auto gamma = quantiles(shape.density_at(0.5), 16);
    const double c = -0.125;
    for (auto& g : gamma) g += c;
    auto r = rigidity_report(constant_ensemble(gamma, 3, 0.5), shape, 0.5);
    for (double m : r.median_dev) EXPECT_NEAR(m, std::abs(c), 1e-15);
    EXPECT_THROW(rigidity_report(constant_ensemble(gamma, 3, 0.5), shape, 0.25), UsageError);
}

TEST(Rigidity, TranslationEquivariant) {
    auto shape = watermelon_shape({0.5});
    std::vector<double> x{-0.8, -0.3, 0.05, 0.5, 0.95};
    auto r0 = rigidity_report(constant_ensemble(x, 4, 0.5, {0.0, 0.01, -0.02, 0.03}), shape, 0.5);
    // same configuration and shape moved by c (a free bridge from c to c)
    const double c = 0.5;
    auto moved = LimitShape::from_closed_form({c, c}, {0.5});
    std::vector<double> xs;
    for (double v : x) xs.push_back(v + c);
    auto r1 = rigidity_report(constant_ensemble(xs, 4, 0.5, {0.0, 0.01, -0.02, 0.03}), moved, 0.5);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(r0.median_dev[i], r1.median_dev[i], 1e-12);
}

TEST(Stieltjes, QuantileConfiguration) {
    auto shape = watermelon_shape({0.5});
    for (std::size_t n : {32, 64, 128}) {
        auto gamma = quantiles(shape.density_at(0.5), n);
        auto pts = stieltjes_compare(constant_ensemble(gamma, 2, 0.5), shape, 0.5, {cplx(0, 2), cplx(0, 100)});
        ASSERT_TRUE(pts[0].in_domain);
        EXPECT_LT(pts[0].max, 2.0 / static_cast<double>(n));
        EXPECT_LT(pts[1].max, 1e-3);
    }
}

TEST(Stieltjes, OutOfDomainIsFlagged) {
    auto shape = watermelon_shape({0.5});
    auto gamma = quantiles(shape.density_at(0.5), 32);
    auto pts = stieltjes_compare(constant_ensemble(gamma, 2, 0.5), shape, 0.5, {cplx(0.0, 0.01), cplx(0.3, -1.0)});
    EXPECT_FALSE(pts[0].in_domain);
    EXPECT_FALSE(pts[1].in_domain);
    EXPECT_EQ(pts[0].max, 0.0);
}

TEST(EdgeStatistics, ConventionsAndScaling) {
    auto shape = watermelon_shape({0.5});
    std::vector<double> x{-1.0, -0.2, 0.4, 1.1};
    auto ens = constant_ensemble(x, 1, 0.5);
    auto left = edge_statistics(ens, shape, 0.5, Side::left);
    EXPECT_NEAR(left.eta[0], 0.0, 1e-15);
    auto right = edge_statistics(ens, shape, 0.5, Side::right);
    const double s = std::pow(2.0, 1.5);
    EXPECT_NEAR(right.eta[0], std::pow(s * 4, 2.0 / 3.0) * 0.1, 1e-12);
    auto doubled = edge_statistics(ens, 0.5, Side::right, 1.0, 2 * s);
    EXPECT_NEAR(doubled.eta[0] / right.eta[0], std::pow(2.0, 2.0 / 3.0), 1e-12);
    EXPECT_THROW(edge_statistics(ens, 0.5, Side::right, 1.0, 0.0), UsageError);
    EXPECT_THROW(edge_statistics(ens, 0.5, Side::right, 1.0, NAN), UsageError);
}

TEST(EdgeStatistics, RefitStability) {
    // eta from an edge fitted on a 2x finer grid changes by less than 1e-2
    auto coarse = edge_coefficient(semicircle_density(1.0, 0.0, 2048), Side::right);
    auto fine = edge_coefficient(semicircle_density(1.0, 0.0, 4096), Side::right);
    std::vector<double> x;
    for (int i = 0; i < 64; ++i) x.push_back(-1.0 + 2.0 * (i + 0.5) / 64.0);
    x.back() = 1.02;
    auto ens = constant_ensemble(x, 1, 0.5);
    auto e1 = edge_statistics(ens, 0.5, Side::right, coarse.edge, coarse.s);
    auto e2 = edge_statistics(ens, 0.5, Side::right, fine.edge, fine.s);
    EXPECT_LT(std::abs(e1.eta[0] - e2.eta[0]), 1e-2);
}

TEST(KsDistance, Examples) {
    auto normal = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    EXPECT_NEAR(ks_distance({0.0}, normal), 0.5, 1e-15);
    EXPECT_THROW(ks_distance({}, normal), UsageError);
    TWTable t = TWTable::build(-10.0, 6.0, 0.1, 48);
    EXPECT_GE(ks_distance({-20.0, -30.0}, t), 1.0 - t.cdf_values().front() - 1e-12);
    std::vector<double> draws;
    for (int k = 0; k < 100000; ++k) draws.push_back(t.quantile((k + 0.5) / 100000.0));
    EXPECT_LT(ks_distance(draws, t), 0.01);
}

TEST(KsDistance, InvariantUnderMonotoneMaps) {
    auto logistic = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    std::vector<double> xs{-2.0, -0.3, 0.1, 0.4, 1.7, 2.2}, ys;
    for (double x : xs) ys.push_back(std::exp(x));
    double d1 = ks_distance(xs, logistic);
    double d2 = ks_distance(ys, [&](double y) { return logistic(std::log(y)); });
    EXPECT_NEAR(d1, d2, 1e-15);
}

TEST(Dominance, ShiftedCopyHasNoViolations) {
    std::vector<double> offsets;
    for (int s = 0; s < 200; ++s) offsets.push_back(std::sin(1.3 * s));
    auto lo = constant_ensemble({-1.0, 0.0, 1.0}, 200, 0.5, offsets);
    for (auto& o : offsets) o += 0.05;
    auto hi = constant_ensemble({-1.0, 0.0, 1.0}, 200, 0.5, offsets);
    auto r = dominance_test(hi, lo, 0.5);
    EXPECT_TRUE(r.violations.empty());
    for (double e : r.excess) EXPECT_EQ(e, 0.0);
    auto self = dominance_test(lo, lo, 0.5);
    EXPECT_TRUE(self.violations.empty());
    EXPECT_NEAR(self.band, std::sqrt(std::log(200.0) / 200.0), 1e-12);
}

TEST(Dominance, ReversedOrderIsDetected) {
    std::vector<double> offsets;
    for (int s = 0; s < 200; ++s) offsets.push_back(std::sin(1.3 * s));
    auto lo = constant_ensemble({0.0, 1.0}, 200, 0.5, offsets);
    for (auto& o : offsets) o += 1.0;
    auto hi = constant_ensemble({0.0, 1.0}, 200, 0.5, offsets);
    EXPECT_EQ(dominance_test(lo, hi, 0.5).violations.size(), 2u);
    EXPECT_THROW(dominance_test(constant_ensemble({0.0}, 2, 0.5), hi, 0.5), UsageError);
}
