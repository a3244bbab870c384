#include <cmath>
#include <random>
#include <sstream>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_spline.h>
#include <gtest/gtest.h>

#include "gridvolt/profiles.hpp"

using namespace gridvolt;

namespace {

// GSL natural cubic spline sampled every minute, clamped at zero.
std::vector<double> gsl_natural(const std::vector<double>& knots, int spacing) {
  const std::size_t n = knots.size();
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = static_cast<double>(i) * spacing;
  gsl_interp_accel* acc = gsl_interp_accel_alloc();
  gsl_spline* sp = gsl_spline_alloc(gsl_interp_cspline, n);
  gsl_spline_init(sp, xs.data(), knots.data(), n);
  std::vector<double> out;
  for (std::size_t m = 0; m <= (n - 1) * static_cast<std::size_t>(spacing); ++m)
    out.push_back(std::max(0.0, gsl_spline_eval(sp, static_cast<double>(m), acc)));
  gsl_spline_free(sp);
  gsl_interp_accel_free(acc);
  return out;
}

}  // namespace

TEST(Interpolate, MatchesIndependentNaturalSpline) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> knots(5 + static_cast<std::size_t>(trial) * 3);
    for (auto& k : knots) k = u(rng);
    const auto ours = interpolate_profile(knots, 30);
    const auto ref = gsl_natural(knots, 30);
    ASSERT_EQ(ours.values.size(), ref.size());
    EXPECT_FALSE(ours.linear_fallback);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(ours.values[i], ref[i], 1e-9) << trial << " " << i;
  }
}

TEST(Interpolate, KnotsReproducedExactly) {
  const std::vector<double> knots{0.3, 1.7, 0.2, 2.9, 1.1, 0.8};
  const auto v = interpolate_profile(knots, 30).values;
  ASSERT_EQ(v.size(), 151u);
  for (std::size_t i = 0; i < knots.size(); ++i) EXPECT_EQ(v[i * 30], knots[i]);
}

TEST(Interpolate, ConstantStaysConstant) {
  const auto v = interpolate_profile(std::vector<double>(8, 1.25), 30).values;
  for (double x : v) EXPECT_NEAR(x, 1.25, 1e-15);
}

TEST(Interpolate, NeverNegative) {
  // Sharp dip would overshoot below zero without the clamp.
  const auto v = interpolate_profile({2.0, 2.0, 0.0, 0.0, 2.0, 2.0}, 30).values;
  for (double x : v) EXPECT_GE(x, 0.0);
}

TEST(Interpolate, ShortSeriesFallBackToLinear) {
  const auto r = interpolate_profile({0.0, 3.0, 1.0}, 30);
  EXPECT_TRUE(r.linear_fallback);
  EXPECT_NEAR(r.values[15], 1.5, 1e-15);
  EXPECT_NEAR(r.values[45], 2.0, 1e-15);
  EXPECT_THROW(interpolate_profile({}, 30), InputError);
  EXPECT_THROW(interpolate_profile({1.0, std::nan("")}, 30), InputError);
}

TEST(ProfileCsv, MinuteSeriesRoundTrip) {
  const Horizon hz{8 * 60, 90};
  std::vector<std::vector<double>> series(3, std::vector<double>(90));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 90; ++t) series[c][t] = 0.5 + 0.01 * static_cast<double>(c * 7 + t % 13);
  std::stringstream ss;
  write_series_csv(ss, series, hz);
  const auto back = read_series_csv(ss, hz);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 90; ++t) EXPECT_NEAR(back[c][t], series[c][t], 1e-6);
}

TEST(ProfileCsv, HalfHourSeriesInterpolatedAndCropped) {
  std::stringstream ss;
  ss << "timestamp,customer_id,p_kw\n";
  const std::vector<double> knots{0.4, 0.9, 1.3, 0.7, 0.5, 1.0};
  for (std::size_t i = 0; i < knots.size(); ++i) {
    const int m = 7 * 60 + 30 * static_cast<int>(i);
    char stamp[32];
    std::snprintf(stamp, sizeof stamp, "2012-01-15 %02d:%02d", m / 60, m % 60);
    ss << stamp << ",4," << knots[i] << "\n";
  }
  const Horizon hz{8 * 60, 60};
  const auto s = read_series_csv(ss, hz);
  ASSERT_EQ(s.size(), 1u);
  const auto ref = gsl_natural(knots, 30);
  for (std::size_t t = 0; t < 60; ++t) EXPECT_NEAR(s[0][t], ref[t + 60], 1e-9);
}

TEST(ProfileCsv, Diagnostics) {
  const Horizon hz{8 * 60, 10};
  std::stringstream neg("08:00,1,-1\n08:01,1,1\n");
  EXPECT_THROW(read_series_csv(neg, hz), InputError);
  std::stringstream irregular("08:00,1,1\n08:01,1,1\n08:03,1,1\n");
  EXPECT_THROW(read_series_csv(irregular, hz), InputError);
  std::stringstream short_cover("08:00,1,1\n08:01,1,1\n");
  EXPECT_THROW(read_series_csv(short_cover, hz), InputError);
  EXPECT_THROW(read_series_csv(std::filesystem::path("/nonexistent/p.csv"), hz), InputError);
}

TEST(Synthetic, MeanDemandAndShape) {
  const auto p = generate_profiles({30, 5.0, 0.77, 9});
  p.validate();
  ASSERT_EQ(p.demand_kw.size(), 30u);
  double total = 0.0;
  for (const auto& s : p.demand_kw) {
    double m = 0.0;
    for (double v : s) m += v;
    m /= static_cast<double>(s.size());
    EXPECT_NEAR(m, 0.77, 1e-12);
    total += m;
  }
  EXPECT_NEAR(total / 30.0, 0.77, 1e-12);
  // Clear-sky peak at 13:00 on a 06:00..20:00 day.
  EXPECT_NEAR(p.pv(0, 5 * 60), 5.0, 1e-12);
  EXPECT_EQ(p.pv(3, 100), p.pv(17, 100));
}

TEST(Synthetic, SeededAndAssignedModulo) {
  const auto a = generate_profiles({4, 5.0, 0.77, 1}), b = generate_profiles({4, 5.0, 0.77, 1});
  EXPECT_EQ(a.demand_kw, b.demand_kw);
  EXPECT_NE(a.demand_kw, generate_profiles({4, 5.0, 0.77, 2}).demand_kw);
  EXPECT_EQ(a.demand(6, 10), a.demand(2, 10));
  EXPECT_NEAR(a.reactive_demand(1, 5), 0.328 * a.demand(1, 5), 1e-15);
}
