#include <cmath>
#include <stdexcept>

#include <doctest.h>

#include "dyra/core.hpp"
#include "dyra/rng.hpp"

using namespace dyra;

TEST_CASE("SizeRange and BoxRecord validate their invariants") {
  CHECK_THROWS_AS(SizeRange(0.0, 10.0), std::invalid_argument);
  CHECK_THROWS_AS(SizeRange(10.0, 10.0), std::invalid_argument);
  CHECK_THROWS_AS(SizeRange(10.0, 5.0), std::invalid_argument);
  const SizeRange r(1024.0, 9216.0);
  CHECK(r.midpoint() == 5120.0);

  CHECK_THROWS_AS(BoxRecord(0, 0.0, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(BoxRecord(0, 3.0, -1.0), std::invalid_argument);
  const BoxRecord b(7, 12.5, 8.0);
  CHECK(b.area == 12.5 * 8.0);
  CHECK(b.image_id == 7);
}

TEST_CASE("BalanceState derived quantities") {
  const BalanceState s;
  CHECK(s.s_ap_small == 1024.0);
  CHECK(s.s_ap_large == 9216.0);
  CHECK(s.s_ap_mean() == 5120.0);
  CHECK(s.range().lower == doctest::Approx(6.8 * 1024.0));
  CHECK(s.range().upper == doctest::Approx(6.8 * 9216.0));
  CHECK(s.group_boundary() == doctest::Approx(34816.0));
  CHECK_THROWS_AS(BalanceState(-1.0, 1024.0, 9216.0, 4096.0, 65536.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(BalanceState(6.8, 9216.0, 1024.0, 4096.0, 65536.0),
                  std::invalid_argument);
}

TEST_CASE("ScalerConfig scale bounds") {
  const ScalerConfig cfg(2.0);
  CHECK(cfg.min_scale() == doctest::Approx(0.4));
  CHECK(cfg.max_scale() == 2.0);
  CHECK_THROWS_AS(ScalerConfig(10.0), std::invalid_argument);
  CHECK_THROWS_AS(ScalerConfig(-1.0), std::invalid_argument);
}

TEST_CASE("saturated_sigmoid saturation, midpoint and the banded value") {
  const SizeRange range(1024.0, 9216.0);
  CHECK(saturated_sigmoid(10.0 * range.upper, range) == 1.0);
  CHECK(saturated_sigmoid(0.5 * range.lower, range) == 0.0);
  CHECK(saturated_sigmoid(range.midpoint(), range) == doctest::Approx(0.5).epsilon(1e-12));
  // x = mid + span/4 maps to a sigmoid argument of exactly 3
  const double expected = 1.0 / (1.0 + std::exp(-3.0));
  CHECK(saturated_sigmoid(7168.0, range) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.952574).epsilon(1e-6));
  CHECK_THROWS_AS(saturated_sigmoid(std::nan(""), range), std::domain_error);
}

TEST_CASE("saturated_sigmoid is monotone, bounded, and nearly continuous at the joins") {
  const SizeRange range(500.0, 123456.0);
  Rng rng(42);
  double prev_x = 0.0, prev_v = -1.0;
  for (int i = 0; i < 2000; ++i) {
    const double x = prev_x + rng.uniform(0.0, 200.0);
    const double v = saturated_sigmoid(x, range);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v >= prev_v);
    prev_x = x;
    prev_v = v;
  }
  CHECK(1.0 - saturated_sigmoid(range.upper, range) < 0.005);
  CHECK(saturated_sigmoid(range.lower, range) < 0.005);
}

TEST_CASE("size_ratio saturates and complements") {
  const SizeRange range(1024.0, 9216.0);
  CHECK(size_ratio(BoxRecord(0, 10.0, 10.0), range).r == 0.0);
  CHECK(size_ratio(BoxRecord(0, 10.0, 10.0), range).r_prime == 1.0);
  CHECK(size_ratio(BoxRecord(0, 100.0, 100.0), range).r == 1.0);
  CHECK(size_ratio(BoxRecord(0, 100.0, 100.0), range).r_prime == 0.0);
  const auto mid = size_ratio(BoxRecord(0, 64.0, 80.0), range);  // area 5120 = midpoint
  CHECK(mid.r == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mid.r_prime == doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const double w = rng.uniform(1.0, 400.0), h = rng.uniform(1.0, 400.0);
    const auto ratio = size_ratio(BoxRecord(0, w, h), range);
    CHECK(std::abs(ratio.r + ratio.r_prime - 1.0) <= 1e-12);
  }
}

TEST_CASE("bound_scale hits both endpoints and stays inside [tau^2/10, tau]") {
  const ScalerConfig cfg(2.0);
  CHECK(bound_scale(-1e9, cfg) == 0.4);
  CHECK(bound_scale(0.0, cfg) == 1.0);
  CHECK(bound_scale(1e9, cfg) == 2.0);
  CHECK_THROWS_AS(bound_scale(std::nan(""), cfg), std::domain_error);

  Rng rng(11);
  double prev = -1e6, prev_phi = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const double raw = rng.uniform(-40.0, 40.0);
    const double phi = bound_scale(raw, cfg);
    CHECK(phi >= cfg.min_scale());
    CHECK(phi <= cfg.max_scale());
    (void)prev;
    (void)prev_phi;
  }
  // monotone non-decreasing in raw
  double last = 0.0;
  for (double raw = -20.0; raw <= 20.0; raw += 0.01) {
    const double phi = bound_scale(raw, cfg);
    CHECK(phi >= last);
    last = phi;
  }
}

TEST_CASE("assign_scale picks the log-nearest area with ties to the left") {
  const ScaleSet scales;
  CHECK(assign_scale(BoxRecord(0, 32.0, 32.0), scales) == 0);
  CHECK(assign_scale(BoxRecord(0, 512.0, 512.0), scales) == 4);
  // area 8100: log-distance 0.682 to 64^2 versus 0.704 to 128^2
  CHECK(assign_scale(BoxRecord(0, 90.0, 90.0), scales) == 1);
  {
    const double d_small = std::abs(std::log(8100.0) - std::log(4096.0));
    const double d_large = std::abs(std::log(8100.0) - std::log(16384.0));
    CHECK(d_small < d_large);
  }
  // oracle sweep: first index attaining the minimal log distance wins
  Rng tie_rng(12);
  for (int i = 0; i < 2000; ++i) {
    const double area = std::exp(tie_rng.uniform(4.0, 14.0));
    int expected = 0;
    double best = std::abs(std::log(area) - std::log(scales.sizes[0]));
    for (std::size_t s = 1; s < scales.size(); ++s) {
      const double d = std::abs(std::log(area) - std::log(scales.sizes[s]));
      if (d < best) {
        best = d;
        expected = static_cast<int>(s);
      }
    }
    CHECK(assign_scale_area(area, scales) == expected);
  }

  CHECK_THROWS_AS(ScaleSet(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(ScaleSet(std::vector<double>{4.0, 4.0}), std::invalid_argument);
}

TEST_CASE("assign_scale is independent of evaluation order") {
  const ScaleSet scales;
  Rng rng(3);
  std::vector<BoxRecord> boxes;
  for (int i = 0; i < 64; ++i) {
    boxes.emplace_back(0, rng.uniform(2.0, 600.0), rng.uniform(2.0, 600.0));
  }
  std::vector<int> forward, backward;
  for (const auto& b : boxes) forward.push_back(assign_scale(b, scales));
  for (auto it = boxes.rbegin(); it != boxes.rend(); ++it) {
    backward.push_back(assign_scale(*it, scales));
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    CHECK(forward[i] == backward[boxes.size() - 1 - i]);
  }
}
