#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "dyra/core.hpp"
#include "dyra/losses.hpp"
#include "dyra/rng.hpp"

using namespace dyra;

namespace {

// Brute-force minimizer of the scale loss over a phi grid.
double grid_argmin_phi(double r_prime, double tau, double step) {
  double best_phi = step, best = scale_loss(r_prime, step, tau);
  for (double phi = 2.0 * step; phi < tau; phi += step) {
    const double v = scale_loss(r_prime, phi, tau);
    if (v < best) {
      best = v;
      best_phi = phi;
    }
  }
  return best_phi;
}

}  // namespace

TEST_CASE("scale_loss values and error paths") {
  CHECK(scale_loss(0.5, 1.0, 2.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(scale_loss(1.0, 1.6, 2.0) == doctest::Approx(-std::log(0.8)).epsilon(1e-15));
  CHECK(scale_loss(1.0, 1.6, 2.0) == doctest::Approx(0.223144).epsilon(1e-6));
  // phi may sit on the closed bounds; the ratio clamp keeps the logs finite
  CHECK(std::isfinite(scale_loss(0.3, 2.0, 2.0)));
  CHECK(std::isfinite(scale_loss(0.3, 0.0, 2.0)));
  CHECK_THROWS_AS(scale_loss(0.5, 2.1, 2.0), std::domain_error);
  CHECK_THROWS_AS(scale_loss(0.5, -0.1, 2.0), std::domain_error);
  CHECK_THROWS_AS(scale_loss(1.5, 1.0, 2.0), std::domain_error);
}

TEST_CASE("scale_loss minimizer sits at r'*tau") {
  CHECK(grid_argmin_phi(0.7, 2.0, 1e-4) == doctest::Approx(1.4).epsilon(1e-3));
  Rng rng(21);
  for (int i = 0; i < 10; ++i) {
    const double r_prime = rng.uniform(0.05, 0.95);
    CHECK(std::abs(grid_argmin_phi(r_prime, 2.0, 1e-3) - r_prime * 2.0) <= 2e-3);
  }
}

TEST_CASE("scale_loss BCE symmetry") {
  Rng rng(22);
  for (int i = 0; i < 200; ++i) {
    const double r_prime = rng.uniform(0.0, 1.0);
    const double phi = rng.uniform(0.05, 1.95);
    const double tau = 2.0;
    CHECK(scale_loss(r_prime, phi, tau) ==
          doctest::Approx(scale_loss(1.0 - r_prime, tau - phi, tau)).epsilon(1e-12));
  }
}

TEST_CASE("scale_loss tape and double paths agree") {
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    const double r_prime = rng.uniform(0.0, 1.0);
    const double phi = rng.uniform(0.01, 1.99);
    Tape tape;
    const Var loss = scale_loss(tape, tape.leaf(r_prime), tape.leaf(phi), 2.0);
    CHECK(loss.value() == scale_loss(r_prime, phi, 2.0));
  }
}

TEST_CASE("pareto_scale_loss collapses, sums over scales and averages over images") {
  const ScaleSet scales;
  const double tau = 2.0;

  // one image, one box, one scale: the Pareto aggregation is the scale loss
  ImageScaleCase single;
  single.phi = 1.3;
  single.boxes = {ScaledBox{0.8, 2}};
  CHECK(pareto_scale_loss({single}, scales, tau) ==
        doctest::Approx(scale_loss(0.8, 1.3, tau)).epsilon(1e-15));

  // two occupied scales: per-scale means add up
  ImageScaleCase two_scales;
  two_scales.phi = 1.5;
  two_scales.boxes = {ScaledBox{0.7, 0}, ScaledBox{0.2, 3}};
  const double expected =
      scale_loss(0.7, 1.5, tau) + scale_loss(0.2, 1.5, tau);
  CHECK(pareto_scale_loss({two_scales}, scales, tau) ==
        doctest::Approx(expected).epsilon(1e-15));

  // batch averaging over images
  const double a = pareto_scale_loss({single}, scales, tau);
  const double b = pareto_scale_loss({two_scales}, scales, tau);
  CHECK(pareto_scale_loss({single, two_scales}, scales, tau) ==
        doctest::Approx(0.5 * (a + b)).epsilon(1e-15));
}

TEST_CASE("pareto_scale_loss excludes empty images from the batch count") {
  const ScaleSet scales;
  ImageScaleCase empty;
  empty.phi = 1.0;
  ImageScaleCase one;
  one.phi = 0.9;
  one.boxes = {ScaledBox{0.4, 1}};
  CHECK(pareto_scale_loss({empty, one}, scales, 2.0) ==
        doctest::Approx(scale_loss(0.4, 0.9, 2.0)).epsilon(1e-15));
  CHECK(pareto_scale_loss({empty, empty}, scales, 2.0) == 0.0);
  CHECK_THROWS_AS(pareto_scale_loss({ImageScaleCase{1.0, {ScaledBox{0.5, 9}}}}, scales, 2.0),
                  std::out_of_range);
}

TEST_CASE("pareto_scale_loss matches an independent brute force on random instances") {
  const ScaleSet scales;
  const double tau = 2.0;
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ImageScaleCase> batch;
    const int n_images = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n_images; ++i) {
      ImageScaleCase image;
      image.phi = rng.uniform(0.05, 1.95);
      const int n_boxes = static_cast<int>(rng.below(20));
      for (int b = 0; b < n_boxes; ++b) {
        image.boxes.push_back(
            ScaledBox{rng.uniform(0.0, 1.0), static_cast<int>(rng.below(scales.size()))});
      }
      batch.push_back(std::move(image));
    }

    // independent accumulation: explicit double sum over scales and boxes
    double total = 0.0;
    int counted_images = 0;
    for (const auto& image : batch) {
      if (image.boxes.empty()) continue;
      double image_total = 0.0;
      for (std::size_t s = 0; s < scales.size(); ++s) {
        double sum = 0.0;
        int count = 0;
        for (const auto& box : image.boxes) {
          if (static_cast<std::size_t>(box.scale_index) == s) {
            sum += -(box.r_prime * std::log(image.phi / tau) +
                     (1.0 - box.r_prime) * std::log(1.0 - image.phi / tau));
            ++count;
          }
        }
        if (count > 0) image_total += sum / count;
      }
      total += image_total;
      ++counted_images;
    }
    const double expected = counted_images == 0 ? 0.0 : total / counted_images;
    CHECK(pareto_scale_loss(batch, scales, tau) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("f_norm fixed points and weighting") {
  const auto equal = f_norm({0.5, 0.5});
  CHECK(equal.first == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(equal.second == doctest::Approx(0.5).epsilon(1e-15));

  const auto skewed = f_norm({0.8, 0.4});
  CHECK(skewed.first == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(skewed.second == doctest::Approx(0.25).epsilon(1e-12));

  const auto fixed = f_norm({0.9, 0.1});
  CHECK(fixed.first == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(fixed.second == doctest::Approx(0.1).epsilon(1e-12));

  Rng rng(41);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(0.0, 1.2);  // above 1 exercises the clamp
    const double b = rng.uniform(0.0, 1.2);
    const auto w = f_norm({a, b});
    CHECK(std::abs(w.first + w.second - 1.0) <= 1e-12);
    if (a < b) CHECK(w.first <= w.second);
    if (a > b) CHECK(w.first >= w.second);
  }
}

TEST_CASE("f_sub rescales the pair so the minimum is exactly 1") {
  const auto equal = f_sub({0.5, 0.5});
  CHECK(equal.first == 1.0);
  CHECK(equal.second == 1.0);
  const auto up = f_sub({0.75, 0.25});
  CHECK(up.first == 2.0);
  CHECK(up.second == 1.0);
  const auto down = f_sub({0.25, 0.75});
  CHECK(down.first == 1.0);
  CHECK(down.second == 2.0);

  Rng rng(43);
  for (int i = 0; i < 500; ++i) {
    const auto s = f_sub({rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)});
    CHECK(std::min(s.first, s.second) == 1.0);
  }
}

TEST_CASE("min_max_plus_one maps into [1, 2] with a midpoint fallback") {
  CHECK(min_max_plus_one({0.0, 1.0}) == std::vector<double>{1.0, 2.0});
  CHECK(min_max_plus_one({2.0, 2.0, 2.0}) == std::vector<double>{1.5, 1.5, 1.5});
  CHECK(min_max_plus_one({1.0, 2.0, 3.0}) == std::vector<double>{1.0, 1.5, 2.0});
  CHECK_THROWS_AS(min_max_plus_one({}), std::invalid_argument);

  Rng rng(44);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> xs;
    const int n = 2 + static_cast<int>(rng.below(10));
    for (int j = 0; j < n; ++j) xs.push_back(rng.uniform(-5.0, 5.0));
    for (double v : min_max_plus_one(xs)) {
      CHECK(v >= 1.0);
      CHECK(v <= 2.0);
    }
  }
}

TEST_CASE("balance_loss_after_avg: balanced, skewed and degenerate splits") {
  const BalanceState state;  // gamma 6.8, M = <64^2, 256^2>, S_AP = <32^2, 96^2>

  GroupSplit balanced;
  balanced.loc_down = 0.8;
  balanced.n_down = 2;
  balanced.loc_up = 0.4;
  balanced.n_up = 1;  // means <0.4, 0.4>
  const auto eq = balance_loss_after_avg(balanced, state);
  CHECK(eq.updated);
  CHECK(eq.target == doctest::Approx(6.8).epsilon(1e-12));
  CHECK(eq.loss == doctest::Approx(0.0).epsilon(1e-12));

  GroupSplit up_heavy;
  up_heavy.loc_down = 0.4;
  up_heavy.n_down = 1;
  up_heavy.loc_up = 0.8;
  up_heavy.n_up = 1;
  const auto up = balance_loss_after_avg(up_heavy, state);
  CHECK(up.target == doctest::Approx(13.2).epsilon(1e-12));
  CHECK(up.loss == doctest::Approx(6.4).epsilon(1e-12));

  GroupSplit down_heavy;
  down_heavy.loc_down = 0.8;
  down_heavy.n_down = 1;
  down_heavy.loc_up = 0.4;
  down_heavy.n_up = 1;
  CHECK(balance_loss_after_avg(down_heavy, state).target ==
        doctest::Approx(7.2).epsilon(1e-12));

  GroupSplit empty_up;
  empty_up.loc_down = 0.5;
  empty_up.n_down = 3;
  const auto skipped = balance_loss_after_avg(empty_up, state);
  CHECK_FALSE(skipped.updated);
  CHECK(skipped.loss == 0.0);
  CHECK(skipped.target == state.gamma);
}

TEST_CASE("balanced target equals (M_l + M_u) / (2 * S_mean) for any bounds") {
  Rng rng(45);
  for (int i = 0; i < 100; ++i) {
    const double s_small = rng.uniform(100.0, 2000.0);
    const double s_large = s_small + rng.uniform(100.0, 20000.0);
    const double m_lower = rng.uniform(100.0, 5000.0);
    const double m_upper = m_lower + rng.uniform(100.0, 90000.0);
    const BalanceState state(rng.uniform(1.0, 10.0), s_small, s_large, m_lower, m_upper);
    GroupSplit split;
    const double loss = rng.uniform(0.01, 0.95);
    split.loc_down = loss;
    split.n_down = 1;
    split.loc_up = loss;
    split.n_up = 1;
    const auto result = balance_loss_after_avg(split, state);
    CHECK(result.target ==
          doctest::Approx((m_lower + m_upper) / (s_small + s_large)).epsilon(1e-12));
  }
}

TEST_CASE("balance_loss_before_avg normalizes jointly, then averages per group") {
  const BalanceState state;

  // equal losses degenerate to 1.5 for every box
  std::vector<TaggedBoxLoss> equal = {{0.37, true}, {0.37, false}};
  const auto eq = balance_loss_before_avg(equal, state);
  CHECK(eq.updated);
  CHECK(eq.target == doctest::Approx(10.2).epsilon(1e-12));

  std::vector<TaggedBoxLoss> skewed = {{0.2, true}, {0.6, false}};
  const auto sk = balance_loss_before_avg(skewed, state);
  CHECK(sk.target == doctest::Approx(13.2).epsilon(1e-12));

  std::vector<TaggedBoxLoss> one_group = {{0.2, true}, {0.6, true}};
  const auto skipped = balance_loss_before_avg(one_group, state);
  CHECK_FALSE(skipped.updated);
  CHECK(skipped.loss == 0.0);

  std::vector<TaggedBoxLoss> single = {{0.2, true}};
  CHECK_FALSE(balance_loss_before_avg(single, state).updated);
}

TEST_CASE("two_stage_compose weighted and unweighted forms") {
  const std::vector<double> bal = {0.2, 0.3};
  const std::vector<double> ones = {1.0, 1.0};
  const std::vector<double> mixed = {2.0, 1.0};
  CHECK(two_stage_compose(std::vector<double>{0.42}, std::vector<double>{1.0}) ==
        doctest::Approx(0.42).epsilon(1e-15));
  CHECK(two_stage_compose(bal, ones) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(two_stage_compose(bal, mixed) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(two_stage_compose(bal) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(two_stage_compose(bal, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("total_loss compositions") {
  CHECK(total_loss(TotalLossParts{1.0, {2.0}, 0.5, {0.3}}, StageMode::OneStage) ==
        doctest::Approx(4.6).epsilon(1e-12));
  CHECK(total_loss(TotalLossParts{1.5, {2.5}, 0.0, {0.0}}, StageMode::OneStage) ==
        doctest::Approx(4.0).epsilon(1e-15));
  CHECK(total_loss(TotalLossParts{1.0, {1.0, 1.0}, 0.5, {0.1, 0.2}}, StageMode::TwoStage) ==
        doctest::Approx(4.3).epsilon(1e-12));
  CHECK_THROWS_AS(total_loss(TotalLossParts{0.0, {1.0, 2.0}, 0.0, {0.1}}, StageMode::TwoStage),
                  std::invalid_argument);
  CHECK_THROWS_AS(total_loss(TotalLossParts{0.0, {1.0, 2.0}, 0.0, {0.1, 0.2}},
                             StageMode::OneStage),
                  std::invalid_argument);
}

TEST_CASE("tape compositions match the double path") {
  Rng rng(46);
  for (int i = 0; i < 50; ++i) {
    const double cls = rng.uniform(0.0, 2.0);
    const std::vector<double> loc = {rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0)};
    const double ps = rng.uniform(0.0, 2.0);
    const std::vector<double> bal = {rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};

    Tape tape;
    std::vector<Var> loc_v = {tape.leaf(loc[0]), tape.leaf(loc[1])};
    std::vector<Var> bal_v = {tape.leaf(bal[0]), tape.leaf(bal[1])};
    const Var total = total_loss(tape, tape.leaf(cls), loc_v, tape.leaf(ps), bal_v,
                                 StageMode::TwoStage);
    CHECK(total.value() ==
          doctest::Approx(total_loss(TotalLossParts{cls, loc, ps, bal}, StageMode::TwoStage))
              .epsilon(1e-15));
  }
}
