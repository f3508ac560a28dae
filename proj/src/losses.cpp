#include "dyra/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dyra {

namespace {

constexpr double kRatioClamp = 1e-7;   // keeps phi/tau away from the log poles
constexpr double kNormClamp = 1e-6;    // keeps 1/(1-x) away from its pole

void check_scale_loss_inputs(double r_prime, double phi, double tau) {
  if (!std::isfinite(r_prime) || r_prime < 0.0 || r_prime > 1.0) {
    throw std::domain_error("scale_loss: r_prime must lie in [0, 1]");
  }
  if (!std::isfinite(phi) || phi < 0.0 || phi > tau) {
    throw std::domain_error("scale_loss: phi outside [0, tau]");
  }
}

}  // namespace

double scale_loss(double r_prime, double phi, double tau) {
  check_scale_loss_inputs(r_prime, phi, tau);
  const double p = std::clamp(phi / tau, kRatioClamp, 1.0 - kRatioClamp);
  return -(r_prime * std::log(p) + (1.0 - r_prime) * std::log(1.0 - p));
}

Var scale_loss(Tape& tape, Var r_prime, Var phi, double tau) {
  check_scale_loss_inputs(r_prime.value(), phi.value(), tau);
  Var p = phi / tau;
  p = tape.max_const(p, kRatioClamp);
  p = tape.min_const(p, 1.0 - kRatioClamp);
  return -(r_prime * tape.log(p) + (1.0 - r_prime) * tape.log(1.0 - p));
}

double pareto_scale_loss(const std::vector<ImageScaleCase>& batch, const ScaleSet& scales,
                         double tau) {
  const std::size_t n_scales = scales.size();
  double total = 0.0;
  std::size_t n_images = 0;
  std::vector<double> sums(n_scales);
  std::vector<std::size_t> counts(n_scales);
  for (const ImageScaleCase& image : batch) {
    if (image.boxes.empty()) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0u);
    for (const ScaledBox& box : image.boxes) {
      if (box.scale_index < 0 || static_cast<std::size_t>(box.scale_index) >= n_scales) {
        throw std::out_of_range("pareto_scale_loss: scale_index outside scale set");
      }
      sums[static_cast<std::size_t>(box.scale_index)] +=
          scale_loss(box.r_prime, image.phi, tau);
      ++counts[static_cast<std::size_t>(box.scale_index)];
    }
    double image_loss = 0.0;
    for (std::size_t i = 0; i < n_scales; ++i) {
      if (counts[i] > 0) image_loss += sums[i] / static_cast<double>(counts[i]);
    }
    total += image_loss;
    ++n_images;
  }
  return n_images == 0 ? 0.0 : total / static_cast<double>(n_images);
}

Var pareto_scale_loss(Tape& tape, const std::vector<ImageScaleCaseT>& batch,
                      const ScaleSet& scales, double tau) {
  const std::size_t n_scales = scales.size();
  std::vector<Var> image_losses;
  std::vector<std::vector<Var>> per_scale(n_scales);
  for (const ImageScaleCaseT& image : batch) {
    if (image.boxes.empty()) continue;
    for (auto& bucket : per_scale) bucket.clear();
    for (const ScaledBoxT& box : image.boxes) {
      if (box.scale_index < 0 || static_cast<std::size_t>(box.scale_index) >= n_scales) {
        throw std::out_of_range("pareto_scale_loss: scale_index outside scale set");
      }
      per_scale[static_cast<std::size_t>(box.scale_index)].push_back(
          scale_loss(tape, box.r_prime, image.phi, tau));
    }
    std::vector<Var> scale_means;
    for (const auto& bucket : per_scale) {
      if (!bucket.empty()) scale_means.push_back(tape.mean(bucket));
    }
    image_losses.push_back(tape.sum(scale_means));
  }
  if (image_losses.empty()) return tape.constant(0.0);
  return tape.mean(image_losses);
}

std::pair<double, double> f_norm(std::pair<double, double> x) {
  const double a = std::clamp(x.first, 0.0, 1.0 - kNormClamp);
  const double b = std::clamp(x.second, 0.0, 1.0 - kNormClamp);
  const double wa = 1.0 / (1.0 - a);
  const double wb = 1.0 / (1.0 - b);
  const double total = wa + wb;
  return {wa / total, wb / total};
}

std::pair<double, double> f_sub(std::pair<double, double> x) {
  const double a = x.first * 2.0;
  const double b = x.second * 2.0;
  const double lo = std::min(a, b);
  return {a - lo + 1.0, b - lo + 1.0};
}

std::vector<double> min_max_plus_one(const std::vector<double>& losses) {
  if (losses.empty()) throw std::invalid_argument("min_max_plus_one: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(losses.begin(), losses.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(losses.size());
  if (hi == lo) {
    std::fill(out.begin(), out.end(), 1.5);
    return out;
  }
  const double span = hi - lo;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out[i] = (losses[i] - lo) / span + 1.0;
  }
  return out;
}

void GroupSplit::add(double area, double boundary, double loc_loss) {
  if (area >= boundary) {
    loc_down += loc_loss;
    ++n_down;
  } else {
    loc_up += loc_loss;
    ++n_up;
  }
}

namespace {

// Shared tail of both variants: weight the per-group values, dot with the
// M bounds and divide by |G| * s_ap_mean.
double balance_target(double group_down, double group_up, const BalanceState& state) {
  const auto weights = f_norm({group_down, group_up});
  const auto scaled = f_sub(weights);
  return (scaled.first * state.m_lower + scaled.second * state.m_upper) /
         (2.0 * state.s_ap_mean());
}

}  // namespace

BalanceResult balance_loss_after_avg(const GroupSplit& split, const BalanceState& state) {
  if (!split.both_groups_occupied()) {
    return BalanceResult{0.0, state.gamma, false};
  }
  const double target = balance_target(split.mean_down(), split.mean_up(), state);
  return BalanceResult{std::abs(state.gamma - target), target, true};
}

Var balance_loss_after_avg(Tape& tape, Var gamma, const GroupSplit& split,
                           const BalanceState& state) {
  const BalanceResult r = balance_loss_after_avg(split, state);
  if (!r.updated) return tape.constant(0.0);
  return tape.abs_branch(gamma - r.target);
}

BalanceResult balance_loss_before_avg(const std::vector<TaggedBoxLoss>& boxes,
                                      const BalanceState& state) {
  if (boxes.size() < 2) {
    return BalanceResult{0.0, state.gamma, false};
  }
  std::vector<double> raw(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) raw[i] = boxes[i].loc_loss;
  const std::vector<double> normalized = min_max_plus_one(raw);

  double sum_down = 0.0, sum_up = 0.0;
  std::size_t n_down = 0, n_up = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i].in_down_group) {
      sum_down += normalized[i];
      ++n_down;
    } else {
      sum_up += normalized[i];
      ++n_up;
    }
  }
  if (n_down == 0 || n_up == 0) {
    return BalanceResult{0.0, state.gamma, false};
  }
  const double mean_down = sum_down / static_cast<double>(n_down);
  const double mean_up = sum_up / static_cast<double>(n_up);
  const double target = (mean_down * state.m_lower + mean_up * state.m_upper) /
                        (2.0 * state.s_ap_mean());
  return BalanceResult{std::abs(state.gamma - target), target, true};
}

Var balance_loss_before_avg(Tape& tape, Var gamma, const std::vector<TaggedBoxLoss>& boxes,
                            const BalanceState& state) {
  const BalanceResult r = balance_loss_before_avg(boxes, state);
  if (!r.updated) return tape.constant(0.0);
  return tape.abs_branch(gamma - r.target);
}

double two_stage_compose(std::span<const double> bal, std::span<const double> loc) {
  if (bal.size() != loc.size() || bal.empty()) {
    throw std::invalid_argument("two_stage_compose: bal/loc length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < bal.size(); ++i) total += loc[i] * bal[i];
  return total;
}

double two_stage_compose(std::span<const double> bal) {
  if (bal.empty()) throw std::invalid_argument("two_stage_compose: empty input");
  double total = 0.0;
  for (double b : bal) total += b;
  return total;
}

Var two_stage_compose(Tape& tape, std::span<const Var> bal, std::span<const double> loc) {
  if (bal.size() != loc.size() || bal.empty()) {
    throw std::invalid_argument("two_stage_compose: bal/loc length mismatch");
  }
  std::vector<Var> terms;
  terms.reserve(bal.size());
  for (std::size_t i = 0; i < bal.size(); ++i) terms.push_back(bal[i] * loc[i]);
  return tape.sum(terms);
}

Var two_stage_compose(Tape& tape, std::span<const Var> bal, std::span<const Var> loc) {
  if (bal.size() != loc.size() || bal.empty()) {
    throw std::invalid_argument("two_stage_compose: bal/loc length mismatch");
  }
  std::vector<Var> terms;
  terms.reserve(bal.size());
  for (std::size_t i = 0; i < bal.size(); ++i) terms.push_back(bal[i] * loc[i]);
  return tape.sum(terms);
}

double total_loss(const TotalLossParts& parts, StageMode mode) {
  if (mode == StageMode::OneStage) {
    if (parts.loc.size() != 1 || parts.bal.size() != 1) {
      throw std::invalid_argument("total_loss: one-stage expects a single loc/bal entry");
    }
    return parts.cls + parts.loc[0] + parts.loc[0] * (parts.ps + parts.bal[0]);
  }
  if (parts.loc.empty() || parts.loc.size() != parts.bal.size()) {
    throw std::invalid_argument("total_loss: loc/bal stage count mismatch");
  }
  double loc_sum = 0.0;
  for (double l : parts.loc) loc_sum += l;
  return parts.cls + loc_sum + loc_sum * parts.ps +
         two_stage_compose(parts.bal, parts.loc);
}

Var total_loss(Tape& tape, Var cls, std::span<const Var> loc, Var ps,
               std::span<const Var> bal, StageMode mode) {
  if (mode == StageMode::OneStage) {
    if (loc.size() != 1 || bal.size() != 1) {
      throw std::invalid_argument("total_loss: one-stage expects a single loc/bal entry");
    }
    return cls + loc[0] + loc[0] * (ps + bal[0]);
  }
  if (loc.empty() || loc.size() != bal.size()) {
    throw std::invalid_argument("total_loss: loc/bal stage count mismatch");
  }
  Var loc_sum = tape.sum(loc);
  std::vector<Var> weighted;
  weighted.reserve(bal.size());
  for (std::size_t i = 0; i < bal.size(); ++i) weighted.push_back(loc[i] * bal[i]);
  return cls + loc_sum + loc_sum * ps + tape.sum(weighted);
}

}  // namespace dyra
