#include "dyra/core.hpp"

#include <cmath>
#include <stdexcept>

namespace dyra {

SizeRange::SizeRange(double lo, double hi) : lower(lo), upper(hi) {
  if (!(lo > 0.0) || !(lo < hi) || !std::isfinite(hi)) {
    throw std::invalid_argument("SizeRange requires 0 < lower < upper");
  }
}

BoxRecord::BoxRecord(std::int64_t image, double w, double h)
    : image_id(image), width(w), height(h), area(w * h) {
  if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(w) || !std::isfinite(h)) {
    throw std::invalid_argument("BoxRecord requires positive finite width and height");
  }
}

ScaleSet::ScaleSet()
    : sizes{32.0 * 32.0, 64.0 * 64.0, 128.0 * 128.0, 256.0 * 256.0, 512.0 * 512.0} {}

ScaleSet::ScaleSet(std::vector<double> areas) : sizes(std::move(areas)) {
  if (sizes.empty()) throw std::invalid_argument("ScaleSet must be non-empty");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0)) throw std::invalid_argument("ScaleSet areas must be positive");
    if (i > 0 && !(sizes[i] > sizes[i - 1])) {
      throw std::invalid_argument("ScaleSet areas must be strictly increasing");
    }
  }
}

BalanceState::BalanceState(double gamma_init, double ap_small, double ap_large,
                           double lower_bound, double upper_bound)
    : gamma(gamma_init),
      s_ap_small(ap_small),
      s_ap_large(ap_large),
      m_lower(lower_bound),
      m_upper(upper_bound) {
  if (!(gamma > 0.0)) throw std::invalid_argument("BalanceState gamma must be positive");
  if (!(ap_small > 0.0) || !(ap_small < ap_large)) {
    throw std::invalid_argument("BalanceState requires 0 < s_ap_small < s_ap_large");
  }
  if (!(lower_bound < upper_bound)) {
    throw std::invalid_argument("BalanceState requires m_lower < m_upper");
  }
}

ScalerConfig::ScalerConfig(double tau_value) : tau(tau_value) { validate(); }

void ScalerConfig::validate() const {
  if (!(tau > 0.0) || !(tau < 10.0)) {
    throw std::invalid_argument("ScalerConfig tau must lie in (0, 10)");
  }
  if (conv_layers < 1 || encoder_blocks < 0 || hidden_dim < 1 || tokens < 1 ||
      stem_channels < 1 || thumbnail_side < 4) {
    throw std::invalid_argument("ScalerConfig architecture parameters out of range");
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {
constexpr double kSigmoidGain = 12.0;  // band spans sigmoid(+-6)
}

double saturated_sigmoid(double x, const SizeRange& range) {
  if (!std::isfinite(x)) throw std::domain_error("saturated_sigmoid: non-finite input");
  if (x > range.upper) return 1.0;
  if (x < range.lower) return 0.0;
  const double arg = kSigmoidGain * (x - range.midpoint()) / range.span();
  return stable_sigmoid(arg);
}

SizeRatio size_ratio(const BoxRecord& box, const SizeRange& range) {
  const double r = saturated_sigmoid(box.area, range);
  return SizeRatio{r, 1.0 - r};
}

double bound_scale(double raw, const ScalerConfig& cfg) {
  if (!std::isfinite(raw)) throw std::domain_error("bound_scale: non-finite input");
  const double s = stable_sigmoid(raw);
  const double floor = cfg.tau / 10.0;
  return (s > floor ? s : floor) * cfg.tau;
}

int assign_scale_area(double area, const ScaleSet& scales) {
  if (scales.sizes.empty()) throw std::invalid_argument("assign_scale: empty scale set");
  const double log_area = std::log(area);
  int best = 0;
  double best_dist = std::abs(log_area - std::log(scales.sizes[0]));
  for (std::size_t i = 1; i < scales.sizes.size(); ++i) {
    const double d = std::abs(log_area - std::log(scales.sizes[i]));
    if (d < best_dist) {  // strict: ties keep the smaller index
      best_dist = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

int assign_scale(const BoxRecord& box, const ScaleSet& scales) {
  return assign_scale_area(box.area, scales);
}

}  // namespace dyra
