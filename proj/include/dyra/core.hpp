#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dyra {

/// Inclusive box-area band [lower, upper] in pixels^2. Areas below map to 0,
/// areas above map to 1 under the saturated sigmoid.
struct SizeRange {
  double lower = 0.0;
  double upper = 0.0;

  SizeRange() = default;
  SizeRange(double lo, double hi);

  double midpoint() const { return 0.5 * (lower + upper); }
  double span() const { return upper - lower; }
};

/// Axis-aligned rectangle in pixel coordinates.
struct PlacedBox {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
};

/// One ground-truth box. `area` is always width*height.
struct BoxRecord {
  std::int64_t image_id = 0;
  double width = 0.0;
  double height = 0.0;
  double area = 0.0;
  int scale_index = -1;  // unset until assign_scale

  BoxRecord() = default;
  BoxRecord(std::int64_t image, double w, double h);
};

/// Representative per-level anchor areas, strictly increasing.
struct ScaleSet {
  std::vector<double> sizes;

  ScaleSet();  // RetinaNet-style default {32^2, 64^2, 128^2, 256^2, 512^2}
  explicit ScaleSet(std::vector<double> areas);

  std::size_t size() const { return sizes.size(); }
};

/// Learnable gamma plus the fixed constants that define the box-size band
/// and the balance-loss target.
struct BalanceState {
  double gamma = 6.8;
  double s_ap_small = 32.0 * 32.0;
  double s_ap_large = 96.0 * 96.0;
  double m_lower = 64.0 * 64.0;    // representative P4 area
  double m_upper = 256.0 * 256.0;  // representative P6 area

  BalanceState() = default;
  BalanceState(double gamma_init, double ap_small, double ap_large,
               double lower_bound, double upper_bound);

  SizeRange range() const { return SizeRange(gamma * s_ap_small, gamma * s_ap_large); }
  double s_ap_mean() const { return 0.5 * (s_ap_small + s_ap_large); }
  /// Group boundary: boxes below need up-scaling, boxes at or above need down-scaling.
  double group_boundary() const { return gamma * s_ap_mean(); }
};

/// Scale-factor head configuration. tau bounds the factor to [tau^2/10, tau].
struct ScalerConfig {
  double tau = 2.0;
  int conv_layers = 3;
  int encoder_blocks = 1;
  int hidden_dim = 32;
  int tokens = 16;
  int stem_channels = 4;
  int thumbnail_side = 32;

  ScalerConfig() = default;
  explicit ScalerConfig(double tau_value);

  double min_scale() const { return tau * tau / 10.0; }
  double max_scale() const { return tau; }
  void validate() const;
};

/// Numerically stable logistic function.
double stable_sigmoid(double x);

/// Sigmoid over [range.lower, range.upper], saturated to 0/1 outside.
/// Inside the band the argument is the affine map 12*(x - mid)/span, so the
/// curve covers ~[0.0025, 0.9975] and the saturation joins jump by < 0.005.
double saturated_sigmoid(double x, const SizeRange& range);

/// Size ratio r and its reciprocal r' = 1 - r for one box.
/// High r' means the box wants up-scaling.
struct SizeRatio {
  double r = 0.0;
  double r_prime = 0.0;
};
SizeRatio size_ratio(const BoxRecord& box, const SizeRange& range);

/// Bound a raw network output into [tau^2/10, tau]: max(sigmoid(raw), tau/10) * tau.
double bound_scale(double raw, const ScalerConfig& cfg);

/// Nearest scale by log-area distance; ties go to the smaller index.
int assign_scale(const BoxRecord& box, const ScaleSet& scales);
int assign_scale_area(double area, const ScaleSet& scales);

}  // namespace dyra
