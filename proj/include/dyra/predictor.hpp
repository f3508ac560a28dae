#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dyra/autodiff.hpp"
#include "dyra/core.hpp"

namespace dyra {

enum class InputMode { Features, Thumbnail };

/// All learnable parameters as one flat vector plus a named-segment layout.
/// The layout is fixed by the architecture fields, which are snapshotted from
/// the ScalerConfig at init time.
struct PredictorParams {
  InputMode mode = InputMode::Features;
  int conv_layers = 3;
  int encoder_blocks = 1;
  int hidden_dim = 32;
  int tokens = 16;
  int stem_channels = 4;
  int thumbnail_side = 32;
  int input_dim = 8;

  std::vector<std::pair<std::string, std::size_t>> segments;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  /// Token count actually used by forward (thumbnail mode derives it from the
  /// canvas side and conv depth).
  int effective_tokens() const;
  bool all_finite() const;
};

constexpr int kFeatureDim = 8;

/// Deterministic seeded init; weights ~ N(0, 1/fan_in), biases zero.
PredictorParams predictor_init(std::uint64_t seed, const ScalerConfig& cfg,
                               InputMode mode = InputMode::Features);

/// Forward pass recorded on a tape. `params` holds the leaf Vars in flat
/// order, so callers can read per-parameter adjoints after backward(phi).
struct PredictorForward {
  Var phi;       // bounded scale factor in [tau^2/10, tau]
  Var raw;       // pre-sigmoid network output
  std::vector<Var> params;
};
PredictorForward predictor_forward(Tape& tape, const PredictorParams& params,
                                   std::span<const double> input, const ScalerConfig& cfg);

/// Value-only evaluation through the same recorded path.
double predictor_eval(const PredictorParams& params, std::span<const double> input,
                      const ScalerConfig& cfg);

/// 8 normalized statistics of an image's boxes: count, mean/std/min/max and
/// median of log-area (centered), and aspect-ratio spread.
std::array<double, kFeatureDim> image_features(std::span<const BoxRecord> boxes);

/// Boxes rasterized as filled rectangles on a side x side grayscale canvas.
/// Positions are the box corners in canvas units of the source image.
std::vector<double> rasterize_thumbnail(std::span<const PlacedBox> boxes, double canvas_w,
                                        double canvas_h, int side);

// Checkpoint I/O (versioned JSON record of the named parameter arrays).
void save_checkpoint(const PredictorParams& params, const std::string& path);
PredictorParams load_checkpoint(const std::string& path);

}  // namespace dyra
