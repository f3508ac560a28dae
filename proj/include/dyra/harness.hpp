#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyra/core.hpp"
#include "dyra/losses.hpp"
#include "dyra/predictor.hpp"
#include "dyra/sched.hpp"

namespace dyra {

struct AreaDistribution {
  double log_mean = 10.46;  // log of the default band's sigmoid midpoint
  double log_std = 1.1;
  int min_boxes = 1;
  int max_boxes = 12;
  double aspect_log_std = 0.3;
};

struct SyntheticImage {
  std::int64_t image_id = 0;
  double canvas_w = 800.0;
  double canvas_h = 800.0;
  std::vector<BoxRecord> boxes;
  std::vector<PlacedBox> placed;  // parallel to boxes
};

/// Deterministic synthetic dataset with log-normal box areas.
std::vector<SyntheticImage> generate_dataset(std::uint64_t seed, int n_images,
                                             const AreaDistribution& dist,
                                             double canvas = 800.0);

/// Stand-in detector: a U-shaped log-quadratic loss in the effective box area
/// phi^2 * area, zero exactly at s_opt and capped below 1.
struct SurrogateDetector {
  double s_opt = 128.0 * 128.0;
  double k = 0.05;

  SurrogateDetector() = default;
  SurrogateDetector(double optimal_area, double sharpness);

  double loss(double area, double phi) const;
};

double mean_of(std::span<const double> xs);
double stddev_of(std::span<const double> xs);
/// Pearson correlation, clamped into [-1, 1]; 0 when either side is constant.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct RunStats {
  double mean = 0.0;
  double stddev = 0.0;
  double pearson_vs_ref = 1.0;
};

enum class BalanceVariant { AfterAvg, BeforeAvg };

struct TrainOptions {
  int steps = 3000;
  int batch_size = 8;
  int threads = 1;
  std::uint64_t seed = 1;
  double predictor_lr_scale = 1.0;
  double gamma_lr_scale = 1.0;
  double augment_lo = 0.5;  // multi-resolution ladder range
  double augment_hi = 1.6;
  double holdout_fraction = 0.2;
  BalanceVariant variant = BalanceVariant::AfterAvg;
  InputMode input_mode = InputMode::Features;
};

class TrainDivergenceError : public std::runtime_error {
 public:
  TrainDivergenceError(std::int64_t step)
      : std::runtime_error("training diverged at step " + std::to_string(step)),
        step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

struct StepTrace {
  std::int64_t step = 0;
  double l_ps = 0.0;
  double l_bal = 0.0;
  double l_total = 0.0;
  double gamma = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  PredictorParams params;
  BalanceState state;  // final gamma
  std::vector<StepTrace> trace;
  std::vector<LossReport> reports;
  std::vector<double> gamma_trace;  // gamma after each step
  // held-out evaluation at the training base resolution
  std::vector<double> holdout_phi;
  std::vector<double> holdout_log_mean_area;
  double holdout_pearson = 0.0;
};

/// Joint loop: predictor descends the loc-weighted ParetoScaleLoss, gamma
/// descends the BalanceLoss L1 pull; learning rates follow the schedule.
/// Bit-reproducible for a fixed seed regardless of thread count.
TrainResult train_joint(const std::vector<SyntheticImage>& dataset, const ScalerConfig& cfg,
                        const BalanceState& init, const SurrogateDetector& detector,
                        const ConstCosineSchedule& schedule, const TrainOptions& opts);

struct SweepEntry {
  double size = 0.0;
  double tau = 0.0;
  RunStats stats;
};

/// Evaluates a trained predictor at several initial resolutions. Box areas
/// scale by (size/base_size)^2; Pearson is taken against the ref_size column.
std::vector<SweepEntry> resolution_sweep(const PredictorParams& params,
                                         const ScalerConfig& cfg,
                                         const std::vector<SyntheticImage>& images,
                                         std::span<const double> sizes,
                                         std::span<const double> taus, double base_size,
                                         double ref_size);

/// Predictor input for an image rescaled by rho: box statistics in feature
/// mode, a rasterized canvas in thumbnail mode.
std::vector<double> predictor_input(const SyntheticImage& img, double rho, InputMode mode,
                                    int thumbnail_side);

using SplitGenerator = std::function<GroupSplit(int step)>;

/// Pure gamma descent on the after-averaging BalanceLoss. Returns the gamma
/// trace with the initial value first (length steps + 1).
std::vector<double> gamma_equilibrium(const SplitGenerator& splits, BalanceState state,
                                      int steps, double lr = 0.005);

/// Generator yielding the same per-group mean loss every step.
SplitGenerator equal_loss_splits(double loss_value = 0.4);

}  // namespace dyra
