#include "dyra/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dyra/parallel.hpp"
#include "dyra/rng.hpp"

namespace dyra {

std::vector<SyntheticImage> generate_dataset(std::uint64_t seed, int n_images,
                                             const AreaDistribution& dist, double canvas) {
  if (n_images < 1) throw std::invalid_argument("generate_dataset: n_images must be >= 1");
  if (!std::isfinite(dist.log_mean) || !(dist.log_std >= 0.0) ||
      !std::isfinite(dist.log_std) || !(dist.aspect_log_std >= 0.0)) {
    throw std::invalid_argument("generate_dataset: degenerate area distribution");
  }
  if (dist.min_boxes < 1 || dist.max_boxes < dist.min_boxes) {
    throw std::invalid_argument("generate_dataset: bad box count range");
  }
  if (!(canvas > 4.0)) throw std::invalid_argument("generate_dataset: canvas too small");

  Rng rng(seed);
  std::vector<SyntheticImage> images;
  images.reserve(static_cast<std::size_t>(n_images));
  const double max_side = 0.95 * canvas;
  for (int i = 0; i < n_images; ++i) {
    SyntheticImage img;
    img.image_id = i;
    img.canvas_w = canvas;
    img.canvas_h = canvas;
    const int n_boxes =
        dist.min_boxes +
        static_cast<int>(rng.below(static_cast<std::uint64_t>(dist.max_boxes - dist.min_boxes + 1)));
    img.boxes.reserve(static_cast<std::size_t>(n_boxes));
    img.placed.reserve(static_cast<std::size_t>(n_boxes));
    for (int b = 0; b < n_boxes; ++b) {
      const double area = rng.log_normal(dist.log_mean, dist.log_std);
      const double aspect = std::exp(rng.normal(0.0, dist.aspect_log_std));
      double w = std::clamp(std::sqrt(area * aspect), 1.0, max_side);
      double h = std::clamp(std::sqrt(area / aspect), 1.0, max_side);
      const double x = rng.uniform(0.0, canvas - w);
      const double y = rng.uniform(0.0, canvas - h);
      img.boxes.emplace_back(img.image_id, w, h);
      img.placed.push_back(PlacedBox{x, y, w, h});
    }
    images.push_back(std::move(img));
  }
  return images;
}

SurrogateDetector::SurrogateDetector(double optimal_area, double sharpness)
    : s_opt(optimal_area), k(sharpness) {
  if (!(s_opt > 0.0) || !(k > 0.0)) {
    throw std::invalid_argument("SurrogateDetector requires s_opt > 0 and k > 0");
  }
}

double SurrogateDetector::loss(double area, double phi) const {
  const double d = std::log(phi * phi * area) - std::log(s_opt);
  return std::min(1.0 - 1e-6, k * d * d);
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean_of: empty input");
  double total = 0.0;
  for (double x : xs) total += x;
  return total / static_cast<double>(xs.size());
}

double stddev_of(std::span<const double> xs) {
  const double mu = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.empty()) {
    throw std::invalid_argument("pearson: size mismatch or empty input");
  }
  const double mx = mean_of(xs), my = mean_of(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::vector<BoxRecord> scaled_boxes(const SyntheticImage& img, double rho) {
  std::vector<BoxRecord> out;
  out.reserve(img.boxes.size());
  for (const BoxRecord& b : img.boxes) {
    out.emplace_back(b.image_id, b.width * rho, b.height * rho);
  }
  return out;
}

double log_mean_area(const SyntheticImage& img) {
  double total = 0.0;
  for (const BoxRecord& b : img.boxes) total += b.area;
  return std::log(total / static_cast<double>(img.boxes.size()));
}


// Everything one worker computes for one batch image.
struct ImageTask {
  double l_ps = 0.0;
  std::vector<double> grad;           // d l_ps / d theta
  std::vector<double> box_areas;      // at the augmented resolution
  std::vector<double> box_loc;        // surrogate loss per box
  std::vector<double> box_scale_loss;
};

}  // namespace

// Predictor input for an image rescaled by rho. Feature mode summarizes the
// scaled boxes; thumbnail mode rasterizes them on the fixed original canvas,
// so a resolution change is visible as box growth or shrinkage.
std::vector<double> predictor_input(const SyntheticImage& img, double rho, InputMode mode,
                                    int thumbnail_side) {
  if (mode == InputMode::Features) {
    const auto features = image_features(scaled_boxes(img, rho));
    return std::vector<double>(features.begin(), features.end());
  }
  std::vector<PlacedBox> placed;
  placed.reserve(img.placed.size());
  for (const PlacedBox& b : img.placed) {
    placed.push_back(PlacedBox{b.x * rho, b.y * rho, b.width * rho, b.height * rho});
  }
  return rasterize_thumbnail(placed, img.canvas_w, img.canvas_h, thumbnail_side);
}

TrainResult train_joint(const std::vector<SyntheticImage>& dataset, const ScalerConfig& cfg,
                        const BalanceState& init, const SurrogateDetector& detector,
                        const ConstCosineSchedule& schedule, const TrainOptions& opts) {
  if (dataset.empty()) throw std::invalid_argument("train_joint: empty dataset");
  if (opts.steps < 0 || opts.batch_size < 1) {
    throw std::invalid_argument("train_joint: bad steps/batch_size");
  }
  if (schedule.total_steps < opts.steps) {
    throw std::invalid_argument("train_joint: schedule shorter than the training run");
  }
  if (!(opts.holdout_fraction >= 0.0) || opts.holdout_fraction >= 1.0) {
    throw std::invalid_argument("train_joint: holdout_fraction must lie in [0, 1)");
  }
  if (!(opts.augment_lo > 0.0) || opts.augment_hi < opts.augment_lo) {
    throw std::invalid_argument("train_joint: bad augmentation range");
  }

  const std::size_t n_hold =
      static_cast<std::size_t>(opts.holdout_fraction * static_cast<double>(dataset.size()));
  const std::size_t n_train = dataset.size() - n_hold;
  if (n_train == 0) throw std::invalid_argument("train_joint: no training images left");

  TrainResult result;
  result.params = predictor_init(opts.seed, cfg, opts.input_mode);
  result.state = init;
  result.trace.reserve(static_cast<std::size_t>(opts.steps));
  result.reports.reserve(static_cast<std::size_t>(opts.steps));
  result.gamma_trace.reserve(static_cast<std::size_t>(opts.steps));

  // Multi-resolution ladder, log-spaced over the augmentation range. Each
  // image cycles through all rungs across epochs, so every window of full
  // epochs sees the identical (image, resolution) multiset.
  constexpr int kLadder = 5;
  std::array<double, kLadder> ladder;
  for (int r = 0; r < kLadder; ++r) {
    const double frac = kLadder == 1 ? 0.0 : static_cast<double>(r) / (kLadder - 1);
    ladder[static_cast<std::size_t>(r)] =
        std::exp(std::log(opts.augment_lo) +
                 frac * (std::log(opts.augment_hi) - std::log(opts.augment_lo)));
  }

  const ScaleSet scales;
  const int batch = opts.batch_size;
  std::vector<ImageTask> tasks(static_cast<std::size_t>(batch));
  std::vector<double> rho(static_cast<std::size_t>(batch));
  std::vector<std::size_t> batch_idx(static_cast<std::size_t>(batch));
  std::vector<double> grad(result.params.size());

  for (std::int64_t step = 0; step < opts.steps; ++step) {
    const double lr = lr_at(step, schedule);
    const double boundary = result.state.group_boundary();
    const SizeRange band = result.state.range();

    for (int j = 0; j < batch; ++j) {
      const std::size_t sample =
          static_cast<std::size_t>(step) * static_cast<std::size_t>(batch) +
          static_cast<std::size_t>(j);
      const std::size_t image = sample % n_train;
      const std::size_t epoch = sample / n_train;
      batch_idx[static_cast<std::size_t>(j)] = image;
      rho[static_cast<std::size_t>(j)] =
          ladder[(image + epoch) % static_cast<std::size_t>(kLadder)];
    }

    const PredictorParams& params = result.params;
    parallel_for(batch, opts.threads, [&](int j) {
      const SyntheticImage& img = dataset[batch_idx[static_cast<std::size_t>(j)]];
      const double r = rho[static_cast<std::size_t>(j)];
      ImageTask& task = tasks[static_cast<std::size_t>(j)];

      const std::vector<BoxRecord> boxes = scaled_boxes(img, r);
      const std::vector<double> input =
          predictor_input(img, r, opts.input_mode, cfg.thumbnail_side);

      Tape tape;
      tape.reserve(params.size() * 4 + 4096);
      PredictorForward fwd = predictor_forward(tape, params, input, cfg);
      const double phi_value = fwd.phi.value();

      ImageScaleCaseT image_case;
      image_case.phi = fwd.phi;
      task.box_areas.clear();
      task.box_loc.clear();
      task.box_scale_loss.clear();
      for (const BoxRecord& b : boxes) {
        const SizeRatio ratio = size_ratio(b, band);
        image_case.boxes.push_back(
            ScaledBoxT{tape.constant(ratio.r_prime), assign_scale(b, scales)});
        task.box_areas.push_back(b.area);
        task.box_loc.push_back(detector.loss(b.area, phi_value));
        task.box_scale_loss.push_back(scale_loss(ratio.r_prime, phi_value, cfg.tau));
      }
      Var l_ps = pareto_scale_loss(tape, {image_case}, scales, cfg.tau);
      task.l_ps = l_ps.value();
      tape.backward(l_ps);
      task.grad.resize(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        task.grad[p] = tape.adjoint(fwd.params[p]);
      }
    });

    // Deterministic reduction in image order.
    std::fill(grad.begin(), grad.end(), 0.0);
    double l_ps = 0.0;
    double loc_sum = 0.0;
    std::size_t n_boxes = 0;
    GroupSplit split;
    std::vector<TaggedBoxLoss> tagged;
    LossReport report;
    for (int j = 0; j < batch; ++j) {
      const ImageTask& task = tasks[static_cast<std::size_t>(j)];
      l_ps += task.l_ps;
      for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += task.grad[p];
      for (std::size_t b = 0; b < task.box_areas.size(); ++b) {
        loc_sum += task.box_loc[b];
        ++n_boxes;
        split.add(task.box_areas[b], boundary, task.box_loc[b]);
        tagged.push_back(TaggedBoxLoss{task.box_loc[b], task.box_areas[b] >= boundary});
        report.l_scale_per_box.push_back(task.box_scale_loss[b]);
      }
    }
    const double inv_batch = 1.0 / static_cast<double>(batch);
    l_ps *= inv_batch;
    const double l_loc = loc_sum / static_cast<double>(n_boxes);

    const BalanceResult bal = opts.variant == BalanceVariant::AfterAvg
                                  ? balance_loss_after_avg(split, result.state)
                                  : balance_loss_before_avg(tagged, result.state);

    report.l_cls = 0.0;
    report.l_loc = {l_loc};
    report.l_ps = l_ps;
    report.l_bal = bal.loss;
    report.l_total =
        total_loss(TotalLossParts{0.0, {l_loc}, l_ps, {bal.loss}}, StageMode::OneStage);

    if (!std::isfinite(report.l_total) || !std::isfinite(l_ps) || !std::isfinite(bal.loss)) {
      throw TrainDivergenceError(step);
    }

    // Predictor follows the loc-weighted ParetoScaleLoss pathway of the total
    // loss; the localization factor is a detached coefficient.
    const double scale = lr * opts.predictor_lr_scale * l_loc * inv_batch;
    for (std::size_t p = 0; p < grad.size(); ++p) {
      result.params.values[p] -= scale * grad[p];
    }
    // Gamma follows the plain L1 pull toward the batch target.
    if (bal.updated) {
      const double sign = result.state.gamma >= bal.target ? 1.0 : -1.0;
      result.state.gamma -= lr * opts.gamma_lr_scale * sign;
    }
    if (!result.params.all_finite() || !std::isfinite(result.state.gamma)) {
      throw TrainDivergenceError(step);
    }

    result.trace.push_back(
        StepTrace{step, l_ps, bal.loss, report.l_total, result.state.gamma, lr});
    result.reports.push_back(std::move(report));
    result.gamma_trace.push_back(result.state.gamma);
  }

  // Held-out evaluation at the base resolution.
  result.holdout_phi.reserve(n_hold);
  result.holdout_log_mean_area.reserve(n_hold);
  for (std::size_t i = n_train; i < dataset.size(); ++i) {
    const SyntheticImage& img = dataset[i];
    const std::vector<double> input =
        predictor_input(img, 1.0, opts.input_mode, cfg.thumbnail_side);
    result.holdout_phi.push_back(predictor_eval(result.params, input, cfg));
    result.holdout_log_mean_area.push_back(log_mean_area(img));
  }
  result.holdout_pearson =
      n_hold >= 2 ? pearson(result.holdout_log_mean_area, result.holdout_phi) : 0.0;
  return result;
}

std::vector<SweepEntry> resolution_sweep(const PredictorParams& params,
                                         const ScalerConfig& cfg,
                                         const std::vector<SyntheticImage>& images,
                                         std::span<const double> sizes,
                                         std::span<const double> taus, double base_size,
                                         double ref_size) {
  if (sizes.size() != taus.size() || sizes.empty()) {
    throw std::invalid_argument("resolution_sweep: sizes/taus mismatch");
  }
  if (images.empty()) throw std::invalid_argument("resolution_sweep: no images");

  std::vector<std::vector<double>> phis(sizes.size());
  std::ptrdiff_t ref_index = -1;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    if (sizes[s] == ref_size) ref_index = static_cast<std::ptrdiff_t>(s);
    ScalerConfig eval_cfg = cfg;
    eval_cfg.tau = taus[s];
    const double rho = sizes[s] / base_size;
    phis[s].reserve(images.size());
    for (const SyntheticImage& img : images) {
      const std::vector<double> input =
          predictor_input(img, rho, params.mode, params.thumbnail_side);
      phis[s].push_back(predictor_eval(params, input, eval_cfg));
    }
  }
  if (ref_index < 0) throw std::invalid_argument("resolution_sweep: ref_size not in sizes");

  std::vector<SweepEntry> out(sizes.size());
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    out[s].size = sizes[s];
    out[s].tau = taus[s];
    out[s].stats.mean = mean_of(phis[s]);
    out[s].stats.stddev = stddev_of(phis[s]);
    out[s].stats.pearson_vs_ref =
        static_cast<std::ptrdiff_t>(s) == ref_index
            ? 1.0
            : pearson(phis[s], phis[static_cast<std::size_t>(ref_index)]);
  }
  return out;
}

std::vector<double> gamma_equilibrium(const SplitGenerator& splits, BalanceState state,
                                      int steps, double lr) {
  if (steps < 0 || !(lr > 0.0)) throw std::invalid_argument("gamma_equilibrium: bad arguments");
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(steps) + 1);
  trace.push_back(state.gamma);
  for (int t = 0; t < steps; ++t) {
    const BalanceResult r = balance_loss_after_avg(splits(t), state);
    if (r.updated) {
      const double sign = state.gamma >= r.target ? 1.0 : -1.0;
      state.gamma -= lr * sign;
    }
    trace.push_back(state.gamma);
  }
  return trace;
}

SplitGenerator equal_loss_splits(double loss_value) {
  return [loss_value](int) {
    GroupSplit split;
    split.loc_down = loss_value;
    split.loc_up = loss_value;
    split.n_down = 1;
    split.n_up = 1;
    return split;
  };
}

}  // namespace dyra
