#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dyra/autodiff.hpp"
#include "dyra/core.hpp"

namespace dyra {

/// BCE-shaped loss tying phi/tau to the reciprocal size ratio r'.
/// phi/tau is clamped to [1e-7, 1-1e-7] before the logs; the interior
/// minimizer over phi is r'*tau.
double scale_loss(double r_prime, double phi, double tau);
Var scale_loss(Tape& tape, Var r_prime, Var phi, double tau);

/// Per-box term of the Pareto aggregation: r' plus the assigned scale index.
struct ScaledBox {
  double r_prime = 0.0;
  int scale_index = 0;
};

/// One image in a batch: its predicted factor and its boxes.
struct ImageScaleCase {
  double phi = 1.0;
  std::vector<ScaledBox> boxes;
};

/// Log-likelihood aggregation of per-scale mean scale losses, averaged over
/// the images that contain boxes. Images without boxes are excluded from the
/// batch count; unoccupied scales contribute nothing.
double pareto_scale_loss(const std::vector<ImageScaleCase>& batch, const ScaleSet& scales,
                         double tau);

struct ScaledBoxT {
  Var r_prime;
  int scale_index = 0;
};
struct ImageScaleCaseT {
  Var phi;
  std::vector<ScaledBoxT> boxes;
};
Var pareto_scale_loss(Tape& tape, const std::vector<ImageScaleCaseT>& batch,
                      const ScaleSet& scales, double tau);

/// Softmax-like pair weighting with 1/(1-x) in place of e^x. Inputs are
/// clamped to [0, 1-1e-6]; outputs sum to 1 and preserve ordering.
std::pair<double, double> f_norm(std::pair<double, double> x);

/// Rescales a pair so its minimum is exactly 1: x_i*2 - min(x*2) + 1.
std::pair<double, double> f_sub(std::pair<double, double> x);

/// Min-Max normalization shifted into [1, 2]. A degenerate span (max == min)
/// maps every element to 1.5, the band midpoint.
std::vector<double> min_max_plus_one(const std::vector<double>& losses);

/// Per-group cumulated localization loss and counts, split at the group
/// boundary gamma * s_ap_mean. Down-group: area >= boundary.
struct GroupSplit {
  double loc_down = 0.0;
  double loc_up = 0.0;
  std::size_t n_down = 0;
  std::size_t n_up = 0;

  void add(double area, double boundary, double loc_loss);
  bool both_groups_occupied() const { return n_down > 0 && n_up > 0; }
  double mean_down() const { return loc_down / static_cast<double>(n_down); }
  double mean_up() const { return loc_up / static_cast<double>(n_up); }
};

/// loss = |gamma - target|, updated = false when a group is empty (the batch
/// is skipped for the gamma update and the target defaults to gamma).
struct BalanceResult {
  double loss = 0.0;
  double target = 0.0;
  bool updated = false;
};

/// Normalize-after-averaging variant: per-group mean losses are weighted by
/// f_sub(f_norm(.)), dotted with <m_lower, m_upper> and divided by
/// 2 * s_ap_mean. Gradient flows to gamma only.
BalanceResult balance_loss_after_avg(const GroupSplit& split, const BalanceState& state);
Var balance_loss_after_avg(Tape& tape, Var gamma, const GroupSplit& split,
                           const BalanceState& state);

struct TaggedBoxLoss {
  double loc_loss = 0.0;
  bool in_down_group = false;
};

/// Normalize-before-averaging variant: Min-Max over all box losses jointly,
/// then cumulate and average per group before the same target composition.
BalanceResult balance_loss_before_avg(const std::vector<TaggedBoxLoss>& boxes,
                                      const BalanceState& state);
Var balance_loss_before_avg(Tape& tape, Var gamma, const std::vector<TaggedBoxLoss>& boxes,
                            const BalanceState& state);

/// Multi-head composition: sum of loc_i * bal_i (the -log of the product of
/// exponentials). The one-argument overload is the unweighted sum.
double two_stage_compose(std::span<const double> bal, std::span<const double> loc);
double two_stage_compose(std::span<const double> bal);
Var two_stage_compose(Tape& tape, std::span<const Var> bal, std::span<const double> loc);
Var two_stage_compose(Tape& tape, std::span<const Var> bal, std::span<const Var> loc);

enum class StageMode { OneStage, TwoStage };

struct TotalLossParts {
  double cls = 0.0;
  std::vector<double> loc;  // one entry per stage
  double ps = 0.0;
  std::vector<double> bal;  // one entry per stage
};

/// One-stage: cls + loc + loc*(ps + bal).
/// Two-stage: cls + sum(loc) + sum(loc)*ps + sum(loc_i*bal_i).
double total_loss(const TotalLossParts& parts, StageMode mode);
Var total_loss(Tape& tape, Var cls, std::span<const Var> loc, Var ps,
               std::span<const Var> bal, StageMode mode);

/// Per-batch decomposition emitted by the joint-training loop and the CLI.
struct LossReport {
  double l_cls = 0.0;
  std::vector<double> l_loc;
  std::vector<double> l_scale_per_box;
  double l_ps = 0.0;
  double l_bal = 0.0;
  double l_total = 0.0;
};

}  // namespace dyra
