#include "dyra/sched.hpp"

#include <cmath>
#include <stdexcept>

namespace dyra {

ConstCosineSchedule::ConstCosineSchedule(double base, std::int64_t total,
                                         std::int64_t switch_at, double final_value)
    : base_lr(base), total_steps(total), switch_step(switch_at), final_lr(final_value) {
  if (!(base > 0.0)) throw std::invalid_argument("ConstCosineSchedule: base_lr must be > 0");
  if (total < 1) throw std::invalid_argument("ConstCosineSchedule: total_steps must be >= 1");
  if (switch_at < 0 || switch_at >= total) {
    throw std::invalid_argument("ConstCosineSchedule: switch_step must lie in [0, total_steps)");
  }
  if (final_value < 0.0 || final_value > base) {
    throw std::invalid_argument("ConstCosineSchedule: final_lr must lie in [0, base_lr]");
  }
}

ConstCosineSchedule ConstCosineSchedule::with_default_switch(double base, std::int64_t total,
                                                             double final_value) {
  return ConstCosineSchedule(base, total, 2 * total / 3, final_value);
}

namespace {

// cos(pi * x) for x in [0, 1] with exact values at 0, 1/2 and 1, so the
// schedule hits base_lr, the midpoint and final_lr without rounding residue.
double half_cosine(double x) {
  if (x == 0.0) return 1.0;
  if (x == 0.5) return 0.0;
  if (x == 1.0) return -1.0;
  return std::cos(M_PI * x);
}

}  // namespace

double lr_at(std::int64_t step, const ConstCosineSchedule& s) {
  if (step < 0 || step > s.total_steps) {
    throw std::out_of_range("lr_at: step outside [0, total_steps]");
  }
  if (step <= s.switch_step) return s.base_lr;
  if (step == s.total_steps) return s.final_lr;
  const double frac = static_cast<double>(step - s.switch_step) /
                      static_cast<double>(s.total_steps - s.switch_step);
  const double w = 0.5 * (1.0 + half_cosine(frac));
  return s.final_lr + (s.base_lr - s.final_lr) * w;
}

}  // namespace dyra
