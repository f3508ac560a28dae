#pragma once

#include <cstdint>

namespace dyra {

/// Constant learning rate up to switch_step, then a half-cosine decay to
/// final_lr at total_steps. Endpoints and the decay midpoint are exact.
struct ConstCosineSchedule {
  double base_lr = 0.01;
  std::int64_t total_steps = 1000;
  std::int64_t switch_step = 666;  // floor(2T/3) when defaulted
  double final_lr = 0.0;

  ConstCosineSchedule() = default;
  ConstCosineSchedule(double base, std::int64_t total, std::int64_t switch_at,
                      double final_value = 0.0);

  /// Schedule with the default switch point floor(2T/3).
  static ConstCosineSchedule with_default_switch(double base, std::int64_t total,
                                                 double final_value = 0.0);
};

/// Learning rate at an integer step in [0, total_steps]. Steps beyond the
/// end throw.
double lr_at(std::int64_t step, const ConstCosineSchedule& s);

}  // namespace dyra
