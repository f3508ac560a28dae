#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "dyra/core.hpp"
#include "dyra/harness.hpp"
#include "dyra/predictor.hpp"
#include "dyra/sched.hpp"

namespace dyra {

/// Configuration failure; carries the JSON pointer of the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string json_path)
      : std::runtime_error(what + " (at " + json_path + ")"),
        json_path_(std::move(json_path)) {}
  const std::string& json_path() const { return json_path_; }

 private:
  std::string json_path_;
};

/// Everything a CLI run needs. Every field has a documented default; unknown
/// keys in the file are rejected.
struct RunConfig {
  ScalerConfig scaler;
  InputMode input_mode = InputMode::Features;
  BalanceState balance;
  BalanceVariant variant = BalanceVariant::AfterAvg;
  ConstCosineSchedule schedule{0.01, 3000, 2000, 0.0};

  std::uint64_t seed = 1;
  int n_images = 1000;
  int batch_size = 8;
  double base_size = 800.0;
  AreaDistribution area;
  SurrogateDetector surrogate;
  double predictor_lr_scale = 3.0;
  double gamma_lr_scale = 1.0;
  double augment_lo = 0.5;
  double augment_hi = 1.6;
  double holdout_fraction = 0.2;

  std::string output_dir = "out";

  TrainOptions train_options(int threads) const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// The fully-populated default configuration as pretty JSON.
std::string default_config_json();

}  // namespace dyra
