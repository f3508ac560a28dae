#include "dyra/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace dyra {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& section, const std::set<std::string>& allowed,
                         const std::string& path) {
  for (const auto& [key, value] : section.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unrecognized key", path + "/" + key);
    }
  }
}

double get_number(const json& section, const char* key, double fallback,
                  const std::string& path) {
  if (!section.contains(key)) return fallback;
  if (!section[key].is_number()) throw ConfigError("expected a number", path + "/" + key);
  return section[key].get<double>();
}

std::int64_t get_integer(const json& section, const char* key, std::int64_t fallback,
                         const std::string& path) {
  if (!section.contains(key)) return fallback;
  if (!section[key].is_number_integer()) {
    throw ConfigError("expected an integer", path + "/" + key);
  }
  return section[key].get<std::int64_t>();
}

std::string get_string(const json& section, const char* key, const std::string& fallback,
                       const std::string& path) {
  if (!section.contains(key)) return fallback;
  if (!section[key].is_string()) throw ConfigError("expected a string", path + "/" + key);
  return section[key].get<std::string>();
}

std::pair<double, double> get_pair(const json& section, const char* key,
                                   std::pair<double, double> fallback,
                                   const std::string& path) {
  if (!section.contains(key)) return fallback;
  const json& v = section[key];
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError("expected an array of two numbers", path + "/" + key);
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

TrainOptions RunConfig::train_options(int threads) const {
  TrainOptions opts;
  opts.steps = static_cast<int>(schedule.total_steps);
  opts.batch_size = batch_size;
  opts.threads = threads;
  opts.seed = seed;
  opts.predictor_lr_scale = predictor_lr_scale;
  opts.gamma_lr_scale = gamma_lr_scale;
  opts.augment_lo = augment_lo;
  opts.augment_hi = augment_hi;
  opts.holdout_fraction = holdout_fraction;
  opts.variant = variant;
  opts.input_mode = input_mode;
  return opts;
}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("JSON parse error: ") + e.what(), "/");
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object", "/");
  reject_unknown_keys(doc, {"scaler", "balance", "schedule", "harness", "output"}, "");

  RunConfig cfg;

  if (doc.contains("scaler")) {
    const json& s = doc["scaler"];
    if (!s.is_object()) throw ConfigError("expected an object", "/scaler");
    reject_unknown_keys(s,
                        {"tau", "conv_layers", "encoder_blocks", "hidden_dim", "tokens",
                         "stem_channels", "thumbnail_side", "input_mode"},
                        "/scaler");
    cfg.scaler.tau = get_number(s, "tau", cfg.scaler.tau, "/scaler");
    cfg.scaler.conv_layers =
        static_cast<int>(get_integer(s, "conv_layers", cfg.scaler.conv_layers, "/scaler"));
    cfg.scaler.encoder_blocks = static_cast<int>(
        get_integer(s, "encoder_blocks", cfg.scaler.encoder_blocks, "/scaler"));
    cfg.scaler.hidden_dim =
        static_cast<int>(get_integer(s, "hidden_dim", cfg.scaler.hidden_dim, "/scaler"));
    cfg.scaler.tokens = static_cast<int>(get_integer(s, "tokens", cfg.scaler.tokens, "/scaler"));
    cfg.scaler.stem_channels = static_cast<int>(
        get_integer(s, "stem_channels", cfg.scaler.stem_channels, "/scaler"));
    cfg.scaler.thumbnail_side = static_cast<int>(
        get_integer(s, "thumbnail_side", cfg.scaler.thumbnail_side, "/scaler"));
    const std::string mode = get_string(s, "input_mode", "features", "/scaler");
    if (mode == "features") {
      cfg.input_mode = InputMode::Features;
    } else if (mode == "thumbnail") {
      cfg.input_mode = InputMode::Thumbnail;
    } else {
      throw ConfigError("input_mode must be \"features\" or \"thumbnail\"",
                        "/scaler/input_mode");
    }
    try {
      cfg.scaler.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), "/scaler");
    }
  }

  if (doc.contains("balance")) {
    const json& b = doc["balance"];
    if (!b.is_object()) throw ConfigError("expected an object", "/balance");
    reject_unknown_keys(b, {"gamma_init", "s_ap", "m_bounds", "variant"}, "/balance");
    const double gamma = get_number(b, "gamma_init", cfg.balance.gamma, "/balance");
    const auto s_ap =
        get_pair(b, "s_ap", {cfg.balance.s_ap_small, cfg.balance.s_ap_large}, "/balance");
    const auto m =
        get_pair(b, "m_bounds", {cfg.balance.m_lower, cfg.balance.m_upper}, "/balance");
    try {
      cfg.balance = BalanceState(gamma, s_ap.first, s_ap.second, m.first, m.second);
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), "/balance");
    }
    const std::string variant = get_string(b, "variant", "after_avg", "/balance");
    if (variant == "after_avg") {
      cfg.variant = BalanceVariant::AfterAvg;
    } else if (variant == "before_avg") {
      cfg.variant = BalanceVariant::BeforeAvg;
    } else {
      throw ConfigError("variant must be \"after_avg\" or \"before_avg\"",
                        "/balance/variant");
    }
  }

  if (doc.contains("schedule")) {
    const json& s = doc["schedule"];
    if (!s.is_object()) throw ConfigError("expected an object", "/schedule");
    reject_unknown_keys(s, {"base_lr", "total_steps", "switch_step", "final_lr"},
                        "/schedule");
    const double base = get_number(s, "base_lr", cfg.schedule.base_lr, "/schedule");
    const std::int64_t total =
        get_integer(s, "total_steps", cfg.schedule.total_steps, "/schedule");
    const std::int64_t switch_step =
        get_integer(s, "switch_step", 2 * total / 3, "/schedule");
    const double final_lr = get_number(s, "final_lr", cfg.schedule.final_lr, "/schedule");
    try {
      cfg.schedule = ConstCosineSchedule(base, total, switch_step, final_lr);
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), "/schedule");
    }
  }

  if (doc.contains("harness")) {
    const json& h = doc["harness"];
    if (!h.is_object()) throw ConfigError("expected an object", "/harness");
    reject_unknown_keys(h,
                        {"seed", "n_images", "batch_size", "base_size", "area_distribution",
                         "surrogate", "predictor_lr_scale", "gamma_lr_scale",
                         "augment_scale", "holdout_fraction"},
                        "/harness");
    cfg.seed = static_cast<std::uint64_t>(
        get_integer(h, "seed", static_cast<std::int64_t>(cfg.seed), "/harness"));
    cfg.n_images = static_cast<int>(get_integer(h, "n_images", cfg.n_images, "/harness"));
    cfg.batch_size = static_cast<int>(get_integer(h, "batch_size", cfg.batch_size, "/harness"));
    cfg.base_size = get_number(h, "base_size", cfg.base_size, "/harness");
    if (h.contains("area_distribution")) {
      const json& a = h["area_distribution"];
      if (!a.is_object()) throw ConfigError("expected an object", "/harness/area_distribution");
      reject_unknown_keys(a, {"log_mean", "log_std", "min_boxes", "max_boxes", "aspect_log_std"},
                          "/harness/area_distribution");
      cfg.area.log_mean =
          get_number(a, "log_mean", cfg.area.log_mean, "/harness/area_distribution");
      cfg.area.log_std =
          get_number(a, "log_std", cfg.area.log_std, "/harness/area_distribution");
      cfg.area.min_boxes = static_cast<int>(
          get_integer(a, "min_boxes", cfg.area.min_boxes, "/harness/area_distribution"));
      cfg.area.max_boxes = static_cast<int>(
          get_integer(a, "max_boxes", cfg.area.max_boxes, "/harness/area_distribution"));
      cfg.area.aspect_log_std = get_number(a, "aspect_log_std", cfg.area.aspect_log_std,
                                           "/harness/area_distribution");
    }
    if (h.contains("surrogate")) {
      const json& s = h["surrogate"];
      if (!s.is_object()) throw ConfigError("expected an object", "/harness/surrogate");
      reject_unknown_keys(s, {"s_opt", "k"}, "/harness/surrogate");
      const double s_opt = get_number(s, "s_opt", cfg.surrogate.s_opt, "/harness/surrogate");
      const double k = get_number(s, "k", cfg.surrogate.k, "/harness/surrogate");
      try {
        cfg.surrogate = SurrogateDetector(s_opt, k);
      } catch (const std::exception& e) {
        throw ConfigError(e.what(), "/harness/surrogate");
      }
    }
    cfg.predictor_lr_scale =
        get_number(h, "predictor_lr_scale", cfg.predictor_lr_scale, "/harness");
    cfg.gamma_lr_scale = get_number(h, "gamma_lr_scale", cfg.gamma_lr_scale, "/harness");
    const auto aug = get_pair(h, "augment_scale", {cfg.augment_lo, cfg.augment_hi}, "/harness");
    cfg.augment_lo = aug.first;
    cfg.augment_hi = aug.second;
    cfg.holdout_fraction = get_number(h, "holdout_fraction", cfg.holdout_fraction, "/harness");
    if (cfg.n_images < 1) throw ConfigError("n_images must be >= 1", "/harness/n_images");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1", "/harness/batch_size");
    if (!(cfg.augment_lo > 0.0) || cfg.augment_hi < cfg.augment_lo) {
      throw ConfigError("augment_scale must satisfy 0 < lo <= hi", "/harness/augment_scale");
    }
    if (!(cfg.holdout_fraction >= 0.0) || cfg.holdout_fraction >= 1.0) {
      throw ConfigError("holdout_fraction must lie in [0, 1)", "/harness/holdout_fraction");
    }
  }

  if (doc.contains("output")) {
    const json& o = doc["output"];
    if (!o.is_object()) throw ConfigError("expected an object", "/output");
    reject_unknown_keys(o, {"directory"}, "/output");
    cfg.output_dir = get_string(o, "directory", cfg.output_dir, "/output");
  }

  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path, "/");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string default_config_json() {
  const RunConfig cfg;
  json j;
  j["scaler"] = {{"tau", cfg.scaler.tau},
                 {"conv_layers", cfg.scaler.conv_layers},
                 {"encoder_blocks", cfg.scaler.encoder_blocks},
                 {"hidden_dim", cfg.scaler.hidden_dim},
                 {"tokens", cfg.scaler.tokens},
                 {"stem_channels", cfg.scaler.stem_channels},
                 {"thumbnail_side", cfg.scaler.thumbnail_side},
                 {"input_mode", "features"}};
  j["balance"] = {{"gamma_init", cfg.balance.gamma},
                  {"s_ap", {cfg.balance.s_ap_small, cfg.balance.s_ap_large}},
                  {"m_bounds", {cfg.balance.m_lower, cfg.balance.m_upper}},
                  {"variant", "after_avg"}};
  j["schedule"] = {{"base_lr", cfg.schedule.base_lr},
                   {"total_steps", cfg.schedule.total_steps},
                   {"switch_step", cfg.schedule.switch_step},
                   {"final_lr", cfg.schedule.final_lr}};
  j["harness"] = {{"seed", cfg.seed},
                  {"n_images", cfg.n_images},
                  {"batch_size", cfg.batch_size},
                  {"base_size", cfg.base_size},
                  {"area_distribution",
                   {{"log_mean", cfg.area.log_mean},
                    {"log_std", cfg.area.log_std},
                    {"min_boxes", cfg.area.min_boxes},
                    {"max_boxes", cfg.area.max_boxes},
                    {"aspect_log_std", cfg.area.aspect_log_std}}},
                  {"surrogate", {{"s_opt", cfg.surrogate.s_opt}, {"k", cfg.surrogate.k}}},
                  {"predictor_lr_scale", cfg.predictor_lr_scale},
                  {"gamma_lr_scale", cfg.gamma_lr_scale},
                  {"augment_scale", {cfg.augment_lo, cfg.augment_hi}},
                  {"holdout_fraction", cfg.holdout_fraction}};
  j["output"] = {{"directory", cfg.output_dir}};
  return j.dump(2);
}

}  // namespace dyra
