// dyra: loss evaluation, gradient checks, toy joint training, gamma
// experiments, schedule dumps, annotation statistics and image rescaling.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dyra/config.hpp"
#include "dyra/core.hpp"
#include "dyra/gradsuite.hpp"
#include "dyra/harness.hpp"
#include "dyra/imaging.hpp"
#include "dyra/ingest.hpp"
#include "dyra/losses.hpp"
#include "dyra/predictor.hpp"
#include "dyra/sched.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliOptions {
  std::string config_path;
  int threads = 1;
};

dyra::RunConfig load_config_or_default(const CliOptions& cli) {
  dyra::RunConfig cfg = cli.config_path.empty()
                            ? dyra::parse_run_config(dyra::default_config_json())
                            : dyra::load_run_config(cli.config_path);
  if (const char* override_dir = std::getenv("DYRA_OUTPUT_DIR")) {
    if (*override_dir != '\0') cfg.output_dir = override_dir;
  }
  return cfg;
}

// shortest representation that round-trips, so CSV bytes are reproducible
std::string fmt(double v) {
  char buf[40];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

fs::path ensure_output_dir(const dyra::RunConfig& cfg) {
  fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

json loss_report_to_json(const dyra::LossReport& report) {
  return json{{"l_cls", report.l_cls},
              {"l_loc", report.l_loc},
              {"l_scale_per_box", report.l_scale_per_box},
              {"l_ps", report.l_ps},
              {"l_bal", report.l_bal},
              {"l_total", report.l_total}};
}

// ---------------------------------------------------------------- losses eval

int cmd_losses_eval(const CliOptions& cli, const std::string& case_path) {
  const dyra::RunConfig cfg = load_config_or_default(cli);

  std::ifstream in(case_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open case file " + case_path);
  json doc = json::parse(in);

  const std::string mode_text = doc.value("stage_mode", "one_stage");
  dyra::StageMode mode;
  if (mode_text == "one_stage") {
    mode = dyra::StageMode::OneStage;
  } else if (mode_text == "two_stage") {
    mode = dyra::StageMode::TwoStage;
  } else {
    throw std::runtime_error("stage_mode must be \"one_stage\" or \"two_stage\"");
  }
  const double l_cls = doc.value("l_cls", 0.0);
  if (!doc.contains("images") || !doc["images"].is_array() || doc["images"].empty()) {
    throw std::runtime_error("case file needs a non-empty \"images\" array");
  }

  const dyra::ScaleSet scales;
  const dyra::SizeRange band = cfg.balance.range();
  const double boundary = cfg.balance.group_boundary();

  std::vector<dyra::ImageScaleCase> batch;
  std::size_t n_stages = 0;
  std::vector<double> stage_loc_sum;
  std::size_t n_boxes = 0;
  std::vector<dyra::GroupSplit> stage_splits;
  std::vector<std::vector<dyra::TaggedBoxLoss>> stage_tagged;
  dyra::LossReport report;

  for (const json& image : doc["images"]) {
    dyra::ImageScaleCase image_case;
    image_case.phi = image.at("phi").get<double>();
    for (const json& box : image.value("boxes", json::array())) {
      const double w = box.at("width").get<double>();
      const double h = box.at("height").get<double>();
      const dyra::BoxRecord record(0, w, h);
      const dyra::SizeRatio ratio = dyra::size_ratio(record, band);
      const int scale_idx = dyra::assign_scale(record, scales);
      image_case.boxes.push_back(dyra::ScaledBox{ratio.r_prime, scale_idx});
      report.l_scale_per_box.push_back(
          dyra::scale_loss(ratio.r_prime, image_case.phi, cfg.scaler.tau));

      std::vector<double> box_loc;
      const json& loc = box.at("loc_loss");
      if (loc.is_number()) {
        box_loc.push_back(loc.get<double>());
      } else if (loc.is_array() && !loc.empty()) {
        for (const json& v : loc) box_loc.push_back(v.get<double>());
      } else {
        throw std::runtime_error("loc_loss must be a number or a non-empty array");
      }
      if (n_stages == 0) {
        n_stages = box_loc.size();
        stage_loc_sum.assign(n_stages, 0.0);
        stage_splits.assign(n_stages, dyra::GroupSplit{});
        stage_tagged.assign(n_stages, {});
      } else if (box_loc.size() != n_stages) {
        throw std::runtime_error("all boxes must carry the same number of stage losses");
      }
      for (std::size_t s = 0; s < n_stages; ++s) {
        stage_loc_sum[s] += box_loc[s];
        stage_splits[s].add(record.area, boundary, box_loc[s]);
        stage_tagged[s].push_back(dyra::TaggedBoxLoss{box_loc[s], record.area >= boundary});
      }
      ++n_boxes;
    }
    batch.push_back(std::move(image_case));
  }
  if (n_boxes == 0) throw std::runtime_error("case file contains no boxes");
  if (mode == dyra::StageMode::OneStage && n_stages != 1) {
    throw std::runtime_error("one_stage cases must carry exactly one loc loss per box");
  }

  report.l_cls = l_cls;
  for (std::size_t s = 0; s < n_stages; ++s) {
    report.l_loc.push_back(stage_loc_sum[s] / static_cast<double>(n_boxes));
  }
  report.l_ps = dyra::pareto_scale_loss(batch, scales, cfg.scaler.tau);

  std::vector<double> stage_bal(n_stages);
  for (std::size_t s = 0; s < n_stages; ++s) {
    const dyra::BalanceResult r =
        cfg.variant == dyra::BalanceVariant::AfterAvg
            ? dyra::balance_loss_after_avg(stage_splits[s], cfg.balance)
            : dyra::balance_loss_before_avg(stage_tagged[s], cfg.balance);
    stage_bal[s] = r.loss;
  }
  report.l_bal = mode == dyra::StageMode::OneStage
                     ? stage_bal[0]
                     : dyra::two_stage_compose(stage_bal, report.l_loc);
  report.l_total = dyra::total_loss(
      dyra::TotalLossParts{report.l_cls, report.l_loc, report.l_ps, stage_bal}, mode);

  std::cout << loss_report_to_json(report).dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ gradcheck

int cmd_gradcheck(const CliOptions& cli, std::uint64_t seed, int trials) {
  const dyra::RunConfig cfg = load_config_or_default(cli);
  const auto results = dyra::run_gradient_suite(seed, trials, cfg.scaler);
  std::cout << dyra::format_gradient_suite(results);
  for (const auto& r : results) {
    if (!r.passed()) return 1;
  }
  return 0;
}

// ------------------------------------------------------------------ train-toy

std::string trace_to_csv(const std::vector<dyra::StepTrace>& trace) {
  std::string csv = "step,l_ps,l_bal,l_total,gamma,lr\n";
  for (const dyra::StepTrace& t : trace) {
    csv += std::to_string(t.step) + "," + fmt(t.l_ps) + "," + fmt(t.l_bal) + "," +
           fmt(t.l_total) + "," + fmt(t.gamma) + "," + fmt(t.lr) + "\n";
  }
  return csv;
}

json holdout_stats_json(const dyra::RunConfig& cfg, const dyra::PredictorParams& params,
                        const std::vector<dyra::SyntheticImage>& dataset) {
  const std::size_t n_hold =
      static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(dataset.size()));
  const std::vector<dyra::SyntheticImage> holdout(dataset.end() - static_cast<long>(n_hold),
                                                  dataset.end());
  std::vector<double> phis, log_mean_areas;
  for (const dyra::SyntheticImage& img : holdout) {
    const std::vector<double> input =
        dyra::predictor_input(img, 1.0, params.mode, params.thumbnail_side);
    phis.push_back(dyra::predictor_eval(params, input, cfg.scaler));
    double mean_area = 0.0;
    for (const auto& box : img.boxes) mean_area += box.area;
    log_mean_areas.push_back(std::log(mean_area / static_cast<double>(img.boxes.size())));
  }

  json stats;
  stats["parameter_count"] = params.size();
  stats["holdout_images"] = holdout.size();
  stats["holdout_pearson_log_area_phi"] =
      holdout.size() >= 2 ? dyra::pearson(log_mean_areas, phis) : 0.0;
  stats["holdout_phi_mean"] = dyra::mean_of(phis);
  stats["holdout_phi_std"] = dyra::stddev_of(phis);

  const std::vector<double> sizes = {400.0, 640.0, 800.0, 1200.0};
  const std::vector<double> taus(sizes.size(), cfg.scaler.tau);
  const auto sweep = dyra::resolution_sweep(params, cfg.scaler, holdout, sizes, taus,
                                            cfg.base_size, 800.0);
  json sweep_json = json::array();
  for (const dyra::SweepEntry& e : sweep) {
    sweep_json.push_back({{"size", e.size},
                          {"tau", e.tau},
                          {"mean_phi", e.stats.mean},
                          {"std_phi", e.stats.stddev},
                          {"pearson_vs_800", e.stats.pearson_vs_ref}});
  }
  stats["resolution_sweep"] = std::move(sweep_json);
  return stats;
}

int cmd_train_toy(const CliOptions& cli, const std::string& checkpoint_path) {
  const dyra::RunConfig cfg = load_config_or_default(cli);
  const auto dataset =
      dyra::generate_dataset(cfg.seed, cfg.n_images, cfg.area, cfg.base_size);
  const fs::path dir = ensure_output_dir(cfg);

  if (!checkpoint_path.empty()) {
    // evaluation-only: score an existing checkpoint on the held-out split
    const dyra::PredictorParams params = dyra::load_checkpoint(checkpoint_path);
    json stats = holdout_stats_json(cfg, params, dataset);
    write_text_file(dir / "stats.json", stats.dump(2) + "\n");
    std::cout << "evaluated checkpoint " << checkpoint_path << "\n"
              << "holdout pearson(log mean-area, phi) "
              << fmt(stats["holdout_pearson_log_area_phi"].get<double>()) << "\n"
              << "wrote " << (dir / "stats.json").string() << "\n";
    return 0;
  }

  const dyra::TrainResult result =
      dyra::train_joint(dataset, cfg.scaler, cfg.balance, cfg.surrogate, cfg.schedule,
                        cfg.train_options(cli.threads));

  write_text_file(dir / "trace.csv", trace_to_csv(result.trace));
  dyra::save_checkpoint(result.params, (dir / "checkpoint.json").string());

  json stats = holdout_stats_json(cfg, result.params, dataset);
  stats["final_gamma"] = result.state.gamma;
  write_text_file(dir / "stats.json", stats.dump(2) + "\n");

  const std::size_t n_hold = result.holdout_phi.size();
  std::cout << "trained " << result.trace.size() << " steps on "
            << (dataset.size() - n_hold) << " images (" << n_hold << " held out), "
            << result.params.size() << " parameters\n"
            << "final gamma " << fmt(result.state.gamma) << "\n"
            << "holdout pearson(log mean-area, phi) " << fmt(result.holdout_pearson) << "\n"
            << "wrote " << (dir / "trace.csv").string() << ", "
            << (dir / "checkpoint.json").string() << ", " << (dir / "stats.json").string()
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ gamma-sim

int cmd_gamma_sim(const CliOptions& cli, double init_gamma, int steps, double group_loss) {
  const dyra::RunConfig cfg = load_config_or_default(cli);
  dyra::BalanceState state = cfg.balance;
  state.gamma = init_gamma;
  const auto trace = dyra::gamma_equilibrium(dyra::equal_loss_splits(group_loss), state,
                                             steps, cfg.schedule.base_lr);

  std::string csv = "step,gamma\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    csv += std::to_string(i) + "," + fmt(trace[i]) + "\n";
  }
  const fs::path dir = ensure_output_dir(cfg);
  const fs::path out = dir / "gamma_trace.csv";
  write_text_file(out, csv);
  std::cout << "final gamma " << fmt(trace.back()) << " after " << steps << " steps\n"
            << "wrote " << out.string() << "\n";
  return 0;
}

// --------------------------------------------------------------- balance-diag

int cmd_balance_diag(const CliOptions& cli, bool sweep, double grid_step) {
  const dyra::RunConfig cfg = load_config_or_default(cli);
  if (!sweep) {
    std::cout << "nothing to do; pass --sweep to emit the target grid\n";
    return 0;
  }
  if (!(grid_step > 0.0) || grid_step >= 1.0) {
    throw std::runtime_error("balance-diag: grid step must lie in (0, 1)");
  }
  const long cells = std::lround(1.0 / grid_step);
  std::string csv = "loss_down,loss_up,weight_down,weight_up,target\n";
  for (long i = 1; i < cells; ++i) {
    for (long j = 1; j < cells; ++j) {
      const double down = static_cast<double>(i) / static_cast<double>(cells);
      const double up = static_cast<double>(j) / static_cast<double>(cells);
      dyra::GroupSplit split;
      split.loc_down = down;
      split.loc_up = up;
      split.n_down = 1;
      split.n_up = 1;
      const auto weights = dyra::f_sub(dyra::f_norm({down, up}));
      const dyra::BalanceResult r = dyra::balance_loss_after_avg(split, cfg.balance);
      csv += fmt(down) + "," + fmt(up) + "," + fmt(weights.first) + "," +
             fmt(weights.second) + "," + fmt(r.target) + "\n";
    }
  }
  const fs::path dir = ensure_output_dir(cfg);
  const fs::path out = dir / "balance_diag.csv";
  write_text_file(out, csv);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

// -------------------------------------------------------------- schedule dump

int cmd_schedule_dump(const CliOptions& cli) {
  const dyra::RunConfig cfg = load_config_or_default(cli);
  std::string csv = "step,lr\n";
  for (std::int64_t step = 0; step <= cfg.schedule.total_steps; ++step) {
    csv += std::to_string(step) + "," + fmt(dyra::lr_at(step, cfg.schedule)) + "\n";
  }
  const fs::path dir = ensure_output_dir(cfg);
  const fs::path out = dir / "schedule.csv";
  write_text_file(out, csv);
  std::cout << "wrote " << out.string() << " (" << (cfg.schedule.total_steps + 1)
            << " rows)\n";
  return 0;
}

// ---------------------------------------------------------------------- stats

int cmd_stats(const std::string& annotations_path, double gamma,
              const std::string& hist_path) {
  dyra::BalanceState state;
  state.gamma = gamma;
  const dyra::AnnotationSet set = dyra::parse_annotations(annotations_path);
  const dyra::DatasetStats stats = dyra::dataset_stats(set, state);

  json j = json::parse(dyra::stats_to_json(stats));
  j["warnings"] = set.warnings;
  std::cout << j.dump(2) << "\n";
  if (!hist_path.empty()) {
    write_text_file(hist_path, dyra::histogram_to_csv(stats));
  }
  return 0;
}

// --------------------------------------------------------------------- resize

int cmd_resize(const CliOptions& cli, const std::string& input, double phi,
               const std::string& output, const std::string& boxes_path,
               std::string boxes_out) {
  const dyra::RasterImage img = dyra::read_pnm(input);
  const dyra::RasterImage scaled = dyra::rescale(img, phi, cli.threads);
  dyra::write_pnm(scaled, output);
  std::cout << "wrote " << output << " (" << scaled.width << "x" << scaled.height << ")\n";

  if (!boxes_path.empty()) {
    std::ifstream in(boxes_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open boxes file " + boxes_path);
    json doc = json::parse(in);
    if (!doc.is_array()) throw std::runtime_error("boxes file must be a JSON array");
    std::vector<dyra::PlacedBox> boxes;
    for (const json& b : doc) {
      const json& arr = b.is_array() ? b : b.at("bbox");
      if (!arr.is_array() || arr.size() != 4) {
        throw std::runtime_error("each box must be [x, y, w, h] or {\"bbox\": [...]}");
      }
      boxes.push_back(dyra::PlacedBox{arr[0].get<double>(), arr[1].get<double>(),
                                      arr[2].get<double>(), arr[3].get<double>()});
    }
    const auto scaled_boxes = dyra::rescale_boxes(boxes, phi);
    json out = json::array();
    for (const dyra::PlacedBox& b : scaled_boxes) {
      out.push_back({b.x, b.y, b.width, b.height});
    }
    if (boxes_out.empty()) boxes_out = boxes_path + ".scaled.json";
    write_text_file(boxes_out, out.dump(2) + "\n");
    std::cout << "wrote " << boxes_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive-resolution scale-factor toolkit", "dyra"};
  app.require_subcommand(1);

  CliOptions cli;
  app.add_option("--threads", cli.threads, "worker threads (1 = serial reference mode)")
      ->default_val(1);

  auto* losses = app.add_subcommand("losses", "loss computations");
  losses->require_subcommand(1);
  auto* losses_eval = losses->add_subcommand("eval", "evaluate a hand-written loss case");
  losses_eval->add_option("--config", cli.config_path, "run configuration JSON");
  std::string case_path;
  losses_eval->add_option("--case", case_path, "case file with images/boxes/phi")->required();

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck_cmd->add_option("--config", cli.config_path, "run configuration JSON");
  std::uint64_t gc_seed = 1;
  int gc_trials = 20;
  gradcheck_cmd->add_option("--seed", gc_seed, "random seed");
  gradcheck_cmd->add_option("--trials", gc_trials, "random configurations per loss");

  auto* train = app.add_subcommand("train-toy", "joint training on a synthetic dataset");
  train->add_option("--config", cli.config_path, "run configuration JSON");
  std::string checkpoint_path;
  train->add_option("--checkpoint", checkpoint_path,
                    "skip training; evaluate this checkpoint on the held-out split");

  auto* gamma_sim = app.add_subcommand("gamma-sim", "gamma descent under equal group losses");
  gamma_sim->add_option("--config", cli.config_path, "run configuration JSON");
  double gamma_init = 4.0;
  int gamma_steps = 2000;
  double gamma_group_loss = 0.4;
  gamma_sim->add_option("--init", gamma_init, "initial gamma")->required();
  gamma_sim->add_option("--steps", gamma_steps, "descent steps");
  gamma_sim->add_option("--loss", gamma_group_loss, "per-group mean loss fed to both groups");

  auto* diag = app.add_subcommand("balance-diag", "balance-loss target diagnostics");
  diag->add_option("--config", cli.config_path, "run configuration JSON");
  bool diag_sweep = false;
  double diag_step = 0.05;
  diag->add_flag("--sweep", diag_sweep, "emit the (loss_down, loss_up, target) grid");
  diag->add_option("--grid-step", diag_step, "sweep grid step");

  auto* schedule = app.add_subcommand("schedule", "learning-rate schedule tools");
  schedule->require_subcommand(1);
  auto* schedule_dump = schedule->add_subcommand("dump", "emit (step, lr) CSV");
  schedule_dump->add_option("--config", cli.config_path, "run configuration JSON");

  auto* stats = app.add_subcommand("stats", "statistics of a COCO-style annotation file");
  std::string annotations_path, hist_path;
  double stats_gamma = 6.8;
  stats->add_option("--annotations", annotations_path, "COCO-schema JSON file")->required();
  stats->add_option("--gamma", stats_gamma, "gamma defining the group boundary");
  stats->add_option("--hist", hist_path, "also write the area histogram CSV here");

  auto* resize = app.add_subcommand("resize", "rescale a PPM/PGM image by phi");
  std::string resize_in, resize_out, boxes_path, boxes_out;
  double resize_phi = 1.0;
  resize->add_option("--input", resize_in, "input image (binary PPM/PGM)")->required();
  resize->add_option("--phi", resize_phi, "scale factor in (0, 10]")->required();
  resize->add_option("--output", resize_out, "output image path")->required();
  resize->add_option("--boxes", boxes_path, "JSON array of [x, y, w, h] boxes to rescale");
  resize->add_option("--boxes-out", boxes_out, "output path for the rescaled boxes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (losses_eval->parsed()) return cmd_losses_eval(cli, case_path);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(cli, gc_seed, gc_trials);
    if (train->parsed()) return cmd_train_toy(cli, checkpoint_path);
    if (gamma_sim->parsed())
      return cmd_gamma_sim(cli, gamma_init, gamma_steps, gamma_group_loss);
    if (diag->parsed()) return cmd_balance_diag(cli, diag_sweep, diag_step);
    if (schedule_dump->parsed()) return cmd_schedule_dump(cli);
    if (stats->parsed()) return cmd_stats(annotations_path, stats_gamma, hist_path);
    if (resize->parsed()) return cmd_resize(cli, resize_in, resize_phi, resize_out,
                                            boxes_path, boxes_out);
  } catch (const dyra::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
