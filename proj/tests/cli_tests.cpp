// End-to-end checks of the dyra binary: exit codes, output files, byte
// reproducibility and the --help snapshot.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dyra/imaging.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "dyra_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run_cli(const std::string& args, const std::string& output_dir = "") {
  const fs::path out_file = scratch_dir() / "stdout.txt";
  const fs::path err_file = scratch_dir() / "stderr.txt";
  std::string cmd;
  if (!output_dir.empty()) cmd += "DYRA_OUTPUT_DIR='" + output_dir + "' ";
  cmd += std::string(DYRA_CLI_PATH) + " " + args + " > '" + out_file.string() + "' 2> '" +
         err_file.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = slurp(out_file);
  result.err = slurp(err_file);
  return result;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("schedule dump emits the documented endpoint rows") {
  const fs::path dir = scratch_dir() / "sched";
  const fs::path config = scratch_dir() / "sched.json";
  write_file(config, R"({"schedule": {"base_lr": 0.01, "total_steps": 100, "switch_step": 66}})");
  const RunResult r = run_cli("schedule dump --config " + config.string(), dir.string());
  CHECK(r.exit_code == 0);

  std::ifstream csv(dir / "schedule.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,lr");
  int rows = 0;
  std::string first, last;
  while (std::getline(csv, line)) {
    if (rows == 0) first = line;
    last = line;
    ++rows;
  }
  CHECK(rows == 101);
  CHECK(first == "0,0.01");
  CHECK(last == "100,0");
}

TEST_CASE("gamma-sim lands inside the published band and is byte-reproducible") {
  const fs::path dir_a = scratch_dir() / "gamma_a";
  const fs::path dir_b = scratch_dir() / "gamma_b";
  const RunResult a = run_cli("gamma-sim --init 4", dir_a.string());
  CHECK(a.exit_code == 0);
  const RunResult b = run_cli("gamma-sim --init 4", dir_b.string());
  CHECK(b.exit_code == 0);
  CHECK(slurp(dir_a / "gamma_trace.csv") == slurp(dir_b / "gamma_trace.csv"));

  std::ifstream csv(dir_a / "gamma_trace.csv");
  std::string line, last;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) last = line;
  const double final_gamma = std::stod(last.substr(last.find(',') + 1));
  CHECK(final_gamma >= 6.75);
  CHECK(final_gamma <= 6.85);
}

TEST_CASE("losses eval reproduces a hand-computed case") {
  // phi = 1.0, tau = 2: every scale loss is log 2 regardless of r'.
  // Two boxes on different pyramid scales, one per balance group, equal
  // localization losses -> target 6.8, gamma 6.8 -> l_bal = 0.
  const fs::path case_path = scratch_dir() / "case.json";
  write_file(case_path, R"({
    "stage_mode": "one_stage",
    "l_cls": 0.25,
    "images": [{
      "phi": 1.0,
      "boxes": [
        {"width": 30, "height": 30, "loc_loss": 0.4},
        {"width": 400, "height": 400, "loc_loss": 0.4}
      ]
    }]
  })");
  const RunResult r = run_cli("losses eval --case " + case_path.string());
  CHECK(r.exit_code == 0);
  const json report = json::parse(r.out);
  const double ln2 = std::log(2.0);
  CHECK(report["l_ps"].get<double>() == doctest::Approx(2.0 * ln2).epsilon(1e-12));
  CHECK(report["l_bal"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report["l_loc"][0].get<double>() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(report["l_scale_per_box"].size() == 2);
  // total = cls + loc + loc * (ps + bal)
  CHECK(report["l_total"].get<double>() ==
        doctest::Approx(0.25 + 0.4 + 0.4 * 2.0 * ln2).epsilon(1e-12));
}

TEST_CASE("losses eval two-stage composition") {
  const fs::path case_path = scratch_dir() / "case2.json";
  write_file(case_path, R"({
    "stage_mode": "two_stage",
    "l_cls": 1.0,
    "images": [{
      "phi": 1.0,
      "boxes": [
        {"width": 30, "height": 30, "loc_loss": [0.4, 0.8]},
        {"width": 400, "height": 400, "loc_loss": [0.4, 0.8]}
      ]
    }]
  })");
  const RunResult r = run_cli("losses eval --case " + case_path.string());
  CHECK(r.exit_code == 0);
  const json report = json::parse(r.out);
  REQUIRE(report["l_loc"].size() == 2);
  CHECK(report["l_loc"][0].get<double>() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(report["l_loc"][1].get<double>() == doctest::Approx(0.8).epsilon(1e-12));
  // equal group losses in both stages -> per-stage bal = 0 at gamma 6.8
  CHECK(report["l_bal"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  const double ln2 = std::log(2.0);
  CHECK(report["l_total"].get<double>() ==
        doctest::Approx(1.0 + 1.2 + 1.2 * 2.0 * ln2).epsilon(1e-12));
}

TEST_CASE("bad config exits 2 and names the offending path") {
  const fs::path config = scratch_dir() / "bad.json";
  write_file(config, R"({"harness": {"bogus_key": 1}})");
  const RunResult r = run_cli("gamma-sim --init 4 --config " + config.string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("/harness/bogus_key") != std::string::npos);

  const RunResult tau = run_cli("schedule dump --config /nonexistent.json");
  CHECK(tau.exit_code == 2);
}

TEST_CASE("runtime failure exits 1") {
  const RunResult r = run_cli("resize --input /nonexistent.ppm --phi 1 --output /tmp/x.ppm");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("resize --phi 1 produces byte-identical output plus scaled boxes") {
  const fs::path input = scratch_dir() / "in.ppm";
  dyra::RasterImage img(12, 9, 3);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    img.samples[i] = static_cast<std::uint8_t>((i * 7) % 256);
  }
  dyra::write_pnm(img, input.string());

  const fs::path output = scratch_dir() / "out.ppm";
  const RunResult identity =
      run_cli("resize --input " + input.string() + " --phi 1 --output " + output.string());
  CHECK(identity.exit_code == 0);
  CHECK(slurp(input) == slurp(output));

  const fs::path boxes = scratch_dir() / "boxes.json";
  write_file(boxes, R"([[10, 10, 20, 20], {"bbox": [0, 0, 4, 6]}])");
  const fs::path boxes_out = scratch_dir() / "boxes_scaled.json";
  const RunResult scaled =
      run_cli("resize --input " + input.string() + " --phi 0.5 --output " + output.string() +
              " --boxes " + boxes.string() + " --boxes-out " + boxes_out.string());
  CHECK(scaled.exit_code == 0);
  const json out_boxes = json::parse(slurp(boxes_out));
  REQUIRE(out_boxes.size() == 2);
  CHECK(out_boxes[0] == json::array({5.0, 5.0, 10.0, 10.0}));
  CHECK(out_boxes[1] == json::array({0.0, 0.0, 2.0, 3.0}));
}

TEST_CASE("stats subcommand reports fractions and warnings") {
  const fs::path annotations = scratch_dir() / "coco.json";
  write_file(annotations, R"({
    "images": [{"id": 1, "width": 1000, "height": 1000}],
    "annotations": [
      {"id": 1, "image_id": 1, "bbox": [0, 0, 100, 100]},
      {"id": 2, "image_id": 1, "bbox": [0, 0, 300, 300]},
      {"id": 3, "image_id": 1, "bbox": [0, 0, 0, 10]}
    ]
  })");
  const fs::path hist = scratch_dir() / "hist.csv";
  const RunResult r = run_cli("stats --annotations " + annotations.string() +
                              " --gamma 6.8 --hist " + hist.string());
  CHECK(r.exit_code == 0);
  const json stats = json::parse(r.out);
  CHECK(stats["n_boxes"] == 2);
  CHECK(stats["warnings"] == 1);
  CHECK(stats["group_boundary"].get<double>() == doctest::Approx(34816.0));
  CHECK(stats["frac_up"].get<double>() == doctest::Approx(0.5));
  CHECK(stats["frac_down"].get<double>() == doctest::Approx(0.5));
  CHECK(slurp(hist).rfind("area_lower,area_upper,count\n", 0) == 0);
}

TEST_CASE("balance-diag sweep exposes the target asymmetry") {
  const fs::path dir = scratch_dir() / "diag";
  const RunResult r = run_cli("balance-diag --sweep --grid-step 0.2", dir.string());
  CHECK(r.exit_code == 0);
  std::ifstream csv(dir / "balance_diag.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "loss_down,loss_up,weight_down,weight_up,target");
  bool found_balanced = false;
  bool found_asymmetric = false;
  while (std::getline(csv, line)) {
    if (line.rfind("0.4", 0) == 0) {
      if (line.find("0.4,0.4") != std::string::npos && line.find(",6.8") != std::string::npos) {
        found_balanced = true;
      }
    }
    // dominance of the down group still raises the target above 6.8
    if (line.rfind("0.8", 0) == 0 && line.find("0.8,0.4") == 0) {
      const double target = std::stod(line.substr(line.rfind(',') + 1));
      CHECK(target == doctest::Approx(7.2).epsilon(1e-9));
      found_asymmetric = true;
    }
  }
  CHECK(found_balanced);
  CHECK(found_asymmetric);
}

TEST_CASE("gradcheck subcommand passes and exits 0") {
  const RunResult r = run_cli("gradcheck --trials 3 --seed 5");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("pass") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("--help output matches the snapshot and lists every subcommand") {
  const RunResult top = run_cli("--help");
  CHECK(top.exit_code == 0);
  for (const char* name : {"losses", "gradcheck", "train-toy", "gamma-sim", "balance-diag",
                           "schedule", "stats", "resize"}) {
    CHECK(top.out.find(name) != std::string::npos);
  }

  std::string combined = top.out;
  for (const std::string sub :
       {"losses eval", "gradcheck", "train-toy", "gamma-sim", "balance-diag",
        "schedule dump", "stats", "resize"}) {
    const RunResult r = run_cli(sub + " --help");
    CHECK(r.exit_code == 0);
    combined += "\n==== " + sub + " ====\n" + r.out;
  }
  const std::string snapshot = slurp(DYRA_HELP_SNAPSHOT);
  CHECK(!snapshot.empty());
  CHECK(combined == snapshot);
}
