#include "dyra/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "dyra/rng.hpp"

namespace dyra {

namespace {

constexpr double kLogAreaCenter = 9.128696382935665;  // log(96^2)
constexpr double kLogAreaScale = 4.0;

int thumbnail_grid(int side, int conv_layers) {
  int g = side;
  for (int i = 0; i < conv_layers; ++i) {
    if (g % 2 != 0) {
      throw std::invalid_argument("thumbnail side must be divisible by 2^conv_layers");
    }
    g /= 2;
  }
  if (g < 1) throw std::invalid_argument("thumbnail conv stack collapses the canvas");
  return g;
}

struct LayoutBuilder {
  std::vector<std::pair<std::string, std::size_t>> segments;
  std::size_t total = 0;
  void add(const std::string& name, std::size_t n) {
    segments.emplace_back(name, n);
    total += n;
  }
};

LayoutBuilder build_layout(const PredictorParams& p) {
  LayoutBuilder lb;
  const std::size_t c = static_cast<std::size_t>(p.stem_channels);
  const std::size_t h = static_cast<std::size_t>(p.hidden_dim);
  if (p.mode == InputMode::Features) {
    const std::size_t t = static_cast<std::size_t>(p.tokens);
    lb.add("stem.w", t * c * kFeatureDim);
    lb.add("stem.b", t * c);
    for (int l = 0; l < p.conv_layers; ++l) {
      lb.add("conv" + std::to_string(l) + ".w", c * c * 3);
      lb.add("conv" + std::to_string(l) + ".b", c);
    }
  } else {
    for (int l = 0; l < p.conv_layers; ++l) {
      const std::size_t in_ch = (l == 0) ? 1 : c;
      lb.add("conv" + std::to_string(l) + ".w", c * in_ch * 9);
      lb.add("conv" + std::to_string(l) + ".b", c);
    }
  }
  lb.add("tok.w", h * c);
  lb.add("tok.b", h);
  for (int e = 0; e < p.encoder_blocks; ++e) {
    const std::string base = "enc" + std::to_string(e) + ".";
    for (const char* part : {"q", "k", "v", "o"}) {
      lb.add(base + part + ".w", h * h);
      lb.add(base + part + ".b", h);
    }
    lb.add(base + "ff1.w", h * h);
    lb.add(base + "ff1.b", h);
    lb.add(base + "ff2.w", h * h);
    lb.add(base + "ff2.b", h);
  }
  lb.add("fc.w", h);
  lb.add("fc.b", 1);
  return lb;
}

std::size_t fan_in_of(const PredictorParams& p, const std::string& name) {
  const std::size_t c = static_cast<std::size_t>(p.stem_channels);
  const std::size_t h = static_cast<std::size_t>(p.hidden_dim);
  if (name == "stem.w") return kFeatureDim;
  if (name.rfind("conv", 0) == 0 && name.size() > 5 && name.substr(name.size() - 2) == ".w") {
    if (p.mode == InputMode::Thumbnail && name == "conv0.w") return 9;
    return p.mode == InputMode::Thumbnail ? 9 * c : 3 * c;
  }
  if (name == "tok.w") return c;
  if (name == "fc.w") return h;
  if (name.size() > 2 && name.substr(name.size() - 2) == ".w") return h;
  return 0;  // biases
}

}  // namespace

int PredictorParams::effective_tokens() const {
  if (mode == InputMode::Features) return tokens;
  const int g = thumbnail_grid(thumbnail_side, conv_layers);
  return g * g;
}

bool PredictorParams::all_finite() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

PredictorParams predictor_init(std::uint64_t seed, const ScalerConfig& cfg, InputMode mode) {
  cfg.validate();
  PredictorParams p;
  p.mode = mode;
  p.conv_layers = cfg.conv_layers;
  p.encoder_blocks = cfg.encoder_blocks;
  p.hidden_dim = cfg.hidden_dim;
  p.tokens = cfg.tokens;
  p.stem_channels = cfg.stem_channels;
  p.thumbnail_side = cfg.thumbnail_side;
  p.input_dim = mode == InputMode::Features
                    ? kFeatureDim
                    : cfg.thumbnail_side * cfg.thumbnail_side;
  if (mode == InputMode::Thumbnail) {
    thumbnail_grid(cfg.thumbnail_side, cfg.conv_layers);  // validates divisibility
  }

  const LayoutBuilder lb = build_layout(p);
  p.segments = lb.segments;
  p.values.assign(lb.total, 0.0);

  Rng rng(seed);
  std::size_t offset = 0;
  for (const auto& [name, n] : p.segments) {
    const std::size_t fan_in = fan_in_of(p, name);
    if (fan_in > 0) {
      const double sigma = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < n; ++i) p.values[offset + i] = rng.normal(0.0, sigma);
    }
    offset += n;
  }
  return p;
}

namespace {

// Slices the flat parameter Vars by segment order; forward consumes them in
// exactly the order build_layout emitted.
class ParamReader {
 public:
  explicit ParamReader(const std::vector<Var>& vars) : vars_(vars) {}
  std::span<const Var> take(std::size_t n) {
    if (pos_ + n > vars_.size()) throw std::logic_error("parameter layout overrun");
    std::span<const Var> s(vars_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool exhausted() const { return pos_ == vars_.size(); }

 private:
  const std::vector<Var>& vars_;
  std::size_t pos_ = 0;
};

// y[o] = act(sum_i w[o*in+i] * x[i] + b[o])
std::vector<Var> linear(Tape& tape, std::span<const Var> w, std::span<const Var> b,
                        std::span<const Var> x, bool tanh_act) {
  const std::size_t out_dim = b.size();
  const std::size_t in_dim = x.size();
  std::vector<Var> y;
  y.reserve(out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) {
    Var v = tape.dot(w.subspan(o * in_dim, in_dim), x, b[o]);
    y.push_back(tanh_act ? tape.tanh(v) : v);
  }
  return y;
}

}  // namespace

PredictorForward predictor_forward(Tape& tape, const PredictorParams& p,
                                   std::span<const double> input, const ScalerConfig& cfg) {
  if (static_cast<int>(input.size()) != p.input_dim) {
    throw std::invalid_argument("predictor_forward: input dimension mismatch");
  }

  PredictorForward out;
  out.params.reserve(p.values.size());
  for (double v : p.values) out.params.push_back(tape.leaf(v));
  ParamReader read(out.params);

  const std::size_t c = static_cast<std::size_t>(p.stem_channels);
  const std::size_t h = static_cast<std::size_t>(p.hidden_dim);

  // Stem + conv stack produce a [tokens][channels] sequence.
  std::vector<std::vector<Var>> seq;  // seq[token][channel]
  if (p.mode == InputMode::Features) {
    const std::size_t t = static_cast<std::size_t>(p.tokens);
    std::vector<Var> x;
    x.reserve(input.size());
    for (double v : input) x.push_back(tape.leaf(v));
    auto stem_w = read.take(t * c * kFeatureDim);
    auto stem_b = read.take(t * c);
    std::vector<Var> flat = linear(tape, stem_w, stem_b, x, true);
    seq.resize(t);
    for (std::size_t i = 0; i < t; ++i) {
      seq[i].assign(flat.begin() + static_cast<long>(i * c),
                    flat.begin() + static_cast<long>((i + 1) * c));
    }
    // 1-D convs along the token axis, kernel 3, zero padding.
    for (int l = 0; l < p.conv_layers; ++l) {
      auto w = read.take(c * c * 3);
      auto b = read.take(c);
      std::vector<std::vector<Var>> next(t);
      std::vector<Var> taps_w, taps_x;
      for (std::size_t pos = 0; pos < t; ++pos) {
        next[pos].reserve(c);
        for (std::size_t co = 0; co < c; ++co) {
          taps_w.clear();
          taps_x.clear();
          for (std::size_t ci = 0; ci < c; ++ci) {
            for (int k = -1; k <= 1; ++k) {
              const long src = static_cast<long>(pos) + k;
              if (src < 0 || src >= static_cast<long>(t)) continue;
              taps_w.push_back(w[(co * c + ci) * 3 + static_cast<std::size_t>(k + 1)]);
              taps_x.push_back(seq[static_cast<std::size_t>(src)][ci]);
            }
          }
          next[pos].push_back(tape.tanh(tape.dot(taps_w, taps_x, b[co])));
        }
      }
      seq = std::move(next);
    }
  } else {
    // 2-D stride-2 convs shrink the canvas; surviving positions become tokens.
    int side = p.thumbnail_side;
    std::vector<std::vector<Var>> grid;  // grid[y*side+x][channel]
    grid.reserve(static_cast<std::size_t>(side) * side);
    for (double v : input) grid.push_back({tape.leaf(v)});
    std::vector<Var> taps_w, taps_x;
    for (int l = 0; l < p.conv_layers; ++l) {
      const std::size_t in_ch = (l == 0) ? 1 : c;
      auto w = read.take(c * in_ch * 9);
      auto b = read.take(c);
      const int out_side = side / 2;
      std::vector<std::vector<Var>> next(static_cast<std::size_t>(out_side) * out_side);
      for (int oy = 0; oy < out_side; ++oy) {
        for (int ox = 0; ox < out_side; ++ox) {
          auto& cell = next[static_cast<std::size_t>(oy) * out_side + ox];
          cell.reserve(c);
          for (std::size_t co = 0; co < c; ++co) {
            taps_w.clear();
            taps_x.clear();
            for (std::size_t ci = 0; ci < in_ch; ++ci) {
              for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                  const int sy = 2 * oy + ky, sx = 2 * ox + kx;
                  if (sy < 0 || sy >= side || sx < 0 || sx >= side) continue;
                  taps_w.push_back(
                      w[(co * in_ch + ci) * 9 +
                        static_cast<std::size_t>((ky + 1) * 3 + kx + 1)]);
                  taps_x.push_back(grid[static_cast<std::size_t>(sy) * side + sx][ci]);
                }
              }
            }
            cell.push_back(tape.tanh(tape.dot(taps_w, taps_x, b[co])));
          }
        }
      }
      grid = std::move(next);
      side = out_side;
    }
    seq = std::move(grid);
  }

  // Shared token embedding into the encoder width.
  auto tok_w = read.take(h * c);
  auto tok_b = read.take(h);
  std::vector<std::vector<Var>> tokens;
  tokens.reserve(seq.size());
  for (const auto& cell : seq) tokens.push_back(linear(tape, tok_w, tok_b, cell, false));
  const std::size_t t = tokens.size();

  // Transformer encoder blocks: single-head attention + feed-forward,
  // both with residual connections.
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
  for (int e = 0; e < p.encoder_blocks; ++e) {
    auto wq = read.take(h * h), bq = read.take(h);
    auto wk = read.take(h * h), bk = read.take(h);
    auto wv = read.take(h * h), bv = read.take(h);
    auto wo = read.take(h * h), bo = read.take(h);
    std::vector<std::vector<Var>> q(t), k(t), v(t);
    for (std::size_t i = 0; i < t; ++i) {
      q[i] = linear(tape, wq, bq, tokens[i], false);
      k[i] = linear(tape, wk, bk, tokens[i], false);
      v[i] = linear(tape, wv, bv, tokens[i], false);
    }
    std::vector<Var> dots(t, Var{});
    std::vector<Var> column(t, Var{});
    for (std::size_t i = 0; i < t; ++i) {
      double max_score = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < t; ++j) {
        dots[j] = tape.dot(q[i], k[j]) * inv_sqrt_h;
        max_score = std::max(max_score, dots[j].value());
      }
      // Softmax; the max shift is a detached constant, which leaves the
      // derivative unchanged.
      std::vector<Var> weights(t, Var{});
      for (std::size_t j = 0; j < t; ++j) weights[j] = tape.exp(dots[j] - max_score);
      Var z = tape.sum(weights);
      std::vector<Var> attended(h, Var{});
      for (std::size_t d = 0; d < h; ++d) {
        for (std::size_t j = 0; j < t; ++j) column[j] = v[j][d];
        attended[d] = tape.dot(weights, column) / z;
      }
      std::vector<Var> o = linear(tape, wo, bo, attended, false);
      for (std::size_t d = 0; d < h; ++d) tokens[i][d] = tokens[i][d] + o[d];
    }
    auto w1 = read.take(h * h), b1 = read.take(h);
    auto w2 = read.take(h * h), b2 = read.take(h);
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<Var> f1 = linear(tape, w1, b1, tokens[i], true);
      std::vector<Var> f2 = linear(tape, w2, b2, f1, false);
      for (std::size_t d = 0; d < h; ++d) tokens[i][d] = tokens[i][d] + f2[d];
    }
  }

  // Mean-pool over tokens, then the final scalar head.
  std::vector<Var> pooled(h, Var{});
  std::vector<Var> column(t, Var{});
  for (std::size_t d = 0; d < h; ++d) {
    for (std::size_t i = 0; i < t; ++i) column[i] = tokens[i][d];
    pooled[d] = tape.mean(column);
  }
  auto fc_w = read.take(h);
  auto fc_b = read.take(1);
  out.raw = tape.dot(fc_w, pooled, fc_b[0]);
  if (!read.exhausted()) throw std::logic_error("parameter layout underrun");

  out.phi = tape.max_const(tape.sigmoid(out.raw), cfg.tau / 10.0) * cfg.tau;
  return out;
}

double predictor_eval(const PredictorParams& params, std::span<const double> input,
                      const ScalerConfig& cfg) {
  Tape tape;
  return predictor_forward(tape, params, input, cfg).phi.value();
}

std::array<double, kFeatureDim> image_features(std::span<const BoxRecord> boxes) {
  if (boxes.empty()) throw std::invalid_argument("image_features: no boxes");
  std::vector<double> log_areas, log_aspects;
  log_areas.reserve(boxes.size());
  log_aspects.reserve(boxes.size());
  for (const BoxRecord& b : boxes) {
    log_areas.push_back(std::log(b.area));
    log_aspects.push_back(std::log(b.width / b.height));
  }
  const double n = static_cast<double>(boxes.size());
  double mean_la = 0.0, mean_abs_asp = 0.0, mean_asp = 0.0;
  double min_la = log_areas[0], max_la = log_areas[0];
  for (std::size_t i = 0; i < log_areas.size(); ++i) {
    mean_la += log_areas[i];
    mean_abs_asp += std::abs(log_aspects[i]);
    mean_asp += log_aspects[i];
    min_la = std::min(min_la, log_areas[i]);
    max_la = std::max(max_la, log_areas[i]);
  }
  mean_la /= n;
  mean_abs_asp /= n;
  mean_asp /= n;
  double var_la = 0.0, var_asp = 0.0;
  for (std::size_t i = 0; i < log_areas.size(); ++i) {
    var_la += (log_areas[i] - mean_la) * (log_areas[i] - mean_la);
    var_asp += (log_aspects[i] - mean_asp) * (log_aspects[i] - mean_asp);
  }
  var_la /= n;
  var_asp /= n;

  std::vector<double> sorted = log_areas;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  const double median_la =
      (m % 2 == 1) ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);

  return {n / 12.0,
          (mean_la - kLogAreaCenter) / kLogAreaScale,
          std::sqrt(var_la),
          (min_la - kLogAreaCenter) / kLogAreaScale,
          (max_la - kLogAreaCenter) / kLogAreaScale,
          mean_abs_asp,
          std::sqrt(var_asp),
          (median_la - kLogAreaCenter) / kLogAreaScale};
}

std::vector<double> rasterize_thumbnail(std::span<const PlacedBox> boxes, double canvas_w,
                                        double canvas_h, int side) {
  if (!(canvas_w > 0.0) || !(canvas_h > 0.0) || side < 1) {
    throw std::invalid_argument("rasterize_thumbnail: bad canvas");
  }
  std::vector<double> grid(static_cast<std::size_t>(side) * side, 0.0);
  for (const PlacedBox& b : boxes) {
    const double x0 = b.x / canvas_w * side;
    const double y0 = b.y / canvas_h * side;
    const double x1 = (b.x + b.width) / canvas_w * side;
    const double y1 = (b.y + b.height) / canvas_h * side;
    for (int py = 0; py < side; ++py) {
      const double cy = py + 0.5;
      if (cy < y0 || cy > y1) continue;
      for (int px = 0; px < side; ++px) {
        const double cx = px + 0.5;
        if (cx < x0 || cx > x1) continue;
        grid[static_cast<std::size_t>(py) * side + px] = 1.0;
      }
    }
  }
  return grid;
}

void save_checkpoint(const PredictorParams& p, const std::string& path) {
  nlohmann::json j;
  j["format"] = "dyra-predictor";
  j["version"] = 1;
  j["mode"] = p.mode == InputMode::Features ? "features" : "thumbnail";
  j["conv_layers"] = p.conv_layers;
  j["encoder_blocks"] = p.encoder_blocks;
  j["hidden_dim"] = p.hidden_dim;
  j["tokens"] = p.tokens;
  j["stem_channels"] = p.stem_channels;
  j["thumbnail_side"] = p.thumbnail_side;
  j["input_dim"] = p.input_dim;
  nlohmann::json arrays = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, n] : p.segments) {
    arrays[name] = std::vector<double>(p.values.begin() + static_cast<long>(offset),
                                       p.values.begin() + static_cast<long>(offset + n));
    offset += n;
  }
  j["params"] = std::move(arrays);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
}

PredictorParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "dyra-predictor" || j.value("version", 0) != 1) {
    throw std::runtime_error("load_checkpoint: unrecognized checkpoint format");
  }
  PredictorParams p;
  p.mode = j.at("mode").get<std::string>() == "features" ? InputMode::Features
                                                         : InputMode::Thumbnail;
  p.conv_layers = j.at("conv_layers").get<int>();
  p.encoder_blocks = j.at("encoder_blocks").get<int>();
  p.hidden_dim = j.at("hidden_dim").get<int>();
  p.tokens = j.at("tokens").get<int>();
  p.stem_channels = j.at("stem_channels").get<int>();
  p.thumbnail_side = j.at("thumbnail_side").get<int>();
  p.input_dim = j.at("input_dim").get<int>();
  const LayoutBuilder lb = build_layout(p);
  p.segments = lb.segments;
  p.values.reserve(lb.total);
  const auto& arrays = j.at("params");
  for (const auto& [name, n] : p.segments) {
    const auto it = arrays.find(name);
    if (it == arrays.end() || it->size() != n) {
      throw std::runtime_error("load_checkpoint: missing or misshapen array " + name);
    }
    for (const auto& v : *it) p.values.push_back(v.get<double>());
  }
  return p;
}

}  // namespace dyra
