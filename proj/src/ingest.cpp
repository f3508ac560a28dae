#include "dyra/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace dyra {

namespace {

using nlohmann::json;

void warn(AnnotationSet& set, std::string message) {
  ++set.warnings;
  if (set.warning_messages.size() < 64) set.warning_messages.push_back(std::move(message));
}

// An annotation as it appears in the file, before the image table is known.
struct RawAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  bool has_image_id = false;
  bool bbox_seen = false;
  bool bbox_bad = false;
  std::vector<double> bbox;
};

// Single-pass SAX consumer for the COCO shape: picks the numeric fields out
// of the "images" and "annotations" arrays and skips everything else
// (segmentation polygons, categories, info blocks) without materializing it.
class CocoStreamHandler : public nlohmann::json_sax<json> {
 public:
  CocoStreamHandler(AnnotationSet& set, const ParseLimits& limits)
      : set_(set), limits_(limits) {}

  bool root_type_error = false;
  bool overflow = false;
  bool saw_images = false;
  bool saw_annotations = false;
  bool images_is_array = false;
  bool annotations_is_array = false;
  bool had_parse_error = false;
  std::size_t error_byte = 0;
  std::string error_message;
  std::vector<RawAnnotation> raw_annotations;

  bool null() override { return value(); }
  bool boolean(bool) override { return value(); }
  bool number_integer(number_integer_t v) override { return number(static_cast<double>(v), true); }
  bool number_unsigned(number_unsigned_t v) override { return number(static_cast<double>(v), true); }
  bool number_float(number_float_t v, const string_t&) override { return number(v, false); }
  bool string(string_t&) override { return value(); }
  bool binary(binary_t&) override { return value(); }

  bool start_object(std::size_t) override { return start_container(true); }
  bool start_array(std::size_t) override { return start_container(false); }

  bool key(string_t& k) override {
    if (skipping()) return true;
    if (depth_ == 1) {
      pending_section_ = Section::Other;
      if (k == "images") pending_section_ = Section::Images;
      if (k == "annotations") pending_section_ = Section::Annotations;
      if (pending_section_ == Section::Images) saw_images = true;
      if (pending_section_ == Section::Annotations) saw_annotations = true;
    } else if (in_record_ && depth_ == 3) {
      field_ = k;
    }
    return true;
  }

  bool end_object() override {
    if (close_container()) return true;
    if (in_record_ && depth_ == 2) finalize_record();
    if (depth_ == 0) section_ = Section::None;
    return true;
  }

  bool end_array() override {
    if (close_container()) return true;
    if (in_bbox_ && depth_ == 3) in_bbox_ = false;
    if (depth_ == 1) section_ = Section::None;
    return true;
  }

  bool parse_error(std::size_t position, const std::string&,
                   const nlohmann::detail::exception& ex) override {
    had_parse_error = true;
    error_byte = position;
    error_message = ex.what();
    return false;
  }

 private:
  enum class Section { None, Images, Annotations, Other };

  bool skipping() const { return skip_to_depth_ >= 0; }

  bool start_container(bool is_object) {
    ++depth_;
    if (skipping()) return true;
    if (depth_ == 1) {
      if (!is_object) {
        root_type_error = true;
        return false;
      }
      return true;
    }
    if (depth_ == 2) {
      if (pending_section_ == Section::Images || pending_section_ == Section::Annotations) {
        if (is_object) {  // the section value must be an array
          skip_to_depth_ = 1;
          return true;
        }
        section_ = pending_section_;
        if (section_ == Section::Images) images_is_array = true;
        if (section_ == Section::Annotations) annotations_is_array = true;
        pending_section_ = Section::None;
        return true;
      }
      skip_to_depth_ = 1;  // value of an unrelated root key
      return true;
    }
    if (depth_ == 3 && in_section()) {
      if (!is_object) {
        warn_malformed_element();
        skip_to_depth_ = 2;
        return true;
      }
      if (section_ == Section::Annotations) {
        if (raw_annotations.size() >= limits_.max_annotations) {
          overflow = true;
          return false;
        }
        annotation_ = RawAnnotation{};
      } else {
        image_ = ImageRecord{};
      }
      in_record_ = true;
      field_.clear();
      return true;
    }
    if (in_record_ && depth_ == 4 && !is_object && field_ == "bbox" &&
        section_ == Section::Annotations) {
      in_bbox_ = true;
      annotation_.bbox_seen = true;
      return true;
    }
    // any other nested value is uninteresting
    skip_to_depth_ = depth_ - 1;
    return true;
  }

  // returns true when the event belonged to a skipped container
  bool close_container() {
    --depth_;
    if (skipping()) {
      if (depth_ == skip_to_depth_) skip_to_depth_ = -1;
      return true;
    }
    return false;
  }

  bool value() {
    if (skipping() || !in_record_) return true;
    if (in_bbox_) {
      annotation_.bbox_bad = true;  // non-numeric bbox entry
      return true;
    }
    if (depth_ == 3) record_bad_field();
    return true;
  }

  bool number(double v, bool is_integer) {
    if (skipping() || !in_record_) return true;
    if (in_bbox_) {
      annotation_.bbox.push_back(v);
      return true;
    }
    if (depth_ != 3) return true;
    if (section_ == Section::Images) {
      if (field_ == "id") {
        if (is_integer) {
          image_.id = static_cast<std::int64_t>(v);
          image_.has_id = true;
        } else {
          image_.bad = true;
        }
      } else if (field_ == "width") {
        image_.width = v;
        image_.has_width = true;
      } else if (field_ == "height") {
        image_.height = v;
        image_.has_height = true;
      }
    } else if (section_ == Section::Annotations) {
      if (field_ == "image_id" && is_integer) {
        annotation_.image_id = static_cast<std::int64_t>(v);
        annotation_.has_image_id = true;
      } else if (field_ == "id" && is_integer) {
        annotation_.id = static_cast<std::int64_t>(v);
      } else if (field_ == "category_id" && is_integer) {
        annotation_.category_id = static_cast<std::int64_t>(v);
      }
    }
    return true;
  }

  void record_bad_field() {
    if (section_ == Section::Images &&
        (field_ == "id" || field_ == "width" || field_ == "height")) {
      image_.bad = true;
    }
  }

  bool in_section() const {
    return section_ == Section::Images || section_ == Section::Annotations;
  }

  void warn_malformed_element() {
    warn(set_, section_ == Section::Images ? "skipped malformed image record"
                                           : "skipped annotation without image_id");
  }

  void finalize_record() {
    in_record_ = false;
    if (section_ == Section::Images) {
      if (image_.bad || !image_.has_id || !image_.has_width || !image_.has_height ||
          !std::isfinite(image_.width) || !std::isfinite(image_.height)) {
        warn(set_, "skipped malformed image record");
        return;
      }
      if (!(image_.width > 0.0) || !(image_.height > 0.0)) {
        warn(set_, "skipped image with non-positive dimensions");
        return;
      }
      set_.images[image_.id] = ImageInfo{image_.id, image_.width, image_.height};
      return;
    }
    if (!annotation_.has_image_id) {
      warn(set_, "skipped annotation without image_id");
      return;
    }
    raw_annotations.push_back(std::move(annotation_));
  }

  struct ImageRecord {
    std::int64_t id = 0;
    double width = 0.0;
    double height = 0.0;
    bool has_id = false;
    bool has_width = false;
    bool has_height = false;
    bool bad = false;
  };

  AnnotationSet& set_;
  const ParseLimits& limits_;
  int depth_ = 0;
  int skip_to_depth_ = -1;
  Section pending_section_ = Section::None;
  Section section_ = Section::None;
  bool in_record_ = false;
  bool in_bbox_ = false;
  std::string field_;
  ImageRecord image_;
  RawAnnotation annotation_;
};

}  // namespace

AnnotationSet parse_annotations(const std::string& path, const ParseLimits& limits) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AnnotationParseError("cannot open " + path, 0);

  AnnotationSet set;
  CocoStreamHandler handler(set, limits);
  const bool ok = json::sax_parse(in, &handler);
  if (handler.root_type_error) {
    throw AnnotationParseError("top-level value is not an object", 0);
  }
  if (handler.overflow) {
    throw AnnotationParseError("annotation count overflow", 0, "annotations");
  }
  if (handler.had_parse_error || !ok) {
    throw AnnotationParseError("JSON parse error: " + handler.error_message,
                               handler.error_byte);
  }
  if (!handler.saw_images || !handler.images_is_array) {
    throw AnnotationParseError("missing top-level array", 0, "images");
  }
  if (!handler.saw_annotations || !handler.annotations_is_array) {
    throw AnnotationParseError("missing top-level array", 0, "annotations");
  }

  // resolve the streamed annotations against the image table
  for (RawAnnotation& raw : handler.raw_annotations) {
    const auto im_it = set.images.find(raw.image_id);
    if (im_it == set.images.end()) {
      warn(set, "skipped annotation referencing unknown image " +
                    std::to_string(raw.image_id));
      continue;
    }
    if (!raw.bbox_seen || raw.bbox_bad || raw.bbox.size() != 4 ||
        !std::isfinite(raw.bbox[0]) || !std::isfinite(raw.bbox[1]) ||
        !std::isfinite(raw.bbox[2]) || !std::isfinite(raw.bbox[3])) {
      warn(set, "skipped annotation with malformed bbox");
      continue;
    }
    double x = raw.bbox[0];
    double y = raw.bbox[1];
    const double w = raw.bbox[2];
    const double h = raw.bbox[3];
    if (!(w > 0.0) || !(h > 0.0)) {
      warn(set, "skipped annotation with non-positive box size");
      continue;
    }
    // clamp to the image; a box that dies under the clamp is a broken record
    const double x1 = std::min(x + w, im_it->second.width);
    const double y1 = std::min(y + h, im_it->second.height);
    x = std::max(x, 0.0);
    y = std::max(y, 0.0);
    if (!(x1 > x) || !(y1 > y)) {
      warn(set, "skipped annotation with zero area after clamping");
      continue;
    }
    Annotation a;
    a.id = raw.id;
    a.image_id = raw.image_id;
    a.bbox = {x, y, x1 - x, y1 - y};
    a.category_id = raw.category_id;
    set.annotations.push_back(a);
  }

  std::sort(set.annotations.begin(), set.annotations.end(),
            [](const Annotation& lhs, const Annotation& rhs) {
              if (lhs.image_id != rhs.image_id) return lhs.image_id < rhs.image_id;
              return lhs.id < rhs.id;
            });
  return set;
}

void save_annotations(const AnnotationSet& set, const std::string& path) {
  json doc;
  doc["images"] = json::array();
  for (const auto& [id, info] : set.images) {
    doc["images"].push_back({{"id", id}, {"width", info.width}, {"height", info.height}});
  }
  doc["annotations"] = json::array();
  for (const Annotation& a : set.annotations) {
    doc["annotations"].push_back({{"id", a.id},
                                  {"image_id", a.image_id},
                                  {"bbox", a.bbox},
                                  {"category_id", a.category_id}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_annotations: cannot open " + path);
  out << doc.dump(1) << "\n";
}

DatasetStats dataset_stats(const AnnotationSet& set, const BalanceState& state) {
  if (set.annotations.empty()) {
    throw std::invalid_argument("dataset_stats: annotation set has no boxes");
  }
  DatasetStats stats;
  stats.group_boundary = state.group_boundary();
  stats.n_boxes = set.annotations.size();

  // power-of-two bins covering [1, 2^30)
  constexpr int kBins = 30;
  stats.histogram.resize(kBins);
  for (int b = 0; b < kBins; ++b) {
    stats.histogram[static_cast<std::size_t>(b)].lower = std::ldexp(1.0, b);
    stats.histogram[static_cast<std::size_t>(b)].upper = std::ldexp(1.0, b + 1);
  }

  std::map<std::int64_t, std::pair<double, std::size_t>> per_image;  // sum, count
  std::size_t n_up = 0, n_small = 0, n_large = 0;
  for (const Annotation& a : set.annotations) {
    const double area = a.bbox[2] * a.bbox[3];
    auto& acc = per_image[a.image_id];
    acc.first += area;
    acc.second += 1;
    if (area < stats.group_boundary) ++n_up;
    if (area < state.s_ap_small) ++n_small;
    if (area > state.s_ap_large) ++n_large;
    int bin = static_cast<int>(std::floor(std::log2(std::max(area, 1.0))));
    bin = std::clamp(bin, 0, kBins - 1);
    ++stats.histogram[static_cast<std::size_t>(bin)].count;
  }
  stats.n_images = per_image.size();
  const double n = static_cast<double>(stats.n_boxes);
  stats.frac_up = static_cast<double>(n_up) / n;
  stats.frac_down = static_cast<double>(stats.n_boxes - n_up) / n;
  stats.frac_below_ap_small = static_cast<double>(n_small) / n;
  stats.frac_above_ap_large = static_cast<double>(n_large) / n;
  stats.per_image_mean_area.reserve(per_image.size());
  for (const auto& [id, acc] : per_image) {
    stats.per_image_mean_area.emplace_back(id, acc.first / static_cast<double>(acc.second));
  }
  return stats;
}

std::string stats_to_json(const DatasetStats& stats) {
  json j;
  j["n_images"] = stats.n_images;
  j["n_boxes"] = stats.n_boxes;
  j["group_boundary"] = stats.group_boundary;
  j["frac_up"] = stats.frac_up;
  j["frac_down"] = stats.frac_down;
  j["frac_below_ap_small"] = stats.frac_below_ap_small;
  j["frac_above_ap_large"] = stats.frac_above_ap_large;
  json per_image = json::array();
  for (const auto& [id, mean_area] : stats.per_image_mean_area) {
    per_image.push_back({{"image_id", id}, {"mean_area", mean_area}});
  }
  j["per_image_mean_area"] = std::move(per_image);
  return j.dump(2);
}

std::string histogram_to_csv(const DatasetStats& stats) {
  std::string out = "area_lower,area_upper,count\n";
  char line[96];
  for (const HistogramBin& bin : stats.histogram) {
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%zu\n", bin.lower, bin.upper, bin.count);
    out += line;
  }
  return out;
}

}  // namespace dyra
