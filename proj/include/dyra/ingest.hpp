#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyra/core.hpp"

namespace dyra {

struct ImageInfo {
  std::int64_t id = 0;
  double width = 0.0;
  double height = 0.0;
};

struct Annotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::array<double, 4> bbox{};  // x, y, w, h after clamping to the image
  std::int64_t category_id = 0;
};

/// Parsed COCO-style annotation file. Malformed records are dropped and
/// counted; surviving annotations are ordered by (image_id, id).
struct AnnotationSet {
  std::map<std::int64_t, ImageInfo> images;
  std::vector<Annotation> annotations;
  std::size_t warnings = 0;
  std::vector<std::string> warning_messages;
};

/// Structural failure: unreadable file, JSON syntax error, missing top-level
/// key or annotation-count overflow. Carries the byte offset when known.
class AnnotationParseError : public std::runtime_error {
 public:
  AnnotationParseError(const std::string& what, std::size_t byte_offset,
                       std::string key = {})
      : std::runtime_error(what + (key.empty() ? "" : " (key: " + key + ")") +
                           " at byte " + std::to_string(byte_offset)),
        byte_offset_(byte_offset),
        key_(std::move(key)) {}
  std::size_t byte_offset() const { return byte_offset_; }
  const std::string& key() const { return key_; }

 private:
  std::size_t byte_offset_;
  std::string key_;
};

struct ParseLimits {
  std::size_t max_annotations = 50'000'000;
};

AnnotationSet parse_annotations(const std::string& path, const ParseLimits& limits = {});

/// COCO-shaped JSON with the images and annotations arrays; parsing the
/// output reproduces the set.
void save_annotations(const AnnotationSet& set, const std::string& path);

struct HistogramBin {
  double lower = 0.0;  // area bin [lower, upper)
  double upper = 0.0;
  std::size_t count = 0;
};

struct DatasetStats {
  std::size_t n_images = 0;  // images that own at least one box
  std::size_t n_boxes = 0;
  double group_boundary = 0.0;  // gamma * s_ap_mean
  double frac_up = 0.0;         // area < boundary
  double frac_down = 0.0;       // area >= boundary
  double frac_below_ap_small = 0.0;
  double frac_above_ap_large = 0.0;
  std::vector<std::pair<std::int64_t, double>> per_image_mean_area;
  std::vector<HistogramBin> histogram;  // power-of-two area bins
};

DatasetStats dataset_stats(const AnnotationSet& set, const BalanceState& state);

std::string stats_to_json(const DatasetStats& stats);
std::string histogram_to_csv(const DatasetStats& stats);

}  // namespace dyra
