#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patternid/image.hpp"
#include "patternid/random.hpp"

namespace patternid {

/// One elliptical spot; center in the canonical unit square, radii as a
/// fraction of the canvas.
struct Spot {
  double center_x = 0.5;
  double center_y = 0.5;
  double radius_major = 0.05;
  double radius_minor = 0.05;
  double rotation = 0.0;
  double intensity = 1.0;

  friend bool operator==(const Spot&, const Spot&) = default;
};

/// Body ellipse centered in the canonical square.
struct Silhouette {
  double half_axis_x = 0.42;
  double half_axis_y = 0.34;

  bool contains(double x, double y) const {
    const double dx = (x - 0.5) / half_axis_x;
    const double dy = (y - 0.5) / half_axis_y;
    return dx * dx + dy * dy <= 1.0;
  }

  friend bool operator==(const Silhouette&, const Silhouette&) = default;
};

struct SpotPattern {
  std::string individual_id;
  std::vector<Spot> spots;
  Silhouette silhouette;

  friend bool operator==(const SpotPattern&, const SpotPattern&) = default;
};

inline constexpr int kMinSpots = 4;
inline constexpr int kMaxSpots = 25;
inline constexpr double kMinSpotRadius = 0.02;
inline constexpr double kMaxSpotRadius = 0.12;
inline constexpr double kDuplicateThreshold = 0.05;
inline constexpr int kMaxGenerationAttempts = 1000;
/// Sampled occluders are never darker than this, so they cannot pass for spots.
inline constexpr double kOccluderMinLevel = 150.0;

struct PatternSpec {
  int min_spots = 6;
  int max_spots = 20;
  double radius_min = 0.03;
  double radius_max = 0.08;
  double silhouette_x_min = 0.38;
  double silhouette_x_max = 0.46;
  double silhouette_y_min = 0.30;
  double silhouette_y_max = 0.40;

  void validate() const;
};

/// Largest distance from a spot center of `a` to its nearest spot center in
/// `b`, symmetrized. Patterns with different spot counts are infinitely far.
double pattern_distance(const SpotPattern& a, const SpotPattern& b);

/// Deterministic in (seed, spec, existing). Rejection-samples until the
/// pattern is farther than kDuplicateThreshold from every pattern in `existing`.
SpotPattern generate_individual(std::uint64_t seed, const PatternSpec& spec, std::string individual_id = {},
                                const std::vector<SpotPattern>& existing = {});

using Homography = Eigen::Matrix3d;

struct Occluder {
  double center_x = 0.0;  // output pixel coordinates
  double center_y = 0.0;
  double radius = 0.0;
  double intensity = 0.0;  // gray level in [0,255]

  friend bool operator==(const Occluder&, const Occluder&) = default;
};

struct RenderParams {
  Index height = 64;
  Index width = 64;
  /// Maps canonical pixel coordinates to output pixel coordinates.
  Homography warp = Homography::Identity();
  double brightness_scale = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  std::vector<Occluder> occluders;
  bool flip_h = false;
  bool flip_v = false;

  // Components the warp was composed from (informational).
  double rotation = 0.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
  double zoom = 1.0;

  void validate(const Silhouette& silhouette) const;
};

enum class AugmentLevel { kExtensive, kSmall };

std::string to_string(AugmentLevel level);
AugmentLevel parse_augment_level(const std::string& text);

/// Homography rotating by `angle` and scaling by `zoom` about the canvas
/// center, then shifting; `projective` sets the two perspective coefficients
/// (per pixel, centered coordinates).
Homography compose_warp(Index height, Index width, double angle, double zoom, double shift_x, double shift_y,
                        double projective_x = 0.0, double projective_y = 0.0);

/// extensive: rotation within +-90 deg, flips, shifts <= 10 px, zoom in [1, 1.1],
/// perspective <= 0.0015/px, full photometric range. small: rotation within
/// +-10 deg only, no other geometric change.
RenderParams sample_view_params(Rng& rng, AugmentLevel level, Index height = 64, Index width = 64);

/// Rasterize spots dark-on-light inside the warped silhouette, then apply
/// brightness, occluders, flips and noise.
ImageSample render_view(const SpotPattern& pattern, const RenderParams& params, std::string image_id = {});

/// Apply the geometric part (warp, flips) and brightness of `params` to an
/// existing image, sampling bilinearly with edge clamping.
GrayImage augment_image(const GrayImage& image, const RenderParams& params);

struct DatasetConfig {
  std::filesystem::path root;
  int individuals = 50;
  int views = 10;
  Index height = 64;
  Index width = 64;
  std::uint64_t seed = 0;
  int folds = 5;
  AugmentLevel view_level = AugmentLevel::kExtensive;
  /// Mirrored views are not camera-realizable; flips stay a training augmentation.
  bool view_flips = false;
  PatternSpec pattern;

  void validate() const;
};

struct ManifestIndividual {
  std::string individual_id;
  std::vector<std::string> image_ids;
  int fold = 0;
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  std::filesystem::path root;
  std::uint64_t seed = 0;
  Index height = 64;
  Index width = 64;
  int folds = 5;
  std::vector<ManifestIndividual> individuals;

  std::filesystem::path image_path(const std::string& individual_id, const std::string& image_id) const;
  const ManifestIndividual& individual(const std::string& individual_id) const;
  std::vector<std::string> individual_ids() const;
  std::size_t image_count() const;
  void validate() const;
};

std::string individual_name(int index);
std::string image_name(const std::string& individual_id, int view);

/// Every individual's pattern for `config`, in corpus order.
std::vector<SpotPattern> generate_patterns(const DatasetConfig& config);

DatasetManifest build_dataset(const DatasetConfig& config);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text, const std::filesystem::path& root);
void save_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& root_or_file);

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

Split split_by_individual(const DatasetManifest& manifest, int fold);

/// Manifest restricted to the given individuals (same root).
DatasetManifest subset(const DatasetManifest& manifest, const std::vector<std::string>& ids);

}  // namespace patternid
