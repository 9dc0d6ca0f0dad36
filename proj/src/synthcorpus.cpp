#include "patternid/synthcorpus.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "json.hpp"
#include "patternid/error.hpp"

namespace patternid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kBackgroundLevel = 70.0;
constexpr double kBodyLevel = 200.0;
constexpr double kSpotContrast = 0.85;
constexpr double kDegToRad = std::numbers::pi / 180.0;

bool spot_contains(const Spot& s, double x, double y) {
  const double dx = x - s.center_x;
  const double dy = y - s.center_y;
  const double c = std::cos(s.rotation);
  const double sn = std::sin(s.rotation);
  const double a = (dx * c + dy * sn) / s.radius_major;
  const double b = (-dx * sn + dy * c) / s.radius_minor;
  return a * a + b * b <= 1.0;
}

double one_sided_distance(const SpotPattern& a, const SpotPattern& b) {
  double worst = 0.0;
  for (const auto& s : a.spots) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : b.spots) best = std::min(best, std::hypot(s.center_x - t.center_x, s.center_y - t.center_y));
    worst = std::max(worst, best);
  }
  return worst;
}

Eigen::Vector2d apply(const Homography& h, double x, double y) {
  const Eigen::Vector3d p = h * Eigen::Vector3d(x, y, 1.0);
  return p.head<2>() / p.z();
}

std::uint8_t to_gray(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

void apply_flips(GrayImage& image, bool flip_h, bool flip_v) {
  if (flip_h) image = image.rowwise().reverse().eval();
  if (flip_v) image = image.colwise().reverse().eval();
}

}  // namespace

void PatternSpec::validate() const {
  if (min_spots < kMinSpots || max_spots > kMaxSpots || min_spots > max_spots) {
    throw ConfigError("pattern spot range must lie within [" + std::to_string(kMinSpots) + "," +
                      std::to_string(kMaxSpots) + "] with min <= max");
  }
  if (radius_min < kMinSpotRadius || radius_max > kMaxSpotRadius || radius_min > radius_max) {
    throw ConfigError("pattern radius range must lie within [0.02,0.12] with min <= max");
  }
  if (silhouette_x_min <= 0 || silhouette_x_max > 0.5 || silhouette_x_min > silhouette_x_max ||
      silhouette_y_min <= 0 || silhouette_y_max > 0.5 || silhouette_y_min > silhouette_y_max) {
    throw ConfigError("pattern silhouette half-axes must lie within (0,0.5] with min <= max");
  }
}

double pattern_distance(const SpotPattern& a, const SpotPattern& b) {
  if (a.spots.size() != b.spots.size()) return std::numeric_limits<double>::infinity();
  return std::max(one_sided_distance(a, b), one_sided_distance(b, a));
}

SpotPattern generate_individual(std::uint64_t seed, const PatternSpec& spec, std::string individual_id,
                                const std::vector<SpotPattern>& existing) {
  spec.validate();
  std::string collision;
  for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    SpotPattern pattern;
    pattern.individual_id = individual_id;
    pattern.silhouette.half_axis_x = uniform(rng, spec.silhouette_x_min, spec.silhouette_x_max);
    pattern.silhouette.half_axis_y = uniform(rng, spec.silhouette_y_min, spec.silhouette_y_max);
    const int count = uniform_int(rng, spec.min_spots, spec.max_spots);
    while (static_cast<int>(pattern.spots.size()) < count) {
      Spot s;
      s.center_x = uniform(rng, 0.5 - pattern.silhouette.half_axis_x, 0.5 + pattern.silhouette.half_axis_x);
      s.center_y = uniform(rng, 0.5 - pattern.silhouette.half_axis_y, 0.5 + pattern.silhouette.half_axis_y);
      if (!pattern.silhouette.contains(s.center_x, s.center_y)) continue;
      const double r1 = uniform(rng, spec.radius_min, spec.radius_max);
      const double r2 = uniform(rng, spec.radius_min, spec.radius_max);
      s.radius_major = std::max(r1, r2);
      s.radius_minor = std::min(r1, r2);
      s.rotation = uniform(rng, 0.0, std::numbers::pi);
      s.intensity = uniform(rng, 0.6, 1.0);
      pattern.spots.push_back(s);
    }
    auto clash = std::find_if(existing.begin(), existing.end(), [&](const SpotPattern& other) {
      return pattern_distance(pattern, other) <= kDuplicateThreshold;
    });
    if (clash == existing.end()) return pattern;
    collision = clash->individual_id;
  }
  throw GenerationError("could not generate '" + individual_id + "' after " +
                        std::to_string(kMaxGenerationAttempts) + " attempts: near-duplicate of '" + collision + "'");
}

std::string to_string(AugmentLevel level) { return level == AugmentLevel::kSmall ? "small" : "extensive"; }

AugmentLevel parse_augment_level(const std::string& text) {
  if (text == "extensive") return AugmentLevel::kExtensive;
  if (text == "small") return AugmentLevel::kSmall;
  throw ConfigError("augmentation level must be 'extensive' or 'small', got '" + text + "'");
}

Homography compose_warp(Index height, Index width, double angle, double zoom, double shift_x, double shift_y,
                        double projective_x, double projective_y) {
  const double cx = static_cast<double>(width) / 2.0;
  const double cy = static_cast<double>(height) / 2.0;
  Homography to_center = Homography::Identity();
  to_center(0, 2) = -cx;
  to_center(1, 2) = -cy;
  Homography scale_rotate = Homography::Identity();
  scale_rotate.topLeftCorner<2, 2>() << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  scale_rotate.topLeftCorner<2, 2>() *= zoom;
  Homography perspective = Homography::Identity();
  perspective(2, 0) = projective_x;
  perspective(2, 1) = projective_y;
  Homography back = Homography::Identity();
  back(0, 2) = cx + shift_x;
  back(1, 2) = cy + shift_y;
  return back * perspective * scale_rotate * to_center;
}

void RenderParams::validate(const Silhouette& silhouette) const {
  if (height <= 0 || width <= 0) throw RenderError("render size must be positive");
  if (std::abs(warp.determinant()) <= 1e-6) throw RenderError("warp is not invertible (|det| <= 1e-6)");
  if (brightness_scale < 0.5 || brightness_scale > 1.5) throw RenderError("brightness_scale outside [0.5,1.5]");
  if (noise_sigma < 0) throw RenderError("noise_sigma must be non-negative");
  double covered = 0.0;
  for (const auto& o : occluders) covered += std::numbers::pi * o.radius * o.radius;
  const double body = std::numbers::pi * silhouette.half_axis_x * silhouette.half_axis_y *
                      static_cast<double>(height * width);
  if (covered >= 0.2 * body) throw RenderError("occluders cover 20% or more of the silhouette area");
}

RenderParams sample_view_params(Rng& rng, AugmentLevel level, Index height, Index width) {
  RenderParams p;
  p.height = height;
  p.width = width;
  double projective_x = 0.0;
  double projective_y = 0.0;
  if (level == AugmentLevel::kExtensive) {
    p.rotation = uniform(rng, -90.0, 90.0) * kDegToRad;
    p.zoom = uniform(rng, 1.0, 1.1);
    p.shift_x = uniform(rng, -10.0, 10.0);
    p.shift_y = uniform(rng, -10.0, 10.0);
    projective_x = uniform(rng, -0.0015, 0.0015);
    projective_y = uniform(rng, -0.0015, 0.0015);
    p.flip_h = coin(rng);
    p.flip_v = coin(rng);
  } else {
    p.rotation = uniform(rng, -10.0, 10.0) * kDegToRad;
  }
  p.warp = compose_warp(height, width, p.rotation, p.zoom, p.shift_x, p.shift_y, projective_x, projective_y);
  p.brightness_scale = uniform(rng, 0.5, 1.5);
  p.noise_sigma = uniform(rng, 0.0, 10.0);
  p.noise_seed = rng();
  const double scale = static_cast<double>(std::min(height, width)) / 64.0;
  const int occluder_count = uniform_int(rng, 0, 3);
  for (int i = 0; i < occluder_count; ++i) {
    Occluder o;
    o.center_x = uniform(rng, 0.25, 0.75) * static_cast<double>(width);
    o.center_y = uniform(rng, 0.25, 0.75) * static_cast<double>(height);
    o.radius = uniform(rng, 1.5, 4.0) * scale;
    // Light debris, bubbles and glare: hides spots without forging new ones.
    o.intensity = uniform(rng, kOccluderMinLevel, 255.0);
    p.occluders.push_back(o);
  }
  return p;
}

ImageSample render_view(const SpotPattern& pattern, const RenderParams& params, std::string image_id) {
  params.validate(pattern.silhouette);
  const Homography inverse = params.warp.inverse();
  const double w = static_cast<double>(params.width);
  const double h = static_cast<double>(params.height);
  Eigen::MatrixXd canvas(params.height, params.width);
  Index body_samples = 0;
  constexpr double kOffsets[2] = {0.25, 0.75};
  for (Index y = 0; y < params.height; ++y) {
    for (Index x = 0; x < params.width; ++x) {
      double sum = 0.0;
      for (double oy : kOffsets) {
        for (double ox : kOffsets) {
          const Eigen::Vector2d p = apply(inverse, static_cast<double>(x) + ox, static_cast<double>(y) + oy);
          const double u = p.x() / w;
          const double v = p.y() / h;
          if (!std::isfinite(u) || !std::isfinite(v) || !pattern.silhouette.contains(u, v)) {
            sum += kBackgroundLevel;
            continue;
          }
          ++body_samples;
          double level = kBodyLevel;
          for (const auto& s : pattern.spots) {
            if (spot_contains(s, u, v)) level = std::min(level, kBodyLevel * (1.0 - kSpotContrast * s.intensity));
          }
          sum += level;
        }
      }
      canvas(y, x) = sum / 4.0 * params.brightness_scale;
    }
  }
  if (body_samples == 0) throw RenderError("warp maps the silhouette entirely outside the frame");

  for (const auto& o : params.occluders) {
    for (Index y = 0; y < params.height; ++y) {
      for (Index x = 0; x < params.width; ++x) {
        if (std::hypot(static_cast<double>(x) + 0.5 - o.center_x, static_cast<double>(y) + 0.5 - o.center_y) <=
            o.radius) {
          canvas(y, x) = o.intensity;
        }
      }
    }
  }
  if (params.flip_h) canvas = canvas.rowwise().reverse().eval();
  if (params.flip_v) canvas = canvas.colwise().reverse().eval();
  if (params.noise_sigma > 0) {
    Rng noise_rng(params.noise_seed);
    std::normal_distribution<double> normal(0.0, params.noise_sigma);
    for (Index y = 0; y < params.height; ++y) {
      for (Index x = 0; x < params.width; ++x) canvas(y, x) += normal(noise_rng);
    }
  }

  ImageSample sample;
  sample.individual_id = pattern.individual_id;
  sample.image_id = std::move(image_id);
  sample.pixels.resize(params.height, params.width);
  for (Index y = 0; y < params.height; ++y) {
    for (Index x = 0; x < params.width; ++x) sample.pixels(y, x) = to_gray(canvas(y, x));
  }
  return sample;
}

GrayImage augment_image(const GrayImage& image, const RenderParams& params) {
  if (std::abs(params.warp.determinant()) <= 1e-6) throw RenderError("warp is not invertible (|det| <= 1e-6)");
  const Homography inverse = params.warp.inverse();
  const Index rows = image.rows();
  const Index cols = image.cols();
  GrayImage out(rows, cols);
  auto at = [&](Index y, Index x) {
    return static_cast<double>(image(std::clamp<Index>(y, 0, rows - 1), std::clamp<Index>(x, 0, cols - 1)));
  };
  for (Index y = 0; y < rows; ++y) {
    for (Index x = 0; x < cols; ++x) {
      const Eigen::Vector2d p = apply(inverse, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      double sx = p.x() - 0.5;
      double sy = p.y() - 0.5;
      if (!std::isfinite(sx) || !std::isfinite(sy)) sx = sy = 0.0;
      sx = std::clamp(sx, -1.0, static_cast<double>(cols));
      sy = std::clamp(sy, -1.0, static_cast<double>(rows));
      const auto x0 = static_cast<Index>(std::floor(sx));
      const auto y0 = static_cast<Index>(std::floor(sy));
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                       fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      out(y, x) = to_gray(v * params.brightness_scale);
    }
  }
  apply_flips(out, params.flip_h, params.flip_v);
  return out;
}

void DatasetConfig::validate() const {
  if (individuals < 1) throw ConfigError("corpus.individuals must be >= 1");
  if (views < 3) throw ConfigError("corpus.views must be >= 3");
  if (height < 9 || width < 9) throw ConfigError("corpus image size must be at least 9x9");
  if (folds < 2) throw ConfigError("corpus.folds must be >= 2");
  if (folds > individuals) throw ConfigError("corpus.folds must not exceed corpus.individuals");
  pattern.validate();
}

std::string individual_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ind_%04d", index);
  return buf;
}

std::string image_name(const std::string& individual_id, int view) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_v%03d", view);
  return individual_id + buf;
}

fs::path DatasetManifest::image_path(const std::string& individual_id, const std::string& image_id) const {
  return root / "images" / individual_id / (image_id + ".pgm");
}

const ManifestIndividual& DatasetManifest::individual(const std::string& individual_id) const {
  for (const auto& ind : individuals) {
    if (ind.individual_id == individual_id) return ind;
  }
  throw DataError("unknown individual '" + individual_id + "'");
}

std::vector<std::string> DatasetManifest::individual_ids() const {
  std::vector<std::string> ids;
  for (const auto& ind : individuals) ids.push_back(ind.individual_id);
  return ids;
}

std::size_t DatasetManifest::image_count() const {
  std::size_t n = 0;
  for (const auto& ind : individuals) n += ind.image_ids.size();
  return n;
}

void DatasetManifest::validate() const {
  std::vector<std::string> seen;
  for (const auto& ind : individuals) {
    if (ind.image_ids.size() < 3) throw DataError("individual '" + ind.individual_id + "' has fewer than 3 images");
    if (ind.fold < 0 || ind.fold >= folds) throw DataError("individual '" + ind.individual_id + "' has no valid fold");
    seen.push_back(ind.individual_id);
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) throw DataError("duplicate individual id");
}

std::vector<SpotPattern> generate_patterns(const DatasetConfig& config) {
  std::vector<SpotPattern> patterns;
  for (int i = 0; i < config.individuals; ++i) {
    patterns.push_back(generate_individual(derive_seed(config.seed, kStreamIndividual, static_cast<std::uint64_t>(i)),
                                           config.pattern, individual_name(i), patterns));
  }
  return patterns;
}

DatasetManifest build_dataset(const DatasetConfig& config) {
  config.validate();
  if (fs::exists(config.root / "manifest.json")) {
    throw DataError("dataset root " + config.root.string() + " already holds a dataset");
  }
  const auto patterns = generate_patterns(config);

  DatasetManifest manifest;
  manifest.root = config.root;
  manifest.seed = config.seed;
  manifest.height = config.height;
  manifest.width = config.width;
  manifest.folds = config.folds;

  std::vector<int> order(patterns.size());
  std::iota(order.begin(), order.end(), 0);
  Rng fold_rng(derive_seed(config.seed, kStreamFolds));
  std::shuffle(order.begin(), order.end(), fold_rng);
  std::vector<int> fold_of(patterns.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[static_cast<std::size_t>(order[i])] = static_cast<int>(i) % config.folds;

  try {
    for (std::size_t i = 0; i < patterns.size(); ++i) {
      const auto& pattern = patterns[i];
      ManifestIndividual entry{pattern.individual_id, {}, fold_of[i]};
      const fs::path dir = config.root / "images" / pattern.individual_id;
      fs::create_directories(dir);
      Rng view_rng(derive_seed(config.seed, kStreamView, i));
      for (int v = 0; v < config.views; ++v) {
        const std::string id = image_name(pattern.individual_id, v);
        std::optional<ImageSample> sample;
        for (int attempt = 0; attempt < 16 && !sample; ++attempt) {
          try {
            auto params = sample_view_params(view_rng, config.view_level, config.height, config.width);
            if (!config.view_flips) params.flip_h = params.flip_v = false;
            sample = render_view(pattern, params, id);
          } catch (const RenderError&) {
          }
        }
        if (!sample) throw RenderError("no valid view could be rendered for " + id);
        write_pgm(dir / (id + ".pgm"), sample->pixels);
        entry.image_ids.push_back(id);
      }
      manifest.individuals.push_back(std::move(entry));
    }
    save_manifest(manifest);
  } catch (const fs::filesystem_error& e) {
    throw DataError(std::string("cannot write dataset: ") + e.what());
  }
  return manifest;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json doc;
  doc["schema_version"] = DatasetManifest::kSchemaVersion;
  doc["seed"] = manifest.seed;
  doc["image_size"] = {manifest.height, manifest.width};
  doc["folds"] = manifest.folds;
  json individuals = json::array();
  json fold_of = json::object();
  for (const auto& ind : manifest.individuals) {
    individuals.push_back(
        {{"individual_id", ind.individual_id}, {"image_count", ind.image_ids.size()}, {"image_ids", ind.image_ids}});
    fold_of[ind.individual_id] = ind.fold;
  }
  doc["individuals"] = individuals;
  doc["fold_of"] = fold_of;
  return doc.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  try {
    const json doc = json::parse(text);
    if (doc.at("schema_version").get<int>() != DatasetManifest::kSchemaVersion) {
      throw DataError("unsupported manifest schema_version");
    }
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.height = doc.at("image_size").at(0).get<Index>();
    m.width = doc.at("image_size").at(1).get<Index>();
    m.folds = doc.at("folds").get<int>();
    const auto& fold_of = doc.at("fold_of");
    for (const auto& item : doc.at("individuals")) {
      ManifestIndividual ind;
      ind.individual_id = item.at("individual_id").get<std::string>();
      ind.image_ids = item.at("image_ids").get<std::vector<std::string>>();
      if (item.at("image_count").get<std::size_t>() != ind.image_ids.size()) {
        throw DataError("manifest image_count mismatch for '" + ind.individual_id + "'");
      }
      ind.fold = fold_of.at(ind.individual_id).get<int>();
      m.individuals.push_back(std::move(ind));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest) {
  const std::string text = manifest_to_json(manifest);
  fs::create_directories(manifest.root);
  write_file(manifest.root / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

DatasetManifest load_manifest(const fs::path& root_or_file) {
  const fs::path file = fs::is_directory(root_or_file) ? root_or_file / "manifest.json" : root_or_file;
  const auto bytes = read_file(file);
  return manifest_from_json(std::string(bytes.begin(), bytes.end()), file.parent_path());
}

Split split_by_individual(const DatasetManifest& manifest, int fold) {
  if (fold < 0 || fold >= manifest.folds) {
    throw ConfigError("fold " + std::to_string(fold) + " out of range [0," + std::to_string(manifest.folds) + ")");
  }
  Split split;
  for (const auto& ind : manifest.individuals) (ind.fold == fold ? split.test : split.train).push_back(ind.individual_id);
  return split;
}

DatasetManifest subset(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
  DatasetManifest out = manifest;
  out.individuals.clear();
  for (const auto& id : ids) out.individuals.push_back(manifest.individual(id));
  return out;
}

}  // namespace patternid
