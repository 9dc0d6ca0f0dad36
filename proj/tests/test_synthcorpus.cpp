#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "patternid/error.hpp"
#include "patternid/synthcorpus.hpp"
#include "support.hpp"

using namespace patternid;
using testing_support::TempDir;

namespace {

double brute_hausdorff(const SpotPattern& a, const SpotPattern& b) {
  if (a.spots.size() != b.spots.size()) return INFINITY;
  auto directed = [](const SpotPattern& x, const SpotPattern& y) {
    double worst = 0.0;
    for (const auto& s : x.spots) {
      double best = INFINITY;
      for (const auto& t : y.spots) best = std::min(best, std::hypot(s.center_x - t.center_x, s.center_y - t.center_y));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

RenderParams canonical(Index size = 64) {
  RenderParams p;
  p.height = p.width = size;
  return p;
}

}  // namespace

TEST(GenerateIndividual, SameSeedIsBitIdentical) {
  const auto a = generate_individual(7, {});
  const auto b = generate_individual(7, {});
  EXPECT_EQ(a, b);
  EXPECT_NE(a, generate_individual(8, {}));
}

TEST(GenerateIndividual, SpotRangeForcedByConfig) {
  PatternSpec spec;
  spec.min_spots = spec.max_spots = 4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(generate_individual(seed, spec).spots.size(), 4u);
}

TEST(GenerateIndividual, SpotsInsideSilhouetteAndInRange) {
  const PatternSpec spec;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = generate_individual(seed, spec);
    ASSERT_GE(p.spots.size(), static_cast<std::size_t>(spec.min_spots));
    ASSERT_LE(p.spots.size(), static_cast<std::size_t>(spec.max_spots));
    for (const auto& s : p.spots) {
      EXPECT_TRUE(p.silhouette.contains(s.center_x, s.center_y));
      EXPECT_GE(s.radius_minor, spec.radius_min);
      EXPECT_LE(s.radius_major, spec.radius_max);
    }
  }
}

TEST(GenerateIndividual, HundredSeedsAreMutuallyDistinct) {
  std::vector<SpotPattern> ps;
  for (std::uint64_t seed = 0; seed < 100; ++seed) ps.push_back(generate_individual(seed, {}));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t j = i + 1; j < ps.size(); ++j) {
      const double d = brute_hausdorff(ps[i], ps[j]);
      EXPECT_GT(d, kDuplicateThreshold) << i << " vs " << j;
      EXPECT_EQ(pattern_distance(ps[i], ps[j]), d);
    }
  }
}

TEST(GenerateIndividual, CorpusPatternsRejectNearDuplicates) {
  DatasetConfig c;
  c.individuals = 300;
  const auto ps = generate_patterns(c);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t j = i + 1; j < ps.size(); ++j) ASSERT_GT(brute_hausdorff(ps[i], ps[j]), kDuplicateThreshold);
  }
}

TEST(GenerateIndividual, ImpossibleUniquenessNamesTheCollidingId) {
  PatternSpec spec;
  spec.min_spots = spec.max_spots = 4;
  SpotPattern blocker;
  blocker.individual_id = "ind_blocker";
  // A tiny body pins every spot near the center, right on top of the blocker.
  spec.silhouette_x_min = spec.silhouette_x_max = 0.01;
  spec.silhouette_y_min = spec.silhouette_y_max = 0.01;
  blocker.spots.assign(4, Spot{});
  try {
    generate_individual(1, spec, "ind_new", {blocker});
    FAIL() << "expected GenerationError";
  } catch (const GenerationError& e) {
    EXPECT_NE(std::string(e.what()).find("ind_blocker"), std::string::npos) << e.what();
  }
}

TEST(RenderView, CanonicalIsDeterministic) {
  const auto p = generate_individual(11, {});
  const auto a = render_view(p, canonical());
  const auto b = render_view(p, canonical());
  EXPECT_TRUE(a.pixels == b.pixels);
  EXPECT_EQ(a.pixels.rows(), 64);
}

TEST(RenderView, FlipHorizontalReversesColumns) {
  const auto p = generate_individual(12, {});
  auto params = canonical();
  const auto base = render_view(p, params);
  params.flip_h = true;
  const auto flipped = render_view(p, params);
  const GrayImage reversed = base.pixels.rowwise().reverse();
  EXPECT_TRUE(flipped.pixels == reversed);
}

TEST(RenderView, RotationThenInverseEqualsIdentity) {
  const auto p = generate_individual(13, {});
  auto params = canonical();
  const auto base = render_view(p, params);
  const Homography r = compose_warp(64, 64, 0.1, 1.0, 0, 0);
  const Homography r_inv = compose_warp(64, 64, -0.1, 1.0, 0, 0);
  params.warp = r_inv * r;
  const auto round_trip = render_view(p, params);
  EXPECT_TRUE(round_trip.pixels == base.pixels);
}

TEST(RenderView, SilhouetteOutsideFrameIsRenderError) {
  const auto p = generate_individual(14, {});
  auto params = canonical();
  params.warp = compose_warp(64, 64, 0.0, 1.0, 500.0, 500.0);
  EXPECT_THROW(render_view(p, params), RenderError);
}

TEST(RenderView, DegenerateWarpAndHeavyOcclusionRejected) {
  const auto p = generate_individual(15, {});
  auto params = canonical();
  params.warp(0, 0) = params.warp(1, 1) = 1e-4;
  EXPECT_THROW(render_view(p, params), RenderError);
  params = canonical();
  params.occluders.push_back({32, 32, 30, 0});
  EXPECT_THROW(render_view(p, params), RenderError);
}

TEST(RenderView, SpotsLandWhereThePatternPutsThem) {
  // Dark-pixel centroid of the canonical view matches the centroid of the
  // pixel centers covered by some spot ellipse inside the body.
  DatasetConfig c;
  c.individuals = 20;
  const auto ps = generate_patterns(c);
  auto centroid_of_pattern = [](const SpotPattern& p) {
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        const double u = (x + 0.5) / 64, v = (y + 0.5) / 64;
        if (!p.silhouette.contains(u, v)) continue;
        const bool covered = std::any_of(p.spots.begin(), p.spots.end(), [&](const Spot& s) {
          const double du = u - s.center_x, dv = v - s.center_y;
          const double along = du * std::cos(s.rotation) + dv * std::sin(s.rotation);
          const double across = dv * std::cos(s.rotation) - du * std::sin(s.rotation);
          return std::pow(along / s.radius_major, 2) + std::pow(across / s.radius_minor, 2) <= 1.0;
        });
        if (covered) {
          sx += x + 0.5;
          sy += y + 0.5;
          n += 1;
        }
      }
    }
    return std::pair{sx / n, sy / n};
  };
  for (const auto& p : ps) {
    const auto img = render_view(p, canonical()).pixels;
    // Background shares the spots' gray range; mask it with a spotless render.
    auto plain = p;
    plain.spots.clear();
    const auto body = render_view(plain, canonical()).pixels;
    double sx = 0, sy = 0, n = 0;
    for (Index y = 0; y < 64; ++y) {
      for (Index x = 0; x < 64; ++x) {
        if (body(y, x) == 200 && img(y, x) < 150) {
          sx += x + 0.5;
          sy += y + 0.5;
          n += 1;
        }
      }
    }
    ASSERT_GT(n, 0);
    const auto [ex, ey] = centroid_of_pattern(p);
    EXPECT_NEAR(sx / n, ex, 1.0) << p.individual_id;
    EXPECT_NEAR(sy / n, ey, 1.0) << p.individual_id;
  }
}

TEST(SampleViewParams, SmallLevelIsRotationOnly) {
  Rng rng(5);
  const double limit = 10.0 * std::numbers::pi / 180.0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = sample_view_params(rng, AugmentLevel::kSmall);
    ASSERT_LE(std::abs(p.rotation), limit);
    ASSERT_FALSE(p.flip_h || p.flip_v);
    ASSERT_EQ(p.shift_x, 0.0);
    ASSERT_EQ(p.shift_y, 0.0);
    ASSERT_EQ(p.zoom, 1.0);
  }
}

TEST(SampleViewParams, SmallLevelDisplacementBoundedByTenDegreeRotation) {
  Rng rng(6);
  const double radius = std::hypot(32.0, 32.0);
  const double bound = 2 * radius * std::sin(10.0 * std::numbers::pi / 180.0 / 2) + 1e-9;
  for (int i = 0; i < 1000; ++i) {
    const auto p = sample_view_params(rng, AugmentLevel::kSmall);
    for (double x : {0.0, 64.0}) {
      for (double y : {0.0, 64.0}) {
        const Eigen::Vector3d q = p.warp * Eigen::Vector3d(x, y, 1.0);
        ASSERT_LE(std::hypot(q.x() / q.z() - x, q.y() / q.z() - y), bound);
      }
    }
  }
}

TEST(SampleViewParams, ExtensiveLevelRanges) {
  Rng rng(7);
  int flips = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = sample_view_params(rng, AugmentLevel::kExtensive);
    ASSERT_LE(std::abs(p.rotation), std::numbers::pi / 2);
    ASSERT_LE(std::abs(p.shift_x), 10.0);
    ASSERT_LE(std::abs(p.shift_y), 10.0);
    ASSERT_GE(p.zoom, 1.0);
    ASSERT_LE(p.zoom, 1.1);
    ASSERT_GE(p.brightness_scale, 0.5);
    ASSERT_LE(p.brightness_scale, 1.5);
    ASSERT_LE(p.occluders.size(), 3u);
    for (const auto& o : p.occluders) {
      ASSERT_GE(o.intensity, kOccluderMinLevel);
      ASSERT_LE(o.intensity, 255.0);
    }
    // Projective terms of at most 0.0015, carried through the zoomed rotation.
    ASSERT_LE(std::hypot(p.warp(2, 0), p.warp(2, 1)), 0.0015 * std::sqrt(2.0) * p.zoom + 1e-12);
    flips += p.flip_h + p.flip_v;
  }
  EXPECT_GT(flips, 0);
}

TEST(SampleViewParams, FixedSeedGivesIdenticalSequence) {
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) {
    const auto p = sample_view_params(a, AugmentLevel::kExtensive);
    const auto q = sample_view_params(b, AugmentLevel::kExtensive);
    ASSERT_TRUE(p.warp == q.warp);
    ASSERT_EQ(p.occluders, q.occluders);
    ASSERT_EQ(p.noise_seed, q.noise_seed);
  }
}

TEST(AugmentImage, IdentityIsNoOp) {
  const auto img = render_view(generate_individual(3, {}), canonical()).pixels;
  EXPECT_TRUE(augment_image(img, canonical()) == img);
}

TEST(Pgm, RoundTripsBitExactly) {
  TempDir dir;
  GrayImage img(5, 7);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<std::uint8_t>(i * 37);
  write_pgm(dir / "a.pgm", img);
  EXPECT_TRUE(read_pgm(dir / "a.pgm") == img);
  const auto bytes = read_file(dir / "a.pgm");
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 2), "P5");
}

TEST(Pgm, AcceptsCommentsAndRejectsGarbage) {
  const std::string text = "P5\n# comment\n2 1\n255\n\x01\x02";
  const auto img = decode_pgm(std::vector<std::uint8_t>(text.begin(), text.end()));
  EXPECT_EQ(img.cols(), 2);
  EXPECT_EQ(img(0, 1), 2);
  const std::string bad = "P6\n2 1\n255\n\x01\x02";
  EXPECT_THROW(decode_pgm(std::vector<std::uint8_t>(bad.begin(), bad.end())), FormatError);
  const std::string short_data = "P5\n4 4\n255\n\x01\x02";
  EXPECT_THROW(decode_pgm(std::vector<std::uint8_t>(short_data.begin(), short_data.end())), FormatError);
}

TEST(BuildDataset, CountsLayoutAndFolds) {
  TempDir dir;
  DatasetConfig c;
  c.root = dir / "corpus";
  c.seed = 4;
  const auto m = build_dataset(c);
  EXPECT_EQ(m.individuals.size(), 50u);
  EXPECT_EQ(m.image_count(), 500u);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(c.root / "images")) {
    files += entry.is_regular_file() && entry.path().extension() == ".pgm";
  }
  EXPECT_EQ(files, 500u);
  EXPECT_TRUE(std::filesystem::exists(c.root / "manifest.json"));
  std::map<int, int> per_fold;
  for (const auto& ind : m.individuals) {
    ++per_fold[ind.fold];
    EXPECT_GE(ind.image_ids.size(), 3u);
    EXPECT_TRUE(std::filesystem::exists(m.image_path(ind.individual_id, ind.image_ids[0])));
  }
  ASSERT_EQ(per_fold.size(), 5u);
  for (const auto& [fold, n] : per_fold) EXPECT_EQ(n, 10);

  const auto split = split_by_individual(m, 0);
  EXPECT_EQ(split.test.size(), 10u);
  EXPECT_EQ(split.train.size(), 40u);
  std::set<std::string> train(split.train.begin(), split.train.end());
  for (const auto& id : split.test) EXPECT_FALSE(train.count(id));

  std::multiset<std::string> union_of_tests;
  for (int f = 0; f < 5; ++f) {
    for (const auto& id : split_by_individual(m, f).test) union_of_tests.insert(id);
  }
  EXPECT_EQ(union_of_tests.size(), 50u);
  EXPECT_EQ(std::set<std::string>(union_of_tests.begin(), union_of_tests.end()).size(), 50u);
  EXPECT_THROW(split_by_individual(m, 5), ConfigError);
  EXPECT_THROW(split_by_individual(m, -1), ConfigError);
}

TEST(BuildDataset, SameSeedReproducesBytes) {
  TempDir dir;
  auto a = testing_support::small_corpus(dir / "a", 6, 4, 21);
  auto b = testing_support::small_corpus(dir / "b", 6, 4, 21);
  EXPECT_EQ(read_file(dir / "a" / "manifest.json"), read_file(dir / "b" / "manifest.json"));
  for (const auto& ind : a.individuals) {
    for (const auto& img : ind.image_ids) {
      ASSERT_EQ(read_file(a.image_path(ind.individual_id, img)), read_file(b.image_path(ind.individual_id, img)));
    }
  }
}

TEST(BuildDataset, ViewFlipsOnlyChangeFlippedDraws) {
  TempDir dir;
  EXPECT_FALSE(DatasetConfig{}.view_flips);
  DatasetConfig c;
  c.individuals = 12;
  c.views = 5;
  c.folds = 3;
  c.height = c.width = 32;
  c.seed = 6;
  c.root = dir / "plain";
  const auto plain = build_dataset(c);
  c.view_flips = true;
  c.root = dir / "flipped";
  const auto flipped = build_dataset(c);
  // Same parameter stream either way: a view is unchanged exactly when its
  // draw had neither flip, which happens for about a quarter of them.
  std::size_t same = 0, total = 0;
  for (const auto& ind : plain.individuals) {
    for (const auto& img : ind.image_ids) {
      same += read_file(plain.image_path(ind.individual_id, img)) == read_file(flipped.image_path(ind.individual_id, img));
      ++total;
    }
  }
  EXPECT_GT(same, total / 10);
  EXPECT_LT(same, total / 2);
}

TEST(BuildDataset, DuplicateRootAndBadFoldsRejected) {
  TempDir dir;
  testing_support::small_corpus(dir / "c", 4, 3, 1, 2);
  EXPECT_THROW(testing_support::small_corpus(dir / "c", 4, 3, 1, 2), DataError);
  DatasetConfig c;
  c.root = dir / "d";
  c.folds = 1;
  EXPECT_THROW(build_dataset(c), ConfigError);
}

TEST(BuildDataset, MantaScaleSplitRatio) {
  DatasetManifest m;
  m.folds = 5;
  for (int i = 0; i < 120; ++i) m.individuals.push_back({individual_name(i), {"a", "b", "c"}, i % 5});
  const auto split = split_by_individual(m, 2);
  EXPECT_EQ(split.train.size(), 96u);
  EXPECT_EQ(split.test.size(), 24u);
}

TEST(Manifest, RoundTripsThroughJson) {
  TempDir dir;
  const auto m = testing_support::small_corpus(dir / "m", 5, 3, 9, 2);
  const auto loaded = load_manifest(dir / "m");
  EXPECT_EQ(manifest_to_json(loaded), manifest_to_json(m));
  EXPECT_EQ(loaded.root, m.root);
  const auto also = load_manifest(dir / "m" / "manifest.json");
  EXPECT_EQ(also.individual_ids(), m.individual_ids());
}
