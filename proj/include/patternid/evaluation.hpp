#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "patternid/mining.hpp"
#include "patternid/tensor.hpp"

namespace patternid {

struct PairSets {
  std::vector<PairIndex> positive;
  std::vector<PairIndex> negative;
};

/// Every unordered pair (i < j), split by label equality.
PairSets all_pairs(const Labels& labels);

/// Pair-verification metrics over all pairs of the given embeddings.
///
/// thresholds[0] is a sentinel below every distance (TPR = FAR = 0) and the
/// last entry is +infinity (TPR = FAR = 1); between them are the distinct pair
/// distances in ascending order. A pair is accepted at threshold d when its
/// distance is <= d. AUC is the trapezoid integral of TPR over FAR.
struct VerificationReport {
  std::vector<double> thresholds;
  std::vector<double> tpr;
  std::vector<double> far;
  double auc = 0.0;
  /// TPR at the largest threshold whose FAR is <= target_far (no interpolation).
  double tpr_at_far = 0.0;
  double threshold_at_far = 0.0;
  double target_far = 0.01;
  std::size_t positive_pairs = 0;
  std::size_t negative_pairs = 0;
};

inline constexpr double kBelowAllDistances = -1.0;

VerificationReport verification_metrics(const RowMatrix<float>& embeddings, const Labels& labels,
                                        double target_far = 0.01);

/// The same metrics from precomputed positive and negative pair distances.
VerificationReport verification_from_distances(std::vector<double> positive, std::vector<double> negative,
                                               double target_far = 0.01);

/// Euclidean distance accumulated in double, dimension by dimension.
double euclidean(const float* a, const float* b, Index dim);

struct EvalProtocolConfig {
  int gallery_matches = 2;  // m: gallery images per test individual
  int repetitions = 5;      // R: re-draws of the gallery images
  std::vector<int> k_values{1, 5, 10};
  std::uint64_t seed = 0;

  void validate() const;
};

/// A labelled embedding set: one row per image.
struct EmbeddingSet {
  std::vector<std::string> individual_ids;
  std::vector<std::string> image_ids;
  RowMatrix<float> vectors;

  Index size() const { return vectors.rows(); }
};

struct RepetitionTrace {
  /// Per test individual (sorted by id): the image ids moved into the gallery.
  std::vector<std::pair<std::string, std::vector<std::string>>> gallery_images;
  std::vector<std::string> query_images;
  std::size_t gallery_size = 0;
};

struct TopKReport {
  std::vector<int> k_values;
  std::vector<double> mean;
  std::vector<double> stddev;  // sample std over repetitions (0 for R = 1)
  std::vector<std::vector<double>> per_repetition;  // [repetition][k index]
  EvalProtocolConfig protocol;
  std::size_t gallery_individuals = 0;
  std::vector<RepetitionTrace> traces;

  double at(int k) const;
};

/// Gallery = fixed train embeddings + m drawn images per test individual;
/// every other test image is a query. A query is correct at k when its
/// individual is among the k nearest distinct gallery individuals.
TopKReport topk_accuracy(const EmbeddingSet& train, const EmbeddingSet& test, const EvalProtocolConfig& protocol);

struct GallerySweep {
  std::vector<int> gallery_matches;
  std::vector<TopKReport> reports;
};

/// topk_accuracy once per m, all under the protocol's seed.
GallerySweep vary_gallery_size(const EmbeddingSet& train, const EmbeddingSet& test, const std::vector<int>& m_values,
                               const EvalProtocolConfig& base);

nlohmann::json to_json(const VerificationReport& report);
nlohmann::json to_json(const TopKReport& report, bool include_traces = false);
nlohmann::json to_json(const GallerySweep& sweep);
nlohmann::json to_json(const EvalProtocolConfig& protocol);

/// `threshold,tpr,far` rows with a header line.
std::string roc_csv(const VerificationReport& report);

/// Mean and sample standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace patternid
