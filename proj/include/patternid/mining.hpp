#pragma once

#include <compare>
#include <string>
#include <vector>

#include "patternid/random.hpp"
#include "patternid/synthcorpus.hpp"
#include "patternid/tensor.hpp"

namespace patternid {

using Labels = std::vector<int>;

/// P classes with K images each.
struct BatchSpec {
  int classes = 15;
  int per_class = 5;

  int size() const { return classes * per_class; }
  void validate() const;
};

struct TripletIndex {
  Index anchor = 0;
  Index positive = 0;
  Index negative = 0;

  friend auto operator<=>(const TripletIndex&, const TripletIndex&) = default;
};

struct PairIndex {
  Index first = 0;
  Index second = 0;
  bool same_class = false;

  friend auto operator<=>(const PairIndex&, const PairIndex&) = default;
};

enum class MiningStrategy { kSemiHard, kBatchHard, kRandom };
enum class NegativeAnchor { kAnchor, kPositive };
enum class LossKind { kTriplet, kContrastive };

std::string to_string(MiningStrategy s);
std::string to_string(NegativeAnchor a);
std::string to_string(LossKind k);
MiningStrategy parse_mining_strategy(const std::string& text);
NegativeAnchor parse_negative_anchor(const std::string& text);
LossKind parse_loss_kind(const std::string& text);

struct MiningConfig {
  MiningStrategy strategy = MiningStrategy::kSemiHard;
  double margin = 0.2;
  /// When false only the strict semi-hard band d(a,p) <= d(a,n) < d(a,p) + m is kept.
  bool include_hard_negatives = true;
  /// Which member the negative distance is measured from in the triplet hinge.
  NegativeAnchor negative_anchor = NegativeAnchor::kAnchor;
  LossKind loss = LossKind::kTriplet;
  double contrastive_margin = 1.0;

  void validate() const;
};

/// Squared Euclidean distances between rows; exactly symmetric with a zero
/// diagonal.
template <typename Scalar>
RowMatrix<Scalar> pairwise_sq_distances(const RowMatrix<Scalar>& embeddings);

/// Every (a, p, n) with d(a,p) + margin > d(a,n) on squared distances, in
/// lexicographic order. With `include_hard_negatives` false, additionally
/// d(a,n) >= d(a,p).
template <typename Scalar>
std::vector<TripletIndex> mine_semi_hard(const RowMatrix<Scalar>& sq_dists, const Labels& labels, double margin,
                                         bool include_hard_negatives = true);

/// Per anchor, the furthest positive and the closest negative; ties go to the
/// lowest index. Every class needs >= 2 members and there must be >= 2 classes.
template <typename Scalar>
std::vector<TripletIndex> mine_batch_hard(const RowMatrix<Scalar>& sq_dists, const Labels& labels);

/// For each anchor-positive pair, one uniformly drawn negative.
std::vector<TripletIndex> mine_random(const Labels& labels, Rng& rng);

template <typename Scalar>
std::vector<TripletIndex> mine(const RowMatrix<Scalar>& sq_dists, const Labels& labels, const MiningConfig& config,
                               Rng& rng);

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  RowMatrix<Scalar> gradient;  // dL / d embeddings
  std::size_t active = 0;      // terms with non-zero hinge / contribution
};

/// Sum over triplets of max(0, m + d(a,p)^2 - d(x,n)^2), x = anchor or positive.
template <typename Scalar>
LossResult<Scalar> triplet_loss(const RowMatrix<Scalar>& embeddings, const std::vector<TripletIndex>& triplets,
                                double margin, NegativeAnchor negative_anchor = NegativeAnchor::kAnchor);

/// Sum over pairs of d^2 (same class) or max(0, margin - d)^2 (different class).
template <typename Scalar>
LossResult<Scalar> contrastive_loss(const RowMatrix<Scalar>& embeddings, const std::vector<PairIndex>& pairs,
                                    double margin);

/// Every same-class pair plus an equal number of uniformly drawn
/// different-class pairs.
std::vector<PairIndex> sample_pairs(const Labels& labels, Rng& rng);

struct BatchEntry {
  std::string individual_id;
  std::string image_id;
  int label = 0;

  friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

/// P individuals without replacement from `ids`; K images each, without
/// replacement when the individual has at least K images.
std::vector<BatchEntry> sample_pk_batch(const DatasetManifest& manifest, const std::vector<std::string>& ids, Rng& rng,
                                        const BatchSpec& spec);

}  // namespace patternid
