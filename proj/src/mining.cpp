#include "patternid/mining.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "patternid/error.hpp"

namespace patternid {

void BatchSpec::validate() const {
  if (classes < 2) throw ConfigError("batch.P must be >= 2 (no in-batch negatives otherwise)");
  if (per_class < 2) throw ConfigError("batch.K must be >= 2 (no in-batch positives otherwise)");
}

std::string to_string(MiningStrategy s) {
  switch (s) {
    case MiningStrategy::kSemiHard: return "semi_hard";
    case MiningStrategy::kBatchHard: return "batch_hard";
    case MiningStrategy::kRandom: return "random";
  }
  return "?";
}

std::string to_string(NegativeAnchor a) { return a == NegativeAnchor::kAnchor ? "anchor" : "positive"; }

std::string to_string(LossKind k) { return k == LossKind::kTriplet ? "triplet" : "contrastive"; }

MiningStrategy parse_mining_strategy(const std::string& text) {
  if (text == "semi_hard") return MiningStrategy::kSemiHard;
  if (text == "batch_hard") return MiningStrategy::kBatchHard;
  if (text == "random") return MiningStrategy::kRandom;
  throw ConfigError("mining strategy must be semi_hard, batch_hard or random, got '" + text + "'");
}

NegativeAnchor parse_negative_anchor(const std::string& text) {
  if (text == "anchor") return NegativeAnchor::kAnchor;
  if (text == "positive") return NegativeAnchor::kPositive;
  throw ConfigError("negative_anchor must be anchor or positive, got '" + text + "'");
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "triplet") return LossKind::kTriplet;
  if (text == "contrastive") return LossKind::kContrastive;
  throw ConfigError("loss must be triplet or contrastive, got '" + text + "'");
}

void MiningConfig::validate() const {
  if (!(margin > 0) || !std::isfinite(margin)) throw ConfigError("mining.margin must be finite and positive");
  if (!(contrastive_margin > 0) || !std::isfinite(contrastive_margin)) {
    throw ConfigError("mining.contrastive_margin must be finite and positive");
  }
}

template <typename Scalar>
RowMatrix<Scalar> pairwise_sq_distances(const RowMatrix<Scalar>& embeddings) {
  const Index n = embeddings.rows();
  RowMatrix<Scalar> d = RowMatrix<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      // Difference form: stable under translation, never negative.
      const Scalar v = (embeddings.row(i) - embeddings.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

namespace {

void check_labels(Index n, const Labels& labels) {
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("labels length " + std::to_string(labels.size()) + " does not match batch size " +
                     std::to_string(n));
  }
}

}  // namespace

template <typename Scalar>
std::vector<TripletIndex> mine_semi_hard(const RowMatrix<Scalar>& sq_dists, const Labels& labels, double margin,
                                         bool include_hard_negatives) {
  const Index n = sq_dists.rows();
  check_labels(n, labels);
  const auto m = static_cast<Scalar>(margin);
  std::vector<TripletIndex> out;
  for (Index a = 0; a < n; ++a) {
    for (Index p = 0; p < n; ++p) {
      if (p == a || labels[a] != labels[p]) continue;
      const Scalar dap = sq_dists(a, p);
      for (Index neg = 0; neg < n; ++neg) {
        if (labels[neg] == labels[a]) continue;
        const Scalar dan = sq_dists(a, neg);
        if (!(dap + m > dan)) continue;
        if (!include_hard_negatives && dan < dap) continue;
        out.push_back({a, p, neg});
      }
    }
  }
  return out;
}

template <typename Scalar>
std::vector<TripletIndex> mine_batch_hard(const RowMatrix<Scalar>& sq_dists, const Labels& labels) {
  const Index n = sq_dists.rows();
  check_labels(n, labels);
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw MiningError("batch-hard mining needs at least two classes in the batch");
  for (const auto& [label, count] : counts) {
    if (count < 2) throw MiningError("batch-hard mining: class " + std::to_string(label) + " has a single member");
  }
  std::vector<TripletIndex> out;
  for (Index a = 0; a < n; ++a) {
    Index hardest_pos = -1;
    Index hardest_neg = -1;
    for (Index j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (hardest_pos < 0 || sq_dists(a, j) > sq_dists(a, hardest_pos)) hardest_pos = j;
      } else if (hardest_neg < 0 || sq_dists(a, j) < sq_dists(a, hardest_neg)) {
        hardest_neg = j;
      }
    }
    out.push_back({a, hardest_pos, hardest_neg});
  }
  return out;
}

std::vector<TripletIndex> mine_random(const Labels& labels, Rng& rng) {
  const auto n = static_cast<Index>(labels.size());
  std::vector<TripletIndex> out;
  for (Index a = 0; a < n; ++a) {
    std::vector<Index> negatives;
    for (Index j = 0; j < n; ++j) {
      if (labels[j] != labels[a]) negatives.push_back(j);
    }
    if (negatives.empty()) continue;
    for (Index p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const auto pick = uniform_int(rng, 0, static_cast<int>(negatives.size()) - 1);
      out.push_back({a, p, negatives[static_cast<std::size_t>(pick)]});
    }
  }
  return out;
}

template <typename Scalar>
std::vector<TripletIndex> mine(const RowMatrix<Scalar>& sq_dists, const Labels& labels, const MiningConfig& config,
                               Rng& rng) {
  switch (config.strategy) {
    case MiningStrategy::kSemiHard:
      return mine_semi_hard(sq_dists, labels, config.margin, config.include_hard_negatives);
    case MiningStrategy::kBatchHard: return mine_batch_hard(sq_dists, labels);
    case MiningStrategy::kRandom: return mine_random(labels, rng);
  }
  return {};
}

template <typename Scalar>
LossResult<Scalar> triplet_loss(const RowMatrix<Scalar>& embeddings, const std::vector<TripletIndex>& triplets,
                                double margin, NegativeAnchor negative_anchor) {
  LossResult<Scalar> result;
  result.gradient = RowMatrix<Scalar>::Zero(embeddings.rows(), embeddings.cols());
  const auto m = static_cast<Scalar>(margin);
  for (const auto& t : triplets) {
    const Index from = negative_anchor == NegativeAnchor::kAnchor ? t.anchor : t.positive;
    const auto ap = (embeddings.row(t.anchor) - embeddings.row(t.positive)).eval();
    const auto xn = (embeddings.row(from) - embeddings.row(t.negative)).eval();
    const Scalar hinge = m + ap.squaredNorm() - xn.squaredNorm();
    if (!(hinge > 0)) continue;
    result.loss += hinge;
    ++result.active;
    result.gradient.row(t.anchor) += 2 * ap;
    result.gradient.row(t.positive) -= 2 * ap;
    result.gradient.row(from) -= 2 * xn;
    result.gradient.row(t.negative) += 2 * xn;
  }
  return result;
}

template <typename Scalar>
LossResult<Scalar> contrastive_loss(const RowMatrix<Scalar>& embeddings, const std::vector<PairIndex>& pairs,
                                    double margin) {
  LossResult<Scalar> result;
  result.gradient = RowMatrix<Scalar>::Zero(embeddings.rows(), embeddings.cols());
  const auto m = static_cast<Scalar>(margin);
  for (const auto& pair : pairs) {
    const auto diff = (embeddings.row(pair.first) - embeddings.row(pair.second)).eval();
    if (pair.same_class) {
      const Scalar sq = diff.squaredNorm();
      result.loss += sq;
      if (sq > 0) ++result.active;
      result.gradient.row(pair.first) += 2 * diff;
      result.gradient.row(pair.second) -= 2 * diff;
      continue;
    }
    const Scalar d = diff.norm();
    if (!(d < m)) continue;
    const Scalar gap = m - d;
    result.loss += gap * gap;
    ++result.active;
    // d/dx (m - |x|)^2 = -2 (m - |x|) x / |x|; zero subgradient at x = 0.
    if (d > 0) {
      const auto g = ((-2 * gap / d) * diff).eval();
      result.gradient.row(pair.first) += g;
      result.gradient.row(pair.second) -= g;
    }
  }
  return result;
}

std::vector<PairIndex> sample_pairs(const Labels& labels, Rng& rng) {
  const auto n = static_cast<Index>(labels.size());
  std::vector<PairIndex> positives;
  std::vector<PairIndex> negatives;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) (labels[i] == labels[j] ? positives : negatives).push_back({i, j, labels[i] == labels[j]});
  }
  std::vector<PairIndex> out = positives;
  const std::size_t want = std::min(positives.size(), negatives.size());
  for (std::size_t k = 0; k < want; ++k) {
    const auto pick = static_cast<std::size_t>(uniform_int(rng, static_cast<int>(k), static_cast<int>(negatives.size()) - 1));
    std::swap(negatives[k], negatives[pick]);
    out.push_back(negatives[k]);
  }
  return out;
}

std::vector<BatchEntry> sample_pk_batch(const DatasetManifest& manifest, const std::vector<std::string>& ids, Rng& rng,
                                        const BatchSpec& spec) {
  spec.validate();
  if (static_cast<int>(ids.size()) < spec.classes) {
    throw DataError("P x K sampling needs " + std::to_string(spec.classes) + " individuals, split has " +
                    std::to_string(ids.size()));
  }
  std::vector<std::string> pool = ids;
  std::vector<BatchEntry> batch;
  for (int c = 0; c < spec.classes; ++c) {
    const auto pick = static_cast<std::size_t>(uniform_int(rng, c, static_cast<int>(pool.size()) - 1));
    std::swap(pool[static_cast<std::size_t>(c)], pool[pick]);
    const auto& ind = manifest.individual(pool[static_cast<std::size_t>(c)]);
    if (ind.image_ids.empty()) throw DataError("individual '" + ind.individual_id + "' has no images");
    std::vector<std::string> images = ind.image_ids;
    const int count = static_cast<int>(images.size());
    for (int k = 0; k < spec.per_class; ++k) {
      std::size_t chosen;
      if (count >= spec.per_class) {
        chosen = static_cast<std::size_t>(uniform_int(rng, k, count - 1));
        std::swap(images[static_cast<std::size_t>(k)], images[chosen]);
        chosen = static_cast<std::size_t>(k);
      } else {
        chosen = static_cast<std::size_t>(uniform_int(rng, 0, count - 1));
      }
      batch.push_back({ind.individual_id, images[chosen], c});
    }
  }
  return batch;
}

#define PATTERNID_INSTANTIATE_MINING(S)                                                                          \
  template RowMatrix<S> pairwise_sq_distances(const RowMatrix<S>&);                                              \
  template std::vector<TripletIndex> mine_semi_hard(const RowMatrix<S>&, const Labels&, double, bool);           \
  template std::vector<TripletIndex> mine_batch_hard(const RowMatrix<S>&, const Labels&);                        \
  template std::vector<TripletIndex> mine(const RowMatrix<S>&, const Labels&, const MiningConfig&, Rng&);        \
  template LossResult<S> triplet_loss(const RowMatrix<S>&, const std::vector<TripletIndex>&, double,             \
                                      NegativeAnchor);                                                           \
  template LossResult<S> contrastive_loss(const RowMatrix<S>&, const std::vector<PairIndex>&, double);

PATTERNID_INSTANTIATE_MINING(float)
PATTERNID_INSTANTIATE_MINING(double)

}  // namespace patternid
