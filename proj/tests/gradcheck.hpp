#pragma once

// Finite differences of a scalar loss through the 64-bit network.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "patternid/embednet.hpp"
#include "patternid/mining.hpp"

namespace gradcheck {

using namespace patternid;

struct LayerResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // every step size crossed a ReLU or hinge kink
  double worst = 0.0;
};

/// Loss of the embeddings plus an identifier of the piecewise region
/// (active-term count) used to detect kink crossings.
using Objective = std::function<std::pair<double, std::size_t>(const RowMatrix<double>&)>;
using Upstream = std::function<RowMatrix<double>(const RowMatrix<double>&)>;

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

inline std::vector<bool> relu_pattern(const ForwardCache<double>& cache) {
  std::vector<bool> mask;
  for (const auto& a : cache.activations) {
    for (Index i = 0; i < a.size(); ++i) mask.push_back(a.data()[i] > 0.0);
  }
  return mask;
}

/// Checks min(per_layer, size) random coordinates in every tensor, drawing
/// replacements for coordinates skipped at a kink.
inline std::vector<LayerResult> check(const Parameters<double>& params, const ModelConfig& config,
                                      const Tensor<double>& batch, const Objective& objective,
                                      const Upstream& upstream, std::size_t per_layer, std::uint64_t seed,
                                      double h = 1e-3) {
  ForwardCache<double> cache;
  const RowMatrix<double> e = forward(params, config, batch, &cache);
  const Gradients<double> grads = backward(params, config, cache, upstream(e));

  Rng rng(seed);
  std::vector<LayerResult> out;
  Parameters<double> probe = params;
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    LayerResult r;
    r.name = params.tensors[t].name;
    const Index n = params.tensors[t].value.size();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    for (Index c : coords) {
      if (r.checked == per_layer) break;
      const double original = params.tensors[t].value[c];
      // Fourth-order central stencil at +-step and +-2 step. A step that
      // crosses a kink is retried at a tenth of its size, twice.
      double numeric = 0.0;
      bool crossed = true;
      for (double step = h; crossed && step >= h / 100; step /= 10) {
        double values[4];
        std::size_t region = 0;
        std::vector<bool> pattern;
        crossed = false;
        const double offsets[4] = {step, -step, 2 * step, -2 * step};
        for (int s = 0; s < 4 && !crossed; ++s) {
          ForwardCache<double> probe_cache;
          probe.tensors[t].value[c] = original + offsets[s];
          const auto [loss, active] = objective(forward(probe, config, batch, &probe_cache));
          values[s] = loss;
          auto mask = relu_pattern(probe_cache);
          if (s == 0) {
            region = active;
            pattern = std::move(mask);
          } else if (active != region || mask != pattern) {
            crossed = true;
          }
        }
        if (!crossed) numeric = (8 * (values[0] - values[1]) - (values[2] - values[3])) / (12 * step);
      }
      probe.tensors[t].value[c] = original;
      if (crossed) {
        ++r.skipped;
        continue;
      }
      r.worst = std::max(r.worst, relative_error(grads.tensors[t].value[c], numeric));
      ++r.checked;
    }
    out.push_back(r);
  }
  return out;
}

/// A small four-block network whose every weight tensor has >= 200 entries.
inline ModelConfig small_config(bool normalize) {
  ModelConfig c;
  c.channels = {32, 8, 8, 8};
  c.embedding_dim = 32;
  c.l2_normalize = normalize;
  return c;
}

inline Tensor<double> random_batch(Index b, Index size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t({b, 1, size, size});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

inline Parameters<double> random_params(const ModelConfig& config, std::uint64_t seed) {
  auto p = init_params(config, seed).cast<double>();
  // Non-zero biases so their gradients are exercised off the origin.
  Rng rng(seed ^ 0xb1a5);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& t : p.tensors) {
    if (t.name.ends_with(".bias")) {
      for (Index i = 0; i < t.value.size(); ++i) t.value[i] = n(rng);
    }
  }
  return p;
}

struct Suite {
  std::vector<LayerResult> layers;
  std::string label;
};

/// Triplet (both negative anchors) and contrastive losses, with and without
/// normalization, on a labelled batch of 3 classes x 2.
inline std::vector<Suite> full_suite(std::size_t per_layer, std::uint64_t seed) {
  const Labels labels{0, 0, 1, 1, 2, 2};
  std::vector<Suite> suites;
  for (bool normalize : {false, true}) {
    const auto config = small_config(normalize);
    const auto params = random_params(config, seed);
    const auto batch = random_batch(6, 16, seed + 1);
    const RowMatrix<double> e0 = forward(params, config, batch);
    // Fix the mined set at the base point. Margins just clear the largest
    // distance so every term is active; larger ones only inflate the loss and
    // with it the round-off in the differences.
    const RowMatrix<double> d0 = pairwise_sq_distances(e0);
    const double margin = d0.maxCoeff() + 0.5;
    const auto triplets = mine_semi_hard(d0, labels, margin);
    for (auto anchor : {NegativeAnchor::kAnchor, NegativeAnchor::kPositive}) {
      auto objective = [&, anchor](const RowMatrix<double>& e) {
        const auto r = triplet_loss(e, triplets, margin, anchor);
        return std::pair<double, std::size_t>{r.loss, r.active};
      };
      auto upstream = [&, anchor](const RowMatrix<double>& e) { return triplet_loss(e, triplets, margin, anchor).gradient; };
      suites.push_back({check(params, config, batch, objective, upstream, per_layer, seed + 2),
                        std::string("triplet/") + to_string(anchor) + (normalize ? "/l2" : "/raw")});
    }
    std::vector<PairIndex> pairs;
    for (Index i = 0; i < 6; ++i) {
      for (Index j = i + 1; j < 6; ++j) pairs.push_back({i, j, labels[i] == labels[j]});
    }
    const double cmargin = std::sqrt(d0.maxCoeff()) + 0.5;
    auto objective = [&](const RowMatrix<double>& e) {
      const auto r = contrastive_loss(e, pairs, cmargin);
      return std::pair<double, std::size_t>{r.loss, r.active};
    };
    auto upstream = [&](const RowMatrix<double>& e) { return contrastive_loss(e, pairs, cmargin).gradient; };
    suites.push_back({check(params, config, batch, objective, upstream, per_layer, seed + 3),
                      std::string("contrastive") + (normalize ? "/l2" : "/raw")});
  }
  return suites;
}

}  // namespace gradcheck
