#include "patternid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "patternid/error.hpp"
#include "patternid/random.hpp"

namespace patternid {

using nlohmann::json;

PairSets all_pairs(const Labels& labels) {
  PairSets sets;
  const auto n = static_cast<Index>(labels.size());
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const bool same = labels[i] == labels[j];
      (same ? sets.positive : sets.negative).push_back({i, j, same});
    }
  }
  return sets;
}

double euclidean(const float* a, const float* b, Index dim) {
  double sum = 0.0;
  for (Index k = 0; k < dim; ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

VerificationReport verification_metrics(const RowMatrix<float>& embeddings, const Labels& labels, double target_far) {
  if (static_cast<Index>(labels.size()) != embeddings.rows()) {
    throw ShapeError("verification: labels and embeddings differ in length");
  }
  const auto pairs = all_pairs(labels);
  if (pairs.positive.empty()) throw DataError("verification needs at least one positive pair");
  if (pairs.negative.empty()) throw DataError("verification needs at least one negative pair");

  const Index dim = embeddings.cols();
  auto distances = [&](const std::vector<PairIndex>& set) {
    std::vector<double> out;
    out.reserve(set.size());
    for (const auto& p : set) out.push_back(euclidean(embeddings.row(p.first).data(), embeddings.row(p.second).data(), dim));
    return out;
  };
  return verification_from_distances(distances(pairs.positive), distances(pairs.negative), target_far);
}

VerificationReport verification_from_distances(std::vector<double> pos, std::vector<double> neg, double target_far) {
  if (pos.empty()) throw DataError("verification needs at least one positive pair");
  if (neg.empty()) throw DataError("verification needs at least one negative pair");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  VerificationReport r;
  r.target_far = target_far;
  r.positive_pairs = pos.size();
  r.negative_pairs = neg.size();
  std::vector<double> grid;
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(grid));
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  r.thresholds.push_back(kBelowAllDistances);
  r.thresholds.insert(r.thresholds.end(), grid.begin(), grid.end());
  r.thresholds.push_back(std::numeric_limits<double>::infinity());

  const auto np = static_cast<double>(pos.size());
  const auto nn = static_cast<double>(neg.size());
  for (double t : r.thresholds) {
    const auto ta = std::upper_bound(pos.begin(), pos.end(), t) - pos.begin();
    const auto fa = std::upper_bound(neg.begin(), neg.end(), t) - neg.begin();
    r.tpr.push_back(static_cast<double>(ta) / np);
    r.far.push_back(static_cast<double>(fa) / nn);
  }
  for (std::size_t i = 1; i < r.thresholds.size(); ++i) {
    r.auc += (r.far[i] - r.far[i - 1]) * (r.tpr[i] + r.tpr[i - 1]) / 2.0;
  }
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    if (r.far[i] <= target_far) {
      r.tpr_at_far = r.tpr[i];
      r.threshold_at_far = r.thresholds[i];
    }
  }
  return r;
}

void EvalProtocolConfig::validate() const {
  if (gallery_matches < 1) throw ConfigError("eval.gallery_matches must be >= 1");
  if (repetitions < 1) throw ConfigError("eval.repetitions must be >= 1");
  if (k_values.empty()) throw ConfigError("eval.k must list at least one value");
  for (int k : k_values) {
    if (k < 1) throw ConfigError("eval.k values must be >= 1");
  }
}

double TopKReport::at(int k) const {
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    if (k_values[i] == k) return mean[i];
  }
  throw ConfigError("top-k report has no entry for k=" + std::to_string(k));
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

namespace {

struct Gallery {
  std::vector<int> owner;  // dense individual label per row
  std::vector<const float*> rows;
};

// 1-based rank of `truth` among the distinct gallery individuals ordered by
// their nearest record, with (distance, gallery position) ordering.
std::size_t individual_rank(const Gallery& gallery, const float* query, Index dim, int truth, int individual_count) {
  std::vector<double> best(static_cast<std::size_t>(individual_count), std::numeric_limits<double>::infinity());
  std::vector<std::size_t> best_pos(static_cast<std::size_t>(individual_count), std::numeric_limits<std::size_t>::max());
  for (std::size_t g = 0; g < gallery.rows.size(); ++g) {
    const double d = euclidean(query, gallery.rows[g], dim);
    const auto who = static_cast<std::size_t>(gallery.owner[g]);
    if (d < best[who]) {
      best[who] = d;
      best_pos[who] = g;
    }
  }
  const auto t = static_cast<std::size_t>(truth);
  std::size_t rank = 1;
  for (std::size_t i = 0; i < best.size(); ++i) {
    if (i == t || best_pos[i] == std::numeric_limits<std::size_t>::max()) continue;
    if (best[i] < best[t] || (best[i] == best[t] && best_pos[i] < best_pos[t])) ++rank;
  }
  return rank;
}

}  // namespace

TopKReport topk_accuracy(const EmbeddingSet& train, const EmbeddingSet& test, const EvalProtocolConfig& protocol) {
  protocol.validate();
  if (train.size() > 0 && test.size() > 0 && train.vectors.cols() != test.vectors.cols()) {
    throw ShapeError("train and test embeddings differ in dimension");
  }
  const Index dim = test.vectors.cols();

  std::map<std::string, int> label_of;
  for (const auto& id : train.individual_ids) label_of.emplace(id, 0);
  std::map<std::string, std::vector<Index>> test_rows;
  for (Index i = 0; i < test.size(); ++i) {
    label_of.emplace(test.individual_ids[static_cast<std::size_t>(i)], 0);
    test_rows[test.individual_ids[static_cast<std::size_t>(i)]].push_back(i);
  }
  int next = 0;
  for (auto& [id, label] : label_of) label = next++;
  for (const auto& [id, rows] : test_rows) {
    if (static_cast<int>(rows.size()) < protocol.gallery_matches + 1) {
      throw DataError("individual '" + id + "' has " + std::to_string(rows.size()) + " images; protocol needs m+1 = " +
                      std::to_string(protocol.gallery_matches + 1));
    }
  }

  TopKReport report;
  report.k_values = protocol.k_values;
  report.protocol = protocol;
  report.gallery_individuals = label_of.size();

  for (int rep = 0; rep < protocol.repetitions; ++rep) {
    Rng rng(derive_seed(protocol.seed, kStreamProtocol, static_cast<std::uint64_t>(rep)));
    Gallery gallery;
    for (Index i = 0; i < train.size(); ++i) {
      gallery.owner.push_back(label_of.at(train.individual_ids[static_cast<std::size_t>(i)]));
      gallery.rows.push_back(train.vectors.row(i).data());
    }
    RepetitionTrace trace;
    std::vector<Index> queries;
    for (const auto& [id, rows] : test_rows) {
      auto shuffled = rows;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      std::vector<std::string> drawn;
      for (std::size_t j = 0; j < shuffled.size(); ++j) {
        const Index row = shuffled[j];
        if (static_cast<int>(j) < protocol.gallery_matches) {
          gallery.owner.push_back(label_of.at(id));
          gallery.rows.push_back(test.vectors.row(row).data());
          drawn.push_back(test.image_ids[static_cast<std::size_t>(row)]);
        } else {
          queries.push_back(row);
        }
      }
      trace.gallery_images.emplace_back(id, std::move(drawn));
    }
    std::sort(queries.begin(), queries.end());
    trace.gallery_size = gallery.rows.size();

    std::vector<std::size_t> correct(protocol.k_values.size(), 0);
    for (Index q : queries) {
      trace.query_images.push_back(test.image_ids[static_cast<std::size_t>(q)]);
      const int truth = label_of.at(test.individual_ids[static_cast<std::size_t>(q)]);
      const std::size_t rank =
          individual_rank(gallery, test.vectors.row(q).data(), dim, truth, static_cast<int>(label_of.size()));
      for (std::size_t ki = 0; ki < protocol.k_values.size(); ++ki) {
        if (rank <= static_cast<std::size_t>(protocol.k_values[ki])) ++correct[ki];
      }
    }
    std::vector<double> acc;
    for (std::size_t c : correct) acc.push_back(queries.empty() ? 0.0 : static_cast<double>(c) / static_cast<double>(queries.size()));
    report.per_repetition.push_back(std::move(acc));
    report.traces.push_back(std::move(trace));
  }

  for (std::size_t ki = 0; ki < protocol.k_values.size(); ++ki) {
    std::vector<double> column;
    for (const auto& rep : report.per_repetition) column.push_back(rep[ki]);
    const auto [mean, sd] = mean_std(column);
    report.mean.push_back(mean);
    report.stddev.push_back(sd);
  }
  return report;
}

GallerySweep vary_gallery_size(const EmbeddingSet& train, const EmbeddingSet& test, const std::vector<int>& m_values,
                               const EvalProtocolConfig& base) {
  GallerySweep sweep;
  for (int m : m_values) {
    EvalProtocolConfig protocol = base;
    protocol.gallery_matches = m;
    sweep.gallery_matches.push_back(m);
    sweep.reports.push_back(topk_accuracy(train, test, protocol));
  }
  return sweep;
}

json to_json(const EvalProtocolConfig& protocol) {
  return {{"gallery_matches", protocol.gallery_matches},
          {"repetitions", protocol.repetitions},
          {"k", protocol.k_values},
          {"seed", protocol.seed}};
}

json to_json(const VerificationReport& report) {
  json thresholds = json::array();
  for (double t : report.thresholds) thresholds.push_back(std::isinf(t) ? json("inf") : json(t));
  return {{"thresholds", thresholds},
          {"tpr", report.tpr},
          {"far", report.far},
          {"auc", report.auc},
          {"target_far", report.target_far},
          {"tpr_at_far", report.tpr_at_far},
          {"threshold_at_far", report.threshold_at_far},
          {"far_rule", "largest threshold with FAR <= target, no interpolation"},
          {"positive_pairs", report.positive_pairs},
          {"negative_pairs", report.negative_pairs}};
}

json to_json(const TopKReport& report, bool include_traces) {
  json accuracy = json::array();
  for (std::size_t i = 0; i < report.k_values.size(); ++i) {
    accuracy.push_back({{"k", report.k_values[i]}, {"mean", report.mean[i]}, {"std", report.stddev[i]}});
  }
  json out{{"accuracy", accuracy},
           {"per_repetition", report.per_repetition},
           {"protocol", to_json(report.protocol)},
           {"gallery_individuals", report.gallery_individuals}};
  if (include_traces) {
    json traces = json::array();
    for (const auto& t : report.traces) {
      json gallery = json::object();
      for (const auto& [id, images] : t.gallery_images) gallery[id] = images;
      traces.push_back({{"gallery_images", gallery}, {"query_images", t.query_images}, {"gallery_size", t.gallery_size}});
    }
    out["traces"] = traces;
  }
  return out;
}

json to_json(const GallerySweep& sweep) {
  json rows = json::array();
  for (std::size_t i = 0; i < sweep.gallery_matches.size(); ++i) {
    rows.push_back({{"gallery_matches", sweep.gallery_matches[i]}, {"report", to_json(sweep.reports[i])}});
  }
  return rows;
}

std::string roc_csv(const VerificationReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "threshold,tpr,far\n";
  for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
    if (std::isinf(report.thresholds[i])) {
      out << "inf";
    } else {
      out << report.thresholds[i];
    }
    out << ',' << report.tpr[i] << ',' << report.far[i] << '\n';
  }
  return out.str();
}

}  // namespace patternid
