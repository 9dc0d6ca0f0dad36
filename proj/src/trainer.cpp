#include "patternid/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "patternid/checkpoint.hpp"
#include "patternid/error.hpp"
#include "patternid/random.hpp"

namespace patternid {

using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamMining = 0x3131;

}  // namespace

const GrayImage& ImageSource::load(const std::string& individual_id, const std::string& image_id) {
  std::lock_guard lock(mutex_);
  ++reads_;
  individuals_read_.insert(individual_id);
  auto it = cache_.find(image_id);
  if (it == cache_.end()) {
    it = cache_.emplace(image_id, read_pgm(manifest_.image_path(individual_id, image_id))).first;
  }
  return it->second;
}

std::set<std::string> ImageSource::individuals_read() const {
  std::lock_guard lock(mutex_);
  return individuals_read_;
}

std::size_t ImageSource::read_count() const {
  std::lock_guard lock(mutex_);
  return reads_;
}

std::string to_string(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "constant"; }

LrSchedule parse_lr_schedule(const std::string& text) {
  if (text == "constant") return LrSchedule::kConstant;
  if (text == "cosine") return LrSchedule::kCosine;
  throw ConfigError("learning-rate schedule must be 'constant' or 'cosine', got '" + text + "'");
}

double scheduled_learning_rate(double base, LrSchedule schedule, std::int64_t step, std::int64_t steps) {
  if (schedule == LrSchedule::kConstant) return base;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(steps);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void TrainConfig::validate() const {
  if (steps <= 0) throw ConfigError("train.steps must be > 0");
  if (eval_every < 0 || eval_every > steps) throw ConfigError("train.eval_every must lie in [0, steps]");
  if (!(adam.learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw ConfigError("train.beta1/beta2 must lie in [0,1)");
  }
  if (!(adam.epsilon > 0)) throw ConfigError("train.epsilon must be > 0");
  try {
    batch.validate();
    model.validate();
    mining.validate();
    eval.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

std::string TrainLog::to_ndjson(bool include_timing) const {
  std::string out;
  for (const auto& s : steps) {
    json rec{{"type", "step"}, {"step", s.step},     {"loss", s.loss},
             {"loss_sum", s.loss_sum}, {"active", s.active}, {"mined", s.mined}};
    if (include_timing) rec["wall_ms"] = s.wall_ms;
    out += rec.dump() + "\n";
  }
  for (const auto& e : evals) {
    json topk = json::object();
    for (std::size_t i = 0; i < e.k_values.size(); ++i) topk[std::to_string(e.k_values[i])] = e.topk[i];
    out += json{{"type", "eval"}, {"step", e.step}, {"tpr_at_far", e.tpr_at_far}, {"auc", e.auc}, {"topk", topk}}
               .dump() +
           "\n";
  }
  return out;
}

double TrainLog::mean_loss(std::size_t first, std::size_t count) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = first; i < steps.size() && n < count; ++i, ++n) sum += steps[i].loss;
  return n ? sum / static_cast<double>(n) : 0.0;
}

RowMatrix<float> embed_image(const Parameters<float>& params, const ModelConfig& config, const GrayImage& image) {
  return forward(params, config, make_batch({image}));
}

EmbeddingSet embed_individuals(const Parameters<float>& params, const ModelConfig& config,
                               const DatasetManifest& manifest, const std::vector<std::string>& ids,
                               ImageSource& source) {
  EmbeddingSet set;
  std::vector<RowMatrix<float>> rows;
  for (const auto& id : ids) {
    for (const auto& image_id : manifest.individual(id).image_ids) {
      rows.push_back(embed_image(params, config, source.load(id, image_id)));
      set.individual_ids.push_back(id);
      set.image_ids.push_back(image_id);
    }
  }
  set.vectors.resize(static_cast<Index>(rows.size()), config.embedding_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) set.vectors.row(static_cast<Index>(i)) = rows[i].row(0);
  return set;
}

FoldEvaluation evaluate_fold(const Parameters<float>& params, const ModelConfig& config,
                             const DatasetManifest& manifest, int fold, const EvalProtocolConfig& protocol,
                             ImageSource& source) {
  const Split split = split_by_individual(manifest, fold);
  FoldEvaluation out;
  out.fold = fold;
  const EmbeddingSet train_set = embed_individuals(params, config, manifest, split.train, source);
  const EmbeddingSet test_set = embed_individuals(params, config, manifest, split.test, source);
  Labels labels;
  for (const auto& id : test_set.individual_ids) {
    labels.push_back(static_cast<int>(std::find(split.test.begin(), split.test.end(), id) - split.test.begin()));
  }
  out.verification = verification_metrics(test_set.vectors, labels);
  out.topk = topk_accuracy(train_set, test_set, protocol);
  return out;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& config, ImageSource& train_source,
                  ImageSource& eval_source, const TrainHooks& hooks, const std::filesystem::path& abort_checkpoint) {
  config.validate();
  const Split split = split_by_individual(manifest, config.fold);
  if (split.train.empty()) throw DataError("training split is empty");
  if (static_cast<int>(split.train.size()) < config.batch.classes) {
    throw DataError("training split has " + std::to_string(split.train.size()) + " individuals, fewer than P = " +
                    std::to_string(config.batch.classes));
  }

  TrainResult result;
  result.config = config.model;
  result.params = init_params(config.model, config.seed);
  OptimizerState state = make_optimizer_state(result.params, config.adam);
  Rng batch_rng(derive_seed(config.seed, kStreamBatch));
  Rng mining_rng(derive_seed(config.seed, kStreamMining));
  const std::uint64_t augment_seed = derive_seed(config.seed, kStreamAugment);

  auto abort = [&](const std::string& why, std::int64_t step) {
    if (!abort_checkpoint.empty()) save_checkpoint(result.params, config.model, abort_checkpoint);
    throw TrainingAborted("step " + std::to_string(step) + ": " + why +
                          (abort_checkpoint.empty() ? "" : "; last good checkpoint at " + abort_checkpoint.string()));
  };

  for (std::int64_t step = 1; step <= config.steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    const auto entries = sample_pk_batch(manifest, split.train, batch_rng, config.batch);
    if (hooks.on_batch) hooks.on_batch(step, entries);

    // Fresh augmentation per draw, from a per-(step, slot) substream.
    std::vector<GrayImage> images;
    Labels labels;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const GrayImage& raw = train_source.load(entries[i].individual_id, entries[i].image_id);
      Rng aug_rng(derive_seed(augment_seed, static_cast<std::uint64_t>(step), i));
      images.push_back(augment_image(raw, sample_view_params(aug_rng, config.augmentation, raw.rows(), raw.cols())));
      labels.push_back(entries[i].label);
    }

    ForwardCache<float> cache;
    RowMatrix<float> embeddings;
    try {
      embeddings = forward(result.params, config.model, make_batch(images), &cache);
    } catch (const NumericError& e) {
      abort(e.what(), step);
    }
    if (hooks.on_embeddings) hooks.on_embeddings(step, embeddings);

    LossResult<float> loss;
    std::size_t mined = 0;
    if (config.mining.loss == LossKind::kTriplet) {
      const auto triplets = mine(pairwise_sq_distances(embeddings), labels, config.mining, mining_rng);
      mined = triplets.size();
      loss = triplet_loss(embeddings, triplets, config.mining.margin, config.mining.negative_anchor);
    } else {
      const auto pairs = sample_pairs(labels, mining_rng);
      mined = pairs.size();
      loss = contrastive_loss(embeddings, pairs, config.mining.contrastive_margin);
    }
    if (!std::isfinite(loss.loss)) abort("non-finite loss", step);

    const auto grads = backward(result.params, config.model, cache, loss.gradient);
    state.config.learning_rate = scheduled_learning_rate(config.adam.learning_rate, config.lr_schedule, step, config.steps);
    try {
      adam_step(result.params, grads, state);
    } catch (const NumericError& e) {
      abort(e.what(), step);
    }

    StepRecord rec;
    rec.step = step;
    rec.loss_sum = loss.loss;
    rec.active = loss.active;
    rec.mined = mined;
    rec.loss = loss.active ? loss.loss / static_cast<double>(loss.active) : 0.0;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);

    const bool evaluate = config.eval_every > 0 && (step % config.eval_every == 0 || step == config.steps);
    if (evaluate && !split.test.empty()) {
      const auto ev = evaluate_fold(result.params, config.model, manifest, config.fold, config.eval, eval_source);
      result.log.evals.push_back(
          {step, ev.verification.tpr_at_far, ev.verification.auc, ev.topk.k_values, ev.topk.mean});
      if (hooks.on_eval && !hooks.on_eval(result.log.evals.back(), ev)) break;
    }
  }
  result.checkpoint = serialize_checkpoint(result.params, config.model);
  return result;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& config) {
  ImageSource train_source(manifest);
  ImageSource eval_source(manifest);
  return train(manifest, config, train_source, eval_source);
}

CrossValReport run_crossval(const DatasetManifest& manifest, const TrainConfig& config) {
  if (manifest.folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  CrossValReport report;
  ImageSource eval_source(manifest);
  for (int fold = 0; fold < manifest.folds; ++fold) {
    TrainConfig fold_config = config;
    fold_config.fold = fold;
    fold_config.eval_every = 0;
    try {
      ImageSource train_source(manifest);
      auto trained = train(manifest, fold_config, train_source, eval_source);
      report.folds.push_back(
          evaluate_fold(trained.params, trained.config, manifest, fold, config.eval, eval_source));
      report.checkpoints.push_back(std::move(trained.checkpoint));
    } catch (const Error& e) {
      throw Error(e.category(), "fold " + std::to_string(fold) + ": " + e.what());
    }
  }

  auto summarize = [&](const std::string& name, auto metric) {
    std::vector<double> values;
    for (const auto& f : report.folds) values.push_back(metric(f));
    const auto [mean, sd] = mean_std(values);
    report.summary.push_back({name, mean, sd});
  };
  for (std::size_t ki = 0; ki < config.eval.k_values.size(); ++ki) {
    summarize("top" + std::to_string(config.eval.k_values[ki]), [ki](const FoldEvaluation& f) { return f.topk.mean[ki]; });
  }
  summarize("auc", [](const FoldEvaluation& f) { return f.verification.auc; });
  summarize("tpr_at_far", [](const FoldEvaluation& f) { return f.verification.tpr_at_far; });
  return report;
}

json to_json(const CrossValReport& report) {
  json folds = json::array();
  for (const auto& f : report.folds) {
    folds.push_back({{"fold", f.fold},
                     {"auc", f.verification.auc},
                     {"tpr_at_far", f.verification.tpr_at_far},
                     {"topk", to_json(f.topk)}});
  }
  json summary = json::object();
  for (const auto& s : report.summary) summary[s.metric] = {{"mean", s.mean}, {"std", s.stddev}};
  return {{"folds", folds}, {"summary", summary}};
}

}  // namespace patternid
