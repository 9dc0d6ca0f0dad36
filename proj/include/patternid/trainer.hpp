#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "patternid/embednet.hpp"
#include "patternid/evaluation.hpp"
#include "patternid/mining.hpp"
#include "patternid/synthcorpus.hpp"

namespace patternid {

/// Where the trainer and evaluators get pixels from. Every read is recorded
/// so callers can audit which individuals were touched.
class ImageSource {
 public:
  explicit ImageSource(const DatasetManifest& manifest) : manifest_(manifest) {}

  const GrayImage& load(const std::string& individual_id, const std::string& image_id);
  std::set<std::string> individuals_read() const;
  std::size_t read_count() const;

 private:
  const DatasetManifest& manifest_;
  mutable std::mutex mutex_;
  std::map<std::string, GrayImage> cache_;
  std::set<std::string> individuals_read_;
  std::size_t reads_ = 0;
};

enum class LrSchedule { kConstant, kCosine };

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& text);

/// Learning rate for 1-based `step` of `steps`: the base rate throughout, or
/// cosine-annealed from the base rate at step 1 toward zero at the end.
double scheduled_learning_rate(double base, LrSchedule schedule, std::int64_t step, std::int64_t steps);

struct TrainConfig {
  std::int64_t steps = 2000;
  std::uint64_t seed = 0;
  BatchSpec batch;
  MiningConfig mining;
  AugmentLevel augmentation = AugmentLevel::kExtensive;
  ModelConfig model;
  AdamConfig adam;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  /// Steps between evaluations on the held-out fold; 0 disables them. The
  /// final step is always evaluated when eval_every > 0.
  std::int64_t eval_every = 500;
  int fold = 0;
  EvalProtocolConfig eval;

  void validate() const;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;      // loss_sum / active (0 when nothing is active)
  double loss_sum = 0.0;  // sum over mined terms
  std::size_t active = 0;
  std::size_t mined = 0;
  double wall_ms = 0.0;
};

struct EvalRecord {
  std::int64_t step = 0;
  double tpr_at_far = 0.0;
  double auc = 0.0;
  std::vector<int> k_values;
  std::vector<double> topk;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

  /// Newline-delimited JSON, one record per line.
  std::string to_ndjson(bool include_timing = true) const;
  double mean_loss(std::size_t first, std::size_t count) const;
};

struct FoldEvaluation {
  int fold = 0;
  VerificationReport verification;
  TopKReport topk;
};

struct TrainResult {
  ModelConfig config;
  Parameters<float> params;
  TrainLog log;
  std::vector<std::uint8_t> checkpoint;
};

struct TrainHooks {
  /// Called with each step's batch entries before images are read.
  std::function<void(std::int64_t, const std::vector<BatchEntry>&)> on_batch;
  /// Called with the embeddings each step mines from.
  std::function<void(std::int64_t, const RowMatrix<float>&)> on_embeddings;
  std::function<void(const StepRecord&)> on_step;
  /// Called after each held-out evaluation; returning false ends training
  /// early with the current parameters.
  std::function<bool(const EvalRecord&, const FoldEvaluation&)> on_eval;
};

/// Runs `steps` iterations of: P x K sampling, augmentation, forward, online
/// mining on the fresh embeddings, loss, backward, Adam. Training batches are
/// read through `train_source`; held-out evaluation through `eval_source`.
/// On a non-finite loss the last good checkpoint is written to
/// `abort_checkpoint` (when non-empty) and TrainingAborted is thrown.
TrainResult train(const DatasetManifest& manifest, const TrainConfig& config, ImageSource& train_source,
                  ImageSource& eval_source, const TrainHooks& hooks = {},
                  const std::filesystem::path& abort_checkpoint = {});

TrainResult train(const DatasetManifest& manifest, const TrainConfig& config);

/// Embeds one image (batch of one); the reference path for all stored
/// embeddings.
RowMatrix<float> embed_image(const Parameters<float>& params, const ModelConfig& config, const GrayImage& image);

EmbeddingSet embed_individuals(const Parameters<float>& params, const ModelConfig& config,
                               const DatasetManifest& manifest, const std::vector<std::string>& ids,
                               ImageSource& source);

/// Verification over all test-image pairs plus the gallery/query protocol.
FoldEvaluation evaluate_fold(const Parameters<float>& params, const ModelConfig& config,
                             const DatasetManifest& manifest, int fold, const EvalProtocolConfig& protocol,
                             ImageSource& source);

struct MetricSummary {
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
};

struct CrossValReport {
  std::vector<FoldEvaluation> folds;
  std::vector<std::vector<std::uint8_t>> checkpoints;
  std::vector<MetricSummary> summary;
};

/// Trains and evaluates one model per fold; summary is mean and sample std
/// over folds of top-k, AUC and TPR@FAR.
CrossValReport run_crossval(const DatasetManifest& manifest, const TrainConfig& config);

nlohmann::json to_json(const CrossValReport& report);

}  // namespace patternid
