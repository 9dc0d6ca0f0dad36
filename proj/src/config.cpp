#include "patternid/config.hpp"

#include <fstream>
#include <set>

#include "patternid/error.hpp"

namespace patternid {

using nlohmann::json;

namespace {

// A JSON object whose keys must all be consumed; leftovers are typos.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  template <typename Parse, typename T>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string text;
    get(key, text);
    if (!text.empty()) {
      try {
        out = parse(text);
      } catch (const ConfigError& e) {
        throw ConfigError(path_ + "." + key + ": " + e.what());
      }
    }
  }

  std::optional<Section> child(const std::string& key) {
    seen_.insert(key);
    if (!doc_.contains(key)) return std::nullopt;
    return Section(doc_.at(key), path_ + "." + key);
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.contains(key)) throw ConfigError(path_ + "." + key + ": unknown key");
    }
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void rethrow_with_path(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    throw ConfigError(what.rfind(path, 0) == 0 ? what : path + ": " + what);
  }
}

}  // namespace

json to_json(const ModelConfig& config) {
  return {{"channels", config.channels},
          {"embedding_dim", config.embedding_dim},
          {"l2_normalize", config.l2_normalize},
          {"input_channels", config.input_channels},
          {"preprocessing", config.preprocessing}};
}

namespace {

void read_model(Section& s, ModelConfig& m) {
  s.get("channels", m.channels);
  s.get("embedding_dim", m.embedding_dim);
  s.get("l2_normalize", m.l2_normalize);
  s.get("input_channels", m.input_channels);
  s.get("preprocessing", m.preprocessing);
  s.finish();
  rethrow_with_path(s.path(), [&] { m.validate(); });
}

}  // namespace

ModelConfig model_config_from_json(const json& doc, const std::string& path) {
  ModelConfig m;
  Section s(doc, path);
  read_model(s, m);
  return m;
}

void RunConfig::validate() const {
  rethrow_with_path("corpus", [&] { corpus.validate(); });
  train.validate();
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  return {
      {"corpus",
       {{"root", c.corpus.root.string()},
        {"individuals", c.corpus.individuals},
        {"views", c.corpus.views},
        {"image_size", {c.corpus.height, c.corpus.width}},
        {"seed", c.corpus.seed},
        {"folds", c.corpus.folds},
        {"view_level", to_string(c.corpus.view_level)},
        {"view_flips", c.corpus.view_flips},
        {"min_spots", c.corpus.pattern.min_spots},
        {"max_spots", c.corpus.pattern.max_spots},
        {"radius_min", c.corpus.pattern.radius_min},
        {"radius_max", c.corpus.pattern.radius_max}}},
      {"model", to_json(t.model)},
      {"mining",
       {{"strategy", to_string(t.mining.strategy)},
        {"margin", t.mining.margin},
        {"include_hard_negatives", t.mining.include_hard_negatives},
        {"negative_anchor", to_string(t.mining.negative_anchor)},
        {"loss", to_string(t.mining.loss)},
        {"contrastive_margin", t.mining.contrastive_margin}}},
      {"train",
       {{"steps", t.steps},
        {"seed", t.seed},
        {"P", t.batch.classes},
        {"K", t.batch.per_class},
        {"augmentation", to_string(t.augmentation)},
        {"learning_rate", t.adam.learning_rate},
        {"lr_schedule", to_string(t.lr_schedule)},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"epsilon", t.adam.epsilon},
        {"eval_every", t.eval_every},
        {"fold", t.fold}}},
      {"eval", to_json(t.eval)},
      {"paths",
       {{"checkpoint", c.checkpoint.string()},
        {"train_log", c.train_log.string()},
        {"database", c.database.string()},
        {"report", c.report.string()}}},
  };
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  Section root(doc, "config");
  if (auto s = root.child("corpus")) {
    std::string rootdir;
    s->get("root", rootdir);
    if (!rootdir.empty()) c.corpus.root = rootdir;
    s->get("individuals", c.corpus.individuals);
    s->get("views", c.corpus.views);
    std::vector<Index> size{c.corpus.height, c.corpus.width};
    s->get("image_size", size);
    if (size.size() != 2) throw ConfigError("config.corpus.image_size: expected [height, width]");
    c.corpus.height = size[0];
    c.corpus.width = size[1];
    s->get("seed", c.corpus.seed);
    s->get("folds", c.corpus.folds);
    s->get_enum("view_level", c.corpus.view_level, parse_augment_level);
    s->get("view_flips", c.corpus.view_flips);
    s->get("min_spots", c.corpus.pattern.min_spots);
    s->get("max_spots", c.corpus.pattern.max_spots);
    s->get("radius_min", c.corpus.pattern.radius_min);
    s->get("radius_max", c.corpus.pattern.radius_max);
    s->finish();
  }
  if (auto s = root.child("model")) read_model(*s, c.train.model);
  if (auto s = root.child("mining")) {
    auto& m = c.train.mining;
    s->get_enum("strategy", m.strategy, parse_mining_strategy);
    s->get("margin", m.margin);
    s->get("include_hard_negatives", m.include_hard_negatives);
    s->get_enum("negative_anchor", m.negative_anchor, parse_negative_anchor);
    s->get_enum("loss", m.loss, parse_loss_kind);
    s->get("contrastive_margin", m.contrastive_margin);
    s->finish();
  }
  if (auto s = root.child("train")) {
    auto& t = c.train;
    s->get("steps", t.steps);
    s->get("seed", t.seed);
    s->get("P", t.batch.classes);
    s->get("K", t.batch.per_class);
    s->get_enum("augmentation", t.augmentation, parse_augment_level);
    s->get("learning_rate", t.adam.learning_rate);
    s->get_enum("lr_schedule", t.lr_schedule, parse_lr_schedule);
    s->get("beta1", t.adam.beta1);
    s->get("beta2", t.adam.beta2);
    s->get("epsilon", t.adam.epsilon);
    s->get("eval_every", t.eval_every);
    s->get("fold", t.fold);
    s->finish();
  }
  if (auto s = root.child("eval")) {
    auto& e = c.train.eval;
    s->get("gallery_matches", e.gallery_matches);
    s->get("repetitions", e.repetitions);
    s->get("k", e.k_values);
    s->get("seed", e.seed);
    s->finish();
  }
  if (auto s = root.child("paths")) {
    std::string text;
    auto path = [&](const char* key, std::filesystem::path& out) {
      text.clear();
      s->get(key, text);
      if (!text.empty()) out = text;
    };
    path("checkpoint", c.checkpoint);
    path("train_log", c.train_log);
    path("database", c.database);
    path("report", c.report);
    s->finish();
  }
  root.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return run_config_from_json(doc);
}

}  // namespace patternid
