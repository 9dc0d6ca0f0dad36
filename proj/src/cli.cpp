#include "patternid/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "patternid/config.hpp"
#include "patternid/error.hpp"
#include "patternid/hash.hpp"
#include "patternid/png.hpp"
#include "patternid/retrieval.hpp"
#include "patternid/service.hpp"
#include "patternid/trainer.hpp"

namespace patternid {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig: return 2;
    case ErrorCategory::kData: return 3;
    case ErrorCategory::kRuntime: return 4;
  }
  return 4;
}

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("PATTERNID_SEED");
  if (!text || !*text) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto value = std::stoull(text, &used, 0);
    if (used != std::strlen(text)) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ConfigError(std::string("PATTERNID_SEED: not an unsigned integer: '") + text + "'");
  }
}

bool doc_has(const json& doc, const char* section, const char* key) {
  return doc.is_object() && doc.contains(section) && doc.at(section).is_object() && doc.at(section).contains(key);
}

// Layers: defaults < PATTERNID_SEED (seeds only) < config file < flags. The
// flags are applied by each command after this returns.
RunConfig base_config(const std::optional<fs::path>& path) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file " + path->string());
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(path->string() + ": invalid JSON: " + e.what());
    }
  }
  RunConfig config = run_config_from_json(doc);
  if (const auto seed = env_seed()) {
    if (!doc_has(doc, "corpus", "seed")) config.corpus.seed = *seed;
    if (!doc_has(doc, "train", "seed")) config.train.seed = *seed;
    if (!doc_has(doc, "eval", "seed")) config.train.eval.seed = *seed;
  }
  return config;
}

std::vector<int> parse_int_list(const std::string& text, const char* flag) {
  std::vector<int> out;
  try {
    if (const auto dots = text.find(".."); dots != std::string::npos) {
      const int lo = std::stoi(text.substr(0, dots));
      const int hi = std::stoi(text.substr(dots + 2));
      if (hi < lo) throw std::invalid_argument(text);
      for (int v = lo; v <= hi; ++v) out.push_back(v);
      return out;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  } catch (const std::exception&) {
    throw ConfigError(std::string(flag) + ": expected a list like 1,5,10 or a range like 1..5, got '" + text + "'");
  }
  if (out.empty()) throw ConfigError(std::string(flag) + ": empty list");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void emit_json(const json& report, const fs::path& path, std::ostream& out) {
  if (path.empty()) {
    out << report.dump(2) << "\n";
  } else {
    write_text(path, report.dump(2) + "\n");
  }
}

std::string embeddings_csv(const EmbeddingSet& set) {
  std::ostringstream out;
  out << "individual_id,image_id";
  for (Index d = 0; d < set.vectors.cols(); ++d) out << ",d" << d;
  out << "\n";
  char buf[32];
  for (Index i = 0; i < set.size(); ++i) {
    out << set.individual_ids[static_cast<std::size_t>(i)] << "," << set.image_ids[static_cast<std::size_t>(i)];
    for (Index d = 0; d < set.vectors.cols(); ++d) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(set.vectors(i, d)));
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

fs::path fold_path(const fs::path& path, int fold) {
  fs::path out = path;
  out.replace_filename(path.stem().string() + ".fold" + std::to_string(fold) + path.extension().string());
  return out;
}

struct Common {
  std::optional<fs::path> config;
};

struct GenerateArgs : Common {
  std::optional<fs::path> root;
  std::optional<int> individuals, views, folds, size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> view_level;
  std::optional<bool> view_flips;
};

struct TrainArgs : Common {
  std::optional<fs::path> corpus, checkpoint, log, report;
  std::optional<std::int64_t> steps, eval_every;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss, mining, augmentation, lr_schedule;
  std::optional<double> margin, learning_rate;
  std::optional<int> embedding_dim, fold;
  std::optional<bool> l2_normalize;
  bool all_folds = false;
};

struct EvalArgs : Common {
  std::optional<fs::path> checkpoint, corpus, report, export_embeddings, roc;
  std::optional<int> fold, m, repetitions;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> k, vary_m;
  bool traces = false;
};

struct EmbedArgs : Common {
  std::optional<fs::path> checkpoint, corpus, db;
  std::optional<int> fold;
  std::string split = "all";
};

struct MatchArgs : Common {
  std::optional<fs::path> checkpoint, db;
  fs::path image;
  std::size_t k = 10;
};

struct ServeArgs : Common {
  std::optional<fs::path> checkpoint, db, static_dir, pending;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  RunConfig rc = base_config(a.config);
  auto& c = rc.corpus;
  if (a.root) c.root = *a.root;
  if (a.individuals) c.individuals = *a.individuals;
  if (a.views) c.views = *a.views;
  if (a.folds) c.folds = *a.folds;
  if (a.size) c.height = c.width = *a.size;
  if (a.seed) c.seed = *a.seed;
  if (a.view_level) c.view_level = parse_augment_level(*a.view_level);
  if (a.view_flips) c.view_flips = *a.view_flips;
  if (c.root.empty()) throw ConfigError("generate: --root (or corpus.root) is required");
  c.validate();
  const DatasetManifest m = build_dataset(c);
  out << "generated " << m.individuals.size() << " individuals x " << c.views << " views (" << m.image_count()
      << " images, " << m.height << "x" << m.width << ") in " << m.root.string() << "; folds " << m.folds
      << "; seed " << m.seed << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = base_config(a.config);
  auto& t = rc.train;
  if (a.corpus) rc.corpus.root = *a.corpus;
  if (a.checkpoint) rc.checkpoint = *a.checkpoint;
  if (a.log) rc.train_log = *a.log;
  if (a.report) rc.report = *a.report;
  if (a.steps) t.steps = *a.steps;
  if (a.eval_every) t.eval_every = *a.eval_every;
  if (a.seed) t.seed = *a.seed;
  if (a.loss) t.mining.loss = parse_loss_kind(*a.loss);
  if (a.mining) t.mining.strategy = parse_mining_strategy(*a.mining);
  if (a.augmentation) t.augmentation = parse_augment_level(*a.augmentation);
  if (a.margin) t.mining.margin = *a.margin;
  if (a.learning_rate) t.adam.learning_rate = *a.learning_rate;
  if (a.lr_schedule) t.lr_schedule = parse_lr_schedule(*a.lr_schedule);
  if (a.embedding_dim) t.model.embedding_dim = *a.embedding_dim;
  if (a.l2_normalize) t.model.l2_normalize = *a.l2_normalize;
  if (a.fold) t.fold = *a.fold;
  if (t.eval_every > t.steps) t.eval_every = 0;
  if (rc.corpus.root.empty()) throw ConfigError("train: --corpus (or corpus.root) is required");
  t.validate();
  const DatasetManifest manifest = load_manifest(rc.corpus.root);

  if (a.all_folds) {
    const CrossValReport report = run_crossval(manifest, t);
    for (std::size_t f = 0; f < report.checkpoints.size(); ++f) {
      const fs::path path = fold_path(rc.checkpoint, static_cast<int>(f));
      write_file_atomic(path, report.checkpoints[f]);
      out << "fold " << f << " checkpoint " << path.string() << " fingerprint "
          << to_hex(checkpoint_fingerprint(report.checkpoints[f])) << "\n";
    }
    json doc = to_json(report);
    doc["config"] = to_json(rc);
    emit_json(doc, rc.report, out);
    return 0;
  }

  ImageSource train_source(manifest);
  ImageSource eval_source(manifest);
  const TrainResult result = train(manifest, t, train_source, eval_source, {}, rc.checkpoint);
  write_file_atomic(rc.checkpoint, result.checkpoint);
  if (!rc.train_log.empty()) write_text(rc.train_log, result.log.to_ndjson());
  const auto& last = result.log.steps.back();
  out << "checkpoint " << rc.checkpoint.string() << " fingerprint " << to_hex(checkpoint_fingerprint(result.checkpoint))
      << " steps " << last.step << " final_loss " << last.loss << "\n";
  if (!result.log.evals.empty()) {
    const auto& e = result.log.evals.back();
    out << "eval step " << e.step << " auc " << e.auc << " tpr_at_far " << e.tpr_at_far;
    for (std::size_t i = 0; i < e.k_values.size(); ++i) out << " top" << e.k_values[i] << " " << e.topk[i];
    out << "\n";
  }
  return 0;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  RunConfig rc = base_config(a.config);
  auto& protocol = rc.train.eval;
  if (a.checkpoint) rc.checkpoint = *a.checkpoint;
  if (a.corpus) rc.corpus.root = *a.corpus;
  if (a.report) rc.report = *a.report;
  if (a.fold) rc.train.fold = *a.fold;
  if (a.m) protocol.gallery_matches = *a.m;
  if (a.repetitions) protocol.repetitions = *a.repetitions;
  if (a.seed) protocol.seed = *a.seed;
  if (a.k) protocol.k_values = parse_int_list(*a.k, "--k");
  if (rc.corpus.root.empty()) throw ConfigError("eval: --corpus (or corpus.root) is required");
  protocol.validate();
  std::vector<int> sweep_m;
  if (a.vary_m) sweep_m = parse_int_list(*a.vary_m, "--vary-m");

  const Model model = Model::load(rc.checkpoint);
  const DatasetManifest manifest = load_manifest(rc.corpus.root);
  const Split split = split_by_individual(manifest, rc.train.fold);
  ImageSource source(manifest);
  const EmbeddingSet train_set = embed_individuals(model.params, model.config, manifest, split.train, source);
  const EmbeddingSet test_set = embed_individuals(model.params, model.config, manifest, split.test, source);

  Labels labels;
  for (const auto& id : test_set.individual_ids) {
    labels.push_back(static_cast<int>(std::find(split.test.begin(), split.test.end(), id) - split.test.begin()));
  }
  const VerificationReport verification = verification_metrics(test_set.vectors, labels);
  const TopKReport topk = topk_accuracy(train_set, test_set, protocol);

  json report{{"model_fingerprint", to_hex(model.fingerprint)},
              {"fold", rc.train.fold},
              {"train_individuals", split.train.size()},
              {"test_individuals", split.test.size()},
              {"protocol", to_json(protocol)},
              {"verification", to_json(verification)},
              {"topk", to_json(topk, a.traces)}};
  if (!sweep_m.empty()) report["gallery_sweep"] = to_json(vary_gallery_size(train_set, test_set, sweep_m, protocol));
  if (a.roc) write_text(*a.roc, roc_csv(verification));
  if (a.export_embeddings) {
    EmbeddingSet all = train_set;
    all.individual_ids.insert(all.individual_ids.end(), test_set.individual_ids.begin(), test_set.individual_ids.end());
    all.image_ids.insert(all.image_ids.end(), test_set.image_ids.begin(), test_set.image_ids.end());
    all.vectors.resize(train_set.size() + test_set.size(), model.config.embedding_dim);
    all.vectors << train_set.vectors, test_set.vectors;
    write_text(*a.export_embeddings, embeddings_csv(all));
  }
  emit_json(report, rc.report, out);
  return 0;
}

int cmd_embed(const EmbedArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = base_config(a.config);
  if (a.checkpoint) rc.checkpoint = *a.checkpoint;
  if (a.corpus) rc.corpus.root = *a.corpus;
  if (a.db) rc.database = *a.db;
  if (a.fold) rc.train.fold = *a.fold;
  if (rc.corpus.root.empty()) throw ConfigError("embed: --corpus (or corpus.root) is required");

  const Model model = Model::load(rc.checkpoint);
  const DatasetManifest manifest = load_manifest(rc.corpus.root);
  std::vector<std::string> ids;
  if (a.split == "all") {
    ids = manifest.individual_ids();
  } else {
    const Split split = split_by_individual(manifest, rc.train.fold);
    ids = a.split == "train" ? split.train : split.test;
  }
  std::vector<ImageRef> images;
  for (const auto& id : ids) {
    for (const auto& image_id : manifest.individual(id).image_ids) {
      images.push_back({id, image_id, manifest.image_path(id, image_id)});
    }
  }
  const BuildResult built = build_database(model, images);
  for (const auto& w : built.warnings) err << "warning: " << w << "\n";
  save_db(built.db, rc.database);
  out << "database " << rc.database.string() << " records " << built.db.size() << " individuals "
      << built.db.individuals().size() << " skipped " << built.skipped << " fingerprint " << to_hex(model.fingerprint)
      << "\n";
  return 0;
}

int cmd_match(const MatchArgs& a, std::ostream& out) {
  RunConfig rc = base_config(a.config);
  if (a.checkpoint) rc.checkpoint = *a.checkpoint;
  if (a.db) rc.database = *a.db;
  if (a.k == 0) throw ConfigError("match: --k must be >= 1");
  const Model model = Model::load(rc.checkpoint);
  const EmbeddingDatabase db = load_db(rc.database);
  if (db.fingerprint() != model.fingerprint) {
    throw FingerprintMismatch("database " + rc.database.string() + " was built with model " + to_hex(db.fingerprint()) +
                              ", checkpoint " + rc.checkpoint.string() + " is " + to_hex(model.fingerprint) +
                              "; rebuild the database with `patternid embed`");
  }
  const GrayImage image = decode_image(read_file(a.image));
  const MatchResult result = knn_query(db, model.embed(image), a.k);
  out << "rank,individual_id,image_id,distance\n";
  char buf[32];
  for (std::size_t i = 0; i < result.matches.size(); ++i) {
    const auto& m = result.matches[i];
    std::snprintf(buf, sizeof buf, "%.6f", m.distance);
    out << i + 1 << "," << m.individual_id << "," << m.image_id << "," << buf << "\n";
  }
  return 0;
}

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  RunConfig rc = base_config(a.config);
  if (a.checkpoint) rc.checkpoint = *a.checkpoint;
  if (a.db) rc.database = *a.db;
  ServiceOptions options;
  options.database = rc.database;
  if (a.static_dir) options.static_dir = *a.static_dir;
  if (a.pending) options.pending_dir = *a.pending;
  ReviewService service(Model::load(rc.checkpoint), load_db(rc.database), options);
  out << "model " << to_hex(service.model().fingerprint) << " database " << rc.database.string() << " records "
      << service.snapshot()->db.size() << "\n";
  out.flush();
  return serve(service, a.host, a.port);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pattern-based individual identification: corpus, training, evaluation, retrieval", "patternid"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto add_config = [](CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  };

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Render a synthetic corpus");
  add_config(g, gen);
  g->add_option("--root,--out", gen.root, "Output directory (must not already hold a corpus)");
  g->add_option("--individuals", gen.individuals, "Number of individuals");
  g->add_option("--views", gen.views, "Images per individual");
  g->add_option("--folds", gen.folds, "Cross-validation folds");
  g->add_option("--size", gen.size, "Square image side in pixels");
  g->add_option("--seed", gen.seed, "Master seed");
  g->add_option("--view-level", gen.view_level, "Viewing-condition spread: small | extensive");
  g->add_option("--view-flips", gen.view_flips, "Allow mirrored corpus views (true | false)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train an embedding network");
  add_config(t, tr);
  t->add_option("--corpus", tr.corpus, "Corpus root (directory holding manifest.json)");
  t->add_option("--checkpoint,-o", tr.checkpoint, "Checkpoint output path");
  t->add_option("--log", tr.log, "Training log (NDJSON)");
  t->add_option("--report", tr.report, "Cross-validation report path (with --folds)");
  t->add_option("--steps", tr.steps, "Training steps");
  t->add_option("--eval-every", tr.eval_every, "Steps between held-out evaluations (0 disables)");
  t->add_option("--seed", tr.seed, "Master seed");
  t->add_option("--loss", tr.loss, "triplet | contrastive");
  t->add_option("--mining", tr.mining, "semi_hard | batch_hard | random");
  t->add_option("--augmentation", tr.augmentation, "small | extensive");
  t->add_option("--margin", tr.margin, "Triplet margin");
  t->add_option("--lr", tr.learning_rate, "Adam learning rate");
  t->add_option("--lr-schedule", tr.lr_schedule, "constant | cosine (annealed over --steps)");
  t->add_option("--embedding-dim", tr.embedding_dim, "Embedding dimension");
  t->add_option("--l2-normalize", tr.l2_normalize, "Normalize embeddings (true | false)");
  t->add_option("--fold", tr.fold, "Held-out fold");
  t->add_flag("--folds", tr.all_folds, "Train one model per fold and report mean and std");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out fold");
  add_config(e, ev);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint");
  e->add_option("--corpus", ev.corpus, "Corpus root");
  e->add_option("--fold", ev.fold, "Held-out fold");
  e->add_option("--m", ev.m, "Gallery images per test individual");
  e->add_option("--k", ev.k, "Comma-separated k values");
  e->add_option("--repetitions", ev.repetitions, "Gallery re-draws");
  e->add_option("--seed", ev.seed, "Protocol seed");
  e->add_option("--vary-m", ev.vary_m, "Gallery-size sweep, e.g. 1..5");
  e->add_option("--export-embeddings", ev.export_embeddings, "Write individual_id,image_id,d0.. CSV");
  e->add_option("--roc", ev.roc, "Write threshold,tpr,far CSV");
  e->add_option("--report", ev.report, "Report path (default stdout)");
  e->add_flag("--traces", ev.traces, "Include per-repetition gallery and query lists");

  EmbedArgs em;
  auto* b = app.add_subcommand("embed", "Build an embedding database from a corpus");
  add_config(b, em);
  b->add_option("--checkpoint", em.checkpoint, "Checkpoint");
  b->add_option("--corpus", em.corpus, "Corpus root");
  b->add_option("--db", em.db, "Database output path");
  b->add_option("--split", em.split, "all | train | test")->check(CLI::IsMember({"all", "train", "test"}));
  b->add_option("--fold", em.fold, "Fold used by --split");

  MatchArgs ma;
  auto* mt = app.add_subcommand("match", "Rank database records against a query image");
  add_config(mt, ma);
  mt->add_option("--checkpoint", ma.checkpoint, "Checkpoint");
  mt->add_option("--db", ma.db, "Database");
  mt->add_option("image,--image", ma.image, "Query image (PGM or PNG)")->required();
  mt->add_option("--k", ma.k, "Number of matches")->capture_default_str();

  ServeArgs sv;
  auto* s = app.add_subcommand("serve", "Run the review HTTP service");
  add_config(s, sv);
  s->add_option("--checkpoint", sv.checkpoint, "Checkpoint");
  s->add_option("--db", sv.db, "Database (the service is its only writer)");
  s->add_option("--host", sv.host, "Bind address")->capture_default_str();
  s->add_option("--port", sv.port, "Bind port")->capture_default_str();
  s->add_option("--static", sv.static_dir, "Built review UI bundle directory");
  s->add_option("--pending", sv.pending, "Pending query image directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h, out, err);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h, out, err);
  } catch (const CLI::CallForVersion& h) {
    return app.exit(h, out, err);
  } catch (const CLI::ParseError& p) {
    app.exit(p, out, err);
    return 2;
  }

  try {
    if (*g) return cmd_generate(gen, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    if (*b) return cmd_embed(em, out, err);
    if (*mt) return cmd_match(ma, out);
    if (*s) return cmd_serve(sv, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code(ex.category());
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 4;
  }
  return 2;
}

}  // namespace patternid
