#include "patternid/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json.hpp"
#include "patternid/error.hpp"
#include "patternid/hash.hpp"

namespace patternid {

using nlohmann::json;

Model Model::from_bytes(const std::vector<std::uint8_t>& bytes) {
  auto ck = parse_checkpoint(bytes);
  return {std::move(ck.config), std::move(ck.params), checkpoint_fingerprint(bytes)};
}

Model Model::load(const std::filesystem::path& path) { return from_bytes(read_file(path)); }

std::vector<float> Model::embed(const GrayImage& image) const {
  const auto row = forward(params, config, make_batch({image}));
  return {row.data(), row.data() + row.size()};
}

EmbeddingDatabase::EmbeddingDatabase(Index embedding_dim, std::uint64_t fingerprint)
    : dim_(embedding_dim), fingerprint_(fingerprint) {
  if (embedding_dim <= 0) throw ShapeError("embedding dimension must be positive");
}

const std::vector<std::size_t>& EmbeddingDatabase::positions_of(const std::string& individual_id) const {
  auto it = by_individual_.find(individual_id);
  if (it == by_individual_.end()) throw DataError("unknown individual '" + individual_id + "'");
  return it->second;
}

std::vector<std::pair<std::string, std::size_t>> EmbeddingDatabase::individuals() const {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& [id, positions] : by_individual_) out.emplace_back(id, positions.size());
  return out;
}

const EmbeddingRecord* EmbeddingDatabase::find_image(const std::string& image_id) const {
  for (const auto& r : records_) {
    if (r.image_id == image_id) return &r;
  }
  return nullptr;
}

void EmbeddingDatabase::add_record(EmbeddingRecord record) {
  if (static_cast<Index>(record.vector.size()) != dim_) {
    throw ShapeError("record dimension " + std::to_string(record.vector.size()) + " != database dimension " +
                     std::to_string(dim_));
  }
  if (auto it = by_individual_.find(record.individual_id); it != by_individual_.end()) {
    for (std::size_t pos : it->second) {
      if (records_[pos].image_id == record.image_id) {
        throw DataError("duplicate record (" + record.individual_id + ", " + record.image_id + ")");
      }
    }
  }
  by_individual_[record.individual_id].push_back(records_.size());
  records_.push_back(std::move(record));
}

MatchResult ExactScan::query(const EmbeddingDatabase& db, std::span<const float> query, std::size_t k) const {
  if (static_cast<Index>(query.size()) != db.embedding_dim()) {
    throw ShapeError("query dimension " + std::to_string(query.size()) + " != database dimension " +
                     std::to_string(db.embedding_dim()));
  }
  if (k == 0) throw ConfigError("k must be >= 1");
  const auto& records = db.records();
  std::vector<double> sq(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    double sum = 0.0;
    for (std::size_t d = 0; d < query.size(); ++d) {
      const double diff = static_cast<double>(query[d]) - static_cast<double>(records[i].vector[d]);
      sum += diff * diff;
    }
    sq[i] = sum;
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, records.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) { return sq[a] < sq[b] || (sq[a] == sq[b] && a < b); });
  MatchResult result;
  result.query.assign(query.begin(), query.end());
  for (std::size_t i = 0; i < take; ++i) {
    const auto& r = records[order[i]];
    result.matches.push_back({r.individual_id, r.image_id, std::sqrt(sq[order[i]]), order[i]});
  }
  return result;
}

MatchResult knn_query(const EmbeddingDatabase& db, std::span<const float> query, std::size_t k) {
  return ExactScan().query(db, query, k);
}

BuildResult build_database(const Model& model, const std::vector<ImageRef>& images, std::int64_t added_at) {
  BuildResult out;
  out.db = EmbeddingDatabase(model.config.embedding_dim, model.fingerprint);
  for (const auto& ref : images) {
    GrayImage pixels;
    try {
      pixels = read_pgm(ref.path);
    } catch (const DataError& e) {
      ++out.skipped;
      out.warnings.push_back(std::string("skipped unreadable image: ") + e.what());
      continue;
    }
    out.db.add_record({ref.individual_id, ref.image_id, model.embed(pixels), ref.path.string(), added_at});
  }
  return out;
}

namespace {

void require_fingerprint(const EmbeddingDatabase& db, const Model& model) {
  if (db.fingerprint() != model.fingerprint) {
    throw FingerprintMismatch("model fingerprint " + to_hex(model.fingerprint) + " does not match database " +
                              to_hex(db.fingerprint()) + "; the database must be rebuilt for this model");
  }
}

}  // namespace

const EmbeddingRecord& confirm_identity(EmbeddingDatabase& db, const Model& model, const GrayImage& image,
                                        const std::string& individual_id, const std::string& image_id,
                                        const std::string& source_path, std::int64_t added_at) {
  require_fingerprint(db, model);
  if (!db.has_individual(individual_id)) throw DataError("cannot confirm unknown individual '" + individual_id + "'");
  db.add_record({individual_id, image_id, model.embed(image), source_path, added_at});
  return db.records().back();
}

const EmbeddingRecord& create_individual(EmbeddingDatabase& db, const Model& model, const GrayImage& image,
                                         const std::string& individual_id, const std::string& image_id,
                                         const std::string& source_path, std::int64_t added_at) {
  require_fingerprint(db, model);
  if (individual_id.empty()) throw DataError("individual id must not be empty");
  if (db.has_individual(individual_id)) throw DataError("individual '" + individual_id + "' already exists");
  db.add_record({individual_id, image_id, model.embed(image), source_path, added_at});
  return db.records().back();
}

std::vector<std::uint8_t> serialize_db(const EmbeddingDatabase& db) {
  json records = json::array();
  for (const auto& r : db.records()) {
    records.push_back({{"individual_id", r.individual_id},
                       {"image_id", r.image_id},
                       {"source_path", r.source_path},
                       {"added_at", r.added_at}});
  }
  const json header{{"embedding_dim", db.embedding_dim()},
                    {"count", db.size()},
                    {"fingerprint", to_hex(db.fingerprint())},
                    {"records", records}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kDatabaseMagic, kDatabaseMagic + 4);
  auto put = [&out](auto value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(value));
  };
  put(kDatabaseVersion);
  put(static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& r : db.records()) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(r.vector.data());
    out.insert(out.end(), p, p + r.vector.size() * sizeof(float));
  }
  return out;
}

EmbeddingDatabase parse_db(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatabaseMagic, 4) != 0) {
    throw FormatError("bad database magic (expected PIDB)", 0);
  }
  if (bytes.size() < 16) throw FormatError("truncated database preamble", bytes.size());
  std::uint32_t version;
  std::uint64_t header_len;
  std::memcpy(&version, bytes.data() + 4, sizeof version);
  std::memcpy(&header_len, bytes.data() + 8, sizeof header_len);
  if (version != kDatabaseVersion) throw FormatError("unsupported database version " + std::to_string(version), 4);
  constexpr std::size_t kHeaderStart = 16;
  if (header_len > bytes.size() - kHeaderStart) throw FormatError("database header truncated", bytes.size());

  try {
    const json header =
        json::parse(bytes.begin() + kHeaderStart, bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderStart + header_len));
    const auto dim = header.at("embedding_dim").get<Index>();
    const auto count = header.at("count").get<std::size_t>();
    const auto& records = header.at("records");
    if (records.size() != count) throw FormatError("database record count mismatch", kHeaderStart);
    EmbeddingDatabase db(dim, from_hex(header.at("fingerprint").get<std::string>()));
    const std::size_t blob = kHeaderStart + header_len;
    const std::size_t row_bytes = static_cast<std::size_t>(dim) * sizeof(float);
    if (bytes.size() < blob + count * row_bytes) {
      throw FormatError("database vector data truncated", bytes.size());
    }
    if (bytes.size() != blob + count * row_bytes) throw FormatError("trailing bytes after database data", blob + count * row_bytes);
    for (std::size_t i = 0; i < count; ++i) {
      EmbeddingRecord r;
      r.individual_id = records[i].at("individual_id").get<std::string>();
      r.image_id = records[i].at("image_id").get<std::string>();
      r.source_path = records[i].at("source_path").get<std::string>();
      r.added_at = records[i].at("added_at").get<std::int64_t>();
      r.vector.resize(static_cast<std::size_t>(dim));
      std::memcpy(r.vector.data(), bytes.data() + blob + i * row_bytes, row_bytes);
      db.add_record(std::move(r));
    }
    return db;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed database header: ") + e.what(), kHeaderStart);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid database header: ") + e.what(), kHeaderStart);
  }
}

void save_db(const EmbeddingDatabase& db, const std::filesystem::path& path) { write_file_atomic(path, serialize_db(db)); }

EmbeddingDatabase load_db(const std::filesystem::path& path) { return parse_db(read_file(path)); }

DatabaseStore::DatabaseStore(EmbeddingDatabase db, std::filesystem::path file)
    : file_(std::move(file)), current_(std::make_shared<const Snapshot>(Snapshot{1, std::move(db)})) {}

std::shared_ptr<const Snapshot> DatabaseStore::snapshot() const { return std::atomic_load(&current_); }

std::shared_ptr<const Snapshot> DatabaseStore::update(const std::function<void(EmbeddingDatabase&)>& mutate) {
  std::lock_guard lock(writer_);
  const auto base = std::atomic_load(&current_);
  auto next = std::make_shared<Snapshot>(Snapshot{base->version + 1, base->db});
  mutate(next->db);
  if (!file_.empty()) save_db(next->db, file_);
  std::shared_ptr<const Snapshot> published = next;
  std::atomic_store(&current_, published);
  return published;
}

}  // namespace patternid
