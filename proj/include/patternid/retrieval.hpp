#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "patternid/checkpoint.hpp"
#include "patternid/image.hpp"

namespace patternid {

/// A loaded checkpoint plus the fingerprint of its bytes.
struct Model {
  ModelConfig config;
  Parameters<float> params;
  std::uint64_t fingerprint = 0;

  static Model from_bytes(const std::vector<std::uint8_t>& bytes);
  static Model load(const std::filesystem::path& path);

  std::vector<float> embed(const GrayImage& image) const;
};

struct EmbeddingRecord {
  std::string individual_id;
  std::string image_id;
  std::vector<float> vector;
  std::string source_path;
  std::int64_t added_at = 0;  // unix seconds

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

/// Ordered record store bound to one model fingerprint.
class EmbeddingDatabase {
 public:
  EmbeddingDatabase() = default;
  EmbeddingDatabase(Index embedding_dim, std::uint64_t fingerprint);

  Index embedding_dim() const { return dim_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<EmbeddingRecord>& records() const { return records_; }
  const EmbeddingRecord& record(std::size_t i) const { return records_.at(i); }

  bool has_individual(const std::string& individual_id) const { return by_individual_.contains(individual_id); }
  const std::vector<std::size_t>& positions_of(const std::string& individual_id) const;
  /// (individual_id, record count), sorted by id.
  std::vector<std::pair<std::string, std::size_t>> individuals() const;
  const EmbeddingRecord* find_image(const std::string& image_id) const;

  /// Appends; rejects a wrong dimension or a duplicate (individual_id, image_id).
  void add_record(EmbeddingRecord record);

  friend bool operator==(const EmbeddingDatabase& a, const EmbeddingDatabase& b) {
    return a.dim_ == b.dim_ && a.fingerprint_ == b.fingerprint_ && a.records_ == b.records_;
  }

 private:
  Index dim_ = 0;
  std::uint64_t fingerprint_ = 0;
  std::vector<EmbeddingRecord> records_;
  std::map<std::string, std::vector<std::size_t>> by_individual_;
};

struct Match {
  std::string individual_id;
  std::string image_id;
  double distance = 0.0;  // Euclidean
  std::size_t position = 0;

  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchResult {
  std::vector<Match> matches;  // ascending distance, ties by insertion order
  std::vector<float> query;
};

/// Search backend boundary; only the exact scan exists.
class NeighborSearch {
 public:
  virtual ~NeighborSearch() = default;
  virtual MatchResult query(const EmbeddingDatabase& db, std::span<const float> query, std::size_t k) const = 0;
};

class ExactScan final : public NeighborSearch {
 public:
  MatchResult query(const EmbeddingDatabase& db, std::span<const float> query, std::size_t k) const override;
};

/// Exact Euclidean k-nearest records; returns min(k, size) matches.
MatchResult knn_query(const EmbeddingDatabase& db, std::span<const float> query, std::size_t k);

struct ImageRef {
  std::string individual_id;
  std::string image_id;
  std::filesystem::path path;
};

struct BuildResult {
  EmbeddingDatabase db;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// One record per readable image, embedded with `model`. Unreadable images are
/// skipped and reported.
BuildResult build_database(const Model& model, const std::vector<ImageRef>& images, std::int64_t added_at = 0);

/// Add a query image to an existing individual's record.
const EmbeddingRecord& confirm_identity(EmbeddingDatabase& db, const Model& model, const GrayImage& image,
                                        const std::string& individual_id, const std::string& image_id,
                                        const std::string& source_path, std::int64_t added_at);

/// Start a new individual from a query image.
const EmbeddingRecord& create_individual(EmbeddingDatabase& db, const Model& model, const GrayImage& image,
                                         const std::string& individual_id, const std::string& image_id,
                                         const std::string& source_path, std::int64_t added_at);

// Container: "PIDB", u32 LE version, u64 LE header length, JSON header
// (embedding_dim, count, fingerprint, per-record metadata), then
// count x embedding_dim little-endian float32, row-major.
inline constexpr char kDatabaseMagic[4] = {'P', 'I', 'D', 'B'};
inline constexpr std::uint32_t kDatabaseVersion = 1;

std::vector<std::uint8_t> serialize_db(const EmbeddingDatabase& db);
EmbeddingDatabase parse_db(const std::vector<std::uint8_t>& bytes);
void save_db(const EmbeddingDatabase& db, const std::filesystem::path& path);
EmbeddingDatabase load_db(const std::filesystem::path& path);

/// Immutable database version handed to readers.
struct Snapshot {
  std::uint64_t version = 0;
  EmbeddingDatabase db;
};

/// Many readers, one writer. Readers grab the current snapshot pointer; a
/// writer copies, mutates, persists, and only then publishes the new version.
class DatabaseStore {
 public:
  DatabaseStore(EmbeddingDatabase db, std::filesystem::path file);

  std::shared_ptr<const Snapshot> snapshot() const;

  /// Applies `mutate` to a copy, writes it to disk, then publishes it.
  std::shared_ptr<const Snapshot> update(const std::function<void(EmbeddingDatabase&)>& mutate);

 private:
  std::filesystem::path file_;
  std::mutex writer_;
  std::shared_ptr<const Snapshot> current_;
};

}  // namespace patternid
