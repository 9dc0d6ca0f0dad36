#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "json.hpp"
#include "patternid/retrieval.hpp"

namespace httplib {
class Server;
}

namespace patternid {

inline constexpr const char* kVersion = "0.1.0";

struct ServiceOptions {
  std::filesystem::path database;
  /// Where confirmed query images are filed; defaults to <database dir>/confirmed.
  std::filesystem::path image_store;
  /// Uploaded query images awaiting a decision; defaults to <database dir>/pending.
  std::filesystem::path pending_dir;
  std::filesystem::path static_dir;
  std::chrono::seconds token_ttl{24 * 3600};
  std::size_t default_k = 10;
};

/// HTTP-style status plus JSON body; the transport-independent result of every
/// endpoint.
struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// The confirmation-loop service: query, confirm, create. All reads run
/// against an immutable snapshot; every write is persisted before it is
/// acknowledged.
class ReviewService {
 public:
  ReviewService(Model model, EmbeddingDatabase db, ServiceOptions options);
  ~ReviewService();

  ApiResponse health() const;
  ApiResponse individuals() const;
  /// PNG bytes of a stored image, if the id is known and readable.
  std::optional<std::vector<std::uint8_t>> image_png(const std::string& image_id) const;
  ApiResponse query(const std::vector<std::uint8_t>& image_bytes, std::size_t k);
  ApiResponse pending_query(const std::string& token) const;
  ApiResponse confirm(const std::string& token, const std::string& individual_id);
  ApiResponse create(const std::string& token, const std::string& new_individual_id);

  std::shared_ptr<const Snapshot> snapshot() const { return store_.snapshot(); }
  const Model& model() const { return model_; }

  /// Registers every route (and the static bundle, if configured) on `server`.
  void install_routes(httplib::Server& server);

 private:
  struct Pending {
    GrayImage image;
    nlohmann::json response;
    std::chrono::steady_clock::time_point created;
  };

  std::string new_token();
  std::optional<Pending> take_pending(const std::string& token, ApiResponse& error);
  ApiResponse commit(const std::string& token, const std::string& individual_id, bool create_new);

  Model model_;
  ServiceOptions options_;
  DatabaseStore store_;
  mutable std::mutex pending_mutex_;
  std::map<std::string, Pending> pending_;
  std::uint64_t token_counter_ = 0;
  std::uint64_t token_salt_ = 0;
};

/// Blocks serving on host:port until the server is stopped.
int serve(ReviewService& service, const std::string& host, int port);

}  // namespace patternid
