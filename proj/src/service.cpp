#include "patternid/service.hpp"

#include <httplib.h>

#include <ctime>
#include <iostream>
#include <random>

#include "patternid/error.hpp"
#include "patternid/hash.hpp"
#include "patternid/png.hpp"
#include "patternid/random.hpp"

namespace patternid {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ApiResponse error_response(int status, const std::string& message) { return {status, {{"error", message}}}; }

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return id != "." && id != "..";
}

}  // namespace

ReviewService::ReviewService(Model model, EmbeddingDatabase db, ServiceOptions options)
    : model_(std::move(model)), options_(std::move(options)), store_(std::move(db), options_.database) {
  if (store_.snapshot()->db.fingerprint() != model_.fingerprint) {
    throw FingerprintMismatch("database " + options_.database.string() + " was built with model " +
                              to_hex(store_.snapshot()->db.fingerprint()) + ", service model is " +
                              to_hex(model_.fingerprint));
  }
  const fs::path base = options_.database.empty() ? fs::temp_directory_path() : options_.database.parent_path();
  if (options_.image_store.empty()) options_.image_store = base / "confirmed";
  if (options_.pending_dir.empty()) options_.pending_dir = base / "pending";
  fs::create_directories(options_.pending_dir);
  fs::create_directories(options_.image_store);
  token_salt_ = std::random_device{}() ^ (static_cast<std::uint64_t>(std::time(nullptr)) << 20);
}

ReviewService::~ReviewService() = default;

ApiResponse ReviewService::health() const {
  const auto snap = store_.snapshot();
  return {200, {{"version", kVersion}, {"db_version", snap->version}, {"record_count", snap->db.size()}}};
}

ApiResponse ReviewService::individuals() const {
  const auto snap = store_.snapshot();
  json list = json::array();
  for (const auto& [id, count] : snap->db.individuals()) list.push_back({{"individual_id", id}, {"image_count", count}});
  return {200, list};
}

std::optional<std::vector<std::uint8_t>> ReviewService::image_png(const std::string& image_id) const {
  const auto snap = store_.snapshot();
  const EmbeddingRecord* record = snap->db.find_image(image_id);
  if (!record) return std::nullopt;
  try {
    return encode_png(read_pgm(record->source_path));
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::string ReviewService::new_token() {
  std::lock_guard lock(pending_mutex_);
  const std::uint64_t n = ++token_counter_;
  return to_hex(mix64(token_salt_ ^ n)) + to_hex(n);
}

ApiResponse ReviewService::query(const std::vector<std::uint8_t>& image_bytes, std::size_t k) {
  if (k == 0) return error_response(400, "k must be >= 1");
  GrayImage image;
  try {
    image = decode_image(image_bytes);
  } catch (const Error& e) {
    return error_response(400, e.what());
  }
  std::vector<float> embedding;
  try {
    embedding = model_.embed(image);
  } catch (const Error& e) {
    return error_response(422, e.what());
  }
  const auto snap = store_.snapshot();
  const MatchResult result = knn_query(snap->db, embedding, k);
  const std::string token = new_token();
  json candidates = json::array();
  for (std::size_t i = 0; i < result.matches.size(); ++i) {
    const auto& m = result.matches[i];
    candidates.push_back({{"rank", i + 1},
                          {"individual_id", m.individual_id},
                          {"image_id", m.image_id},
                          {"distance", m.distance},
                          {"thumbnail", "/api/image/" + m.image_id}});
  }
  json body{{"query_token", token}, {"db_version", snap->version}, {"k", k}, {"candidates", candidates}};
  write_pgm(options_.pending_dir / (token + ".pgm"), image);
  {
    std::lock_guard lock(pending_mutex_);
    pending_[token] = Pending{std::move(image), body, std::chrono::steady_clock::now()};
  }
  return {200, body};
}

ApiResponse ReviewService::pending_query(const std::string& token) const {
  std::lock_guard lock(pending_mutex_);
  auto it = pending_.find(token);
  if (it == pending_.end()) return error_response(404, "unknown query token");
  if (std::chrono::steady_clock::now() - it->second.created > options_.token_ttl) {
    return error_response(410, "query token expired; submit the image again");
  }
  return {200, it->second.response};
}

std::optional<ReviewService::Pending> ReviewService::take_pending(const std::string& token, ApiResponse& error) {
  std::lock_guard lock(pending_mutex_);
  auto it = pending_.find(token);
  if (it == pending_.end()) {
    error = error_response(404, "unknown query token");
    return std::nullopt;
  }
  if (std::chrono::steady_clock::now() - it->second.created > options_.token_ttl) {
    pending_.erase(it);
    std::error_code ec;
    fs::remove(options_.pending_dir / (token + ".pgm"), ec);
    error = error_response(410, "query token expired; submit the image again");
    return std::nullopt;
  }
  Pending p = std::move(it->second);
  pending_.erase(it);
  return p;
}

ApiResponse ReviewService::commit(const std::string& token, const std::string& individual_id, bool create_new) {
  if (!valid_id(individual_id)) return error_response(400, "invalid individual id '" + individual_id + "'");
  {
    const auto snap = store_.snapshot();
    if (create_new && snap->db.has_individual(individual_id)) {
      return error_response(409, "individual '" + individual_id + "' already exists");
    }
    if (!create_new && !snap->db.has_individual(individual_id)) {
      return error_response(404, "unknown individual '" + individual_id + "'");
    }
  }
  ApiResponse error;
  auto pending = take_pending(token, error);
  if (!pending) return error;

  const std::string image_id = "q_" + token;
  const fs::path dir = options_.image_store / individual_id;
  const fs::path path = dir / (image_id + ".pgm");
  try {
    fs::create_directories(dir);
    write_pgm(path, pending->image);
    const auto snap = store_.update([&](EmbeddingDatabase& db) {
      const auto now = static_cast<std::int64_t>(std::time(nullptr));
      if (create_new) {
        create_individual(db, model_, pending->image, individual_id, image_id, path.string(), now);
      } else {
        confirm_identity(db, model_, pending->image, individual_id, image_id, path.string(), now);
      }
    });
    std::error_code ec;
    fs::remove(options_.pending_dir / (token + ".pgm"), ec);
    const auto& record = snap->db.records().back();
    if (create_new) return {200, {{"individual_id", individual_id}, {"db_version", snap->version}}};
    return {200,
            {{"new_record",
              {{"individual_id", record.individual_id},
               {"image_id", record.image_id},
               {"source_path", record.source_path},
               {"added_at", record.added_at}}},
             {"db_version", snap->version}}};
  } catch (const Error& e) {
    std::error_code ec;
    fs::remove(path, ec);
    // Give the token back so the reviewer can retry.
    {
      std::lock_guard lock(pending_mutex_);
      pending_.emplace(token, std::move(*pending));
    }
    const int status = dynamic_cast<const FingerprintMismatch*>(&e) ? 409 : 400;
    return error_response(status, e.what());
  }
}

ApiResponse ReviewService::confirm(const std::string& token, const std::string& individual_id) {
  return commit(token, individual_id, false);
}

ApiResponse ReviewService::create(const std::string& token, const std::string& new_individual_id) {
  return commit(token, new_individual_id, true);
}

namespace {

void reply(httplib::Response& res, const ApiResponse& api) {
  res.status = api.status;
  res.set_content(api.body.dump(), "application/json");
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  try {
    return json::parse(req.body);
  } catch (const json::exception&) {
    reply(res, error_response(400, "request body must be JSON"));
    return std::nullopt;
  }
}

std::string string_field(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body.at(key).is_string()) return {};
  return body.at(key).get<std::string>();
}

}  // namespace

void ReviewService::install_routes(httplib::Server& server) {
  server.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) { reply(res, health()); });
  server.Get("/api/individuals", [this](const httplib::Request&, httplib::Response& res) { reply(res, individuals()); });
  server.Get(R"(/api/image/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto png = image_png(req.matches[1]);
    if (!png) return reply(res, error_response(404, "unknown image"));
    res.set_content(reinterpret_cast<const char*>(png->data()), png->size(), "image/png");
  });
  server.Get(R"(/api/query/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, pending_query(req.matches[1]));
  });
  server.Post("/api/query", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_file("image")) return reply(res, error_response(400, "multipart field 'image' is required"));
    std::string k_text;
    if (req.has_file("k")) {
      k_text = req.get_file_value("k").content;
    } else if (req.has_param("k")) {
      k_text = req.get_param_value("k");
    }
    std::size_t k = options_.default_k;
    if (!k_text.empty()) {
      try {
        k = std::stoul(k_text);
      } catch (const std::exception&) {
        return reply(res, error_response(400, "k must be a positive integer"));
      }
    }
    const auto& content = req.get_file_value("image").content;
    reply(res, query(std::vector<std::uint8_t>(content.begin(), content.end()), k));
  });
  server.Post("/api/confirm", [this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req, res);
    if (!body) return;
    reply(res, confirm(string_field(*body, "query_token"), string_field(*body, "individual_id")));
  });
  server.Post("/api/individuals", [this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req, res);
    if (!body) return;
    reply(res, create(string_field(*body, "query_token"), string_field(*body, "new_individual_id")));
  });
  if (!options_.static_dir.empty() && fs::is_directory(options_.static_dir)) {
    server.set_mount_point("/", options_.static_dir.string());
  }
}

int serve(ReviewService& service, const std::string& host, int port) {
  httplib::Server server;
  service.install_routes(server);
  if (!server.bind_to_port(host, port)) {
    std::cerr << "cannot bind " << host << ":" << port << "\n";
    return 4;
  }
  std::cerr << "serving on http://" << host << ":" << port << "\n";
  return server.listen_after_bind() ? 0 : 4;
}

}  // namespace patternid
