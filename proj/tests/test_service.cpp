#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "oracles.hpp"
#include "patternid/error.hpp"
#include "patternid/png.hpp"
#include "patternid/service.hpp"
#include "support.hpp"

// After Eigen: <resolv.h> defines a macro that collides with Eigen parameter names.
#include <httplib.h>

using namespace patternid;
using nlohmann::json;
using testing_support::TempDir;

namespace {

Model tiny_model(std::uint64_t seed = 1) {
  ModelConfig c;
  c.channels = {8, 8, 16, 16};
  c.embedding_dim = 16;
  return Model::from_bytes(serialize_checkpoint(init_params(c, seed), c));
}

GrayImage noise_image(std::uint64_t seed, Index size = 32) {
  Rng rng(seed);
  GrayImage g(size, size);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  return g;
}

// Database of 4 individuals x 3 noise images, stored as PGM files.
struct Fixture {
  TempDir dir;
  Model model = tiny_model();
  std::filesystem::path db_path = dir / "gallery.pidb";

  EmbeddingDatabase make_db() {
    std::vector<ImageRef> refs;
    std::filesystem::create_directories(dir / "images");
    for (int i = 0; i < 4; ++i) {
      for (int v = 0; v < 3; ++v) {
        const std::string image_id = "ind" + std::to_string(i) + "_v" + std::to_string(v);
        write_pgm(dir / "images" / (image_id + ".pgm"), noise_image(static_cast<std::uint64_t>(10 * i + v)));
        refs.push_back({"ind" + std::to_string(i), image_id, dir / "images" / (image_id + ".pgm")});
      }
    }
    auto db = build_database(model, refs).db;
    save_db(db, db_path);
    return db;
  }

  ServiceOptions options() const {
    ServiceOptions o;
    o.database = db_path;
    return o;
  }
};

std::vector<std::uint8_t> pgm_bytes(const GrayImage& g) { return encode_pgm(g); }

// Brute-force kNN against the first `count` records of an append-only database.
std::vector<oracle::Hit> knn_at(const EmbeddingDatabase& final_db, std::size_t count, const std::vector<float>& q,
                                std::size_t k) {
  EmbeddingDatabase prefix(final_db.embedding_dim(), final_db.fingerprint());
  for (std::size_t i = 0; i < count; ++i) prefix.add_record(final_db.record(i));
  return oracle::knn(prefix, q, k);
}

}  // namespace

TEST(Png, RoundTripAndSignatureDispatch) {
  const auto g = noise_image(5, 9);
  const auto png = encode_png(g);
  EXPECT_EQ(std::string(png.begin() + 1, png.begin() + 4), "PNG");
  EXPECT_TRUE(decode_png(png) == g);
  EXPECT_TRUE(decode_image(png) == g);
  EXPECT_TRUE(decode_image(encode_pgm(g)) == g);
  EXPECT_THROW(decode_image({1, 2, 3, 4}), Error);
}

TEST(ReviewService, RejectsDatabaseFromAnotherModel) {
  Fixture f;
  auto db = f.make_db();
  EXPECT_THROW(ReviewService(tiny_model(2), db, f.options()), FingerprintMismatch);
}

TEST(ReviewService, QueryReturnsExactRankingAndRemembersIt) {
  Fixture f;
  const auto db = f.make_db();
  ReviewService s(f.model, db, f.options());
  const auto health = s.health();
  EXPECT_EQ(health.body.at("version"), kVersion);
  EXPECT_EQ(health.body.at("db_version"), 1);
  EXPECT_EQ(health.body.at("record_count"), 12);

  const auto query = noise_image(99);
  const auto r = s.query(pgm_bytes(query), 5);
  ASSERT_EQ(r.status, 200) << r.body.dump();
  const auto expected = oracle::knn(db, f.model.embed(query), 5);
  const auto& candidates = r.body.at("candidates");
  ASSERT_EQ(candidates.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& rec = db.record(expected[i].position);
    EXPECT_EQ(candidates[i].at("rank"), i + 1);
    EXPECT_EQ(candidates[i].at("image_id"), rec.image_id);
    EXPECT_EQ(candidates[i].at("individual_id"), rec.individual_id);
    EXPECT_EQ(candidates[i].at("distance").get<double>(), expected[i].distance);
    EXPECT_EQ(candidates[i].at("thumbnail"), "/api/image/" + rec.image_id);
  }
  const std::string token = r.body.at("query_token");
  EXPECT_TRUE(std::filesystem::exists(f.dir / "pending" / (token + ".pgm")));
  const auto again = s.pending_query(token);
  EXPECT_EQ(again.status, 200);
  EXPECT_EQ(again.body, r.body);
  EXPECT_EQ(s.pending_query("ffff").status, 404);
  EXPECT_NE(s.query(pgm_bytes(query), 5).body.at("query_token"), token);
}

TEST(ReviewService, ConfirmPersistsBeforeAcknowledging) {
  Fixture f;
  ReviewService s(f.model, f.make_db(), f.options());
  const auto query = noise_image(77);
  const std::string token = s.query(pgm_bytes(query), 3).body.at("query_token");
  const auto r = s.confirm(token, "ind2");
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body.at("db_version"), 2);
  EXPECT_EQ(r.body.at("new_record").at("individual_id"), "ind2");
  EXPECT_GT(r.body.at("new_record").at("added_at").get<std::int64_t>(), 0);
  const std::string image_path = r.body.at("new_record").at("source_path");
  EXPECT_TRUE(read_pgm(image_path) == query);
  EXPECT_FALSE(std::filesystem::exists(f.dir / "pending" / (token + ".pgm")));

  // The file on disk already holds the acknowledged record.
  const auto on_disk = load_db(f.db_path);
  EXPECT_EQ(on_disk, s.snapshot()->db);
  EXPECT_EQ(on_disk.positions_of("ind2").size(), 4u);

  // Re-querying the same image finds the confirmed record first.
  const auto requery = s.query(pgm_bytes(query), 3);
  EXPECT_EQ(requery.body.at("candidates")[0].at("individual_id"), "ind2");
  EXPECT_EQ(requery.body.at("candidates")[0].at("distance"), 0.0);
  EXPECT_EQ(requery.body.at("db_version"), 2);

  EXPECT_EQ(s.confirm(token, "ind2").status, 404);  // tokens are single-use
  EXPECT_TRUE(s.image_png(r.body.at("new_record").at("image_id")).has_value());
}

TEST(ReviewService, CreateAndErrorPaths) {
  Fixture f;
  ReviewService s(f.model, f.make_db(), f.options());
  auto token = [&] { return s.query(pgm_bytes(noise_image(55)), 2).body.at("query_token").get<std::string>(); };

  const auto t1 = token();
  EXPECT_EQ(s.create(t1, "ind0").status, 409);
  EXPECT_EQ(s.create(t1, "../escape").status, 400);
  EXPECT_EQ(s.create(t1, "").status, 400);
  EXPECT_EQ(s.confirm(t1, "nobody").status, 404);
  // Rejected requests leave the token usable.
  const auto created = s.create(t1, "newcomer");
  ASSERT_EQ(created.status, 200) << created.body.dump();
  EXPECT_EQ(created.body.at("individual_id"), "newcomer");
  EXPECT_EQ(created.body.at("db_version"), 2);
  EXPECT_EQ(s.individuals().body.size(), 5u);
  EXPECT_EQ(s.individuals().body.back(), json({{"individual_id", "newcomer"}, {"image_count", 1}}));
  EXPECT_EQ(s.create("0123abcd", "other").status, 404);

  EXPECT_EQ(s.query({'n', 'o', 'p', 'e'}, 3).status, 400);
  EXPECT_EQ(s.query(pgm_bytes(noise_image(1, 8)), 3).status, 422);  // too small for four blocks
  EXPECT_EQ(s.query(pgm_bytes(noise_image(1)), 0).status, 400);
  EXPECT_FALSE(s.image_png("no_such_image").has_value());
  const auto png = s.image_png("ind1_v2");
  ASSERT_TRUE(png.has_value());
  EXPECT_TRUE(decode_png(*png) == noise_image(12));
}

TEST(ReviewService, ExpiredTokensAreGone) {
  Fixture f;
  auto options = f.options();
  options.token_ttl = std::chrono::seconds(0);
  ReviewService s(f.model, f.make_db(), options);
  const std::string token = s.query(pgm_bytes(noise_image(3)), 2).body.at("query_token");
  std::this_thread::sleep_for(std::chrono::milliseconds(5));
  EXPECT_EQ(s.pending_query(token).status, 410);
  EXPECT_EQ(s.confirm(token, "ind0").status, 410);
  EXPECT_EQ(s.confirm(token, "ind0").status, 404);
  EXPECT_EQ(s.snapshot()->version, 1u);
}

namespace {

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    std::filesystem::create_directories(f.dir / "static");
    std::ofstream(f.dir / "static" / "index.html") << "<html>review</html>";
    std::ofstream(f.dir / "static" / "app.js") << "console.log(1)";
    auto options = f.options();
    options.static_dir = f.dir / "static";
    service = std::make_unique<ReviewService>(f.model, f.make_db(), options);
    service->install_routes(server);
    port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  void TearDown() override {
    server.stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }

  httplib::Result post_query(httplib::Client& c, const GrayImage& image, const std::string& k = "") {
    const auto bytes = pgm_bytes(image);
    httplib::MultipartFormDataItems items{{"image", std::string(bytes.begin(), bytes.end()), "q.pgm", "image/x-portable-graymap"}};
    if (!k.empty()) items.push_back({"k", k, "", ""});
    return c.Post("/api/query", items);
  }

  Fixture f;
  std::unique_ptr<ReviewService> service;
  httplib::Server server;
  int port = 0;
  std::thread thread;
};

}  // namespace

TEST_F(Http, EndpointsAndStaticBundle) {
  auto c = client();
  auto health = c.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body).at("record_count"), 12);

  auto q = post_query(c, noise_image(42), "4");
  ASSERT_TRUE(q);
  ASSERT_EQ(q->status, 200) << q->body;
  const auto body = json::parse(q->body);
  EXPECT_EQ(body.at("candidates").size(), 4u);
  const std::string token = body.at("query_token");
  auto again = c.Get("/api/query/" + token);
  ASSERT_TRUE(again);
  EXPECT_EQ(json::parse(again->body), body);

  auto default_k = post_query(c, noise_image(42));
  EXPECT_EQ(json::parse(default_k->body).at("candidates").size(), 10u);
  EXPECT_EQ(post_query(c, noise_image(42), "abc")->status, 400);
  EXPECT_EQ(c.Post("/api/query", httplib::MultipartFormDataItems{})->status, 400);

  auto img = c.Get("/api/image/ind0_v1");
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
  EXPECT_TRUE(decode_png(std::vector<std::uint8_t>(img->body.begin(), img->body.end())) == noise_image(1));
  EXPECT_EQ(c.Get("/api/image/missing")->status, 404);

  auto confirm = c.Post("/api/confirm", json{{"query_token", token}, {"individual_id", "ind3"}}.dump(), "application/json");
  ASSERT_EQ(confirm->status, 200) << confirm->body;
  EXPECT_EQ(load_db(f.db_path).positions_of("ind3").size(), 4u);
  EXPECT_EQ(c.Post("/api/confirm", "{not json", "application/json")->status, 400);

  const std::string t2 = json::parse(post_query(c, noise_image(43))->body).at("query_token");
  auto created = c.Post("/api/individuals", json{{"query_token", t2}, {"new_individual_id", "fresh"}}.dump(),
                        "application/json");
  ASSERT_EQ(created->status, 200) << created->body;
  auto list = json::parse(c.Get("/api/individuals")->body);
  EXPECT_EQ(list.size(), 5u);

  auto index = c.Get("/");
  ASSERT_TRUE(index);
  EXPECT_EQ(index->status, 200);
  EXPECT_EQ(index->body, "<html>review</html>");
  EXPECT_EQ(c.Get("/app.js")->body, "console.log(1)");
}

TEST_F(Http, ConcurrentQueriesMatchTheirSnapshot) {
  struct Observation {
    std::vector<std::uint8_t> query;
    json body;
  };
  std::mutex mutex;
  std::vector<Observation> seen;
  std::vector<std::thread> readers;
  std::atomic<int> failures{0};
  for (int t = 0; t < 3; ++t) {
    readers.emplace_back([&, t] {
      auto c = client();
      for (int i = 0; i < 15; ++i) {
        const auto image = noise_image(static_cast<std::uint64_t>(1000 + 100 * t + i));
        auto r = post_query(c, image, "6");
        if (!r || r->status != 200) {
          ++failures;
          continue;
        }
        std::lock_guard lock(mutex);
        seen.push_back({pgm_bytes(image), json::parse(r->body)});
      }
    });
  }
  {
    auto c = client();
    for (int i = 0; i < 10; ++i) {
      auto q = post_query(c, noise_image(static_cast<std::uint64_t>(500 + i)), "1");
      ASSERT_TRUE(q);
      const std::string token = json::parse(q->body).at("query_token");
      auto r = c.Post("/api/individuals",
                      json{{"query_token", token}, {"new_individual_id", "w" + std::to_string(i)}}.dump(),
                      "application/json");
      ASSERT_EQ(r->status, 200);
    }
  }
  for (auto& t : readers) t.join();
  EXPECT_EQ(failures, 0);
  ASSERT_EQ(seen.size(), 45u);

  const auto final_db = service->snapshot()->db;
  ASSERT_EQ(final_db.size(), 22u);
  for (const auto& o : seen) {
    const auto version = o.body.at("db_version").get<std::size_t>();
    ASSERT_GE(version, 1u);
    ASSERT_LE(version, 11u);
    const auto expected = knn_at(final_db, 12 + version - 1, f.model.embed(decode_image(o.query)), 6);
    const auto& candidates = o.body.at("candidates");
    ASSERT_EQ(candidates.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_EQ(candidates[i].at("image_id"), final_db.record(expected[i].position).image_id);
      EXPECT_EQ(candidates[i].at("distance").get<double>(), expected[i].distance);
    }
  }
}
