#include <numeric>
#include <thread>

#include <gtest/gtest.h>

#include "ndarchive/pipeline.hpp"
#include "ndarchive/service.hpp"
#include "support.hpp"

using namespace ndarchive;
using nlohmann::json;

namespace {

// A served exact-copy corpus: three groups of four identical images.
class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticCorpusSpec spec;
    spec.group_count = 3;
    spec.image_size = 32;
    spec.strength = VariantStrength::exact;
    write_corpus(generate_corpus(spec), dir_.path());
    corpus_ = ingest(dir_.path());
    std::vector<std::size_t> all(corpus_.images.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    index_ = build_index(corpus_, all, Method::phash, nullptr);
    start();
  }

  void TearDown() override { stop(); }

  void start() {
    ServiceConfig cfg;
    cfg.reviews_path = dir_ / "reviews.log";
    cfg.default_threshold = 0.0;
    service_ = std::make_unique<Service>(index_, corpus_.manifest, corpus_.root, cfg);
    port_ = service_->server().bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { service_->server().listen_after_bind(); });
    service_->server().wait_until_ready();
  }

  void stop() {
    if (!service_) return;
    service_->server().stop();
    thread_.join();
    service_.reset();
  }

  httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

  ndtest::TempDir dir_;
  Corpus corpus_;
  Index index_;
  std::unique_ptr<Service> service_;
  std::thread thread_;
  int port_ = 0;
};

std::string review_body(const std::string& a, const std::string& b, const std::string& verdict, long ts = 100) {
  return json{{"image_a", a}, {"image_b", b}, {"verdict", verdict}, {"reviewer", "ana"}, {"timestamp", ts}}.dump();
}

}  // namespace

TEST_F(ServiceTest, NeighborsStartWithSelf) {
  auto res = client().Get("/api/images/g00001_2/neighbors?k=1");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto body = json::parse(res->body);
  ASSERT_EQ(body.size(), 1u);
  EXPECT_EQ(body[0]["image_id"], "g00001_0");  // exact copies tie at 0; smallest id first
  EXPECT_EQ(body[0]["distance"], 0.0);
  EXPECT_EQ(json::parse(client().Get("/api/images/g00001_2/neighbors?k=5")->body).size(), 5u);
}

TEST_F(ServiceTest, UnknownIdAndBadParameters) {
  EXPECT_EQ(client().Get("/api/images/nope/neighbors?k=3")->status, 404);
  EXPECT_EQ(client().Get("/api/images/g00000_0/neighbors?k=abc")->status, 400);
  EXPECT_EQ(client().Get("/api/images/g00000_0/neighbors?k=0")->status, 400);
  EXPECT_EQ(client().Get("/api/clusters?threshold=-1")->status, 400);
  EXPECT_EQ(client().Get("/api/images/nope/thumb")->status, 404);
}

TEST_F(ServiceTest, ClustersGroupCopiesAndHideSingletons) {
  const auto body = json::parse(client().Get("/api/clusters?threshold=0")->body);
  ASSERT_EQ(body["clusters"].size(), 3u);
  const auto& first = body["clusters"][0];
  EXPECT_EQ(first["members"].size(), 4u);
  EXPECT_EQ(first["medoid"], "g00000_0");
  EXPECT_EQ(first["members"][1]["thumbnail_url"], "/api/images/g00000_1/thumb");
}

TEST_F(ServiceTest, DistinctDescriptorsGiveEmptyListAtZero) {
  stop();
  Index distinct;
  for (std::size_t i = 0; i < corpus_.images.size(); i += 4)
    distinct.add({corpus_.manifest.records[i].image_id, compute_hash(corpus_.images[i], HashAlgorithm::phash), {}});
  index_ = std::move(distinct);
  start();
  const auto body = json::parse(client().Get("/api/clusters?threshold=0")->body);
  EXPECT_TRUE(body["clusters"].empty());
  EXPECT_EQ(json::parse(client().Get("/api/clusters?threshold=0&singletons=true")->body)["clusters"].size(), 3u);
}

TEST_F(ServiceTest, FileAndThumbnail) {
  auto file = client().Get("/api/images/g00002_3/file");
  ASSERT_EQ(file->status, 200);
  EXPECT_EQ(file->get_header_value("Content-Type"), "image/png");
  auto thumb = client().Get("/api/images/g00002_3/thumb");
  ASSERT_EQ(thumb->status, 200);
  EXPECT_EQ(thumb->get_header_value("Content-Type"), "image/jpeg");
  const std::vector<std::uint8_t> bytes(thumb->body.begin(), thumb->body.end());
  const auto img = decode_gray(bytes);
  EXPECT_EQ(std::max(img.width(), img.height()), 256u);
}

TEST_F(ServiceTest, ReviewSupersedesAndCanonicalizes) {
  auto c = client();
  auto r1 = c.Post("/api/review", review_body("g00000_2", "g00000_1", "unsure", 100), "application/json");
  ASSERT_EQ(r1->status, 201);
  EXPECT_EQ(json::parse(r1->body)["image_a"], "g00000_1");
  ASSERT_EQ(c.Post("/api/review", review_body("g00000_1", "g00000_2", "duplicate", 200), "application/json")->status,
            201);
  const auto csv = c.Get("/api/review/export")->body;
  EXPECT_EQ(csv, "image_a,image_b,verdict,reviewer,timestamp\ng00000_1,g00000_2,duplicate,ana,200\n");
}

TEST_F(ServiceTest, MalformedReviewsAreRejected) {
  auto c = client();
  for (const std::string body : {std::string("not json"), std::string("[]"),
                                 review_body("g00000_1", "g00000_1", "duplicate"),
                                 review_body("g00000_1", "ghost", "duplicate"),
                                 review_body("g00000_1", "g00000_2", "maybe"),
                                 json{{"image_a", "g00000_1"}, {"verdict", "duplicate"}}.dump()})
    EXPECT_EQ(c.Post("/api/review", body, "application/json")->status, 400) << body;
  EXPECT_EQ(c.Get("/api/review/export")->body, "image_a,image_b,verdict,reviewer,timestamp\n");
}

TEST_F(ServiceTest, ReviewLogSurvivesRestart) {
  client().Post("/api/review", review_body("g00001_0", "g00001_3", "distinct"), "application/json");
  stop();
  start();
  EXPECT_NE(client().Get("/api/review/export")->body.find("g00001_0,g00001_3,distinct"), std::string::npos);
}

TEST_F(ServiceTest, StatsReportProgress) {
  client().Post("/api/review", review_body("g00001_0", "g00001_3", "distinct"), "application/json");
  const auto s = json::parse(client().Get("/api/stats")->body);
  EXPECT_EQ(s["corpus_size"], 12);
  EXPECT_EQ(s["cluster_count"], 3);
  EXPECT_EQ(s["candidate_pairs"], 18);
  EXPECT_EQ(s["reviewed_pairs"], 1);
  EXPECT_DOUBLE_EQ(s["review_progress"].get<double>(), 1.0 / 18);
}

TEST_F(ServiceTest, CorsHeaders) {
  auto res = client().Get("/api/stats");
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  auto pre = client().Options("/api/review");
  EXPECT_EQ(pre->status, 204);
}

TEST_F(ServiceTest, ConcurrentReviewsAllLand) {
  std::vector<std::thread> writers;
  const auto& recs = corpus_.manifest.records;
  for (int t = 0; t < 8; ++t)
    writers.emplace_back([&, t] {
      auto c = client();
      for (int i = 0; i < 5; ++i) {
        const auto& a = recs[(t + i) % recs.size()].image_id;
        const auto& b = recs[(t + i + 1) % recs.size()].image_id;
        c.Post("/api/review", review_body(a, b, "unsure", t * 10 + i), "application/json");
      }
    });
  for (auto& w : writers) w.join();
  stop();
  ReviewLog replay(dir_ / "reviews.log");
  EXPECT_EQ(replay.latest().size(), 12u);  // 12 distinct adjacent pairs on the ring
}

TEST(ReviewLog, QuotesAwkwardReviewers) {
  ndtest::TempDir dir;
  {
    ReviewLog log(dir / "r.log");
    log.append({"a", "b", Verdict::duplicate, "Doe, \"JD\"", 5});
  }
  ReviewLog back(dir / "r.log");
  ASSERT_EQ(back.latest().size(), 1u);
  EXPECT_EQ(back.latest()[0].reviewer, "Doe, \"JD\"");
}

TEST(Bind, ParsesAddresses) {
  EXPECT_EQ(parse_bind("0.0.0.0:9000"), (std::pair<std::string, int>{"0.0.0.0", 9000}));
  EXPECT_EQ(parse_bind("8080").first, "127.0.0.1");
  EXPECT_THROW(parse_bind("host:port"), Error);
  EXPECT_THROW(parse_bind("host:70000"), Error);
}
