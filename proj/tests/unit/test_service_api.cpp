// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <memory>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cutie/image_io.hpp"
#include "cutie/session.hpp"
#include "cutie/weights_io.hpp"
#include "cutie_tools/cli.hpp"
#include "cutie_tools/service.hpp"
#include "test_support.hpp"

using namespace cutie;
using cutie::testing::make_video;
using cutie::testing::SyntheticVideo;
using cutie::testing::TempDir;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSeed = 5;

std::string as_string(const std::vector<std::uint8_t> &b) { return {b.begin(), b.end()}; }

LabelMap mask_of(const std::string &body) {
  return decode_mask(std::span(reinterpret_cast<const std::uint8_t *>(body.data()), body.size()));
}

class ServiceTest : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    network = std::make_shared<SegmentationNetwork>(SegmentationNetwork::random(ModelConfig{}, kSeed));
    video = std::make_unique<SyntheticVideo>(make_video(10, 48, 64, 2, 31));
  }
  static void TearDownTestSuite() {
    network.reset();
    video.reset();
  }

  void SetUp() override {
    service = std::make_unique<tools::SessionService>(network);
    service->mount(server);
    port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(600, 0);
  }

  void TearDown() override {
    server.stop();
    thread.join();
    service.reset();
  }

  std::string create_session(const std::string &config = "{}") {
    auto res = client->Post("/sessions", config, "application/json");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 201);
    return json::parse(res->body)["id"];
  }

  void upload_all(const std::string &id) {
    httplib::MultipartFormDataItems items;
    for (std::size_t t = 0; t < video->frames.size(); ++t) {
      char name[16];
      std::snprintf(name, sizeof name, "f%03zu", t);
      items.push_back({name, as_string(encode_png_image(video->frames[t])), std::string(name) + ".png", "image/png"});
    }
    // parts are ordered by field name, not by arrival
    std::swap(items[0], items[7]);
    auto res = client->Post("/sessions/" + id + "/frames", items);
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(json::parse(res->body)["frame_count"], 10);
  }

  int put_mask(const std::string &id, std::size_t t, const LabelMap &m, bool permanent = false) {
    auto res = client->Put("/sessions/" + id + "/masks/" + std::to_string(t) + (permanent ? "?permanent=true" : ""),
                           as_string(encode_mask_png(m)), "image/png");
    return res ? res->status : -1;
  }

  httplib::Result propagate(const std::string &id, const std::string &body = "{}") {
    return client->Post("/sessions/" + id + "/propagate", body, "application/json");
  }

  // Blocks until the session is idle and returns every event since `since`.
  std::vector<json> drain_events(const std::string &id, std::size_t since = 0) {
    auto res = client->Get("/sessions/" + id + "/events?until_idle=1&since=" + std::to_string(since));
    EXPECT_TRUE(res);
    std::vector<json> events;
    std::istringstream lines(res->body);
    for (std::string line; std::getline(lines, line);) {
      if (!line.empty()) {
        events.push_back(json::parse(line));
      }
    }
    return events;
  }

  LabelMap get_mask(const std::string &id, std::size_t t) {
    auto res = client->Get("/sessions/" + id + "/masks/" + std::to_string(t));
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    return mask_of(res->body);
  }

  static inline std::shared_ptr<const SegmentationNetwork> network;
  static inline std::unique_ptr<SyntheticVideo> video;
  std::unique_ptr<tools::SessionService> service;
  httplib::Server server;
  int port = 0;
  std::thread thread;
  std::unique_ptr<httplib::Client> client;
};

} // namespace

TEST(RunLength, RoundTrip) {
  LabelMap m(3, 4);
  m.labels = {0, 0, 1, 1, 1, 3, 3, 0, 0, 0, 0, 2};
  const auto runs = tools::rle_encode(m);
  EXPECT_EQ(runs.size(), 5u);
  EXPECT_EQ(tools::rle_decode(runs, 3, 4), m);
  EXPECT_THROW(tools::rle_decode(runs, 2, 4), FormatError);
}

TEST_F(ServiceTest, LifecycleStreamsProgressAndServesMasks) {
  const std::string id = create_session();
  upload_all(id);
  auto frame = client->Get("/sessions/" + id + "/frames/7");
  ASSERT_TRUE(frame);
  EXPECT_EQ(decode_png_image(std::span(reinterpret_cast<const std::uint8_t *>(frame->body.data()), frame->body.size())),
            video->frames[7]);

  auto not_ready = client->Get("/sessions/" + id + "/masks/9");
  ASSERT_TRUE(not_ready);
  EXPECT_EQ(not_ready->status, 404);
  EXPECT_EQ(json::parse(not_ready->body)["code"], "mask_not_ready");

  auto no_ref = propagate(id);
  ASSERT_TRUE(no_ref);
  EXPECT_EQ(no_ref->status, 409);

  ASSERT_EQ(put_mask(id, 0, video->labels[0]), 200);
  auto started = propagate(id);
  ASSERT_TRUE(started);
  ASSERT_EQ(started->status, 202);
  EXPECT_EQ(json::parse(started->body)["to"], 9);

  const auto events = drain_events(id);
  std::size_t expected_frame = 0;
  for (const json &e : events) {
    if (e["type"] == "progress") {
      EXPECT_EQ(e["frame"], expected_frame++);
      const auto &preview = e["preview"];
      tools::RunLengths runs;
      for (const auto &r : preview["rle"]) {
        runs.emplace_back(r[0].get<std::uint8_t>(), r[1].get<std::uint32_t>());
      }
      EXPECT_EQ(tools::rle_decode(runs, 48, 64), get_mask(id, e["frame"]));
    }
  }
  EXPECT_EQ(expected_frame, 10u);
  ASSERT_FALSE(events.empty());
  EXPECT_EQ(events.back()["type"], "done");

  const LabelMap last = get_mask(id, 9);
  EXPECT_EQ(last.height, 48u);
  EXPECT_EQ(last.width, 64u);

  auto status = client->Get("/sessions/" + id);
  ASSERT_TRUE(status);
  const json st = json::parse(status->body);
  EXPECT_EQ(st["status"], "idle");
  EXPECT_EQ(st["computed"].size(), 10u);

  auto del = client->Delete("/sessions/" + id);
  ASSERT_TRUE(del);
  EXPECT_EQ(del->status, 204);
  auto gone = client->Get("/sessions/" + id);
  ASSERT_TRUE(gone);
  EXPECT_EQ(gone->status, 404);
}

TEST_F(ServiceTest, SecondPropagateWhileBusyConflicts) {
  const std::string id = create_session();
  upload_all(id);
  ASSERT_EQ(put_mask(id, 0, video->labels[0]), 200);
  auto first = propagate(id);
  ASSERT_TRUE(first);
  ASSERT_EQ(first->status, 202);
  auto second = propagate(id);
  ASSERT_TRUE(second);
  EXPECT_EQ(second->status, 409);
  EXPECT_EQ(json::parse(second->body)["code"], "session_busy");
  EXPECT_EQ(put_mask(id, 3, video->labels[3]), 409);
  drain_events(id);
}

TEST_F(ServiceTest, CorrectionRecomputesOnlyLaterFrames) {
  const std::string id = create_session();
  upload_all(id);
  ASSERT_EQ(put_mask(id, 0, video->labels[0]), 200);
  ASSERT_EQ(propagate(id)->status, 202);
  const std::size_t seen = drain_events(id).size();
  std::vector<std::string> before;
  for (std::size_t t = 0; t < 10; ++t) {
    before.push_back(client->Get("/sessions/" + id + "/masks/" + std::to_string(t))->body);
  }

  ASSERT_EQ(put_mask(id, 5, video->labels[5]), 200);
  auto res = propagate(id, R"({"from": 5, "direction": "forward"})");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 202);
  std::size_t progressed = 0;
  for (const json &e : drain_events(id, seen)) {
    if (e["type"] == "progress") {
      EXPECT_GE(e["frame"].get<std::size_t>(), 5u);
      ++progressed;
    }
  }
  EXPECT_EQ(progressed, 5u);

  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(client->Get("/sessions/" + id + "/masks/" + std::to_string(t))->body, before[t]) << t;
  }
  // later frames come from memories implied by the references at 0 and 5
  InferenceSession replay(network);
  for (std::size_t t = 0; t < 10; ++t) {
    LabelMap expected;
    if (t == 0 || t == 5) {
      replay.add_reference(video->frames[t], video->labels[t]);
      expected = video->labels[t];
    } else {
      expected = replay.step(video->frames[t]);
    }
    if (t >= 5) {
      EXPECT_EQ(get_mask(id, t), expected) << t;
    }
  }
}

TEST_F(ServiceTest, MatchesCliOnSameSeed) {
  TempDir dir("svc");
  cutie::testing::write_video(*video, dir.path() / "seq", dir.path() / "gt");
  std::ostringstream out, err;
  ASSERT_EQ(tools::run_cli({"--frames", (dir.path() / "seq").string(), "--first-mask",
                            (dir.path() / "gt" / "00000.png").string(), "--out", (dir.path() / "out").string(),
                            "--random-init", std::to_string(kSeed)},
                           out, err),
            tools::kExitOk)
      << err.str();

  const std::string id = create_session();
  upload_all(id);
  ASSERT_EQ(put_mask(id, 0, video->labels[0]), 200);
  ASSERT_EQ(propagate(id)->status, 202);
  drain_events(id);
  for (std::size_t t = 0; t < 10; ++t) {
    char stem[16];
    std::snprintf(stem, sizeof stem, "%05zu.png", t);
    const auto cli_bytes = read_file(dir.path() / "out" / stem);
    EXPECT_EQ(client->Get("/sessions/" + id + "/masks/" + std::to_string(t))->body, as_string(cli_bytes)) << t;
  }
}

TEST_F(ServiceTest, RequestValidation) {
  auto bad_cfg = client->Post("/sessions", R"({"top_k": 0})", "application/json");
  ASSERT_TRUE(bad_cfg);
  EXPECT_EQ(bad_cfg->status, 400);
  auto model_key = client->Post("/sessions", R"({"channels": 64})", "application/json");
  ASSERT_TRUE(model_key);
  EXPECT_EQ(model_key->status, 400);
  auto unknown = client->Get("/sessions/deadbeef");
  ASSERT_TRUE(unknown);
  EXPECT_EQ(unknown->status, 404);
  EXPECT_TRUE(json::parse(unknown->body).contains("message"));

  const std::string id = create_session(R"({"top_k": 10, "mem_interval": 3})");
  upload_all(id);
  EXPECT_EQ(put_mask(id, 12, video->labels[0]), 404);
  EXPECT_EQ(put_mask(id, 1, LabelMap(16, 16)), 400);
  auto odd = client->Post("/sessions/" + id + "/frames", as_string(encode_png_image(Image(32, 32))), "image/png");
  ASSERT_TRUE(odd);
  EXPECT_EQ(odd->status, 400);
  ASSERT_EQ(put_mask(id, 0, video->labels[0]), 200);
  auto backward = propagate(id, R"({"direction": "backward"})");
  ASSERT_TRUE(backward);
  EXPECT_EQ(backward->status, 400);
}
