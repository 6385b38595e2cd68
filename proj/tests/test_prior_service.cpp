#include <httplib.h>
#include <json.hpp>
#include <zlib.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "mdaif/degrade.hpp"
#include "mdaif/png.hpp"
#include "mdaif/prior.hpp"
#include "test_util.hpp"

using namespace mdaif;
using namespace mdaif::prior;
using nlohmann::json;

namespace {

std::uint32_t be32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(s[pos + i]);
  return v;
}

std::string base64_decode(const std::string& in) {
  static const std::string alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char ch : in) {
    const auto v = alphabet.find(ch);
    if (v == std::string::npos) continue;  // padding
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

// Decoder for the unfiltered 8-bit PNGs the client sends.
ImageBuffer decode_png(const std::string& png) {
  std::size_t pos = 8, w = 0, h = 0, c = 0;
  std::string idat;
  while (pos + 12 <= png.size()) {
    const std::uint32_t len = be32(png, pos);
    const std::string type = png.substr(pos + 4, 4);
    if (type == "IHDR") {
      w = be32(png, pos + 8);
      h = be32(png, pos + 12);
      c = png[pos + 17] == 2 ? 3 : 1;
    } else if (type == "IDAT") {
      idat += png.substr(pos + 8, len);
    }
    pos += 12 + len;
  }
  std::vector<unsigned char> raw(h * (1 + w * c));
  uLongf n = raw.size();
  if (uncompress(raw.data(), &n, reinterpret_cast<const Bytef*>(idat.data()), idat.size()) != Z_OK)
    throw std::runtime_error("bad zlib stream");
  ImageBuffer img(w, h, c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t i = 0; i < w * c; ++i) img.pixels[y * w * c + i] = raw[y * (1 + w * c) + 1 + i] / 255.0;
  return img;
}

// In-process stand-in for the prior service, answering with mock tokens.
struct FakeService {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> requests{0};
  std::atomic<int> mode{0};  // 0 ok, 1 HTTP 500, 2 sleep past the timeout, 3 malformed body
  std::string last_prompt;
  std::uint64_t seed = 0;

  explicit FakeService(std::uint64_t seed_) : seed(seed_) {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    server.Post("/prior", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      if (mode == 1) {
        res.status = 500;
        res.set_content("boom", "text/plain");
        return;
      }
      if (mode == 2) std::this_thread::sleep_for(std::chrono::milliseconds(600));
      if (mode == 3) {
        res.set_content(R"({"tokens":[[1,2],[3]]})", "application/json");
        return;
      }
      const json body = json::parse(req.body);
      last_prompt = body.at("prompt");
      const ImageBuffer img = decode_png(base64_decode(body.at("image_png_b64")));
      const Tensor<double> t = mock_tokens(img, seed);
      json rows = json::array();
      for (std::size_t s = 0; s < t.size(0); ++s) {
        json row = json::array();
        for (std::size_t c = 0; c < t.size(1); ++c) row.push_back(static_cast<float>(t[s * t.size(1) + c]));
        rows.push_back(row);
      }
      res.set_content(json{{"tokens", rows}, {"model", "fake"}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeService() {
    server.stop();
    thread.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port); }
};

ProviderConfig service_config(const FakeService& svc) {
  ProviderConfig cfg;
  cfg.kind = ProviderConfig::Kind::service;
  cfg.endpoint = svc.endpoint();
  cfg.timeout_s = 0.25;
  cfg.retries = 2;
  return cfg;
}

// 8-bit exact images, so the PNG payload carries them losslessly.
ImageBuffer quantized(const ImageBuffer& img) { return decode_image(encode_image(img)); }

}  // namespace

TEST_CASE("request encoding carries the prompt and a PNG payload") {
  const ImageBuffer img = quantized(degrade::procedural_pair(16, 12, 1).vi);
  const json body = json::parse(encode_request(img, "what weather?"));
  CHECK(body.at("prompt") == "what weather?");
  CHECK(decode_png(base64_decode(body.at("image_png_b64"))) == img);
}

TEST_CASE("response decoding validates the schema") {
  const RawPrior ok = decode_response(R"({"tokens":[[1,2],[3,4.5]],"model":"m"})");
  CHECK(ok.tokens.shape() == Shape{2, 2});
  CHECK(ok.tokens[3] == 4.5);
  CHECK(ok.provider_id == "service:m");
  CHECK_THROWS_AS(decode_response("not json"), ProviderError);
  CHECK_THROWS_AS(decode_response(R"({"model":"m"})"), ProviderError);
  CHECK_THROWS_AS(decode_response(R"({"tokens":[]})"), ProviderError);
  CHECK_THROWS_AS(decode_response(R"({"tokens":[[1,2],[3]]})"), ProviderError);
  CHECK_THROWS_AS(decode_response(R"({"tokens":[[1,null],[3,4]]})"), ProviderError);
  CHECK_THROWS_AS(decode_response(R"({"tokens":[[1,2]]})"), ProviderError);
}

TEST_CASE("service priors match the in-process mock") {
  FakeService svc(17);
  ServiceProvider client(service_config(svc));
  CHECK(client.healthy());
  MockProvider local(17);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const ImageBuffer img = quantized(degrade::procedural_pair(32, 32, 100 + i).vi);
    const RawPrior remote = client.extract(img, "");
    CHECK(remote.provider_id == "service:fake");
    CHECK(client.last_attempts() == 1);
    CHECK(testutil::max_abs_diff(remote.tokens, local.extract(img, "").tokens) <= 1e-5);
  }
  CHECK(svc.last_prompt == kDefaultPrompt);
  client.extract(quantized(ImageBuffer(8, 8, 3, 0.5)), "custom");
  CHECK(svc.last_prompt == "custom");
}

TEST_CASE("timeouts are retried exactly the configured number of times") {
  FakeService svc(1);
  svc.mode = 2;
  for (unsigned retries : {0u, 2u}) {
    ProviderConfig cfg = service_config(svc);
    cfg.retries = retries;
    ServiceProvider client(cfg);
    svc.requests = 0;
    CHECK_THROWS_AS(client.extract(ImageBuffer(8, 8, 3, 0.5), ""), ProviderError);
    CHECK(client.last_attempts() == retries + 1);
    std::this_thread::sleep_for(std::chrono::milliseconds(700));
    CHECK(svc.requests == static_cast<int>(retries + 1));
  }
}

TEST_CASE("HTTP errors and bad bodies are not retried") {
  FakeService svc(1);
  ServiceProvider client(service_config(svc));
  svc.mode = 1;
  CHECK_THROWS_WITH_AS(client.extract(ImageBuffer(8, 8, 3, 0.5), ""), doctest::Contains("HTTP 500"), ProviderError);
  CHECK(client.last_attempts() == 1);
  svc.mode = 3;
  CHECK_THROWS_AS(client.extract(ImageBuffer(8, 8, 3, 0.5), ""), ProviderError);
  CHECK(svc.requests == 2);
}

TEST_CASE("unreachable service and mock fallback") {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  ProviderConfig cfg;
  cfg.kind = ProviderConfig::Kind::service;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
  cfg.timeout_s = 0.25;
  cfg.retries = 1;
  cfg.seed = 5;
  const ImageBuffer img = quantized(degrade::procedural_pair(16, 16, 3).vi);

  ServiceProvider direct(cfg);
  CHECK_FALSE(direct.healthy());
  CHECK_THROWS_AS(direct.extract(img, ""), ProviderError);
  CHECK(direct.last_attempts() == 2);

  CHECK_THROWS_AS(make_provider(cfg)->extract(img, ""), ProviderError);
  cfg.fallback_to_mock = true;
  auto fallback = make_provider(cfg);
  const RawPrior p = fallback->extract(img, "");
  CHECK(p.provider_id == "mock");
  CHECK(p.tokens.vec() == MockProvider(5).extract(img, "").tokens.vec());
}
