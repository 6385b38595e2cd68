#include <cmath>
#include <httplib.h>
#include <json.hpp>

#include "mdaif/png.hpp"
#include "mdaif/prior.hpp"

namespace mdaif::prior {

using nlohmann::json;

std::string encode_request(const ImageBuffer& image, const std::string& prompt) {
  const json body = {{"image_png_b64", httplib::detail::base64_encode(io::encode_png(image))},
                     {"prompt", prompt}};
  return body.dump();
}

RawPrior decode_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ProviderError(std::string("prior response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array() || j["tokens"].empty())
    throw ProviderError("prior response lacks a non-empty 'tokens' array");
  const std::size_t s = j["tokens"].size();
  std::size_t c = 0;
  std::vector<double> data;
  for (const auto& row : j["tokens"]) {
    if (!row.is_array() || row.empty()) throw ProviderError("prior token rows must be non-empty arrays");
    if (c == 0) c = row.size();
    if (row.size() != c) throw ProviderError("prior token rows have unequal widths");
    for (const auto& v : row) {
      // JSON has no NaN literal; null stands in for it on the wire.
      if (!v.is_number()) throw ProviderError("prior tokens must be numbers");
      data.push_back(v.get<double>());
    }
  }
  RawPrior out{Tensor<double>({s, c}, std::move(data)), "service"};
  if (j.contains("model") && j["model"].is_string()) out.provider_id = "service:" + j["model"].get<std::string>();
  validate_tokens(out.tokens);
  return out;
}

namespace {

httplib::Client make_client(const ProviderConfig& cfg) {
  httplib::Client cli(cfg.endpoint);
  const auto sec = static_cast<time_t>(std::floor(cfg.timeout_s));
  const auto usec = static_cast<time_t>(std::llround((cfg.timeout_s - static_cast<double>(sec)) * 1e6));
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  return cli;
}

}  // namespace

ServiceProvider::ServiceProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) throw std::invalid_argument("service prior provider needs an endpoint");
  cfg_.validate();
}

bool ServiceProvider::healthy() const {
  auto cli = make_client(cfg_);
  auto res = cli.Get("/health");
  if (!res || res->status != 200) return false;
  try {
    return json::parse(res->body).value("status", "") == "ok";
  } catch (const json::exception&) {
    return false;
  }
}

RawPrior ServiceProvider::extract(const ImageBuffer& image, const std::string& prompt) {
  const std::string body = encode_request(image, prompt.empty() ? cfg_.prompt : prompt);
  auto cli = make_client(cfg_);
  last_attempts_ = 0;
  std::string last_error;
  for (unsigned attempt = 0; attempt <= cfg_.retries; ++attempt) {
    ++last_attempts_;
    auto res = cli.Post("/prior", body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200)
      throw ProviderError("prior service returned HTTP " + std::to_string(res->status) + ": " + res->body);
    return decode_response(res->body);
  }
  throw ProviderError("prior service unreachable after " + std::to_string(last_attempts_) +
                      " attempts: " + last_error);
}

}  // namespace mdaif::prior
