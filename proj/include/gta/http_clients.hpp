#pragma once

// HTTP transports: a chat-completions client for attribute generation and a
// client for the encoder bridge (/embed_text, /embed_images, /finetune,
// /health). Embedding bodies are EMB1, everything else JSON.

#include "gta/attribute_generator.hpp"
#include "gta/dataset_io.hpp"
#include "gta/orchestrator.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

namespace gta {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

inline Url split_url(std::string_view url) {
  const auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw Error("URL '" + std::string(url) + "' has no scheme");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

namespace detail {

inline void set_timeouts(httplib::Client& cli, double seconds) {
  const auto usec = static_cast<long>(seconds * 1e6);
  cli.set_connection_timeout(usec / 1000000, usec % 1000000);
  cli.set_read_timeout(usec / 1000000, usec % 1000000);
  cli.set_write_timeout(usec / 1000000, usec % 1000000);
}

}  // namespace detail

/// OpenAI-style chat completions with a single user message. Safe to call
/// from several threads: every request opens its own connection.
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(LlmConfig cfg, std::chrono::milliseconds backoff = std::chrono::milliseconds(200))
      : cfg_(std::move(cfg)), url_(split_url(cfg_.endpoint_url)), backoff_(backoff) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key != nullptr) api_key_ = key;
  }

  std::string complete(const std::string& prompt) override {
    const json body{{"model", cfg_.model_name},
                    {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                    {"max_tokens", cfg_.max_tokens},
                    {"temperature", cfg_.temperature}};
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(backoff_ * (1 << (attempt - 1)));
      httplib::Client cli(url_.origin);
      detail::set_timeouts(cli, cfg_.request_timeout_s);
      auto res = cli.Post(url_.path, headers, body.dump(), "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw MalformedResponse("HTTP " + std::to_string(res->status) + ": " + res->body);
      return extract_content(res->body);
    }
    throw EndpointUnavailable(cfg_.endpoint_url + " unreachable after " +
                              std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
  }

  static std::string extract_content(const std::string& body) {
    try {
      const json j = json::parse(body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw MalformedResponse(std::string("unexpected chat response: ") + e.what());
    }
  }

 private:
  LlmConfig cfg_;
  Url url_;
  std::chrono::milliseconds backoff_;
  std::string api_key_;
};

/// Client for the encoder bridge sidecar.
class HttpBridge final : public EncoderBridge {
 public:
  explicit HttpBridge(std::string base_url, std::string model_tag = "ViT-B/16",
                      double embed_timeout_s = 120.0, double finetune_timeout_s = 3600.0)
      : base_(std::move(base_url)),
        model_tag_(std::move(model_tag)),
        embed_timeout_s_(embed_timeout_s),
        finetune_timeout_s_(finetune_timeout_s) {
    while (!base_.empty() && base_.back() == '/') base_.pop_back();
    url_ = split_url(base_);
  }

  bool healthy() {
    httplib::Client cli(url_.origin);
    detail::set_timeouts(cli, 5.0);
    auto res = cli.Get(path("/health"));
    return res && res->status == 200;
  }

  Matrix embed(const std::vector<std::string>& texts) override {
    return post_emb1("/embed_text", json{{"texts", texts}, {"model_tag", model_tag_}},
                     texts.size());
  }

  Matrix embed_images(const std::vector<std::string>& ids) override {
    return post_emb1("/embed_images", json{{"ids", ids}, {"model_tag", model_tag_}}, ids.size());
  }

  FinetuneOutcome finetune(const AdaptJob& job, const std::vector<std::string>& image_ids,
                           const std::vector<std::string>& texts) override {
    const json body{{"job", to_json(job)},
                    {"model_tag", model_tag_},
                    {"image_ids", image_ids},
                    {"texts", texts}};
    const std::string reply = post("/finetune", body.dump(), finetune_timeout_s_);
    json j;
    try {
      j = json::parse(reply);
    } catch (const json::parse_error& e) {
      throw MalformedResponse(std::string("bridge /finetune reply is not JSON: ") + e.what());
    }
    if (j.value("status", std::string("ok")) != "ok")
      throw Error("bridge fine-tuning failed: " + j.dump());
    FinetuneOutcome out;
    if (j.contains("features_path")) out.features = read_emb1(j["features_path"].get<std::string>());
    if (j.contains("text_embeddings_path"))
      out.text_embeddings = read_emb1(j["text_embeddings_path"].get<std::string>());
    return out;
  }

 private:
  std::string path(std::string_view endpoint) const {
    std::string p = url_.path == "/" ? "" : url_.path;
    return p + std::string(endpoint);
  }

  std::string post(std::string_view endpoint, const std::string& body, double timeout_s) {
    httplib::Client cli(url_.origin);
    detail::set_timeouts(cli, timeout_s);
    auto res = cli.Post(path(endpoint), body, "application/json");
    if (!res)
      throw EndpointUnavailable("encoder bridge " + base_ + " unreachable: " +
                                httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error("encoder bridge " + std::string(endpoint) + " returned HTTP " +
                  std::to_string(res->status) + ": " + res->body);
    return res->body;
  }

  Matrix post_emb1(std::string_view endpoint, const json& body, std::size_t expected_rows) {
    Matrix m = decode_emb1(post(endpoint, body.dump(), embed_timeout_s_));
    if (static_cast<std::size_t>(m.rows()) != expected_rows)
      throw MalformedResponse("bridge " + std::string(endpoint) + " returned " +
                              std::to_string(m.rows()) + " rows, expected " +
                              std::to_string(expected_rows));
    return m;
  }

  std::string base_;
  Url url_;
  std::string model_tag_;
  double embed_timeout_s_;
  double finetune_timeout_s_;
};

}  // namespace gta
