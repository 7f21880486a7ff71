#include "httplib.h"

#include <chrono>
#include <filesystem>
#include <thread>

#include "json.hpp"
#include "sllmr/common.hpp"
#include "sllmr/llm.hpp"

namespace sllmr::llm {

using json = nlohmann::json;
namespace fs = std::filesystem;

ResponseCache::ResponseCache(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  const fs::path p = fs::path(dir_) / (key + ".json");
  if (!fs::exists(p)) return std::nullopt;
  try {
    auto j = json::parse(read_file(p.string()));
    return j.at("completion").get<std::string>();
  } catch (const std::exception&) {
    return std::nullopt;  // torn or foreign file: treat as a miss
  }
}

void ResponseCache::put(const std::string& key, const std::string& completion) const {
  json j = {{"key", key}, {"completion", completion}};
  write_file_atomic((fs::path(dir_) / (key + ".json")).string(), j.dump() + "\n");
}

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an http(s) URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

ChatClient::ChatClient(ChatClientConfig cfg) : cfg_(std::move(cfg)) {
  if (!cfg_.cache_dir.empty()) cache_.emplace(cfg_.cache_dir);
  split_endpoint(cfg_.endpoint);
}

std::string ChatClient::cache_key(std::string_view model, std::string_view prompt) {
  std::string material(model);
  material.push_back('\0');
  material.append(prompt);
  return sha256_hex(material);
}

void ChatClient::throttle() {
  if (cfg_.rate_limit_per_sec <= 0.0) return;
  double wait = 0.0;
  {
    std::lock_guard lock(rate_mutex_);
    const double now = now_seconds();
    const double slot = std::max(now, next_slot_);
    next_slot_ = slot + 1.0 / cfg_.rate_limit_per_sec;
    wait = slot - now;
  }
  if (wait > 0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
}

std::string ChatClient::complete(const std::string& prompt) {
  const std::string key = cache_key(cfg_.model, prompt);
  if (cache_) {
    if (auto hit = cache_->get(key)) {
      ++cache_hits_;
      return *hit;
    }
  }
  const auto ep = split_endpoint(cfg_.endpoint);
  json body = {{"model", cfg_.model},
               {"temperature", 0},
               {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      const long long delay =
          std::min<long long>(cfg_.backoff_max_ms, static_cast<long long>(cfg_.backoff_initial_ms)
                                                       << std::min(attempt - 1, 20));
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    throttle();
    httplib::Client http(ep.origin);
    http.set_connection_timeout(cfg_.timeout_s, 0);
    http.set_read_timeout(cfg_.timeout_s, 0);
    ++requests_;
    auto res = http.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403)
      throw AuthError("LLM endpoint rejected credentials (HTTP " + std::to_string(res->status) +
                      "); export a valid key in SLLMR_API_KEY");
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw ServiceError("LLM endpoint returned HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 200));
    std::string content;
    try {
      auto j = json::parse(res->body);
      content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
      last_error = std::string("malformed completion body: ") + e.what();
      continue;
    }
    if (cache_) cache_->put(key, content);
    return content;
  }
  throw ServiceError("retry budget exhausted after " + std::to_string(cfg_.max_retries + 1) +
                     " attempts: " + last_error);
}

}  // namespace sllmr::llm
