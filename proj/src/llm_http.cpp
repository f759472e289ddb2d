#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"
#include "dtgba/serialize.hpp"
#include "dtgba/text_trigger.hpp"

// After Eigen: resolv.h defines _res, which Eigen uses as an identifier.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace dtgba {

HttpLlmClient::HttpLlmClient(HttpClientConfig config) : config_(std::move(config)) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (!key || !*key) throw ValidationError("http client: environment variable " + config_.api_key_env + " is not set");
  api_key_ = key;
  if (config_.base_url.empty()) throw ValidationError("http client: empty base_url");
}

std::string HttpLlmClient::complete(const std::string& instruction) {
  {
    std::unique_lock lock(rate_mutex_);
    const auto now = std::chrono::steady_clock::now();
    const auto start = std::max(now, next_slot_);
    next_slot_ = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                             std::chrono::duration<double>(config_.min_request_interval_seconds));
    lock.unlock();
    if (start > now) std::this_thread::sleep_until(start);
  }
  httplib::Client client(config_.base_url);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  client.set_connection_timeout(secs, 0);
  client.set_read_timeout(secs, 0);
  client.set_write_timeout(secs, 0);
  const nlohmann::json body{{"model", config_.model},
                            {"temperature", config_.temperature},
                            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", instruction}}})}};
  httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
  auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) throw GenerationError("http client: request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw GenerationError("http client: status " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw GenerationError(std::string("http client: malformed response: ") + e.what());
  }
}

TriggerCache::TriggerCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string TriggerCache::key(const std::string& original, StrategyId strategy, int target,
                              const std::string& generator) {
  std::string gen;
  for (char c : generator) gen += std::isalnum(static_cast<unsigned char>(c)) ? c : '-';
  return hex64(fnv1a64(original)) + "_" + to_string(strategy) + "_t" + std::to_string(target) + "_" + gen;
}

std::optional<TriggeredText> TriggerCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  const auto path = dir_ / (key + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return TriggeredText::from_json(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    spdlog::warn("trigger cache: ignoring unreadable entry {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

void TriggerCache::put(const std::string& key, const TriggeredText& value) {
  std::unique_lock lock(mutex_);
  const auto path = dir_ / (key + ".json");
  const auto tmp = dir_ / (key + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ValidationError("trigger cache: cannot write " + tmp.string());
    out << value.to_json().dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

std::vector<TriggeredText> generate_batch(LlmClient& client, std::span<const TriggerRequest> requests,
                                          std::span<const LabelDescription> labels, const GenerationPolicy& policy,
                                          TriggerCache* cache, int max_concurrency) {
  std::vector<TriggeredText> out(requests.size());
  std::vector<std::exception_ptr> errors(requests.size());
  for (const auto& r : requests) {
    if (r.target < 0 || static_cast<std::size_t>(r.target) >= labels.size()) {
      throw BoundsError("generate_batch: target " + std::to_string(r.target) + " has no label description");
    }
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      const auto& r = requests[i];
      try {
        const std::string key = cache ? TriggerCache::key(r.original, r.strategy, r.target, client.name()) : "";
        if (cache) {
          if (auto hit = cache->get(key); hit && hit->original == r.original) {
            out[i] = std::move(*hit);
            continue;
          }
        }
        const auto instruction = assemble_instruction(r.original, r.strategy, labels[r.target]);
        out[i] = generate_text_trigger(client, instruction, r.original, policy);
        if (cache) cache->put(key, out[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(max_concurrency, static_cast<int>(requests.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace dtgba
