#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace collabrag::gateway {

struct DecodingParams {
  double temperature = 0.0;  // 0 <=> greedy
  int max_tokens = 64;
  int n_samples = 1;

  void validate() const;
};

enum class BackendKind { remote_chat, scripted };

const char* to_string(BackendKind kind);

// Deterministic responses keyed by SHA-256 of the exact prompt bytes.
class ScriptTable {
 public:
  void add(std::string_view prompt, std::vector<std::string> responses);
  void add_digest(std::string prompt_digest,
                  std::vector<std::string> responses);
  void set_default(std::vector<std::string> responses);

  // {"entries":[{"prompt"|"prompt_sha256":..., "responses":[...]}],
  //  "default":[...]}
  static ScriptTable from_json(const nlohmann::json& j);

  const std::vector<std::string>* find(const std::string& digest) const;

 private:
  std::map<std::string, std::vector<std::string>> by_digest_;
  std::optional<std::vector<std::string>> default_;
};

struct BackendSpec {
  BackendKind kind = BackendKind::remote_chat;
  std::string name;      // model name
  std::string endpoint;  // base URL, remote only
  std::string auth_env;  // env var holding the bearer token
  bool native_n = false;  // endpoint supports the n field natively
  int max_in_flight = 8;
  int retry_base_ms = 250;
  std::shared_ptr<const ScriptTable> script;  // scripted only

  std::string id() const;  // e.g. "remote-chat:gpt-4o-mini"
  void validate() const;

  static BackendSpec from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;  // excludes the script table contents
};

std::string prompt_digest(std::string_view prompt);

// Content-addressed key: backend kind, model name, prompt bytes, decoding
// params, and the sample index. Stable across runs and platforms.
std::string cache_key(const BackendSpec& backend, std::string_view prompt,
                      const DecodingParams& params, int sample_index);

struct CacheEntry {
  std::string response;
  std::string created_at;  // ISO-8601 UTC of the original production
};

// One JSON document per key under <root>/<key[0:2]>/<key>.json. Readers are
// lock-free; writers serialize and publish via rename.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root);

  bool enabled() const { return !root_.empty(); }
  std::optional<CacheEntry> get(const std::string& key) const;
  void put(const std::string& key, const BackendSpec& backend,
           std::string_view prompt, const DecodingParams& params,
           int sample_index, const CacheEntry& entry);

  struct Stats {
    uint64_t entries = 0;
    uint64_t bytes = 0;
  };
  Stats stats() const;
  uint64_t clear();
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path path_for(const std::string& key) const;
  std::filesystem::path root_;
  mutable std::mutex write_mutex_;
};

struct Completion {
  std::string text;
  std::string created_at;
  bool from_cache = false;
};

struct GatewayCounters {
  uint64_t network_requests = 0;
  uint64_t cache_hits = 0;
  uint64_t scripted_calls = 0;
  uint64_t retries = 0;
};

// Uniform access to decomposer/reader backends. Thread-safe; in-flight
// remote requests are bounded globally and per backend.
class ModelGateway {
 public:
  ModelGateway(std::filesystem::path cache_root, int max_in_flight = 8);
  ~ModelGateway();

  ModelGateway(const ModelGateway&) = delete;
  ModelGateway& operator=(const ModelGateway&) = delete;

  // Returns params.n_samples completions in sample-index order.
  std::vector<Completion> complete(const BackendSpec& backend,
                                   std::string_view prompt,
                                   const DecodingParams& params);

  GatewayCounters counters() const;
  void reset_counters();
  ResponseCache& cache() { return cache_; }

 private:
  class Semaphore;
  Semaphore& backend_semaphore(const BackendSpec& backend);
  std::string chat_request(const BackendSpec& backend, std::string_view prompt,
                           const DecodingParams& params, int want_n,
                           std::vector<std::string>& out_texts);

  ResponseCache cache_;
  std::unique_ptr<Semaphore> global_sem_;
  std::mutex backend_sems_mutex_;
  std::map<std::string, std::unique_ptr<Semaphore>> backend_sems_;

  std::atomic<uint64_t> network_requests_{0};
  std::atomic<uint64_t> cache_hits_{0};
  std::atomic<uint64_t> scripted_calls_{0};
  std::atomic<uint64_t> retries_{0};
};

// ISO-8601 UTC, second resolution.
std::string utc_timestamp_now();

}  // namespace collabrag::gateway
