#include "gateway.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "digest.hpp"
#include "error.hpp"

namespace collabrag::gateway {

namespace {

using nlohmann::json;

constexpr int kMaxAttempts = 5;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Splits an endpoint base URL into (scheme://host[:port], path_prefix).
std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    raise(ErrorCode::invalid_argument, "endpoint must be a URL: " + url);
  }
  size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, ""};
  }
  std::string base = url.substr(0, path_start);
  std::string path = url.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {base, path};
}

}  // namespace

std::string utc_timestamp_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void DecodingParams::validate() const {
  if (temperature < 0.0) {
    raise(ErrorCode::invalid_argument, "temperature must be >= 0");
  }
  if (max_tokens <= 0) {
    raise(ErrorCode::invalid_argument, "max_tokens must be positive");
  }
  if (n_samples <= 0) {
    raise(ErrorCode::invalid_argument, "n_samples must be positive");
  }
}

const char* to_string(BackendKind kind) {
  return kind == BackendKind::remote_chat ? "remote-chat" : "scripted";
}

void ScriptTable::add(std::string_view prompt,
                      std::vector<std::string> responses) {
  by_digest_[prompt_digest(prompt)] = std::move(responses);
}

void ScriptTable::add_digest(std::string digest,
                             std::vector<std::string> responses) {
  by_digest_[std::move(digest)] = std::move(responses);
}

void ScriptTable::set_default(std::vector<std::string> responses) {
  default_ = std::move(responses);
}

ScriptTable ScriptTable::from_json(const json& j) {
  ScriptTable table;
  if (!j.is_object()) {
    raise(ErrorCode::parse, "script table must be a JSON object");
  }
  for (const auto& entry : j.value("entries", json::array())) {
    std::vector<std::string> responses =
        entry.value("responses", std::vector<std::string>{});
    if (responses.empty()) {
      raise(ErrorCode::parse, "script entry has no responses");
    }
    if (entry.contains("prompt")) {
      table.add(entry["prompt"].get<std::string>(), std::move(responses));
    } else if (entry.contains("prompt_sha256")) {
      table.add_digest(entry["prompt_sha256"].get<std::string>(),
                       std::move(responses));
    } else {
      raise(ErrorCode::parse,
            "script entry needs a prompt or prompt_sha256 field");
    }
  }
  if (j.contains("default")) {
    table.set_default(j["default"].get<std::vector<std::string>>());
  }
  return table;
}

const std::vector<std::string>* ScriptTable::find(
    const std::string& digest) const {
  auto it = by_digest_.find(digest);
  if (it != by_digest_.end()) return &it->second;
  if (default_) return &*default_;
  return nullptr;
}

std::string BackendSpec::id() const {
  return std::string(to_string(kind)) + ":" + name;
}

void BackendSpec::validate() const {
  if (name.empty()) {
    raise(ErrorCode::invalid_argument, "backend needs a model name");
  }
  if (kind == BackendKind::remote_chat && endpoint.empty()) {
    raise(ErrorCode::invalid_argument,
          "remote backend \"" + name + "\" needs an endpoint");
  }
  if (kind == BackendKind::scripted && !script) {
    raise(ErrorCode::invalid_argument,
          "scripted backend \"" + name + "\" needs a script table");
  }
}

BackendSpec BackendSpec::from_json(const json& j,
                                   const std::filesystem::path& base_dir) {
  BackendSpec spec;
  std::string kind = j.value("kind", "remote-chat");
  if (kind == "remote-chat") {
    spec.kind = BackendKind::remote_chat;
  } else if (kind == "scripted") {
    spec.kind = BackendKind::scripted;
  } else {
    raise(ErrorCode::parse, "unknown backend kind: " + kind);
  }
  spec.name = j.value("name", std::string{});
  spec.endpoint = j.value("endpoint", std::string{});
  spec.auth_env = j.value("auth_env", std::string{});
  spec.native_n = j.value("native_n", false);
  spec.max_in_flight = j.value("max_in_flight", 8);
  spec.retry_base_ms = j.value("retry_base_ms", 250);
  if (j.contains("script_inline")) {
    spec.script = std::make_shared<const ScriptTable>(
        ScriptTable::from_json(j["script_inline"]));
  } else if (j.contains("script")) {
    std::filesystem::path path = j["script"].get<std::string>();
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    std::ifstream in(path);
    if (!in) {
      raise(ErrorCode::io, "cannot open script table: " + path.string());
    }
    json table = json::parse(in, nullptr, false);
    if (table.is_discarded()) {
      raise(ErrorCode::parse, "script table is not valid JSON: " + path.string());
    }
    spec.script =
        std::make_shared<const ScriptTable>(ScriptTable::from_json(table));
  }
  return spec;
}

json BackendSpec::to_json() const {
  return json{{"kind", to_string(kind)}, {"name", name},
              {"endpoint", endpoint},    {"auth_env", auth_env},
              {"native_n", native_n},    {"max_in_flight", max_in_flight}};
}

std::string prompt_digest(std::string_view prompt) {
  return sha256_hex(prompt);
}

std::string cache_key(const BackendSpec& backend, std::string_view prompt,
                      const DecodingParams& params, int sample_index) {
  std::string material;
  material += to_string(backend.kind);
  material.push_back('\x1f');
  material += backend.name;
  material.push_back('\x1f');
  material += prompt;
  material.push_back('\x1f');
  material += format_double(params.temperature);
  material.push_back('\x1f');
  material += std::to_string(params.max_tokens);
  material.push_back('\x1f');
  material += std::to_string(sample_index);
  return sha256_hex(material);
}

ResponseCache::ResponseCache(std::filesystem::path root)
    : root_(std::move(root)) {
  if (!root_.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
  }
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  return root_ / key.substr(0, 2) / (key + ".json");
}

std::optional<CacheEntry> ResponseCache::get(const std::string& key) const {
  if (!enabled()) return std::nullopt;
  std::filesystem::path path = path_for(key);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("response") ||
      !doc["response"].is_string()) {
    raise(ErrorCode::cache_corrupt, "corrupt cache entry: " + path.string());
  }
  return CacheEntry{doc["response"].get<std::string>(),
                    doc.value("created_at", std::string{})};
}

void ResponseCache::put(const std::string& key, const BackendSpec& backend,
                        std::string_view prompt, const DecodingParams& params,
                        int sample_index, const CacheEntry& entry) {
  if (!enabled()) return;
  json doc{
      {"schema_version", 1},
      {"key", key},
      {"backend_kind", to_string(backend.kind)},
      {"model", backend.name},
      {"temperature", params.temperature},
      {"max_tokens", params.max_tokens},
      {"sample_index", sample_index},
      {"prompt_sha256", prompt_digest(prompt)},
      {"prompt", std::string(prompt)},
      {"response", entry.response},
      {"created_at", entry.created_at},
  };
  std::lock_guard<std::mutex> lock(write_mutex_);
  std::filesystem::path path = path_for(key);
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      raise(ErrorCode::io, "cannot write cache entry: " + tmp.string());
    }
    out << doc.dump();
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    raise(ErrorCode::io, "cannot publish cache entry: " + path.string());
  }
}

ResponseCache::Stats ResponseCache::stats() const {
  Stats s;
  if (!enabled() || !std::filesystem::exists(root_)) return s;
  for (const auto& entry :
       std::filesystem::recursive_directory_iterator(root_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      ++s.entries;
      s.bytes += entry.file_size();
    }
  }
  return s;
}

uint64_t ResponseCache::clear() {
  uint64_t removed = 0;
  if (!enabled() || !std::filesystem::exists(root_)) return removed;
  std::lock_guard<std::mutex> lock(write_mutex_);
  for (const auto& entry :
       std::filesystem::recursive_directory_iterator(root_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      std::error_code ec;
      if (std::filesystem::remove(entry.path(), ec)) ++removed;
    }
  }
  return removed;
}

class ModelGateway::Semaphore {
 public:
  explicit Semaphore(int count) : count_(count) {}

  void acquire() {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [&] { return count_ > 0; });
    --count_;
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      ++count_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int count_;
};

namespace {

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(ModelGateway::Semaphore& sem) : sem_(sem) {
    sem_.acquire();
  }
  ~SemaphoreGuard() { sem_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  ModelGateway::Semaphore& sem_;
};

}  // namespace

ModelGateway::ModelGateway(std::filesystem::path cache_root, int max_in_flight)
    : cache_(std::move(cache_root)),
      global_sem_(std::make_unique<Semaphore>(std::max(1, max_in_flight))) {}

ModelGateway::~ModelGateway() = default;

ModelGateway::Semaphore& ModelGateway::backend_semaphore(
    const BackendSpec& backend) {
  std::lock_guard<std::mutex> lock(backend_sems_mutex_);
  auto it = backend_sems_.find(backend.id());
  if (it == backend_sems_.end()) {
    it = backend_sems_
             .emplace(backend.id(), std::make_unique<Semaphore>(
                                        std::max(1, backend.max_in_flight)))
             .first;
  }
  return *it->second;
}

GatewayCounters ModelGateway::counters() const {
  return GatewayCounters{network_requests_.load(), cache_hits_.load(),
                         scripted_calls_.load(), retries_.load()};
}

void ModelGateway::reset_counters() {
  network_requests_ = 0;
  cache_hits_ = 0;
  scripted_calls_ = 0;
  retries_ = 0;
}

// Issues one chat-completions request with `want_n` samples; fills out_texts.
// Returns the response timestamp. Retries transport failures and 429/5xx.
std::string ModelGateway::chat_request(const BackendSpec& backend,
                                       std::string_view prompt,
                                       const DecodingParams& params, int want_n,
                                       std::vector<std::string>& out_texts) {
  auto [base, path_prefix] = split_endpoint(backend.endpoint);
  std::string path = path_prefix;
  if (path.find("/chat/completions") == std::string::npos) {
    path += "/chat/completions";
  }

  json body{
      {"model", backend.name},
      {"messages", json::array({json{{"role", "user"},
                                     {"content", std::string(prompt)}}})},
      {"temperature", params.temperature},
      {"max_tokens", params.max_tokens},
  };
  if (want_n > 1) body["n"] = want_n;

  httplib::Headers headers{{"Content-Type", "application/json"}};
  if (!backend.auth_env.empty()) {
    const char* token = std::getenv(backend.auth_env.c_str());
    if (token != nullptr && token[0] != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  std::string last_failure;
  for (int attempt = 1; attempt <= kMaxAttempts; ++attempt) {
    if (attempt > 1) {
      ++retries_;
      int delay_ms = backend.retry_base_ms * (1 << (attempt - 2));
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    }
    httplib::Client client(base);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(120, 0);
    client.set_follow_location(true);

    ++network_requests_;
    httplib::Result res = client.Post(path, headers, body.dump(),
                                      "application/json");
    if (!res) {
      last_failure = "transport error contacting " + backend.endpoint + ": " +
                     httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      raise(ErrorCode::backend_auth,
            "authentication failed against " + backend.endpoint + " (HTTP " +
                std::to_string(res->status) + ")");
    }
    if (res->status == 429 || res->status >= 500) {
      last_failure = "HTTP " + std::to_string(res->status) + " from " +
                     backend.endpoint;
      continue;
    }
    if (res->status != 200) {
      raise(ErrorCode::backend_transport,
            "HTTP " + std::to_string(res->status) + " from " +
                backend.endpoint + ": " + res->body.substr(0, 200));
    }
    json doc = json::parse(res->body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") ||
        !doc["choices"].is_array() || doc["choices"].empty()) {
      raise(ErrorCode::backend_transport,
            "malformed chat-completions response from " + backend.endpoint);
    }
    out_texts.clear();
    for (const auto& choice : doc["choices"]) {
      out_texts.push_back(
          choice.value("message", json::object()).value("content", ""));
    }
    return utc_timestamp_now();
  }
  raise(ErrorCode::backend_transport,
        last_failure + " (after " + std::to_string(kMaxAttempts) +
            " attempts)");
}

std::vector<Completion> ModelGateway::complete(const BackendSpec& backend,
                                               std::string_view prompt,
                                               const DecodingParams& params) {
  backend.validate();
  params.validate();

  const int n = params.n_samples;
  std::vector<Completion> results(static_cast<size_t>(n));
  std::vector<int> missing;
  for (int i = 0; i < n; ++i) {
    std::string key = cache_key(backend, prompt, params, i);
    if (auto hit = cache_.get(key)) {
      ++cache_hits_;
      results[static_cast<size_t>(i)] =
          Completion{hit->response, hit->created_at, true};
    } else {
      missing.push_back(i);
    }
  }
  if (missing.empty()) return results;

  auto store = [&](int index, std::string text, const std::string& ts) {
    CacheEntry entry{std::move(text), ts};
    cache_.put(cache_key(backend, prompt, params, index), backend, prompt,
               params, index, entry);
    results[static_cast<size_t>(index)] =
        Completion{std::move(entry.response), entry.created_at, false};
  };

  if (backend.kind == BackendKind::scripted) {
    const std::vector<std::string>* responses =
        backend.script->find(prompt_digest(prompt));
    if (responses == nullptr || responses->empty()) {
      raise(ErrorCode::backend_transport,
            "scripted backend \"" + backend.name +
                "\" has no response for prompt digest " +
                prompt_digest(prompt).substr(0, 12));
    }
    std::string ts = utc_timestamp_now();
    for (int index : missing) {
      ++scripted_calls_;
      store(index, (*responses)[static_cast<size_t>(index) % responses->size()],
            ts);
    }
    return results;
  }

  SemaphoreGuard global_guard(*global_sem_);
  SemaphoreGuard backend_guard(backend_semaphore(backend));

  if (backend.native_n && static_cast<int>(missing.size()) == n && n > 1) {
    std::vector<std::string> texts;
    std::string ts = chat_request(backend, prompt, params, n, texts);
    for (int index : missing) {
      const std::string& text =
          texts[static_cast<size_t>(index) % texts.size()];
      store(index, text, ts);
    }
    return results;
  }

  DecodingParams single = params;
  single.n_samples = 1;
  for (int index : missing) {
    std::vector<std::string> texts;
    std::string ts = chat_request(backend, prompt, single, 1, texts);
    store(index, texts.front(), ts);
  }
  return results;
}

}  // namespace collabrag::gateway
