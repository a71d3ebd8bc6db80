#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "morerec/io.hpp"
#include "morerec/perspective.hpp"
#include "morerec/prompts.hpp"
#include "morerec/sha256.hpp"

namespace morerec {

class LlmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class PromptKind { Recommend, Reflect };

struct ReflectionRef {
    Perspective perspective = Perspective::EP;
    std::string text;
};

/// Structured request context. The HTTP transport ignores it; the mock
/// backend scripts its behavior on it (user identity, candidates, which
/// reflections ride along in the prompt).
struct RequestMeta {
    PromptKind kind = PromptKind::Recommend;
    std::string user_id;
    std::string phase;  // "validation" | "test" | ""
    std::vector<std::string> candidate_ids;  // presentation order
    std::string target_item_id;
    std::vector<ReflectionRef> reflections;
    Perspective perspective = Perspective::EP;  // for reflect prompts
    int round = 0;
    std::vector<std::string> demo_texts;
};

struct LlmRequest {
    PromptInstance prompt;
    RequestMeta meta;
    std::string model = "mock";
    double temperature = 0.0;
    int max_tokens = 512;
};

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual std::string complete(const LlmRequest& request) = 0;
    virtual std::string kind() const = 0;
};

/// Disk cache keyed by (model, prompt text, temperature). Writers publish
/// entries atomically, so concurrent readers only ever see whole files.
class CacheStore {
public:
    explicit CacheStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    static std::string key(const std::string& model, const std::string& prompt_sha,
                           double temperature) {
        char temp[32];
        std::snprintf(temp, sizeof(temp), "%.6f", temperature);
        std::string material = model;
        material += '\x1f';
        material += prompt_sha;
        material += '\x1f';
        material += temp;
        return sha256_hex(material);
    }

    std::optional<std::string> get(const std::string& key) const {
        fs::path p = path_for(key);
        if (!fs::exists(p)) return std::nullopt;
        return read_file(p);
    }

    void put(const std::string& key, const std::string& value) {
        write_file_atomic(path_for(key), value);
    }

private:
    fs::path path_for(const std::string& key) const { return dir_ / (key + ".txt"); }
    fs::path dir_;
};

/// JSONL audit trail of every completion: prompt/response hashes only, no
/// payload bodies.
class AuditLog {
public:
    explicit AuditLog(fs::path path) : path_(std::move(path)) {
        fs::create_directories(path_.parent_path().empty() ? fs::path(".") : path_.parent_path());
    }

    void record(const LlmRequest& req, const std::string& response, bool cached) {
        std::lock_guard<std::mutex> lock(mu_);
        Json line{{"seq", seq_++},
                  {"kind", req.meta.kind == PromptKind::Recommend ? "recommend" : "reflect"},
                  {"model", req.model},
                  {"temperature", req.temperature},
                  {"prompt_sha", req.prompt.sha()},
                  {"response_sha", sha256_hex(response)},
                  {"cached", cached}};
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        out << line.dump() << '\n';
    }

private:
    fs::path path_;
    std::mutex mu_;
    std::uint64_t seq_ = 0;
};

/// Wraps a transport backend with the response cache. A hit never touches
/// the inner backend.
class CachingBackend : public LlmBackend {
public:
    CachingBackend(std::shared_ptr<LlmBackend> inner, std::shared_ptr<CacheStore> cache,
                   std::shared_ptr<AuditLog> audit = nullptr)
        : inner_(std::move(inner)), cache_(std::move(cache)), audit_(std::move(audit)) {}

    std::string complete(const LlmRequest& req) override {
        const std::string k = CacheStore::key(req.model, req.prompt.sha(), req.temperature);
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (auto hit = cache_->get(k)) {
                ++hits_;
                if (audit_) audit_->record(req, *hit, true);
                return *hit;
            }
        }
        std::string response = inner_->complete(req);
        {
            std::lock_guard<std::mutex> lock(mu_);
            cache_->put(k, response);
            ++misses_;
        }
        if (audit_) audit_->record(req, response, false);
        return response;
    }

    std::string kind() const override { return "cached:" + inner_->kind(); }

    std::uint64_t hits() const { return hits_; }
    std::uint64_t misses() const { return misses_; }

private:
    std::shared_ptr<LlmBackend> inner_;
    std::shared_ptr<CacheStore> cache_;
    std::shared_ptr<AuditLog> audit_;
    std::mutex mu_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
};

/// Records an audit line for every completion without caching anything.
class AuditingBackend : public LlmBackend {
public:
    AuditingBackend(std::shared_ptr<LlmBackend> inner, std::shared_ptr<AuditLog> audit)
        : inner_(std::move(inner)), audit_(std::move(audit)) {}

    std::string complete(const LlmRequest& req) override {
        std::string response = inner_->complete(req);
        audit_->record(req, response, false);
        return response;
    }

    std::string kind() const override { return inner_->kind(); }

private:
    std::shared_ptr<LlmBackend> inner_;
    std::shared_ptr<AuditLog> audit_;
};

struct RetryPolicy {
    int max_retries = 3;
    int backoff_ms = 100;
    double backoff_mult = 2.0;
};

struct HttpBackendConfig {
    std::string endpoint = "http://localhost:8000";  // scheme://host[:port]
    std::string path = "/v1/chat/completions";
    std::string model = "llama-3-8b-instruct";
    std::string api_key_env = "MOREREC_API_KEY";
    int timeout_ms = 30000;
    RetryPolicy retry;
    int max_concurrency = 4;
};

}  // namespace morerec

// The HTTP transport is only pulled in where needed; httplib is heavy.
#ifndef MOREREC_NO_HTTP
#include <httplib.h>

namespace morerec {

/// OpenAI-compatible chat-completion client with bounded retries and a
/// concurrency cap on in-flight requests.
class HttpBackend : public LlmBackend {
public:
    explicit HttpBackend(HttpBackendConfig config)
        : config_(std::move(config)), inflight_(0) {}

    std::string complete(const LlmRequest& req) override {
        const std::string request_id = req.prompt.sha().substr(0, 12);
        Json body{{"model", req.model.empty() ? config_.model : req.model},
                  {"messages", Json::array({Json{{"role", "user"}, {"content", req.prompt.rendered_text}}})},
                  {"temperature", req.temperature},
                  {"max_tokens", req.max_tokens}};
        const std::string payload = body.dump();

        ConcurrencyGuard guard(*this);
        int backoff = config_.retry.backoff_ms;
        std::string last_error;
        for (int attempt = 0; attempt <= config_.retry.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff = static_cast<int>(backoff * config_.retry.backoff_mult);
            }
            httplib::Client client(config_.endpoint);
            client.set_connection_timeout(0, config_.timeout_ms * 1000);
            client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
            httplib::Headers headers;
            const char* key = std::getenv(config_.api_key_env.c_str());
            if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
            auto res = client.Post(config_.path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "http status " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw LlmError("request " + request_id + " failed: http status " +
                               std::to_string(res->status));
            }
            Json j = Json::parse(res->body, nullptr, false);
            if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
                throw LlmError("request " + request_id + ": unparseable completion response");
            return j["choices"][0]["message"]["content"].get<std::string>();
        }
        throw LlmError("request " + request_id + " failed after " +
                       std::to_string(config_.retry.max_retries + 1) + " attempts: " + last_error);
    }

    std::string kind() const override { return "http"; }

private:
    struct ConcurrencyGuard {
        explicit ConcurrencyGuard(HttpBackend& b) : backend(b) {
            std::unique_lock<std::mutex> lock(backend.mu_);
            backend.cv_.wait(lock,
                             [&] { return backend.inflight_ < backend.config_.max_concurrency; });
            ++backend.inflight_;
        }
        ~ConcurrencyGuard() {
            {
                std::lock_guard<std::mutex> lock(backend.mu_);
                --backend.inflight_;
            }
            backend.cv_.notify_one();
        }
        HttpBackend& backend;
    };

    HttpBackendConfig config_;
    std::mutex mu_;
    std::condition_variable cv_;
    int inflight_;
};

}  // namespace morerec
#endif  // MOREREC_NO_HTTP
