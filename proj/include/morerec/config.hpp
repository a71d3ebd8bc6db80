#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "morerec/banks.hpp"
#include "morerec/cf.hpp"
#include "morerec/io.hpp"
#include "morerec/policy.hpp"
#include "morerec/sha256.hpp"

namespace morerec {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Minimal TOML reader covering what run configs use: [sections], string /
/// number / bool scalars, flat arrays, and # comments.
class TomlFile {
public:
    using Value = std::variant<std::string, double, std::int64_t, bool, std::vector<std::int64_t>>;

    static TomlFile parse(const std::string& text) {
        TomlFile out;
        std::string section;
        std::size_t lineno = 0;
        std::size_t start = 0;
        while (start <= text.size()) {
            auto nl = text.find('\n', start);
            std::string line = text.substr(start, nl == std::string::npos ? std::string::npos
                                                                          : nl - start);
            start = nl == std::string::npos ? text.size() + 1 : nl + 1;
            ++lineno;

            if (auto hash = find_comment(line); hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;

            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError("bad section header at line " + std::to_string(lineno));
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("expected key = value at line " + std::to_string(lineno));
            const std::string key = trim(line.substr(0, eq));
            const std::string raw = trim(line.substr(eq + 1));
            out.values_[section + "." + key] = parse_value(raw, lineno);
        }
        return out;
    }

    static TomlFile parse_file(const fs::path& path) { return parse(read_file(path)); }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* s = std::get_if<std::string>(&it->second)) return *s;
        throw ConfigError("expected string for " + key);
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* d = std::get_if<double>(&it->second)) return *d;
        if (auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
        throw ConfigError("expected number for " + key);
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* i = std::get_if<std::int64_t>(&it->second)) return *i;
        throw ConfigError("expected integer for " + key);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* b = std::get_if<bool>(&it->second)) return *b;
        throw ConfigError("expected bool for " + key);
    }

    std::vector<std::int64_t> get_int_array(const std::string& key,
                                            std::vector<std::int64_t> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (auto* a = std::get_if<std::vector<std::int64_t>>(&it->second)) return *a;
        throw ConfigError("expected integer array for " + key);
    }

private:
    static std::string trim(const std::string& s) {
        auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return {};
        auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static std::size_t find_comment(const std::string& line) {
        bool in_string = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_string = !in_string;
            if (line[i] == '#' && !in_string) return i;
        }
        return std::string::npos;
    }

    static Value parse_value(const std::string& raw, std::size_t lineno) {
        if (raw.empty()) throw ConfigError("empty value at line " + std::to_string(lineno));
        if (raw.front() == '"') {
            if (raw.size() < 2 || raw.back() != '"')
                throw ConfigError("unterminated string at line " + std::to_string(lineno));
            return raw.substr(1, raw.size() - 2);
        }
        if (raw == "true") return true;
        if (raw == "false") return false;
        if (raw.front() == '[') {
            if (raw.back() != ']')
                throw ConfigError("unterminated array at line " + std::to_string(lineno));
            std::vector<std::int64_t> items;
            std::string body = raw.substr(1, raw.size() - 2);
            std::size_t pos = 0;
            while (pos < body.size()) {
                auto comma = body.find(',', pos);
                std::string piece = trim(body.substr(pos, comma == std::string::npos
                                                              ? std::string::npos
                                                              : comma - pos));
                if (!piece.empty()) items.push_back(std::stoll(piece));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            return items;
        }
        // number: integer unless it carries a '.', 'e' or 'E'
        if (raw.find_first_of(".eE") != std::string::npos &&
            raw.find_first_not_of("+-0123456789.eE") == std::string::npos)
            return std::stod(raw);
        if (raw.find_first_not_of("+-0123456789_") == std::string::npos) {
            std::string digits;
            for (char c : raw)
                if (c != '_') digits.push_back(c);
            return static_cast<std::int64_t>(std::stoll(digits));
        }
        throw ConfigError("cannot parse value '" + raw + "' at line " + std::to_string(lineno));
    }

    std::map<std::string, Value> values_;
};

enum class BackendKind { Mock, Http };

inline const char* backend_name(BackendKind b) { return b == BackendKind::Mock ? "mock" : "http"; }

/// Every knob of a pipeline run. The config hash covers all fields and is
/// embedded in reports and the run manifest.
struct RunConfig {
    // data
    std::string catalog_file;
    std::string interactions_file;

    // run
    std::string run_dir = "runs/default";
    std::uint64_t master_seed = 7;
    BackendKind backend = BackendKind::Mock;
    std::string mock_scenario = "neutral";
    bool determinism = true;

    // corpus
    std::size_t pool_size = 50;
    std::size_t max_history = 50;

    // cf
    std::size_t cf_dim = 64;
    double cf_lr = 0.05;
    std::size_t cf_epochs = 30;
    std::size_t cf_negatives = 4;
    std::string cf_squash = "logistic";

    // cluster
    std::size_t k_clusters = 20;

    // memory
    double threshold_h = 0.1;
    double tau = 1.0;
    int rounds = 3;
    std::size_t n_demos = 3;
    std::string metric = "ndcg@10";
    std::string refine_level = "individual";
    std::size_t bank_capacity = 0;  // 0 = unbounded; eviction drops lowest imp

    // bandit
    PpoConfig ppo;

    // llm
    std::string endpoint = "http://localhost:8000";
    std::string model = "llama-3-8b-instruct";
    double temperature = 0.0;
    int max_tokens = 512;
    int timeout_ms = 30000;
    int retries = 3;
    int max_concurrency = 4;
    std::string cache_dir;
    std::size_t token_budget = 0;

    // eval
    std::string eval_mode = "full";
    std::vector<std::size_t> ks = {1, 5, 10};

    static RunConfig from_toml(const TomlFile& t) {
        RunConfig c;
        c.catalog_file = t.get_string("data.catalog", c.catalog_file);
        c.interactions_file = t.get_string("data.interactions", c.interactions_file);

        c.run_dir = t.get_string("run.run_dir", c.run_dir);
        c.master_seed = static_cast<std::uint64_t>(t.get_int("run.master_seed",
                                                             static_cast<std::int64_t>(c.master_seed)));
        const std::string backend = t.get_string("run.backend", "mock");
        if (backend == "mock") c.backend = BackendKind::Mock;
        else if (backend == "http") c.backend = BackendKind::Http;
        else throw ConfigError("unknown backend: " + backend);
        c.mock_scenario = t.get_string("run.mock_scenario", c.mock_scenario);
        c.determinism = t.get_bool("run.determinism", c.determinism);

        c.pool_size = static_cast<std::size_t>(t.get_int("corpus.pool_size", 50));
        c.max_history = static_cast<std::size_t>(t.get_int("corpus.max_history", 50));

        c.cf_dim = static_cast<std::size_t>(t.get_int("cf.dim", 64));
        c.cf_lr = t.get_double("cf.lr", c.cf_lr);
        c.cf_epochs = static_cast<std::size_t>(t.get_int("cf.epochs", 30));
        c.cf_negatives = static_cast<std::size_t>(t.get_int("cf.negatives_per_positive", 4));
        c.cf_squash = t.get_string("cf.squash", c.cf_squash);

        c.k_clusters = static_cast<std::size_t>(t.get_int("cluster.k", 20));

        c.threshold_h = t.get_double("memory.threshold_h", 0.1);
        c.tau = t.get_double("memory.tau", 1.0);
        c.rounds = static_cast<int>(t.get_int("memory.rounds", 3));
        c.n_demos = static_cast<std::size_t>(t.get_int("memory.n_demos", 3));
        c.metric = t.get_string("memory.metric", c.metric);
        c.refine_level = t.get_string("memory.refine_level", c.refine_level);
        c.bank_capacity = static_cast<std::size_t>(t.get_int("memory.bank_capacity", 0));

        c.ppo.clip_delta = t.get_double("bandit.clip_delta", 0.2);
        c.ppo.epsilon = t.get_double("bandit.epsilon", 0.1);
        c.ppo.actor_lr = t.get_double("bandit.actor_lr", 3e-3);
        c.ppo.critic_lr = t.get_double("bandit.critic_lr", 1e-2);
        c.ppo.epochs = static_cast<std::size_t>(t.get_int("bandit.epochs", 4));
        c.ppo.batch_size = static_cast<std::size_t>(t.get_int("bandit.batch_size", 64));
        c.ppo.steps = static_cast<std::size_t>(t.get_int("bandit.steps", 5000));
        c.ppo.buffer_capacity = static_cast<std::size_t>(t.get_int("bandit.buffer_capacity", 4096));
        c.ppo.hidden_width = static_cast<std::size_t>(t.get_int("bandit.hidden_width", 0));
        c.ppo.entropy_coef = t.get_double("bandit.entropy_coef", 0.0);
        c.ppo.advantage_norm = t.get_bool("bandit.advantage_norm", false);
        c.ppo.tau = c.tau;

        c.endpoint = t.get_string("llm.endpoint", c.endpoint);
        c.model = t.get_string("llm.model", c.model);
        c.temperature = t.get_double("llm.temperature", 0.0);
        c.max_tokens = static_cast<int>(t.get_int("llm.max_tokens", 512));
        c.timeout_ms = static_cast<int>(t.get_int("llm.timeout_ms", 30000));
        c.retries = static_cast<int>(t.get_int("llm.retries", 3));
        c.max_concurrency = static_cast<int>(t.get_int("llm.max_concurrency", 4));
        c.cache_dir = t.get_string("llm.cache_dir", c.cache_dir);
        c.token_budget = static_cast<std::size_t>(t.get_int("llm.token_budget", 0));

        c.eval_mode = t.get_string("eval.mode", c.eval_mode);
        c.ks.clear();
        for (auto k : t.get_int_array("eval.ks", {1, 5, 10})) c.ks.push_back(static_cast<std::size_t>(k));

        c.validate();
        return c;
    }

    static RunConfig from_file(const fs::path& path) {
        return from_toml(TomlFile::parse_file(path));
    }

    void validate() const {
        refine_level_from_name(refine_level);  // throws on garbage
        squash_from_name(cf_squash);
        if (determinism && backend == BackendKind::Http) {
            if (temperature != 0.0)
                throw ConfigError("determinism mode requires temperature = 0");
            if (cache_dir.empty())
                throw ConfigError("determinism mode with the http backend requires a cache_dir");
        }
        if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
    }

    PromptConfig prompt_config() const {
        PromptConfig p;
        p.model = backend == BackendKind::Mock ? "mock" : model;
        p.temperature = temperature;
        p.max_tokens = max_tokens;
        p.token_budget = token_budget;
        p.max_history = max_history;
        return p;
    }

    Json to_json() const {
        return Json{{"data", Json{{"catalog", catalog_file}, {"interactions", interactions_file}}},
                    {"run", Json{{"run_dir", run_dir},
                                 {"master_seed", master_seed},
                                 {"backend", backend_name(backend)},
                                 {"mock_scenario", mock_scenario},
                                 {"determinism", determinism}}},
                    {"corpus", Json{{"pool_size", pool_size}, {"max_history", max_history}}},
                    {"cf", Json{{"dim", cf_dim},
                                {"lr", cf_lr},
                                {"epochs", cf_epochs},
                                {"negatives_per_positive", cf_negatives},
                                {"squash", cf_squash}}},
                    {"cluster", Json{{"k", k_clusters}}},
                    {"memory", Json{{"threshold_h", threshold_h},
                                    {"tau", tau},
                                    {"rounds", rounds},
                                    {"n_demos", n_demos},
                                    {"metric", metric},
                                    {"refine_level", refine_level},
                                    {"bank_capacity", bank_capacity}}},
                    {"bandit", ppo.to_json()},
                    {"llm", Json{{"endpoint", endpoint},
                                 {"model", model},
                                 {"temperature", temperature},
                                 {"max_tokens", max_tokens},
                                 {"timeout_ms", timeout_ms},
                                 {"retries", retries},
                                 {"max_concurrency", max_concurrency},
                                 {"cache_dir", cache_dir},
                                 {"token_budget", token_budget}}},
                    {"eval", Json{{"mode", eval_mode}, {"ks", ks}}}};
    }

    /// Covers every behavioral field; reports embed it. The run directory
    /// is excluded: it names where outputs land, not what gets computed, and
    /// reports must be byte-identical across runs into fresh directories.
    std::string config_hash() const {
        Json j = to_json();
        j["run"].erase("run_dir");
        return sha256_hex(j.dump());
    }
};

}  // namespace morerec
