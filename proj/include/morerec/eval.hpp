#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "morerec/banks.hpp"
#include "morerec/config.hpp"
#include "morerec/metrics.hpp"
#include "morerec/policy.hpp"
#include "morerec/reflection.hpp"

namespace morerec {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// How the reflection(s) for the recommendation prompt are chosen.
struct AblationMode {
    enum class Kind { Full, Random, Greedy, Single, Concat };
    Kind kind = Kind::Full;
    std::optional<Perspective> single;     // Kind::Single
    std::vector<Perspective> concat;       // Kind::Concat, EP/IP/CF order

    std::string name() const {
        switch (kind) {
            case Kind::Full: return "full";
            case Kind::Random: return "random";
            case Kind::Greedy: return "greedy";
            case Kind::Single: return std::string("single-") + perspective_name(*single);
            case Kind::Concat: {
                std::string out = "concat";
                for (Perspective p : concat) out += std::string("-") + perspective_name(p);
                return out;
            }
        }
        return "?";
    }

    static AblationMode parse(const std::string& s) {
        AblationMode m;
        if (s == "full") {
            m.kind = Kind::Full;
        } else if (s == "random") {
            m.kind = Kind::Random;
        } else if (s == "greedy") {
            m.kind = Kind::Greedy;
        } else if (s.rfind("single-", 0) == 0) {
            m.kind = Kind::Single;
            std::string p = s.substr(7);
            for (auto& ch : p) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            m.single = perspective_from_name(p);
        } else if (s == "concat-all") {
            m.kind = Kind::Concat;
            m.concat = {Perspective::EP, Perspective::IP, Perspective::CF};
        } else if (s.rfind("concat-", 0) == 0) {
            m.kind = Kind::Concat;
            std::size_t pos = 7;
            while (pos < s.size()) {
                auto dash = s.find('-', pos);
                std::string p = s.substr(pos, dash == std::string::npos ? std::string::npos
                                                                        : dash - pos);
                for (auto& ch : p)
                    ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
                m.concat.push_back(perspective_from_name(p));
                if (dash == std::string::npos) break;
                pos = dash + 1;
            }
            std::sort(m.concat.begin(), m.concat.end());  // fixed EP, IP, CF order
            m.concat.erase(std::unique(m.concat.begin(), m.concat.end()), m.concat.end());
        } else {
            throw EvalError("unknown ablation mode: " + s);
        }
        return m;
    }
};

struct UserEvalRow {
    std::string user_id;
    std::vector<std::string> perspectives;      // chosen perspective name(s)
    std::vector<std::string> reflection_ids;
    std::optional<std::size_t> rank;
    bool fallback_no_reflection = false;
    bool excluded = false;  // LLM failure

    Json to_json() const {
        Json j{{"user_id", user_id},
               {"perspectives", perspectives},
               {"reflection_ids", reflection_ids},
               {"fallback_no_reflection", fallback_no_reflection},
               {"excluded", excluded}};
        if (rank) j["rank"] = *rank;
        else j["rank"] = nullptr;
        return j;
    }
};

struct EvalReport {
    std::string mode;
    std::uint64_t seed = 0;
    std::map<std::string, std::uint64_t> seeds;  // per-stage seed matrix
    std::vector<MetricResult> metrics;
    std::vector<UserEvalRow> per_user;
    std::size_t evaluated_users = 0;
    std::size_t excluded_users = 0;
    std::size_t fallback_users = 0;
    // provenance
    std::string config_hash;
    std::string policy_hash;
    std::string banks_hash;
    std::map<std::string, std::string> template_hashes;

    Json to_json() const {
        Json metrics_json = Json::array();
        for (const auto& m : metrics)
            metrics_json.push_back(Json{{"metric", m.metric}, {"k", m.k}, {"value", m.value}});
        Json users_json = Json::array();
        for (const auto& row : per_user) users_json.push_back(row.to_json());
        Json th = Json::object();
        for (const auto& [k, v] : template_hashes) th[k] = v;
        Json seeds_json = Json::object();
        for (const auto& [k, v] : seeds) seeds_json[k] = v;
        return Json{{"mode", mode},
                    {"seed", seed},
                    {"seeds", seeds_json},
                    {"metrics", metrics_json},
                    {"evaluated_users", evaluated_users},
                    {"excluded_users", excluded_users},
                    {"fallback_users", fallback_users},
                    {"provenance", Json{{"config_hash", config_hash},
                                        {"policy_hash", policy_hash},
                                        {"banks_hash", banks_hash},
                                        {"template_hashes", th}}},
                    {"per_user", users_json}};
    }

    double metric_value(const std::string& metric, std::size_t k) const {
        for (const auto& m : metrics)
            if (m.metric == metric && m.k == k) return m.value;
        throw EvalError("metric not in report: " + metric + "@" + std::to_string(k));
    }

    std::string metrics_csv() const {
        std::string out = "metric,k,value\n";
        for (const auto& m : metrics)
            out += m.metric + "," + std::to_string(m.k) + "," + format_double(m.value) + "\n";
        return out;
    }

    std::string per_user_csv() const {
        std::string out = "user_id,perspectives,rank,fallback,excluded\n";
        for (const auto& r : per_user) {
            std::string p;
            for (std::size_t i = 0; i < r.perspectives.size(); ++i)
                p += (i ? "+" : "") + r.perspectives[i];
            out += r.user_id + "," + p + "," + (r.rank ? std::to_string(*r.rank) : "unranked") +
                   "," + (r.fallback_no_reflection ? "1" : "0") + "," +
                   (r.excluded ? "1" : "0") + "\n";
        }
        return out;
    }

    static std::string format_double(double v) {
        Json j = v;
        return j.dump();
    }
};

/// Per-user reflection choice for one evaluation mode.
inline std::vector<ReflectionRef> select_reflections(const AblationMode& mode,
                                                     const BankSet& banks,
                                                     const PolicyParams* policy,
                                                     const CfModel* cf_model,
                                                     const std::string& user,
                                                     const std::vector<std::string>& history,
                                                     std::uint64_t seed, UserEvalRow& row) {
    auto push_best = [&](Perspective p) -> bool {
        const MemoryBank* bank = banks.find(user, p);
        if (bank == nullptr || bank->empty()) return false;
        const Reflection& best = bank->best();
        row.perspectives.push_back(perspective_name(p));
        row.reflection_ids.push_back(best.reflection_id);
        return true;
    };

    std::vector<ReflectionRef> out;
    auto to_refs = [&]() {
        for (std::size_t i = 0; i < row.reflection_ids.size(); ++i) {
            const Perspective p = perspective_from_name(row.perspectives[i]);
            out.push_back({p, banks.find(user, p)->best().text});
        }
    };

    switch (mode.kind) {
        case AblationMode::Kind::Full: {
            if (policy == nullptr || cf_model == nullptr)
                throw EvalError("full mode requires a trained policy and CF model");
            InferResult inf = infer(*policy, banks, *cf_model, user, history);
            if (inf.reflection) {
                row.perspectives.push_back(perspective_name(inf.perspective));
                row.reflection_ids.push_back(inf.reflection->reflection_id);
                out.push_back({inf.perspective, inf.reflection->text});
            } else {
                row.fallback_no_reflection = true;
            }
            return out;
        }
        case AblationMode::Kind::Random: {
            Rng rng(mix_seed(seed, "random-mode", user));
            const Perspective p = perspective_from_code(static_cast<int>(rng.index(3)));
            if (!push_best(p)) row.fallback_no_reflection = true;
            to_refs();
            return out;
        }
        case AblationMode::Kind::Greedy: {
            // perspective whose best reflection has the highest validation imp
            std::optional<Perspective> winner;
            double best_imp = 0.0;
            for (Perspective p : kAllPerspectives) {
                const MemoryBank* bank = banks.find(user, p);
                if (bank == nullptr || bank->empty()) continue;
                const double imp = *bank->best().imp;
                if (!winner || imp > best_imp) {
                    winner = p;
                    best_imp = imp;
                }
            }
            if (winner) push_best(*winner);
            else row.fallback_no_reflection = true;
            to_refs();
            return out;
        }
        case AblationMode::Kind::Single: {
            if (!push_best(*mode.single)) row.fallback_no_reflection = true;
            to_refs();
            return out;
        }
        case AblationMode::Kind::Concat: {
            for (Perspective p : mode.concat) push_best(p);
            if (row.reflection_ids.empty()) row.fallback_no_reflection = true;
            to_refs();
            return out;
        }
    }
    return out;
}

/// Online evaluation (the test phase): per user, pick reflection(s) per the
/// mode, prompt the recommendation LLM over the test candidates, parse, rank
/// the held-out target, and aggregate HR/NDCG. LLM failures exclude the user
/// from the means and are counted.
inline EvalReport run_online_eval(const AblationMode& mode, const PolicyParams* policy,
                                  const BankSet& banks, const Corpus& corpus,
                                  const std::map<std::string, Split>& splits,
                                  const std::map<std::string, CandidateSet>& test_candidates,
                                  const CfModel* cf_model, LlmBackend& backend,
                                  const PromptConfig& prompt_config,
                                  const std::vector<std::size_t>& ks, std::uint64_t seed) {
    EvalReport report;
    report.mode = mode.name();
    report.seed = seed;
    for (TemplateId id : {TemplateId::Rec, TemplateId::Ep, TemplateId::Ip, TemplateId::Cf})
        report.template_hashes[template_name(id)] = template_hash(id);

    std::vector<UserRank> ranks;
    for (const auto& seq : corpus.sequences()) {
        const std::string& user = seq.user_id;
        auto split_it = splits.find(user);
        auto cand_it = test_candidates.find(user);
        if (split_it == splits.end() || cand_it == test_candidates.end()) continue;
        const Split& split = split_it->second;
        const CandidateSet& candidates = cand_it->second;

        // the online stage sees everything up to the test target
        std::vector<std::string> history = split.train_prefix;
        history.push_back(split.validation_target);

        UserEvalRow row;
        row.user_id = user;
        try {
            std::vector<ReflectionRef> refs = select_reflections(
                mode, banks, policy, cf_model, user, history, seed, row);
            RankedList ranked = recommend_with_llm(backend, corpus, user, history, candidates,
                                                   refs, prompt_config);
            row.rank = rank_of_target(ranked.item_ids, candidates.target_item_id);
            ranks.push_back({user, row.rank});
        } catch (const LlmError&) {
            row.excluded = true;
        }
        if (row.fallback_no_reflection) ++report.fallback_users;
        if (row.excluded) ++report.excluded_users;
        report.per_user.push_back(std::move(row));
    }
    if (ranks.empty()) throw EvalError("no users evaluated");
    report.evaluated_users = ranks.size();
    report.metrics = compute_metrics(ranks, ks);
    return report;
}

}  // namespace morerec
