#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "morerec/kmeans.hpp"
#include "morerec/metrics.hpp"
#include "morerec/reflection.hpp"
#include "morerec/rng.hpp"

namespace morerec {

class MemoryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// All scored reflections of one (user, perspective). Ineffective entries are
/// kept on purpose: the bandit's reward distribution needs the negatives.
/// A nonzero capacity evicts the lowest-imp entry on overflow.
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(std::string user_id, Perspective perspective, std::size_t capacity = 0)
        : user_id_(std::move(user_id)), perspective_(perspective), capacity_(capacity) {}

    const std::string& user_id() const { return user_id_; }
    Perspective perspective() const { return perspective_; }
    const std::vector<Reflection>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }

    void append(Reflection r) {
        if (!r.scored()) throw MemoryError("bank only admits scored reflections");
        if (r.user_id != user_id_ || r.perspective != perspective_)
            throw MemoryError("reflection does not belong to this bank");
        if (r.reflection_id.empty()) throw MemoryError("reflection has no id");
        entries_.push_back(std::move(r));
        if (capacity_ > 0 && entries_.size() > capacity_) {
            // evict lowest imp; on ties the most recent of the lowest goes
            std::size_t victim = 0;
            for (std::size_t i = 1; i < entries_.size(); ++i)
                if (*entries_[i].imp <= *entries_[victim].imp) victim = i;
            entries_.erase(entries_.begin() + static_cast<long>(victim));
        }
    }

    /// Highest-imp entry; ties resolve to the earliest (smallest) id.
    const Reflection& best() const {
        if (entries_.empty())
            throw MemoryError("empty memory bank for user " + user_id_ + " perspective " +
                              perspective_name(perspective_));
        const Reflection* best = &entries_.front();
        for (const auto& e : entries_) {
            if (*e.imp > *best->imp ||
                (*e.imp == *best->imp && e.reflection_id < best->reflection_id))
                best = &e;
        }
        return *best;
    }

    std::vector<const Reflection*> effective(double threshold_h) const {
        std::vector<const Reflection*> out;
        for (const auto& e : entries_)
            if (*e.imp > threshold_h) out.push_back(&e);
        return out;
    }

private:
    std::string user_id_;
    Perspective perspective_ = Perspective::EP;
    std::size_t capacity_ = 0;  // 0 = unbounded
    std::vector<Reflection> entries_;
};

inline const Reflection& best_reflection(const MemoryBank& bank) { return bank.best(); }

/// Every bank of a run, addressed by (user, perspective). Also owns the
/// reflection id sequence: ids are zero-padded creation counters, so
/// lexicographic order equals creation order.
class BankSet {
public:
    BankSet() = default;
    explicit BankSet(std::size_t bank_capacity) : bank_capacity_(bank_capacity) {}

    MemoryBank& bank(const std::string& user_id, Perspective p) {
        auto key = std::make_pair(user_id, p);
        auto it = banks_.find(key);
        if (it == banks_.end())
            it = banks_.emplace(key, MemoryBank(user_id, p, bank_capacity_)).first;
        return it->second;
    }

    const MemoryBank* find(const std::string& user_id, Perspective p) const {
        auto it = banks_.find(std::make_pair(user_id, p));
        return it == banks_.end() ? nullptr : &it->second;
    }

    std::string assign_id(Reflection& r) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%06llu", static_cast<unsigned long long>(next_id_++));
        r.reflection_id = std::string("R") + buf + "-" + r.user_id + "-" +
                          perspective_name(r.perspective) + "-r" + std::to_string(r.iteration_round);
        return r.reflection_id;
    }

    void commit(Reflection r) {
        if (r.reflection_id.empty()) assign_id(r);
        bank(r.user_id, r.perspective).append(std::move(r));
    }

    const std::map<std::pair<std::string, Perspective>, MemoryBank>& all() const { return banks_; }

    std::vector<const Reflection*> entries_of(Perspective p) const {
        std::vector<const Reflection*> out;
        for (const auto& [key, bank] : banks_)
            if (key.second == p)
                for (const auto& e : bank.entries()) out.push_back(&e);
        return out;
    }

    std::size_t total_entries() const {
        std::size_t n = 0;
        for (const auto& [key, bank] : banks_) n += bank.size();
        return n;
    }

    void save(const fs::path& dir) const {
        fs::create_directories(dir);
        Json meta{{"next_id", next_id_}};
        write_file_atomic(dir / "banks_meta.json", meta.dump(2));
        for (const auto& [key, bank] : banks_) {
            std::vector<Json> lines;
            for (const auto& e : bank.entries()) lines.push_back(e.to_json());
            write_jsonl(dir / (key.first + "." + perspective_name(key.second) + ".jsonl"), lines);
        }
    }

    static BankSet load(const fs::path& dir, std::size_t bank_capacity = 0) {
        BankSet set(bank_capacity);
        if (fs::exists(dir / "banks_meta.json")) {
            Json meta = Json::parse(read_file(dir / "banks_meta.json"));
            set.next_id_ = meta.at("next_id").get<std::uint64_t>();
        }
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            for_each_jsonl(f, [&](std::size_t, const Json& j) {
                Reflection r = Reflection::from_json(j);
                set.bank(r.user_id, r.perspective).append(std::move(r));
            });
        }
        return set;
    }

private:
    std::map<std::pair<std::string, Perspective>, MemoryBank> banks_;
    std::uint64_t next_id_ = 0;
    std::size_t bank_capacity_ = 0;  // 0 = unbounded
};

/// One (reflection, user) improvement measurement. The pipeline produces one
/// row per scored reflection; refine() also accepts tables where a shared
/// reflection was measured for several users.
struct ImpRow {
    std::string reflection_id;
    std::string user_id;
    Perspective perspective = Perspective::EP;
    double imp = 0.0;
};

inline std::vector<ImpRow> imp_table(const BankSet& banks) {
    std::vector<ImpRow> rows;
    for (const auto& [key, bank] : banks.all())
        for (const auto& e : bank.entries())
            rows.push_back({e.reflection_id, e.user_id, e.perspective, *e.imp});
    return rows;
}

enum class RefineLevel { Global, Group, Individual };

inline const char* refine_level_name(RefineLevel l) {
    switch (l) {
        case RefineLevel::Global: return "global";
        case RefineLevel::Group: return "group";
        case RefineLevel::Individual: return "individual";
    }
    return "?";
}

inline RefineLevel refine_level_from_name(const std::string& s) {
    if (s == "global") return RefineLevel::Global;
    if (s == "group") return RefineLevel::Group;
    if (s == "individual") return RefineLevel::Individual;
    throw MemoryError("unknown refine level: " + s);
}

/// Winners per scope and perspective: the effective reflection with the
/// greatest mean improvement over the users it was measured on.
struct RefinePlan {
    RefineLevel level = RefineLevel::Individual;
    double tau = 1.0;
    // perspective name -> scope key -> winning reflection id
    std::map<std::string, std::map<std::string, std::string>> selected;
    std::vector<std::string> omitted_scopes;

    Json to_json() const {
        Json sel = Json::object();
        for (const auto& [p, scopes] : selected) {
            Json s = Json::object();
            for (const auto& [scope, id] : scopes) s[scope] = id;
            sel[p] = s;
        }
        return Json{{"level", refine_level_name(level)},
                    {"tau", tau},
                    {"selected", sel},
                    {"omitted_scopes", omitted_scopes}};
    }
};

namespace detail {

/// Mean imp per reflection id over the given rows; argmax with ties going to
/// the smallest id.
inline std::optional<std::string> argmax_mean_imp(const std::vector<const ImpRow*>& rows) {
    std::map<std::string, std::pair<double, std::size_t>> sums;
    for (const ImpRow* r : rows) {
        auto& [sum, count] = sums[r->reflection_id];
        sum += r->imp;
        count += 1;
    }
    std::optional<std::string> best;
    double best_mean = 0.0;
    for (const auto& [id, sc] : sums) {
        const double mean = sc.first / static_cast<double>(sc.second);
        if (!best || mean > best_mean) {  // map order makes ties pick smallest id
            best = id;
            best_mean = mean;
        }
    }
    return best;
}

}  // namespace detail

/// Selects demonstration winners at the requested scope. Only effective
/// reflections (imp > h) are eligible; scopes with none are omitted and
/// reported.
inline RefinePlan refine(const std::vector<ImpRow>& table, RefineLevel level,
                         const UserClustering* clustering, double threshold_h, double tau = 1.0) {
    if (level == RefineLevel::Group && clustering == nullptr)
        throw MemoryError("group-level refining requires a clustering");

    RefinePlan plan;
    plan.level = level;
    plan.tau = tau;

    for (Perspective p : kAllPerspectives) {
        std::vector<const ImpRow*> effective;
        for (const auto& row : table)
            if (row.perspective == p && row.imp > threshold_h) effective.push_back(&row);

        auto note_scope = [&](const std::string& scope, const std::vector<const ImpRow*>& rows) {
            if (auto id = detail::argmax_mean_imp(rows)) {
                plan.selected[perspective_name(p)][scope] = *id;
            } else {
                plan.omitted_scopes.push_back(std::string(perspective_name(p)) + "/" + scope);
            }
        };

        switch (level) {
            case RefineLevel::Global: {
                note_scope("global", effective);
                break;
            }
            case RefineLevel::Group: {
                std::map<std::size_t, std::vector<const ImpRow*>> by_cluster;
                for (std::size_t c = 0; c < clustering->k; ++c) by_cluster[c];
                for (const ImpRow* r : effective)
                    by_cluster[clustering->cluster_of(r->user_id)].push_back(r);
                for (const auto& [c, rows] : by_cluster)
                    note_scope("cluster:" + std::to_string(c), rows);
                break;
            }
            case RefineLevel::Individual: {
                std::map<std::string, std::vector<const ImpRow*>> by_user;
                for (const ImpRow* r : effective) by_user[r->user_id].push_back(r);
                for (const auto& [u, rows] : by_user) note_scope("user:" + u, rows);
                break;
            }
        }
    }
    return plan;
}

/// Draws up to n reflections without replacement, with probability
/// proportional to softmax(imp / tau) over the whole pool. Negative-imp
/// entries stay drawable at low probability.
inline std::vector<Reflection> sample_demos(const std::vector<const Reflection*>& pool,
                                            std::size_t n, double tau, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("sample_demos: n must be > 0");
    if (pool.empty()) throw std::invalid_argument("sample_demos: pool is empty");
    if (!(tau > 0.0)) throw std::invalid_argument("sample_demos: tau must be > 0");

    double max_imp = -1e300;
    for (const Reflection* r : pool) max_imp = std::max(max_imp, *r->imp);
    std::vector<double> weights;
    weights.reserve(pool.size());
    for (const Reflection* r : pool) weights.push_back(std::exp((*r->imp - max_imp) / tau));

    Rng rng(mix_seed(seed, "demo-sample"));
    std::vector<Reflection> out;
    const std::size_t draws = std::min(n, pool.size());
    for (std::size_t d = 0; d < draws; ++d) {
        const std::size_t pick = rng.pick_weighted(weights);
        out.push_back(*pool[pick]);
        weights[pick] = 0.0;
    }
    return out;
}

/// Everything the offline reflect/score passes need to operate. Keyed maps
/// use user ids; iteration order always follows the corpus's user order.
struct OfflineContext {
    const Corpus& corpus;
    const std::map<std::string, Split>& splits;
    const std::map<std::string, CandidateSet>& val_candidates;
    const std::map<std::string, RankedList>& baselines;  // no-reflection offline runs
    LlmBackend& backend;
    const CfModel* cf_model = nullptr;
    const UserClustering* clustering = nullptr;
    PromptConfig prompt;
    std::string metric_name = "ndcg@10";
    double threshold_h = 0.1;
    double tau = 1.0;
    std::size_t n_demos = 3;
    std::uint64_t seed = 0;
};

/// Measures the improvement effect of one reflection on the validation
/// candidates: metric with the reflection in the prompt minus metric
/// without. Both arms see identical candidates and presentation order.
inline void score_reflection(Reflection& r, const OfflineContext& ctx) {
    const Split& split = ctx.splits.at(r.user_id);
    const CandidateSet& candidates = ctx.val_candidates.at(r.user_id);
    if (candidates.phase != Phase::Validation)
        throw MemoryError("scoring requires validation-phase candidates");

    RankedList with = recommend_with_llm(ctx.backend, ctx.corpus, r.user_id, split.train_prefix,
                                         candidates, {ReflectionRef{r.perspective, r.text}},
                                         ctx.prompt);
    auto baseline_it = ctx.baselines.find(r.user_id);
    RankedList without = baseline_it != ctx.baselines.end()
                             ? baseline_it->second
                             : recommend_with_llm(ctx.backend, ctx.corpus, r.user_id,
                                                  split.train_prefix, candidates, {}, ctx.prompt);

    r.with_value = single_user_metric(ctx.metric_name,
                                      rank_of_target(with.item_ids, candidates.target_item_id));
    r.without_value = single_user_metric(
        ctx.metric_name, rank_of_target(without.item_ids, candidates.target_item_id));
    r.imp = r.with_value - r.without_value;
    r.effective = *r.imp > ctx.threshold_h;
    r.metric_name = ctx.metric_name;
}

struct RoundStats {
    int round = 0;
    std::size_t generated = 0;
    std::size_t failures = 0;
    double mean_imp = 0.0;
    std::array<double, 3> mean_imp_by_perspective{};
    std::array<std::size_t, 3> count_by_perspective{};

    Json to_json() const {
        return Json{{"round", round},
                    {"generated", generated},
                    {"failures", failures},
                    {"mean_imp", mean_imp},
                    {"mean_imp_by_perspective", mean_imp_by_perspective},
                    {"count_by_perspective", count_by_perspective}};
    }
};

namespace detail {

struct CreatedEntry {
    Perspective perspective;
    double imp;
};

inline RoundStats finalize_stats(int round, const std::vector<CreatedEntry>& created,
                                 std::size_t failures) {
    RoundStats s;
    s.round = round;
    s.failures = failures;
    s.generated = created.size();
    double sum = 0.0;
    std::array<double, 3> psum{};
    for (const CreatedEntry& e : created) {
        sum += e.imp;
        psum[static_cast<std::size_t>(perspective_code(e.perspective))] += e.imp;
        s.count_by_perspective[static_cast<std::size_t>(perspective_code(e.perspective))]++;
    }
    s.mean_imp = created.empty() ? 0.0 : sum / static_cast<double>(created.size());
    for (std::size_t p = 0; p < 3; ++p)
        s.mean_imp_by_perspective[p] =
            s.count_by_perspective[p] ? psum[p] / static_cast<double>(s.count_by_perspective[p])
                                      : 0.0;
    return s;
}

/// Scope pool for demonstration sampling: scored entries of `perspective`
/// from rounds strictly below `round`, visible to `user` at `level`.
inline std::vector<const Reflection*> demo_pool(const BankSet& banks, const std::string& user,
                                                Perspective perspective, int round,
                                                RefineLevel level,
                                                const UserClustering* clustering) {
    std::vector<const Reflection*> pool;
    auto visible = [&](const std::string& other_user) {
        switch (level) {
            case RefineLevel::Global: return true;
            case RefineLevel::Individual: return other_user == user;
            case RefineLevel::Group:
                return clustering->cluster_of(other_user) == clustering->cluster_of(user);
        }
        return false;
    };
    for (const Reflection* r : banks.entries_of(perspective))
        if (r->iteration_round < round && visible(r->user_id)) pool.push_back(r);
    return pool;
}

}  // namespace detail

/// Round 0: one fresh reflection per (user, perspective), no demonstrations,
/// scored and committed. A user's LLM failure skips that user and is counted.
inline RoundStats generate_initial_reflections(BankSet& banks, const OfflineContext& ctx) {
    std::vector<detail::CreatedEntry> created;
    std::size_t failures = 0;
    for (const auto& seq : ctx.corpus.sequences()) {
        const std::string& user = seq.user_id;
        if (!ctx.splits.count(user)) continue;
        for (Perspective p : kAllPerspectives) {
            try {
                PerspectiveView view =
                    build_view(p, ctx.corpus, ctx.splits.at(user), ctx.val_candidates.at(user),
                               ctx.baselines.at(user), ctx.splits.at(user).validation_target,
                               ctx.cf_model, ctx.prompt.max_history);
                Reflection r = reflect(p, view, {}, ctx.backend, ctx.prompt);
                banks.assign_id(r);
                score_reflection(r, ctx);
                created.push_back({p, *r.imp});
                banks.commit(std::move(r));
            } catch (const LlmError&) {
                ++failures;
            } catch (const ReflectionError&) {
                ++failures;
            }
        }
    }
    return detail::finalize_stats(0, created, failures);
}

/// Self-improvement loop: for each round, sample demonstrations from earlier
/// rounds at the given scope, regenerate reflections with them in context,
/// score and append. Returns one stats row per round.
inline std::vector<RoundStats> iterate(BankSet& banks, const OfflineContext& ctx, int rounds,
                                       RefineLevel level) {
    std::vector<RoundStats> trajectory;
    if (rounds <= 0) return trajectory;
    if (level == RefineLevel::Group && ctx.clustering == nullptr)
        throw MemoryError("group-level iteration requires a clustering");

    for (int round = 1; round <= rounds; ++round) {
        std::vector<detail::CreatedEntry> created;
        std::size_t failures = 0;
        for (const auto& seq : ctx.corpus.sequences()) {
            const std::string& user = seq.user_id;
            if (!ctx.splits.count(user)) continue;
            for (Perspective p : kAllPerspectives) {
                try {
                    auto pool = detail::demo_pool(banks, user, p, round, level, ctx.clustering);
                    std::vector<Reflection> demos;
                    if (!pool.empty())
                        demos = sample_demos(pool, ctx.n_demos, ctx.tau,
                                             mix_seed(ctx.seed, "iterate", user,
                                                      perspective_name(p), round));
                    PerspectiveView view =
                        build_view(p, ctx.corpus, ctx.splits.at(user), ctx.val_candidates.at(user),
                                   ctx.baselines.at(user), ctx.splits.at(user).validation_target,
                                   ctx.cf_model, ctx.prompt.max_history);
                    Reflection r = reflect(p, view, demos, ctx.backend, ctx.prompt);
                    banks.assign_id(r);
                    score_reflection(r, ctx);
                    created.push_back({p, *r.imp});
                    banks.commit(std::move(r));
                } catch (const LlmError&) {
                    ++failures;
                } catch (const ReflectionError&) {
                    ++failures;
                }
            }
        }
        trajectory.push_back(detail::finalize_stats(round, created, failures));
    }
    return trajectory;
}

}  // namespace morerec
