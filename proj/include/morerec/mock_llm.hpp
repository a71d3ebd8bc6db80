#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "morerec/llm.hpp"
#include "morerec/perspective.hpp"
#include "morerec/rng.hpp"

namespace morerec {

/// Markers the mock embeds in reflection texts. The recommend path reads
/// them back, so a scenario's whole causal chain flows through prompt text
/// plus request metadata.
inline constexpr const char* kInsightMarker = "[insight]";
inline constexpr const char* kOverfitMarker = "[overfit]";

/// Quality level marker used by ladder scenarios: "[level=3]".
inline int parse_ladder_level(const std::string& text) {
    const std::string tag = "[level=";
    auto pos = text.find(tag);
    if (pos == std::string::npos) return 0;
    int level = 0;
    for (std::size_t i = pos + tag.size(); i < text.size() && std::isdigit(
             static_cast<unsigned char>(text[i])); ++i)
        level = level * 10 + (text[i] - '0');
    return level;
}

/// A scripted world for tests: a hidden per-(user,item) score landscape plus
/// rules for when a reflection actually helps.
///
/// - `helpful_for(user)` names the perspectives whose insightful reflections
///   boost that user's target to the top.
/// - reflections from helpful perspectives carry kInsightMarker with
///   probability base_insight_p + demo_insight_gain per insightful demo.
/// - with spurious_validation_p > 0, reflections from non-helpful
///   perspectives sometimes carry kOverfitMarker: they boost the target in
///   validation-phase prompts only, so their measured improvement does not
///   transfer.
/// - concat_penalty models conflicting reflections: two or more reflections
///   in one prompt suppress every boost.
struct MockScenario {
    std::string id = "neutral";
    std::uint64_t seed = 1;

    std::set<Perspective> default_helpful;
    std::map<std::string, std::set<Perspective>> helpful_overrides;

    double base_insight_p = 1.0;
    double demo_insight_gain = 0.0;
    double max_insight_p = 0.95;
    double spurious_validation_p = 0.0;
    bool concat_penalty = false;

    // Target's hidden base score; negatives draw uniform [0,1), so without a
    // boost the target sits mid-pack.
    double target_base_score = 0.55;
    double boost = 10.0;

    // Ladder mode: reflections carry a quality level that demonstrations
    // escalate (level = 1 + max demo level), and a level-k reflection pins
    // the target at rank max(1, ladder_base_rank - ladder_step * k). Higher
    // levels place the target strictly better, so improvement grows round
    // over round by construction.
    bool ladder = false;
    int ladder_base_rank = 11;
    int ladder_step = 2;

    std::string analysis_marker() const { return "[mock-analysis:" + id + "]"; }

    static MockScenario builtin(const std::string& id, std::uint64_t seed = 1) {
        MockScenario s;
        s.id = id;
        s.seed = seed;
        if (id == "neutral") {
            // no perspective helps anyone
        } else if (id == "cf-best") {
            s.default_helpful = {Perspective::CF};
        } else if (id == "imp-exact") {
            s.default_helpful = {Perspective::EP};
            s.base_insight_p = 1.0;
        } else if (id == "demo-ladder") {
            s.default_helpful = {Perspective::EP, Perspective::IP, Perspective::CF};
            s.ladder = true;
            s.target_base_score = -1.0;  // unranked-in-top-k without a reflection
        } else if (id == "clustered") {
            // per-user helpful arm keyed off the user id; stable across runs
            s.base_insight_p = 0.8;
            s.spurious_validation_p = 0.5;
            s.concat_penalty = true;
            s.per_user_rule = true;
        } else {
            throw LlmError("unknown mock scenario: " + id);
        }
        return s;
    }

    // When set, helpful perspective = hash(user) % 3 unless overridden.
    bool per_user_rule = false;

    std::set<Perspective> resolve_helpful(const std::string& user_id) const {
        auto it = helpful_overrides.find(user_id);
        if (it != helpful_overrides.end()) return it->second;
        if (per_user_rule)
            return {perspective_from_code(static_cast<int>(fnv1a64(user_id) % 3))};
        return default_helpful;
    }
};

/// Deterministic test double for both the recommendation and reflection
/// LLMs. Responses are pure functions of (scenario, prompt, metadata).
class MockBackend : public LlmBackend {
public:
    explicit MockBackend(MockScenario scenario) : scenario_(std::move(scenario)) {}

    const MockScenario& scenario() const { return scenario_; }

    std::string complete(const LlmRequest& req) override {
        return req.meta.kind == PromptKind::Reflect ? reflect(req) : recommend(req);
    }

    std::string kind() const override { return "mock:" + scenario_.id; }

    /// Hidden preference score of an item for a user, before boosts.
    double base_score(const std::string& user_id, const std::string& item_id,
                      const std::string& target_item_id) const {
        if (item_id == target_item_id) return scenario_.target_base_score;
        Rng rng(mix_seed(scenario_.seed, "score", user_id, item_id));
        return rng.u01();
    }

private:
    std::string reflect(const LlmRequest& req) const {
        const auto& meta = req.meta;
        const auto helpful = scenario_.resolve_helpful(meta.user_id);
        std::string text = "Reflection from the " +
                           std::string(perspective_name(meta.perspective)) +
                           " perspective " + scenario_.analysis_marker() + " round " +
                           std::to_string(meta.round) + " key " + req.prompt.sha().substr(0, 8) +
                           ".";
        Rng rng(mix_seed(scenario_.seed, "reflect", req.prompt.sha()));
        if (helpful.count(meta.perspective)) {
            if (scenario_.ladder) {
                int level = 0;
                for (const auto& d : meta.demo_texts) level = std::max(level, parse_ladder_level(d));
                text += " [level=" + std::to_string(level + 1) + "]";
            } else {
                std::size_t insightful_demos = 0;
                for (const auto& d : meta.demo_texts)
                    if (d.find(kInsightMarker) != std::string::npos) ++insightful_demos;
                double p = scenario_.base_insight_p +
                           scenario_.demo_insight_gain * static_cast<double>(insightful_demos);
                const double cap = std::max(scenario_.base_insight_p, scenario_.max_insight_p);
                p = std::min(p, cap);
                if (rng.u01() < p) text += " " + std::string(kInsightMarker);
            }
        } else if (scenario_.spurious_validation_p > 0.0 &&
                   rng.u01() < scenario_.spurious_validation_p) {
            text += " " + std::string(kOverfitMarker);
        }
        return text;
    }

    std::string recommend(const LlmRequest& req) const {
        const auto& meta = req.meta;
        const auto helpful = scenario_.resolve_helpful(meta.user_id);

        bool boosted = false;
        int ladder_level = 0;
        if (!(scenario_.concat_penalty && meta.reflections.size() >= 2)) {
            for (const auto& ref : meta.reflections) {
                const bool insight = ref.text.find(kInsightMarker) != std::string::npos;
                const bool overfit = ref.text.find(kOverfitMarker) != std::string::npos;
                if (insight && helpful.count(ref.perspective)) boosted = true;
                if (overfit && meta.phase == "validation") boosted = true;
                if (scenario_.ladder && helpful.count(ref.perspective))
                    ladder_level = std::max(ladder_level, parse_ladder_level(ref.text));
            }
        }

        struct Scored {
            std::size_t pos;
            double score;
        };
        std::vector<Scored> scored;
        scored.reserve(meta.candidate_ids.size());
        std::size_t target_pos = meta.candidate_ids.size();
        for (std::size_t i = 0; i < meta.candidate_ids.size(); ++i) {
            const auto& id = meta.candidate_ids[i];
            double s = base_score(meta.user_id, id, meta.target_item_id);
            if (boosted && id == meta.target_item_id) s += scenario_.boost;
            if (id == meta.target_item_id) target_pos = i;
            scored.push_back({i, s});
        }
        std::stable_sort(scored.begin(), scored.end(),
                         [](const Scored& a, const Scored& b) { return a.score > b.score; });

        if (ladder_level > 0 && target_pos < meta.candidate_ids.size()) {
            // pin the target at the level's rank: higher levels rank it better
            auto it = std::find_if(scored.begin(), scored.end(),
                                   [&](const Scored& s) { return s.pos == target_pos; });
            Scored target = *it;
            scored.erase(it);
            const int rank = std::max(1, scenario_.ladder_base_rank -
                                             scenario_.ladder_step * ladder_level);
            const std::size_t insert_at =
                std::min<std::size_t>(static_cast<std::size_t>(rank - 1), scored.size());
            scored.insert(scored.begin() + static_cast<long>(insert_at), target);
        }

        std::string out;
        for (std::size_t rank = 0; rank < scored.size(); ++rank) {
            out += std::to_string(rank + 1) + ". [" + std::to_string(scored[rank].pos + 1) + "]\n";
        }
        return out;
    }

    MockScenario scenario_;
};

/// Backend factory for scripted scenarios.
inline std::shared_ptr<LlmBackend> mock_policy(const MockScenario& scenario) {
    return std::make_shared<MockBackend>(scenario);
}

inline std::shared_ptr<LlmBackend> mock_policy(const std::string& scenario_id,
                                               std::uint64_t seed = 1) {
    return std::make_shared<MockBackend>(MockScenario::builtin(scenario_id, seed));
}

}  // namespace morerec
