#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "morerec/cf.hpp"
#include "morerec/corpus.hpp"
#include "morerec/llm.hpp"
#include "morerec/mock_llm.hpp"
#include "morerec/parse.hpp"
#include "morerec/perspective.hpp"
#include "morerec/prompts.hpp"

namespace morerec {

class ReflectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One generated reflection. `imp` stays unset until the scoring pass has
/// measured it; only scored reflections enter memory banks.
struct Reflection {
    std::string reflection_id;  // assigned when committed to a bank
    std::string user_id;
    Perspective perspective = Perspective::EP;
    std::string text;
    int iteration_round = 0;
    std::vector<std::string> demo_ids;
    std::optional<double> imp;
    std::optional<bool> effective;
    double with_value = 0.0;
    double without_value = 0.0;
    std::string metric_name;
    std::string template_hash;

    bool scored() const { return imp.has_value(); }

    Json to_json() const {
        Json j{{"reflection_id", reflection_id},
               {"user_id", user_id},
               {"perspective", perspective_name(perspective)},
               {"text", text},
               {"iteration_round", iteration_round},
               {"demo_ids", demo_ids},
               {"template_hash", template_hash}};
        if (imp) {
            j["imp"] = *imp;
            j["effective"] = effective.value_or(false);
            j["with_value"] = with_value;
            j["without_value"] = without_value;
            j["metric_name"] = metric_name;
        }
        return j;
    }

    static Reflection from_json(const Json& j) {
        Reflection r;
        r.reflection_id = j.at("reflection_id").get<std::string>();
        r.user_id = j.at("user_id").get<std::string>();
        r.perspective = perspective_from_name(j.at("perspective").get<std::string>());
        r.text = j.at("text").get<std::string>();
        r.iteration_round = j.at("iteration_round").get<int>();
        r.demo_ids = j.at("demo_ids").get<std::vector<std::string>>();
        r.template_hash = j.value("template_hash", std::string{});
        if (j.contains("imp")) {
            r.imp = j.at("imp").get<double>();
            r.effective = j.at("effective").get<bool>();
            r.with_value = j.at("with_value").get<double>();
            r.without_value = j.at("without_value").get<double>();
            r.metric_name = j.at("metric_name").get<std::string>();
        }
        return r;
    }
};

/// Prompt-level knobs shared by every LLM call site.
struct PromptConfig {
    std::string model = "mock";
    double temperature = 0.0;
    int max_tokens = 512;
    std::size_t token_budget = 0;  // 0 = unlimited
    std::size_t max_history = 50;  // most recent events kept in prompts
};

/// The four text representations one perspective builds from the same
/// underlying (history, candidates, past prediction, ground truth).
struct PerspectiveView {
    Perspective perspective = Perspective::EP;
    std::string user_id;
    std::vector<std::string> history_items;  // one line per event, oldest first
    std::string candidates_repr;
    std::string prediction_repr;
    std::string target_repr;

    std::string history_repr() const {
        std::string out;
        for (std::size_t i = 0; i < history_items.size(); ++i) {
            if (i) out += "\n";
            out += history_items[i];
        }
        return out;
    }
};

namespace detail {

inline std::string ep_item_repr(const Item& item) {
    if (item.description.empty()) return item.title;
    return item.title + " — " + item.description;
}

inline std::string ip_item_repr(const Item& item, const std::vector<std::string>& schema) {
    std::string out = "(";
    bool first = true;
    for (const auto& key : schema) {
        if (!first) out += "; ";
        first = false;
        auto v = item.attribute(key);
        out += key + ": " + (v ? *v : std::string("unknown"));
    }
    out += ")";
    return out;
}

inline std::string format_rating(double score) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", score);
    return buf;
}

inline std::string cf_item_repr(const Item& item, const CfModel& model,
                                const std::string& user_id) {
    return item.title + " (rating=" + format_rating(model.score(user_id, item.item_id)) + ")";
}

}  // namespace detail

/// Builds the perspective-specific representation of the reflection inputs.
/// EP speaks in titles and descriptions, IP in attribute tuples, CF in
/// rating numerals from the CF model.
inline PerspectiveView build_view(Perspective perspective, const Corpus& corpus,
                                  const Split& split, const CandidateSet& candidates,
                                  const RankedList& predicted, const std::string& target_item_id,
                                  const CfModel* cf_model, std::size_t max_history = 50) {
    if (perspective == Perspective::CF && cf_model == nullptr)
        throw ReflectionError("CF perspective requires a trained CF model");

    auto repr = [&](const std::string& item_id) -> std::string {
        const Item& item = corpus.item(item_id);
        switch (perspective) {
            case Perspective::EP: return detail::ep_item_repr(item);
            case Perspective::IP: return detail::ip_item_repr(item, corpus.attribute_schema());
            case Perspective::CF: return detail::cf_item_repr(item, *cf_model, split.user_id);
        }
        return item.title;
    };

    PerspectiveView view;
    view.perspective = perspective;
    view.user_id = split.user_id;

    const std::size_t start =
        split.train_prefix.size() > max_history ? split.train_prefix.size() - max_history : 0;
    for (std::size_t i = start; i < split.train_prefix.size(); ++i)
        view.history_items.push_back(repr(split.train_prefix[i]));

    std::string cands;
    for (std::size_t i = 0; i < candidates.presentation_order.size(); ++i) {
        if (i) cands += "\n";
        cands += "[" + std::to_string(i + 1) + "] " + repr(candidates.presentation_order[i]);
    }
    view.candidates_repr = std::move(cands);

    std::string pred;
    for (std::size_t r = 0; r < predicted.item_ids.size(); ++r) {
        const auto& id = predicted.item_ids[r];
        std::size_t pos = 0;
        for (std::size_t i = 0; i < candidates.presentation_order.size(); ++i)
            if (candidates.presentation_order[i] == id) pos = i + 1;
        if (r) pred += "\n";
        pred += std::to_string(r + 1) + ". [" + std::to_string(pos) + "] " + repr(id);
    }
    view.prediction_repr = std::move(pred);

    view.target_repr = repr(target_item_id);
    return view;
}

inline std::string join_demos(const std::vector<Reflection>& demos) {
    std::string out;
    for (std::size_t i = 0; i < demos.size(); ++i) {
        if (i) out += "\n";
        out += std::to_string(i + 1) + ") " + demos[i].text;
    }
    return out;
}

/// Renders the perspective's reflection prompt (demonstrations included when
/// given) and asks the reflection LLM for a new reflection. The result is
/// unscored; its round is one past the newest demonstration.
inline Reflection reflect(Perspective perspective, const PerspectiveView& view,
                          const std::vector<Reflection>& demos, LlmBackend& backend,
                          const PromptConfig& config = {}) {
    int max_demo_round = -1;
    for (const auto& d : demos) {
        if (d.perspective != perspective)
            throw ReflectionError("demonstration perspective mismatch");
        if (!d.scored()) throw ReflectionError("demonstrations must be scored");
        max_demo_round = std::max(max_demo_round, d.iteration_round);
    }
    const int round = max_demo_round + 1;

    SlotValues slots;
    slots.history_items = view.history_items;
    if (perspective == Perspective::CF) {
        slots.text["cf_sections"] = "Candidates:\n" + view.candidates_repr +
                                    "\nPast recommendation attempts:\n" + view.prediction_repr +
                                    "\nNew interaction: " + view.target_repr + ".";
    } else {
        slots.text["candidates"] = view.candidates_repr;
        slots.text["attempts"] = view.prediction_repr;
        slots.text["new_interaction"] = view.target_repr;
    }
    if (!demos.empty()) slots.text["demos"] = join_demos(demos);

    LlmRequest req;
    req.prompt = render(template_for(perspective), slots, config.token_budget);
    req.model = config.model;
    req.temperature = config.temperature;
    req.max_tokens = config.max_tokens;
    req.meta.kind = PromptKind::Reflect;
    req.meta.user_id = view.user_id;
    req.meta.perspective = perspective;
    req.meta.round = round;
    for (const auto& d : demos) req.meta.demo_texts.push_back(d.text);

    std::string text = backend.complete(req);
    if (text.empty()) text = backend.complete(req);  // one retry on empty output
    if (text.empty())
        throw ReflectionError("reflection LLM returned empty output for user " + view.user_id);

    Reflection r;
    r.user_id = view.user_id;
    r.perspective = perspective;
    r.text = std::move(text);
    r.iteration_round = round;
    for (const auto& d : demos) r.demo_ids.push_back(d.reflection_id);
    r.template_hash = req.prompt.templ_hash;
    return r;
}

/// Runs the recommendation LLM over a candidate set, with zero or more
/// reflections riding in the prompt, and parses the ranking back out.
inline RankedList recommend_with_llm(LlmBackend& backend, const Corpus& corpus,
                                     const std::string& user_id,
                                     const std::vector<std::string>& history_item_ids,
                                     const CandidateSet& candidates,
                                     const std::vector<ReflectionRef>& reflections,
                                     const PromptConfig& config = {}) {
    SlotValues slots;
    const std::size_t start =
        history_item_ids.size() > config.max_history ? history_item_ids.size() - config.max_history
                                                     : 0;
    for (std::size_t i = start; i < history_item_ids.size(); ++i)
        slots.history_items.push_back("\"" + corpus.item(history_item_ids[i]).title + "\"");

    std::string cands;
    for (std::size_t i = 0; i < candidates.presentation_order.size(); ++i) {
        if (i) cands += "\n";
        cands += "[" + std::to_string(i + 1) + "] " +
                 corpus.item(candidates.presentation_order[i]).title;
    }
    slots.text["candidates"] = std::move(cands);
    slots.text["num_candidates"] = std::to_string(candidates.presentation_order.size());

    if (reflections.size() == 1) {
        slots.text["reflections"] = reflections[0].text;
    } else if (reflections.size() > 1) {
        // concatenation renders labeled sections in EP, IP, CF order
        std::string joined;
        for (const auto& ref : reflections) {
            if (!joined.empty()) joined += "\n";
            joined += "[" + std::string(perspective_name(ref.perspective)) + "] " + ref.text;
        }
        slots.text["reflections"] = std::move(joined);
    }

    LlmRequest req;
    req.prompt = render(TemplateId::Rec, slots, config.token_budget);
    req.model = config.model;
    req.temperature = config.temperature;
    req.max_tokens = config.max_tokens;
    req.meta.kind = PromptKind::Recommend;
    req.meta.user_id = user_id;
    req.meta.phase = phase_name(candidates.phase);
    req.meta.candidate_ids = candidates.presentation_order;
    req.meta.target_item_id = candidates.target_item_id;
    req.meta.reflections = reflections;

    const std::string raw = backend.complete(req);
    return parse_ranking(raw, candidates, corpus);
}

struct PredictionPair {
    RankedList with_reflection;
    RankedList without_reflection;
};

/// Produces the two offline predictions the improvement effect compares:
/// identical candidates and presentation order, only the reflection slot
/// differs.
inline PredictionPair generate_offline_predictions(LlmBackend& backend, const Corpus& corpus,
                                                   const Split& split,
                                                   const CandidateSet& candidates,
                                                   const std::optional<ReflectionRef>& reflection,
                                                   const PromptConfig& config = {}) {
    if (candidates.phase != Phase::Validation)
        throw ReflectionError("offline predictions run on validation-phase candidates");
    PredictionPair pair;
    std::vector<ReflectionRef> with;
    if (reflection) with.push_back(*reflection);
    pair.with_reflection = recommend_with_llm(backend, corpus, split.user_id, split.train_prefix,
                                              candidates, with, config);
    pair.without_reflection = recommend_with_llm(backend, corpus, split.user_id,
                                                 split.train_prefix, candidates, {}, config);
    return pair;
}

}  // namespace morerec
