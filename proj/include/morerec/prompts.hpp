#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "morerec/sha256.hpp"

namespace morerec {

class PromptError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TemplateId { Rec, Ep, Ip, Cf };

inline const char* template_name(TemplateId id) {
    switch (id) {
        case TemplateId::Rec: return "REC";
        case TemplateId::Ep: return "EP";
        case TemplateId::Ip: return "IP";
        case TemplateId::Cf: return "CF";
    }
    return "?";
}

// The four template texts. These must stay byte-identical to the files under
// templates/; the golden-file test pins both sides to the same SHA-256.
namespace templates {

inline constexpr std::string_view kRec =
    R"PT(You are a recommender to recommend items for a specific user. The user interacted with items in the following order: {history}. Reflections on the past recommendation attempt for this user (if any): {reflections}. There are now {num_candidates} candidate items: {candidates}. Please consider the user's historical interaction sequence (and reflections), select appropriate items from the candidates, and rank them to recommend to the user. Think step by step. Your recommendations:)PT";

inline constexpr std::string_view kEp =
    R"PT(You are a reflector for an LLM-based recommender system, understanding the explicit preferences embodied in the user's historical sequence and analyzing the areas for improvement in past recommendation attempts to provide reflections for the future. Explicit preferences are derived from an analysis of recent tendencies reflected in the sequence of item titles and descriptions within the user's history. You need to:
1. Analyze the history with associated text to identify explicit preferences. 2. Analyze the logic and rationale behind past recommendation attempts. 3. Examine potential shortcomings in the past and provide suggestions for improvement.
User's historical sequence with related description: {history}. Candidates: {candidates}. Past recommendation attempts: {attempts}. User new interaction (if any): {new_interaction}. Historical reflection demonstrations (if any): {demos}. Your reflection:)PT";

inline constexpr std::string_view kIp =
    R"PT(You are a reflector for an LLM-based recommender system, understand the implicit preferences embodied in the user's historical sequence and analyze the areas for improvement in past recommendation attempts to provide reflections for future. Implicit preferences are reflected through the associations shown in subsequences of item attributes within the user's history, such as subsequences of brands, styles, functions, features, etc. Requirements:
1. Analyze the logic and rationale behind past recommendation attempts.
2. Focus on attribute subsequences within history to analyze potential associations and causality.
3. Examine possible shortcomings in the past and provide suggestions.
Historical attribute seq: {history}. Candidates: {candidates}. Past recommendation attempts: {attempts}. User new interaction (if any): {new_interaction}. Historical reflection demonstrations (if any): {demos}. Your reflections:)PT";

inline constexpr std::string_view kCf =
    R"PT(You are a reflector for an LLM-based recommender system, utilizing a Collaborative Filtering (CF) model to obtain items' CF signals and analyzing potential improvement in past recommendation attempts for future suggestions. The sequence of historical items' CF ratings reflects patterns and similarities across user sequences. Your step-by-step task:
1. Analyze historical CF ratings to identify preferences, trends, or interest shifts.
2. Evaluate past recommendation effectiveness by comparing suggested items with actual user interactions.
3. Analyze potential shortcomings in past recommendation attempts and provide suggestions for improvement.
Items presented with CF ratings: {cf_items} Effective historical reflection demonstrations (if any): {demos}. Your reflection:)PT";

}  // namespace templates

inline std::string_view template_text(TemplateId id) {
    switch (id) {
        case TemplateId::Rec: return templates::kRec;
        case TemplateId::Ep: return templates::kEp;
        case TemplateId::Ip: return templates::kIp;
        case TemplateId::Cf: return templates::kCf;
    }
    throw PromptError("unknown template id");
}

inline std::string template_hash(TemplateId id) { return sha256_hex(template_text(id)); }

inline std::vector<std::string> mandatory_slots(TemplateId id) {
    switch (id) {
        case TemplateId::Rec: return {"history", "num_candidates", "candidates"};
        case TemplateId::Ep:
        case TemplateId::Ip: return {"history", "candidates", "attempts"};
        case TemplateId::Cf: return {"cf_items"};
    }
    return {};
}

inline std::vector<std::string> optional_slots(TemplateId id) {
    switch (id) {
        case TemplateId::Rec: return {"reflections"};
        case TemplateId::Ep:
        case TemplateId::Ip: return {"new_interaction", "demos"};
        case TemplateId::Cf: return {"demos"};
    }
    return {};
}

/// Name of the slot that embeds the per-event history lines (the one that
/// shrinks when a prompt exceeds the token budget).
inline std::string history_slot(TemplateId id) {
    return id == TemplateId::Cf ? "cf_items" : "history";
}

/// Inputs for render(). `history_items` holds one string per history event,
/// oldest first; all other slots are plain text.
struct SlotValues {
    std::vector<std::string> history_items;
    std::map<std::string, std::string> text;

    bool has(const std::string& name) const { return text.count(name) > 0; }
};

struct PromptInstance {
    TemplateId template_id = TemplateId::Rec;
    std::string rendered_text;
    std::map<std::string, std::string> slot_values;
    std::size_t token_estimate = 0;
    std::size_t history_truncated = 0;  // events dropped to fit the token budget
    std::string templ_hash;

    std::string sha() const { return sha256_hex(rendered_text); }
};

namespace detail {

inline std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

/// Removes the sentence containing `{slot}` from the template. A sentence
/// starts after the previous ". ", newline, or "} " (a preceding slot), and
/// ends after the ". " following the placeholder.
inline std::string elide_optional(std::string templ, const std::string& slot) {
    const std::string marker = "{" + slot + "}";
    auto pos = templ.find(marker);
    if (pos == std::string::npos) return templ;

    std::size_t start = 0;
    for (const std::string& sep : {std::string(". "), std::string(".\n"), std::string("\n"),
                                   std::string("} ")}) {
        auto p = templ.rfind(sep, pos);
        if (p != std::string::npos) start = std::max(start, p + sep.size());
    }
    std::size_t end = pos + marker.size();
    if (end < templ.size() && templ[end] == '.') {
        ++end;
        if (end < templ.size() && (templ[end] == ' ' || templ[end] == '\n')) ++end;
    }
    templ.erase(start, end - start);
    return templ;
}

inline std::string substitute(const std::string& templ,
                              const std::map<std::string, std::string>& values, TemplateId id) {
    // Single left-to-right pass over the template. Substituted values are
    // never rescanned, so a value containing a literal "{history}" survives
    // verbatim without double substitution.
    std::string out;
    out.reserve(templ.size());
    std::size_t i = 0;
    while (i < templ.size()) {
        if (templ[i] == '{') {
            auto close = templ.find('}', i);
            if (close != std::string::npos) {
                std::string name = templ.substr(i + 1, close - i - 1);
                auto it = values.find(name);
                if (it == values.end())
                    throw PromptError(std::string("unresolved placeholder {") + name +
                                      "} in template " + template_name(id));
                out += it->second;
                i = close + 1;
                continue;
            }
        }
        out += templ[i++];
    }
    return out;
}

}  // namespace detail

/// Renders a prompt template. Optional slots that were not provided have
/// their whole sentence elided. When `token_budget` > 0 and the estimate
/// exceeds it, oldest history events are dropped first; candidates never are.
inline PromptInstance render(TemplateId id, const SlotValues& slots,
                             std::size_t token_budget = 0) {
    for (const auto& slot : mandatory_slots(id)) {
        if (slot == history_slot(id)) {
            if (slots.history_items.empty() &&
                !(id == TemplateId::Cf && slots.has("cf_sections")))
                throw PromptError(std::string("missing mandatory slot '") + slot +
                                  "' for template " + template_name(id));
            continue;  // assembled below
        }
        if (!slots.has(slot))
            throw PromptError(std::string("missing mandatory slot '") + slot + "' for template " +
                              template_name(id));
    }

    std::string templ{template_text(id)};
    for (const auto& slot : optional_slots(id))
        if (!slots.has(slot) || slots.text.at(slot).empty())
            templ = detail::elide_optional(templ, slot);

    const std::string hslot = history_slot(id);
    auto assemble_history = [&](std::size_t drop_oldest) {
        std::string joined;
        const char* sep = (id == TemplateId::Rec) ? ", " : "\n";
        for (std::size_t i = drop_oldest; i < slots.history_items.size(); ++i) {
            if (i > drop_oldest) joined += sep;
            joined += slots.history_items[i];
        }
        if (id == TemplateId::Cf) {
            auto it = slots.text.find("cf_sections");
            if (it != slots.text.end()) {
                if (!joined.empty()) joined += "\n";
                joined += it->second;
            }
        }
        return joined;
    };

    PromptInstance out;
    out.template_id = id;
    out.templ_hash = template_hash(id);

    std::size_t drop = 0;
    const std::size_t max_drop =
        slots.history_items.empty() ? 0 : slots.history_items.size() - 1;
    while (true) {
        std::map<std::string, std::string> values = slots.text;
        values.erase("cf_sections");
        values[hslot] = assemble_history(drop);
        std::string rendered = detail::substitute(templ, values, id);
        const std::size_t est = detail::estimate_tokens(rendered);
        if (token_budget == 0 || est <= token_budget || drop >= max_drop) {
            out.rendered_text = std::move(rendered);
            out.slot_values = std::move(values);
            out.token_estimate = est;
            out.history_truncated = drop;
            return out;
        }
        ++drop;
    }
}

}  // namespace morerec
