#pragma once

#include <cctype>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "morerec/corpus.hpp"

namespace morerec {

struct ParseReport {
    std::size_t matched = 0;
    std::size_t dropped_lines = 0;
    std::size_t deduped = 0;
};

/// An ordering over (a subset of) the candidate set, recovered from raw LLM
/// output. Always a subset: unknown items never survive parsing.
struct RankedList {
    std::string user_id;
    Phase phase = Phase::Validation;
    std::vector<std::string> item_ids;
    std::string raw_response;
    ParseReport report;

    Json to_json() const {
        return Json{{"user_id", user_id},
                    {"phase", phase_name(phase)},
                    {"item_ids", item_ids},
                    {"raw_response", raw_response},
                    {"report", Json{{"matched", report.matched},
                                    {"dropped_lines", report.dropped_lines},
                                    {"deduped", report.deduped}}}};
    }

    static RankedList from_json(const Json& j) {
        RankedList r;
        r.user_id = j.at("user_id").get<std::string>();
        r.phase = phase_from_name(j.at("phase").get<std::string>());
        r.item_ids = j.at("item_ids").get<std::vector<std::string>>();
        r.raw_response = j.at("raw_response").get<std::string>();
        const auto& rep = j.at("report");
        r.report.matched = rep.at("matched").get<std::size_t>();
        r.report.dropped_lines = rep.at("dropped_lines").get<std::size_t>();
        r.report.deduped = rep.at("deduped").get<std::size_t>();
        return r;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::string normalize_title(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool prev_space = true;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            out.push_back(static_cast<char>(std::tolower(c)));
            prev_space = false;
        } else if (!prev_space) {
            out.push_back(' ');
            prev_space = true;
        }
    }
    if (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

/// Strips "12.", "12)", "-", "*" style enumerators from the front of a line.
inline std::string strip_enumerator(std::string line) {
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
        ++i;
        while (i < line.size() && line[i] == ' ') ++i;
        return line.substr(i);
    }
    if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
        std::size_t j = 1;
        while (j < line.size() && line[j] == ' ') ++j;
        return line.substr(j);
    }
    return line;
}

/// Extracts a leading "[k]" index. Returns 0 when none.
inline std::size_t take_bracket_index(std::string& line) {
    if (line.empty() || line[0] != '[') return 0;
    std::size_t close = line.find(']');
    if (close == std::string::npos || close == 1) return 0;
    for (std::size_t i = 1; i < close; ++i)
        if (!std::isdigit(static_cast<unsigned char>(line[i]))) return 0;
    std::size_t idx = std::stoul(line.substr(1, close - 1));
    std::size_t rest = close + 1;
    while (rest < line.size() && line[rest] == ' ') ++rest;
    line = line.substr(rest);
    return idx;
}

}  // namespace detail

/// Maps raw response lines onto the candidate set: exact title match first,
/// then normalized title match, then the bracketed presentation index the
/// prompts attach to every candidate. Unmatched lines are dropped, repeats
/// keep their first occurrence. Never throws: garbage in, empty list out.
inline RankedList parse_ranking(const std::string& raw, const CandidateSet& candidates,
                                const Corpus& corpus) {
    RankedList out;
    out.user_id = candidates.user_id;
    out.phase = candidates.phase;
    out.raw_response = raw;

    const auto& order = candidates.presentation_order;
    std::unordered_map<std::string, std::string> by_exact_title;   // first occurrence wins
    std::unordered_map<std::string, std::string> by_norm_title;
    for (const auto& id : order) {
        const std::string& title = corpus.item(id).title;
        by_exact_title.try_emplace(title, id);
        by_norm_title.try_emplace(detail::normalize_title(title), id);
    }

    std::unordered_set<std::string> seen;
    std::size_t start = 0;
    while (start <= raw.size()) {
        std::size_t nl = raw.find('\n', start);
        std::string line = raw.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
        start = (nl == std::string::npos) ? raw.size() + 1 : nl + 1;

        line = detail::trim(line);
        if (line.empty()) continue;
        line = detail::strip_enumerator(line);
        std::string body = line;
        const std::size_t bracket = detail::take_bracket_index(body);

        std::string matched_id;
        if (auto it = by_exact_title.find(body); it != by_exact_title.end()) {
            matched_id = it->second;
        } else if (auto nt = by_norm_title.find(detail::normalize_title(body));
                   !detail::normalize_title(body).empty() && nt != by_norm_title.end()) {
            matched_id = nt->second;
        } else if (bracket >= 1 && bracket <= order.size()) {
            matched_id = order[bracket - 1];
        }

        if (matched_id.empty()) {
            out.report.dropped_lines++;
            continue;
        }
        if (!seen.insert(matched_id).second) {
            out.report.deduped++;
            continue;
        }
        out.item_ids.push_back(matched_id);
        out.report.matched++;
    }
    return out;
}

}  // namespace morerec
