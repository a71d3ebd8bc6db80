#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "morerec/io.hpp"
#include "morerec/rng.hpp"
#include "morerec/sha256.hpp"

namespace morerec {

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One catalog entry. `attributes` keeps the key order of the catalog file.
struct Item {
    std::string item_id;
    std::string title;
    std::string description;
    std::vector<std::pair<std::string, std::string>> attributes;

    std::optional<std::string> attribute(const std::string& key) const {
        for (const auto& [k, v] : attributes)
            if (k == key) return v;
        return std::nullopt;
    }
};

struct Event {
    std::string item_id;
    std::int64_t ts = 0;
};

/// Chronological per-user history. Ties in `ts` keep file order.
struct InteractionSequence {
    std::string user_id;
    std::vector<Event> events;
};

struct IngestReport {
    std::size_t items = 0;
    std::size_t users_kept = 0;
    std::size_t users_dropped = 0;
    std::size_t events = 0;
    std::vector<std::string> dropped_user_ids;

    Json to_json() const {
        return Json{{"items", items},
                    {"users_kept", users_kept},
                    {"users_dropped", users_dropped},
                    {"events", events},
                    {"dropped_user_ids", dropped_user_ids}};
    }
};

class Corpus {
public:
    Corpus() = default;

    const std::vector<Item>& items() const { return items_; }
    const std::vector<InteractionSequence>& sequences() const { return sequences_; }
    const IngestReport& report() const { return report_; }

    /// Union of attribute keys across the catalog, in first-appearance order.
    const std::vector<std::string>& attribute_schema() const { return attribute_schema_; }

    bool has_item(const std::string& item_id) const { return item_index_.count(item_id) > 0; }

    const Item& item(const std::string& item_id) const {
        auto it = item_index_.find(item_id);
        if (it == item_index_.end()) throw CorpusError("unknown item: " + item_id);
        return items_[it->second];
    }

    const InteractionSequence& sequence(const std::string& user_id) const {
        auto it = user_index_.find(user_id);
        if (it == user_index_.end()) throw CorpusError("unknown user: " + user_id);
        return sequences_[it->second];
    }

    bool has_user(const std::string& user_id) const { return user_index_.count(user_id) > 0; }

    std::vector<std::string> user_ids() const {
        std::vector<std::string> out;
        out.reserve(sequences_.size());
        for (const auto& s : sequences_) out.push_back(s.user_id);
        return out;
    }

    /// Every item the user ever touched, including the held-out targets.
    std::unordered_set<std::string> full_history_set(const std::string& user_id) const {
        std::unordered_set<std::string> out;
        for (const auto& e : sequence(user_id).events) out.insert(e.item_id);
        return out;
    }

    void add_item(Item item) {
        if (item.title.empty()) throw CorpusError("item with empty title: " + item.item_id);
        if (item_index_.count(item.item_id))
            throw CorpusError("duplicate item_id: " + item.item_id);
        std::set<std::string> seen;
        for (const auto& [k, v] : item.attributes) {
            if (!seen.insert(k).second)
                throw CorpusError("duplicate attribute key '" + k + "' on item " + item.item_id);
            if (std::find(attribute_schema_.begin(), attribute_schema_.end(), k) ==
                attribute_schema_.end())
                attribute_schema_.push_back(k);
        }
        item_index_[item.item_id] = items_.size();
        items_.push_back(std::move(item));
    }

    void add_sequence(InteractionSequence seq) {
        for (const auto& e : seq.events)
            if (!has_item(e.item_id))
                throw CorpusError("interaction references unknown item: " + e.item_id);
        for (std::size_t i = 1; i < seq.events.size(); ++i)
            if (seq.events[i].ts < seq.events[i - 1].ts)
                throw CorpusError("timestamps not chronological for user " + seq.user_id);
        if (seq.events.size() < 3)
            throw CorpusError("sequence shorter than 3 events: " + seq.user_id);
        if (user_index_.count(seq.user_id))
            throw CorpusError("duplicate user: " + seq.user_id);
        user_index_[seq.user_id] = sequences_.size();
        sequences_.push_back(std::move(seq));
    }

    void set_report(IngestReport r) { report_ = std::move(r); }

    Json to_json() const {
        Json items = Json::array();
        for (const auto& it : items_) {
            Json attrs = Json::object();
            for (const auto& [k, v] : it.attributes) attrs[k] = v;
            items.push_back(Json{{"item_id", it.item_id},
                                 {"title", it.title},
                                 {"description", it.description},
                                 {"attributes", attrs}});
        }
        Json seqs = Json::array();
        for (const auto& s : sequences_) {
            Json events = Json::array();
            for (const auto& e : s.events) events.push_back(Json{{"item_id", e.item_id}, {"ts", e.ts}});
            seqs.push_back(Json{{"user_id", s.user_id}, {"events", events}});
        }
        return Json{{"items", items}, {"sequences", seqs}, {"report", report_.to_json()}};
    }

    static Corpus from_json(const Json& j) {
        Corpus c;
        for (const auto& ij : j.at("items")) {
            Item it;
            it.item_id = ij.at("item_id").get<std::string>();
            it.title = ij.at("title").get<std::string>();
            it.description = ij.at("description").get<std::string>();
            for (auto& [k, v] : ij.at("attributes").items())
                it.attributes.emplace_back(k, v.get<std::string>());
            c.add_item(std::move(it));
        }
        for (const auto& sj : j.at("sequences")) {
            InteractionSequence s;
            s.user_id = sj.at("user_id").get<std::string>();
            for (const auto& ej : sj.at("events"))
                s.events.push_back({ej.at("item_id").get<std::string>(), ej.at("ts").get<std::int64_t>()});
            c.add_sequence(std::move(s));
        }
        IngestReport r;
        const auto& rj = j.at("report");
        r.items = rj.at("items").get<std::size_t>();
        r.users_kept = rj.at("users_kept").get<std::size_t>();
        r.users_dropped = rj.at("users_dropped").get<std::size_t>();
        r.events = rj.at("events").get<std::size_t>();
        r.dropped_user_ids = rj.at("dropped_user_ids").get<std::vector<std::string>>();
        c.set_report(std::move(r));
        return c;
    }

    /// Content hash of the normalized corpus; ingest of identical files
    /// always reproduces it.
    std::string fingerprint() const { return sha256_hex(to_json().dump()); }

private:
    std::vector<Item> items_;
    std::vector<InteractionSequence> sequences_;
    std::unordered_map<std::string, std::size_t> item_index_;
    std::unordered_map<std::string, std::size_t> user_index_;
    std::vector<std::string> attribute_schema_;
    IngestReport report_;
};

/// Reads catalog + interaction JSONL files into a Corpus. Users with fewer
/// than 3 events are dropped and counted in the ingest report.
inline Corpus ingest(const fs::path& catalog_file, const fs::path& interactions_file) {
    Corpus corpus;
    for_each_jsonl(catalog_file, [&](std::size_t lineno, const Json& j) {
        try {
            Item it;
            it.item_id = j.at("item_id").get<std::string>();
            it.title = j.at("title").get<std::string>();
            it.description = j.value("description", std::string{});
            if (j.contains("attributes"))
                for (auto& [k, v] : j.at("attributes").items())
                    it.attributes.emplace_back(k, v.get<std::string>());
            corpus.add_item(std::move(it));
        } catch (const Json::exception& e) {
            throw CorpusError("malformed catalog record at line " + std::to_string(lineno) + ": " +
                              e.what());
        }
    });

    // Group events per user in file order, then stable-sort by timestamp so
    // ties keep file order.
    std::vector<std::pair<std::string, std::vector<Event>>> per_user;
    std::unordered_map<std::string, std::size_t> user_pos;
    for_each_jsonl(interactions_file, [&](std::size_t lineno, const Json& j) {
        std::string user_id, item_id;
        std::int64_t ts = 0;
        try {
            user_id = j.at("user_id").get<std::string>();
            item_id = j.at("item_id").get<std::string>();
            ts = j.at("ts").get<std::int64_t>();
        } catch (const Json::exception& e) {
            throw CorpusError("malformed interaction record at line " + std::to_string(lineno) +
                              ": " + e.what());
        }
        if (!corpus.has_item(item_id))
            throw CorpusError("interaction at line " + std::to_string(lineno) +
                              " references unknown item: " + item_id);
        auto [it, inserted] = user_pos.try_emplace(user_id, per_user.size());
        if (inserted) per_user.push_back({user_id, {}});
        per_user[it->second].second.push_back({item_id, ts});
    });

    // Deterministic corpus order regardless of interaction file ordering.
    std::sort(per_user.begin(), per_user.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    IngestReport report;
    report.items = corpus.items().size();
    for (auto& [user_id, events] : per_user) {
        std::stable_sort(events.begin(), events.end(),
                         [](const Event& a, const Event& b) { return a.ts < b.ts; });
        if (events.size() < 3) {
            report.users_dropped++;
            report.dropped_user_ids.push_back(user_id);
            continue;
        }
        report.users_kept++;
        report.events += events.size();
        corpus.add_sequence({user_id, std::move(events)});
    }
    corpus.set_report(std::move(report));
    return corpus;
}

/// Leave-one-out split: last event is the test target, the penultimate the
/// validation target, everything before them the training prefix.
struct Split {
    std::string user_id;
    std::vector<std::string> train_prefix;
    std::string validation_target;
    std::string test_target;
};

inline Split make_split(const InteractionSequence& seq) {
    if (seq.events.size() < 3)
        throw CorpusError("cannot split sequence shorter than 3: " + seq.user_id);
    Split s;
    s.user_id = seq.user_id;
    for (std::size_t i = 0; i + 2 < seq.events.size(); ++i)
        s.train_prefix.push_back(seq.events[i].item_id);
    s.validation_target = seq.events[seq.events.size() - 2].item_id;
    s.test_target = seq.events.back().item_id;
    return s;
}

inline std::vector<Split> make_split(const Corpus& corpus) {
    std::vector<Split> out;
    out.reserve(corpus.sequences().size());
    for (const auto& seq : corpus.sequences()) out.push_back(make_split(seq));
    return out;
}

enum class Phase { Validation, Test };

inline const char* phase_name(Phase p) { return p == Phase::Validation ? "validation" : "test"; }

inline Phase phase_from_name(const std::string& s) {
    if (s == "validation") return Phase::Validation;
    if (s == "test") return Phase::Test;
    throw CorpusError("unknown phase: " + s);
}

/// The candidate pool shown to the recommender: the phase target plus
/// pool_size-1 sampled negatives, in a seeded presentation order.
struct CandidateSet {
    std::string user_id;
    Phase phase = Phase::Validation;
    std::string target_item_id;
    std::vector<std::string> negative_item_ids;
    std::vector<std::string> presentation_order;
    std::uint64_t seed = 0;

    bool contains(const std::string& item_id) const {
        return std::find(presentation_order.begin(), presentation_order.end(), item_id) !=
               presentation_order.end();
    }

    Json to_json() const {
        return Json{{"user_id", user_id},
                    {"phase", phase_name(phase)},
                    {"target_item_id", target_item_id},
                    {"negative_item_ids", negative_item_ids},
                    {"presentation_order", presentation_order},
                    {"seed", seed}};
    }

    static CandidateSet from_json(const Json& j) {
        CandidateSet c;
        c.user_id = j.at("user_id").get<std::string>();
        c.phase = phase_from_name(j.at("phase").get<std::string>());
        c.target_item_id = j.at("target_item_id").get<std::string>();
        c.negative_item_ids = j.at("negative_item_ids").get<std::vector<std::string>>();
        c.presentation_order = j.at("presentation_order").get<std::vector<std::string>>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }
};

/// Uniform negative sampling without replacement over catalog minus the
/// user's full history. Deterministic for a fixed (user, phase, seed).
inline CandidateSet sample_candidates(const Corpus& corpus, const Split& split, Phase phase,
                                      std::size_t pool_size, std::uint64_t seed) {
    if (pool_size < 1) throw CorpusError("pool_size must be >= 1");
    CandidateSet cs;
    cs.user_id = split.user_id;
    cs.phase = phase;
    cs.seed = seed;
    cs.target_item_id = (phase == Phase::Validation) ? split.validation_target : split.test_target;

    const auto history = corpus.full_history_set(split.user_id);
    std::vector<std::string> eligible;
    eligible.reserve(corpus.items().size());
    for (const auto& it : corpus.items())
        if (!history.count(it.item_id)) eligible.push_back(it.item_id);

    const std::size_t need = pool_size - 1;
    if (eligible.size() < need)
        throw CorpusError("insufficient items to sample " + std::to_string(need) +
                          " negatives for user " + split.user_id + " (eligible: " +
                          std::to_string(eligible.size()) + ")");

    Rng rng(mix_seed(seed, split.user_id, phase_name(phase)));
    // partial Fisher-Yates: the first `need` slots become the sample
    for (std::size_t i = 0; i < need; ++i) {
        std::size_t j = i + rng.index(eligible.size() - i);
        std::swap(eligible[i], eligible[j]);
    }
    cs.negative_item_ids.assign(eligible.begin(), eligible.begin() + static_cast<long>(need));

    cs.presentation_order = cs.negative_item_ids;
    cs.presentation_order.push_back(cs.target_item_id);
    rng.shuffle(cs.presentation_order);
    return cs;
}

}  // namespace morerec
