#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "morerec/corpus.hpp"
#include "morerec/io.hpp"

namespace morerec::testutil {

/// Unique scratch directory per test, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("morerec_" + tag + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

inline void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p, std::ios::binary);
    for (const auto& l : lines) out << l << '\n';
}

inline std::string item_line(const std::string& id, const std::string& title,
                             const std::string& desc,
                             const std::vector<std::pair<std::string, std::string>>& attrs = {}) {
    Json a = Json::object();
    for (const auto& [k, v] : attrs) a[k] = v;
    return Json{{"item_id", id}, {"title", title}, {"description", desc}, {"attributes", a}}.dump();
}

inline std::string event_line(const std::string& user, const std::string& item, long ts) {
    return Json{{"user_id", user}, {"item_id", item}, {"ts", ts}}.dump();
}

/// Synthetic catalog: n_items items named i000..  with a brand/kind attribute
/// pair and distinct title/description/attribute markers so tests can assert
/// which representation leaked where.
inline std::vector<std::string> synthetic_catalog(std::size_t n_items) {
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < n_items; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "i%03zu", i);
        std::string idx = std::to_string(i);
        lines.push_back(item_line(id, "Title " + idx, "DESC_" + idx + " body",
                                  {{"brand", "BRAND_" + std::to_string(i % 7)},
                                   {"kind", "KIND_" + std::to_string(i % 3)}}));
    }
    return lines;
}

/// Users u000.. each with a deterministic history of `history_len` distinct
/// items, offset so different users overlap but do not coincide.
inline std::vector<std::string> synthetic_interactions(std::size_t n_users, std::size_t n_items,
                                                       std::size_t history_len) {
    std::vector<std::string> lines;
    for (std::size_t u = 0; u < n_users; ++u) {
        char uid[16];
        std::snprintf(uid, sizeof(uid), "u%03zu", u);
        for (std::size_t e = 0; e < history_len; ++e) {
            std::size_t item = (u * 3 + e * 5 + (u % 7)) % n_items;
            char iid[16];
            std::snprintf(iid, sizeof(iid), "i%03zu", item);
            lines.push_back(event_line(uid, iid, 1000 + static_cast<long>(e)));
        }
    }
    return lines;
}

/// Writes a synthetic dataset and ingests it.
inline Corpus make_corpus(const TempDir& dir, std::size_t n_users, std::size_t n_items,
                          std::size_t history_len) {
    write_lines(dir.path() / "catalog.jsonl", synthetic_catalog(n_items));
    write_lines(dir.path() / "interactions.jsonl",
                synthetic_interactions(n_users, n_items, history_len));
    return ingest(dir.path() / "catalog.jsonl", dir.path() / "interactions.jsonl");
}

}  // namespace morerec::testutil
