#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace morerec {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes via a temp file + rename so readers never observe partial content.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write file: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

/// Parses a JSON-lines file. `on_record` receives (1-based line number, parsed json).
/// Blank lines are skipped. Malformed lines raise IoError naming the line.
inline void for_each_jsonl(const fs::path& path,
                           const std::function<void(std::size_t, const Json&)>& on_record) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw IoError("malformed record at " + path.filename().string() + ":" +
                          std::to_string(lineno));
        }
        on_record(lineno, j);
    }
}

inline void write_jsonl(const fs::path& path, const std::vector<Json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

}  // namespace morerec
