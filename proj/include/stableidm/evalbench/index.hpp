#pragma once

// Episode index CSV: header `episode_id,split`, one row per episode, split
// is train or eval.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stableidm/errors.hpp"

namespace stableidm::evalbench {

class IndexHeaderError : public DataError {
public:
    using DataError::DataError;
};

class DuplicateEpisodeError : public DataError {
public:
    using DataError::DataError;
};

class UnknownSplitError : public DataError {
public:
    using DataError::DataError;
};

enum class Role { train, eval };

inline const char* to_string(Role r) { return r == Role::train ? "train" : "eval"; }

struct EpisodeAssignment {
    std::string episode_id;
    Role role = Role::train;

    bool operator==(const EpisodeAssignment&) const = default;
};

inline std::vector<EpisodeAssignment> parse_episode_index(const std::string& text, const std::string& origin = "<index>") {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto strip_cr = [](std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    };
    if (!std::getline(in, line)) throw IndexHeaderError(origin + ": missing header 'episode_id,split'");
    ++lineno;
    strip_cr(line);
    if (line != "episode_id,split") throw IndexHeaderError(origin + ": expected header 'episode_id,split', got '" + line + "'");

    std::vector<EpisodeAssignment> out;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        strip_cr(line);
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
            throw DataError(origin + ":" + std::to_string(lineno) + ": expected two fields, got '" + line + "'");
        }
        const std::string id = line.substr(0, comma), split = line.substr(comma + 1);
        if (id.empty()) throw DataError(origin + ":" + std::to_string(lineno) + ": empty episode_id");
        Role role;
        if (split == "train") role = Role::train;
        else if (split == "eval") role = Role::eval;
        else throw UnknownSplitError(origin + ":" + std::to_string(lineno) + ": unknown split '" + split + "'");
        if (!seen.insert(id).second) {
            throw DuplicateEpisodeError(origin + ":" + std::to_string(lineno) + ": duplicate episode_id '" + id + "'");
        }
        out.push_back({id, role});
    }
    return out;
}

inline std::vector<EpisodeAssignment> load_episode_index(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read episode index " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_episode_index(ss.str(), path.string());
}

inline void save_episode_index(const std::vector<EpisodeAssignment>& rows, const std::filesystem::path& path) {
    std::set<std::string> seen;
    std::string text = "episode_id,split\n";
    for (const auto& r : rows) {
        if (r.episode_id.empty() || r.episode_id.find_first_of(",\n\r") != std::string::npos) {
            throw DataError("episode id '" + r.episode_id + "' cannot be stored in the index");
        }
        if (!seen.insert(r.episode_id).second) throw DuplicateEpisodeError("duplicate episode_id '" + r.episode_id + "'");
        text += r.episode_id + "," + to_string(r.role) + "\n";
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write episode index " + path.string());
    f << text;
}

}  // namespace stableidm::evalbench
