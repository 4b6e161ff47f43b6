#pragma once

// Dataset directory: episodes.csv, dataset.json and one archive folder per
// episode.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stableidm/evalbench/index.hpp"
#include "stableidm/synth/dataset.hpp"

namespace stableidm::evalbench {

inline constexpr const char* kDatasetFormat = "stableidm-dataset";
inline constexpr int kDatasetVersion = 1;

struct LoadedDataset {
    std::vector<synth::EpisodeRecord> train;
    std::vector<synth::EpisodeRecord> eval;
    std::vector<synth::DimKind> dim_kinds;
};

inline const char* to_string(synth::DimKind k) { return k == synth::DimKind::rotation ? "rotation" : "gripper"; }

inline void write_dataset(const synth::Dataset& ds, const synth::DatasetConfig& cfg, std::uint64_t seed,
                          const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<EpisodeAssignment> index;
    for (std::size_t i = 0; i < ds.episodes.size(); ++i) {
        synth::save_episode(ds.episodes[i], dir / ds.episodes[i].episode_id);
        index.push_back({ds.episodes[i].episode_id, ds.is_eval[i] ? Role::eval : Role::train});
    }
    save_episode_index(index, dir / "episodes.csv");

    nlohmann::ordered_json meta;
    meta["format"] = kDatasetFormat;
    meta["version"] = kDatasetVersion;
    meta["seed"] = seed;
    meta["episodes"] = ds.episodes.size();
    meta["episode_length"] = cfg.episode_length;
    meta["light_threshold"] = cfg.world.light_threshold;
    std::vector<std::string> kinds;
    for (auto k : cfg.world.arm.dim_kinds()) kinds.emplace_back(to_string(k));
    meta["dim_kinds"] = kinds;
    std::ofstream f(dir / "dataset.json");
    if (!f) throw IoError("cannot write " + (dir / "dataset.json").string());
    f << meta.dump(2) << '\n';
}

inline LoadedDataset read_dataset(const std::filesystem::path& dir) {
    LoadedDataset out;
    nlohmann::json meta;
    {
        std::ifstream f(dir / "dataset.json");
        if (!f) throw DataError("missing dataset.json in " + dir.string());
        try {
            f >> meta;
            if (meta.at("format").get<std::string>() != kDatasetFormat) throw DataError(dir.string() + ": not a dataset");
            if (meta.at("version").get<int>() != kDatasetVersion) throw DataError(dir.string() + ": unsupported dataset version");
            for (const auto& k : meta.at("dim_kinds")) {
                const auto s = k.get<std::string>();
                if (s == "rotation") out.dim_kinds.push_back(synth::DimKind::rotation);
                else if (s == "gripper") out.dim_kinds.push_back(synth::DimKind::gripper);
                else throw DataError(dir.string() + ": unknown dimension kind '" + s + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(dir.string() + "/dataset.json: " + e.what());
        }
    }
    for (const auto& row : load_episode_index(dir / "episodes.csv")) {
        synth::EpisodeRecord rec = synth::load_episode(dir / row.episode_id);
        if (rec.episode_id != row.episode_id) throw DataError("episode folder " + row.episode_id + " holds " + rec.episode_id);
        if (rec.actions.front().size() != out.dim_kinds.size()) {
            throw DataError("episode " + rec.episode_id + ": action dimension disagrees with dataset.json");
        }
        (row.role == Role::train ? out.train : out.eval).push_back(std::move(rec));
    }
    return out;
}

}  // namespace stableidm::evalbench
