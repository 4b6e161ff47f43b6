#pragma once

// Mixed light/heavy episode sets and the on-disk episode archive
// (frames.fmap, masks.fmap, actions.fmap, meta.json per episode).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stableidm/config.hpp"
#include "stableidm/encoder/fmap.hpp"
#include "stableidm/synth/world.hpp"

namespace stableidm::synth {

struct DatasetConfig {
    WorldConfig world;
    std::size_t episode_length = 40;
    double eval_fraction = 0.25;
    double heavy_fraction = 0.5;
    double heavy_occupancy_min = 0.03;
    double heavy_occupancy_max = 0.12;
    double light_jitter = 3.0;
    double heavy_jitter = 10.0;
    double jitter_period = 24.0;

    static const std::set<std::string>& keys() {
        static const std::set<std::string> k{"episode_length", "eval_fraction", "heavy_fraction",
                                             "heavy_occupancy_min", "heavy_occupancy_max", "light_jitter",
                                             "heavy_jitter", "jitter_period", "link_lengths", "link_thickness",
                                             "max_angle_step", "clutter_min", "clutter_max", "canvas", "crop", "resolution"};
        return k;
    }

    static DatasetConfig from(const KeyValueConfig& kv) {
        DatasetConfig c;
        c.episode_length = kv.get_size("episode_length", c.episode_length);
        c.eval_fraction = kv.get_double("eval_fraction", c.eval_fraction);
        c.heavy_fraction = kv.get_double("heavy_fraction", c.heavy_fraction);
        c.heavy_occupancy_min = kv.get_double("heavy_occupancy_min", c.heavy_occupancy_min);
        c.heavy_occupancy_max = kv.get_double("heavy_occupancy_max", c.heavy_occupancy_max);
        c.light_jitter = kv.get_double("light_jitter", c.light_jitter);
        c.heavy_jitter = kv.get_double("heavy_jitter", c.heavy_jitter);
        c.jitter_period = kv.get_double("jitter_period", c.jitter_period);
        c.world.arm.link_lengths = kv.get_doubles("link_lengths", c.world.arm.link_lengths);
        c.world.arm.link_thickness = kv.get_double("link_thickness", c.world.arm.link_thickness);
        c.world.max_angle_step = kv.get_double("max_angle_step", c.world.max_angle_step);
        c.world.clutter_min = kv.get_size("clutter_min", c.world.clutter_min);
        c.world.clutter_max = kv.get_size("clutter_max", c.world.clutter_max);
        const double canvas = kv.get_double("canvas", c.world.canvas_width);
        c.world.canvas_width = c.world.canvas_height = canvas;
        c.world.crop_extent = kv.get_double("crop", c.world.crop_extent);
        c.world.resolution = kv.get_size("resolution", c.world.resolution);
        c.validate();
        return c;
    }

    void validate() const {
        if (episode_length < 2) throw ConfigError("episode_length must be at least 2");
        if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ConfigError("eval_fraction must lie in [0, 1)");
        if (!(heavy_fraction >= 0.0 && heavy_fraction <= 1.0)) throw ConfigError("heavy_fraction must lie in [0, 1]");
        if (!(heavy_occupancy_min > 0.0 && heavy_occupancy_min <= heavy_occupancy_max)) {
            throw ConfigError("heavy occupancy range is invalid");
        }
        if (world.clutter_min > world.clutter_max) throw ConfigError("clutter_min exceeds clutter_max");
        if (world.crop_extent > world.canvas_width) throw ConfigError("crop larger than canvas");
        try {
            world.arm.validate();
        } catch (const ParameterError& e) {
            throw ConfigError(e.what());
        }
    }
};

struct Dataset {
    std::vector<EpisodeRecord> episodes;
    std::vector<bool> is_eval;  // parallel to episodes
};

inline std::string episode_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ep%04zu", i);
    return buf;
}

/// N episodes from one seed; each episode is light (near full view) or heavy
/// (crop displaced toward a target occupancy), and eval episodes are a seeded
/// random subset of size round(N * eval_fraction).
inline Dataset generate_dataset(const DatasetConfig& cfg, std::size_t n, std::uint64_t seed) {
    cfg.validate();
    Dataset ds;
    numcore::Rng rng(numcore::derive_seed(seed, 1000));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        CameraPolicy policy;
        policy.jitter_period = cfg.jitter_period;
        if (u01(rng) < cfg.heavy_fraction) {
            policy.mode = CameraPolicy::Mode::target;
            policy.target_occupancy =
                cfg.heavy_occupancy_min + (cfg.heavy_occupancy_max - cfg.heavy_occupancy_min) * u01(rng);
            policy.jitter_amplitude = cfg.heavy_jitter;
        } else {
            policy.mode = CameraPolicy::Mode::full_view;
            policy.jitter_amplitude = cfg.light_jitter;
        }
        ds.episodes.push_back(generate_episode(cfg.world, policy, cfg.episode_length,
                                               numcore::derive_seed(seed, i), episode_name(i)));
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_eval = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.eval_fraction));
    ds.is_eval.assign(n, false);
    for (std::size_t i = 0; i < n_eval; ++i) ds.is_eval[order[i]] = true;
    return ds;
}

// ---------------------------------------------------------------------------
// Archive

inline void save_episode(const EpisodeRecord& rec, const std::filesystem::path& dir) {
    rec.validate();
    std::filesystem::create_directories(dir);
    const std::size_t T = rec.length(), H = rec.frames[0].height, W = rec.frames[0].width;
    const std::size_t D = rec.actions[0].size();
    numcore::Tensor frames({T, 3, H, W});
    numcore::Tensor masks({T, H, W});
    numcore::Tensor actions({T, D});
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < 3 * H * W; ++i) frames[t * 3 * H * W + i] = rec.frames[t].rgb[i];
        for (std::size_t i = 0; i < H * W; ++i) masks[t * H * W + i] = rec.masks[t].bits[i];
        for (std::size_t d = 0; d < D; ++d) actions[t * D + d] = rec.actions[t][d];
    }
    fmap::save_fmap(frames, dir / "frames.fmap", fmap::DType::u8);
    fmap::save_fmap(masks, dir / "masks.fmap", fmap::DType::u8);
    fmap::save_fmap(actions, dir / "actions.fmap", fmap::DType::f32);

    nlohmann::json meta;
    meta["episode_id"] = rec.episode_id;
    meta["seed"] = rec.seed;
    meta["occupancy"] = rec.occupancy;
    meta["split"] = to_string(rec.split);
    meta["occupancy_warning"] = rec.occupancy_warning;
    nlohmann::json origins = nlohmann::json::array();
    for (const auto& p : rec.camera_origins) origins.push_back({p.x, p.y});
    meta["camera_origins"] = origins;
    std::ofstream f(dir / "meta.json");
    if (!f) throw IoError("cannot write " + (dir / "meta.json").string());
    f << meta.dump(2) << '\n';
}

inline EpisodeRecord load_episode(const std::filesystem::path& dir) {
    EpisodeRecord rec;
    nlohmann::json meta;
    {
        std::ifstream f(dir / "meta.json");
        if (!f) throw DataError("missing meta.json in " + dir.string());
        try {
            f >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed meta.json in " + dir.string() + ": " + e.what());
        }
    }
    const auto frames = fmap::load_fmap_with_dtype(dir / "frames.fmap");
    const auto masks = fmap::load_fmap_with_dtype(dir / "masks.fmap");
    const auto actions = fmap::load_fmap(dir / "actions.fmap");
    if (frames.dtype != fmap::DType::u8 || masks.dtype != fmap::DType::u8) {
        throw DataError(dir.string() + ": frames and masks must be u8");
    }
    const auto& fs = frames.tensor.shape();
    const auto& ms = masks.tensor.shape();
    if (fs.size() != 4 || fs[1] != 3 || ms.size() != 3 || ms[0] != fs[0] || ms[1] != fs[2] || ms[2] != fs[3] ||
        actions.rank() != 2 || actions.dim(0) != fs[0]) {
        throw DataError(dir.string() + ": inconsistent archive extents");
    }
    const std::size_t T = fs[0], H = fs[2], W = fs[3], D = actions.dim(1);
    try {
        rec.episode_id = meta.at("episode_id").get<std::string>();
        rec.seed = meta.at("seed").get<std::uint64_t>();
        rec.occupancy = meta.at("occupancy").get<std::vector<double>>();
        rec.split = truncation_split_from_string(meta.at("split").get<std::string>());
        rec.occupancy_warning = meta.value("occupancy_warning", false);
        if (meta.contains("camera_origins")) {
            for (const auto& p : meta["camera_origins"]) rec.camera_origins.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("meta.json in " + dir.string() + ": " + e.what());
    }
    for (std::size_t t = 0; t < T; ++t) {
        Image img(H, W);
        for (std::size_t i = 0; i < 3 * H * W; ++i) img.rgb[i] = static_cast<std::uint8_t>(frames.tensor[t * 3 * H * W + i]);
        MaskGrid m(H, W);
        for (std::size_t i = 0; i < H * W; ++i) {
            const double v = masks.tensor[t * H * W + i];
            if (v != 0.0 && v != 1.0) throw DataError(dir.string() + ": mask values must be 0 or 1");
            m.bits[i] = static_cast<std::uint8_t>(v);
        }
        std::vector<double> a(D);
        for (std::size_t d = 0; d < D; ++d) a[d] = actions[t * D + d];
        rec.frames.push_back(std::move(img));
        rec.masks.push_back(std::move(m));
        rec.actions.push_back(std::move(a));
    }
    rec.validate();
    return rec;
}

}  // namespace stableidm::synth
