#pragma once

// Planar articulated-arm world: forward kinematics, capsule rasterization,
// camera crops that produce manipulator truncation, and seeded episodes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "stableidm/errors.hpp"
#include "stableidm/imaging.hpp"
#include "stableidm/numcore/init.hpp"

namespace stableidm::synth {

struct Point {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point&) const = default;
};

enum class DimKind { rotation, gripper };

struct ArmConfig {
    std::size_t num_arms = 2;
    std::size_t joints_per_arm = 3;
    std::vector<double> link_lengths{16.0, 14.0, 12.0};
    double link_thickness = 11.0;
    std::size_t gripper_dims_per_arm = 1;
    // Canvas positions of each arm's base, one per arm.
    std::vector<Point> bases{{52.0, 90.0}, {76.0, 90.0}};
    // Mean absolute angle of the first joint per arm.
    std::vector<double> shoulder_centers{-std::numbers::pi / 2 - 0.35, -std::numbers::pi / 2 + 0.35};

    std::size_t action_dim() const { return num_arms * joints_per_arm + num_arms * gripper_dims_per_arm; }

    /// Layout: all joints of arm 0, all joints of arm 1, ..., then grippers.
    std::vector<DimKind> dim_kinds() const {
        std::vector<DimKind> kinds(num_arms * joints_per_arm, DimKind::rotation);
        kinds.resize(action_dim(), DimKind::gripper);
        return kinds;
    }

    void validate() const {
        if (num_arms < 1 || num_arms > 2) throw ParameterError("ArmConfig: num_arms must be 1 or 2");
        if (joints_per_arm == 0) throw ParameterError("ArmConfig: joints_per_arm must be positive");
        if (link_lengths.size() != joints_per_arm) {
            throw ParameterError("ArmConfig: link_lengths must have joints_per_arm entries");
        }
        for (double l : link_lengths) {
            if (!(l > 0.0)) throw ParameterError("ArmConfig: link lengths must be positive");
        }
        if (!(link_thickness > 0.0)) throw ParameterError("ArmConfig: link_thickness must be positive");
        if (bases.size() != num_arms || shoulder_centers.size() != num_arms) {
            throw ParameterError("ArmConfig: bases and shoulder_centers need one entry per arm");
        }
    }
};

struct CameraCrop {
    Point origin;                 // canvas position of the crop's top-left corner
    double extent_x = 64.0;       // canvas pixels covered
    double extent_y = 64.0;
    std::size_t out_width = 64;
    std::size_t out_height = 64;

    void validate(double canvas_w, double canvas_h) const {
        if (!(extent_x > 0.0) || !(extent_y > 0.0) || out_width == 0 || out_height == 0) {
            throw ParameterError("CameraCrop: zero-extent crop");
        }
        constexpr double slack = 1e-9;
        if (origin.x < -slack || origin.y < -slack || origin.x + extent_x > canvas_w + slack ||
            origin.y + extent_y > canvas_h + slack) {
            throw ParameterError("CameraCrop: crop window leaves the canvas");
        }
    }
};

struct ClutterRect {
    double x0, y0, x1, y1;
    std::array<double, 3> color;
};

struct Clutter {
    std::array<double, 3> background{0.32, 0.34, 0.36};
    std::vector<ClutterRect> rects;
};

struct RenderedFrame {
    Image image;
    MaskGrid mask;
};

/// Joint chain: base followed by the end of every link.
inline std::vector<Point> forward_kinematics(const std::vector<double>& joint_angles,
                                             const std::vector<double>& link_lengths, Point base) {
    if (joint_angles.size() != link_lengths.size()) {
        throw ParameterError("forward_kinematics: " + std::to_string(joint_angles.size()) + " angles for " +
                             std::to_string(link_lengths.size()) + " links");
    }
    std::vector<Point> chain{base};
    double heading = 0.0;
    Point p = base;
    for (std::size_t i = 0; i < link_lengths.size(); ++i) {
        heading += joint_angles[i];
        p.x += link_lengths[i] * std::cos(heading);
        p.y += link_lengths[i] * std::sin(heading);
        chain.push_back(p);
    }
    return chain;
}

/// Fraction of set cells.
inline double occupancy(const MaskGrid& mask) {
    if (mask.bits.empty()) throw ParameterError("occupancy: empty mask");
    return static_cast<double>(mask.count()) / static_cast<double>(mask.bits.size());
}

namespace detail {

struct Capsule {
    Point a, b;
    double radius;
    std::array<double, 3> color;
};

inline double capsule_param(const Capsule& c, double x, double y) {
    const double dx = c.b.x - c.a.x, dy = c.b.y - c.a.y;
    const double len2 = dx * dx + dy * dy;
    if (len2 == 0.0) return 0.0;
    return std::clamp(((x - c.a.x) * dx + (y - c.a.y) * dy) / len2, 0.0, 1.0);
}

inline bool capsule_contains(const Capsule& c, double x, double y) {
    const double s = capsule_param(c, x, y);
    const double px = c.a.x + s * (c.b.x - c.a.x) - x;
    const double py = c.a.y + s * (c.b.y - c.a.y) - y;
    return px * px + py * py <= c.radius * c.radius;
}

inline const std::array<std::array<double, 3>, 6>& link_palette() {
    static const std::array<std::array<double, 3>, 6> palette{{
        {0.92, 0.30, 0.28},
        {0.95, 0.62, 0.20},
        {0.93, 0.88, 0.30},
        {0.25, 0.42, 0.92},
        {0.28, 0.80, 0.90},
        {0.62, 0.34, 0.92},
    }};
    return palette;
}

/// Capsules in paint order for a D-dimensional raw action.
inline std::vector<Capsule> arm_capsules(const ArmConfig& arm, const std::vector<double>& action) {
    arm.validate();
    if (action.size() != arm.action_dim()) {
        throw ParameterError("arm state has " + std::to_string(action.size()) + " values, expected " +
                             std::to_string(arm.action_dim()));
    }
    std::vector<Capsule> caps;
    const double r = arm.link_thickness / 2.0;
    for (std::size_t a = 0; a < arm.num_arms; ++a) {
        std::vector<double> angles(action.begin() + static_cast<std::ptrdiff_t>(a * arm.joints_per_arm),
                                   action.begin() + static_cast<std::ptrdiff_t>((a + 1) * arm.joints_per_arm));
        const auto chain = forward_kinematics(angles, arm.link_lengths, arm.bases[a]);
        for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
            const auto& col = link_palette()[(a * 3 + std::min<std::size_t>(i, 2)) % 6];
            caps.push_back(Capsule{chain[i], chain[i + 1], r, col});
        }
        if (arm.gripper_dims_per_arm > 0) {
            const double opening =
                std::clamp(action[arm.num_arms * arm.joints_per_arm + a * arm.gripper_dims_per_arm], 0.0, 1.0);
            double heading = 0.0;
            for (double th : angles) heading += th;
            const Point tip = chain.back();
            const double ux = std::cos(heading), uy = std::sin(heading);
            const double sep = 1.5 + 3.5 * opening;
            const double jaw = 5.0;
            for (double side : {-1.0, 1.0}) {
                Point a0{tip.x - uy * sep * side, tip.y + ux * sep * side};
                Point a1{a0.x + ux * jaw, a0.y + uy * jaw};
                caps.push_back(Capsule{a0, a1, 1.5, {0.95, 0.95, 0.95}});
            }
        }
    }
    return caps;
}

inline std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Rasterize the arms and clutter inside a crop. The mask marks output pixels
/// whose centers fall inside any arm capsule; clutter only reaches the image.
inline RenderedFrame render_frame(const ArmConfig& arm, const std::vector<double>& action, const Clutter& clutter,
                                  const CameraCrop& camera, double canvas_w = 128.0, double canvas_h = 128.0) {
    camera.validate(canvas_w, canvas_h);
    const auto caps = detail::arm_capsules(arm, action);
    const std::size_t W = camera.out_width, H = camera.out_height;
    const double sx = camera.extent_x / static_cast<double>(W);
    const double sy = camera.extent_y / static_cast<double>(H);

    RenderedFrame out{Image(H, W), MaskGrid(H, W, 0)};

    // Pixel-center mask, rasterized per capsule over its bounding box.
    auto paint_mask = [&](const detail::Capsule& c) {
        const double minx = std::min(c.a.x, c.b.x) - c.radius, maxx = std::max(c.a.x, c.b.x) + c.radius;
        const double miny = std::min(c.a.y, c.b.y) - c.radius, maxy = std::max(c.a.y, c.b.y) + c.radius;
        const long px0 = std::max(0L, static_cast<long>(std::floor((minx - camera.origin.x) / sx - 0.5)));
        const long px1 = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil((maxx - camera.origin.x) / sx - 0.5)));
        const long py0 = std::max(0L, static_cast<long>(std::floor((miny - camera.origin.y) / sy - 0.5)));
        const long py1 = std::min(static_cast<long>(H) - 1, static_cast<long>(std::ceil((maxy - camera.origin.y) / sy - 0.5)));
        for (long py = py0; py <= py1; ++py) {
            const double y = camera.origin.y + (static_cast<double>(py) + 0.5) * sy;
            for (long px = px0; px <= px1; ++px) {
                const double x = camera.origin.x + (static_cast<double>(px) + 0.5) * sx;
                if (detail::capsule_contains(c, x, y)) out.mask.at(static_cast<std::size_t>(py), static_cast<std::size_t>(px)) = 1;
            }
        }
    };
    for (const auto& c : caps) paint_mask(c);

    // Image at 2x2 supersampling, painter's order: background, clutter, arms.
    const std::size_t SW = 2 * W, SH = 2 * H;
    std::vector<double> buf(3 * SH * SW);
    for (std::size_t ch = 0; ch < 3; ++ch) std::fill(buf.begin() + ch * SH * SW, buf.begin() + (ch + 1) * SH * SW, clutter.background[ch]);
    const double ssx = sx / 2.0, ssy = sy / 2.0;
    auto sample_range = [&](double lo, double hi, double origin, double step, std::size_t n) {
        long a = std::max(0L, static_cast<long>(std::floor((lo - origin) / step - 0.5)));
        long b = std::min(static_cast<long>(n) - 1, static_cast<long>(std::ceil((hi - origin) / step - 0.5)));
        return std::pair<long, long>{a, b};
    };
    for (const auto& r : clutter.rects) {
        auto [x0, x1] = sample_range(r.x0, r.x1, camera.origin.x, ssx, SW);
        auto [y0, y1] = sample_range(r.y0, r.y1, camera.origin.y, ssy, SH);
        for (long py = y0; py <= y1; ++py) {
            const double y = camera.origin.y + (static_cast<double>(py) + 0.5) * ssy;
            if (y < r.y0 || y > r.y1) continue;
            for (long px = x0; px <= x1; ++px) {
                const double x = camera.origin.x + (static_cast<double>(px) + 0.5) * ssx;
                if (x < r.x0 || x > r.x1) continue;
                for (std::size_t ch = 0; ch < 3; ++ch) buf[(ch * SH + static_cast<std::size_t>(py)) * SW + static_cast<std::size_t>(px)] = r.color[ch];
            }
        }
    }
    for (const auto& c : caps) {
        auto [x0, x1] = sample_range(std::min(c.a.x, c.b.x) - c.radius, std::max(c.a.x, c.b.x) + c.radius,
                                     camera.origin.x, ssx, SW);
        auto [y0, y1] = sample_range(std::min(c.a.y, c.b.y) - c.radius, std::max(c.a.y, c.b.y) + c.radius,
                                     camera.origin.y, ssy, SH);
        for (long py = y0; py <= y1; ++py) {
            const double y = camera.origin.y + (static_cast<double>(py) + 0.5) * ssy;
            for (long px = x0; px <= x1; ++px) {
                const double x = camera.origin.x + (static_cast<double>(px) + 0.5) * ssx;
                if (!detail::capsule_contains(c, x, y)) continue;
                // Brightness ramps from joint to tip so link direction is visible.
                const double shade = 0.55 + 0.45 * detail::capsule_param(c, x, y);
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    buf[(ch * SH + static_cast<std::size_t>(py)) * SW + static_cast<std::size_t>(px)] = c.color[ch] * shade;
                }
            }
        }
    }
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const double* row0 = &buf[(ch * SH + 2 * y) * SW + 2 * x];
                const double* row1 = row0 + SW;
                out.image.at(ch, y, x) = detail::to_u8(0.25 * (row0[0] + row0[1] + row1[0] + row1[1]));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Episodes

enum class TruncationSplit { light, heavy, unassigned };

inline const char* to_string(TruncationSplit s) {
    switch (s) {
        case TruncationSplit::light: return "light";
        case TruncationSplit::heavy: return "heavy";
        case TruncationSplit::unassigned: return "unassigned";
    }
    return "unassigned";
}

inline TruncationSplit truncation_split_from_string(const std::string& s) {
    if (s == "light") return TruncationSplit::light;
    if (s == "heavy") return TruncationSplit::heavy;
    if (s == "unassigned") return TruncationSplit::unassigned;
    throw FormatError("unknown truncation split label '" + s + "'");
}

struct EpisodeRecord {
    std::string episode_id;
    std::uint64_t seed = 0;
    std::vector<Image> frames;
    std::vector<MaskGrid> masks;
    std::vector<std::vector<double>> actions;
    std::vector<double> occupancy;
    std::vector<Point> camera_origins;
    TruncationSplit split = TruncationSplit::unassigned;
    bool occupancy_warning = false;

    std::size_t length() const noexcept { return frames.size(); }

    void validate() const {
        const std::size_t T = frames.size();
        if (T < 2) throw DataError("episode " + episode_id + ": length must be at least 2");
        if (masks.size() != T || actions.size() != T || occupancy.size() != T) {
            throw DataError("episode " + episode_id + ": frames, masks, actions and occupancy differ in length");
        }
        for (std::size_t t = 0; t < T; ++t) {
            if (masks[t].height != frames[t].height || masks[t].width != frames[t].width) {
                throw DataError("episode " + episode_id + ": mask extents differ from frame at t=" + std::to_string(t));
            }
            if (std::abs(synth::occupancy(masks[t]) - occupancy[t]) > 1e-9) {
                throw DataError("episode " + episode_id + ": stored occupancy disagrees with mask at t=" +
                                std::to_string(t));
            }
        }
    }

    bool operator==(const EpisodeRecord&) const = default;
};

struct CameraPolicy {
    enum class Mode { full_view, drift, target };
    Mode mode = Mode::full_view;
    // Amplitude (canvas px) and period (frames) of the oscillating crop motion.
    double jitter_amplitude = 0.0;
    double jitter_period = 24.0;
    // drift: constant displacement of the crop away from the arms (canvas px).
    double drift_magnitude = 0.0;
    // target: displacement chosen so the mean occupancy approaches this value.
    double target_occupancy = 0.1;
    double occupancy_tolerance = 0.03;
};

struct WorldConfig {
    ArmConfig arm;
    double canvas_width = 128.0;
    double canvas_height = 128.0;
    double crop_extent = 64.0;
    std::size_t resolution = 64;
    Point full_view_origin{32.0, 32.0};
    double max_angle_step = 0.08;
    std::size_t clutter_min = 3;
    std::size_t clutter_max = 8;
    double light_threshold = 0.15;
};

namespace detail {

inline Clutter make_clutter(const WorldConfig& cfg, numcore::Rng& rng) {
    Clutter cl;
    std::uniform_int_distribution<std::size_t> count(cfg.clutter_min, cfg.clutter_max);
    std::uniform_real_distribution<double> ux(0.0, cfg.canvas_width), uy(0.0, cfg.canvas_height);
    std::uniform_real_distribution<double> size(6.0, 26.0), col(0.05, 0.95), bg(0.2, 0.5);
    cl.background = {bg(rng), bg(rng), bg(rng)};
    const std::size_t n = count(rng);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ux(rng), y = uy(rng);
        cl.rects.push_back(ClutterRect{x, y, x + size(rng), y + size(rng), {col(rng), col(rng), col(rng)}});
    }
    return cl;
}

struct Sinusoid {
    double amplitude, omega, phase;
};

// Smooth joint trajectories: centre plus two sinusoids, amplitudes scaled so the
// per-step change never exceeds max_step (|sin(a+w)-sin(a)| <= w).
inline std::vector<std::vector<double>> make_actions(const WorldConfig& cfg, std::size_t T, numcore::Rng& rng) {
    const ArmConfig& arm = cfg.arm;
    const std::size_t D = arm.action_dim();
    const std::size_t J = arm.num_arms * arm.joints_per_arm;
    std::uniform_real_distribution<double> amp(0.15, 0.5), period(18.0, 60.0), phase(0.0, 2 * std::numbers::pi);
    std::uniform_real_distribution<double> centre(-0.55, 0.55), shoulder(-0.2, 0.2);
    std::vector<std::vector<double>> actions(T, std::vector<double>(D, 0.0));
    for (std::size_t d = 0; d < D; ++d) {
        const bool gripper = d >= J;
        double c = 0.0;
        if (gripper) {
            c = 0.5;
        } else if (d % arm.joints_per_arm == 0) {
            c = arm.shoulder_centers[d / arm.joints_per_arm] + shoulder(rng);
        } else {
            c = centre(rng);
        }
        std::array<Sinusoid, 2> waves{};
        double bound = 0.0;
        for (auto& w : waves) {
            w = {amp(rng), 2 * std::numbers::pi / period(rng), phase(rng)};
            bound += w.amplitude * w.omega;
        }
        const double limit = gripper ? 0.12 : 0.95 * cfg.max_angle_step;
        const double s = bound > limit ? limit / bound : 1.0;
        for (std::size_t t = 0; t < T; ++t) {
            double v = c;
            for (const auto& w : waves) v += s * w.amplitude * std::sin(w.omega * static_cast<double>(t) + w.phase);
            if (gripper) v = std::clamp(v, 0.0, 1.0);
            // Stored at single precision so the on-disk f32 payload is exact.
            actions[t][d] = static_cast<double>(static_cast<float>(v));
        }
    }
    return actions;
}

inline std::vector<Point> camera_path(const WorldConfig& cfg, const CameraPolicy& policy, std::size_t T,
                                      Point direction, double magnitude, const std::array<double, 4>& wave) {
    std::vector<Point> path(T);
    const double maxx = cfg.canvas_width - cfg.crop_extent, maxy = cfg.canvas_height - cfg.crop_extent;
    const double omega = 2 * std::numbers::pi / std::max(policy.jitter_period, 2.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double tt = static_cast<double>(t);
        Point p{cfg.full_view_origin.x + direction.x * magnitude +
                    policy.jitter_amplitude * std::sin(omega * wave[0] * tt + wave[1]),
                cfg.full_view_origin.y + direction.y * magnitude +
                    policy.jitter_amplitude * std::sin(omega * wave[2] * tt + wave[3])};
        p.x = std::clamp(p.x, 0.0, maxx);
        p.y = std::clamp(p.y, 0.0, maxy);
        path[t] = p;
    }
    return path;
}

inline CameraCrop crop_at(const WorldConfig& cfg, Point origin) {
    return CameraCrop{origin, cfg.crop_extent, cfg.crop_extent, cfg.resolution, cfg.resolution};
}

}  // namespace detail

/// Mask-only render, used for occupancy search.
inline MaskGrid render_mask(const WorldConfig& cfg, const std::vector<double>& action, const CameraCrop& crop) {
    static const Clutter empty{};
    return render_frame(cfg.arm, action, empty, crop, cfg.canvas_width, cfg.canvas_height).mask;
}

/// Deterministic clutter for an episode seed.
inline Clutter episode_clutter(const WorldConfig& cfg, std::uint64_t seed) {
    numcore::Rng rng(numcore::derive_seed(seed, 2));
    return detail::make_clutter(cfg, rng);
}

inline EpisodeRecord generate_episode(const WorldConfig& cfg, const CameraPolicy& policy, std::size_t T,
                                      std::uint64_t seed, std::string episode_id = {}) {
    if (T < 2) throw ParameterError("generate_episode: length must be at least 2");
    cfg.arm.validate();
    numcore::Rng rng(numcore::derive_seed(seed, 1));
    EpisodeRecord rec;
    rec.episode_id = episode_id.empty() ? "ep_" + std::to_string(seed) : std::move(episode_id);
    rec.seed = seed;
    rec.actions = detail::make_actions(cfg, T, rng);
    const Clutter clutter = episode_clutter(cfg, seed);

    // Displacement direction away from the arms: up, or up-left/up-right, or sideways.
    static const std::array<Point, 5> directions{{{0.0, -1.0}, {-0.7071, -0.7071}, {0.7071, -0.7071},
                                                  {-1.0, 0.0}, {1.0, 0.0}}};
    std::uniform_int_distribution<std::size_t> pick(0, directions.size() - 1);
    std::uniform_real_distribution<double> wf(0.6, 1.4), wp(0.0, 2 * std::numbers::pi);
    const Point dir = directions[pick(rng)];
    const std::array<double, 4> wave{wf(rng), wp(rng), wf(rng), wp(rng)};

    double magnitude = 0.0;
    if (policy.mode == CameraPolicy::Mode::drift) magnitude = policy.drift_magnitude;
    if (policy.mode == CameraPolicy::Mode::target) {
        auto mean_occ = [&](double m) {
            const auto path = detail::camera_path(cfg, policy, T, dir, m, wave);
            double acc = 0.0;
            for (std::size_t t = 0; t < T; ++t) acc += occupancy(render_mask(cfg, rec.actions[t], detail::crop_at(cfg, path[t])));
            return acc / static_cast<double>(T);
        };
        const double max_m = 48.0;
        double lo = 0.0, hi = max_m;
        const double occ_lo = mean_occ(lo), occ_hi = mean_occ(hi);
        const double target = policy.target_occupancy;
        if (target >= occ_lo) {
            magnitude = lo;
        } else if (target <= occ_hi) {
            magnitude = hi;
        } else {
            for (int it = 0; it < 14; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (mean_occ(mid) > target) lo = mid; else hi = mid;
            }
            magnitude = 0.5 * (lo + hi);
        }
        rec.occupancy_warning = std::abs(mean_occ(magnitude) - target) > policy.occupancy_tolerance;
    }
    rec.camera_origins = detail::camera_path(cfg, policy, T, dir, magnitude, wave);

    for (std::size_t t = 0; t < T; ++t) {
        auto frame = render_frame(cfg.arm, rec.actions[t], clutter, detail::crop_at(cfg, rec.camera_origins[t]),
                                  cfg.canvas_width, cfg.canvas_height);
        rec.occupancy.push_back(occupancy(frame.mask));
        rec.frames.push_back(std::move(frame.image));
        rec.masks.push_back(std::move(frame.mask));
    }
    double mean = 0.0;
    for (double o : rec.occupancy) mean += o;
    mean /= static_cast<double>(T);
    rec.split = mean >= cfg.light_threshold ? TruncationSplit::light : TruncationSplit::heavy;
    return rec;
}

/// Recompute the mask of frame t from the stored action and camera origin.
inline MaskGrid rerender_mask(const WorldConfig& cfg, const EpisodeRecord& rec, std::size_t t) {
    return render_mask(cfg, rec.actions.at(t), detail::crop_at(cfg, rec.camera_origins.at(t)));
}

}  // namespace stableidm::synth
