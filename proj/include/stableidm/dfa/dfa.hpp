#pragma once

// Directional feature aggregation: oriented line extractors at A angles,
// mask-gated average pooling, and context-driven softmax reweighting of the
// per-direction blocks, concatenated into one descriptor.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "stableidm/numcore/init.hpp"
#include "stableidm/numcore/ops.hpp"
#include "stableidm/numcore/optim.hpp"

namespace stableidm::dfa {

using numcore::Tensor;
using numcore::Var;

inline constexpr double kEmptyMaskEps = 1e-9;

struct DfaConfig {
    std::vector<double> angles_deg{0.0, 45.0, 90.0, 135.0};
    std::size_t taps = 5;
    std::size_t dir_channels = 32;
    double temperature = 1.0;
    double slope = 0.01;

    std::size_t num_directions() const { return angles_deg.size(); }
    std::size_t descriptor_dim() const { return angles_deg.size() * dir_channels; }

    void validate() const {
        if (angles_deg.empty()) throw ConfigError("dfa: at least one direction is required");
        for (std::size_t i = 0; i < angles_deg.size(); ++i) {
            if (!(angles_deg[i] >= 0.0 && angles_deg[i] < 180.0)) {
                throw ConfigError("dfa: angles must lie in [0, 180) degrees");
            }
            for (std::size_t j = 0; j < i; ++j) {
                if (angles_deg[i] == angles_deg[j]) throw ConfigError("dfa: angles must be distinct");
            }
        }
        if (taps == 0 || taps % 2 == 0) throw ConfigError("dfa: line kernel length must be odd");
        if (dir_channels == 0) throw ConfigError("dfa: dir_channels must be positive");
        if (!(temperature > 0.0)) throw ConfigError("dfa: temperature must be positive");
    }
};

/// Per-direction line taps (one length-C vector per tap) and 1x1 projection.
struct DirectionBank {
    std::vector<std::vector<Tensor>> taps;  // [direction][tap] -> C
    std::vector<Tensor> proj_weight;        // [direction] -> dir_channels x C x 1 x 1
    std::vector<Tensor> proj_bias;          // [direction] -> dir_channels

    static DirectionBank init(const DfaConfig& cfg, std::size_t in_channels, numcore::Rng& rng) {
        cfg.validate();
        DirectionBank b;
        for (std::size_t k = 0; k < cfg.num_directions(); ++k) {
            std::vector<Tensor> tk;
            for (std::size_t j = 0; j < cfg.taps; ++j) tk.push_back(numcore::fan_in_uniform({in_channels}, cfg.taps, rng));
            b.taps.push_back(std::move(tk));
            b.proj_weight.push_back(numcore::fan_in_uniform({cfg.dir_channels, in_channels, 1, 1}, in_channels, rng));
            b.proj_bias.push_back(Tensor::zeros({cfg.dir_channels}));
        }
        return b;
    }

    void register_params(numcore::ParamRegistry& reg, const std::string& prefix) {
        for (std::size_t k = 0; k < taps.size(); ++k) {
            const std::string d = prefix + "dir" + std::to_string(k);
            for (std::size_t j = 0; j < taps[k].size(); ++j) reg.add(d + ".tap" + std::to_string(j), &taps[k][j]);
            reg.add(d + ".proj.weight", &proj_weight[k]);
            reg.add(d + ".proj.bias", &proj_bias[k]);
        }
    }
};

struct ContextProjection {
    Tensor u;  // A x context_dim
    double temperature = 1.0;

    static ContextProjection init(const DfaConfig& cfg, std::size_t context_dim, numcore::Rng& rng) {
        return ContextProjection{numcore::fan_in_uniform({cfg.num_directions(), context_dim}, context_dim, rng),
                                 cfg.temperature};
    }

    void register_params(numcore::ParamRegistry& reg, const std::string& prefix) { reg.add(prefix + "U", &u); }
};

/// Sampling grid for tap offset `step` along angle_deg: (x + step cos, y + step sin).
inline Tensor tap_coords(std::size_t h, std::size_t w, double angle_deg, double step) {
    const double th = angle_deg * std::numbers::pi / 180.0;
    // Snap to exact zeros so 0/90 degree taps land on integer cells.
    double c = std::cos(th), s = std::sin(th);
    if (std::abs(c) < 1e-12) c = 0.0;
    if (std::abs(s) < 1e-12) s = 0.0;
    Tensor g = numcore::identity_grid(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
        g[i] += step * c;
        g[h * w + i] += step * s;
    }
    return g;
}

/// Oriented line convolution per direction, then projection and leaky ReLU.
inline std::vector<Var> directional_extract(Var features, const DirectionBank& bank, const DfaConfig& cfg) {
    if (cfg.num_directions() == 0 || bank.taps.empty()) throw ConfigError("directional_extract: no directions");
    if (bank.taps.size() != cfg.num_directions()) throw ConfigError("directional_extract: bank/config direction mismatch");
    const Tensor& fv = features.value();
    if (fv.rank() != 3) throw ShapeError("directional_extract: features must be CxHxW, got " + numcore::shape_str(fv.shape()));
    numcore::Tape& tape = *features.tape;
    const std::size_t H = fv.dim(1), W = fv.dim(2);
    const auto half = static_cast<long>(cfg.taps / 2);
    std::vector<Var> out;
    for (std::size_t k = 0; k < cfg.num_directions(); ++k) {
        Var line{};
        for (std::size_t j = 0; j < cfg.taps; ++j) {
            const long step = static_cast<long>(j) - half;
            Var sampled = step == 0 ? features
                                    : numcore::bilinear_sample(
                                          features, tape.constant(tap_coords(H, W, cfg.angles_deg[k], static_cast<double>(step))));
            Var term = numcore::channel_scale(sampled, tape.param(bank.taps[k][j]));
            line = line.valid() ? numcore::add(line, term) : term;
        }
        Var proj = numcore::conv2d(line, tape.param(bank.proj_weight[k]), tape.param(bank.proj_bias[k]), 1, 0);
        out.push_back(numcore::leaky_relu(proj, cfg.slope));
    }
    return out;
}

struct Pooled {
    Var vector;
    bool mask_empty = false;
};

/// sum(map * mask) / sum(mask) per channel, or a plain average when the mask
/// is (numerically) empty.
inline Pooled masked_pool(Var map, const Tensor& mask_grid) {
    const Tensor& mv = map.value();
    if (mv.rank() != 3 || mask_grid.rank() != 2 || mask_grid.dim(0) != mv.dim(1) || mask_grid.dim(1) != mv.dim(2)) {
        throw ShapeError("masked_pool: mask " + numcore::shape_str(mask_grid.shape()) + " does not match map " +
                         numcore::shape_str(mv.shape()));
    }
    double total = 0.0;
    for (double v : mask_grid.data()) total += v;
    if (total < kEmptyMaskEps) return Pooled{numcore::mean_spatial(map), true};
    return Pooled{numcore::weighted_mean_spatial(map, mask_grid), false};
}

/// softmax(U g / temperature).
inline Var context_weights(Var context, const ContextProjection& proj) {
    const Tensor& u = proj.u;
    if (context.value().rank() != 1 || context.value().size() != u.dim(1)) {
        throw ShapeError("context_weights: context " + numcore::shape_str(context.shape()) + " incompatible with U " +
                         numcore::shape_str(u.shape()));
    }
    Var logits = numcore::linear(context, context.tape->param(u), std::nullopt);
    return numcore::softmax(logits, proj.temperature);
}

struct DfaOutput {
    Var descriptor;
    Var weights;
    bool mask_empty = false;
};

/// Block k = w_k * masked_pool(extractor_k(features)), blocks in angle order.
inline DfaOutput dfa_descriptor(Var features, const Tensor& mask_grid, Var context, const DirectionBank& bank,
                                const ContextProjection& proj, const DfaConfig& cfg) {
    const auto maps = directional_extract(features, bank, cfg);
    Var w = context_weights(context, proj);
    std::vector<Var> blocks;
    bool empty = false;
    for (std::size_t k = 0; k < maps.size(); ++k) {
        Pooled p = masked_pool(maps[k], mask_grid);
        empty = empty || p.mask_empty;
        blocks.push_back(numcore::mul_scalar(p.vector, numcore::index(w, k)));
    }
    return DfaOutput{numcore::concat(blocks), w, empty};
}

}  // namespace stableidm::dfa
