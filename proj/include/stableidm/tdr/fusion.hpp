#pragma once

// Gated warping fusion of adjacent feature maps:
//   fused = cur + beta * gate ⊙ (warp(prev) - cur)
// The warp field and gate come from a shallow conv head on the channel-stacked
// pair; beta = softplus(rho) stays non-negative.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stableidm/numcore/init.hpp"
#include "stableidm/numcore/ops.hpp"
#include "stableidm/numcore/optim.hpp"

namespace stableidm::tdr {

using numcore::Tensor;
using numcore::Var;

/// rho such that softplus(rho) == beta.
inline double inverse_softplus(double beta) {
    if (!(beta > 0.0)) throw ParameterError("inverse_softplus: beta must be positive");
    return beta > 30.0 ? beta : std::log(std::expm1(beta));
}

struct FusionConfig {
    double max_offset = 2.0;
    std::size_t hidden = 8;
    double beta_init = 0.1;
    bool cascade = false;
    double slope = 0.01;
};

struct FusionParams {
    Tensor w1, b1;  // hidden x 2C x 3 x 3
    Tensor w2, b2;  // 3 x hidden x 3 x 3 (two offset channels, one gate channel)
    Tensor rho;     // 1

    static FusionParams init(const FusionConfig& cfg, std::size_t channels, numcore::Rng& rng) {
        FusionParams p;
        p.w1 = numcore::fan_in_uniform({cfg.hidden, 2 * channels, 3, 3}, 2 * channels * 9, rng);
        p.b1 = Tensor::zeros({cfg.hidden});
        p.w2 = numcore::fan_in_uniform({3, cfg.hidden, 3, 3}, cfg.hidden * 9, rng);
        p.b2 = Tensor::zeros({3});
        p.rho = Tensor::scalar(inverse_softplus(cfg.beta_init));
        return p;
    }

    void register_params(numcore::ParamRegistry& reg, const std::string& prefix) {
        reg.add(prefix + "head1.weight", &w1);
        reg.add(prefix + "head1.bias", &b1);
        reg.add(prefix + "head2.weight", &w2);
        reg.add(prefix + "head2.bias", &b2);
        reg.add(prefix + "rho", &rho);
    }

    double beta() const { return numcore::softplus_value(rho[0]); }
};

struct WarpGate {
    Var offsets;  // 2 x H x W, grid cells
    Var gate;     // 1 x H x W, in (0, 1)
};

inline void require_pair(Var prev, Var cur, const char* op) {
    if (prev.value().shape() != cur.value().shape() || prev.value().rank() != 3) {
        throw ShapeError(std::string(op) + ": feature maps " + numcore::shape_str(prev.shape()) + " and " +
                         numcore::shape_str(cur.shape()) + " must share CxHxW extents");
    }
}

inline WarpGate predict_warp_gate(Var prev, Var cur, const FusionParams& params, const FusionConfig& cfg) {
    require_pair(prev, cur, "predict_warp_gate");
    numcore::Tape& tape = *cur.tape;
    Var pair = numcore::concat_channels(prev, cur);
    Var h = numcore::leaky_relu(numcore::conv2d(pair, tape.param(params.w1), tape.param(params.b1), 1, 1), cfg.slope);
    Var raw = numcore::conv2d(h, tape.param(params.w2), tape.param(params.b2), 1, 1);
    Var offsets = numcore::scale(numcore::tanh(numcore::channel_slice(raw, 0, 2)), cfg.max_offset);
    Var gate = numcore::sigmoid(numcore::channel_slice(raw, 2, 3));
    return WarpGate{offsets, gate};
}

/// Fusion with an explicit warp/gate and beta (single-element Var).
inline Var fuse_with(Var prev, Var cur, const WarpGate& wg, Var beta) {
    require_pair(prev, cur, "fuse_with");
    const Tensor& cv = cur.value();
    Var coords = numcore::add_const(wg.offsets, numcore::identity_grid(cv.dim(1), cv.dim(2)));
    Var warped = numcore::bilinear_sample(prev, coords);
    // (1 - b*gate) * cur + b*gate * warped
    Var mix = numcore::mul_scalar(wg.gate, beta);
    Var keep = numcore::add_const(numcore::scale(mix, -1.0), Tensor(mix.value().shape(), 1.0));
    return numcore::add(numcore::gate_mul(keep, cur), numcore::gate_mul(mix, warped));
}

inline Var fusion_beta(numcore::Tape& tape, const FusionParams& params) {
    return numcore::softplus(tape.param(params.rho));
}

inline Var temporal_fuse(Var prev, Var cur, const FusionParams& params, const FusionConfig& cfg) {
    const WarpGate wg = predict_warp_gate(prev, cur, params, cfg);
    return fuse_with(prev, cur, wg, fusion_beta(*cur.tape, params));
}

/// Pairwise fusion across a causal window. The first map passes through; each
/// later map fuses with its raw predecessor (or the fused one when cascading).
inline std::vector<Var> fuse_window(const std::vector<Var>& maps, const FusionParams& params, const FusionConfig& cfg) {
    if (maps.empty()) throw ParameterError("fuse_window: empty window");
    std::vector<Var> out{maps.front()};
    for (std::size_t i = 1; i < maps.size(); ++i) {
        const Var src = cfg.cascade ? out.back() : maps[i - 1];
        out.push_back(temporal_fuse(src, maps[i], params, cfg));
    }
    return out;
}

}  // namespace stableidm::tdr
