#pragma once

// Trainable patch encoder: three stride-matched convolution stages map a
// masked frame onto the patch grid, and a context head summarizes the grid
// into a global vector.

#include <array>
#include <cstddef>
#include <string>

#include "stableidm/numcore/init.hpp"
#include "stableidm/numcore/ops.hpp"
#include "stableidm/numcore/optim.hpp"

namespace stableidm::encoder {

using numcore::Tensor;
using numcore::Var;

struct EncoderConfig {
    std::size_t resolution = 64;
    std::size_t patch = 8;
    std::size_t channels = 32;
    std::size_t context_dim = 32;
    std::array<std::size_t, 2> stage_channels{12, 24};
    double slope = 0.01;

    void validate() const {
        if (patch < 4 || patch % 4 != 0) throw ConfigError("encoder: patch size must be a positive multiple of 4");
        if (resolution == 0 || resolution % patch != 0) {
            throw ConfigError("encoder: resolution " + std::to_string(resolution) + " not divisible by patch " +
                              std::to_string(patch));
        }
        if (channels == 0 || context_dim == 0 || stage_channels[0] == 0 || stage_channels[1] == 0) {
            throw ConfigError("encoder: channel counts must be positive");
        }
    }

    std::size_t grid() const { return resolution / patch; }

    /// Stage strides; each kernel equals its stride so a grid cell sees exactly its patch.
    std::array<std::size_t, 3> strides() const { return {2, 2, patch / 4}; }
};

struct EncoderParams {
    std::array<Tensor, 3> weight;
    std::array<Tensor, 3> bias;
    Tensor context_weight;  // context_dim x channels
    Tensor context_token;   // context_dim; learned offset standing in for the CLS token

    static EncoderParams init(const EncoderConfig& cfg, numcore::Rng& rng) {
        cfg.validate();
        EncoderParams p;
        const auto s = cfg.strides();
        const std::array<std::size_t, 4> ch{3, cfg.stage_channels[0], cfg.stage_channels[1], cfg.channels};
        for (std::size_t i = 0; i < 3; ++i) {
            p.weight[i] = numcore::fan_in_uniform({ch[i + 1], ch[i], s[i], s[i]}, ch[i] * s[i] * s[i], rng);
            p.bias[i] = Tensor::zeros({ch[i + 1]});
        }
        p.context_weight = numcore::fan_in_uniform({cfg.context_dim, cfg.channels}, cfg.channels, rng);
        p.context_token = Tensor::zeros({cfg.context_dim});
        return p;
    }

    void register_params(numcore::ParamRegistry& reg, const std::string& prefix) {
        for (std::size_t i = 0; i < 3; ++i) {
            reg.add(prefix + "stage" + std::to_string(i) + ".weight", &weight[i]);
            reg.add(prefix + "stage" + std::to_string(i) + ".bias", &bias[i]);
        }
        reg.add(prefix + "context.weight", &context_weight);
        reg.add(prefix + "context.token", &context_token);
    }
};

struct Encoded {
    Var grid;     // channels x grid x grid
    Var context;  // context_dim
};

inline Encoded encode(Var frame, const EncoderParams& params, const EncoderConfig& cfg) {
    const Tensor& f = frame.value();
    if (f.rank() != 3 || f.dim(0) != 3 || f.dim(1) != cfg.resolution || f.dim(2) != cfg.resolution) {
        throw ShapeError("encode: expected frame 3x" + std::to_string(cfg.resolution) + "x" +
                         std::to_string(cfg.resolution) + ", got " + numcore::shape_str(f.shape()));
    }
    numcore::Tape& tape = *frame.tape;
    const auto s = cfg.strides();
    Var x = frame;
    for (std::size_t i = 0; i < 3; ++i) {
        x = numcore::conv2d(x, tape.param(params.weight[i]), tape.param(params.bias[i]), s[i], 0);
        if (i < 2) x = numcore::leaky_relu(x, cfg.slope);
    }
    Var pooled = numcore::mean_spatial(x);
    Var ctx = numcore::add(numcore::linear(pooled, tape.param(params.context_weight), std::nullopt),
                           tape.param(params.context_token));
    return Encoded{x, ctx};
}

}  // namespace stableidm::encoder
