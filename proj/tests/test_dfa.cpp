#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stableidm/dfa/dfa.hpp"
#include "support/gradcheck.hpp"

namespace dfa = stableidm::dfa;
namespace nc = stableidm::numcore;
using nc::Rng;
using nc::Tape;
using nc::Tensor;

namespace {

dfa::DfaConfig small_config(std::size_t dir_channels = 3) {
    dfa::DfaConfig cfg;
    cfg.dir_channels = dir_channels;
    return cfg;
}

dfa::DirectionBank random_bank(const dfa::DfaConfig& cfg, std::size_t channels, Rng& rng) {
    auto b = dfa::DirectionBank::init(cfg, channels, rng);
    for (auto& bias : b.proj_bias) bias = nc::uniform(bias.shape(), -0.3, 0.3, rng);
    return b;
}

double clamped_bilinear(const Tensor& f, std::size_t c, double x, double y) {
    const std::size_t H = f.dim(1), W = f.dim(2);
    x = std::clamp(x, 0.0, static_cast<double>(W - 1));
    y = std::clamp(y, 0.0, static_cast<double>(H - 1));
    const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    const double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
    return (1 - ay) * ((1 - ax) * f.at(c, y0, x0) + ax * f.at(c, y0, x1)) + ay * ((1 - ax) * f.at(c, y1, x0) + ax * f.at(c, y1, x1));
}

// Direct loop evaluation of one direction's extractor output.
Tensor extract_oracle(const Tensor& f, const dfa::DirectionBank& bank, const dfa::DfaConfig& cfg, std::size_t k) {
    const std::size_t C = f.dim(0), H = f.dim(1), W = f.dim(2), D = cfg.dir_channels;
    const double th = cfg.angles_deg[k] * std::numbers::pi / 180.0;
    const double cx = std::abs(std::cos(th)) < 1e-12 ? 0.0 : std::cos(th);
    const double sy = std::abs(std::sin(th)) < 1e-12 ? 0.0 : std::sin(th);
    const long half = static_cast<long>(cfg.taps / 2);
    Tensor line({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (std::size_t j = 0; j < cfg.taps; ++j) {
                    const double step = static_cast<double>(static_cast<long>(j) - half);
                    acc += bank.taps[k][j][c] * clamped_bilinear(f, c, x + step * cx, y + step * sy);
                }
                line.at(c, y, x) = acc;
            }
    Tensor out({D, H, W});
    for (std::size_t d = 0; d < D; ++d)
        for (std::size_t i = 0; i < H * W; ++i) {
            double v = bank.proj_bias[k][d];
            for (std::size_t c = 0; c < C; ++c) v += bank.proj_weight[k][d * C + c] * line[c * H * W + i];
            out[d * H * W + i] = v < 0.0 ? cfg.slope * v : v;
        }
    return out;
}

std::vector<double> masked_mean(const Tensor& map, const Tensor& mask) {
    const std::size_t D = map.dim(0), P = map.dim(1) * map.dim(2);
    double total = 0.0;
    for (double v : mask.data()) total += v;
    std::vector<double> out(D, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t i = 0; i < P; ++i) out[d] += map[d * P + i] * mask[i];
        out[d] /= total;
    }
    return out;
}

}  // namespace

TEST(DirectionalExtract, MatchesLoopOracle) {
    const auto cfg = small_config();
    Rng rng(1);
    const auto bank = random_bank(cfg, 4, rng);
    const Tensor f = nc::uniform({4, 6, 7}, -1, 1, rng);
    Tape t;
    const auto maps = dfa::directional_extract(t.constant(f), bank, cfg);
    ASSERT_EQ(maps.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) {
        const Tensor want = extract_oracle(f, bank, cfg, k);
        ASSERT_EQ(maps[k].value().shape(), want.shape());
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(maps[k].value()[i], want[i], 1e-12) << "direction " << k;
    }
}

TEST(DirectionalExtract, ConstantMapStaysConstant) {
    const auto cfg = small_config();
    Rng rng(2);
    const auto bank = random_bank(cfg, 2, rng);
    Tensor f({2, 8, 8});
    for (std::size_t i = 0; i < 64; ++i) {
        f[i] = 0.7;
        f[64 + i] = -0.4;
    }
    Tape t;
    const auto maps = dfa::directional_extract(t.constant(f), bank, cfg);
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t d = 0; d < 3; ++d) {
            double line0 = 0.0, line1 = 0.0;
            for (const auto& tap : bank.taps[k]) {
                line0 += tap[0] * 0.7;
                line1 += tap[1] * -0.4;
            }
            double v = bank.proj_bias[k][d] + bank.proj_weight[k][d * 2] * line0 + bank.proj_weight[k][d * 2 + 1] * line1;
            v = v < 0.0 ? cfg.slope * v : v;
            for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(maps[k].value()[d * 64 + i], v, 1e-12);
        }
    }
}

TEST(DirectionalExtract, VerticalStripeFavoursVerticalLine) {
    dfa::DfaConfig cfg = small_config(1);
    cfg.angles_deg = {0.0, 90.0};
    dfa::DirectionBank bank;
    for (std::size_t k = 0; k < 2; ++k) {
        bank.taps.push_back(std::vector<Tensor>(5, Tensor({1}, 1.0)));
        bank.proj_weight.push_back(Tensor({1, 1, 1, 1}, 1.0));
        bank.proj_bias.push_back(Tensor::zeros({1}));
    }
    Tensor f({1, 8, 8});
    Tensor stripe({8, 8});
    for (std::size_t y = 0; y < 8; ++y) {
        f.at(0, y, 3) = 1.0;
        stripe[y * 8 + 3] = 1.0;
    }
    Tape t;
    const auto maps = dfa::directional_extract(t.constant(f), bank, cfg);
    const double horiz = dfa::masked_pool(maps[0], stripe).vector.value()[0];
    const double vert = dfa::masked_pool(maps[1], stripe).vector.value()[0];
    EXPECT_DOUBLE_EQ(horiz, 1.0);
    EXPECT_DOUBLE_EQ(vert, 5.0);
}

TEST(DirectionalExtract, GradientsMatchFiniteDifferences) {
    auto cfg = small_config(2);
    cfg.angles_deg = {0.0, 30.0, 90.0, 135.0};
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto bank = random_bank(cfg, 3, rng);
        Tensor f = nc::uniform({3, 5, 5}, -1, 1, rng);
        std::vector<Tensor*> targets{&f};
        for (std::size_t k = 0; k < 4; ++k) {
            for (auto& tap : bank.taps[k]) targets.push_back(&tap);
            targets.push_back(&bank.proj_weight[k]);
            targets.push_back(&bank.proj_bias[k]);
        }
        auto build = [&](Tape& t) {
            std::vector<nc::Var> flat;
            for (const auto& m : dfa::directional_extract(t.param(f), bank, cfg)) flat.push_back(nc::reshape(m, {m.value().size()}));
            return nc::concat(flat);
        };
        const auto r = testing_support::gradcheck(targets, build, rng, 24);
        EXPECT_LT(r.max_rel_error, testing_support::kFdTolerance) << r.worst;
    }
}

TEST(DirectionalExtract, RejectsBadInputs) {
    const auto cfg = small_config();
    Rng rng(4);
    const auto bank = random_bank(cfg, 2, rng);
    Tape t;
    EXPECT_THROW(dfa::directional_extract(t.constant(Tensor::zeros({2, 4})), bank, cfg), stableidm::ShapeError);
    auto fewer = cfg;
    fewer.angles_deg = {0.0};
    EXPECT_THROW(dfa::directional_extract(t.constant(Tensor::zeros({2, 4, 4})), bank, fewer), stableidm::ConfigError);
}

TEST(MaskedPool, WeightedMeanAndMaskGating) {
    Rng rng(5);
    const Tensor map = nc::uniform({3, 4, 4}, -1, 1, rng);
    const Tensor mask = nc::uniform({4, 4}, 0, 1, rng);
    Tape t;
    const auto p = dfa::masked_pool(t.constant(map), mask);
    EXPECT_FALSE(p.mask_empty);
    const auto want = masked_mean(map, mask);
    for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(p.vector.value()[d], want[d], 1e-12);

    Tensor gated = map;
    Tensor binary({4, 4});
    for (std::size_t i = 0; i < 16; ++i) binary[i] = i % 3 == 0 ? 1.0 : 0.0;
    for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t i = 0; i < 16; ++i)
            if (binary[i] == 0.0) gated[d * 16 + i] = 100.0;
    const Tensor plain = dfa::masked_pool(t.constant(map), binary).vector.value();
    EXPECT_TRUE(dfa::masked_pool(t.constant(gated), binary).vector.value().bit_equal(plain));
}

TEST(MaskedPool, EmptyMaskFallsBackToPlainAverage) {
    Rng rng(6);
    const Tensor map = nc::uniform({2, 3, 3}, -1, 1, rng);
    Tape t;
    const auto p = dfa::masked_pool(t.constant(map), Tensor::zeros({3, 3}));
    EXPECT_TRUE(p.mask_empty);
    for (std::size_t d = 0; d < 2; ++d) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 9; ++i) mean += map[d * 9 + i] / 9.0;
        EXPECT_NEAR(p.vector.value()[d], mean, 1e-12);
        EXPECT_TRUE(std::isfinite(p.vector.value()[d]));
    }
    EXPECT_THROW(dfa::masked_pool(t.constant(map), Tensor::zeros({3, 4})), stableidm::ShapeError);
}

TEST(MaskedPool, GradientsMatchFiniteDifferences) {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor map = nc::uniform({3, 4, 5}, -1, 1, rng);
        const Tensor mask = nc::uniform({4, 5}, 0, 1, rng);
        const auto r = testing_support::gradcheck(
            {&map}, [&](Tape& t) { return dfa::masked_pool(t.param(map), mask).vector; }, rng, 24);
        EXPECT_LT(r.max_rel_error, testing_support::kFdTolerance) << r.worst;
    }
}

TEST(DfaDescriptor, UniformWeightsScaleEachBlockByOneOverA) {
    const auto cfg = small_config();
    Rng rng(8);
    const auto bank = random_bank(cfg, 3, rng);
    dfa::ContextProjection proj{Tensor::zeros({4, 5}), 1.0};
    const Tensor f = nc::uniform({3, 6, 6}, -1, 1, rng);
    const Tensor mask = nc::uniform({6, 6}, 0, 1, rng);
    Tape t;
    const auto out = dfa::dfa_descriptor(t.constant(f), mask, t.constant(nc::uniform({5}, -1, 1, rng)), bank, proj, cfg);
    ASSERT_EQ(out.descriptor.value().shape(), (nc::Shape{12}));
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_DOUBLE_EQ(out.weights.value()[k], 0.25);
        const auto pooled = masked_mean(extract_oracle(f, bank, cfg, k), mask);
        for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(out.descriptor.value()[k * 3 + d], 0.25 * pooled[d], 1e-12);
    }
}

TEST(DfaDescriptor, PermutingDirectionsPermutesBlocks) {
    const auto cfg = small_config();
    Rng rng(9);
    const auto bank = random_bank(cfg, 3, rng);
    const auto proj = dfa::ContextProjection::init(cfg, 5, rng);
    const Tensor f = nc::uniform({3, 6, 6}, -1, 1, rng);
    const Tensor mask = nc::uniform({6, 6}, 0, 1, rng);
    const Tensor g = nc::uniform({5}, -1, 1, rng);
    const std::vector<std::size_t> perm{2, 0, 3, 1};

    dfa::DfaConfig pcfg = cfg;
    dfa::DirectionBank pbank;
    dfa::ContextProjection pproj{Tensor({4, 5}), 1.0};
    for (std::size_t k = 0; k < 4; ++k) {
        pcfg.angles_deg[k] = cfg.angles_deg[perm[k]];
        pbank.taps.push_back(bank.taps[perm[k]]);
        pbank.proj_weight.push_back(bank.proj_weight[perm[k]]);
        pbank.proj_bias.push_back(bank.proj_bias[perm[k]]);
        for (std::size_t j = 0; j < 5; ++j) pproj.u[k * 5 + j] = proj.u[perm[k] * 5 + j];
    }
    Tape t;
    const Tensor a = dfa::dfa_descriptor(t.constant(f), mask, t.constant(g), bank, proj, cfg).descriptor.value();
    const Tensor b = dfa::dfa_descriptor(t.constant(f), mask, t.constant(g), pbank, pproj, pcfg).descriptor.value();
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(b[k * 3 + d], a[perm[k] * 3 + d], 1e-10);
}

TEST(DfaDescriptor, ChangingOneDirectionOnlyMovesItsBlock) {
    const auto cfg = small_config();
    Rng rng(10);
    auto bank = random_bank(cfg, 3, rng);
    const dfa::ContextProjection proj{Tensor::zeros({4, 5}), 1.0};
    const Tensor f = nc::uniform({3, 6, 6}, -1, 1, rng);
    const Tensor mask = nc::uniform({6, 6}, 0, 1, rng);
    const Tensor g = nc::uniform({5}, -1, 1, rng);
    Tape t;
    const Tensor before = dfa::dfa_descriptor(t.constant(f), mask, t.constant(g), bank, proj, cfg).descriptor.value();
    bank.taps[2][1] = nc::uniform({3}, -1, 1, rng);
    const Tensor after = dfa::dfa_descriptor(t.constant(f), mask, t.constant(g), bank, proj, cfg).descriptor.value();
    bool moved = false;
    for (std::size_t i = 0; i < 12; ++i) {
        if (i / 3 == 2) moved = moved || before[i] != after[i];
        else EXPECT_EQ(before[i], after[i]);
    }
    EXPECT_TRUE(moved);
}

TEST(DfaDescriptor, EmptyMaskIsReportedAndFinite) {
    const auto cfg = small_config();
    Rng rng(11);
    const auto bank = random_bank(cfg, 3, rng);
    const auto proj = dfa::ContextProjection::init(cfg, 5, rng);
    Tape t;
    const auto out = dfa::dfa_descriptor(t.constant(nc::uniform({3, 4, 4}, -1, 1, rng)), Tensor::zeros({4, 4}),
                                         t.constant(nc::uniform({5}, -1, 1, rng)), bank, proj, cfg);
    EXPECT_TRUE(out.mask_empty);
    EXPECT_TRUE(out.descriptor.value().all_finite());
}

TEST(DfaDescriptor, GradientsMatchFiniteDifferences) {
    const auto cfg = small_config(2);
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        auto bank = random_bank(cfg, 3, rng);
        auto proj = dfa::ContextProjection::init(cfg, 4, rng);
        Tensor f = nc::uniform({3, 4, 4}, -1, 1, rng);
        Tensor g = nc::uniform({4}, -1, 1, rng);
        const Tensor mask = nc::uniform({4, 4}, 0, 1, rng);
        std::vector<Tensor*> targets{&f, &g, &proj.u};
        for (std::size_t k = 0; k < 4; ++k) {
            targets.push_back(&bank.taps[k][0]);
            targets.push_back(&bank.proj_weight[k]);
        }
        auto build = [&](Tape& t) { return dfa::dfa_descriptor(t.param(f), mask, t.param(g), bank, proj, cfg).descriptor; };
        const auto r = testing_support::gradcheck(targets, build, rng, 24);
        EXPECT_LT(r.max_rel_error, testing_support::kFdTolerance) << r.worst;
    }
}

TEST(ContextWeights, SoftmaxOfProjection) {
    Rng rng(13);
    const dfa::ContextProjection proj{nc::uniform({4, 3}, -1, 1, rng), 0.5};
    const Tensor g = nc::uniform({3}, -1, 1, rng);
    Tape t;
    const Tensor w = dfa::context_weights(t.constant(g), proj).value();
    std::vector<double> logits(4);
    double z = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t j = 0; j < 3; ++j) logits[k] += proj.u[k * 3 + j] * g[j];
        z += std::exp(logits[k] / 0.5);
    }
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(w[k], std::exp(logits[k] / 0.5) / z, 1e-12);
    EXPECT_THROW(dfa::context_weights(t.constant(Tensor::zeros({4})), proj), stableidm::ShapeError);
}

TEST(DfaConfig, Validation) {
    dfa::DfaConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.descriptor_dim(), 128u);
    cfg.angles_deg = {};
    EXPECT_THROW(cfg.validate(), stableidm::ConfigError);
    cfg = {};
    cfg.angles_deg = {0.0, 180.0};
    EXPECT_THROW(cfg.validate(), stableidm::ConfigError);
    cfg = {};
    cfg.angles_deg = {45.0, 45.0};
    EXPECT_THROW(cfg.validate(), stableidm::ConfigError);
    cfg = {};
    cfg.taps = 4;
    EXPECT_THROW(cfg.validate(), stableidm::ConfigError);
    cfg = {};
    cfg.temperature = 0.0;
    EXPECT_THROW(cfg.validate(), stableidm::ConfigError);
}

TEST(TapCoords, AxisAlignedTapsLandOnCells) {
    const Tensor g = dfa::tap_coords(3, 4, 90.0, 2.0);
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            EXPECT_EQ(g[y * 4 + x], static_cast<double>(x));
            EXPECT_EQ(g[12 + y * 4 + x], static_cast<double>(y) + 2.0);
        }
}
