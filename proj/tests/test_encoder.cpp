#include <gtest/gtest.h>

#include <filesystem>

#include "stableidm/encoder/encoder.hpp"
#include "stableidm/encoder/fmap.hpp"
#include "support/gradcheck.hpp"

namespace en = stableidm::encoder;
namespace fm = stableidm::fmap;
namespace nc = stableidm::numcore;
using nc::Rng;
using nc::Tape;
using nc::Tensor;

namespace {

en::EncoderParams random_params(const en::EncoderConfig& cfg, Rng& rng) {
    auto p = en::EncoderParams::init(cfg, rng);
    for (auto& b : p.bias) b = nc::uniform(b.shape(), -0.5, 0.5, rng);
    p.context_token = nc::uniform(p.context_token.shape(), -0.5, 0.5, rng);
    return p;
}

std::filesystem::path scratch(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("stableidm_test_encoder_" + name);
}

}  // namespace

TEST(Encode, DeskConfigGivesEightByEightGrid) {
    en::EncoderConfig cfg;
    Rng rng(1);
    const auto p = en::EncoderParams::init(cfg, rng);
    Tape t;
    const auto e = en::encode(t.constant(nc::uniform({3, 64, 64}, 0, 1, rng)), p, cfg);
    EXPECT_EQ(e.grid.value().shape(), (nc::Shape{32, 8, 8}));
    EXPECT_EQ(e.context.value().shape(), (nc::Shape{32}));
}

TEST(Encode, ZeroFrameGivesSpatiallyConstantBiasResponse) {
    en::EncoderConfig cfg;
    Rng rng(2);
    const auto p = random_params(cfg, rng);
    Tape t;
    const Tensor g = en::encode(t.constant(Tensor::zeros({3, 64, 64})), p, cfg).grid.value();
    // Bias response: propagate the per-channel constants through each stage.
    std::vector<double> v(3, 0.0);
    const auto strides = cfg.strides();
    for (std::size_t s = 0; s < 3; ++s) {
        const Tensor& w = p.weight[s];
        std::vector<double> next(w.dim(0));
        for (std::size_t o = 0; o < w.dim(0); ++o) {
            double acc = p.bias[s][o];
            for (std::size_t c = 0; c < w.dim(1); ++c)
                for (std::size_t k = 0; k < strides[s] * strides[s]; ++k) acc += w[(o * w.dim(1) + c) * strides[s] * strides[s] + k] * v[c];
            next[o] = (s < 2 && acc < 0.0) ? cfg.slope * acc : acc;
        }
        v = next;
    }
    for (std::size_t c = 0; c < 32; ++c)
        for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(g[c * 64 + i], v[c], 1e-12);
}

TEST(Encode, PatchChangeOnlyAffectsItsCell) {
    en::EncoderConfig cfg;
    Rng rng(3);
    const auto p = random_params(cfg, rng);
    const Tensor a = nc::uniform({3, 64, 64}, 0, 1, rng);
    for (auto [py, px] : std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {3, 5}, {7, 7}}) {
        Tensor b = a;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 8 * py; y < 8 * py + 8; ++y)
                for (std::size_t x = 8 * px; x < 8 * px + 8; ++x) b.at(c, y, x) = 1.0 - b.at(c, y, x);
        Tape t;
        const Tensor ga = en::encode(t.constant(a), p, cfg).grid.value();
        const Tensor gb = en::encode(t.constant(b), p, cfg).grid.value();
        bool changed = false;
        for (std::size_t c = 0; c < 32; ++c)
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) {
                    const std::size_t i = (c * 8 + y) * 8 + x;
                    if (y == py && x == px) changed = changed || ga[i] != gb[i];
                    else EXPECT_EQ(ga[i], gb[i]) << "cell " << y << "," << x;
                }
        EXPECT_TRUE(changed);
    }
}

TEST(Encode, DeterministicAcrossCalls) {
    en::EncoderConfig cfg;
    Rng rng(4);
    const auto p = random_params(cfg, rng);
    const Tensor f = nc::uniform({3, 64, 64}, 0, 1, rng);
    Tape t1, t2;
    const auto a = en::encode(t1.constant(f), p, cfg), b = en::encode(t2.constant(f), p, cfg);
    EXPECT_TRUE(a.grid.value().bit_equal(b.grid.value()));
    EXPECT_TRUE(a.context.value().bit_equal(b.context.value()));
}

TEST(Encode, ResolutionMismatchIsShapeError) {
    en::EncoderConfig cfg;
    Rng rng(5);
    const auto p = en::EncoderParams::init(cfg, rng);
    Tape t;
    EXPECT_THROW(en::encode(t.constant(Tensor::zeros({3, 32, 32})), p, cfg), stableidm::ShapeError);
    EXPECT_THROW(en::encode(t.constant(Tensor::zeros({1, 64, 64})), p, cfg), stableidm::ShapeError);
}

TEST(EncoderConfig, Validation) {
    en::EncoderConfig cfg;
    cfg.resolution = 60;
    EXPECT_THROW(cfg.validate(), stableidm::ConfigError);
    cfg = {};
    cfg.patch = 6;
    EXPECT_THROW(cfg.validate(), stableidm::ConfigError);
    cfg = {};
    cfg.channels = 0;
    EXPECT_THROW(cfg.validate(), stableidm::ConfigError);
}

TEST(Encode, GradientsMatchFiniteDifferences) {
    en::EncoderConfig cfg;
    cfg.resolution = 16;
    cfg.patch = 8;
    cfg.channels = 6;
    cfg.context_dim = 5;
    cfg.stage_channels = {4, 5};
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = random_params(cfg, rng);
        Tensor frame = nc::uniform({3, 16, 16}, 0, 1, rng);
        std::vector<Tensor*> targets{&frame, &p.context_weight, &p.context_token};
        for (std::size_t i = 0; i < 3; ++i) {
            targets.push_back(&p.weight[i]);
            targets.push_back(&p.bias[i]);
        }
        auto build = [&](Tape& t) {
            const auto e = en::encode(t.param(frame), p, cfg);
            return nc::concat({nc::reshape(e.grid, {e.grid.value().size()}), e.context});
        };
        const auto r = testing_support::gradcheck(targets, build, rng, 12);
        EXPECT_LT(r.max_rel_error, testing_support::kFdTolerance) << r.worst;
    }
}

TEST(Fmap, RoundTripsAreBitExact) {
    Rng rng(7);
    Tensor f64 = nc::uniform({3, 4, 5}, -1e3, 1e3, rng);
    Tensor f32 = f64;
    for (auto& v : f32.data()) v = static_cast<double>(static_cast<float>(v));
    Tensor u8({2, 7});
    for (std::size_t i = 0; i < u8.size(); ++i) u8[i] = static_cast<double>((i * 37) % 256);
    const auto dir = scratch("roundtrip");
    std::filesystem::create_directories(dir);
    for (auto [t, d] : std::vector<std::pair<Tensor*, fm::DType>>{{&f64, fm::DType::f64}, {&f32, fm::DType::f32}, {&u8, fm::DType::u8}}) {
        fm::save_fmap(*t, dir / "x.fmap", d);
        const auto back = fm::load_fmap_with_dtype(dir / "x.fmap");
        EXPECT_TRUE(back.tensor.bit_equal(*t));
        EXPECT_EQ(back.dtype, d);
    }
    std::filesystem::remove_all(dir);
}

TEST(Fmap, HeaderLayout) {
    const auto bytes = fm::encode(Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}), fm::DType::f32);
    EXPECT_EQ(bytes.size(), 4u + 4u + 1u + 4u + 8u + 24u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FMAP");
    EXPECT_EQ(bytes[4], 1);  // version, little-endian
    EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
    EXPECT_EQ(bytes[8], 0);   // f32
    EXPECT_EQ(bytes[9], 2);   // ndim
    EXPECT_EQ(bytes[13], 2);  // extents
    EXPECT_EQ(bytes[17], 3);
    // 1.0f = 0x3f800000, little-endian.
    EXPECT_EQ(bytes[21], 0x00);
    EXPECT_EQ(bytes[24], 0x3f);
}

TEST(Fmap, MalformedInputsRaiseDistinctErrors) {
    const auto good = fm::encode(Tensor({2, 3}, 1.5), fm::DType::f32);

    auto magic = good;
    magic[0] = 'X';
    try {
        fm::decode(magic);
        FAIL() << "expected BadMagicError";
    } catch (const fm::BadMagicError& e) {
        EXPECT_NE(std::string(e.what()).find("XMAP"), std::string::npos);
    }

    auto version = good;
    version[4] = 2;
    EXPECT_THROW(fm::decode(version), fm::VersionError);

    auto dtype = good;
    dtype[8] = 9;
    EXPECT_THROW(fm::decode(dtype), fm::DTypeError);

    auto truncated = good;
    truncated.resize(truncated.size() - 1);
    EXPECT_THROW(fm::decode(truncated), fm::TruncatedError);
    EXPECT_THROW(fm::decode(std::vector<std::uint8_t>{'F', 'M'}), fm::TruncatedError);

    auto trailing = good;
    trailing.push_back(0);
    EXPECT_THROW(fm::decode(trailing), stableidm::FormatError);

    EXPECT_THROW(fm::encode(Tensor({1}, 2.5), fm::DType::u8), stableidm::ParameterError);
    EXPECT_THROW(fm::load_fmap(scratch("missing") / "nope.fmap"), stableidm::IoError);
}
