#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "stableidm/pipeline/serialize.hpp"
#include "stableidm/pipeline/train.hpp"
#include "stableidm/synth/dataset.hpp"
#include "support/gradcheck.hpp"

namespace pl = stableidm::pipeline;
namespace sy = stableidm::synth;
namespace nc = stableidm::numcore;
using nc::Rng;
using nc::Tape;
using nc::Tensor;
using nc::Var;

namespace {

pl::PipelineConfig small_config() {
    pl::PipelineConfig c;
    c.window = 4;
    c.encoder.resolution = 32;
    c.encoder.patch = 8;
    c.encoder.channels = 8;
    c.encoder.context_dim = 6;
    c.encoder.stage_channels = {4, 6};
    c.dfa.dir_channels = 4;
    c.fusion.hidden = 4;
    c.regressor.tcn_channels = 8;
    c.regressor.hidden = 8;
    c.regressor.dilations = {1, 2};
    c.epochs = 2;
    c.learning_rate = 3e-3;
    c.seed = 5;
    c.sync();
    return c;
}

const std::vector<sy::EpisodeRecord>& episodes() {
    static const std::vector<sy::EpisodeRecord> eps = [] {
        sy::DatasetConfig dc;
        dc.world.resolution = 32;
        dc.episode_length = 10;
        return sy::generate_dataset(dc, 4, 11).episodes;
    }();
    return eps;
}

pl::Model trained_model(pl::PipelineConfig cfg, const std::vector<sy::EpisodeRecord>& eps = episodes()) {
    pl::Model m = pl::Model::init(cfg, eps.front().actions.front().size());
    pl::train(m, eps);
    return m;
}

std::vector<Tensor> snapshot(pl::Model& m) {
    const nc::ParamRegistry reg = m.registry();
    std::vector<Tensor> out;
    for (const auto& [name, t] : reg.entries()) out.push_back(*t);
    return out;
}

std::vector<pl::FrameInput> window_of(const pl::Model& m, const sy::EpisodeRecord& ep, std::size_t t,
                                      const pl::AblationFlags& flags) {
    return pl::episode_window(m, ep.frames, ep.masks, t, flags);
}

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("stableidm_test_pipeline_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST(NormStats, FitExample) {
    const auto s = pl::NormStats::fit({{1.0, 2.0, 5.0}, {3.0, 6.0, 5.0}});
    EXPECT_EQ(s.mu, (std::vector<double>{2.0, 4.0, 5.0}));
    EXPECT_EQ(s.sigma, (std::vector<double>{1.0, 2.0, pl::kSigmaFloor}));
    EXPECT_EQ(s.normalize({3.0, 2.0, 5.0}), (std::vector<double>{1.0, -1.0, 0.0}));
}

TEST(NormStats, RoundTripAndErrors) {
    Rng rng(1);
    std::vector<std::vector<double>> acts;
    for (int i = 0; i < 50; ++i) acts.push_back(nc::uniform({4}, -3, 3, rng).values());
    const auto s = pl::NormStats::fit(acts);
    for (const auto& a : acts) {
        const auto back = s.denormalize(s.normalize(a));
        for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(back[d], a[d], 1e-12);
    }
    EXPECT_THROW(pl::NormStats::fit({}), stableidm::ParameterError);
    EXPECT_THROW(pl::NormStats::fit({{1.0}}), stableidm::ParameterError);
    EXPECT_THROW(pl::NormStats::fit({{1.0}, {1.0, 2.0}}), stableidm::ShapeError);
    EXPECT_THROW(s.normalize({1.0}), stableidm::ShapeError);
}

TEST(Config, KeyValueRoundTripAndVariants) {
    auto c = small_config();
    c.flags.disable_tdr = true;
    c.fusion.cascade = true;
    const auto back = pl::PipelineConfig::from(c.to_kv());
    EXPECT_EQ(back.to_kv().values(), c.to_kv().values());
    EXPECT_EQ(back.flags, c.flags);
    EXPECT_THROW(pl::AblationFlags::from_variant("no_everything"), stableidm::ConfigError);
    EXPECT_TRUE(pl::AblationFlags::from_variant("no_refine").effective().disable_mask);
    auto kv = c.to_kv();
    kv.set("loss", "l2");
    EXPECT_THROW(pl::PipelineConfig::from(kv), stableidm::ConfigError);
}

TEST(Forward, NoTdrUsesOnlyTheNewestFrame) {
    auto cfg = small_config();
    cfg.flags = pl::AblationFlags::from_variant("no_tdr");
    pl::Model m = pl::Model::init(cfg, 8);
    const auto& ep = episodes()[0];
    std::vector<pl::FrameInput> window;
    for (std::size_t s = 2; s <= 5; ++s) window.push_back(pl::prepare_frame(ep.frames[s], ep.masks[s], cfg, cfg.flags));
    Tape t1, t2;
    const Tensor full = pl::forward_window(t1, m, window, cfg.flags).value();
    const Tensor last = pl::forward_window(t2, m, {window.back()}, cfg.flags).value();
    EXPECT_TRUE(full.bit_equal(last));

    Tape t3;
    const auto e = stableidm::encoder::encode(t3.constant(window.back().pixels), m.enc, cfg.encoder);
    const Var z = pl::frame_descriptor(e.grid, window.back().cell_mask, e.context, m, cfg.flags.effective());
    EXPECT_TRUE(stableidm::tdr::base_head(z, m.head, cfg.regressor).value().bit_equal(full));
}

TEST(Forward, DisabledMaskIgnoresMasks) {
    auto cfg = small_config();
    cfg.flags = pl::AblationFlags::from_variant("no_mask");
    const pl::Model m = pl::Model::init(cfg, 8);
    const auto& ep = episodes()[1];
    std::vector<stableidm::MaskGrid> empty(ep.length(), stableidm::MaskGrid(32, 32, 0));
    const auto a = pl::infer_episode(m, ep.frames, ep.masks, cfg.flags);
    const auto b = pl::infer_episode(m, ep.frames, empty, cfg.flags);
    EXPECT_EQ(a, b);
}

TEST(Forward, MaskMattersWhenEnabled) {
    const auto cfg = small_config();
    const pl::Model m = pl::Model::init(cfg, 8);
    const auto& ep = episodes()[1];
    std::vector<stableidm::MaskGrid> full(ep.length(), stableidm::MaskGrid(32, 32, 1));
    EXPECT_NE(pl::infer_episode(m, ep.frames, ep.masks, cfg.flags), pl::infer_episode(m, ep.frames, full, cfg.flags));
}

TEST(Forward, NoRefineEqualsAllThreeSubstitutions) {
    auto cfg = small_config();
    const pl::Model m = pl::Model::init(cfg, 8);
    pl::AblationFlags all;
    all.disable_dfa = all.disable_tdr = all.disable_mask = true;
    const auto& ep = episodes()[2];
    EXPECT_EQ(pl::infer_episode(m, ep, pl::AblationFlags::from_variant("no_refine")), pl::infer_episode(m, ep, all));
}

TEST(Forward, InferenceIsStateless) {
    const pl::Model m = pl::Model::init(small_config(), 8);
    const auto& eps = episodes();
    const auto first = pl::infer_episode(m, eps[0], {});
    pl::infer_episode(m, eps[3], {});
    EXPECT_EQ(pl::infer_episode(m, eps[0], {}), first);
    const std::vector<stableidm::Image> frames(eps[0].frames.begin(), eps[0].frames.begin() + 4);
    const std::vector<stableidm::MaskGrid> masks(eps[0].masks.begin(), eps[0].masks.begin() + 4);
    const auto a = pl::infer(m, frames, masks, {});
    pl::infer(m, std::vector<stableidm::Image>(eps[1].frames.begin(), eps[1].frames.begin() + 4),
              std::vector<stableidm::MaskGrid>(eps[1].masks.begin(), eps[1].masks.begin() + 4), {});
    EXPECT_EQ(pl::infer(m, frames, masks, {}), a);
}

TEST(Forward, SharedSpanMatchesSeparateWindows) {
    for (bool cascade : {false, true}) {
        for (const char* variant : {"full", "no_dfa", "no_tdr", "no_refine"}) {
            auto cfg = small_config();
            cfg.fusion.cascade = cascade;
            const auto flags = pl::AblationFlags::from_variant(variant);
            const pl::Model m = pl::Model::init(cfg, 8);
            const auto& ep = episodes()[0];
            const auto batch = pl::infer_episode(m, ep, flags);
            ASSERT_EQ(batch.size(), ep.length());
            for (std::size_t t = 0; t < ep.length(); ++t) {
                Tape tape;
                const Var y = pl::forward_window(tape, m, window_of(m, ep, t, flags), flags);
                EXPECT_EQ(batch[t], m.norm.denormalize(y.value().values())) << variant << " t=" << t;
            }
            Tape tape;
            const auto span = pl::forward_span(tape, m, pl::episode_span(m, ep.frames, ep.masks, 5, 8, flags), 5, 8, flags);
            ASSERT_EQ(span.size(), 4u);
            for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m.norm.denormalize(span[i].value().values()), batch[5 + i]);
        }
    }
}

TEST(Forward, ShortWindowsArePaddedWithZeroDescriptors) {
    const auto cfg = small_config();
    const pl::Model m = pl::Model::init(cfg, 8);
    const auto& ep = episodes()[0];
    const auto window = window_of(m, ep, 1, {});
    ASSERT_EQ(window.size(), 2u);
    Tape t1;
    const Tensor got = pl::forward_window(t1, m, window, {}).value();

    Tape t2;
    std::vector<Var> grids, ctx;
    for (const auto& in : window) {
        const auto e = stableidm::encoder::encode(t2.constant(in.pixels), m.enc, cfg.encoder);
        grids.push_back(e.grid);
        ctx.push_back(e.context);
    }
    const Var fused = stableidm::tdr::temporal_fuse(grids[0], grids[1], m.fusion, cfg.fusion);
    const Var z0 = pl::frame_descriptor(grids[0], window[0].cell_mask, ctx[0], m, {});
    const Var z1 = pl::frame_descriptor(fused, window[1].cell_mask, ctx[1], m, {});
    const Var zero = t2.constant(Tensor::zeros({cfg.dfa.descriptor_dim()}));
    EXPECT_TRUE(stableidm::tdr::temporal_regress({zero, zero, z0, z1}, m.head, cfg.regressor).value().bit_equal(got));
    EXPECT_THROW(pl::forward_window(t1, m, {}, {}), stableidm::ParameterError);
    EXPECT_THROW(pl::forward_window(t1, m, std::vector<pl::FrameInput>(5, window[0]), {}), stableidm::ParameterError);
}

TEST(Forward, GradientsReachEveryModule) {
    auto cfg = small_config();
    cfg.encoder.resolution = 16;
    cfg.window = 3;
    pl::Model m = pl::Model::init(cfg, 3);
    Rng rng(2);
    m.head.rho = Tensor::scalar(0.4);
    m.fusion.b2 = nc::uniform({3}, -0.5, 0.5, rng);
    std::vector<pl::FrameInput> window;
    for (int i = 0; i < 3; ++i) window.push_back({nc::uniform({3, 16, 16}, 0, 1, rng), nc::uniform({2, 2}, 0.2, 1, rng)});
    std::vector<Tensor*> targets{&m.enc.weight[0], &m.enc.context_token, &m.bank.taps[1][2], &m.bank.proj_weight[3],
                                 &m.ctx.u,         &m.fusion.w1,         &m.fusion.rho,      &m.head.h_w1,
                                 &m.head.layers[1].taps[1], &m.head.rho};
    auto build = [&](Tape& t) { return pl::forward_window(t, m, window, {}); };
    const auto r = testing_support::gradcheck(targets, build, rng, 40);
    EXPECT_LT(r.max_rel_error, testing_support::kFdTolerance) << r.worst;
    EXPECT_GT(r.coords_checked, 0u);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
    auto cfg = small_config();
    cfg.learning_rate = 0.0;
    pl::Model m = pl::Model::init(cfg, 8);
    const auto before = snapshot(m);
    const auto res = pl::train(m, episodes());
    EXPECT_EQ(res.loss_curve.size(), 2u);
    const auto after = snapshot(m);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(after[i].bit_equal(before[i])) << i;
}

TEST(Train, SameSeedGivesIdenticalCurvesAndParameters) {
    const auto cfg = small_config();
    pl::Model a = pl::Model::init(cfg, 8), b = pl::Model::init(cfg, 8);
    const auto ra = pl::train(a, episodes());
    const auto rb = pl::train(b, episodes());
    EXPECT_EQ(ra.loss_curve, rb.loss_curve);
    const auto pa = snapshot(a), pb = snapshot(b);
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].bit_equal(pb[i]));

    auto other = cfg;
    other.seed = 6;
    pl::Model c = pl::Model::init(other, 8);
    EXPECT_NE(pl::train(c, episodes()).loss_curve, ra.loss_curve);
}

TEST(Train, ScaledActionsGiveScaledPredictions) {
    const auto cfg = small_config();
    auto scaled = episodes();
    for (auto& ep : scaled)
        for (auto& a : ep.actions)
            for (auto& v : a) v = 2.0 * v + 0.75;
    const pl::Model a = trained_model(cfg), b = trained_model(cfg, scaled);
    const auto pa = pl::infer_episode(a, episodes()[3], {});
    const auto pb = pl::infer_episode(b, episodes()[3], {});
    for (std::size_t t = 0; t < pa.size(); ++t)
        for (std::size_t d = 0; d < pa[t].size(); ++d) EXPECT_NEAR(pb[t][d], 2.0 * pa[t][d] + 0.75, 1e-9);
}

TEST(Train, ToySetHalvesTheLoss) {
    auto cfg = small_config();
    cfg.epochs = 30;
    cfg.windows_per_episode = 20;
    pl::Model m = pl::Model::init(cfg, 8);
    const auto res = pl::train(m, episodes());
    ASSERT_EQ(res.loss_curve.size(), 30u);
    EXPECT_LT(res.loss_curve.back(), 0.5 * res.loss_curve.front());
}

TEST(Train, EmptySplitIsDataError) {
    pl::Model m = pl::Model::init(small_config(), 8);
    EXPECT_THROW(pl::train(m, {}), stableidm::DataError);
}

TEST(Serialize, RoundTripIsBitExact) {
    pl::Model m = trained_model(small_config());
    const auto dir = scratch("roundtrip");
    pl::save_model(m, dir);
    pl::Model back = pl::load_model(dir);
    EXPECT_EQ(back.norm, m.norm);
    EXPECT_EQ(back.cfg.to_kv().values(), m.cfg.to_kv().values());
    const auto pa = snapshot(m), pb = snapshot(back);
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].bit_equal(pb[i]));
    EXPECT_EQ(pl::infer_episode(back, episodes()[1], {}), pl::infer_episode(m, episodes()[1], {}));
    std::filesystem::remove_all(dir);
}

TEST(Serialize, MissingOrMismatchedTensorsAreFormatErrors) {
    const pl::Model m = pl::Model::init(small_config(), 8);
    const auto dir = scratch("broken");
    pl::save_model(m, dir);
    std::filesystem::remove(dir / "head.rho.fmap");
    EXPECT_THROW(pl::load_model(dir), stableidm::FormatError);

    pl::save_model(m, dir);
    stableidm::fmap::save_fmap(Tensor::zeros({3}), dir / "head.rho.fmap", stableidm::fmap::DType::f64);
    EXPECT_THROW(pl::load_model(dir), stableidm::FormatError);

    pl::save_model(m, dir);
    auto other = small_config();
    other.regressor.hidden = 9;
    pl::save_model(pl::Model::init(other, 8), dir / "other");
    std::filesystem::copy_file(dir / "other" / "head.base.w1.fmap", dir / "head.base.w1.fmap",
                               std::filesystem::copy_options::overwrite_existing);
    EXPECT_THROW(pl::load_model(dir), stableidm::FormatError);

    pl::save_model(m, dir);
    {
        std::ifstream in(dir / "manifest.json");
        std::string text((std::istreambuf_iterator<char>(in)), {});
        text.replace(text.find("\"version\": 1"), 12, "\"version\": 7");
        std::ofstream(dir / "manifest.json") << text;
    }
    EXPECT_THROW(pl::load_model(dir), stableidm::fmap::VersionError);
    EXPECT_THROW(pl::load_model(dir / "nowhere"), stableidm::IoError);
    std::filesystem::remove_all(dir);
}
