// Acceptance run: prints one PASS/FAIL line per criterion.
//
//   1 gradient suite          5 synthetic ablation trend
//   2 identity suite          6 mask-quality robustness
//   3 causality/statelessness 7 serialization
//   4 metric oracles          8 CLI determinism

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stableidm/stableidm.hpp"
#include "support/gradcheck.hpp"

namespace {

using namespace stableidm;
namespace nc = stableidm::numcore;
namespace fs = std::filesystem;
using nc::Rng;
using nc::Tape;
using nc::Tensor;
using nc::Var;

struct Outcome {
    bool pass = true;
    std::string detail;
};

/// Collects failed checks with a short reason each.
class Checker {
public:
    void expect(bool ok, const std::string& what) {
        ++total_;
        if (!ok) {
            ++failed_;
            if (failures_.size() < 6) failures_.push_back(what);
        }
    }

    Outcome outcome(const std::string& summary) const {
        Outcome o{failed_ == 0, summary + ", " + std::to_string(total_ - failed_) + "/" + std::to_string(total_) + " checks"};
        for (const auto& f : failures_) o.detail += "\n      failed: " + f;
        return o;
    }

private:
    std::size_t total_ = 0, failed_ = 0;
    std::vector<std::string> failures_;
};

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

struct Settings {
    fs::path workdir;
    fs::path cli;
    std::size_t trend_epochs = 16;
    std::size_t trend_windows = 8;
    std::size_t trend_seeds = 3;
    std::uint64_t data_seed = 2024;
};

// Model trained in criterion 5 and reused by criterion 6.
std::unique_ptr<pipeline::Model> g_full_model;
std::vector<synth::EpisodeRecord> g_train, g_eval;

pipeline::PipelineConfig probe_config() {
    pipeline::PipelineConfig c;
    c.window = 3;
    c.encoder.resolution = 16;
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
    c.seed = 5;
    return c;
}

pipeline::PipelineConfig small_config() {
    auto c = probe_config();
    c.window = 4;
    c.encoder.resolution = 32;
    return c;
}

const std::vector<synth::EpisodeRecord>& small_episodes() {
    static const std::vector<synth::EpisodeRecord> eps = [] {
        synth::DatasetConfig dc;
        dc.world.resolution = 32;
        dc.episode_length = 12;
        return synth::generate_dataset(dc, 4, 11).episodes;
    }();
    return eps;
}

double coord_away_from_grid(std::uniform_real_distribution<double>& u, Rng& rng) {
    for (;;) {
        const double v = u(rng);
        const double frac = v - std::floor(v);
        if (frac > 1e-3 && frac < 1.0 - 1e-3) return v;
    }
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
    using testing_support::gradcheck;
    constexpr int kInstances = 20;
    const double tol = testing_support::kFdTolerance;
    Checker c;
    double worst = 0.0;
    std::size_t coords = 0;
    auto record = [&](const std::string& op, int i, const testing_support::GradCheckReport& r) {
        worst = std::max(worst, r.max_rel_error);
        coords += r.coords_checked;
        c.expect(r.max_rel_error < tol && r.coords_checked > 0,
                 op + " instance " + std::to_string(i) + " rel " + fixed(r.max_rel_error, 8) + " at " + r.worst);
    };
    Rng rng(101);

    for (int i = 0; i < kInstances; ++i) {
        Tensor x = nc::uniform({3, 6, 5}, -1, 1, rng);
        Tensor w = nc::uniform({4, 3, 3, 3}, -1, 1, rng);
        Tensor b = nc::uniform({4}, -1, 1, rng);
        const std::size_t stride = 1 + static_cast<std::size_t>(i % 2), pad = static_cast<std::size_t>(i % 3 == 0);
        record("conv2d", i, gradcheck({&x, &w, &b}, [&](Tape& t) { return nc::conv2d(t.param(x), t.param(w), t.param(b), stride, pad); }, rng));
    }
    for (int i = 0; i < kInstances; ++i) {
        Tensor l = nc::uniform({6}, -2, 2, rng);
        const double tau = 0.3 + 0.1 * i;
        record("softmax", i, gradcheck({&l}, [&](Tape& t) { return nc::softmax(t.param(l), tau); }, rng));
    }
    for (int i = 0; i < kInstances; ++i) {
        Tensor m = nc::uniform({2, 5, 6}, -1, 1, rng);
        Tensor g({2, 5, 6});
        std::uniform_real_distribution<double> ux(0.0, 5.0), uy(0.0, 4.0);
        for (std::size_t k = 0; k < 30; ++k) {
            g[k] = coord_away_from_grid(ux, rng);
            g[30 + k] = coord_away_from_grid(uy, rng);
        }
        record("bilinear_sample", i, gradcheck({&m, &g}, [&](Tape& t) { return nc::bilinear_sample(t.param(m), t.param(g)); }, rng));
    }
    dfa::DfaConfig dcfg;
    dcfg.dir_channels = 2;
    dcfg.angles_deg = {0.0, 30.0, 90.0, 135.0};
    for (int i = 0; i < kInstances; ++i) {
        auto bank = dfa::DirectionBank::init(dcfg, 3, rng);
        for (auto& bias : bank.proj_bias) bias = nc::uniform(bias.shape(), -0.3, 0.3, rng);
        Tensor f = nc::uniform({3, 5, 5}, -1, 1, rng);
        std::vector<Tensor*> targets{&f};
        for (std::size_t k = 0; k < 4; ++k) {
            for (auto& tap : bank.taps[k]) targets.push_back(&tap);
            targets.push_back(&bank.proj_weight[k]);
            targets.push_back(&bank.proj_bias[k]);
        }
        record("directional_extract", i, gradcheck(targets, [&](Tape& t) {
                   std::vector<Var> flat;
                   for (const auto& m : dfa::directional_extract(t.param(f), bank, dcfg)) flat.push_back(nc::reshape(m, {m.value().size()}));
                   return nc::concat(flat);
               }, rng));
    }
    for (int i = 0; i < kInstances; ++i) {
        Tensor map = nc::uniform({3, 4, 5}, -1, 1, rng);
        const Tensor mask = nc::uniform({4, 5}, 0, 1, rng);
        record("masked_pool", i, gradcheck({&map}, [&](Tape& t) { return dfa::masked_pool(t.param(map), mask).vector; }, rng));
    }
    tdr::FusionConfig fcfg;
    fcfg.hidden = 3;
    for (int i = 0; i < kInstances; ++i) {
        auto p = tdr::FusionParams::init(fcfg, 2, rng);
        p.b1 = nc::uniform(p.b1.shape(), -0.2, 0.2, rng);
        p.b2 = nc::uniform(p.b2.shape(), -0.2, 0.2, rng);
        p.rho = Tensor::scalar(0.3);
        Tensor prev = nc::uniform({2, 4, 4}, -1, 1, rng);
        Tensor cur = nc::uniform({2, 4, 4}, -1, 1, rng);
        record("temporal_fuse", i, gradcheck({&prev, &cur, &p.w1, &p.b1, &p.w2, &p.b2, &p.rho},
                                             [&](Tape& t) { return tdr::temporal_fuse(t.param(prev), t.param(cur), p, fcfg); }, rng));
    }
    tdr::RegressorConfig rcfg;
    rcfg.descriptor_dim = 6;
    rcfg.action_dim = 3;
    rcfg.hidden = 5;
    rcfg.tcn_channels = 4;
    rcfg.dilations = {1, 2};
    for (int i = 0; i < kInstances; ++i) {
        auto p = tdr::RegressorParams::init(rcfg, rng);
        for (Tensor* b : {&p.h_b1, &p.h_b2, &p.in_b, &p.out_b}) *b = nc::uniform(b->shape(), -0.3, 0.3, rng);
        for (auto& l : p.layers) l.bias = nc::uniform(l.bias.shape(), -0.3, 0.3, rng);
        p.rho = Tensor::scalar(0.5);
        std::vector<Tensor> hist;
        for (int k = 0; k < 5; ++k) hist.push_back(nc::uniform({6}, -1, 1, rng));
        std::vector<Tensor*> targets{&p.h_w1, &p.h_b1, &p.h_w2, &p.in_w, &p.in_b, &p.out_w, &p.out_b, &p.rho};
        for (auto& l : p.layers) {
            for (auto& tap : l.taps) targets.push_back(&tap);
            targets.push_back(&l.bias);
        }
        for (auto& z : hist) targets.push_back(&z);
        record("temporal_regress", i, gradcheck(targets, [&](Tape& t) {
                   std::vector<Var> h;
                   for (auto& z : hist) h.push_back(t.param(z));
                   return tdr::temporal_regress(h, p, rcfg);
               }, rng, 32));
    }
    for (int i = 0; i < kInstances; ++i) {
        auto cfg = probe_config();
        cfg.seed = static_cast<std::uint64_t>(100 + i);
        pipeline::Model m = pipeline::Model::init(cfg, 3);
        m.head.rho = Tensor::scalar(0.4);
        m.fusion.b2 = nc::uniform({3}, -0.5, 0.5, rng);
        std::vector<pipeline::FrameInput> window;
        for (int k = 0; k < 3; ++k) window.push_back({nc::uniform({3, 16, 16}, 0, 1, rng), nc::uniform({2, 2}, 0.2, 1, rng)});
        std::vector<Tensor*> targets{&m.enc.weight[0], &m.enc.context_token, &m.bank.taps[1][2], &m.bank.proj_weight[3],
                                     &m.ctx.u, &m.fusion.w1, &m.fusion.rho, &m.head.h_w1, &m.head.layers[1].taps[1], &m.head.rho};
        record("pipeline probe", i, gradcheck(targets, [&](Tape& t) { return pipeline::forward_window(t, m, window, {}); }, rng, 8));
    }
    return c.outcome("8 ops x " + std::to_string(kInstances) + " instances, " + std::to_string(coords) +
                     " coordinates, worst rel err " + fixed(worst, 8));
}

// ---------------------------------------------------------------- 2

Outcome identity_suite() {
    Checker c;
    Rng rng(202);
    dfa::DfaConfig cfg;
    cfg.dir_channels = 3;
    for (int trial = 0; trial < 10; ++trial) {
        auto bank = dfa::DirectionBank::init(cfg, 3, rng);
        for (auto& bias : bank.proj_bias) bias = nc::uniform(bias.shape(), -0.3, 0.3, rng);
        const Tensor f = nc::uniform({3, 6, 6}, -1, 1, rng);
        const Tensor mask = nc::uniform({6, 6}, 0, 1, rng);
        const Tensor g = nc::uniform({5}, -1, 1, rng);

        // Uniform weights: each block is the pooled direction map scaled by 1/A.
        {
            const dfa::ContextProjection flat{Tensor::zeros({4, 5}), 1.0};
            Tape t;
            const auto out = dfa::dfa_descriptor(t.constant(f), mask, t.constant(g), bank, flat, cfg);
            const auto maps = dfa::directional_extract(t.constant(f), bank, cfg);
            for (std::size_t k = 0; k < 4; ++k) {
                const Tensor pooled = dfa::masked_pool(maps[k], mask).vector.value();
                c.expect(out.weights.value()[k] == 0.25, "uniform weight");
                for (std::size_t d = 0; d < 3; ++d) {
                    c.expect(std::abs(out.descriptor.value()[k * 3 + d] - 0.25 * pooled[d]) <= 1e-12, "1/A block scaling");
                }
            }
        }
        // Permuting directions permutes descriptor blocks.
        {
            const auto proj = dfa::ContextProjection::init(cfg, 5, rng);
            const std::vector<std::size_t> perm{2, 0, 3, 1};
            dfa::DfaConfig pcfg = cfg;
            dfa::DirectionBank pbank;
            dfa::ContextProjection pproj{Tensor({4, 5}), proj.temperature};
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
            for (std::size_t k = 0; k < 4; ++k) {
                for (std::size_t d = 0; d < 3; ++d) c.expect(std::abs(b[k * 3 + d] - a[perm[k] * 3 + d]) <= 1e-10, "block permutation");
            }
        }
    }

    tdr::FusionConfig fcfg;
    for (int trial = 0; trial < 10; ++trial) {
        Tape t;
        const Var prev = t.constant(nc::uniform({3, 5, 6}, -1, 1, rng));
        const Var cur = t.constant(nc::uniform({3, 5, 6}, -1, 1, rng));
        const tdr::WarpGate closed{t.constant(nc::uniform({2, 5, 6}, -1, 1, rng)), t.constant(Tensor::zeros({1, 5, 6}))};
        c.expect(tdr::fuse_with(prev, cur, closed, t.constant(Tensor::scalar(0.0))).value().bit_equal(cur.value()),
                 "beta 0, gate 0 gives the current map");
        auto p = tdr::FusionParams::init(fcfg, 3, rng);
        const auto predicted = tdr::predict_warp_gate(prev, cur, p, fcfg);
        c.expect(tdr::fuse_with(prev, cur, predicted, t.constant(Tensor::scalar(0.0))).value().bit_equal(cur.value()),
                 "beta 0 gives the current map");
        const tdr::WarpGate open{t.constant(Tensor::zeros({2, 5, 6})), t.constant(Tensor({1, 5, 6}, 1.0))};
        c.expect(tdr::fuse_with(prev, cur, open, t.constant(Tensor::scalar(1.0))).value().bit_equal(prev.value()),
                 "gate 1, beta 1, zero offsets gives the previous map");
    }

    tdr::RegressorConfig rcfg;
    rcfg.descriptor_dim = 6;
    rcfg.action_dim = 3;
    for (int trial = 0; trial < 10; ++trial) {
        auto p = tdr::RegressorParams::init(rcfg, rng);
        for (Tensor* b : {&p.h_b1, &p.h_b2, &p.in_b, &p.out_b}) *b = nc::uniform(b->shape(), -0.3, 0.3, rng);
        Tape t;
        std::vector<Var> hist;
        for (int k = 0; k < 8; ++k) hist.push_back(t.constant(nc::uniform({6}, -1, 1, rng)));
        const Tensor got = tdr::temporal_regress_with_beta(hist, p, rcfg, t.constant(Tensor::scalar(0.0))).value();
        c.expect(got.bit_equal(tdr::base_head(hist.back(), p, rcfg).value()), "zero TCN scale gives the base head");
    }
    return c.outcome("direction blocks, fusion reductions, regressor reduction");
}

// ---------------------------------------------------------------- 3

Outcome causality_suite() {
    Checker c;
    c.expect(tdr::tcn_receptive_field({1, 2, 4, 8}, 2) == 16, "receptive field of dilations 1,2,4,8 with width 2 is 16");
    c.expect(tdr::tcn_receptive_field(pipeline::PipelineConfig{}.regressor.dilations,
                                      pipeline::PipelineConfig{}.regressor.kernel_width) == 16,
             "default regressor receptive field is 16");

    const auto& eps = small_episodes();
    for (const char* variant : {"full", "no_dfa", "no_tdr", "no_mask", "no_refine"}) {
        const auto flags = pipeline::AblationFlags::from_variant(variant);
        const pipeline::Model m = pipeline::Model::init(small_config(), 8);
        const auto base = pipeline::infer_episode(m, eps[0], flags);
        for (std::size_t t : {0u, 3u, 7u, 10u}) {
            synth::EpisodeRecord altered = eps[0];
            for (std::size_t s = t + 1; s < altered.length(); ++s) {
                altered.frames[s] = eps[1].frames[s];
                altered.masks[s] = eps[1].masks[s];
            }
            const auto preds = pipeline::infer_episode(m, altered.frames, altered.masks, flags);
            bool same = true;
            for (std::size_t s = 0; s <= t; ++s) same = same && preds[s] == base[s];
            c.expect(same, std::string(variant) + ": predictions up to t=" + std::to_string(t) + " depend on later frames");
        }
        pipeline::infer_episode(m, eps[2], flags);
        c.expect(pipeline::infer_episode(m, eps[0], flags) == base, std::string(variant) + ": repeated episode differs");
        const std::vector<Image> frames(eps[0].frames.begin(), eps[0].frames.begin() + 4);
        const std::vector<MaskGrid> masks(eps[0].masks.begin(), eps[0].masks.begin() + 4);
        const auto a = pipeline::infer(m, frames, masks, flags);
        pipeline::infer(m, std::vector<Image>(eps[3].frames.begin(), eps[3].frames.begin() + 4),
                        std::vector<MaskGrid>(eps[3].masks.begin(), eps[3].masks.begin() + 4), flags);
        c.expect(pipeline::infer(m, frames, masks, flags) == a, std::string(variant) + ": repeated window differs");
        c.expect(a == base[3], std::string(variant) + ": window and episode inference disagree");
    }
    return c.outcome("5 variants, 4 cut points, receptive field 16");
}

// ---------------------------------------------------------------- 4

Outcome metric_suite() {
    Checker c;
    const auto spec = evalbench::ThresholdSpec::from_kinds(
        {synth::DimKind::rotation, synth::DimKind::rotation, synth::DimKind::rotation, synth::DimKind::rotation,
         synth::DimKind::rotation, synth::DimKind::rotation, synth::DimKind::rotation, synth::DimKind::gripper});
    std::mt19937_64 rng(404);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> scale(0.0, 0.6);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        std::vector<double> g(8), p(8);
        const double s = scale(rng);
        for (int i = 0; i < 8; ++i) {
            g[i] = n01(rng);
            p[i] = g[i] + s * n01(rng);
        }
        int strict = 1;
        double hits = 0.0, l1 = 0.0;
        for (int i = 0; i < 8; ++i) {
            const double d = p[i] > g[i] ? p[i] - g[i] : g[i] - p[i];
            if (d > spec.thresholds[i]) strict = 0;
            else hits += 1.0;
            l1 += d;
        }
        const int sa = evalbench::strict_acc(p, g, spec);
        const double apd = evalbench::acc_per_dim(p, g, spec), l = evalbench::l1_distance(p, g);
        worst = std::max({worst, std::abs(apd - hits / 8.0), std::abs(l - l1 / 8.0)});
        c.expect(sa == strict, "strict_acc oracle");
        c.expect(std::abs(apd - hits / 8.0) <= 1e-12, "acc_per_dim oracle");
        c.expect(std::abs(l - l1 / 8.0) <= 1e-12, "l1_distance oracle");
        c.expect(sa <= apd, "acc <= acc_per_dim");
    }
    std::uniform_real_distribution<double> occ(0.0, 0.4);
    std::vector<double> o(1000);
    for (auto& v : o) v = occ(rng);
    o[10] = 0.15;
    const auto part = evalbench::split_by_truncation(o, evalbench::SplitRule{0.15});
    std::vector<int> seen(o.size(), 0);
    for (auto i : part.light) {
        ++seen[i];
        c.expect(o[i] >= 0.15, "light sample below threshold");
    }
    for (auto i : part.heavy) {
        ++seen[i];
        c.expect(o[i] < 0.15, "heavy sample at or above threshold");
    }
    bool exact_once = true;
    for (int s : seen) exact_once = exact_once && s == 1;
    c.expect(exact_once && part.light.size() + part.heavy.size() == o.size(), "split is exhaustive and disjoint");
    c.expect(std::find(part.light.begin(), part.light.end(), 10u) != part.light.end(), "tie at 0.15 goes to light");
    return c.outcome("1000 pairs, max deviation " + fixed(worst, 15) + ", 1000-sample split");
}

// ---------------------------------------------------------------- 5

struct TrendRow {
    double light_l1 = 0.0, heavy_l1 = 0.0, light_acc = 0.0, heavy_acc = 0.0, heavy_apd = 0.0;
};

Outcome trend_study(const Settings& s) {
    const auto start = std::chrono::steady_clock::now();
    synth::DatasetConfig dc;
    const auto ds = synth::generate_dataset(dc, 80, s.data_seed);
    g_train.clear();
    g_eval.clear();
    for (std::size_t i = 0; i < ds.episodes.size(); ++i) (ds.is_eval[i] ? g_eval : g_train).push_back(ds.episodes[i]);
    const auto kinds = dc.world.arm.dim_kinds();
    const auto spec = evalbench::ThresholdSpec::from_kinds(kinds);
    const auto& names = evalbench::default_variants();

    pipeline::PipelineConfig base;
    base.epochs = s.trend_epochs;
    base.windows_per_episode = s.trend_windows;

    std::map<std::string, TrendRow> mean;
    for (std::size_t seed = 1; seed <= s.trend_seeds; ++seed) {
        base.seed = seed;
        auto models = evalbench::train_variants(base, names, g_train);
        std::vector<evalbench::Variant> vs;
        for (std::size_t i = 0; i < names.size(); ++i) vs.push_back(evalbench::model_variant(names[i], *models[i]));
        const auto report = evalbench::run_benchmark(vs, g_eval, spec);
        for (const auto& row : report.rows) {
            auto& m = mean[row.variant];
            const double w = 1.0 / static_cast<double>(s.trend_seeds);
            if (row.split == "light") {
                m.light_l1 += w * row.l1;
                m.light_acc += w * row.acc;
            } else {
                m.heavy_l1 += w * row.l1;
                m.heavy_acc += w * row.acc;
                m.heavy_apd += w * row.acc_per_dim;
            }
        }
        if (seed == 1) g_full_model = std::move(models[0]);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::fprintf(stderr, "  trend: seed %zu done after %.0f s\n", seed, elapsed);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    std::ostringstream table;
    table << "\n      variant    light_l1 light_acc heavy_l1 heavy_acc heavy_apd";
    for (const auto& n : names) {
        const auto& m = mean[n];
        char buf[160];
        std::snprintf(buf, sizeof(buf), "\n      %-10s %8.4f %9.4f %8.4f %9.4f %9.4f", n.c_str(), m.light_l1, m.light_acc,
                      m.heavy_l1, m.heavy_acc, m.heavy_apd);
        table << buf;
    }
    std::ofstream(s.workdir / "trend.txt") << table.str() << '\n';

    Checker c;
    const auto& full = mean["full"];
    for (const char* other : {"no_dfa", "no_tdr", "no_refine"}) {
        c.expect(full.heavy_l1 < mean[other].heavy_l1, std::string("heavy L1 full ") + fixed(full.heavy_l1) + " not below " +
                                                           other + " " + fixed(mean[other].heavy_l1));
    }
    c.expect(full.heavy_acc > mean["no_refine"].heavy_acc, "heavy strict acc full " + fixed(full.heavy_acc) +
                                                               " not above no_refine " + fixed(mean["no_refine"].heavy_acc));
    c.expect(seconds <= 1800.0, "runtime " + fixed(seconds, 0) + " s exceeds 1800 s");
    Outcome o = c.outcome(std::to_string(g_train.size()) + "/" + std::to_string(g_eval.size()) + " episodes, " +
                          std::to_string(s.trend_seeds) + " seeds, " + std::to_string(s.trend_epochs) + " epochs x " +
                          std::to_string(s.trend_windows) + " windows, " + fixed(seconds, 0) + " s");
    o.detail += table.str();
    return o;
}

// ---------------------------------------------------------------- 6

Outcome mask_robustness(const Settings& s) {
    if (!g_full_model) {
        synth::DatasetConfig dc;
        const auto ds = synth::generate_dataset(dc, 80, s.data_seed);
        for (std::size_t i = 0; i < ds.episodes.size(); ++i) (ds.is_eval[i] ? g_eval : g_train).push_back(ds.episodes[i]);
        pipeline::PipelineConfig cfg;
        cfg.epochs = s.trend_epochs;
        cfg.windows_per_episode = s.trend_windows;
        cfg.seed = 1;
        g_full_model = std::make_unique<pipeline::Model>(pipeline::Model::init(cfg, g_train.front().actions.front().size()));
        pipeline::train(*g_full_model, g_train);
    }
    const auto spec = evalbench::ThresholdSpec::from_kinds(synth::DatasetConfig{}.world.arm.dim_kinds());
    const auto r = evalbench::mask_quality_study(*g_full_model, g_eval, {0.5}, spec, 7);
    Checker c;
    std::string summary;
    for (std::size_t split = 0; split < 2; ++split) {
        const auto& clean = r.rows[split];
        const auto& degraded = r.rows[2 + split];
        c.expect(degraded.l1 >= clean.l1, clean.split + ": degraded L1 " + fixed(degraded.l1) + " below clean " + fixed(clean.l1));
        c.expect(degraded.l1 <= 1.5 * clean.l1,
                 clean.split + ": degraded L1 " + fixed(degraded.l1) + " above 1.5 x clean " + fixed(clean.l1));
        summary += (split ? ", " : "") + clean.split + " " + fixed(clean.l1) + " -> " + fixed(degraded.l1);
    }
    return c.outcome("severity 0.5: " + summary);
}

// ---------------------------------------------------------------- 7

template <typename E, typename F>
bool throws(F&& f) {
    try {
        f();
    } catch (const E&) {
        return true;
    } catch (...) {
        return false;
    }
    return false;
}

Outcome serialization_suite(const Settings& s) {
    Checker c;
    const fs::path dir = s.workdir / "serialization";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Rng rng(707);

    auto cfg = small_config();
    cfg.epochs = 1;
    pipeline::Model m = pipeline::Model::init(cfg, 8);
    pipeline::train(m, small_episodes());
    pipeline::save_model(m, dir / "model");
    pipeline::Model back = pipeline::load_model(dir / "model");
    const auto ra = m.registry();
    const auto rb = back.registry();
    bool same = ra.entries().size() == rb.entries().size();
    for (std::size_t i = 0; same && i < ra.entries().size(); ++i) {
        same = ra.entries()[i].first == rb.entries()[i].first && ra.entries()[i].second->bit_equal(*rb.entries()[i].second);
    }
    c.expect(same, "model parameters differ after save/load");
    c.expect(back.norm == m.norm, "normalization differs after save/load");
    c.expect(back.cfg.to_kv().values() == m.cfg.to_kv().values(), "config differs after save/load");
    c.expect(pipeline::infer_episode(back, small_episodes()[1], back.cfg.flags) ==
                 pipeline::infer_episode(m, small_episodes()[1], m.cfg.flags),
             "predictions differ after save/load");

    for (int i = 0; i < 10; ++i) {
        const Tensor t64 = nc::uniform({3, 4, 5}, -1e3, 1e3, rng);
        fmap::save_fmap(t64, dir / "a.fmap", fmap::DType::f64);
        c.expect(fmap::load_fmap(dir / "a.fmap").bit_equal(t64), "f64 fmap round trip");
        Tensor t32 = nc::uniform({7, 3}, -10, 10, rng);
        for (auto& v : t32.data()) v = static_cast<double>(static_cast<float>(v));
        fmap::save_fmap(t32, dir / "b.fmap", fmap::DType::f32);
        c.expect(fmap::load_fmap(dir / "b.fmap").bit_equal(t32), "f32 fmap round trip");
        Tensor t8({4, 4});
        for (std::size_t k = 0; k < 16; ++k) t8[k] = static_cast<double>((k * 37 + static_cast<std::size_t>(i)) % 256);
        fmap::save_fmap(t8, dir / "c.fmap", fmap::DType::u8);
        const auto d = fmap::load_fmap_with_dtype(dir / "c.fmap");
        c.expect(d.tensor.bit_equal(t8) && d.dtype == fmap::DType::u8, "u8 fmap round trip");
    }
    const auto good = fmap::encode(nc::uniform({2, 3}, -1, 1, rng), fmap::DType::f64);
    auto bad_magic = good, bad_version = good, bad_dtype = good, truncated = good, trailing = good;
    bad_magic[0] = 'X';
    bad_version[4] = 9;
    bad_dtype[8] = 7;
    truncated.resize(truncated.size() - 3);
    trailing.push_back(0);
    c.expect(throws<fmap::BadMagicError>([&] { fmap::decode(bad_magic); }), "bad magic");
    c.expect(throws<fmap::VersionError>([&] { fmap::decode(bad_version); }), "bad version");
    c.expect(throws<fmap::DTypeError>([&] { fmap::decode(bad_dtype); }), "bad dtype");
    c.expect(throws<fmap::TruncatedError>([&] { fmap::decode(truncated); }), "truncated payload");
    c.expect(throws<FormatError>([&] { fmap::decode(trailing); }), "trailing bytes");
    c.expect(throws<ParameterError>([&] { fmap::encode(Tensor::vector({0.5}), fmap::DType::u8); }), "non-integral u8");

    const std::vector<evalbench::EpisodeAssignment> rows{
        {"ep_b", evalbench::Role::eval}, {"ep_a", evalbench::Role::train}, {"ep_c", evalbench::Role::train}};
    evalbench::save_episode_index(rows, dir / "episodes.csv");
    c.expect(evalbench::load_episode_index(dir / "episodes.csv") == rows, "index round trip");
    c.expect(throws<evalbench::IndexHeaderError>([] { evalbench::parse_episode_index("id,split\ne1,train"); }), "index header");
    c.expect(throws<evalbench::DuplicateEpisodeError>([] { evalbench::parse_episode_index("episode_id,split\ne1,train\ne1,eval"); }),
             "duplicate episode id");
    c.expect(throws<evalbench::UnknownSplitError>([] { evalbench::parse_episode_index("episode_id,split\ne1,test"); }),
             "unknown split");

    fs::remove(dir / "model" / "head.rho.fmap");
    c.expect(throws<FormatError>([&] { pipeline::load_model(dir / "model"); }), "model with a missing tensor");
    c.expect(throws<IoError>([&] { pipeline::load_model(dir / "absent"); }), "missing model directory");
    fs::remove_all(dir);
    return c.outcome("model, fmap f64/f32/u8, episode index, malformed inputs");
}

// ---------------------------------------------------------------- 8

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    if (!fs::exists(root)) return out;
    if (fs::is_regular_file(root)) {
        out[root.filename().string()] = slurp(root);
        return out;
    }
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

int run(const std::string& cmd) {
    const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome cli_determinism(const Settings& s) {
    Checker c;
    if (!fs::exists(s.cli)) {
        c.expect(false, "command-line tool not found at " + s.cli.string());
        return c.outcome("");
    }
    const fs::path dir = s.workdir / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "run.cfg") << "resolution = 32\nepisode_length = 10\npatch = 8\nchannels = 8\ncontext_dim = 6\n"
                                      "stage_channels = 4,6\ndir_channels = 4\nfusion_hidden = 4\ntcn_channels = 8\n"
                                      "hidden = 8\nwindow = 4\nepochs = 2\nseed = 3\n";
    const std::string cli = "\"" + s.cli.string() + "\"";
    const std::string cfg = "\"" + (dir / "run.cfg").string() + "\"";
    for (const char* run_id : {"a", "b"}) {
        const fs::path r = dir / run_id;
        c.expect(run(cli + " generate --config " + cfg + " --out \"" + (r / "data").string() + "\" --episodes 8 --seed 41") == 0,
                 "generate failed");
        c.expect(run(cli + " train --data \"" + (dir / "a" / "data").string() + "\" --config " + cfg + " --out \"" +
                     (r / "model").string() + "\"") == 0,
                 "train failed");
        c.expect(run(cli + " eval --model \"" + (dir / "a" / "model").string() + "\" --data \"" + (dir / "a" / "data").string() +
                     "\" --report \"" + (r / "report.json").string() + "\" --format json") == 0,
                 "eval failed");
    }
    for (const char* part : {"data", "model", "report.json"}) {
        const auto a = tree(dir / "a" / part), b = tree(dir / "b" / part);
        c.expect(!a.empty() && a == b, std::string(part) + " differs between runs");
    }
    c.expect(run(cli + " train --data \"" + (dir / "missing").string() + "\" --config " + cfg + " --out \"" +
                 (dir / "m").string() + "\"") == 3,
             "missing dataset does not exit with 3");
    std::ofstream(dir / "bad.cfg") << "no_such_key = 1\n";
    c.expect(run(cli + " generate --config \"" + (dir / "bad.cfg").string() + "\" --out \"" + (dir / "x").string() +
                 "\" --episodes 2 --seed 1") == 2,
             "unknown config key does not exit with 2");
    fs::remove_all(dir);
    return c.outcome("generate, train and eval run twice; outputs compared byte for byte");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    Settings s;
    std::vector<int> only;
    std::string workdir = (fs::temp_directory_path() / "stableidm_acceptance").string();
    std::string cli = (fs::path(argv[0]).parent_path() / "stableidm").string();
    app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
    app.add_option("--workdir", workdir, "scratch directory");
    app.add_option("--cli", cli, "path to the stableidm executable");
    app.add_option("--trend-epochs", s.trend_epochs, "epochs per model in the trend study");
    app.add_option("--trend-windows", s.trend_windows, "windows per episode per epoch in the trend study");
    app.add_option("--trend-seeds", s.trend_seeds, "training seeds in the trend study");
    CLI11_PARSE(app, argc, argv);
    s.workdir = workdir;
    s.cli = cli;
    fs::create_directories(s.workdir);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"identity suite", identity_suite},
        {"causality and statelessness", causality_suite},
        {"metric oracles and split", metric_suite},
        {"synthetic ablation trend", [&] { return trend_study(s); }},
        {"mask-quality robustness", [&] { return mask_robustness(s); }},
        {"serialization", [&] { return serialization_suite(s); }},
        {"CLI determinism", [&] { return cli_determinism(s); }},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = Outcome{false, std::string("exception: ") + e.what()};
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (id == 1 && sec >= 120.0) {
            o.pass = false;
            o.detail += "\n      failed: runtime " + fixed(sec, 1) + " s exceeds 120 s";
        }
        all = all && o.pass;
        std::printf("criterion %d %s  %s (%.1f s): %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), sec,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
