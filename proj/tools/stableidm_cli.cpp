// stableidm: generate synthetic data, train, evaluate, run ablations and the
// mask-quality study.

#include <cstdio>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stableidm/stableidm.hpp"

namespace {

using namespace stableidm;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

KeyValueConfig load_config(const std::string& path) {
    KeyValueConfig kv = KeyValueConfig::load(path);
    std::set<std::string> known = pipeline::PipelineConfig::keys();
    const auto& ds = synth::DatasetConfig::keys();
    known.insert(ds.begin(), ds.end());
    kv.require_known(known);
    return kv;
}

std::vector<std::string> split_list(const std::string& s) { return KeyValueConfig::split(s); }

std::string variant_name(const pipeline::AblationFlags& flags) {
    const auto f = flags;
    if (f.disable_refinement) return "no_refine";
    if (f.disable_dfa && !f.disable_tdr && !f.disable_mask) return "no_dfa";
    if (f.disable_tdr && !f.disable_dfa && !f.disable_mask) return "no_tdr";
    if (f.disable_mask && !f.disable_dfa && !f.disable_tdr) return "no_mask";
    if (!f.disable_dfa && !f.disable_tdr && !f.disable_mask) return "full";
    return "custom";
}

void require_resolution(const pipeline::PipelineConfig& cfg, const evalbench::LoadedDataset& ds) {
    for (const auto* split : {&ds.train, &ds.eval}) {
        for (const auto& ep : *split) {
            const auto& f = ep.frames.front();
            if (f.width != cfg.encoder.resolution || f.height != cfg.encoder.resolution) {
                throw DataError("episode " + ep.episode_id + " has " + std::to_string(f.width) + "x" + std::to_string(f.height) +
                                " frames, the model expects resolution " + std::to_string(cfg.encoder.resolution));
            }
        }
    }
}

void log_epoch(std::size_t epoch, double loss) { std::fprintf(stderr, "epoch %zu loss %.6f\n", epoch, loss); }

int cmd_generate(const std::string& config, const std::string& out, std::size_t episodes, std::uint64_t seed) {
    const synth::DatasetConfig cfg = synth::DatasetConfig::from(load_config(config));
    if (episodes == 0) throw ConfigError("--episodes must be positive");
    const synth::Dataset ds = synth::generate_dataset(cfg, episodes, seed);
    evalbench::write_dataset(ds, cfg, seed, out);
    std::size_t n_eval = 0;
    for (bool e : ds.is_eval) n_eval += e;
    std::fprintf(stderr, "wrote %zu episodes (%zu eval) to %s\n", episodes, n_eval, out.c_str());
    return 0;
}

int cmd_train(const std::string& data, const std::string& config, const std::string& out) {
    const pipeline::PipelineConfig cfg = pipeline::PipelineConfig::from(load_config(config));
    const evalbench::LoadedDataset ds = evalbench::read_dataset(data);
    if (ds.train.empty()) throw DataError("no training episodes in " + data);
    require_resolution(cfg, ds);
    pipeline::Model m = pipeline::Model::init(cfg, ds.dim_kinds.size());
    pipeline::train(m, ds.train, log_epoch);
    pipeline::save_model(m, out);
    return 0;
}

evalbench::ThresholdSpec spec_for(const evalbench::LoadedDataset& ds) {
    return evalbench::ThresholdSpec::from_kinds(ds.dim_kinds);
}

int cmd_eval(const std::string& model_dir, const std::string& data, const std::string& report, const std::string& format) {
    const auto fmt = evalbench::report_format_from_string(format);
    const pipeline::Model m = pipeline::load_model(model_dir);
    const evalbench::LoadedDataset ds = evalbench::read_dataset(data);
    require_resolution(m.cfg, ds);
    auto r = evalbench::run_benchmark({evalbench::model_variant(variant_name(m.cfg.flags), m)}, ds.eval, spec_for(ds));
    const KeyValueConfig echo = m.cfg.to_kv();
    for (const auto& [k, v] : echo.values()) r.config[k] = v;
    evalbench::emit_report(r, report, fmt);
    std::cout << evalbench::report_csv(r);
    return 0;
}

int cmd_ablate(const std::string& data, const std::string& config, const std::string& variants, const std::string& report,
               const std::string& format) {
    const auto fmt = evalbench::report_format_from_string(format);
    const pipeline::PipelineConfig cfg = pipeline::PipelineConfig::from(load_config(config));
    const auto names = split_list(variants);
    if (names.empty()) throw ConfigError("--variants is empty");
    for (const auto& n : names) pipeline::AblationFlags::from_variant(n);
    const evalbench::LoadedDataset ds = evalbench::read_dataset(data);
    if (ds.eval.empty()) throw DataError("no eval episodes in " + data);
    require_resolution(cfg, ds);
    const auto models = evalbench::train_variants(cfg, names, ds.train, log_epoch);
    std::vector<evalbench::Variant> vs;
    for (std::size_t i = 0; i < names.size(); ++i) vs.push_back(evalbench::model_variant(names[i], *models[i]));
    auto r = evalbench::run_benchmark(vs, ds.eval, spec_for(ds));
    const KeyValueConfig echo = cfg.to_kv();
    for (const auto& [k, v] : echo.values()) r.config[k] = v;
    evalbench::emit_report(r, report, fmt);
    std::cout << evalbench::report_csv(r);
    return 0;
}

int cmd_mask_study(const std::string& model_dir, const std::string& data, const std::string& severities,
                   const std::string& report, const std::string& format, std::uint64_t seed) {
    const auto fmt = evalbench::report_format_from_string(format);
    std::vector<double> sev;
    KeyValueConfig kv;
    kv.set("severities", severities);
    sev = kv.get_doubles("severities", {});
    const pipeline::Model m = pipeline::load_model(model_dir);
    const evalbench::LoadedDataset ds = evalbench::read_dataset(data);
    require_resolution(m.cfg, ds);
    auto r = evalbench::mask_quality_study(m, ds.eval, sev, spec_for(ds), seed);
    evalbench::emit_report(r, report, fmt);
    std::cout << evalbench::report_csv(r);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inverse dynamics on synthetic dual-arm video"};
    app.require_subcommand(1);

    std::string config, out, data, model, report, format = "csv", variants = "full,no_dfa,no_tdr,no_mask,no_refine",
                                                   severities = "0.0,0.25,0.5,1.0";
    std::size_t episodes = 0;
    std::uint64_t seed = 0;

    auto* gen = app.add_subcommand("generate", "Render a synthetic episode set");
    gen->add_option("--config", config, "key=value config file")->required();
    gen->add_option("--out", out, "output dataset directory")->required();
    gen->add_option("--episodes", episodes, "number of episodes")->required();
    gen->add_option("--seed", seed, "generation seed")->required();

    auto* tr = app.add_subcommand("train", "Train a model on the train split");
    tr->add_option("--data", data, "dataset directory")->required();
    tr->add_option("--config", config, "key=value config file")->required();
    tr->add_option("--out", out, "output model directory")->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a model on the eval split");
    ev->add_option("--model", model, "model directory")->required();
    ev->add_option("--data", data, "dataset directory")->required();
    ev->add_option("--report", report, "report path")->required();
    ev->add_option("--format", format, "csv, json or svg");

    auto* ab = app.add_subcommand("ablate", "Train and evaluate ablation variants");
    ab->add_option("--data", data, "dataset directory")->required();
    ab->add_option("--config", config, "key=value config file")->required();
    ab->add_option("--variants", variants, "comma separated variant names");
    ab->add_option("--report", report, "report path")->required();
    ab->add_option("--format", format, "csv, json or svg");

    auto* ms = app.add_subcommand("mask-study", "Evaluate with degraded masks");
    ms->add_option("--model", model, "model directory")->required();
    ms->add_option("--data", data, "dataset directory")->required();
    ms->add_option("--severities", severities, "comma separated severities in [0, 1]");
    ms->add_option("--report", report, "report path")->required();
    ms->add_option("--format", format, "csv, json or svg");
    ms->add_option("--seed", seed, "degradation seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_generate(config, out, episodes, seed);
        if (tr->parsed()) return cmd_train(data, config, out);
        if (ev->parsed()) return cmd_eval(model, data, report, format);
        if (ab->parsed()) return cmd_ablate(data, config, variants, report, format);
        if (ms->parsed()) return cmd_mask_study(model, data, severities, report, format, seed);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParameterError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
