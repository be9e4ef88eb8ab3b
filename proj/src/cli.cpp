#include "mfc/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mfc/errors.hpp"
#include "mfc/hash.hpp"
#include "mfc/pipeline.hpp"
#include "mfc/version.hpp"

namespace mfc::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::Experiment;
using pipeline::ExperimentConfig;

namespace {

ExperimentConfig load_config(const std::string& config_file) {
    ExperimentConfig cfg = ExperimentConfig::toy_defaults();
    if (!config_file.empty()) {
        std::ifstream f(config_file);
        if (!f) throw ConfigError("cannot open config file " + config_file);
        json overrides;
        try {
            f >> overrides;
        } catch (const json::exception& e) {
            throw ConfigError("malformed config file " + config_file + ": " + e.what());
        }
        cfg = pipeline::merge_config(cfg, overrides);
    }
    return cfg;
}

struct EvalSelector {
    int target = -1;
    int utts = 1;
    uint64_t seed = 1;
    std::string variant = "full";
    bool unadapted = false;
    bool zero_shot = false;
    bool csv = false;
    bool speaker_table = false;
};

int run_eval(Experiment& exp, const EvalSelector& sel) {
    if (sel.speaker_table) {
        auto table = exp.speaker_table();
        fs::create_directories(exp.eval_dir());
        std::ofstream f(exp.eval_dir() / "speaker_table.json");
        f << table.to_json().dump(2) << "\n";
        std::cout << table.to_json().dump(2) << "\n";
        return 0;
    }
    if (sel.target >= 0) {
        auto rep = exp.evaluate(sel.target, sel.utts, sel.seed, sel.variant, sel.unadapted, sel.csv,
                                sel.zero_shot);
        std::cout << rep.to_text();
        return 0;
    }
    // no explicit target: evaluate every adapted checkpoint present
    const fs::path adapt_root = exp.root() / "adapt";
    bool found = false;
    if (fs::exists(adapt_root)) {
        for (const auto& entry : fs::directory_iterator(adapt_root)) {
            if (!entry.is_directory()) continue;
            const fs::path ckpt = entry.path() / "adapted.ckpt";
            if (!fs::exists(ckpt)) continue;
            auto loaded = params::load_checkpoint(ckpt);
            const int target = loaded.meta.extra.at("target").get<int>();
            const int utts = loaded.meta.extra.at("utts").get<int>();
            const uint64_t seed = loaded.meta.extra.at("seed").get<uint64_t>();
            const std::string variant = loaded.meta.extra.at("variant").get<std::string>();
            auto rep = exp.evaluate(target, utts, seed, variant, false, sel.csv);
            std::cout << "== " << entry.path().filename().string() << "\n" << rep.to_text();
            found = true;
        }
    }
    if (!found) {
        throw StalenessError("no adaptation checkpoints under " + adapt_root.string() +
                             "; run adapt first");
    }
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"multi-factor-constrained voice conversion sandbox (synthetic corpus)"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    app.fallthrough();

    std::string out_dir;
    std::string config_file;
    bool force = false;
    app.add_option("--out", out_dir, "artifact root directory")->required();
    app.add_option("--config", config_file, "JSON config file (overrides defaults; flags win)");
    app.add_flag("--force", force, "overwrite artifacts from a different configuration");

    auto* cmd_gen = app.add_subcommand("gen-corpus", "generate the synthetic factorized corpus");
    uint64_t gen_seed = 0;
    int gen_base = 0, gen_targets = 0, gen_utts = 0, gen_test = 0;
    double gen_noise = -1;
    auto* o_gen_seed = cmd_gen->add_option("--seed", gen_seed, "corpus seed");
    auto* o_gen_base = cmd_gen->add_option("--base-speakers", gen_base, "base speaker count");
    auto* o_gen_tgt = cmd_gen->add_option("--target-speakers", gen_targets, "target speaker count");
    auto* o_gen_utts = cmd_gen->add_option("--utts-per-speaker", gen_utts, "utterances per base speaker");
    auto* o_gen_test = cmd_gen->add_option("--test-utts", gen_test, "held-out test utterances");
    auto* o_gen_noise = cmd_gen->add_option("--noise", gen_noise, "additive noise sigma");

    auto* cmd_pre = app.add_subcommand("pretrain", "pretrain and freeze the constraint models");
    uint64_t pre_seed = 0;
    auto* o_pre_seed = cmd_pre->add_option("--seed", pre_seed, "pretraining seed");

    auto* cmd_base = app.add_subcommand("train-base", "train the base conversion model");
    int base_epochs = 0, base_batch = 0;
    double base_lr = 0;
    uint64_t base_seed = 0;
    auto* o_base_epochs = cmd_base->add_option("--epochs", base_epochs, "training epochs");
    auto* o_base_lr = cmd_base->add_option("--lr", base_lr, "initial learning rate");
    auto* o_base_batch = cmd_base->add_option("--batch", base_batch, "batch size");
    auto* o_base_seed = cmd_base->add_option("--seed", base_seed, "training seed");

    auto* cmd_adapt = app.add_subcommand("adapt", "adapt the base model to a target speaker");
    int ad_target = -1, ad_utts = 1, ad_steps = 0;
    uint64_t ad_seed = 1;
    train::AblationFlags ad_flags;
    cmd_adapt->add_option("--target", ad_target, "target speaker id")->required();
    cmd_adapt->add_option("--utts", ad_utts, "adaptation utterances (1 or 5)");
    cmd_adapt->add_option("--seed", ad_seed, "adaptation seed");
    auto* o_ad_steps = cmd_adapt->add_option("--steps", ad_steps, "adaptation steps");
    cmd_adapt->add_flag("--no-style", ad_flags.no_style, "drop the style constraint");
    cmd_adapt->add_flag("--no-content", ad_flags.no_content, "drop the content constraint");
    cmd_adapt->add_flag("--no-spk", ad_flags.no_spk, "drop the speaker cosine constraint");
    cmd_adapt->add_flag("--no-adv", ad_flags.no_adv, "drop the adversarial term");
    cmd_adapt->add_flag("--no-simulation", ad_flags.no_simulation, "drop the simulation mode");

    auto* cmd_eval = app.add_subcommand("eval", "evaluate conversions against the test split");
    EvalSelector sel;
    cmd_eval->add_option("--target", sel.target, "target speaker id (default: all adapted)");
    cmd_eval->add_option("--utts", sel.utts, "adaptation setting to evaluate (1 or 5)");
    cmd_eval->add_option("--seed", sel.seed, "adaptation seed to evaluate");
    cmd_eval->add_option("--variant", sel.variant, "ablation variant name (default full)");
    cmd_eval->add_flag("--unadapted", sel.unadapted, "evaluate the unadapted base model");
    cmd_eval->add_flag("--zero-shot", sel.zero_shot,
                       "evaluate the base model fed the target centroid (informational)");
    cmd_eval->add_flag("--csv", sel.csv, "also write per-utterance CSV rows");
    cmd_eval->add_flag("--speaker-table", sel.speaker_table,
                       "emit the intra/inter speaker cosine table instead");

    auto* cmd_ablate = app.add_subcommand("ablate", "run the constraint ablation matrix");
    std::vector<uint64_t> ab_seeds;
    std::vector<int> ab_settings, ab_targets;
    auto* o_ab_seeds = cmd_ablate->add_option("--seeds", ab_seeds, "adaptation seeds")->delimiter(',');
    auto* o_ab_settings =
        cmd_ablate->add_option("--settings", ab_settings, "utterance settings")->delimiter(',');
    auto* o_ab_targets =
        cmd_ablate->add_option("--targets", ab_targets, "target speakers (default all)")->delimiter(',');

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = load_config(config_file);

        if (o_gen_seed->count()) cfg.corpus.seed = gen_seed;
        if (o_gen_base->count()) {
            cfg.corpus.base_speakers = gen_base;
            cfg.aux.n_base_speakers = gen_base;
        }
        if (o_gen_tgt->count()) cfg.corpus.target_speakers = gen_targets;
        if (o_gen_utts->count()) cfg.corpus.utts_per_base = gen_utts;
        if (o_gen_test->count()) cfg.corpus.test_utts = gen_test;
        if (o_gen_noise->count()) cfg.corpus.noise_sigma = gen_noise;
        if (o_pre_seed->count()) cfg.pretrain.seed = pre_seed;
        if (o_base_epochs->count()) cfg.base.epochs = base_epochs;
        if (o_base_lr->count()) cfg.base.lr_init = base_lr;
        if (o_base_batch->count()) cfg.base.batch_size = base_batch;
        if (o_base_seed->count()) cfg.base.seed = base_seed;
        if (o_ad_steps->count()) cfg.adapt.epochs = ad_steps;
        if (o_ab_seeds->count()) cfg.ablate.seeds = ab_seeds;
        if (o_ab_settings->count()) cfg.ablate.settings = ab_settings;
        if (o_ab_targets->count()) cfg.ablate.targets = ab_targets;

        Experiment exp(cfg, out_dir);

        if (cmd_gen->parsed()) {
            exp.gen_corpus(force);
            std::cout << "corpus ready at " << exp.corpus_dir().string() << " (sha256 "
                      << exp.corpus_hash().substr(0, 12) << ")\n";
        } else if (cmd_pre->parsed()) {
            exp.pretrain(force);
            std::cout << "auxiliaries pretrained under " << exp.aux_dir().string() << "\n";
        } else if (cmd_base->parsed()) {
            exp.train_base(force);
            std::cout << "base model at " << exp.base_ckpt_path().string() << "\n";
        } else if (cmd_adapt->parsed()) {
            fs::path ckpt = exp.adapt(ad_target, ad_utts, ad_seed, ad_flags, force);
            std::cout << "adapted model at " << ckpt.string() << "\n";
        } else if (cmd_eval->parsed()) {
            return run_eval(exp, sel);
        } else if (cmd_ablate->parsed()) {
            auto table = exp.run_ablation(force);
            std::cout << table.to_text();
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const StalenessError& e) {
        std::cerr << "stale artifact: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}

}  // namespace mfc::cli
