#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfc/constraints.hpp"
#include "mfc/corpus.hpp"
#include "mfc/metrics.hpp"
#include "mfc/pretrain.hpp"
#include "mfc/trainer.hpp"
#include "mfc/vc_model.hpp"

namespace mfc::pipeline {

// Experiment orchestration: corpus generation, constraint-model pretraining,
// base training, per-target adaptation, evaluation, and the ablation matrix.
// Every stage records the hashes of its inputs; later stages refuse to run
// against artifacts whose recorded lineage no longer matches.

struct AblateConfig {
    std::vector<uint64_t> seeds = {1, 2, 3};
    std::vector<int> settings = {1, 5};  // adaptation-set sizes
    std::vector<int> targets;            // empty = all target speakers

    nlohmann::json to_json() const;
    static AblateConfig from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
    corpus::CorpusConfig corpus;
    constraints::AuxConfig aux;
    model::VcConfig model;
    train::PretrainConfig pretrain;
    train::TrainingConfig base;   // alpha = 0
    train::TrainingConfig adapt;  // alpha = 1; epochs acts as the step count
    AblateConfig ablate;

    // Desk-scale profile: published loss weights and schedule shape, toy
    // epoch counts and a learning rate that converges at this size.
    static ExperimentConfig toy_defaults();

    void validate() const;  // cross-section consistency
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    std::string config_hash() const;  // over all sections except ablate

    // Stage-scoped hashes: an artifact is stale only when the sections it
    // actually depends on change.
    std::string aux_scope_hash() const;    // corpus + aux + pretrain
    std::string base_scope_hash() const;   // ... + model + base
    std::string adapt_scope_hash() const;  // ... + adapt
};

// merges a partial JSON override tree into a config (file layer of the
// flag > file > default precedence)
ExperimentConfig merge_config(const ExperimentConfig& base, const nlohmann::json& overrides);

struct AblateCell {
    std::string variant;
    int utts = 0;
    double content_error = 0;
    double d_style = 0;
    double cos_sim = 0;
    int runs = 0;
};

struct AblateTable {
    std::vector<AblateCell> cells;  // variant x setting, means over seeds and targets
    nlohmann::json to_json() const;
    std::string to_text() const;
    const AblateCell& cell(const std::string& variant, int utts) const;
};

class Experiment {
public:
    Experiment(ExperimentConfig cfg, std::filesystem::path out_dir);

    const ExperimentConfig& config() const { return cfg_; }
    const std::filesystem::path& root() const { return root_; }

    // stage commands
    void gen_corpus(bool force = false);
    void pretrain(bool force = false);
    void train_base(bool force = false);
    std::filesystem::path adapt(int target, int utts, uint64_t seed,
                                const train::AblationFlags& flags = {}, bool force = false);
    // unadapted: score the base model with no target knowledge (source-centroid
    // conversions). zero_shot: score the base model fed the target centroid
    // (informational; the embedding-only conversion attempt).
    eval::MetricsReport evaluate(int target, int utts, uint64_t seed,
                                 const std::string& variant = "full", bool unadapted = false,
                                 bool write_csv = false, bool zero_shot = false);
    AblateTable run_ablation(bool force = false);
    eval::SpeakerTable speaker_table();

    // artifact paths
    std::filesystem::path corpus_dir() const { return root_ / "corpus"; }
    std::filesystem::path aux_dir() const { return root_ / "aux"; }
    std::filesystem::path base_ckpt_path() const { return root_ / "base" / "base.ckpt"; }
    std::filesystem::path adapt_run_dir(int target, int utts, uint64_t seed,
                                        const std::string& variant) const;
    std::filesystem::path eval_dir() const { return root_ / "eval"; }

    // lazily loaded shared state
    const corpus::CorpusManifest& manifest();
    const train::UttStore& store();
    const constraints::AuxModels& aux_models();
    std::string corpus_hash();

    // loads the base conversion model (and optionally its discriminator)
    std::unique_ptr<model::VcModel> load_base_model(constraints::Discriminator* disc_out = nullptr);
    std::unique_ptr<model::VcModel> load_adapted_model(const std::filesystem::path& ckpt);

    std::vector<int> target_speaker_ids();

private:
    void require_corpus();
    void require_aux();
    void require_base();
    void write_json(const std::filesystem::path& path, const nlohmann::json& j);

    ExperimentConfig cfg_;
    std::filesystem::path root_;
    std::unique_ptr<train::UttStore> store_;
    std::unique_ptr<constraints::AuxModels> aux_;
    std::string corpus_hash_;
};

}  // namespace mfc::pipeline
