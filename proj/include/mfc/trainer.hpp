#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "json.hpp"
#include "mfc/constraints.hpp"
#include "mfc/corpus.hpp"
#include "mfc/params.hpp"
#include "mfc/vc_model.hpp"

namespace mfc::train {

// Base training and low-resource adaptation. The reconstruction objective
// rebuilds an utterance from its own content/style/speaker inputs with a
// ground-truth spectrum; the simulation objective imitates inference by
// converting a different speaker's utterance toward the target without any
// ground truth. Base training uses reconstruction only (alpha = 0);
// adaptation runs both modes simultaneously (alpha = 1).

struct TrainingConfig {
    int alpha = 0;                  // 0 base training, 1 adaptation
    double lambda_spk = 0.1;
    double lambda_c = 1.0;
    double lambda_adv = 0.05;
    double lr_init = 5e-5;
    double lr_decay = 0.5;
    int decay_every = 30;           // epochs between decays
    int epochs = 400;
    int disc_update_every = 1;      // discriminator alternation period, steps
    int simu_batch = 10;            // simulation sources per step, 1-utterance runs
    int simu_batch_large = 25;      // simulation sources per step, 5-utterance runs
    uint64_t seed = 1;
    double wreg_mu = 0.01;          // weight-regularization coefficient
    double mel_l1_weight = 0.0;     // optional L1 term on the mel loss, off by default
    bool disc_fake_unsquared = false;  // literal |D(fake)| in the discriminator loss
    int batch_size = 8;
    double grad_clip = 5.0;         // global-norm gradient clip, 0 disables
    bool alternate_modes = false;   // alternate recon/simu steps instead of summing

    static TrainingConfig published_base();   // published base-phase constants
    static TrainingConfig published_adapt();  // published adaptation constants

    nlohmann::json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

double lr_at_epoch(const TrainingConfig& cfg, int epoch);

struct AblationFlags {
    bool no_style = false;
    bool no_content = false;
    bool no_spk = false;
    bool no_adv = false;
    bool no_simulation = false;

    nlohmann::json to_json() const;
    static AblationFlags from_json(const nlohmann::json& j);
    std::string name() const;  // "full" or the single active switch
};

struct LossBreakdown {
    std::optional<double> mel, spk_ce, spk_cos, content, style_l, style_m, style_h, adv, wreg;
    std::optional<double> total_recon, total_simu;

    nlohmann::json to_json() const;
};

struct LogRecord {
    int step = 0;
    int epoch = 0;
    std::string mode;  // "recon" | "simu" | "disc"
    double lr = 0.0;
    LossBreakdown breakdown;
    std::optional<double> disc_loss;

    nlohmann::json to_json() const;
};

// All utterances of a corpus, loaded once and shared across phases.
struct UttStore {
    UttStore(const corpus::CorpusManifest& manifest, const std::filesystem::path& dir);

    corpus::CorpusManifest manifest;
    std::vector<corpus::Utterance> utts;  // aligned with manifest.files
    std::vector<num::Tensor> mels;        // constant tensors, aligned
};

// scales gradients so their global norm does not exceed max_norm
void clip_gradients(params::ParamStore& params, double max_norm);

// mu * mean over all parameter elements of (theta - theta_base)^2
num::Tensor loss_weight_reg(const params::ParamStore& theta, const params::ParamStore& theta_base,
                            double mu);

// value snapshot of a parameter store (constants, gradient-free)
params::ParamStore snapshot_params(const params::ParamStore& src);

class Trainer {
public:
    Trainer(const UttStore& store, const constraints::AuxModels& aux);

    // frozen-feature cache for one utterance
    struct UttData {
        num::Tensor mel, lf0, energy;          // constants
        num::Tensor content;                   // extractor features [T, C]
        constraints::StyleFeatures ser_target; // source style features
        num::Tensor content_target;            // content-model features of the source
        int speaker_id = -1;
    };
    const UttData& data(int file_index);

    // indicator centroid over a file set / over a base speaker's training set
    num::Tensor centroid_of(const std::vector<int>& file_indices);
    num::Tensor speaker_centroid(int speaker_id);

    struct Objective {
        num::Tensor total;  // graph scalar (undefined when no term is active)
        LossBreakdown breakdown;
        std::vector<std::vector<double>> predictions;  // per-utterance predicted mel values
    };

    // Reconstruction objective over a batch. With alpha = 1, z_target is the
    // adaptation-set centroid and theta_base the base-parameter snapshot.
    Objective loss_recon(model::VcModel& vc, const std::vector<int>& files, int alpha,
                         const TrainingConfig& cfg, const AblationFlags& flags,
                         const num::Tensor* z_target, const params::ParamStore* theta_base,
                         const constraints::Discriminator* disc, bool want_predictions = false);

    // Simulation objective over sampled sources; free-running conversion
    // toward the target, no ground-truth spectrum involved.
    Objective loss_simu(model::VcModel& vc, const std::vector<int>& source_files,
                        int target_speaker, const num::Tensor& target_spk_vec,
                        const TrainingConfig& cfg, const AblationFlags& flags,
                        const constraints::Discriminator* disc);

    // Base-model training; reconstruction mode only, discriminator trained
    // alternately. Returns the per-step log. Optimizers are caller-owned so
    // their state can be checkpointed.
    std::vector<LogRecord> train_base(model::VcModel& vc, constraints::Discriminator& disc,
                                      const TrainingConfig& cfg, params::Adam* opt_g = nullptr,
                                      params::Adam* opt_d = nullptr);

    // Low-resource adaptation on 1..k target utterances; reconstruction and
    // simulation losses are summed each step. Auxiliaries and the
    // discriminator stay frozen. adapt_epochs steps, one recon pass each.
    std::vector<LogRecord> adapt(model::VcModel& vc, const constraints::Discriminator& disc,
                                 const std::vector<int>& target_files, int target_speaker,
                                 int adapt_epochs, const TrainingConfig& cfg,
                                 const AblationFlags& flags, params::Adam* opt = nullptr);

    const UttStore& store() const { return store_; }
    const constraints::AuxModels& aux() const { return aux_; }

private:
    const UttStore& store_;
    const constraints::AuxModels& aux_;
    std::map<int, UttData> cache_;
    std::map<int, num::Tensor> centroids_;
};

}  // namespace mfc::train
