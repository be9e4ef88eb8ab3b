#pragma once

#include "json.hpp"
#include "mfc/constraints.hpp"
#include "mfc/trainer.hpp"

namespace mfc::train {

struct PretrainConfig {
    uint64_t seed = 11;
    int asr_epochs = 6;
    int cls_epochs = 8;
    int ser_epochs = 12;
    int cm_epochs = 6;
    int ind_steps = 2500;
    int ind_negatives = 15;  // negative samples per contrastive step
    int batch = 16;
    double lr = 2e-3;

    nlohmann::json to_json() const;
    static PretrainConfig from_json(const nlohmann::json& j);
};

struct PretrainSummary {
    double asr_frame_acc_heldout = 0.0;
    double asr_frame_acc_noiseless = 0.0;
    double cls_acc_heldout = 0.0;
    double ser_acc_heldout = 0.0;
    double content_mse_heldout = 0.0;

    nlohmann::json to_json() const;
};

// Trains all constraint models on the base split and freezes them.
constraints::AuxModels pretrain_aux(const UttStore& store, const constraints::AuxConfig& aux_cfg,
                                    const PretrainConfig& cfg, PretrainSummary* summary);

}  // namespace mfc::train
