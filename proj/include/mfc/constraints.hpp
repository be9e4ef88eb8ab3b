#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfc/corpus.hpp"
#include "mfc/params.hpp"
#include "mfc/tensor.hpp"

namespace mfc::constraints {

// Constraint models: speaker classifier, contrastive speaker indicator,
// style recognizer (SER stand-in), content model, real/fake discriminator,
// and the frozen content-feature extractor that replaces an external ASR
// encoder. All are pretrained on the synthetic corpus and then frozen; the
// conversion model is trained against their outputs.

struct AuxConfig {
    int mel_bins = 16;
    int vocab = 12;
    int n_base_speakers = 20;
    int n_styles = 4;
    int asr_hidden = 24;
    int content_dim = 12;   // extractor feature width == content-model target width
    int cls_hidden = 24;
    int ind_hidden = 24;
    int ind_emb = 16;
    int ind_downsample = 4;
    int ser_hidden = 24;
    int ser_hh_dim = 16;
    int cm_hidden = 24;
    int disc_hidden = 16;

    nlohmann::json to_json() const;
    static AuxConfig from_json(const nlohmann::json& j);
};

struct StyleFeatures {
    num::Tensor h_l;  // early per-frame activations [T, ser_hidden]
    num::Tensor h_m;  // temporally mixed activations [T, ser_hidden]
    num::Tensor h_h;  // pooled pre-classifier vector [ser_hh_dim]
};

class AuxModel {
public:
    virtual ~AuxModel() = default;
    params::ParamStore& params() { return params_; }
    const params::ParamStore& params() const { return params_; }
    bool pretrained() const { return pretrained_; }
    void set_pretrained(bool v) { pretrained_ = v; }
    void freeze() {
        pretrained_ = true;
        params_.set_requires_grad(false);
    }
    virtual std::string kind() const = 0;

protected:
    void require_pretrained(const char* what) const {
        if (!pretrained_) {
            throw LifecycleError(std::string(what) + ": model '" + kind() +
                                 "' used before pretraining completed");
        }
    }
    params::ParamStore params_;
    bool pretrained_ = false;
};

// Frame-level token classifier; its penultimate activations are the content
// features consumed by the conversion model and the content loss target.
class AsrStandin : public AuxModel {
public:
    AsrStandin(const AuxConfig& cfg, uint64_t init_seed);
    std::string kind() const override { return "asr_standin"; }

    num::Tensor features(const num::Tensor& mel) const;        // [T, content_dim]
    num::Tensor logits(const num::Tensor& mel) const;          // [T, vocab]
    std::vector<int> decode_frames(const num::Tensor& mel) const;  // argmax per frame

    // pretraining-phase forward, no lifecycle check
    num::Tensor logits_raw(const num::Tensor& mel) const;

private:
    AuxConfig cfg_;
};

class SpeakerClassifier : public AuxModel {
public:
    SpeakerClassifier(const AuxConfig& cfg, uint64_t init_seed);
    std::string kind() const override { return "speaker_classifier"; }

    num::Tensor probs(const num::Tensor& mel) const;      // [n_base_speakers]
    num::Tensor embedding(const num::Tensor& mel) const;  // penultimate layer
    num::Tensor logits_raw(const num::Tensor& mel) const;
    int n_speakers() const { return cfg_.n_base_speakers; }

private:
    AuxConfig cfg_;
};

// Contrastively trained embedding network; cosine geometry separates
// speakers. Differentiable w.r.t. the input spectrum.
class SpeakerIndicator : public AuxModel {
public:
    SpeakerIndicator(const AuxConfig& cfg, uint64_t init_seed);
    std::string kind() const override { return "speaker_indicator"; }

    num::Tensor embed(const num::Tensor& mel) const;  // [ind_emb]
    num::Tensor embed_raw(const num::Tensor& mel) const;
    int emb_dim() const { return cfg_.ind_emb; }

private:
    AuxConfig cfg_;
};

// Style recognizer; multi-depth hidden activations define the style loss.
class Ser : public AuxModel {
public:
    Ser(const AuxConfig& cfg, uint64_t init_seed);
    std::string kind() const override { return "ser"; }

    StyleFeatures features(const num::Tensor& mel) const;
    num::Tensor logits_raw(const num::Tensor& mel) const;  // style-class logits
    StyleFeatures features_raw(const num::Tensor& mel) const;

private:
    AuxConfig cfg_;
};

// Regressor trained to reproduce the extractor's content features from mel.
class ContentModel : public AuxModel {
public:
    ContentModel(const AuxConfig& cfg, uint64_t init_seed);
    std::string kind() const override { return "content_model"; }

    num::Tensor features(const num::Tensor& mel) const;  // [T, content_dim]
    num::Tensor features_raw(const num::Tensor& mel) const;

private:
    AuxConfig cfg_;
};

class Discriminator : public AuxModel {
public:
    Discriminator(const AuxConfig& cfg, uint64_t init_seed);
    std::string kind() const override { return "discriminator"; }

    num::Tensor score(const num::Tensor& mel) const;  // scalar

private:
    AuxConfig cfg_;
};

// The frozen constraint-model bundle used by training and evaluation.
struct AuxModels {
    AuxConfig cfg;
    std::unique_ptr<AsrStandin> asr;
    std::unique_ptr<SpeakerClassifier> classifier;
    std::unique_ptr<SpeakerIndicator> indicator;
    std::unique_ptr<Ser> ser;
    std::unique_ptr<ContentModel> content;

    std::string combined_hash() const;
};

// ---- losses ----

// (1 - cos(anchor, positive)) + mean over negatives of cos(anchor, negative)
num::Tensor loss_triplet(const num::Tensor& anchor, const num::Tensor& positive,
                         const std::vector<num::Tensor>& negatives);

// 1 - cos(predicted embedding, target-speaker embedding)
num::Tensor loss_spk_cos(const num::Tensor& z_pred, const num::Tensor& z_target);

// cross-entropy of the classifier on a predicted spectrum; base speakers only
num::Tensor loss_spk_ce(const SpeakerClassifier& cls, const num::Tensor& pred_mel, int speaker_id);

struct StyleLevels {
    bool l = true;
    bool m = true;
    bool h = true;
};

// per-level mean-squared feature distances between source and prediction;
// gradients flow into pred_mel only
struct StyleLossParts {
    std::optional<num::Tensor> l, m, h;
    num::Tensor total;
};
StyleLossParts loss_style(const Ser& ser, const num::Tensor& source_mel,
                          const num::Tensor& pred_mel, StyleLevels levels);

// same loss against precomputed source features (training-loop fast path)
StyleLossParts loss_style_vs_targets(const Ser& ser, const StyleFeatures& targets,
                                     const num::Tensor& pred_mel, StyleLevels levels);

// mean-squared content-feature distance; gradient into pred_mel only
num::Tensor loss_content(const ContentModel& cm, const num::Tensor& source_mel,
                         const num::Tensor& pred_mel);

num::Tensor loss_content_vs_target(const ContentModel& cm, const num::Tensor& target,
                                   const num::Tensor& pred_mel);

// ||1 - D(y)||^2 + ||D(y_hat)||^2 (or the unsquared second term)
num::Tensor loss_real_fake(const Discriminator& disc, const num::Tensor& real_mel,
                           const num::Tensor& fake_mel, bool unsquared_fake_term = false);

// ||1 - D(y_hat)||^2
num::Tensor loss_adv(const Discriminator& disc, const num::Tensor& pred_mel);

// ---- adapters ----

num::Tensor mel_tensor(const corpus::Utterance& u);
num::Tensor lf0_column(const corpus::Utterance& u);     // [T,1]
num::Tensor energy_column(const corpus::Utterance& u);  // [T,1]

}  // namespace mfc::constraints
