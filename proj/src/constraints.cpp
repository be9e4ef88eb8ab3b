#include "mfc/constraints.hpp"

#include <cmath>

#include "mfc/hash.hpp"

namespace mfc::constraints {

using num::Tensor;
using nlohmann::json;

json AuxConfig::to_json() const {
    return json{{"mel_bins", mel_bins},       {"vocab", vocab},
                {"n_base_speakers", n_base_speakers}, {"n_styles", n_styles},
                {"asr_hidden", asr_hidden},   {"content_dim", content_dim},
                {"cls_hidden", cls_hidden},   {"ind_hidden", ind_hidden},
                {"ind_emb", ind_emb},         {"ind_downsample", ind_downsample},
                {"ser_hidden", ser_hidden},   {"ser_hh_dim", ser_hh_dim},
                {"cm_hidden", cm_hidden},     {"disc_hidden", disc_hidden}};
}

AuxConfig AuxConfig::from_json(const json& j) {
    AuxConfig c;
    c.mel_bins = j.at("mel_bins").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.n_base_speakers = j.at("n_base_speakers").get<int>();
    c.n_styles = j.at("n_styles").get<int>();
    c.asr_hidden = j.at("asr_hidden").get<int>();
    c.content_dim = j.at("content_dim").get<int>();
    c.cls_hidden = j.at("cls_hidden").get<int>();
    c.ind_hidden = j.at("ind_hidden").get<int>();
    c.ind_emb = j.at("ind_emb").get<int>();
    c.ind_downsample = j.at("ind_downsample").get<int>();
    c.ser_hidden = j.at("ser_hidden").get<int>();
    c.ser_hh_dim = j.at("ser_hh_dim").get<int>();
    c.cm_hidden = j.at("cm_hidden").get<int>();
    c.disc_hidden = j.at("disc_hidden").get<int>();
    return c;
}

// ---- content-feature extractor (frozen ASR replacement) ----

AsrStandin::AsrStandin(const AuxConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    params_.create("l1.W", {cfg.mel_bins, cfg.asr_hidden}, rng);
    params_.create("l1.b", {cfg.asr_hidden}, rng);
    params_.create("feat.W", {cfg.asr_hidden, cfg.content_dim}, rng);
    params_.create("feat.b", {cfg.content_dim}, rng);
    params_.create("head.W", {cfg.content_dim, cfg.vocab}, rng);
    params_.create("head.b", {cfg.vocab}, rng);
}

static Tensor affine(const params::ParamStore& p, const std::string& stem, const Tensor& x) {
    return num::add(num::matmul(x, p.get(stem + ".W")), p.get(stem + ".b"));
}

num::Tensor AsrStandin::logits_raw(const Tensor& mel) const {
    Tensor h = num::tanh_op(affine(params_, "l1", mel));
    Tensor f = num::tanh_op(affine(params_, "feat", h));
    return affine(params_, "head", f);
}

num::Tensor AsrStandin::features(const Tensor& mel) const {
    require_pretrained("asr features");
    Tensor h = num::tanh_op(affine(params_, "l1", mel));
    return num::tanh_op(affine(params_, "feat", h));
}

num::Tensor AsrStandin::logits(const Tensor& mel) const {
    require_pretrained("asr logits");
    return logits_raw(mel);
}

std::vector<int> AsrStandin::decode_frames(const Tensor& mel) const {
    require_pretrained("asr decode");
    num::NoTape guard;
    Tensor lg = logits_raw(mel);
    const int T = lg.rows(), V = lg.cols();
    std::vector<int> out(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        int best = 0;
        for (int j = 1; j < V; ++j) {
            if (lg.at(t, j) > lg.at(t, best)) best = j;
        }
        out[static_cast<size_t>(t)] = best;
    }
    return out;
}

// ---- speaker classifier ----

SpeakerClassifier::SpeakerClassifier(const AuxConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    params_.create("l1.W", {cfg.mel_bins, cfg.cls_hidden}, rng);
    params_.create("l1.b", {cfg.cls_hidden}, rng);
    params_.create("out.W", {cfg.cls_hidden, cfg.n_base_speakers}, rng);
    params_.create("out.b", {cfg.n_base_speakers}, rng);
}

num::Tensor SpeakerClassifier::logits_raw(const Tensor& mel) const {
    Tensor pooled = num::mean_pool_time(mel);
    Tensor emb = num::tanh_op(num::add(num::matmul(pooled, params_.get("l1.W")), params_.get("l1.b")));
    return num::add(num::matmul(emb, params_.get("out.W")), params_.get("out.b"));
}

num::Tensor SpeakerClassifier::embedding(const Tensor& mel) const {
    require_pretrained("classifier embedding");
    Tensor pooled = num::mean_pool_time(mel);
    return num::tanh_op(num::add(num::matmul(pooled, params_.get("l1.W")), params_.get("l1.b")));
}

num::Tensor SpeakerClassifier::probs(const Tensor& mel) const {
    require_pretrained("classifier probabilities");
    return num::softmax(logits_raw(mel));
}

// ---- speaker indicator ----

SpeakerIndicator::SpeakerIndicator(const AuxConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    params_.create("l1.W", {cfg.mel_bins, cfg.ind_hidden}, rng);
    params_.create("l1.b", {cfg.ind_hidden}, rng);
    params_.create("l2.W", {cfg.ind_hidden, cfg.ind_hidden}, rng);
    params_.create("l2.b", {cfg.ind_hidden}, rng);
    params_.create("l3.W", {cfg.ind_hidden, cfg.ind_hidden}, rng);
    params_.create("l3.b", {cfg.ind_hidden}, rng);
    params_.create("out.W", {cfg.ind_hidden, cfg.ind_emb}, rng);
    params_.create("out.b", {cfg.ind_emb}, rng);
}

num::Tensor SpeakerIndicator::embed_raw(const Tensor& mel) const {
    Tensor d = num::downsample_time(mel, cfg_.ind_downsample);
    Tensor h = num::tanh_op(affine(params_, "l1", d));
    h = num::tanh_op(affine(params_, "l2", h));
    h = num::tanh_op(affine(params_, "l3", h));
    Tensor pooled = num::mean_pool_time(h);
    Tensor z = num::add(num::matmul(pooled, params_.get("out.W")), params_.get("out.b"));
    // unit-normalized embedding, the usual contrastive-representation choice
    Tensor norm = num::sqrt_op(num::add_const(num::dot(z, z), 1e-12));
    return num::divide(z, norm);
}

num::Tensor SpeakerIndicator::embed(const Tensor& mel) const {
    require_pretrained("speaker embedding");
    return embed_raw(mel);
}

// ---- style recognizer ----

Ser::Ser(const AuxConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    params_.create("l1.W", {cfg.mel_bins, cfg.ser_hidden}, rng);
    params_.create("l1.b", {cfg.ser_hidden}, rng);
    params_.create("l2.W", {3 * cfg.ser_hidden, cfg.ser_hidden}, rng);
    params_.create("l2.b", {cfg.ser_hidden}, rng);
    params_.create("hh.W", {cfg.ser_hidden, cfg.ser_hh_dim}, rng);
    params_.create("hh.b", {cfg.ser_hh_dim}, rng);
    params_.create("head.W", {cfg.ser_hh_dim, cfg.n_styles}, rng);
    params_.create("head.b", {cfg.n_styles}, rng);
}

StyleFeatures Ser::features_raw(const Tensor& mel) const {
    StyleFeatures f;
    f.h_l = num::tanh_op(affine(params_, "l1", mel));
    Tensor mixed = num::concat_cols({f.h_l, num::shift_rows(f.h_l, 1), num::shift_rows(f.h_l, -1)});
    f.h_m = num::tanh_op(affine(params_, "l2", mixed));
    Tensor pooled = num::mean_pool_time(f.h_m);
    f.h_h = num::tanh_op(num::add(num::matmul(pooled, params_.get("hh.W")), params_.get("hh.b")));
    return f;
}

StyleFeatures Ser::features(const Tensor& mel) const {
    require_pretrained("style features");
    return features_raw(mel);
}

num::Tensor Ser::logits_raw(const Tensor& mel) const {
    StyleFeatures f = features_raw(mel);
    return num::add(num::matmul(f.h_h, params_.get("head.W")), params_.get("head.b"));
}

// ---- content model ----

ContentModel::ContentModel(const AuxConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    params_.create("l1.W", {3 * cfg.mel_bins, cfg.cm_hidden}, rng);
    params_.create("l1.b", {cfg.cm_hidden}, rng);
    params_.create("out.W", {cfg.cm_hidden, cfg.content_dim}, rng);
    params_.create("out.b", {cfg.content_dim}, rng);
}

num::Tensor ContentModel::features_raw(const Tensor& mel) const {
    Tensor mixed = num::concat_cols({mel, num::shift_rows(mel, 1), num::shift_rows(mel, -1)});
    Tensor h = num::tanh_op(affine(params_, "l1", mixed));
    return affine(params_, "out", h);
}

num::Tensor ContentModel::features(const Tensor& mel) const {
    require_pretrained("content features");
    return features_raw(mel);
}

// ---- discriminator ----

Discriminator::Discriminator(const AuxConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    params_.create("l1.W", {cfg.mel_bins, cfg.disc_hidden}, rng);
    params_.create("l1.b", {cfg.disc_hidden}, rng);
    params_.create("out.W", {cfg.disc_hidden, 1}, rng);
    params_.create("out.b", {1}, rng);
}

num::Tensor Discriminator::score(const Tensor& mel) const {
    Tensor h = num::tanh_op(affine(params_, "l1", mel));
    Tensor pooled = num::mean_pool_time(h);
    Tensor out = num::add(num::matmul(pooled, params_.get("out.W")), params_.get("out.b"));
    return num::select_index(out, 0);
}

std::string AuxModels::combined_hash() const {
    std::string acc;
    for (const AuxModel* m :
         {static_cast<const AuxModel*>(asr.get()), static_cast<const AuxModel*>(classifier.get()),
          static_cast<const AuxModel*>(indicator.get()), static_cast<const AuxModel*>(ser.get()),
          static_cast<const AuxModel*>(content.get())}) {
        acc += m->kind();
        acc += ':';
        acc += m->params().content_hash();
        acc += '\n';
    }
    return sha256_hex(acc);
}

// ---- losses ----

num::Tensor loss_triplet(const Tensor& anchor, const Tensor& positive,
                         const std::vector<Tensor>& negatives) {
    if (negatives.empty()) {
        throw ContractViolation("loss_triplet: need at least one negative sample");
    }
    Tensor total = num::sub(num::Tensor::scalar(1.0), num::cosine(anchor, positive));
    Tensor acc;
    for (const auto& n : negatives) {
        Tensor c = num::cosine(anchor, n);
        acc = acc.defined() ? num::add(acc, c) : c;
    }
    return num::add(total, num::scale(acc, 1.0 / static_cast<double>(negatives.size())));
}

num::Tensor loss_spk_cos(const Tensor& z_pred, const Tensor& z_target) {
    return num::sub(num::Tensor::scalar(1.0), num::cosine(z_pred, z_target));
}

num::Tensor loss_spk_ce(const SpeakerClassifier& cls, const Tensor& pred_mel, int speaker_id) {
    if (speaker_id < 0 || speaker_id >= cls.n_speakers()) {
        throw ContractViolation("loss_spk_ce: speaker " + std::to_string(speaker_id) +
                                " is not a base speaker (classifier covers 0.." +
                                std::to_string(cls.n_speakers() - 1) + ")");
    }
    if (!cls.pretrained()) {
        throw LifecycleError("loss_spk_ce: classifier used before pretraining completed");
    }
    return num::cross_entropy(cls.logits_raw(pred_mel), speaker_id);
}

StyleLossParts loss_style_vs_targets(const Ser& ser, const StyleFeatures& target,
                                     const Tensor& pred_mel, StyleLevels levels) {
    if (!ser.pretrained()) {
        throw LifecycleError("loss_style: style recognizer used before pretraining completed");
    }
    if (!levels.l && !levels.m && !levels.h) {
        throw ContractViolation("loss_style: empty level set");
    }
    StyleFeatures pred = ser.features_raw(pred_mel);

    StyleLossParts parts;
    if (levels.l) parts.l = num::mse(pred.h_l, target.h_l);
    if (levels.m) parts.m = num::mse(pred.h_m, target.h_m);
    if (levels.h) parts.h = num::mse(pred.h_h, target.h_h);
    Tensor total;
    for (const auto& p : {parts.l, parts.m, parts.h}) {
        if (p) total = total.defined() ? num::add(total, *p) : *p;
    }
    parts.total = total;
    return parts;
}

StyleLossParts loss_style(const Ser& ser, const Tensor& source_mel, const Tensor& pred_mel,
                          StyleLevels levels) {
    if (!ser.pretrained()) {
        throw LifecycleError("loss_style: style recognizer used before pretraining completed");
    }
    StyleFeatures target;
    {
        num::NoTape guard;
        target = ser.features_raw(source_mel);
    }
    return loss_style_vs_targets(ser, target, pred_mel, levels);
}

num::Tensor loss_content_vs_target(const ContentModel& cm, const Tensor& target,
                                   const Tensor& pred_mel) {
    if (!cm.pretrained()) {
        throw LifecycleError("loss_content: content model used before pretraining completed");
    }
    return num::mse(cm.features_raw(pred_mel), target);
}

num::Tensor loss_content(const ContentModel& cm, const Tensor& source_mel, const Tensor& pred_mel) {
    if (!cm.pretrained()) {
        throw LifecycleError("loss_content: content model used before pretraining completed");
    }
    Tensor target;
    {
        num::NoTape guard;
        target = cm.features_raw(source_mel);
    }
    return loss_content_vs_target(cm, target, pred_mel);
}

num::Tensor loss_real_fake(const Discriminator& disc, const Tensor& real_mel,
                           const Tensor& fake_mel, bool unsquared_fake_term) {
    Tensor dr = disc.score(real_mel);
    Tensor df = disc.score(fake_mel);
    Tensor one = num::Tensor::scalar(1.0);
    Tensor real_term = num::mul(num::sub(one, dr), num::sub(one, dr));
    Tensor fake_term;
    if (unsquared_fake_term) {
        fake_term = num::add(num::relu(df), num::relu(num::scale(df, -1.0)));  // |D(fake)|
    } else {
        fake_term = num::mul(df, df);
    }
    return num::add(real_term, fake_term);
}

num::Tensor loss_adv(const Discriminator& disc, const Tensor& pred_mel) {
    Tensor df = disc.score(pred_mel);
    Tensor one = num::Tensor::scalar(1.0);
    return num::mul(num::sub(one, df), num::sub(one, df));
}

// ---- adapters ----

num::Tensor mel_tensor(const corpus::Utterance& u) {
    return num::Tensor::matrix(u.t_frames, u.bins, u.mel);
}

num::Tensor lf0_column(const corpus::Utterance& u) {
    return num::Tensor::matrix(u.t_frames, 1, u.lf0);
}

num::Tensor energy_column(const corpus::Utterance& u) {
    return num::Tensor::matrix(u.t_frames, 1, u.energy);
}

}  // namespace mfc::constraints
