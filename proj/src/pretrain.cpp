#include "mfc/pretrain.hpp"

#include <algorithm>
#include <memory>

namespace mfc::train {

using constraints::AuxConfig;
using constraints::AuxModels;
using num::Tensor;
using nlohmann::json;

json PretrainConfig::to_json() const {
    return json{{"seed", seed},           {"asr_epochs", asr_epochs}, {"cls_epochs", cls_epochs},
                {"ser_epochs", ser_epochs}, {"cm_epochs", cm_epochs},   {"ind_steps", ind_steps},
                {"ind_negatives", ind_negatives}, {"batch", batch},   {"lr", lr}};
}

PretrainConfig PretrainConfig::from_json(const json& j) {
    PretrainConfig c;
    c.seed = j.at("seed").get<uint64_t>();
    c.asr_epochs = j.at("asr_epochs").get<int>();
    c.cls_epochs = j.at("cls_epochs").get<int>();
    c.ser_epochs = j.at("ser_epochs").get<int>();
    c.cm_epochs = j.at("cm_epochs").get<int>();
    c.ind_steps = j.at("ind_steps").get<int>();
    c.ind_negatives = j.at("ind_negatives").get<int>();
    c.batch = j.at("batch").get<int>();
    c.lr = j.at("lr").get<double>();
    return c;
}

json PretrainSummary::to_json() const {
    return json{{"asr_frame_acc_heldout", asr_frame_acc_heldout},
                {"asr_frame_acc_noiseless", asr_frame_acc_noiseless},
                {"cls_acc_heldout", cls_acc_heldout},
                {"ser_acc_heldout", ser_acc_heldout},
                {"content_mse_heldout", content_mse_heldout}};
}

namespace {

// runs fn over shuffled batches for the given number of epochs
void epoch_loop(const std::vector<int>& files, int epochs, int batch, Rng& rng,
                const std::function<void(const std::vector<int>&)>& step_fn) {
    for (int e = 0; e < epochs; ++e) {
        std::vector<int> order = files;
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(batch)) {
            std::vector<int> b(order.begin() + static_cast<std::ptrdiff_t>(pos),
                               order.begin() + static_cast<std::ptrdiff_t>(
                                                   std::min(order.size(), pos + static_cast<size_t>(batch))));
            step_fn(b);
        }
    }
}

}  // namespace

AuxModels pretrain_aux(const UttStore& store, const AuxConfig& aux_cfg, const PretrainConfig& cfg,
                       PretrainSummary* summary) {
    const auto& manifest = store.manifest;
    AuxModels aux;
    aux.cfg = aux_cfg;
    aux.asr = std::make_unique<constraints::AsrStandin>(aux_cfg, seed_chain(cfg.seed, 11));
    aux.classifier = std::make_unique<constraints::SpeakerClassifier>(aux_cfg, seed_chain(cfg.seed, 12));
    aux.indicator = std::make_unique<constraints::SpeakerIndicator>(aux_cfg, seed_chain(cfg.seed, 13));
    aux.ser = std::make_unique<constraints::Ser>(aux_cfg, seed_chain(cfg.seed, 14));
    aux.content = std::make_unique<constraints::ContentModel>(aux_cfg, seed_chain(cfg.seed, 15));

    std::vector<int> train_files = manifest.file_indices("base_train");
    if (train_files.empty()) throw ContractViolation("pretrain_aux: empty base training split");
    std::vector<int> heldout = manifest.file_indices("test");
    {
        auto refs = manifest.file_indices("target_ref");
        heldout.insert(heldout.end(), refs.begin(), refs.end());
    }

    auto mel_of = [&](int idx) { return store.mels[static_cast<size_t>(idx)]; };
    auto utt_of = [&](int idx) -> const corpus::Utterance& {
        return store.utts[static_cast<size_t>(idx)];
    };

    // content-feature extractor: frame-level token classification
    {
        params::Adam opt;
        Rng rng(seed_chain(cfg.seed, 21));
        epoch_loop(train_files, cfg.asr_epochs, cfg.batch, rng, [&](const std::vector<int>& batch) {
            num::Tape tape;
            Tensor total;
            for (int idx : batch) {
                Tensor l = num::row_cross_entropy(aux.asr->logits_raw(mel_of(idx)),
                                                  corpus::frame_tokens(utt_of(idx)));
                total = total.defined() ? num::add(total, l) : l;
            }
            num::backward(num::scale(total, 1.0 / static_cast<double>(batch.size())));
            opt.step(aux.asr->params(), cfg.lr);
        });
        aux.asr->freeze();
    }

    // speaker classifier: utterance-level cross entropy over base speakers
    {
        params::Adam opt;
        Rng rng(seed_chain(cfg.seed, 22));
        epoch_loop(train_files, cfg.cls_epochs, cfg.batch, rng, [&](const std::vector<int>& batch) {
            num::Tape tape;
            Tensor total;
            for (int idx : batch) {
                Tensor l = num::cross_entropy(aux.classifier->logits_raw(mel_of(idx)),
                                              utt_of(idx).speaker_id);
                total = total.defined() ? num::add(total, l) : l;
            }
            num::backward(num::scale(total, 1.0 / static_cast<double>(batch.size())));
            opt.step(aux.classifier->params(), cfg.lr);
        });
        aux.classifier->freeze();
    }

    // speaker indicator: contrastive anchor/positive/negatives per step
    {
        params::Adam opt;
        Rng rng(seed_chain(cfg.seed, 23));
        std::vector<std::vector<int>> by_speaker(static_cast<size_t>(aux_cfg.n_base_speakers));
        for (int idx : train_files) {
            by_speaker[static_cast<size_t>(utt_of(idx).speaker_id)].push_back(idx);
        }
        for (int s = 0; s < aux_cfg.n_base_speakers; ++s) {
            if (by_speaker[static_cast<size_t>(s)].size() < 2) {
                throw ContractViolation("pretrain_aux: speaker " + std::to_string(s) +
                                        " has fewer than 2 training utterances");
            }
        }
        for (int step = 0; step < cfg.ind_steps; ++step) {
            const int spk = rng.uniform_int(0, aux_cfg.n_base_speakers - 1);
            const auto& own = by_speaker[static_cast<size_t>(spk)];
            const int a = rng.uniform_int(0, static_cast<int>(own.size()) - 1);
            int p = rng.uniform_int(0, static_cast<int>(own.size()) - 2);
            if (p >= a) ++p;

            num::Tape tape;
            Tensor z_a = aux.indicator->embed_raw(mel_of(own[static_cast<size_t>(a)]));
            Tensor z_p = aux.indicator->embed_raw(mel_of(own[static_cast<size_t>(p)]));
            std::vector<Tensor> negs;
            negs.reserve(static_cast<size_t>(cfg.ind_negatives));
            for (int k = 0; k < cfg.ind_negatives; ++k) {
                int other = rng.uniform_int(0, aux_cfg.n_base_speakers - 2);
                if (other >= spk) ++other;
                const auto& pool = by_speaker[static_cast<size_t>(other)];
                negs.push_back(aux.indicator->embed_raw(
                    mel_of(pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))])));
            }
            num::backward(constraints::loss_triplet(z_a, z_p, negs));
            opt.step(aux.indicator->params(), cfg.lr);
        }
        aux.indicator->freeze();
    }

    // style recognizer: style-class cross entropy
    {
        params::Adam opt;
        Rng rng(seed_chain(cfg.seed, 24));
        epoch_loop(train_files, cfg.ser_epochs, cfg.batch, rng, [&](const std::vector<int>& batch) {
            num::Tape tape;
            Tensor total;
            for (int idx : batch) {
                Tensor l = num::cross_entropy(aux.ser->logits_raw(mel_of(idx)), utt_of(idx).style_class);
                total = total.defined() ? num::add(total, l) : l;
            }
            num::backward(num::scale(total, 1.0 / static_cast<double>(batch.size())));
            opt.step(aux.ser->params(), cfg.lr);
        });
        aux.ser->freeze();
    }

    // content model: regress the frozen extractor's features from mel
    {
        std::map<int, Tensor> targets;
        {
            num::NoTape guard;
            for (int idx : train_files) targets.emplace(idx, aux.asr->features(mel_of(idx)));
        }
        params::Adam opt;
        Rng rng(seed_chain(cfg.seed, 25));
        epoch_loop(train_files, cfg.cm_epochs, cfg.batch, rng, [&](const std::vector<int>& batch) {
            num::Tape tape;
            Tensor total;
            for (int idx : batch) {
                Tensor l = num::mse(aux.content->features_raw(mel_of(idx)), targets.at(idx));
                total = total.defined() ? num::add(total, l) : l;
            }
            num::backward(num::scale(total, 1.0 / static_cast<double>(batch.size())));
            opt.step(aux.content->params(), cfg.lr);
        });
        aux.content->freeze();
    }

    if (summary) {
        num::NoTape guard;
        // frame-token accuracy on held-out data, default noise
        int64_t tok_total = 0, tok_ok = 0;
        for (int idx : heldout) {
            auto decoded = aux.asr->decode_frames(mel_of(idx));
            auto truth = corpus::frame_tokens(utt_of(idx));
            for (size_t i = 0; i < truth.size(); ++i) {
                ++tok_total;
                tok_ok += (decoded[i] == truth[i]);
            }
        }
        summary->asr_frame_acc_heldout = tok_total ? static_cast<double>(tok_ok) / tok_total : 0.0;

        // noiseless accuracy on freshly synthesized utterances
        {
            corpus::CorpusConfig noiseless = manifest.cfg;
            noiseless.noise_sigma = 0.0;
            Rng rng(seed_chain(cfg.seed, 31));
            int64_t total = 0, ok = 0;
            for (const auto& sp : manifest.speakers) {
                std::vector<uint16_t> tokens(16);
                for (auto& t : tokens) t = static_cast<uint16_t>(rng.uniform_int(0, noiseless.vocab - 1));
                corpus::StyleSpec style = corpus::make_style_spec(
                    rng.uniform_int(0, noiseless.n_styles - 1), rng.uniform(-0.1, 0.1),
                    rng.uniform(-0.1, 0.1));
                corpus::Utterance u =
                    corpus::synthesize_mel(sp, tokens, style, 0, noiseless, manifest.templates);
                auto decoded = aux.asr->decode_frames(constraints::mel_tensor(u));
                auto truth = corpus::frame_tokens(u);
                for (size_t i = 0; i < truth.size(); ++i) {
                    ++total;
                    ok += (decoded[i] == truth[i]);
                }
            }
            summary->asr_frame_acc_noiseless = total ? static_cast<double>(ok) / total : 0.0;
        }

        // classifier accuracy on base-speaker held-out utterances
        {
            int64_t total = 0, ok = 0;
            for (int idx : manifest.file_indices("test")) {
                Tensor p = aux.classifier->probs(mel_of(idx));
                int best = 0;
                for (int j = 1; j < aux_cfg.n_base_speakers; ++j) {
                    if (p.at(j) > p.at(best)) best = j;
                }
                ++total;
                ok += (best == utt_of(idx).speaker_id);
            }
            summary->cls_acc_heldout = total ? static_cast<double>(ok) / total : 0.0;
        }

        // style accuracy on held-out utterances
        {
            int64_t total = 0, ok = 0;
            for (int idx : heldout) {
                Tensor lg = aux.ser->logits_raw(mel_of(idx));
                int best = 0;
                for (int j = 1; j < aux_cfg.n_styles; ++j) {
                    if (lg.at(j) > lg.at(best)) best = j;
                }
                ++total;
                ok += (best == utt_of(idx).style_class);
            }
            summary->ser_acc_heldout = total ? static_cast<double>(ok) / total : 0.0;
        }

        // content-model regression error on held-out utterances
        {
            double acc = 0;
            for (int idx : heldout) {
                acc += num::mse(aux.content->features(mel_of(idx)), aux.asr->features(mel_of(idx))).item();
            }
            summary->content_mse_heldout = heldout.empty() ? 0.0 : acc / static_cast<double>(heldout.size());
        }
    }
    return aux;
}

}  // namespace mfc::train
