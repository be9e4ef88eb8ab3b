#include "mfc/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace mfc::train {

using constraints::StyleLevels;
using num::Tensor;
using nlohmann::json;

TrainingConfig TrainingConfig::published_base() {
    TrainingConfig c;
    c.alpha = 0;
    c.lambda_c = 1.0;
    c.lambda_adv = 0.05;
    c.lambda_spk = 0.1;  // unused while alpha = 0
    c.lr_init = 5e-5;
    c.lr_decay = 0.5;
    c.decay_every = 30;
    c.epochs = 400;
    c.disc_update_every = 1;
    return c;
}

TrainingConfig TrainingConfig::published_adapt() {
    TrainingConfig c = published_base();
    c.alpha = 1;
    c.lambda_spk = 0.1;
    c.lambda_c = 0.1;
    c.lambda_adv = 0.05;
    c.simu_batch = 10;
    c.simu_batch_large = 25;
    return c;
}

json TrainingConfig::to_json() const {
    return json{{"alpha", alpha},
                {"lambda_spk", lambda_spk},
                {"lambda_c", lambda_c},
                {"lambda_adv", lambda_adv},
                {"lr_init", lr_init},
                {"lr_decay", lr_decay},
                {"decay_every", decay_every},
                {"epochs", epochs},
                {"disc_update_every", disc_update_every},
                {"simu_batch", simu_batch},
                {"simu_batch_large", simu_batch_large},
                {"seed", seed},
                {"wreg_mu", wreg_mu},
                {"mel_l1_weight", mel_l1_weight},
                {"disc_fake_unsquared", disc_fake_unsquared},
                {"batch_size", batch_size},
                {"grad_clip", grad_clip},
                {"alternate_modes", alternate_modes}};
}

TrainingConfig TrainingConfig::from_json(const json& j) {
    TrainingConfig c;
    c.alpha = j.at("alpha").get<int>();
    c.lambda_spk = j.at("lambda_spk").get<double>();
    c.lambda_c = j.at("lambda_c").get<double>();
    c.lambda_adv = j.at("lambda_adv").get<double>();
    c.lr_init = j.at("lr_init").get<double>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.decay_every = j.at("decay_every").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.disc_update_every = j.at("disc_update_every").get<int>();
    c.simu_batch = j.at("simu_batch").get<int>();
    c.simu_batch_large = j.at("simu_batch_large").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.wreg_mu = j.at("wreg_mu").get<double>();
    c.mel_l1_weight = j.at("mel_l1_weight").get<double>();
    c.disc_fake_unsquared = j.at("disc_fake_unsquared").get<bool>();
    c.batch_size = j.at("batch_size").get<int>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.alternate_modes = j.at("alternate_modes").get<bool>();
    return c;
}

double lr_at_epoch(const TrainingConfig& cfg, int epoch) {
    return cfg.lr_init * std::pow(cfg.lr_decay, epoch / cfg.decay_every);
}

json AblationFlags::to_json() const {
    return json{{"no_style", no_style},
                {"no_content", no_content},
                {"no_spk", no_spk},
                {"no_adv", no_adv},
                {"no_simulation", no_simulation}};
}

AblationFlags AblationFlags::from_json(const json& j) {
    AblationFlags f;
    f.no_style = j.value("no_style", false);
    f.no_content = j.value("no_content", false);
    f.no_spk = j.value("no_spk", false);
    f.no_adv = j.value("no_adv", false);
    f.no_simulation = j.value("no_simulation", false);
    return f;
}

std::string AblationFlags::name() const {
    if (no_style) return "no_style";
    if (no_content) return "no_content";
    if (no_spk) return "no_spk";
    if (no_adv) return "no_adv";
    if (no_simulation) return "no_simulation";
    return "full";
}

namespace {
void put_opt(json& j, const char* key, const std::optional<double>& v) {
    j[key] = v ? json(*v) : json(nullptr);
}
}  // namespace

json LossBreakdown::to_json() const {
    json j;
    put_opt(j, "mel", mel);
    put_opt(j, "spk_ce", spk_ce);
    put_opt(j, "spk_cos", spk_cos);
    put_opt(j, "content", content);
    put_opt(j, "style_l", style_l);
    put_opt(j, "style_m", style_m);
    put_opt(j, "style_h", style_h);
    put_opt(j, "adv", adv);
    put_opt(j, "wreg", wreg);
    put_opt(j, "total_recon", total_recon);
    put_opt(j, "total_simu", total_simu);
    return j;
}

json LogRecord::to_json() const {
    json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["mode"] = mode;
    j["lr"] = lr;
    j["breakdown"] = breakdown.to_json();
    if (disc_loss) j["disc_loss"] = *disc_loss;
    return j;
}

UttStore::UttStore(const corpus::CorpusManifest& m, const std::filesystem::path& dir)
    : manifest(m) {
    utts.reserve(m.files.size());
    mels.reserve(m.files.size());
    for (const auto& e : m.files) {
        utts.push_back(corpus::load_utterance(dir / e.path));
        mels.push_back(constraints::mel_tensor(utts.back()));
    }
}

void clip_gradients(params::ParamStore& params, double max_norm) {
    if (max_norm <= 0) return;
    double sq = 0;
    for (const auto& [name, t] : params.items()) {
        if (!t.requires_grad()) continue;
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double scale = max_norm / norm;
    for (auto& [name, t] : params.items()) {
        if (!t.requires_grad()) continue;
        auto& node = *t.node();
        for (double& g : node.grad) g *= scale;
    }
}

num::Tensor loss_weight_reg(const params::ParamStore& theta, const params::ParamStore& theta_base,
                            double mu) {
    if (theta.size() != theta_base.size()) {
        throw ContractViolation("loss_weight_reg: parameter count mismatch (" +
                                std::to_string(theta.size()) + " vs " +
                                std::to_string(theta_base.size()) + ")");
    }
    Tensor acc;
    int64_t elems = 0;
    for (const auto& [name, t] : theta.items()) {
        if (!theta_base.has(name)) {
            throw ContractViolation("loss_weight_reg: base parameters missing '" + name + "'");
        }
        Tensor base = theta_base.get(name);
        if (base.shape() != t.shape()) {
            throw ContractViolation("loss_weight_reg: shape mismatch for '" + name + "'");
        }
        Tensor diff = num::sub(t, base);
        Tensor s = num::sum(num::mul(diff, diff));
        acc = acc.defined() ? num::add(acc, s) : s;
        elems += t.numel();
    }
    return num::scale(acc, mu / static_cast<double>(elems));
}

params::ParamStore snapshot_params(const params::ParamStore& src) {
    params::ParamStore out;
    for (const auto& [name, t] : src.items()) {
        const auto& shape = t.shape();
        std::vector<double> v = t.value();
        if (shape.empty()) out.add(name, Tensor::scalar(v[0]));
        else if (shape.size() == 1) out.add(name, Tensor::vector(std::move(v)));
        else out.add(name, Tensor::matrix(shape[0], shape[1], std::move(v)));
    }
    return out;
}

Trainer::Trainer(const UttStore& store, const constraints::AuxModels& aux)
    : store_(store), aux_(aux) {}

const Trainer::UttData& Trainer::data(int file_index) {
    auto it = cache_.find(file_index);
    if (it != cache_.end()) return it->second;

    num::NoTape guard;
    const corpus::Utterance& u = store_.utts[static_cast<size_t>(file_index)];
    UttData d;
    d.mel = store_.mels[static_cast<size_t>(file_index)];
    d.lf0 = constraints::lf0_column(u);
    d.energy = constraints::energy_column(u);
    d.content = aux_.asr->features(d.mel);
    d.ser_target = aux_.ser->features(d.mel);
    d.content_target = aux_.content->features(d.mel);
    d.speaker_id = u.speaker_id;
    return cache_.emplace(file_index, std::move(d)).first->second;
}

num::Tensor Trainer::centroid_of(const std::vector<int>& file_indices) {
    if (file_indices.empty()) throw ContractViolation("centroid_of: empty file set");
    num::NoTape guard;
    std::vector<double> acc(static_cast<size_t>(aux_.indicator->emb_dim()), 0.0);
    for (int idx : file_indices) {
        Tensor z = aux_.indicator->embed(store_.mels[static_cast<size_t>(idx)]);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += z.at(static_cast<int>(i));
    }
    for (auto& v : acc) v /= static_cast<double>(file_indices.size());
    return Tensor::vector(std::move(acc));
}

num::Tensor Trainer::speaker_centroid(int speaker_id) {
    auto it = centroids_.find(speaker_id);
    if (it != centroids_.end()) return it->second;
    std::vector<int> files = store_.manifest.file_indices("base_train", speaker_id);
    if (files.empty()) {
        throw ContractViolation("speaker_centroid: speaker " + std::to_string(speaker_id) +
                                " has no base training utterances");
    }
    Tensor c = centroid_of(files);
    centroids_.emplace(speaker_id, c);
    return c;
}

Trainer::Objective Trainer::loss_recon(model::VcModel& vc, const std::vector<int>& files, int alpha,
                                       const TrainingConfig& cfg, const AblationFlags& flags,
                                       const num::Tensor* z_target,
                                       const params::ParamStore* theta_base,
                                       const constraints::Discriminator* disc,
                                       bool want_predictions) {
    if (alpha != 0 && alpha != 1) {
        throw ContractViolation("loss_recon: alpha must be 0 or 1, got " + std::to_string(alpha));
    }
    if (alpha == 1 && (!z_target || !theta_base)) {
        throw ContractViolation("loss_recon: adaptation needs a target centroid and base snapshot");
    }
    if (files.empty()) throw ContractViolation("loss_recon: empty batch");

    const double n = static_cast<double>(files.size());
    Objective out;
    Tensor total_graph;
    double mel_sum = 0, ce_sum = 0, cos_sum = 0, content_sum = 0, adv_sum = 0;
    double sl_sum = 0, sm_sum = 0, sh_sum = 0;
    const bool use_adv = !flags.no_adv && cfg.lambda_adv != 0.0 && disc != nullptr;
    const bool use_content = !flags.no_content && cfg.lambda_c != 0.0;
    const bool use_spk_cos = alpha == 1 && !flags.no_spk && cfg.lambda_spk != 0.0;

    for (int idx : files) {
        const UttData& d = data(idx);
        Tensor spk_vec = (alpha == 0) ? speaker_centroid(d.speaker_id) : *z_target;
        auto styles = vc.extract_styles(d.content, d.lf0, d.energy);
        Tensor y_hat = vc.convert(d.content, spk_vec, styles, d.mel);

        Tensor mel_term = num::mse(y_hat, d.mel);
        if (cfg.mel_l1_weight > 0.0) {
            mel_term = num::add(mel_term, num::scale(num::l1(y_hat, d.mel), cfg.mel_l1_weight));
        }
        mel_sum += mel_term.item();
        Tensor utt_total = mel_term;

        if (alpha == 0) {
            Tensor ce = constraints::loss_spk_ce(*aux_.classifier, y_hat, d.speaker_id);
            ce_sum += ce.item();
            utt_total = num::add(utt_total, ce);
        } else if (use_spk_cos) {
            Tensor sc = constraints::loss_spk_cos(aux_.indicator->embed(y_hat), *z_target);
            cos_sum += sc.item();
            utt_total = num::add(utt_total, num::scale(sc, cfg.lambda_spk));
        }
        if (use_content) {
            Tensor c = constraints::loss_content_vs_target(*aux_.content, d.content_target, y_hat);
            content_sum += c.item();
            utt_total = num::add(utt_total, num::scale(c, cfg.lambda_c));
        }
        if (!flags.no_style) {
            auto parts = constraints::loss_style_vs_targets(*aux_.ser, d.ser_target, y_hat, {});
            sl_sum += parts.l->item();
            sm_sum += parts.m->item();
            sh_sum += parts.h->item();
            utt_total = num::add(utt_total, parts.total);
        }
        if (use_adv) {
            Tensor a = constraints::loss_adv(*disc, y_hat);
            adv_sum += a.item();
            utt_total = num::add(utt_total, num::scale(a, cfg.lambda_adv));
        }
        total_graph = total_graph.defined() ? num::add(total_graph, utt_total) : utt_total;
        if (want_predictions) out.predictions.push_back(y_hat.value());
    }
    total_graph = num::scale(total_graph, 1.0 / n);

    LossBreakdown& bd = out.breakdown;
    bd.mel = mel_sum / n;
    if (alpha == 0) bd.spk_ce = ce_sum / n;
    if (use_spk_cos) bd.spk_cos = cos_sum / n;
    if (use_content) bd.content = content_sum / n;
    if (!flags.no_style) {
        bd.style_l = sl_sum / n;
        bd.style_m = sm_sum / n;
        bd.style_h = sh_sum / n;
    }
    if (use_adv) bd.adv = adv_sum / n;

    if (alpha == 1) {
        Tensor wreg = loss_weight_reg(vc.params(), *theta_base, cfg.wreg_mu);
        bd.wreg = wreg.item();
        total_graph = num::add(total_graph, wreg);
    }
    bd.total_recon = total_graph.item();
    out.total = total_graph;
    return out;
}

Trainer::Objective Trainer::loss_simu(model::VcModel& vc, const std::vector<int>& source_files,
                                      int target_speaker, const num::Tensor& target_spk_vec,
                                      const TrainingConfig& cfg, const AblationFlags& flags,
                                      const constraints::Discriminator* disc) {
    if (source_files.empty()) throw ContractViolation("loss_simu: empty source batch");
    const double n = static_cast<double>(source_files.size());
    Objective out;
    Tensor total_graph;
    double cos_sum = 0, content_sum = 0, adv_sum = 0, sm_sum = 0, sh_sum = 0;
    const bool use_adv = !flags.no_adv && cfg.lambda_adv != 0.0 && disc != nullptr;
    const bool use_content = !flags.no_content && cfg.lambda_c != 0.0;
    const bool use_spk = !flags.no_spk && cfg.lambda_spk != 0.0;

    for (int idx : source_files) {
        const UttData& d = data(idx);
        if (d.speaker_id == target_speaker) {
            throw ContractViolation("loss_simu: simulation source speaker " +
                                    std::to_string(d.speaker_id) + " equals the target speaker");
        }
        auto styles = vc.extract_styles(d.content, d.lf0, d.energy);
        Tensor y_hat = vc.convert(d.content, target_spk_vec, styles, std::nullopt);

        Tensor utt_total;
        auto add_term = [&](const Tensor& t, double w) {
            Tensor wt = (w == 1.0) ? t : num::scale(t, w);
            utt_total = utt_total.defined() ? num::add(utt_total, wt) : wt;
        };
        if (use_spk) {
            Tensor sc = constraints::loss_spk_cos(aux_.indicator->embed(y_hat), target_spk_vec);
            cos_sum += sc.item();
            add_term(sc, cfg.lambda_spk);
        }
        if (use_content) {
            Tensor c = constraints::loss_content_vs_target(*aux_.content, d.content_target, y_hat);
            content_sum += c.item();
            add_term(c, cfg.lambda_c);
        }
        if (!flags.no_style) {
            // the early-layer term tracks the spectrum too closely to use
            // without ground truth; mid and high levels only
            auto parts = constraints::loss_style_vs_targets(*aux_.ser, d.ser_target, y_hat,
                                                            {false, true, true});
            sm_sum += parts.m->item();
            sh_sum += parts.h->item();
            add_term(parts.total, 1.0);
        }
        if (use_adv) {
            Tensor a = constraints::loss_adv(*disc, y_hat);
            adv_sum += a.item();
            add_term(a, cfg.lambda_adv);
        }
        if (!utt_total.defined()) utt_total = Tensor::scalar(0.0);
        total_graph = total_graph.defined() ? num::add(total_graph, utt_total) : utt_total;
    }
    total_graph = num::scale(total_graph, 1.0 / n);

    LossBreakdown& bd = out.breakdown;
    if (use_spk) bd.spk_cos = cos_sum / n;
    if (use_content) bd.content = content_sum / n;
    if (!flags.no_style) {
        bd.style_m = sm_sum / n;
        bd.style_h = sh_sum / n;
    }
    if (use_adv) bd.adv = adv_sum / n;
    bd.total_simu = total_graph.item();
    out.total = total_graph;
    return out;
}

std::vector<LogRecord> Trainer::train_base(model::VcModel& vc, constraints::Discriminator& disc,
                                           const TrainingConfig& cfg, params::Adam* opt_g,
                                           params::Adam* opt_d) {
    for (const constraints::AuxModel* m :
         {static_cast<const constraints::AuxModel*>(aux_.asr.get()),
          static_cast<const constraints::AuxModel*>(aux_.classifier.get()),
          static_cast<const constraints::AuxModel*>(aux_.indicator.get()),
          static_cast<const constraints::AuxModel*>(aux_.ser.get()),
          static_cast<const constraints::AuxModel*>(aux_.content.get())}) {
        if (!m->pretrained()) {
            throw LifecycleError("train_base: auxiliary model '" + m->kind() +
                                 "' is not pretrained");
        }
    }
    std::vector<int> files = store_.manifest.file_indices("base_train");
    if (files.empty()) throw ContractViolation("train_base: corpus has no base training split");

    params::Adam local_g, local_d;
    params::Adam& g_opt = opt_g ? *opt_g : local_g;
    params::Adam& d_opt = opt_d ? *opt_d : local_d;
    Rng shuffle_rng(seed_chain(cfg.seed, 101));
    std::vector<LogRecord> log;
    const AblationFlags none;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        std::vector<int> order = files;
        shuffle_rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
            std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                       order.size(), pos + static_cast<size_t>(cfg.batch_size))));
            Objective obj;
            {
                num::Tape tape;
                obj = loss_recon(vc, batch, /*alpha=*/0, cfg, none, nullptr, nullptr, &disc,
                                 /*want_predictions=*/true);
                num::backward(obj.total);
                clip_gradients(vc.params(), cfg.grad_clip);
                g_opt.step(vc.params(), lr);
                disc.params().zero_grads();  // generator pass leaks gradients into D
            }
            LogRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.mode = "recon";
            rec.lr = lr;
            rec.breakdown = obj.breakdown;

            if (cfg.disc_update_every > 0 && step % cfg.disc_update_every == 0) {
                num::Tape tape;
                Tensor d_total;
                for (size_t i = 0; i < batch.size(); ++i) {
                    const UttData& d = data(batch[static_cast<size_t>(i)]);
                    Tensor fake = Tensor::matrix(d.mel.rows(), d.mel.cols(), obj.predictions[i]);
                    Tensor dl = constraints::loss_real_fake(disc, d.mel, fake, cfg.disc_fake_unsquared);
                    d_total = d_total.defined() ? num::add(d_total, dl) : dl;
                }
                d_total = num::scale(d_total, 1.0 / static_cast<double>(batch.size()));
                num::backward(d_total);
                clip_gradients(disc.params(), cfg.grad_clip);
                d_opt.step(disc.params(), lr);
                vc.params().zero_grads();  // discriminator pass must not touch the generator
                rec.disc_loss = d_total.item();
            }
            log.push_back(std::move(rec));
            ++step;
        }
    }
    return log;
}

std::vector<LogRecord> Trainer::adapt(model::VcModel& vc, const constraints::Discriminator& disc,
                                      const std::vector<int>& target_files, int target_speaker,
                                      int adapt_epochs, const TrainingConfig& cfg,
                                      const AblationFlags& flags, params::Adam* opt) {
    if (!store_.manifest.is_target(target_speaker)) {
        throw ContractViolation("adapt: speaker " + std::to_string(target_speaker) +
                                " appears in the base corpus; adaptation targets must be unseen");
    }
    if (target_files.empty()) throw ContractViolation("adapt: no adaptation utterances");
    for (int idx : target_files) {
        if (store_.utts[static_cast<size_t>(idx)].speaker_id != target_speaker) {
            throw ContractViolation("adapt: adaptation utterance speaker mismatch");
        }
    }

    params::ParamStore theta_base = snapshot_params(vc.params());
    Tensor z_target = centroid_of(target_files);
    std::vector<int> sim_pool = store_.manifest.file_indices("base_train");
    const bool simulate = !flags.no_simulation && cfg.simu_batch > 0 && !sim_pool.empty();

    params::Adam local_opt;
    params::Adam& stepper = opt ? *opt : local_opt;
    Rng sample_rng(seed_chain(cfg.seed, 202));
    std::vector<LogRecord> log;
    const constraints::Discriminator* adv_disc = flags.no_adv ? nullptr : &disc;

    for (int step = 0; step < adapt_epochs; ++step) {
        const double lr = lr_at_epoch(cfg, step);
        const bool do_recon = !cfg.alternate_modes || step % 2 == 0;
        const bool do_simu = simulate && (!cfg.alternate_modes || step % 2 == 1);

        num::Tape tape;
        Tensor total;
        LogRecord rec_r, rec_s;
        if (do_recon) {
            Objective r = loss_recon(vc, target_files, /*alpha=*/1, cfg, flags, &z_target,
                                     &theta_base, adv_disc);
            total = r.total;
            rec_r.step = step;
            rec_r.epoch = step;
            rec_r.mode = "recon";
            rec_r.lr = lr;
            rec_r.breakdown = r.breakdown;
        }
        if (do_simu) {
            std::vector<int> sources(static_cast<size_t>(cfg.simu_batch));
            for (auto& s : sources) {
                s = sim_pool[static_cast<size_t>(sample_rng.uniform_int(0, static_cast<int>(sim_pool.size()) - 1))];
            }
            Objective s = loss_simu(vc, sources, target_speaker, z_target, cfg, flags, adv_disc);
            total = total.defined() ? num::add(total, s.total) : s.total;
            rec_s.step = step;
            rec_s.epoch = step;
            rec_s.mode = "simu";
            rec_s.lr = lr;
            rec_s.breakdown = s.breakdown;
        }
        num::backward(total);
        clip_gradients(vc.params(), cfg.grad_clip);
        stepper.step(vc.params(), lr);
        if (do_recon) log.push_back(std::move(rec_r));
        if (do_simu) log.push_back(std::move(rec_s));
    }
    return log;
}

}  // namespace mfc::train
