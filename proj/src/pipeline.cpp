#include "mfc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "mfc/hash.hpp"
#include "mfc/version.hpp"

namespace mfc::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

json AblateConfig::to_json() const {
    return json{{"seeds", seeds}, {"settings", settings}, {"targets", targets}};
}

AblateConfig AblateConfig::from_json(const json& j) {
    AblateConfig c;
    c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    c.settings = j.at("settings").get<std::vector<int>>();
    c.targets = j.at("targets").get<std::vector<int>>();
    return c;
}

ExperimentConfig ExperimentConfig::toy_defaults() {
    ExperimentConfig c;
    c.base = train::TrainingConfig::published_base();
    c.base.epochs = 40;
    c.base.lr_init = 3e-3;
    c.base.seed = 1;
    c.adapt = train::TrainingConfig::published_adapt();
    c.adapt.epochs = 200;
    c.adapt.lr_init = 2e-3;
    c.adapt.decay_every = 50;
    c.adapt.seed = 1;
    return c;
}

void ExperimentConfig::validate() const {
    if (aux.mel_bins != corpus.mel_bins || model.mel_bins != corpus.mel_bins) {
        throw ConfigError("config: mel_bins disagree across corpus/aux/model sections");
    }
    if (aux.vocab != corpus.vocab) throw ConfigError("config: vocab disagrees between corpus and aux");
    if (aux.n_styles != corpus.n_styles) {
        throw ConfigError("config: style count disagrees between corpus and aux");
    }
    if (aux.n_base_speakers != corpus.base_speakers) {
        throw ConfigError("config: aux n_base_speakers must equal corpus base_speakers");
    }
    if (model.content_dim != aux.content_dim) {
        throw ConfigError("config: model content_dim must equal aux content_dim");
    }
    if (model.speaker_dim != aux.ind_emb) {
        throw ConfigError("config: model speaker_dim must equal the indicator embedding dim");
    }
    if (base.alpha != 0) throw ConfigError("config: base section must have alpha = 0");
    if (adapt.alpha != 1) throw ConfigError("config: adapt section must have alpha = 1");
    if (corpus.adapt_small <= 0 || corpus.adapt_large <= corpus.adapt_small) {
        throw ConfigError("config: adaptation set sizes must satisfy 0 < small < large");
    }
}

json ExperimentConfig::to_json() const {
    return json{{"corpus", corpus.to_json()},   {"aux", aux.to_json()},
                {"model", model.to_json()},     {"pretrain", pretrain.to_json()},
                {"base", base.to_json()},       {"adapt", adapt.to_json()},
                {"ablate", ablate.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    c.corpus = corpus::CorpusConfig::from_json(j.at("corpus"));
    c.aux = constraints::AuxConfig::from_json(j.at("aux"));
    c.model = model::VcConfig::from_json(j.at("model"));
    c.pretrain = train::PretrainConfig::from_json(j.at("pretrain"));
    c.base = train::TrainingConfig::from_json(j.at("base"));
    c.adapt = train::TrainingConfig::from_json(j.at("adapt"));
    c.ablate = AblateConfig::from_json(j.at("ablate"));
    return c;
}

std::string ExperimentConfig::config_hash() const {
    json j = to_json();
    j.erase("ablate");  // the ablation matrix does not invalidate trained artifacts
    return sha256_hex(j.dump());
}

std::string ExperimentConfig::aux_scope_hash() const {
    json j{{"corpus", corpus.to_json()}, {"aux", aux.to_json()}, {"pretrain", pretrain.to_json()}};
    return sha256_hex(j.dump());
}

std::string ExperimentConfig::base_scope_hash() const {
    json j{{"corpus", corpus.to_json()}, {"aux", aux.to_json()}, {"pretrain", pretrain.to_json()},
           {"model", model.to_json()},   {"base", base.to_json()}};
    return sha256_hex(j.dump());
}

std::string ExperimentConfig::adapt_scope_hash() const {
    json j{{"corpus", corpus.to_json()}, {"aux", aux.to_json()}, {"pretrain", pretrain.to_json()},
           {"model", model.to_json()},   {"base", base.to_json()}, {"adapt", adapt.to_json()}};
    return sha256_hex(j.dump());
}

namespace {
void deep_merge(json& base, const json& overrides) {
    for (const auto& [key, value] : overrides.items()) {
        if (value.is_object() && base.contains(key) && base[key].is_object()) {
            deep_merge(base[key], value);
        } else {
            base[key] = value;
        }
    }
}
}  // namespace

ExperimentConfig merge_config(const ExperimentConfig& base, const json& overrides) {
    json j = base.to_json();
    deep_merge(j, overrides);
    try {
        return ExperimentConfig::from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: malformed override: ") + e.what());
    }
}

json AblateTable::to_json() const {
    json rows = json::array();
    for (const auto& c : cells) {
        rows.push_back({{"variant", c.variant},
                        {"utts", c.utts},
                        {"content_error", c.content_error},
                        {"d_style", c.d_style},
                        {"cos_sim", c.cos_sim},
                        {"runs", c.runs}});
    }
    return json{{"rows", rows}};
}

std::string AblateTable::to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "variant           utts  content_error   d_style   cos_sim   runs\n";
    for (const auto& c : cells) {
        os << c.variant;
        for (size_t i = c.variant.size(); i < 16; ++i) os << ' ';
        os << "   " << c.utts << "       " << c.content_error << "    " << c.d_style << "    "
           << c.cos_sim << "     " << c.runs << "\n";
    }
    return os.str();
}

const AblateCell& AblateTable::cell(const std::string& variant, int utts) const {
    for (const auto& c : cells) {
        if (c.variant == variant && c.utts == utts) return c;
    }
    throw ContractViolation("ablation table: no cell for " + variant + " at " +
                            std::to_string(utts) + " utterances");
}

// ---- Experiment ----------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg, fs::path out_dir)
    : cfg_(std::move(cfg)), root_(std::move(out_dir)) {
    cfg_.validate();
    fs::create_directories(root_);
}

void Experiment::write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

std::string Experiment::corpus_hash() {
    if (corpus_hash_.empty()) corpus_hash_ = sha256_dir(corpus_dir());
    return corpus_hash_;
}

const corpus::CorpusManifest& Experiment::manifest() { return store().manifest; }

const train::UttStore& Experiment::store() {
    if (!store_) {
        require_corpus();
        store_ = std::make_unique<train::UttStore>(corpus::load_manifest(corpus_dir()), corpus_dir());
    }
    return *store_;
}

std::vector<int> Experiment::target_speaker_ids() {
    std::vector<int> out;
    for (const auto& s : manifest().speakers) {
        if (manifest().is_target(s.id)) out.push_back(s.id);
    }
    return out;
}

void Experiment::require_corpus() {
    if (!fs::exists(corpus_dir() / "manifest.json")) {
        throw StalenessError("corpus missing under " + corpus_dir().string() +
                             "; run gen-corpus first");
    }
}

void Experiment::gen_corpus(bool force) {
    const fs::path mpath = corpus_dir() / "manifest.json";
    if (fs::exists(mpath)) {
        json stored;
        {
            std::ifstream f(mpath);
            f >> stored;
        }
        if (!force) {
            if (stored.at("config") == cfg_.corpus.to_json()) {
                return;  // identical corpus already present
            }
            throw ConfigError("corpus at " + corpus_dir().string() +
                              " was generated from a different configuration; use --force");
        }
        fs::remove_all(corpus_dir());
    }
    corpus::generate_corpus(cfg_.corpus, corpus_dir());
    store_.reset();
    aux_.reset();
    corpus_hash_.clear();
}

namespace {
const char* kAuxNames[5] = {"asr", "classifier", "indicator", "ser", "content"};
}

void Experiment::pretrain(bool force) {
    require_corpus();
    const fs::path summary_path = aux_dir() / "pretrain_summary.json";
    if (fs::exists(summary_path) && !force) {
        json stored;
        {
            std::ifstream f(summary_path);
            f >> stored;
        }
        if (stored.value("config_hash", "") == cfg_.aux_scope_hash() &&
            stored.value("corpus_hash", "") == corpus_hash()) {
            return;  // identical pretraining already done
        }
        throw ConfigError("pretrained auxiliaries under " + aux_dir().string() +
                          " came from a different configuration; use --force");
    }

    train::PretrainSummary summary;
    constraints::AuxModels aux = train::pretrain_aux(store(), cfg_.aux, cfg_.pretrain, &summary);

    fs::create_directories(aux_dir());
    const constraints::AuxModel* models[5] = {aux.asr.get(), aux.classifier.get(),
                                              aux.indicator.get(), aux.ser.get(),
                                              aux.content.get()};
    for (int i = 0; i < 5; ++i) {
        params::CheckpointMeta meta;
        meta.kind = std::string("aux_") + kAuxNames[i];
        meta.version = kVersion;
        meta.config_hash = cfg_.aux_scope_hash();
        meta.corpus_hash = corpus_hash();
        meta.frozen = true;
        meta.extra = {{"aux", cfg_.aux.to_json()}};
        params::save_checkpoint(aux_dir() / (std::string(kAuxNames[i]) + ".ckpt"),
                                {{"m", &models[i]->params()}}, nullptr, meta);
    }

    aux_ = std::make_unique<constraints::AuxModels>(std::move(aux));
    eval::SpeakerTable table = eval::speaker_model_table(store(), *aux_);

    json out = summary.to_json();
    out["config_hash"] = cfg_.aux_scope_hash();
    out["corpus_hash"] = corpus_hash();
    out["aux_hash"] = aux_->combined_hash();
    out["version"] = kVersion;
    out["speaker_table"] = table.to_json();
    write_json(summary_path, out);
}

void Experiment::require_aux() {
    if (aux_) return;
    auto aux = std::make_unique<constraints::AuxModels>();
    aux->cfg = cfg_.aux;
    aux->asr = std::make_unique<constraints::AsrStandin>(cfg_.aux, 0);
    aux->classifier = std::make_unique<constraints::SpeakerClassifier>(cfg_.aux, 0);
    aux->indicator = std::make_unique<constraints::SpeakerIndicator>(cfg_.aux, 0);
    aux->ser = std::make_unique<constraints::Ser>(cfg_.aux, 0);
    aux->content = std::make_unique<constraints::ContentModel>(cfg_.aux, 0);
    constraints::AuxModel* models[5] = {aux->asr.get(), aux->classifier.get(),
                                        aux->indicator.get(), aux->ser.get(), aux->content.get()};
    for (int i = 0; i < 5; ++i) {
        const fs::path p = aux_dir() / (std::string(kAuxNames[i]) + ".ckpt");
        if (!fs::exists(p)) {
            throw StalenessError("auxiliary checkpoint missing: " + p.string() +
                                 "; run pretrain first");
        }
        auto loaded = params::load_checkpoint(p);
        if (loaded.meta.corpus_hash != corpus_hash()) {
            throw StalenessError("stale artifact: " + p.string() +
                                 " was pretrained on a different corpus");
        }
        if (loaded.meta.config_hash != cfg_.aux_scope_hash()) {
            throw StalenessError("stale artifact: " + p.string() +
                                 " was pretrained under a different configuration");
        }
        loaded.load_into("m", models[i]->params());
        models[i]->freeze();
    }
    aux_ = std::move(aux);
}

const constraints::AuxModels& Experiment::aux_models() {
    require_aux();
    return *aux_;
}

void Experiment::require_base() {
    if (!fs::exists(base_ckpt_path())) {
        throw StalenessError("base checkpoint missing: " + base_ckpt_path().string() +
                             "; run train-base first");
    }
}

void Experiment::train_base(bool force) {
    require_corpus();
    require_aux();
    if (fs::exists(base_ckpt_path()) && !force) {
        auto loaded = params::load_checkpoint(base_ckpt_path());
        if (loaded.meta.config_hash == cfg_.base_scope_hash() &&
            loaded.meta.corpus_hash == corpus_hash() &&
            loaded.meta.aux_hash == aux_->combined_hash()) {
            return;  // identical base model already trained
        }
        throw ConfigError("base checkpoint at " + base_ckpt_path().string() +
                          " came from a different configuration; use --force");
    }

    model::VcModel vc(cfg_.model, seed_chain(cfg_.base.seed, 77));
    constraints::Discriminator disc(cfg_.aux, seed_chain(cfg_.base.seed, 78));
    train::Trainer trainer(store(), *aux_);
    params::Adam opt_g, opt_d;
    auto log = trainer.train_base(vc, disc, cfg_.base, &opt_g, &opt_d);

    fs::create_directories(base_ckpt_path().parent_path());
    {
        std::ofstream lf(base_ckpt_path().parent_path() / "train_log.jsonl");
        for (const auto& rec : log) lf << rec.to_json().dump() << "\n";
    }
    params::CheckpointMeta meta;
    meta.kind = "vc_base";
    meta.version = kVersion;
    meta.config_hash = cfg_.base_scope_hash();
    meta.corpus_hash = corpus_hash();
    meta.aux_hash = aux_->combined_hash();
    meta.epoch = cfg_.base.epochs;
    meta.extra = {{"model", cfg_.model.to_json()}, {"train", cfg_.base.to_json()}};
    params::save_checkpoint(base_ckpt_path(), {{"vc", &vc.params()}, {"disc", &disc.params()}},
                            &opt_g, meta);
}

std::unique_ptr<model::VcModel> Experiment::load_base_model(constraints::Discriminator* disc_out) {
    require_base();
    auto loaded = params::load_checkpoint(base_ckpt_path());
    if (loaded.meta.corpus_hash != corpus_hash()) {
        throw StalenessError("stale artifact: " + base_ckpt_path().string() +
                             " was trained on a different corpus");
    }
    auto vc = std::make_unique<model::VcModel>(
        model::VcConfig::from_json(loaded.meta.extra.at("model")), 0);
    loaded.load_into("vc", vc->params());
    if (disc_out) {
        loaded.load_into("disc", disc_out->params());
        disc_out->freeze();
    }
    return vc;
}

std::unique_ptr<model::VcModel> Experiment::load_adapted_model(const fs::path& ckpt) {
    if (!fs::exists(ckpt)) {
        throw StalenessError("adapted checkpoint missing: " + ckpt.string() + "; run adapt first");
    }
    auto loaded = params::load_checkpoint(ckpt);
    if (loaded.meta.parent_hash != sha256_file(base_ckpt_path())) {
        throw StalenessError("stale artifact: " + ckpt.string() +
                             " was adapted from a different base checkpoint");
    }
    if (loaded.meta.corpus_hash != corpus_hash()) {
        throw StalenessError("stale artifact: " + ckpt.string() +
                             " was adapted against a different corpus");
    }
    auto vc = std::make_unique<model::VcModel>(
        model::VcConfig::from_json(loaded.meta.extra.at("model")), 0);
    loaded.load_into("vc", vc->params());
    return vc;
}

fs::path Experiment::adapt_run_dir(int target, int utts, uint64_t seed,
                                   const std::string& variant) const {
    return root_ / "adapt" /
           ("t" + std::to_string(target) + "_u" + std::to_string(utts) + "_s" +
            std::to_string(seed) + "_" + variant);
}

fs::path Experiment::adapt(int target, int utts, uint64_t seed,
                           const train::AblationFlags& flags, bool force) {
    require_corpus();
    require_aux();
    require_base();

    std::string split;
    if (utts == cfg_.corpus.adapt_small) split = "adapt_1";
    else if (utts == cfg_.corpus.adapt_large) split = "adapt_5";
    else {
        throw ConfigError("adapt: utterance count " + std::to_string(utts) +
                          " matches neither adaptation set (" +
                          std::to_string(cfg_.corpus.adapt_small) + " or " +
                          std::to_string(cfg_.corpus.adapt_large) + ")");
    }

    const fs::path run_dir = adapt_run_dir(target, utts, seed, flags.name());
    const fs::path ckpt_path = run_dir / "adapted.ckpt";
    const std::string base_hash = sha256_file(base_ckpt_path());
    if (fs::exists(ckpt_path) && !force) {
        auto loaded = params::load_checkpoint(ckpt_path);
        if (loaded.meta.config_hash == cfg_.adapt_scope_hash() &&
            loaded.meta.parent_hash == base_hash) {
            return ckpt_path;  // identical adaptation already done
        }
        throw ConfigError("adapted checkpoint at " + ckpt_path.string() +
                          " came from a different lineage; use --force");
    }

    constraints::Discriminator disc(cfg_.aux, 0);
    auto vc = load_base_model(&disc);

    train::TrainingConfig acfg = cfg_.adapt;
    acfg.seed = seed;
    if (utts == cfg_.corpus.adapt_large) acfg.simu_batch = cfg_.adapt.simu_batch_large;

    train::Trainer trainer(store(), *aux_);
    std::vector<int> files = manifest().file_indices(split, target);
    params::Adam opt;
    auto log = trainer.adapt(*vc, disc, files, target, acfg.epochs, acfg, flags, &opt);

    fs::create_directories(run_dir);
    {
        std::ofstream lf(run_dir / "log.jsonl");
        for (const auto& rec : log) lf << rec.to_json().dump() << "\n";
    }
    params::CheckpointMeta meta;
    meta.kind = "vc_adapt";
    meta.version = kVersion;
    meta.config_hash = cfg_.adapt_scope_hash();
    meta.corpus_hash = corpus_hash();
    meta.aux_hash = aux_->combined_hash();
    meta.parent_hash = base_hash;
    meta.epoch = acfg.epochs;
    meta.extra = {{"model", vc->config().to_json()},
                  {"train", acfg.to_json()},
                  {"target", target},
                  {"utts", utts},
                  {"seed", seed},
                  {"variant", flags.name()},
                  {"flags", flags.to_json()}};
    params::save_checkpoint(ckpt_path, {{"vc", &vc->params()}}, &opt, meta);
    return ckpt_path;
}

eval::MetricsReport Experiment::evaluate(int target, int utts, uint64_t seed,
                                         const std::string& variant, bool unadapted,
                                         bool write_csv, bool zero_shot) {
    require_corpus();
    require_aux();
    require_base();

    std::unique_ptr<model::VcModel> vc;
    std::string ckpt_name;
    if (zero_shot) unadapted = true;
    if (unadapted) {
        vc = load_base_model();
        ckpt_name = base_ckpt_path().string();
    } else {
        const fs::path ckpt = adapt_run_dir(target, utts, seed, variant) / "adapted.ckpt";
        vc = load_adapted_model(ckpt);
        ckpt_name = ckpt.string();
    }

    const std::string split = (utts == cfg_.corpus.adapt_large) ? "adapt_5" : "adapt_1";
    train::Trainer helper(store(), *aux_);
    num::Tensor z_input = helper.centroid_of(manifest().file_indices(split, target));
    num::Tensor z_ref = helper.centroid_of(manifest().file_indices("target_ref", target));

    // An unadapted base model knows nothing about the target: its conversions
    // run on the source speaker's own centroid (the reconstruction pathway).
    // Adapted models (and the informational zero-shot row) take the
    // adaptation-set centroid.
    std::function<num::Tensor(const corpus::Utterance&)> speaker_input_for;
    if (unadapted && !zero_shot) {
        std::map<int, num::Tensor> by_speaker;
        for (int idx : manifest().file_indices("test")) {
            const int spk = store().utts[static_cast<size_t>(idx)].speaker_id;
            if (!by_speaker.count(spk)) by_speaker.emplace(spk, helper.speaker_centroid(spk));
        }
        by_speaker.emplace(target, z_input);  // self-conversion rows still target the speaker
        speaker_input_for = [by_speaker](const corpus::Utterance& u) {
            return by_speaker.at(u.speaker_id);
        };
    } else {
        speaker_input_for = [z_input](const corpus::Utterance&) { return z_input; };
    }

    json lineage = {{"version", kVersion},
                    {"config_hash", cfg_.config_hash()},
                    {"corpus_hash", corpus_hash()},
                    {"checkpoint", ckpt_name},
                    {"target", target},
                    {"utts", utts},
                    {"seed", seed},
                    {"variant", zero_shot ? "zeroshot" : (unadapted ? "base" : variant)}};
    eval::MetricsReport rep =
        eval::evaluate_conversion(store(), *aux_, *vc, target, speaker_input_for, z_ref, lineage);

    const std::string tag = (zero_shot ? std::string("zeroshot")
                                       : (unadapted ? std::string("base") : variant)) +
                            "_t" +
                            std::to_string(target) + "_u" + std::to_string(utts) + "_s" +
                            std::to_string(seed);
    fs::create_directories(eval_dir());
    write_json(eval_dir() / ("report_" + tag + ".json"), rep.to_json());
    {
        std::ofstream tf(eval_dir() / ("report_" + tag + ".txt"));
        tf << rep.to_text();
    }
    if (write_csv) {
        std::ofstream cf(eval_dir() / ("report_" + tag + ".csv"));
        cf << rep.to_csv();
    }
    return rep;
}

eval::SpeakerTable Experiment::speaker_table() {
    require_corpus();
    require_aux();
    return eval::speaker_model_table(store(), *aux_);
}

AblateTable Experiment::run_ablation(bool force) {
    require_corpus();
    require_aux();
    require_base();
    corpus_hash();  // warm every lazily shared member before going parallel

    std::vector<int> targets = cfg_.ablate.targets.empty() ? target_speaker_ids() : cfg_.ablate.targets;
    const std::vector<std::string> variants = {"full",   "no_style",      "no_content",
                                               "no_spk", "no_adv",        "no_simulation"};
    auto flags_for = [](const std::string& v) {
        train::AblationFlags f;
        if (v == "no_style") f.no_style = true;
        if (v == "no_content") f.no_content = true;
        if (v == "no_spk") f.no_spk = true;
        if (v == "no_adv") f.no_adv = true;
        if (v == "no_simulation") f.no_simulation = true;
        return f;
    };

    struct Job {
        std::string variant;
        int utts;
        uint64_t seed;
        int target;
    };
    std::vector<Job> jobs;
    for (const auto& v : variants) {
        for (int utts : cfg_.ablate.settings) {
            for (uint64_t seed : cfg_.ablate.seeds) {
                for (int target : targets) jobs.push_back({v, utts, seed, target});
            }
        }
    }

    int threads = 1;
    if (const char* env = std::getenv("MFC_THREADS")) {
        threads = std::max(1, std::atoi(env));
    } else {
        threads = std::max(1u, std::min(4u, std::thread::hardware_concurrency()));
    }
    threads = std::min<int>(threads, static_cast<int>(jobs.size()));

    std::atomic<size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const Job& job = jobs[i];
            try {
                adapt(job.target, job.utts, job.seed, flags_for(job.variant), force);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    // evaluation is cheap; run it serially for simple deterministic output
    std::map<std::pair<std::string, int>, AblateCell> agg;
    for (const auto& job : jobs) {
        eval::MetricsReport rep = evaluate(job.target, job.utts, job.seed, job.variant);
        auto& cell = agg[{job.variant, job.utts}];
        cell.variant = job.variant;
        cell.utts = job.utts;
        cell.content_error += rep.mean_content_error;
        cell.d_style += rep.mean_d_style;
        cell.cos_sim += rep.mean_cos_sim;
        cell.runs += 1;
    }
    AblateTable table;
    for (const auto& v : variants) {
        for (int utts : cfg_.ablate.settings) {
            auto it = agg.find({v, utts});
            if (it == agg.end()) continue;
            AblateCell c = it->second;
            c.content_error /= c.runs;
            c.d_style /= c.runs;
            c.cos_sim /= c.runs;
            table.cells.push_back(c);
        }
    }
    fs::create_directories(root_ / "ablate");
    write_json(root_ / "ablate" / "table.json", table.to_json());
    {
        std::ofstream tf(root_ / "ablate" / "table.txt");
        tf << table.to_text();
    }
    return table;
}

}  // namespace mfc::pipeline
