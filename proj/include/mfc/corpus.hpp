#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfc/errors.hpp"

namespace mfc::corpus {

// Synthetic factorized corpus: speaker timbre, linguistic content, and
// speaking style are independent latent factors occupying disjoint mel bands.
//   band 0      : pitch contour (lf0), scaled 1.0
//   bands 1..7  : per-token content templates
//   bands 8..15 : per-speaker timbre offset
// Every factor is exactly recoverable up to the additive noise, so all
// evaluation metrics have oracles. Trained models never see the band masks.

struct SpeakerProfile {
    int id = -1;
    std::vector<double> timbre;  // default dim 8, components in [-1, 1]
};

struct StyleSpec {
    int style_class = 0;         // in [0, n_styles)
    double contour_freq = 0.0;   // cycles per frame
    double contour_amp = 0.0;
};

struct Utterance {
    int t_frames = 0;
    int bins = 0;
    int vocab = 12;
    std::vector<double> mel;       // row-major [T, bins]
    std::vector<double> lf0;       // length T, noise-free ground truth
    std::vector<double> energy;    // length T, noise-free ground truth
    std::vector<uint16_t> tokens;  // one per 4 frames, ceil(T/4)
    int speaker_id = -1;
    int style_class = -1;

    double mel_at(int t, int b) const { return mel[static_cast<size_t>(t) * bins + b]; }
};

struct CorpusConfig {
    uint64_t seed = 7;
    int base_speakers = 20;
    int target_speakers = 4;
    int utts_per_base = 50;
    int test_utts = 40;
    int adapt_small = 1;
    int adapt_large = 5;
    int target_ref_utts = 10;
    int mel_bins = 16;
    int vocab = 12;
    int n_styles = 4;
    int timbre_dim = 8;
    int frames_per_token = 4;
    int t_min = 40;  // frame counts drawn as multiples of frames_per_token
    int t_max = 120;
    double noise_sigma = 0.02;
    double min_speaker_dist = 0.5;
    double min_template_dist = 1.2;

    nlohmann::json to_json() const;
    static CorpusConfig from_json(const nlohmann::json& j);
};

struct ManifestEntry {
    std::string path;   // relative to corpus dir
    int speaker = -1;
    int style = -1;
    std::string split;  // base_train | test | adapt_1 | adapt_5 | target_ref
};

struct CorpusManifest {
    CorpusConfig cfg;
    std::vector<SpeakerProfile> speakers;          // base then target ids
    std::vector<std::vector<double>> templates;    // vocab x content-band values
    std::vector<ManifestEntry> files;

    bool is_target(int speaker_id) const { return speaker_id >= cfg.base_speakers; }
    std::vector<int> file_indices(const std::string& split, int speaker = -1) const;
    const SpeakerProfile& speaker(int id) const;
};

// Style-class contour tables. Classes are separated by frequency; amplitudes
// overlap across classes and stay large enough that the lf0 band dominates
// the additive noise.
StyleSpec make_style_spec(int style_class, double freq_jitter, double amp_jitter);
double contour_at(const StyleSpec& s, int t);
double energy_at(const StyleSpec& s, int t);

// Deterministic synthesis from factors; the seed drives only the noise.
Utterance synthesize_mel(const SpeakerProfile& speaker, const std::vector<uint16_t>& tokens,
                         const StyleSpec& style, uint64_t noise_seed, const CorpusConfig& cfg,
                         const std::vector<std::vector<double>>& templates);

// Generates and persists the corpus; same seed gives bit-identical files.
CorpusManifest generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& dir);

// Loads manifest.json and validates file presence and split disjointness.
CorpusManifest load_manifest(const std::filesystem::path& dir);

void save_utterance(const Utterance& u, const std::filesystem::path& path);
Utterance load_utterance(const std::filesystem::path& path);

// ---- oracles (ground-truth access for tests and metrics) ----

// nearest-template decode over the content bands, one token per frame group
std::vector<uint16_t> decode_tokens_oracle(const Utterance& u,
                                           const std::vector<std::vector<double>>& templates);

// per-frame ground-truth token ids
std::vector<int> frame_tokens(const Utterance& u);

// mean of the timbre bands over time: estimates the speaker timbre vector
std::vector<double> timbre_estimate(const Utterance& u);

std::vector<double> extract_lf0(const Utterance& u);  // mel band 0

}  // namespace mfc::corpus
