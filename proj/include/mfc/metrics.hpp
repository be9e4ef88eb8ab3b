#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfc/constraints.hpp"
#include "mfc/trainer.hpp"
#include "mfc/vc_model.hpp"

namespace mfc::eval {

// Objective metrics with exact corpus oracles: style distance through the
// frozen recognizer, pitch-contour correlation, speaker cosine similarity
// through the frozen indicator, and a frame-locked token error rate standing
// in for a recognizer-based character error rate.

// Pearson correlation; constant sequences yield 0 with the degenerate flag.
double pearson(const std::vector<double>& a, const std::vector<double>& b,
               bool* degenerate = nullptr);

// mid- plus high-level style feature distance between source and conversion
double metric_d_style(const constraints::Ser& ser, const num::Tensor& source_mel,
                      const num::Tensor& converted_mel);

// correlation between the source contour and the conversion's pitch band
double metric_p_lf0(const std::vector<double>& source_lf0, const num::Tensor& converted_mel,
                    bool* degenerate = nullptr);

// cosine between the conversion's indicator embedding and a target centroid
double metric_cos_sim(const constraints::SpeakerIndicator& indicator,
                      const num::Tensor& converted_mel, const num::Tensor& target_centroid);

// substitution-only token error rate, frame-locked alignment, range [0, 1]
double metric_content_error(const constraints::AsrStandin& asr,
                            const std::vector<uint16_t>& source_tokens,
                            const num::Tensor& converted_mel);

// cosine between the conversion's timbre-band mean and a ground-truth timbre
double oracle_timbre_cos(const num::Tensor& converted_mel, const std::vector<double>& timbre);

struct MetricRow {
    std::string utt;
    double d_style = 0;
    double p_lf0 = 0;
    bool p_lf0_degenerate = false;
    double cos_sim = 0;
    double content_error = 0;
    double timbre_cos = 0;

    nlohmann::json to_json() const;
};

struct SelfRow {
    std::string utt;
    double p_lf0 = 0;
    bool degenerate = false;
};

struct MetricsReport {
    nlohmann::json lineage;  // config hash, version, checkpoint, target, seed...
    std::vector<MetricRow> rows;       // conversions of the test split
    std::vector<SelfRow> self_rows;    // target-to-self conversions
    double mean_d_style = 0;
    double mean_p_lf0 = 0;
    double mean_cos_sim = 0;
    double mean_content_error = 0;
    double mean_timbre_cos = 0;
    double mean_self_p_lf0 = 0;

    void finalize();  // recomputes the aggregate means from the rows
    nlohmann::json to_json() const;
    std::string to_text() const;
    std::string to_csv() const;
};

// Converts every test utterance toward the target and scores it; also runs
// target-to-self conversions over the reference utterances. speaker_input_for
// picks the conversion's speaker vector per source utterance (a fixed target
// centroid for adapted models; the source speaker's own centroid when scoring
// a model that knows nothing about the target).
MetricsReport evaluate_conversion(
    const train::UttStore& store, const constraints::AuxModels& aux, const model::VcModel& vc,
    int target_speaker, const std::function<num::Tensor(const corpus::Utterance&)>& speaker_input_for,
    const num::Tensor& reference_centroid, nlohmann::json lineage);

// Intra/inter speaker cosine comparison of the classifier embedding space
// against the indicator embedding space, over held-out utterances.
struct SpeakerTableSide {
    std::optional<double> intra;  // null when no speaker has two utterances
    double inter = 0;
    double gap() const { return (intra ? *intra : 0.0) - inter; }
};

struct SpeakerTable {
    SpeakerTableSide classifier;
    SpeakerTableSide indicator;
    nlohmann::json to_json() const;
};

SpeakerTable speaker_model_table(const train::UttStore& store, const constraints::AuxModels& aux);

}  // namespace mfc::eval
