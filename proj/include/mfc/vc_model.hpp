#pragma once

#include <optional>

#include "json.hpp"
#include "mfc/params.hpp"
#include "mfc/tensor.hpp"

namespace mfc::model {

// Conversion network: style module (global/local/frame), residual encoder
// with temporal mixing, and a frame-autoregressive mel decoder. Teacher-forced
// when a reference mel is supplied, free-running otherwise.

struct VcConfig {
    int mel_bins = 16;
    int content_dim = 12;
    int style_hidden = 8;   // global and local style width
    int local_factor = 4;   // style/time down-sample factor
    int speaker_dim = 16;   // indicator embedding width
    int enc_width = 32;
    int enc_blocks = 2;
    int dec_hidden = 32;
    bool autoregressive = true;

    nlohmann::json to_json() const;
    static VcConfig from_json(const nlohmann::json& j);
};

struct StyleRepresentations {
    num::Tensor global;  // [style_hidden]
    num::Tensor local;   // [ceil(T/factor), style_hidden]
    num::Tensor frame;   // [T, 2] raw (lf0, energy)
};

class VcModel {
public:
    VcModel(const VcConfig& cfg, uint64_t init_seed);

    // content [T, content_dim], lf0 and energy [T, 1]
    StyleRepresentations extract_styles(const num::Tensor& content, const num::Tensor& lf0,
                                        const num::Tensor& energy) const;

    // Predicts a [T, mel_bins] spectrum. With teacher_mel the decoder is
    // teacher-forced; without it the decoder free-runs frame by frame.
    num::Tensor convert(const num::Tensor& content, const num::Tensor& speaker_vec,
                        const StyleRepresentations& styles,
                        const std::optional<num::Tensor>& teacher_mel) const;

    params::ParamStore& params() { return params_; }
    const params::ParamStore& params() const { return params_; }
    const VcConfig& config() const { return cfg_; }

private:
    num::Tensor encode(const num::Tensor& content, const num::Tensor& speaker_vec,
                       const StyleRepresentations& styles, int t_frames) const;

    VcConfig cfg_;
    params::ParamStore params_;
};

}  // namespace mfc::model
