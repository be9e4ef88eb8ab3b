#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mfc/rng.hpp"
#include "mfc/tensor.hpp"

namespace mfc::params {

// Ordered collection of named parameter tensors. Names are unique; iteration
// order is insertion order (optimizer determinism depends on it).
class ParamStore {
public:
    // Xavier-uniform init for matrices, zeros for vectors/biases.
    num::Tensor create(const std::string& name, const std::vector<int>& shape, Rng& rng);
    void add(const std::string& name, num::Tensor t);

    num::Tensor get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::pair<std::string, num::Tensor>>& items() const { return items_; }
    size_t size() const { return items_.size(); }
    int64_t total_elements() const;

    void zero_grads();
    void set_requires_grad(bool rg);

    // SHA-256 over names and raw value bytes; used by frozen-model contracts.
    std::string content_hash() const;

private:
    std::vector<std::pair<std::string, num::Tensor>> items_;
    std::map<std::string, size_t> index_;
};

// Adaptive-moment stepper, beta = (0.9, 0.999), eps = 1e-8. step() consumes
// and zeroes gradients.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params, double lr);
    int64_t step_count() const { return t_; }

    // serialization access
    const std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>& moments() const {
        return moments_;
    }
    void restore(int64_t t,
                 std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments);

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;  // m, v
};

// ---- checkpoint files ----
// "MFCK" magic | u32 json length | json index | little-endian f64 payload.
// The index records tensor shapes and element offsets, optimizer moments,
// and lineage metadata (config hash, parent checkpoint hash, corpus hash).

struct CheckpointMeta {
    std::string kind;
    std::string version;
    std::string config_hash;
    std::string parent_hash;   // base checkpoint hash for adapted models
    std::string corpus_hash;
    std::string aux_hash;      // combined auxiliary hash, when relevant
    bool frozen = false;
    int epoch = 0;
    nlohmann::json extra;      // model architecture config and friends
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const ParamStore*>>& stores,
                     const Adam* optimizer, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::map<std::string, num::Tensor> tensors;  // prefixed names
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
    int64_t opt_step = 0;

    // copies values into an existing store; name set and shapes must match
    void load_into(const std::string& prefix, ParamStore& store) const;
    bool has_prefix(const std::string& prefix) const;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mfc::params
