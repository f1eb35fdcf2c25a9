// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types: network/search configuration, the discrete
// architecture description (Genotype) with its JSON format, and the
// multi-scale feature pyramid used by every operator.

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "manas/tensor.hpp"

namespace manas {

// Raised when a configuration value violates its documented constraints.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised on malformed or inconsistent genotype documents.
struct GenotypeError : std::runtime_error {
    explicit GenotypeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised on dataset layout or image content problems.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when optimization produces a non-finite loss.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// The two candidate modules a searched column can become.
enum class ColumnKind : int { PARALLEL = 0, FUSION = 1 };

// The seven candidate attention operations, in fixed search order.
enum class AttentionOpKind : int {
    CA_V1 = 0,   // channel attention, average-pool branch only
    CA_V2 = 1,   // channel attention, average + max pool branches
    SPATIAL = 2, // spatial attention over channel-pooled maps
    NORM = 3,    // depthwise-conv gate
    CBA = 4,     // NORM applied after SPATIAL
    IDENTITY = 5,
    ZERO = 6,
};

inline constexpr int kNumAttentionOps = 7;
inline constexpr int kAttentionSites = 3;

const char* attention_op_name(AttentionOpKind k);
AttentionOpKind attention_op_from_name(const std::string& name);

// Dyadic resolution level: level d means 0.5^d of the input resolution.
struct Scale {
    int level = 0;
};

// Global shape parameters of one network.
struct NetworkConfig {
    int T = 1;   // number of cells; cell t activates scale levels 0..t
    int C = 16;  // channel width, constant across scales; must be even
    int M = 4;   // searched columns per cell
    int N = 3;   // rainy images per multi-to-one pair
    int H = 64;  // input height; must be divisible by 2^T
    int W = 64;  // input width; must be divisible by 2^T

    bool operator==(const NetworkConfig&) const = default;
};

// Throws ConfigError naming the offending field when an invariant fails.
void validate_config(const NetworkConfig& cfg);

// Hyper-parameters of the bi-level search and of final training.
struct SearchConfig {
    double lambda_arch = 0.01;
    double lambda_comp = 0.0;
    int iterations = 300;             // J, bi-level steps
    double omega_lr_start = 2e-3;     // cosine-annealed down to omega_lr_end
    double omega_lr_end = 1e-4;
    double omega_momentum = 0.9;
    double omega_weight_decay = 3e-4;
    double theta_lr = 3e-4;
    double theta_weight_decay = 1e-3;
    double warmup_frac = 0.1;         // leading fraction of J with frozen theta
    bool shared_attention_choice = false;  // one op choice reused at all 3 sites
    int pairs_per_batch = 1;
    int checkpoint_interval = 100;    // steps between checkpoint writes
    std::uint64_t rng_seed = 0;

    void validate() const;
};

// One cell's discrete choices.
struct CellChoice {
    std::vector<ColumnKind> columns;                       // M entries
    std::array<AttentionOpKind, kAttentionSites> attention;

    bool operator==(const CellChoice&) const = default;
};

// A fully binarized architecture plus the config it was searched under.
struct Genotype {
    NetworkConfig config;
    std::vector<CellChoice> cells;  // T entries

    bool operator==(const Genotype&) const = default;
};

// Throws GenotypeError when the cell/column/attention arities disagree
// with the embedded config.
void validate_genotype(const Genotype& g);

std::string genotype_to_json(const Genotype& g);
Genotype genotype_from_json(const std::string& text);
void save_genotype(const std::string& path, const Genotype& g);
Genotype load_genotype(const std::string& path);

std::string network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& text);

std::string search_config_to_json(const SearchConfig& cfg);
SearchConfig search_config_from_json(const std::string& text);

// Feature maps at consecutive dyadic scales, level 0 first. All maps share
// the channel count; level d has spatial dims (H/2^d, W/2^d).
template <typename Map>
struct PyramidOf {
    std::vector<Map> levels;

    int max_level() const { return static_cast<int>(levels.size()) - 1; }
};

// Checks the pyramid invariants for tensors of shape [C,H,W].
template <typename T>
void validate_pyramid(const PyramidOf<Tensor<T>>& p, int channels, int h0, int w0) {
    if (p.levels.empty()) throw ConfigError("pyramid: no levels");
    for (std::size_t d = 0; d < p.levels.size(); ++d) {
        const ShapeVec& s = p.levels[d].shape;
        if (s.size() != 3) throw ConfigError("pyramid: level " + std::to_string(d) + " not [C,H,W]");
        int div = 1 << d;
        if (h0 % div != 0 || w0 % div != 0)
            throw ConfigError("pyramid: base dims not divisible at level " + std::to_string(d));
        if (s[0] != channels || s[1] != h0 / div || s[2] != w0 / div)
            throw ConfigError("pyramid: level " + std::to_string(d) + " has shape " +
                              shape_str(s) + ", expected [" + std::to_string(channels) + "," +
                              std::to_string(h0 / div) + "," + std::to_string(w0 / div) + "]");
    }
}

}  // namespace manas
