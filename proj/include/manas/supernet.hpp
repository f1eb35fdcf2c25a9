// SPDX-License-Identifier: Apache-2.0
//
// The full de-raining network: a stem that lifts RGB into C channels and
// refines it with two residual blocks, T searchable cells (transition,
// M mixed columns, attention), and a tail that collapses the pyramid back
// to one scale and emits RGB. Supports the relaxed forward (all candidates
// weighted by architecture probabilities) and the discrete forward (one
// choice per column and site).

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "manas/checkpoint.hpp"
#include "manas/core.hpp"
#include "manas/losses.hpp"
#include "manas/search_space.hpp"

namespace manas {

enum class NetMode { RELAXED, DISCRETE };

// Architecture probabilities materialized on a tape, ready for mixing.
// alpha[t][m] is a rank-1 [2] Var; beta[t][s] is a rank-1 [7] Var.
template <typename T>
struct RelaxedCoeffs {
    std::vector<std::vector<Var<T>>> alpha;
    std::vector<std::array<Var<T>, kAttentionSites>> beta;
};

// One searchable block. Cell with ordinal t consumes a pyramid of t+1
// levels and produces t+2.
template <typename T>
struct Cell {
    struct Column {
        ParallelModule<T> parallel;
        FusionModule<T> fusion;
    };

    TransitionModule<T> transition;
    std::vector<Column> columns;
    AttentionModule<T> attention;

    Cell(const std::string& prefix, const NetworkConfig& cfg, int ordinal, Rng& rng)
        : transition(prefix + ".trans", cfg.C, rng),
          attention(make_columns_then_attention(prefix, cfg, ordinal, rng)) {}

    VarPyramid<T> forward_relaxed(const VarPyramid<T>& in, const std::vector<Var<T>>& alpha_row,
                                  const std::array<Var<T>, kAttentionSites>& beta_row) {
        VarPyramid<T> p = transition.apply(in);
        for (std::size_t m = 0; m < columns.size(); ++m) {
            check_simplex(alpha_row[m], 2);
            VarPyramid<T> par = columns[m].parallel.apply(p);
            VarPyramid<T> fus = columns[m].fusion.apply(p);
            Var<T> a0 = index(alpha_row[m], 0);
            Var<T> a1 = index(alpha_row[m], 1);
            VarPyramid<T> mixed;
            for (std::size_t d = 0; d < p.levels.size(); ++d)
                mixed.levels.push_back(add(mul(par.levels[d], a0), mul(fus.levels[d], a1)));
            p = std::move(mixed);
        }
        for (const auto& b : beta_row) check_simplex(b, kNumAttentionOps);
        return attention.apply_mixed(p, beta_row);
    }

    VarPyramid<T> forward_discrete(const VarPyramid<T>& in, const CellChoice& choice,
                                   int* ops_touched = nullptr) {
        VarPyramid<T> p = transition.apply(in);
        for (std::size_t m = 0; m < columns.size(); ++m) {
            p = choice.columns[m] == ColumnKind::PARALLEL ? columns[m].parallel.apply(p)
                                                          : columns[m].fusion.apply(p);
            if (ops_touched) ++*ops_touched;
        }
        return attention.apply_discrete(p, choice.attention, ops_touched);
    }

    void collect(ParamList<T>& out) {
        transition.collect(out);
        for (auto& col : columns) {
            col.parallel.collect(out);
            col.fusion.collect(out);
        }
        attention.collect(out);
    }

    std::array<double, 2> column_cost_m(std::size_t m) const {
        return {static_cast<double>(columns[m].parallel.param_count()) / 1e6,
                static_cast<double>(columns[m].fusion.param_count()) / 1e6};
    }

    std::array<double, kNumAttentionOps> site_cost_m(int site) const {
        std::array<double, kNumAttentionOps> cost{};
        for (int k = 0; k < kNumAttentionOps; ++k)
            cost[static_cast<std::size_t>(k)] =
                static_cast<double>(
                    attention.site_op_param_count(site, static_cast<AttentionOpKind>(k))) /
                1e6;
        return cost;
    }

    // Parameters present no matter what the search chooses.
    std::size_t fixed_param_count() const {
        return transition.param_count() + attention.fixed_param_count();
    }

private:
    // Builds the columns as a side effect so all members can initialize in
    // declaration order while drawing from the RNG exactly once each.
    AttentionModule<T> make_columns_then_attention(const std::string& prefix,
                                                   const NetworkConfig& cfg, int ordinal,
                                                   Rng& rng) {
        int scales = ordinal + 2;
        columns.reserve(static_cast<std::size_t>(cfg.M));
        for (int m = 0; m < cfg.M; ++m) {
            std::string cp = prefix + ".col" + std::to_string(m);
            columns.push_back(Column{ParallelModule<T>(cp + ".par", cfg.C, scales, rng),
                                     FusionModule<T>(cp + ".fus", cfg.C, scales, rng)});
        }
        return AttentionModule<T>(prefix + ".att", cfg.C, scales, rng);
    }

    void check_simplex(Var<T> v, int n) const {
        const Tensor<T>& t = v.val();
        if (t.rank() != 1 || t.dim(0) != n)
            throw ConfigError("architecture probabilities have shape " + shape_str(t.shape) +
                              ", expected [" + std::to_string(n) + "]");
        double s = 0.0;
        for (const auto& e : t.v) {
            if (e < T(0) || e > T(1)) throw ConfigError("architecture probability outside [0,1]");
            s += static_cast<double>(e);
        }
        if (std::abs(s - 1.0) > 1e-6)
            throw ConfigError("architecture probabilities sum to " + std::to_string(s));
    }
};

template <typename T>
class DerainNetwork {
public:
    DerainNetwork(const NetworkConfig& cfg, NetMode mode, std::uint64_t seed,
                  std::optional<Genotype> genotype = std::nullopt)
        : cfg_(cfg), mode_(mode), genotype_(std::move(genotype)), rng_(hash_combine(seed, 0x6e6574)) {
        validate_config(cfg);
        if (mode_ == NetMode::DISCRETE) {
            if (!genotype_) throw ConfigError("discrete network requires a genotype");
            validate_genotype(*genotype_);
            if (!(genotype_->config == cfg))
                throw ConfigError("genotype was produced for a different network config");
        }
        stem_lift_.emplace("stem.lift", 3, cfg.C, 3, 1, 1, 1, rng_);
        stem_b1_.emplace("stem.block0", cfg.C, rng_);
        stem_b2_.emplace("stem.block1", cfg.C, rng_);
        for (int t = 0; t < cfg.T; ++t)
            cells_.emplace_back("cell" + std::to_string(t), cfg, t, rng_);
        tail_conv_.emplace("tail.conv", cfg.C, 3, 1, 1, 0, 1, rng_);
        collect_params();
    }

    const NetworkConfig& config() const { return cfg_; }
    NetMode mode() const { return mode_; }
    const std::optional<Genotype>& genotype() const { return genotype_; }
    std::vector<Cell<T>>& cells() { return cells_; }

    Var<T> forward_relaxed(Var<T> image, const RelaxedCoeffs<T>& coeffs) {
        if (mode_ != NetMode::RELAXED)
            throw ConfigError("relaxed forward on a discrete network");
        if (coeffs.alpha.size() != cells_.size() || coeffs.beta.size() != cells_.size())
            throw ConfigError("architecture coefficients cover " +
                              std::to_string(coeffs.alpha.size()) + " cells, network has " +
                              std::to_string(cells_.size()));
        VarPyramid<T> p = stem(image);
        for (std::size_t t = 0; t < cells_.size(); ++t) {
            if (coeffs.alpha[t].size() != static_cast<std::size_t>(cfg_.M))
                throw ConfigError("column coefficient arity mismatch");
            p = cells_[t].forward_relaxed(p, coeffs.alpha[t], coeffs.beta[t]);
        }
        return tail(p);
    }

    Var<T> forward_discrete(Var<T> image, int* ops_touched = nullptr) {
        if (mode_ != NetMode::DISCRETE || !genotype_)
            throw ConfigError("discrete forward requires a discrete network with a genotype");
        VarPyramid<T> p = stem(image);
        for (std::size_t t = 0; t < cells_.size(); ++t)
            p = cells_[t].forward_discrete(p, genotype_->cells[t], ops_touched);
        return tail(p);
    }

    // Runs the discrete forward on a plain tensor without tracking
    // gradients; returns the de-rained image.
    Tensor<T> infer(const Tensor<T>& image) {
        if (mode_ != NetMode::DISCRETE)
            throw ConfigError("inference requires a discrete network");
        Tape<T> tape;
        tape.train_mode = false;
        Var<T> in = tape.value(image);
        return forward_discrete(in).val();
    }

    ParamList<T>& params() { return params_; }

    // Expected-cost table for the complexity loss. With a shared attention
    // choice the three sites of a cell merge into one row of summed costs.
    ComplexityTable complexity_table(bool shared_attention_choice) const {
        ComplexityTable table;
        for (const auto& cell : cells_) {
            for (std::size_t m = 0; m < cell.columns.size(); ++m)
                table.column_costs.push_back(cell.column_cost_m(m));
            if (shared_attention_choice) {
                std::array<double, kNumAttentionOps> merged{};
                for (int s = 0; s < kAttentionSites; ++s) {
                    auto c = cell.site_cost_m(s);
                    for (int k = 0; k < kNumAttentionOps; ++k)
                        merged[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
                }
                table.site_costs.push_back(merged);
            } else {
                for (int s = 0; s < kAttentionSites; ++s)
                    table.site_costs.push_back(cell.site_cost_m(s));
            }
        }
        return table;
    }

    // Parameters of the architecture `g` would keep after discretization:
    // stem + tail + per cell the transition, the chosen column modules, the
    // chosen attention ops and the fixed recombination convs.
    std::size_t discrete_param_count(const Genotype& g) const {
        if (g.cells.size() != cells_.size())
            throw ConfigError("genotype cell count mismatch in parameter counting");
        std::size_t n = stem_lift_->param_count() + stem_b1_->param_count() +
                        stem_b2_->param_count() + tail_conv_->param_count();
        for (std::size_t t = 0; t < cells_.size(); ++t) {
            const Cell<T>& cell = cells_[t];
            n += cell.fixed_param_count();
            for (std::size_t m = 0; m < cell.columns.size(); ++m)
                n += g.cells[t].columns[m] == ColumnKind::PARALLEL
                         ? cell.columns[m].parallel.param_count()
                         : cell.columns[m].fusion.param_count();
            for (int s = 0; s < kAttentionSites; ++s)
                n += cell.attention.site_op_param_count(
                    s, g.cells[t].attention[static_cast<std::size_t>(s)]);
        }
        return n;
    }

    // Full parameter volume of the supernet (all candidates materialized).
    std::size_t total_param_count() const {
        std::size_t n = 0;
        for (const Param<T>* p : params_) n += p->size();
        return n;
    }

    void save_weights(TensorArchive& archive) const {
        for (const Param<T>* p : params_) archive.add_tensor(p->path, p->value);
    }

    void load_weights(const TensorArchive& archive) {
        for (Param<T>* p : params_) archive.read_tensor(p->path, p->value);
    }

    void save_checkpoint(const std::string& path) const {
        TensorArchive a;
        a.set_meta("kind", "network");
        a.set_meta("config", network_config_to_json(cfg_));
        if (genotype_) a.set_meta("genotype", genotype_to_json(*genotype_));
        save_weights(a);
        a.save(path);
    }

private:
    VarPyramid<T> stem(Var<T> image) {
        const ShapeVec& s = image.shape();
        if (s.size() != 3 || s[0] != 3 || s[1] != cfg_.H || s[2] != cfg_.W)
            throw ConfigError("input image has shape " + shape_str(s) + ", expected [3," +
                              std::to_string(cfg_.H) + "," + std::to_string(cfg_.W) + "]");
        VarPyramid<T> p;
        p.levels.push_back(stem_b2_->apply(stem_b1_->apply(stem_lift_->apply(image))));
        return p;
    }

    Var<T> tail(const VarPyramid<T>& p) {
        Var<T> acc = p.levels[0];
        const ShapeVec& s0 = acc.shape();
        for (std::size_t d = 1; d < p.levels.size(); ++d)
            acc = add(acc, bilinear_resize(p.levels[d], s0[1], s0[2]));
        return tail_conv_->apply(relu(acc));
    }

    void collect_params() {
        stem_lift_->collect(params_);
        stem_b1_->collect(params_);
        stem_b2_->collect(params_);
        for (auto& cell : cells_) cell.collect(params_);
        tail_conv_->collect(params_);
    }

    NetworkConfig cfg_;
    NetMode mode_;
    std::optional<Genotype> genotype_;
    Rng rng_;
    std::optional<ConvLayer<T>> stem_lift_;
    std::optional<ResidualBlock<T>> stem_b1_, stem_b2_;
    std::vector<Cell<T>> cells_;
    std::optional<ConvLayer<T>> tail_conv_;
    ParamList<T> params_;
};

// Reads config (and genotype when present) from a checkpoint written by
// save_checkpoint, without loading weights.
inline std::pair<NetworkConfig, std::optional<Genotype>> read_checkpoint_header(
    const TensorArchive& a) {
    NetworkConfig cfg = network_config_from_json(a.require_meta("config"));
    std::optional<Genotype> g;
    if (const std::string* gj = a.get_meta("genotype")) g = genotype_from_json(*gj);
    return {cfg, std::move(g)};
}

}  // namespace manas
