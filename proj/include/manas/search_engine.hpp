// SPDX-License-Identifier: Apache-2.0
//
// Bi-level architecture search: the softmax-relaxed architecture
// parameters, momentum-SGD and Adam optimizers with serializable state,
// the alternating weight/architecture update step, the full search loop
// with warm-up, checkpointing and per-step loss logging, and final
// training of a binarized genotype.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "manas/checkpoint.hpp"
#include "manas/core.hpp"
#include "manas/data.hpp"
#include "manas/losses.hpp"
#include "manas/supernet.hpp"

namespace manas {

// Cosine step-size schedule from `start` (j=0) to `end` (j=total).
inline double cosine_lr(double start, double end, long long j, long long total) {
    if (total <= 0) return end;
    double frac = std::clamp(static_cast<double>(j) / static_cast<double>(total), 0.0, 1.0);
    return end + 0.5 * (start - end) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// Deterministic round-robin batch schedule: each epoch visits every index
// once in an order reshuffled from (seed, tag, epoch). A pure function of
// its arguments, so resuming at any step reproduces the same batches.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, const std::string& tag,
                                              std::size_t n, int per_batch, long long step) {
    if (n == 0) throw ConfigError("batch schedule: empty dataset for " + tag);
    if (per_batch <= 0) throw ConfigError("batch schedule: pairs_per_batch must be positive");
    std::size_t k = static_cast<std::size_t>(per_batch);
    std::size_t steps_per_epoch = (n + k - 1) / k;
    long long epoch = step / static_cast<long long>(steps_per_epoch);
    std::size_t pos = static_cast<std::size_t>(step % static_cast<long long>(steps_per_epoch)) * k;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(hash_combine(hash_combine(seed, tag), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);

    std::size_t end = std::min(pos + k, n);
    return std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                                    perm.begin() + static_cast<std::ptrdiff_t>(end));
}

// ---------------------------------------------------------------------------
// Optimizers (serializable)
// ---------------------------------------------------------------------------

// SGD with classical momentum; weight decay is added to the gradient.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum, double weight_decay)
        : lr_(lr), momentum_(momentum), wd_(weight_decay) {}

    void attach(const ParamList<T>& params) {
        paths_.clear();
        vel_.clear();
        for (const Param<T>* p : params) {
            paths_.push_back(p->path);
            vel_.push_back(Tensor<T>::zeros(p->value.shape));
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step(const ParamList<T>& params) {
        check_arity(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param<T>* p = params[i];
            Tensor<T>& v = vel_[i];
            for (std::size_t j = 0; j < p->size(); ++j) {
                T g = p->grad[j] + static_cast<T>(wd_) * p->value[j];
                v[j] = static_cast<T>(momentum_) * v[j] + g;
                p->value[j] -= static_cast<T>(lr_) * v[j];
            }
        }
    }

    void save(TensorArchive& a, const std::string& prefix) const {
        for (std::size_t i = 0; i < paths_.size(); ++i)
            a.add_tensor(prefix + "vel." + paths_[i], vel_[i]);
    }

    void load(const TensorArchive& a, const std::string& prefix) {
        for (std::size_t i = 0; i < paths_.size(); ++i)
            a.read_tensor(prefix + "vel." + paths_[i], vel_[i]);
    }

private:
    void check_arity(std::size_t n) const {
        if (n != vel_.size())
            throw ConfigError("optimizer stepped with " + std::to_string(n) +
                              " parameters, attached to " + std::to_string(vel_.size()));
    }

    double lr_, momentum_, wd_;
    std::vector<std::string> paths_;
    std::vector<Tensor<T>> vel_;
};

// Adam with bias correction; weight decay is added to the gradient.
template <typename T>
class Adam {
public:
    Adam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void attach(const ParamList<T>& params) {
        paths_.clear();
        m_.clear();
        v_.clear();
        t_ = 0;
        for (const Param<T>* p : params) {
            paths_.push_back(p->path);
            m_.push_back(Tensor<T>::zeros(p->value.shape));
            v_.push_back(Tensor<T>::zeros(p->value.shape));
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    long long updates() const { return t_; }

    void step(const ParamList<T>& params) {
        if (params.size() != m_.size())
            throw ConfigError("optimizer stepped with " + std::to_string(params.size()) +
                              " parameters, attached to " + std::to_string(m_.size()));
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param<T>* p = params[i];
            for (std::size_t j = 0; j < p->size(); ++j) {
                double g = static_cast<double>(p->grad[j]) + wd_ * static_cast<double>(p->value[j]);
                double m = beta1_ * static_cast<double>(m_[i][j]) + (1.0 - beta1_) * g;
                double v = beta2_ * static_cast<double>(v_[i][j]) + (1.0 - beta2_) * g * g;
                m_[i][j] = static_cast<T>(m);
                v_[i][j] = static_cast<T>(v);
                p->value[j] -= static_cast<T>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

    void save(TensorArchive& a, const std::string& prefix) const {
        a.set_meta(prefix + "t", std::to_string(t_));
        for (std::size_t i = 0; i < paths_.size(); ++i) {
            a.add_tensor(prefix + "m." + paths_[i], m_[i]);
            a.add_tensor(prefix + "v." + paths_[i], v_[i]);
        }
    }

    void load(const TensorArchive& a, const std::string& prefix) {
        t_ = std::stoll(a.require_meta(prefix + "t"));
        for (std::size_t i = 0; i < paths_.size(); ++i) {
            a.read_tensor(prefix + "m." + paths_[i], m_[i]);
            a.read_tensor(prefix + "v." + paths_[i], v_[i]);
        }
    }

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<std::string> paths_;
    std::vector<Tensor<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Architecture parameters
// ---------------------------------------------------------------------------

// The relaxed coefficients and the flat probability rows they came from,
// all nodes on one tape so both the forward mixing and the architecture
// regularizers pull on the same softmax outputs.
template <typename T>
struct ArchGraph {
    RelaxedCoeffs<T> coeffs;
    std::vector<Var<T>> alphas;  // one [2] row per column instance
    std::vector<Var<T>> betas;   // one [7] row per site instance (or per cell when shared)
};

// Column and attention logits, softmaxed into choice probabilities. With
// a shared attention choice each cell holds one 7-way logit row reused at
// all three sites; otherwise one row per site.
template <typename T>
class ArchParams {
public:
    ArchParams(const NetworkConfig& cfg, bool shared_attention)
        : cfg_(cfg), shared_(shared_attention) {
        validate_config(cfg);
        for (int t = 0; t < cfg.T; ++t) {
            std::string cell = "arch.cell" + std::to_string(t);
            std::vector<Param<T>> mu_row;
            for (int m = 0; m < cfg.M; ++m)
                mu_row.emplace_back(cell + ".col" + std::to_string(m) + ".mu", ShapeVec{2});
            mu_.push_back(std::move(mu_row));
            std::vector<Param<T>> nu_row;
            if (shared_) {
                nu_row.emplace_back(cell + ".nu", ShapeVec{kNumAttentionOps});
            } else {
                for (int s = 0; s < kAttentionSites; ++s)
                    nu_row.emplace_back(cell + ".site" + std::to_string(s) + ".nu",
                                        ShapeVec{kNumAttentionOps});
            }
            nu_.push_back(std::move(nu_row));
        }
        for (auto& row : mu_)
            for (auto& p : row) p.zero_grad();
        for (auto& row : nu_)
            for (auto& p : row) p.zero_grad();
    }

    bool empty() const { return mu_.empty(); }
    bool shared_attention() const { return shared_; }
    const NetworkConfig& config() const { return cfg_; }

    // Total alpha scalars (2 per column) and beta scalars (7 per row).
    std::size_t u_count() const { return 2 * static_cast<std::size_t>(cfg_.T * cfg_.M); }
    std::size_t v_count() const {
        return static_cast<std::size_t>(kNumAttentionOps) * nu_rows();
    }

    ParamList<T> params() {
        ParamList<T> out;
        for (auto& row : mu_)
            for (auto& p : row) out.push_back(&p);
        for (auto& row : nu_)
            for (auto& p : row) out.push_back(&p);
        return out;
    }

    ArchGraph<T> materialize(Tape<T>& tape) {
        ArchGraph<T> g;
        for (int t = 0; t < cfg_.T; ++t) {
            std::vector<Var<T>> alpha_row;
            for (auto& p : mu_[static_cast<std::size_t>(t)]) {
                Var<T> a = softmax(tape.use(p));
                g.alphas.push_back(a);
                alpha_row.push_back(a);
            }
            g.coeffs.alpha.push_back(std::move(alpha_row));
            std::array<Var<T>, kAttentionSites> site_betas{};
            if (shared_) {
                Var<T> b = softmax(tape.use(nu_[static_cast<std::size_t>(t)][0]));
                g.betas.push_back(b);
                site_betas.fill(b);
            } else {
                for (int s = 0; s < kAttentionSites; ++s) {
                    Var<T> b = softmax(tape.use(nu_[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)]));
                    g.betas.push_back(b);
                    site_betas[static_cast<std::size_t>(s)] = b;
                }
            }
            g.coeffs.beta.push_back(site_betas);
        }
        return g;
    }

    // Argmax over raw logits; ties resolve to the lowest index.
    Genotype binarize() const {
        Genotype g;
        g.config = cfg_;
        for (int t = 0; t < cfg_.T; ++t) {
            CellChoice choice;
            for (const auto& p : mu_[static_cast<std::size_t>(t)])
                choice.columns.push_back(p.value[1] > p.value[0] ? ColumnKind::FUSION
                                                                 : ColumnKind::PARALLEL);
            for (int s = 0; s < kAttentionSites; ++s) {
                const Param<T>& p =
                    nu_[static_cast<std::size_t>(t)][shared_ ? 0 : static_cast<std::size_t>(s)];
                int best = 0;
                for (int k = 1; k < kNumAttentionOps; ++k)
                    if (p.value[static_cast<std::size_t>(k)] >
                        p.value[static_cast<std::size_t>(best)])
                        best = k;
                choice.attention[static_cast<std::size_t>(s)] = static_cast<AttentionOpKind>(best);
            }
            g.cells.push_back(std::move(choice));
        }
        return g;
    }

private:
    std::size_t nu_rows() const {
        return static_cast<std::size_t>(cfg_.T) * (shared_ ? 1 : kAttentionSites);
    }

    NetworkConfig cfg_;
    bool shared_;
    std::vector<std::vector<Param<T>>> mu_;
    std::vector<std::vector<Param<T>>> nu_;
};

// ---------------------------------------------------------------------------
// Search state and the bi-level step
// ---------------------------------------------------------------------------

// One multi-to-one pair cast to the working scalar type.
template <typename T>
struct RainGroup {
    Tensor<T> clean;
    std::vector<Tensor<T>> rainy;
};

template <typename T>
RainGroup<T> to_group(const MultiToOnePair& pair) {
    RainGroup<T> g;
    g.clean = pair.gt.template cast<T>();
    for (const auto& r : pair.rainy) g.rainy.push_back(r.template cast<T>());
    return g;
}

template <typename T>
std::vector<RainGroup<T>> to_groups(const std::vector<MultiToOnePair>& pairs,
                                    const NetworkConfig& cfg) {
    std::vector<RainGroup<T>> out;
    for (const auto& p : pairs) {
        validate_pair(p, cfg.N);
        if (p.gt.shape != ShapeVec{3, cfg.H, cfg.W})
            throw DataError("pair '" + p.name + "' has shape " + shape_str(p.gt.shape) +
                            ", network expects [3," + std::to_string(cfg.H) + "," +
                            std::to_string(cfg.W) + "]");
        out.push_back(to_group<T>(p));
    }
    return out;
}

template <typename T>
struct SearchState {
    NetworkConfig cfg;
    SearchConfig scfg;
    std::unique_ptr<DerainNetwork<T>> net;  // relaxed supernet, owns omega
    ArchParams<T> arch;                     // theta
    SgdMomentum<T> omega_opt;
    Adam<T> theta_opt;
    ComplexityTable comp_table;
    long long step = 0;
    long long warmup_steps = 0;
};

template <typename T>
SearchState<T> make_search_state(const NetworkConfig& cfg, const SearchConfig& scfg) {
    validate_config(cfg);
    scfg.validate();
    SearchState<T> st{cfg,
                      scfg,
                      std::make_unique<DerainNetwork<T>>(cfg, NetMode::RELAXED, scfg.rng_seed),
                      ArchParams<T>(cfg, scfg.shared_attention_choice),
                      SgdMomentum<T>(scfg.omega_lr_start, scfg.omega_momentum,
                                     scfg.omega_weight_decay),
                      Adam<T>(scfg.theta_lr, scfg.theta_weight_decay),
                      {},
                      0,
                      0};
    st.omega_opt.attach(st.net->params());
    st.theta_opt.attach(st.arch.params());
    st.comp_table = st.net->complexity_table(scfg.shared_attention_choice);
    st.warmup_steps =
        static_cast<long long>(scfg.warmup_frac * static_cast<double>(scfg.iterations));
    return st;
}

namespace detail {

inline void ensure_finite(double v, const std::string& component, long long step) {
    if (!std::isfinite(v))
        throw NumericError(component + " is not finite at step " + std::to_string(step));
}

// Mean external (and optionally internal) loss over the batch. Forwards
// run relaxed when `coeffs` is given, discrete otherwise.
template <typename T>
std::pair<Var<T>, Var<T>> batch_data_losses(Tape<T>& tape, DerainNetwork<T>& net,
                                            const RelaxedCoeffs<T>* coeffs,
                                            const std::vector<const RainGroup<T>*>& batch,
                                            bool with_internal) {
    if (batch.empty()) throw ConfigError("empty batch");
    Var<T> ext_acc{}, int_acc{};
    auto accumulate = [](Var<T>& acc, Var<T> term) { acc = acc.valid() ? add(acc, term) : term; };
    for (const RainGroup<T>* g : batch) {
        Var<T> gt = tape.value(g->clean);
        std::vector<Var<T>> outs;
        for (const Tensor<T>& r : g->rainy)
            outs.push_back(coeffs ? net.forward_relaxed(tape.value(r), *coeffs)
                                  : net.forward_discrete(tape.value(r)));
        accumulate(ext_acc, external_loss(outs, gt));
        if (with_internal) accumulate(int_acc, internal_loss(outs));
    }
    T inv = T(1) / static_cast<T>(batch.size());
    ext_acc = scale(ext_acc, inv);
    if (int_acc.valid()) int_acc = scale(int_acc, inv);
    return {ext_acc, int_acc};
}

template <typename T>
void zero_all_grads(SearchState<T>& st) {
    for (Param<T>* p : st.net->params()) p->zero_grad();
    for (Param<T>* p : st.arch.params()) p->zero_grad();
}

}  // namespace detail

// One alternation: update omega on batchA under the data losses, then
// update theta on batchB under data + regularization losses (first-order;
// theta is frozen during warm-up). Returns the batchB loss components.
template <typename T>
LossReport bilevel_step(SearchState<T>& st, const std::vector<const RainGroup<T>*>& batchA,
                        const std::vector<const RainGroup<T>*>& batchB) {
    const SearchConfig& sc = st.scfg;

    {  // phase 1: network weights on trainA
        detail::zero_all_grads(st);
        Tape<T> tape;
        ArchGraph<T> graph = st.arch.materialize(tape);
        auto [ext, internal] =
            detail::batch_data_losses(tape, *st.net, &graph.coeffs, batchA, true);
        detail::ensure_finite(static_cast<double>(ext.val()[0]), "train-A external loss", st.step);
        detail::ensure_finite(static_cast<double>(internal.val()[0]), "train-A internal loss",
                              st.step);
        tape.backward(add(ext, internal));
        st.omega_opt.set_lr(
            cosine_lr(sc.omega_lr_start, sc.omega_lr_end, st.step, sc.iterations));
        st.omega_opt.step(st.net->params());
    }

    LossReport report;
    {  // phase 2: architecture weights on trainB
        detail::zero_all_grads(st);
        Tape<T> tape;
        ArchGraph<T> graph = st.arch.materialize(tape);
        auto [ext, internal] =
            detail::batch_data_losses(tape, *st.net, &graph.coeffs, batchB, true);
        double extv = static_cast<double>(ext.val()[0]);
        double intv = static_cast<double>(internal.val()[0]);
        detail::ensure_finite(extv, "train-B external loss", st.step);
        detail::ensure_finite(intv, "train-B internal loss", st.step);

        Var<T> total = add(ext, internal);
        double archv = 0.0, compv = 0.0;
        if (!st.arch.empty()) {
            Var<T> arch_term = arch_entropy_loss(graph.alphas, graph.betas);
            Var<T> comp_term = complexity_loss(graph.alphas, graph.betas, st.comp_table);
            archv = static_cast<double>(arch_term.val()[0]);
            compv = static_cast<double>(comp_term.val()[0]);
            detail::ensure_finite(archv, "architecture entropy loss", st.step);
            detail::ensure_finite(compv, "complexity loss", st.step);
            total = add(total, add(scale(arch_term, static_cast<T>(sc.lambda_arch)),
                                   scale(comp_term, static_cast<T>(sc.lambda_comp))));
        }
        tape.backward(total);
        if (st.step >= st.warmup_steps && !st.arch.empty()) st.theta_opt.step(st.arch.params());
        report = make_loss_report(extv, intv, archv, compv, sc.lambda_arch, sc.lambda_comp);
    }

    ++st.step;
    return report;
}

// ---------------------------------------------------------------------------
// Search-state checkpoints
// ---------------------------------------------------------------------------

template <typename T>
void save_search_state(SearchState<T>& st, const std::string& path) {
    TensorArchive a;
    a.set_meta("kind", "search_state");
    a.set_meta("config", network_config_to_json(st.cfg));
    a.set_meta("search_config", search_config_to_json(st.scfg));
    a.set_meta("step", std::to_string(st.step));
    st.net->save_weights(a);
    for (Param<T>* p : st.arch.params()) a.add_tensor(p->path, p->value);
    st.omega_opt.save(a, "opt.omega.");
    st.theta_opt.save(a, "opt.theta.");
    a.save(path);
}

template <typename T>
SearchState<T> load_search_state(const std::string& path) {
    TensorArchive a = TensorArchive::load(path);
    if (a.require_meta("kind") != "search_state")
        throw DataError("checkpoint '" + path + "' is not a search state (kind='" +
                        a.require_meta("kind") + "')");
    NetworkConfig cfg = network_config_from_json(a.require_meta("config"));
    SearchConfig scfg = search_config_from_json(a.require_meta("search_config"));
    SearchState<T> st = make_search_state<T>(cfg, scfg);
    st.net->load_weights(a);
    for (Param<T>* p : st.arch.params()) a.read_tensor(p->path, p->value);
    st.omega_opt.load(a, "opt.omega.");
    st.theta_opt.load(a, "opt.theta.");
    st.step = std::stoll(a.require_meta("step"));
    return st;
}

// ---------------------------------------------------------------------------
// Search and final training loops
// ---------------------------------------------------------------------------

struct SearchResult {
    Genotype genotype;
    std::vector<std::pair<long long, LossReport>> log;  // (step, components)
};

// Runs bilevel steps from the state's current step up to the configured
// iteration count, drawing round-robin batches from the two splits. When
// `checkpoint_dir` is non-empty the state is archived every
// checkpoint_interval steps.
template <typename T>
SearchResult run_search(SearchState<T>& st, const DatasetSplit& data,
                        const std::string& checkpoint_dir = "") {
    if (data.trainA.empty() || data.trainB.empty())
        throw ConfigError("search requires non-empty trainA and trainB splits");
    std::vector<RainGroup<T>> groups_a = to_groups<T>(data.trainA, st.cfg);
    std::vector<RainGroup<T>> groups_b = to_groups<T>(data.trainB, st.cfg);

    SearchResult result;
    while (st.step < st.scfg.iterations) {
        long long j = st.step;
        auto pick = [&](const std::vector<RainGroup<T>>& groups, const std::string& tag) {
            std::vector<const RainGroup<T>*> batch;
            for (std::size_t i :
                 batch_indices(st.scfg.rng_seed, tag, groups.size(), st.scfg.pairs_per_batch, j))
                batch.push_back(&groups[i]);
            return batch;
        };
        LossReport report = bilevel_step(st, pick(groups_a, "trainA"), pick(groups_b, "trainB"));
        result.log.emplace_back(j, report);
        if (!checkpoint_dir.empty() && st.scfg.checkpoint_interval > 0 &&
            st.step % st.scfg.checkpoint_interval == 0) {
            std::ostringstream name;
            name << "search_" << std::setfill('0') << std::setw(6) << st.step << ".ckpt";
            save_search_state(st, (std::filesystem::path(checkpoint_dir) / name.str()).string());
        }
    }
    result.genotype = st.arch.binarize();
    return result;
}

// Hyper-parameters for training a binarized architecture.
struct TrainConfig {
    int epochs = 200;
    double lr_start = 1e-3;  // cosine-annealed down to lr_end
    double lr_end = 0.0;
    double weight_decay = 3e-4;
    bool use_internal_loss = true;  // off = plain one-to-one training
    int pairs_per_batch = 1;
    int augment_patch = 0;  // >0: train on random patch-sized crops with random flips
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (epochs < 0) throw ConfigError("epochs must be non-negative");
        if (lr_start < 0 || lr_end < 0) throw ConfigError("step sizes must be non-negative");
        if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
        if (pairs_per_batch < 1) throw ConfigError("pairs_per_batch must be positive");
        if (augment_patch < 0) throw ConfigError("augment_patch must be non-negative");
    }
};

template <typename T>
struct TrainResult {
    std::unique_ptr<DerainNetwork<T>> net;
    std::vector<std::pair<long long, LossReport>> log;  // (step, components)
};

// Trains a freshly seeded discrete network on the full pair list with the
// external (and optionally internal) loss under Adam with cosine decay.
// The internal column of the log is zero when the internal loss is off.
// With augment_patch > 0 the network is built at patch resolution and every
// step draws a fresh seeded crop+flip of its batch pairs.
template <typename T>
TrainResult<T> run_train(const Genotype& genotype, const TrainConfig& tc,
                         const std::vector<MultiToOnePair>& pairs) {
    validate_genotype(genotype);
    tc.validate();
    if (pairs.empty()) throw ConfigError("training requires a non-empty pair list");

    Genotype geno = genotype;
    if (tc.augment_patch > 0) {
        geno.config.H = tc.augment_patch;
        geno.config.W = tc.augment_patch;
    }

    TrainResult<T> result;
    result.net = std::make_unique<DerainNetwork<T>>(geno.config, NetMode::DISCRETE,
                                                    tc.rng_seed, geno);
    std::vector<RainGroup<T>> groups;
    if (tc.augment_patch == 0) groups = to_groups<T>(pairs, geno.config);

    Adam<T> opt(tc.lr_start, tc.weight_decay);
    opt.attach(result.net->params());

    std::size_t k = static_cast<std::size_t>(tc.pairs_per_batch);
    std::size_t n_pairs = pairs.size();
    long long steps_per_epoch = static_cast<long long>((n_pairs + k - 1) / k);
    long long total = static_cast<long long>(tc.epochs) * steps_per_epoch;
    for (long long step = 0; step < total; ++step) {
        std::vector<std::size_t> picked =
            batch_indices(tc.rng_seed, "train", n_pairs, tc.pairs_per_batch, step);
        std::vector<RainGroup<T>> step_groups;  // owns augmented batches for this tape
        std::vector<const RainGroup<T>*> batch;
        if (tc.augment_patch > 0) {
            std::vector<MultiToOnePair> cropped;
            for (std::size_t slot = 0; slot < picked.size(); ++slot) {
                std::uint64_t salt =
                    static_cast<std::uint64_t>(step) * k + slot;
                cropped.push_back(augment(pairs[picked[slot]],
                                          hash_combine(tc.rng_seed, "augment-" +
                                                       std::to_string(salt)),
                                          tc.augment_patch));
            }
            step_groups = to_groups<T>(cropped, geno.config);
            for (const RainGroup<T>& g : step_groups) batch.push_back(&g);
        } else {
            for (std::size_t i : picked) batch.push_back(&groups[i]);
        }

        for (Param<T>* p : result.net->params()) p->zero_grad();
        Tape<T> tape;
        auto [ext, internal] =
            detail::batch_data_losses(tape, *result.net, static_cast<const RelaxedCoeffs<T>*>(nullptr),
                                      batch, tc.use_internal_loss);
        double extv = static_cast<double>(ext.val()[0]);
        double intv = tc.use_internal_loss ? static_cast<double>(internal.val()[0]) : 0.0;
        detail::ensure_finite(extv, "training external loss", step);
        if (tc.use_internal_loss) detail::ensure_finite(intv, "training internal loss", step);

        tape.backward(tc.use_internal_loss ? add(ext, internal) : ext);
        opt.set_lr(cosine_lr(tc.lr_start, tc.lr_end, step, total));
        opt.step(result.net->params());
        result.log.emplace_back(step, make_loss_report(extv, intv, 0.0, 0.0, 0.0, 0.0));
    }
    return result;
}

}  // namespace manas
