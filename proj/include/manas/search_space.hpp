// SPDX-License-Identifier: Apache-2.0
//
// The searchable multi-scale operators: transition (adds a scale via a
// strided conv), parallel (per-scale residual blocks), fusion (cross-scale
// sum with strided-conv down paths and bilinear up paths), and the
// attention module with its seven candidate gate operations. Every
// operator owns its parameters; nothing is shared across scales, sites,
// columns or cells.

#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "manas/autodiff.hpp"
#include "manas/core.hpp"
#include "manas/rng.hpp"

namespace manas {

// Hidden-layer shrink factor of the channel-attention MLP.
inline constexpr int kAttentionMlpReduction = 4;

template <typename T>
using ParamList = std::vector<Param<T>*>;

enum class ConvInit { FAN_IN, ZERO };

// A single convolution with bias. Weights draw from U(-1/sqrt(fan_in),
// +1/sqrt(fan_in)) in construction order, so equal seeds give equal nets.
template <typename T>
struct ConvLayer {
    Param<T> w;  // [out, in/groups, k, k]
    Param<T> b;  // [out]
    int stride, pad, groups;

    ConvLayer(const std::string& path, int in_c, int out_c, int k, int stride_, int pad_,
              int groups_, Rng& rng, ConvInit init = ConvInit::FAN_IN)
        : w(path + ".w", {out_c, in_c / groups_, k, k}),
          b(path + ".b", {out_c}),
          stride(stride_), pad(pad_), groups(groups_) {
        if (in_c % groups_ != 0 || out_c % groups_ != 0)
            throw ConfigError("conv " + path + ": channels not divisible by groups");
        if (init == ConvInit::FAN_IN) {
            T bound = T(1) / std::sqrt(static_cast<T>((in_c / groups_) * k * k));
            for (auto& e : w.value.v) e = static_cast<T>(rng.uniform(-bound, bound));
        } else {
            w.value.fill(T(0));
        }
        b.value.fill(T(0));
        w.zero_grad();
        b.zero_grad();
    }

    Var<T> apply(Var<T> x) {
        Tape<T>& tp = *x.tape;
        return conv2d(x, tp.use(w), tp.use(b), stride, pad, groups);
    }

    std::size_t param_count() const { return w.size() + b.size(); }

    void collect(ParamList<T>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

// conv3x3 -> ReLU -> conv3x3 plus identity skip. The second conv starts at
// zero so a fresh block is exactly the identity.
template <typename T>
struct ResidualBlock {
    ConvLayer<T> conv1, conv2;

    ResidualBlock(const std::string& path, int channels, Rng& rng)
        : conv1(path + ".conv1", channels, channels, 3, 1, 1, 1, rng),
          conv2(path + ".conv2", channels, channels, 3, 1, 1, 1, rng, ConvInit::ZERO) {}

    Var<T> apply(Var<T> x) { return add(conv2.apply(relu(conv1.apply(x))), x); }

    std::size_t param_count() const { return conv1.param_count() + conv2.param_count(); }

    void collect(ParamList<T>& out) {
        conv1.collect(out);
        conv2.collect(out);
    }
};

template <typename T>
using VarPyramid = PyramidOf<Var<T>>;

// Appends one scale level: new bottom = stride-2 conv of the old bottom,
// upper levels pass through untouched.
template <typename T>
struct TransitionModule {
    ConvLayer<T> down;

    TransitionModule(const std::string& path, int channels, Rng& rng)
        : down(path + ".down", channels, channels, 3, 2, 1, 1, rng) {}

    VarPyramid<T> apply(const VarPyramid<T>& p) {
        VarPyramid<T> out = p;
        out.levels.push_back(down.apply(p.levels.back()));
        return out;
    }

    std::size_t param_count() const { return down.param_count(); }

    void collect(ParamList<T>& out) { down.collect(out); }
};

// One residual block per scale, applied independently; shapes preserved.
template <typename T>
struct ParallelModule {
    std::vector<ResidualBlock<T>> blocks;

    ParallelModule(const std::string& path, int channels, int scales, Rng& rng) {
        blocks.reserve(static_cast<std::size_t>(scales));
        for (int d = 0; d < scales; ++d)
            blocks.emplace_back(path + ".s" + std::to_string(d), channels, rng);
    }

    VarPyramid<T> apply(const VarPyramid<T>& p) {
        if (p.levels.size() != blocks.size())
            throw ConfigError("parallel: pyramid has " + std::to_string(p.levels.size()) +
                              " levels, module built for " + std::to_string(blocks.size()));
        VarPyramid<T> out;
        for (std::size_t d = 0; d < blocks.size(); ++d)
            out.levels.push_back(blocks[d].apply(p.levels[d]));
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& blk : blocks) n += blk.param_count();
        return n;
    }

    void collect(ParamList<T>& out) {
        for (auto& blk : blocks) blk.collect(out);
    }
};

// Every output level is the ReLU of a sum over all input levels: identity
// at equal scale, a chain of stride-2 convs downward, bilinear upsampling
// upward. Each (src,dst) down pair owns its own conv chain.
template <typename T>
struct FusionModule {
    int scales;
    // down[src][dst] holds dst-src convs for src < dst; empty otherwise.
    std::vector<std::vector<std::vector<ConvLayer<T>>>> down;

    FusionModule(const std::string& path, int channels, int scales_, Rng& rng) : scales(scales_) {
        down.resize(static_cast<std::size_t>(scales));
        for (int src = 0; src < scales; ++src) {
            down[static_cast<std::size_t>(src)].resize(static_cast<std::size_t>(scales));
            for (int dst = src + 1; dst < scales; ++dst) {
                auto& chain = down[static_cast<std::size_t>(src)][static_cast<std::size_t>(dst)];
                for (int step = 0; step < dst - src; ++step)
                    chain.emplace_back(path + ".down" + std::to_string(src) + "to" +
                                           std::to_string(dst) + ".k" + std::to_string(step),
                                       channels, channels, 3, 2, 1, 1, rng);
            }
        }
    }

    VarPyramid<T> apply(const VarPyramid<T>& p) {
        if (static_cast<int>(p.levels.size()) != scales)
            throw ConfigError("fusion: pyramid level count mismatch");
        VarPyramid<T> out;
        for (int dst = 0; dst < scales; ++dst) {
            Var<T> acc = p.levels[static_cast<std::size_t>(dst)];  // identity path
            const ShapeVec& ds = acc.shape();
            for (int src = 0; src < scales; ++src) {
                if (src == dst) continue;
                Var<T> path_out = p.levels[static_cast<std::size_t>(src)];
                if (src < dst) {
                    for (auto& conv :
                         down[static_cast<std::size_t>(src)][static_cast<std::size_t>(dst)])
                        path_out = conv.apply(path_out);
                } else {
                    path_out = bilinear_resize(path_out, ds[1], ds[2]);
                }
                acc = add(acc, path_out);
            }
            out.levels.push_back(relu(acc));
        }
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& row : down)
            for (const auto& chain : row)
                for (const auto& conv : chain) n += conv.param_count();
        return n;
    }

    void collect(ParamList<T>& out) {
        for (auto& row : down)
            for (auto& chain : row)
                for (auto& conv : chain) conv.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Attention operations (the candidate set searched at each site)
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionOpBase {
    virtual ~AttentionOpBase() = default;
    virtual AttentionOpKind kind() const = 0;
    virtual Var<T> apply(Var<T> z) = 0;
    virtual std::size_t param_count() const = 0;
    virtual void collect(ParamList<T>&) {}
};

// Gate = sigmoid(mlp(avg_pool)) or sigmoid(mlp(avg_pool) + mlp(max_pool));
// the two pooling branches share one MLP. Gate broadcasts over space.
template <typename T>
struct ChannelAttentionOp : AttentionOpBase<T> {
    ConvLayer<T> fc1, fc2;
    bool use_max_branch;

    ChannelAttentionOp(const std::string& path, int channels, bool use_max, Rng& rng)
        : fc1(path + ".fc1", channels, hidden_width(channels), 1, 1, 0, 1, rng),
          fc2(path + ".fc2", hidden_width(channels), channels, 1, 1, 0, 1, rng),
          use_max_branch(use_max) {}

    static int hidden_width(int channels) { return std::max(1, channels / kAttentionMlpReduction); }

    AttentionOpKind kind() const override {
        return use_max_branch ? AttentionOpKind::CA_V2 : AttentionOpKind::CA_V1;
    }

    Var<T> apply(Var<T> z) override {
        Var<T> logit = fc2.apply(relu(fc1.apply(global_avg_pool(z))));
        if (use_max_branch)
            logit = add(logit, fc2.apply(relu(fc1.apply(global_max_pool(z)))));
        return mul(sigmoid(logit), z);
    }

    std::size_t param_count() const override { return fc1.param_count() + fc2.param_count(); }

    void collect(ParamList<T>& out) override {
        fc1.collect(out);
        fc2.collect(out);
    }
};

// Gate = sigmoid(conv3x3([channel-mean; channel-max])), one gate value per
// pixel, broadcast over channels.
template <typename T>
struct SpatialAttentionOp : AttentionOpBase<T> {
    ConvLayer<T> f3c;

    SpatialAttentionOp(const std::string& path, Rng& rng)
        : f3c(path + ".f3c", 2, 1, 3, 1, 1, 1, rng) {}

    AttentionOpKind kind() const override { return AttentionOpKind::SPATIAL; }

    Var<T> apply(Var<T> z) override {
        Var<T> pooled = concat_channels<T>({channel_mean(z), channel_max(z)});
        return mul(sigmoid(f3c.apply(pooled)), z);
    }

    std::size_t param_count() const override { return f3c.param_count(); }

    void collect(ParamList<T>& out) override { f3c.collect(out); }
};

// Gate = sigmoid(depthwise conv3x3(z)), elementwise.
template <typename T>
struct NormAttentionOp : AttentionOpBase<T> {
    ConvLayer<T> fd;

    NormAttentionOp(const std::string& path, int channels, Rng& rng)
        : fd(path + ".fd", channels, channels, 3, 1, 1, channels, rng) {}

    AttentionOpKind kind() const override { return AttentionOpKind::NORM; }

    Var<T> apply(Var<T> z) override { return mul(sigmoid(fd.apply(z)), z); }

    std::size_t param_count() const override { return fd.param_count(); }

    void collect(ParamList<T>& out) override { fd.collect(out); }
};

// Depthwise gate applied on top of the spatial gate's output.
template <typename T>
struct CbaOp : AttentionOpBase<T> {
    SpatialAttentionOp<T> spatial;
    NormAttentionOp<T> norm;

    CbaOp(const std::string& path, int channels, Rng& rng)
        : spatial(path + ".spatial", rng), norm(path + ".norm", channels, rng) {}

    AttentionOpKind kind() const override { return AttentionOpKind::CBA; }

    Var<T> apply(Var<T> z) override { return norm.apply(spatial.apply(z)); }

    std::size_t param_count() const override {
        return spatial.param_count() + norm.param_count();
    }

    void collect(ParamList<T>& out) override {
        spatial.collect(out);
        norm.collect(out);
    }
};

template <typename T>
struct IdentityOp : AttentionOpBase<T> {
    AttentionOpKind kind() const override { return AttentionOpKind::IDENTITY; }
    Var<T> apply(Var<T> z) override { return z; }
    std::size_t param_count() const override { return 0; }
};

template <typename T>
struct ZeroOp : AttentionOpBase<T> {
    AttentionOpKind kind() const override { return AttentionOpKind::ZERO; }
    Var<T> apply(Var<T> z) override {
        return z.tape->value(Tensor<T>::zeros(z.shape()));
    }
    std::size_t param_count() const override { return 0; }
};

template <typename T>
std::unique_ptr<AttentionOpBase<T>> make_attention_op(AttentionOpKind kind,
                                                      const std::string& path, int channels,
                                                      Rng& rng) {
    switch (kind) {
        case AttentionOpKind::CA_V1:
            return std::make_unique<ChannelAttentionOp<T>>(path, channels, false, rng);
        case AttentionOpKind::CA_V2:
            return std::make_unique<ChannelAttentionOp<T>>(path, channels, true, rng);
        case AttentionOpKind::SPATIAL:
            return std::make_unique<SpatialAttentionOp<T>>(path, rng);
        case AttentionOpKind::NORM:
            return std::make_unique<NormAttentionOp<T>>(path, channels, rng);
        case AttentionOpKind::CBA:
            return std::make_unique<CbaOp<T>>(path, channels, rng);
        case AttentionOpKind::IDENTITY:
            return std::make_unique<IdentityOp<T>>();
        case AttentionOpKind::ZERO:
            return std::make_unique<ZeroOp<T>>();
    }
    throw GenotypeError("unknown attention op kind");
}

// ---------------------------------------------------------------------------
// Attention module
// ---------------------------------------------------------------------------

// Per scale: split channels into halves (X1, X2), gate them through the
// three application sites, and recombine:
//   Y1 = site0(X1); Y2 = site1(X2) + site2(Y1); out = f1c([Y1; Y2; Y1+Y2]).
// Each site holds all seven candidate ops; the relaxed forward mixes them
// by the site's probability vector, the discrete forward picks one.
template <typename T>
struct AttentionModule {
    struct PerScale {
        std::array<std::vector<std::unique_ptr<AttentionOpBase<T>>>, kAttentionSites> sites;
        std::unique_ptr<ConvLayer<T>> f1c;
    };

    int channels;
    std::vector<PerScale> per_scale;

    AttentionModule(const std::string& path, int channels_, int scales, Rng& rng)
        : channels(channels_) {
        if (channels % 2 != 0) throw ConfigError("attention: channel count must be even");
        int half = channels / 2;
        per_scale.resize(static_cast<std::size_t>(scales));
        for (int d = 0; d < scales; ++d) {
            PerScale& ps = per_scale[static_cast<std::size_t>(d)];
            std::string sp = path + ".s" + std::to_string(d);
            for (int s = 0; s < kAttentionSites; ++s)
                for (int k = 0; k < kNumAttentionOps; ++k)
                    ps.sites[static_cast<std::size_t>(s)].push_back(make_attention_op<T>(
                        static_cast<AttentionOpKind>(k),
                        sp + ".site" + std::to_string(s) + "." +
                            attention_op_name(static_cast<AttentionOpKind>(k)),
                        half, rng));
            ps.f1c = std::make_unique<ConvLayer<T>>(sp + ".f1c", 3 * half, channels, 1, 1, 0, 1,
                                                    rng);
        }
    }

    VarPyramid<T> apply_discrete(const VarPyramid<T>& p,
                                 const std::array<AttentionOpKind, kAttentionSites>& kinds,
                                 int* ops_touched = nullptr) {
        check_levels(p);
        VarPyramid<T> out;
        for (std::size_t d = 0; d < p.levels.size(); ++d) {
            PerScale& ps = per_scale[d];
            auto [x1, x2] = split(p.levels[d]);
            Var<T> y1 = op(ps, 0, kinds[0]).apply(x1);
            Var<T> y2 = add(op(ps, 1, kinds[1]).apply(x2), op(ps, 2, kinds[2]).apply(y1));
            out.levels.push_back(combine(ps, y1, y2));
        }
        // One searched decision per site, regardless of how many scales it gates.
        if (ops_touched) *ops_touched += kAttentionSites;
        return out;
    }

    // betas[s] is a rank-1 Var of 7 probabilities for site s.
    VarPyramid<T> apply_mixed(const VarPyramid<T>& p,
                              const std::array<Var<T>, kAttentionSites>& betas) {
        check_levels(p);
        VarPyramid<T> out;
        for (std::size_t d = 0; d < p.levels.size(); ++d) {
            PerScale& ps = per_scale[d];
            auto [x1, x2] = split(p.levels[d]);
            Var<T> y1 = mixed_site(ps, 0, betas[0], x1);
            Var<T> y2 = add(mixed_site(ps, 1, betas[1], x2), mixed_site(ps, 2, betas[2], y1));
            out.levels.push_back(combine(ps, y1, y2));
        }
        return out;
    }

    // Parameter count of choosing op `kind` at site `s`, summed over scales
    // (one choice gates every scale simultaneously).
    std::size_t site_op_param_count(int s, AttentionOpKind kind) const {
        std::size_t n = 0;
        for (const auto& ps : per_scale)
            n += ps.sites[static_cast<std::size_t>(s)][static_cast<std::size_t>(kind)]
                     ->param_count();
        return n;
    }

    // Parameters always present regardless of the searched choices.
    std::size_t fixed_param_count() const {
        std::size_t n = 0;
        for (const auto& ps : per_scale) n += ps.f1c->param_count();
        return n;
    }

    void collect(ParamList<T>& out) {
        for (auto& ps : per_scale) {
            for (auto& site : ps.sites)
                for (auto& o : site) o->collect(out);
            ps.f1c->collect(out);
        }
    }

private:
    void check_levels(const VarPyramid<T>& p) const {
        if (p.levels.size() != per_scale.size())
            throw ConfigError("attention: pyramid level count mismatch");
    }

    AttentionOpBase<T>& op(PerScale& ps, int site, AttentionOpKind kind) {
        return *ps.sites[static_cast<std::size_t>(site)][static_cast<std::size_t>(kind)];
    }

    std::pair<Var<T>, Var<T>> split(Var<T> x) {
        int half = channels / 2;
        return {slice_channels(x, 0, half), slice_channels(x, half, channels)};
    }

    Var<T> combine(PerScale& ps, Var<T> y1, Var<T> y2) {
        return ps.f1c->apply(concat_channels<T>({y1, y2, add(y1, y2)}));
    }

    Var<T> mixed_site(PerScale& ps, int site, Var<T> beta, Var<T> z) {
        Var<T> acc{};
        for (int k = 0; k < kNumAttentionOps; ++k) {
            auto kind = static_cast<AttentionOpKind>(k);
            if (kind == AttentionOpKind::ZERO) continue;  // contributes exactly zero
            Var<T> term = mul(op(ps, site, kind).apply(z), index(beta, k));
            acc = acc.valid() ? add(acc, term) : term;
        }
        return acc;
    }
};

}  // namespace manas
