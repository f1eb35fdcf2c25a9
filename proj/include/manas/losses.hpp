// SPDX-License-Identifier: Apache-2.0
//
// Training losses. The external loss scores each de-rained output against
// the shared ground truth (MSE plus SSIM dissimilarity); the internal
// loss enforces agreement among the N outputs of one multi-to-one pair;
// the complexity loss is the expected parameter count (in millions) under
// the current architecture probabilities; the entropy loss pushes those
// probabilities toward 0/1 vertices.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "manas/autodiff.hpp"
#include "manas/core.hpp"
#include "manas/metrics.hpp"

namespace manas {

inline constexpr double kEntropyLogClamp = 1e-7;

// (1/N) * sum_i [ MSE(O_i, G) + (1 - SSIM(O_i, G)) ].
template <typename T>
Var<T> external_loss(const std::vector<Var<T>>& outputs, Var<T> gt) {
    if (outputs.empty()) throw ConfigError("external_loss: no outputs");
    Var<T> acc{};
    for (Var<T> o : outputs) {
        Var<T> term = add(mse(o, gt), add_const(neg(ssim(o, gt)), T(1)));
        acc = acc.valid() ? add(acc, term) : term;
    }
    return scale(acc, T(1) / static_cast<T>(outputs.size()));
}

// Mean pairwise MSE over the C(N,2) output pairs.
template <typename T>
Var<T> internal_loss(const std::vector<Var<T>>& outputs) {
    std::size_t n = outputs.size();
    if (n < 2) throw ConfigError("internal_loss: needs at least 2 outputs, got " +
                                 std::to_string(n));
    Var<T> acc{};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            Var<T> term = mse(outputs[i], outputs[j]);
            acc = acc.valid() ? add(acc, term) : term;
        }
    T pairs = static_cast<T>(n * (n - 1) / 2);
    return scale(acc, T(1) / pairs);
}

// Per-choice parameter costs in millions: one [2] row per column instance,
// one [7] row per attention site instance.
struct ComplexityTable {
    std::vector<std::array<double, 2>> column_costs;
    std::vector<std::array<double, kNumAttentionOps>> site_costs;
};

// (1/(U+V)) * [ sum over columns alpha . Omega + sum over sites beta . Lambda ].
template <typename T>
Var<T> complexity_loss(const std::vector<Var<T>>& alphas, const std::vector<Var<T>>& betas,
                       const ComplexityTable& table) {
    if (alphas.size() != table.column_costs.size() || betas.size() != table.site_costs.size())
        throw ConfigError("complexity_loss: probability/cost arity mismatch");
    std::size_t u = 2 * alphas.size();
    std::size_t v = static_cast<std::size_t>(kNumAttentionOps) * betas.size();
    if (u + v == 0) throw ConfigError("complexity_loss: empty architecture");
    Tape<T>* tape = !alphas.empty() ? alphas[0].tape : betas[0].tape;

    Var<T> acc{};
    auto accumulate = [&](Var<T> term) { acc = acc.valid() ? add(acc, term) : term; };
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        Tensor<T> cost({2});
        cost[0] = static_cast<T>(table.column_costs[i][0]);
        cost[1] = static_cast<T>(table.column_costs[i][1]);
        accumulate(sum(mul(alphas[i], tape->value(std::move(cost)))));
    }
    for (std::size_t i = 0; i < betas.size(); ++i) {
        Tensor<T> cost({kNumAttentionOps});
        for (int k = 0; k < kNumAttentionOps; ++k)
            cost[static_cast<std::size_t>(k)] = static_cast<T>(table.site_costs[i][static_cast<std::size_t>(k)]);
        accumulate(sum(mul(betas[i], tape->value(std::move(cost)))));
    }
    return scale(acc, T(1) / static_cast<T>(u + v));
}

namespace detail {

// Sum over the vector of -[p ln p + (1-p) ln(1-p)], with the log arguments
// floored so saturated probabilities stay finite.
template <typename T>
Var<T> binary_entropy_sum(Var<T> p) {
    T eps = static_cast<T>(kEntropyLogClamp);
    Var<T> q = add_const(neg(p), T(1));
    Var<T> plog = log_(clamp(p, eps, T(1)));
    Var<T> qlog = log_(clamp(q, eps, T(1)));
    return neg(sum(add(mul(p, plog), mul(q, qlog))));
}

}  // namespace detail

// (1/U) * sum over alpha scalars of binary entropy, plus the same over the
// V beta scalars. Zero exactly at 0/1 vertices, maximal at uniform.
template <typename T>
Var<T> arch_entropy_loss(const std::vector<Var<T>>& alphas, const std::vector<Var<T>>& betas) {
    if (alphas.empty() && betas.empty()) throw ConfigError("arch_entropy_loss: empty architecture");
    Var<T> total{};
    auto accumulate = [&](Var<T>& acc, Var<T> term) { acc = acc.valid() ? add(acc, term) : term; };
    if (!alphas.empty()) {
        Var<T> ha{};
        for (Var<T> a : alphas) accumulate(ha, detail::binary_entropy_sum(a));
        std::size_t u = 2 * alphas.size();
        accumulate(total, scale(ha, T(1) / static_cast<T>(u)));
    }
    if (!betas.empty()) {
        Var<T> hb{};
        for (Var<T> b : betas) accumulate(hb, detail::binary_entropy_sum(b));
        std::size_t v = static_cast<std::size_t>(kNumAttentionOps) * betas.size();
        accumulate(total, scale(hb, T(1) / static_cast<T>(v)));
    }
    return total;
}

// Per-step scalar summary. trainA/trainB are derived from the component
// fields in double precision, so the documented identities hold exactly.
struct LossReport {
    double ext = 0.0;
    double internal = 0.0;
    double arch = 0.0;
    double comp = 0.0;
    double trainA = 0.0;
    double trainB = 0.0;
};

inline LossReport make_loss_report(double ext, double internal, double arch, double comp,
                                   double lambda_arch, double lambda_comp) {
    LossReport r;
    r.ext = ext;
    r.internal = internal;
    r.arch = arch;
    r.comp = comp;
    r.trainA = ext + internal;
    r.trainB = r.trainA + lambda_arch * arch + lambda_comp * comp;
    return r;
}

std::string loss_csv_header();
std::string loss_csv_row(long step, const LossReport& r);

}  // namespace manas
