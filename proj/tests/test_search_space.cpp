// SPDX-License-Identifier: Apache-2.0
//
// Search-space operator tests: shape contracts, hand-oracle forward values
// (against an independent naive convolution), exact parameter counts, gate
// boundedness, and finite-difference gradient checks for every operator.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "manas/search_space.hpp"

using namespace manas;

namespace {

Tensor<double> random_tensor(ShapeVec shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& e : t.v) e = rng.uniform(lo, hi);
    return t;
}

// Independent reference convolution: direct per-output accumulation, no
// shared code with the library implementation.
Tensor<double> ref_conv(const Tensor<double>& x, const Tensor<double>& w,
                        const std::vector<double>& bias, int stride, int pad, int groups) {
    int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    int co = w.dim(0), cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    int cog = co / groups;
    Tensor<double> out({co, ho, wo});
    for (int o = 0; o < co; ++o)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
                int g = o / cog;
                for (int i = 0; i < cig; ++i)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int iy = oy * stride - pad + ky;
                            int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            acc += w.at4(o, i, ky, kx) * x.at3(g * cig + i, iy, ix);
                        }
                out.at3(o, oy, ox) = acc;
            }
    (void)ci;
    return out;
}

VarPyramid<double> input_pyramid(Tape<double>& tape, const std::vector<Tensor<double>>& levels) {
    VarPyramid<double> p;
    for (const auto& t : levels) p.levels.push_back(tape.input(t));
    return p;
}

// Finite-difference check over every parameter in `params` plus the extra
// "inputs as parameters" trick: the forward closure reads all values fresh
// each call, so perturbing a Param re-evaluates honestly.
void module_grad_check(ParamList<double> params,
                       const std::function<Var<double>(Tape<double>&)>& forward,
                       double h = 1e-4, double tol = 1e-4) {
    for (auto* p : params) p->zero_grad();
    {
        Tape<double> tape;
        Var<double> root = forward(tape);
        REQUIRE(root.val().size() == 1);
        tape.backward(root);
    }
    auto value = [&]() {
        Tape<double> tape;
        return forward(tape).val()[0];
    };
    for (auto* p : params) {
        for (std::size_t k = 0; k < p->size(); ++k) {
            double keep = p->value[k];
            p->value[k] = keep + h;
            double fplus = value();
            p->value[k] = keep - h;
            double fminus = value();
            p->value[k] = keep;
            double fd = (fplus - fminus) / (2.0 * h);
            double denom = std::max({1.0, std::abs(fd), std::abs(p->grad[k])});
            CHECK(std::abs(p->grad[k] - fd) / denom < tol);
        }
    }
}

// Scalar readout with fixed pseudo-random weights over a pyramid.
Var<double> pyramid_readout(Tape<double>& tape, const VarPyramid<double>& p, std::uint64_t seed) {
    Rng rng(seed);
    Var<double> acc{};
    for (const auto& lvl : p.levels) {
        Tensor<double> w(lvl.shape());
        for (auto& e : w.v) e = rng.uniform(0.25, 1.75);
        Var<double> term = sum(mul(lvl, tape.value(std::move(w))));
        acc = acc.valid() ? add(acc, term) : term;
    }
    return acc;
}

}  // namespace

TEST_CASE("transition adds one level and passes the others through") {
    Rng rng(1);
    TransitionModule<double> tr("tr", 4, rng);
    Tensor<double> l0 = random_tensor({4, 8, 8}, rng);
    Tape<double> tape;
    auto out = tr.apply(input_pyramid(tape, {l0}));
    REQUIRE(out.levels.size() == 2);
    CHECK(out.levels[0].shape() == ShapeVec{4, 8, 8});
    CHECK(out.levels[1].shape() == ShapeVec{4, 4, 4});
    // Upper level is the very same tape node, hence bitwise equal.
    CHECK(max_abs_diff(out.levels[0].val(), l0) == 0.0);
    // New level equals the reference strided convolution.
    Tensor<double> expect = ref_conv(l0, tr.down.w.value,
                                     {tr.down.b.value.v.begin(), tr.down.b.value.v.end()}, 2, 1, 1);
    CHECK(max_abs_diff(out.levels[1].val(), expect) < 1e-12);
}

TEST_CASE("transition of zero input with zero bias is zero") {
    Rng rng(2);
    TransitionModule<double> tr("tr", 4, rng);
    Tape<double> tape;
    auto out = tr.apply(input_pyramid(tape, {Tensor<double>({4, 8, 8}, 0.0)}));
    for (const auto& e : out.levels[1].val().v) CHECK(e == 0.0);
}

TEST_CASE("parallel preserves shapes and fresh blocks are the identity") {
    Rng rng(3);
    ParallelModule<double> par("par", 4, 2, rng);
    Tensor<double> l0 = random_tensor({4, 8, 8}, rng);
    Tensor<double> l1 = random_tensor({4, 4, 4}, rng);
    Tape<double> tape;
    auto out = par.apply(input_pyramid(tape, {l0, l1}));
    CHECK(out.levels[0].shape() == ShapeVec{4, 8, 8});
    CHECK(out.levels[1].shape() == ShapeVec{4, 4, 4});
    // Second conv of each block starts at zero, so out == in exactly.
    CHECK(max_abs_diff(out.levels[0].val(), l0) == 0.0);
    CHECK(max_abs_diff(out.levels[1].val(), l1) == 0.0);
}

TEST_CASE("parallel on a single pixel matches the hand oracle") {
    Rng rng(4);
    ParallelModule<double> par("par", 2, 1, rng);
    // Fill both convs with known values (bypass the zero init of conv2).
    for (auto& e : par.blocks[0].conv1.w.value.v) e = rng.uniform(-0.5, 0.5);
    for (auto& e : par.blocks[0].conv2.w.value.v) e = rng.uniform(-0.5, 0.5);
    par.blocks[0].conv1.b.value.v = {0.1, -0.2};
    par.blocks[0].conv2.b.value.v = {0.05, 0.3};

    Tensor<double> x({2, 1, 1});
    x.v = {0.7, -0.4};
    Tape<double> tape;
    auto out = par.apply(input_pyramid(tape, {x}));

    // On a 1x1 map a padded 3x3 conv reduces to the kernel centre.
    auto center = [](const Tensor<double>& w, int o, int i) { return w.at4(o, i, 1, 1); };
    double h0 = center(par.blocks[0].conv1.w.value, 0, 0) * 0.7 +
                center(par.blocks[0].conv1.w.value, 0, 1) * -0.4 + 0.1;
    double h1 = center(par.blocks[0].conv1.w.value, 1, 0) * 0.7 +
                center(par.blocks[0].conv1.w.value, 1, 1) * -0.4 + -0.2;
    h0 = std::max(0.0, h0);
    h1 = std::max(0.0, h1);
    double y0 = center(par.blocks[0].conv2.w.value, 0, 0) * h0 +
                center(par.blocks[0].conv2.w.value, 0, 1) * h1 + 0.05 + 0.7;
    double y1 = center(par.blocks[0].conv2.w.value, 1, 0) * h0 +
                center(par.blocks[0].conv2.w.value, 1, 1) * h1 + 0.3 + -0.4;
    CHECK(out.levels[0].val()[0] == doctest::Approx(y0).epsilon(1e-12));
    CHECK(out.levels[0].val()[1] == doctest::Approx(y1).epsilon(1e-12));
}

TEST_CASE("fusion with zeroed cross paths is the identity on nonnegative input") {
    Rng rng(5);
    FusionModule<double> fu("fu", 4, 2, rng);
    for (auto& row : fu.down)
        for (auto& chain : row)
            for (auto& conv : chain) conv.w.value.fill(0.0);
    Tensor<double> l0 = random_tensor({4, 8, 8}, rng, 0.0, 1.0);
    Tensor<double> l1 = random_tensor({4, 4, 4}, rng, 0.0, 1.0);
    Tape<double> tape;
    auto out = fu.apply(input_pyramid(tape, {l0, l1}));
    // Down path is zero; the up path contributes upsample(l1) at level 0,
    // so only level 1 reduces to identity. Use a zero l1 to isolate level 0.
    Tape<double> tape2;
    auto out2 = fu.apply(input_pyramid(tape2, {l0, Tensor<double>({4, 4, 4}, 0.0)}));
    CHECK(max_abs_diff(out2.levels[0].val(), l0) == 0.0);
    CHECK(max_abs_diff(out.levels[1].val(), l1) == 0.0);
}

TEST_CASE("fusion output is nonnegative everywhere") {
    Rng rng(6);
    FusionModule<double> fu("fu", 4, 3, rng);
    Tape<double> tape;
    auto out = fu.apply(input_pyramid(tape, {random_tensor({4, 8, 8}, rng),
                                             random_tensor({4, 4, 4}, rng),
                                             random_tensor({4, 2, 2}, rng)}));
    for (const auto& lvl : out.levels)
        for (const auto& e : lvl.val().v) CHECK(e >= 0.0);
}

TEST_CASE("fusion two-scale value matches a direct-summation oracle") {
    Rng rng(7);
    FusionModule<double> fu("fu", 2, 2, rng);
    Tensor<double> l0 = random_tensor({2, 4, 4}, rng);
    Tensor<double> l1 = random_tensor({2, 2, 2}, rng);
    Tape<double> tape;
    auto out = fu.apply(input_pyramid(tape, {l0, l1}));

    // Level 1: relu(l1 + strided_conv(l0)), via the reference conv.
    const auto& conv = fu.down[0][1][0];
    Tensor<double> downed = ref_conv(l0, conv.w.value,
                                     {conv.b.value.v.begin(), conv.b.value.v.end()}, 2, 1, 1);
    for (std::size_t i = 0; i < downed.size(); ++i)
        downed[i] = std::max(0.0, downed[i] + l1[i]);
    CHECK(max_abs_diff(out.levels[1].val(), downed) < 1e-12);

    // Level 0: relu(l0 + bilinear_up(l1)); constant-map case has an exact value.
    Tape<double> tape3;
    Tensor<double> c0({2, 4, 4}, 0.25);
    Tensor<double> c1({2, 2, 2}, 0.5);
    auto out3 = fu.apply(input_pyramid(tape3, {c0, c1}));
    for (const auto& e : out3.levels[0].val().v) CHECK(e == doctest::Approx(0.75));
}

TEST_CASE("attention op forward contracts") {
    Rng rng(8);
    Tensor<double> z = random_tensor({4, 6, 6}, rng);
    Tape<double> tape;
    auto vz = tape.input(z);

    SUBCASE("zero and identity") {
        auto zero = make_attention_op<double>(AttentionOpKind::ZERO, "a", 4, rng);
        auto out = zero->apply(vz);
        for (const auto& e : out.val().v) CHECK(e == 0.0);
        auto ident = make_attention_op<double>(AttentionOpKind::IDENTITY, "a", 4, rng);
        CHECK(max_abs_diff(ident->apply(vz).val(), z) == 0.0);
    }

    SUBCASE("channel attention with zero MLP gates at one half") {
        ChannelAttentionOp<double> ca("ca", 4, false, rng);
        ca.fc1.w.value.fill(0.0);
        ca.fc2.w.value.fill(0.0);
        auto out = ca.apply(vz);
        for (std::size_t i = 0; i < z.size(); ++i)
            CHECK(out.val()[i] == doctest::Approx(0.5 * z[i]));
    }

    SUBCASE("gates stay inside (0,1): output strictly shrinks") {
        for (auto kind : {AttentionOpKind::CA_V1, AttentionOpKind::CA_V2,
                          AttentionOpKind::SPATIAL, AttentionOpKind::NORM, AttentionOpKind::CBA}) {
            auto op = make_attention_op<double>(kind, "op", 4, rng);
            auto out = op->apply(vz);
            REQUIRE(out.shape() == z.shape);
            for (std::size_t i = 0; i < z.size(); ++i) {
                CHECK(std::abs(out.val()[i]) <= std::abs(z[i]));
                CHECK(out.val()[i] * z[i] >= 0.0);  // gating never flips sign
            }
        }
    }
}

TEST_CASE("attention module forward contracts") {
    Rng rng(9);

    SUBCASE("all-zero sites give an all-zero output") {
        AttentionModule<double> att("att", 4, 1, rng);
        Tape<double> tape;
        auto p = input_pyramid(tape, {random_tensor({4, 6, 6}, rng)});
        auto out = att.apply_discrete(
            p, {AttentionOpKind::ZERO, AttentionOpKind::ZERO, AttentionOpKind::ZERO});
        for (const auto& e : out.levels[0].val().v) CHECK(e == 0.0);
    }

    SUBCASE("identity sites with a selector recombination reproduce the input") {
        AttentionModule<double> att("att", 4, 1, rng);
        // f1c input blocks are [Y1; Y2; Y1+Y2]; select [Y1; Y2] = [X1; X2].
        auto& f1c = *att.per_scale[0].f1c;
        f1c.w.value.fill(0.0);
        for (int o = 0; o < 4; ++o) f1c.w.value.at4(o, o, 0, 0) = 1.0;
        Tensor<double> x = random_tensor({4, 6, 6}, rng);
        Tape<double> tape;
        auto out = att.apply_discrete(
            input_pyramid(tape, {x}),
            {AttentionOpKind::IDENTITY, AttentionOpKind::IDENTITY, AttentionOpKind::ZERO});
        CHECK(max_abs_diff(out.levels[0].val(), x) < 1e-15);
    }

    SUBCASE("single pixel C=2 hand oracle") {
        AttentionModule<double> att("att", 2, 1, rng);
        auto& f1c = *att.per_scale[0].f1c;
        // Known 1x1 recombination: out0 = 1*y1 + 2*y2 + 3*(y1+y2) + b0, etc.
        for (std::size_t i = 0; i < f1c.w.value.size(); ++i)
            f1c.w.value[i] = static_cast<double>(i + 1) * 0.1;
        f1c.b.value.v = {0.05, -0.05};
        Tensor<double> x({2, 1, 1});
        x.v = {0.6, -0.8};
        Tape<double> tape;
        auto out = att.apply_discrete(
            input_pyramid(tape, {x}),
            {AttentionOpKind::IDENTITY, AttentionOpKind::IDENTITY, AttentionOpKind::IDENTITY});
        // y1 = x1 = 0.6; y2 = x2 + y1 = -0.2; concat = [0.6, -0.2, 0.4].
        double y0 = 0.1 * 0.6 + 0.2 * -0.2 + 0.3 * 0.4 + 0.05;
        double y1 = 0.4 * 0.6 + 0.5 * -0.2 + 0.6 * 0.4 - 0.05;
        CHECK(out.levels[0].val()[0] == doctest::Approx(y0));
        CHECK(out.levels[0].val()[1] == doctest::Approx(y1));
    }

    SUBCASE("one-hot mixture equals the discrete choice") {
        AttentionModule<double> att("att", 4, 2, rng);
        Tensor<double> l0 = random_tensor({4, 8, 8}, rng);
        Tensor<double> l1 = random_tensor({4, 4, 4}, rng);
        Tape<double> tape;
        auto p = input_pyramid(tape, {l0, l1});
        std::array<AttentionOpKind, 3> kinds = {AttentionOpKind::SPATIAL, AttentionOpKind::NORM,
                                                AttentionOpKind::IDENTITY};
        std::array<Var<double>, 3> betas;
        for (int s = 0; s < 3; ++s) {
            Tensor<double> onehot({kNumAttentionOps}, 0.0);
            onehot[static_cast<std::size_t>(kinds[static_cast<std::size_t>(s)])] = 1.0;
            betas[static_cast<std::size_t>(s)] = tape.value(onehot);
        }
        auto mixed = att.apply_mixed(p, betas);
        auto discrete = att.apply_discrete(p, kinds);
        for (int d = 0; d < 2; ++d)
            CHECK(max_abs_diff(mixed.levels[static_cast<std::size_t>(d)].val(),
                               discrete.levels[static_cast<std::size_t>(d)].val()) < 1e-12);
    }
}

TEST_CASE("exact parameter counts") {
    Rng rng(10);

    SUBCASE("residual block and parallel at C=16") {
        // One 3x3 conv at C=16: 3*3*16*16 weights + 16 biases = 2320.
        ResidualBlock<double> blk("b", 16, rng);
        CHECK(blk.param_count() == 4640);
        ParallelModule<double> par("p", 16, 2, rng);
        CHECK(par.param_count() == 9280);
    }

    SUBCASE("transition and fusion at C=16") {
        TransitionModule<double> tr("t", 16, rng);
        CHECK(tr.param_count() == 2320);
        FusionModule<double> fu2("f2", 16, 2, rng);
        CHECK(fu2.param_count() == 2320);  // one down conv, up path weightless
        FusionModule<double> fu3("f3", 16, 3, rng);
        CHECK(fu3.param_count() == 4 * 2320);  // chains 0->1, 0->2 (2 convs), 1->2
    }

    SUBCASE("attention ops on an 8-channel split") {
        // Hidden width 8/4 = 2: fc1 = 2*8+2 = 18, fc2 = 8*2+8 = 24.
        auto ca1 = make_attention_op<double>(AttentionOpKind::CA_V1, "a", 8, rng);
        CHECK(ca1->param_count() == 42);
        auto ca2 = make_attention_op<double>(AttentionOpKind::CA_V2, "a", 8, rng);
        CHECK(ca2->param_count() == 42);
        auto sp = make_attention_op<double>(AttentionOpKind::SPATIAL, "a", 8, rng);
        CHECK(sp->param_count() == 19);  // 2->1 3x3 conv + bias
        auto nm = make_attention_op<double>(AttentionOpKind::NORM, "a", 8, rng);
        CHECK(nm->param_count() == 80);  // depthwise 3x3: 8*9 + 8
        auto cba = make_attention_op<double>(AttentionOpKind::CBA, "a", 8, rng);
        CHECK(cba->param_count() == 99);
        CHECK(make_attention_op<double>(AttentionOpKind::IDENTITY, "a", 8, rng)->param_count() == 0);
        CHECK(make_attention_op<double>(AttentionOpKind::ZERO, "a", 8, rng)->param_count() == 0);
    }

    SUBCASE("attention module site counts sum over scales") {
        AttentionModule<double> att("att", 16, 2, rng);
        CHECK(att.site_op_param_count(0, AttentionOpKind::NORM) == 2 * 80);
        CHECK(att.site_op_param_count(1, AttentionOpKind::ZERO) == 0);
        // f1c: 24->16 1x1 conv + bias = 400 per scale.
        CHECK(att.fixed_param_count() == 2 * 400);
    }
}

TEST_CASE("construction is deterministic given the seed") {
    Rng a(42), b(42);
    ParallelModule<double> pa("p", 4, 2, a);
    ParallelModule<double> pb("p", 4, 2, b);
    ParamList<double> la, lb;
    pa.collect(la);
    pb.collect(lb);
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) {
        CHECK(la[i]->path == lb[i]->path);
        CHECK(max_abs_diff(la[i]->value, lb[i]->value) == 0.0);
    }
}

TEST_CASE("gradient checks for every operator") {
    Rng rng(77);

    SUBCASE("transition") {
        TransitionModule<double> tr("tr", 4, rng);
        Param<double> in("in", {4, 8, 8});
        in.value = random_tensor({4, 8, 8}, rng);
        ParamList<double> params{&in};
        tr.collect(params);
        module_grad_check(params, [&](Tape<double>& tape) {
            VarPyramid<double> p;
            p.levels.push_back(tape.use(in));
            return pyramid_readout(tape, tr.apply(p), 1);
        });
    }

    SUBCASE("parallel") {
        ParallelModule<double> par("par", 4, 2, rng);
        // Give conv2 nonzero values so its gradient path is exercised.
        for (auto& blk : par.blocks)
            for (auto& e : blk.conv2.w.value.v) e = rng.uniform(-0.3, 0.3);
        Param<double> in0("in0", {4, 8, 8}), in1("in1", {4, 4, 4});
        in0.value = random_tensor({4, 8, 8}, rng);
        in1.value = random_tensor({4, 4, 4}, rng);
        ParamList<double> params{&in0, &in1};
        par.collect(params);
        module_grad_check(params, [&](Tape<double>& tape) {
            VarPyramid<double> p;
            p.levels.push_back(tape.use(in0));
            p.levels.push_back(tape.use(in1));
            return pyramid_readout(tape, par.apply(p), 2);
        });
    }

    SUBCASE("fusion") {
        FusionModule<double> fu("fu", 4, 2, rng);
        Param<double> in0("in0", {4, 8, 8}), in1("in1", {4, 4, 4});
        in0.value = random_tensor({4, 8, 8}, rng);
        in1.value = random_tensor({4, 4, 4}, rng);
        ParamList<double> params{&in0, &in1};
        fu.collect(params);
        module_grad_check(params, [&](Tape<double>& tape) {
            VarPyramid<double> p;
            p.levels.push_back(tape.use(in0));
            p.levels.push_back(tape.use(in1));
            return pyramid_readout(tape, fu.apply(p), 3);
        });
    }

    SUBCASE("each attention op") {
        for (auto kind : {AttentionOpKind::CA_V1, AttentionOpKind::CA_V2,
                          AttentionOpKind::SPATIAL, AttentionOpKind::NORM, AttentionOpKind::CBA}) {
            auto op = make_attention_op<double>(kind, "op", 4, rng);
            Param<double> in("in", {4, 6, 6});
            in.value = random_tensor({4, 6, 6}, rng);
            // Keep away from max-pool ties and the depthwise-gate kink.
            for (auto& e : in.value.v) e += (e >= 0 ? 0.05 : -0.05);
            ParamList<double> params{&in};
            op->collect(params);
            module_grad_check(params, [&](Tape<double>& tape) {
                Tensor<double> w(in.value.shape);
                Rng wr(4);
                for (auto& e : w.v) e = wr.uniform(0.25, 1.75);
                return sum(mul(op->apply(tape.use(in)), tape.value(std::move(w))));
            });
        }
    }

    SUBCASE("attention module, discrete and mixed") {
        AttentionModule<double> att("att", 4, 1, rng);
        Param<double> in("in", {4, 6, 6});
        in.value = random_tensor({4, 6, 6}, rng);
        std::array<AttentionOpKind, 3> kinds = {AttentionOpKind::CA_V2, AttentionOpKind::CBA,
                                                AttentionOpKind::SPATIAL};
        ParamList<double> params{&in};
        att.collect(params);
        module_grad_check(params, [&](Tape<double>& tape) {
            VarPyramid<double> p;
            p.levels.push_back(tape.use(in));
            return pyramid_readout(tape, att.apply_discrete(p, kinds), 5);
        });

        // Mixed forward: also check gradients through the mixture weights.
        std::array<Param<double>, 3> beta{Param<double>("b0", {kNumAttentionOps}),
                                          Param<double>("b1", {kNumAttentionOps}),
                                          Param<double>("b2", {kNumAttentionOps})};
        for (auto& bp : beta)
            for (auto& e : bp.value.v) e = rng.uniform(0.05, 0.3);
        ParamList<double> mixed_params{&in, &beta[0], &beta[1], &beta[2]};
        att.collect(mixed_params);
        module_grad_check(mixed_params, [&](Tape<double>& tape) {
            VarPyramid<double> p;
            p.levels.push_back(tape.use(in));
            std::array<Var<double>, 3> bv{tape.use(beta[0]), tape.use(beta[1]),
                                          tape.use(beta[2])};
            return pyramid_readout(tape, att.apply_mixed(p, bv), 6);
        });
    }
}
