// SPDX-License-Identifier: Apache-2.0
//
// Configuration validation and genotype JSON round-trip tests.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <string>

#include "manas/core.hpp"
#include "manas/rng.hpp"

using namespace manas;

namespace {

Genotype random_genotype(NetworkConfig cfg, std::uint64_t seed) {
    Rng rng(seed);
    Genotype g;
    g.config = cfg;
    for (int t = 0; t < cfg.T; ++t) {
        CellChoice c;
        for (int m = 0; m < cfg.M; ++m)
            c.columns.push_back(rng.coin() ? ColumnKind::PARALLEL : ColumnKind::FUSION);
        for (int s = 0; s < kAttentionSites; ++s)
            c.attention[static_cast<std::size_t>(s)] =
                static_cast<AttentionOpKind>(rng.uniform_int(kNumAttentionOps));
        g.cells.push_back(std::move(c));
    }
    return g;
}

}  // namespace

TEST_CASE("validate_config accepts the documented shapes") {
    CHECK_NOTHROW(validate_config({3, 16, 4, 3, 64, 64}));
    CHECK_NOTHROW(validate_config({1, 8, 4, 3, 32, 32}));
    CHECK_NOTHROW(validate_config({0, 8, 4, 3, 32, 32}));  // stem+tail-only network
}

TEST_CASE("validate_config rejects bad shapes with the field named") {
    CHECK_THROWS_WITH_AS(validate_config({3, 16, 4, 3, 60, 64}),
                         doctest::Contains("H=60"), ConfigError);
    CHECK_THROWS_WITH_AS(validate_config({3, 16, 4, 3, 64, 60}),
                         doctest::Contains("W=60"), ConfigError);
    CHECK_THROWS_WITH_AS(validate_config({1, 15, 4, 3, 32, 32}),
                         doctest::Contains("even"), ConfigError);
    CHECK_THROWS_AS(validate_config({-1, 16, 4, 3, 64, 64}), ConfigError);
    CHECK_THROWS_AS(validate_config({1, 16, 0, 3, 64, 64}), ConfigError);
    CHECK_THROWS_AS(validate_config({1, 16, 4, 1, 64, 64}), ConfigError);
}

TEST_CASE("search config validation") {
    SearchConfig s;
    CHECK_NOTHROW(s.validate());
    s.lambda_arch = -0.1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = SearchConfig{};
    s.warmup_frac = 1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("attention op names are a bijection in table order") {
    const char* expect[] = {"ca_v1", "ca_v2", "spatial", "norm", "cba", "identity", "zero"};
    for (int i = 0; i < kNumAttentionOps; ++i) {
        auto k = static_cast<AttentionOpKind>(i);
        CHECK(std::string(attention_op_name(k)) == expect[i]);
        CHECK(attention_op_from_name(expect[i]) == k);
    }
    CHECK_THROWS_AS(attention_op_from_name("foo"), GenotypeError);
}

TEST_CASE("genotype JSON round-trips") {
    SUBCASE("fixed example") {
        Genotype g;
        g.config = {1, 16, 4, 3, 64, 64};
        CellChoice c;
        c.columns = {ColumnKind::PARALLEL, ColumnKind::FUSION, ColumnKind::FUSION,
                     ColumnKind::PARALLEL};
        c.attention = {AttentionOpKind::SPATIAL, AttentionOpKind::CBA, AttentionOpKind::IDENTITY};
        g.cells.push_back(c);
        std::string text = genotype_to_json(g);
        CHECK(text.find("\"P\"") != std::string::npos);
        CHECK(text.find("\"spatial\"") != std::string::npos);
        CHECK(genotype_from_json(text) == g);
    }

    SUBCASE("random genotypes") {
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            Genotype g = random_genotype({3, 8, 4, 3, 64, 64}, seed);
            CHECK(genotype_from_json(genotype_to_json(g)) == g);
        }
    }

    SUBCASE("file round-trip") {
        Genotype g = random_genotype({2, 8, 4, 3, 32, 32}, 9);
        std::string path = "test_core_genotype.json";
        save_genotype(path, g);
        CHECK(load_genotype(path) == g);
        std::remove(path.c_str());
    }
}

TEST_CASE("genotype JSON rejects malformed documents") {
    std::string good = genotype_to_json(random_genotype({1, 8, 4, 3, 32, 32}, 1));

    CHECK_THROWS_AS(genotype_from_json("not json"), GenotypeError);
    CHECK_THROWS_AS(genotype_from_json("{}"), GenotypeError);

    SUBCASE("unknown attention op name") {
        Genotype g = genotype_from_json(good);
        std::string text = genotype_to_json(g);
        std::string name = attention_op_name(g.cells[0].attention[0]);
        auto at = text.find("\"" + name + "\"");
        text.replace(at, name.size() + 2, "\"foo\"");
        CHECK_THROWS_WITH_AS(genotype_from_json(text), doctest::Contains("foo"), GenotypeError);
    }

    SUBCASE("wrong column arity") {
        Genotype g = genotype_from_json(good);
        g.cells[0].columns.pop_back();
        CHECK_THROWS_AS(genotype_to_json(g), GenotypeError);
    }

    SUBCASE("cell count disagrees with T") {
        Genotype g = genotype_from_json(good);
        g.cells.push_back(g.cells[0]);
        CHECK_THROWS_AS(genotype_to_json(g), GenotypeError);
    }
}

TEST_CASE("pyramid validation") {
    PyramidOf<Tensor<double>> p;
    p.levels.push_back(Tensor<double>({4, 16, 16}, 0.0));
    p.levels.push_back(Tensor<double>({4, 8, 8}, 0.0));
    CHECK_NOTHROW(validate_pyramid(p, 4, 16, 16));
    CHECK_THROWS_AS(validate_pyramid(p, 6, 16, 16), ConfigError);
    p.levels.push_back(Tensor<double>({4, 5, 5}, 0.0));
    CHECK_THROWS_AS(validate_pyramid(p, 4, 16, 16), ConfigError);
}
