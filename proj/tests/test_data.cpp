// SPDX-License-Identifier: Apache-2.0
//
// Data-module tests: severity table oracles, streak-layer invariants
// (non-negativity, determinism, severity-ordered density), paired
// augmentation sharing one transform, PNG quantization round-trips, and
// the on-disk dataset layout including its failure diagnostics.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "manas/data.hpp"

using namespace manas;
namespace fs = std::filesystem;

namespace {

Tensor<float> gray_image(int h, int w, float level) {
    Tensor<float> img({3, h, w});
    img.fill(level);
    return img;
}

double mean_of(const Tensor<float>& t) {
    double s = 0.0;
    for (float v : t.v) s += v;
    return s / static_cast<double>(t.v.size());
}

Tensor<float> quantized(const Tensor<float>& img) {
    Tensor<float> out(img.shape);
    for (std::size_t i = 0; i < img.v.size(); ++i)
        out.v[i] = static_cast<float>(std::lround(std::min(std::max(img.v[i], 0.0f), 1.0f) * 255.0f)) / 255.0f;
    return out;
}

fs::path temp_root(const std::string& stem) {
    fs::path p = fs::temp_directory_path() / stem;
    fs::remove_all(p);
    return p;
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("severity names and parameters") {
    CHECK(std::string(severity_name(RainSeverity::LIGHT)) == "light");
    CHECK(std::string(severity_name(RainSeverity::MEDIUM)) == "medium");
    CHECK(std::string(severity_name(RainSeverity::HEAVY)) == "heavy");
    for (int i = 0; i < kNumSeverities; ++i) {
        auto s = static_cast<RainSeverity>(i);
        CHECK(severity_from_name(severity_name(s)) == s);
    }
    CHECK_THROWS_AS(severity_from_name("torrential"), DataError);

    RainParams light = rain_params(RainSeverity::LIGHT);
    CHECK(light.zero_quantile == doctest::Approx(0.992));
    CHECK(light.kernel_length == 7);
    CHECK(light.gain == doctest::Approx(0.6));
    RainParams medium = rain_params(RainSeverity::MEDIUM);
    CHECK(medium.zero_quantile == doctest::Approx(0.985));
    CHECK(medium.kernel_length == 11);
    CHECK(medium.gain == doctest::Approx(0.8));
    RainParams heavy = rain_params(RainSeverity::HEAVY);
    CHECK(heavy.zero_quantile == doctest::Approx(0.975));
    CHECK(heavy.kernel_length == 15);
    CHECK(heavy.gain == doctest::Approx(1.0));
}

TEST_CASE("backgrounds are deterministic, bounded, and seed-sensitive") {
    Rng a(5), b(5), c(6);
    Tensor<float> x = make_background(24, 32, a);
    Tensor<float> y = make_background(24, 32, b);
    Tensor<float> z = make_background(24, 32, c);
    CHECK(x.shape == std::vector<int>{3, 24, 32});
    CHECK(max_abs_diff(x, y) == 0.0f);
    CHECK(max_abs_diff(x, z) > 0.0f);
    for (float v : x.v) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK_THROWS_AS(make_background(0, 8, a), DataError);
}

TEST_CASE("streak layers are non-negative and reproducible") {
    Tensor<float> r1 = rain_layer(48, 48, RainSeverity::MEDIUM, 17);
    Tensor<float> r2 = rain_layer(48, 48, RainSeverity::MEDIUM, 17);
    CHECK(r1.shape == std::vector<int>{48, 48});
    CHECK(max_abs_diff(r1, r2) == 0.0f);
    bool any_positive = false;
    for (float v : r1.v) {
        CHECK(v >= 0.0f);
        any_positive = any_positive || v > 0.0f;
    }
    CHECK(any_positive);
    Tensor<float> r3 = rain_layer(48, 48, RainSeverity::MEDIUM, 18);
    CHECK(max_abs_diff(r1, r3) > 0.0f);
}

TEST_CASE("rain density grows with severity") {
    // Averaged added intensity over many seeds must order light < medium < heavy.
    double mean_added[kNumSeverities] = {0.0, 0.0, 0.0};
    const int trials = 40;
    for (int s = 0; s < kNumSeverities; ++s)
        for (int t = 0; t < trials; ++t)
            mean_added[s] += mean_of(rain_layer(64, 64, static_cast<RainSeverity>(s), 1000 + t));
    CHECK(mean_added[0] < mean_added[1]);
    CHECK(mean_added[1] < mean_added[2]);
}

TEST_CASE("compositing adds rain without leaving the unit range") {
    Tensor<float> gt = gray_image(32, 32, 0.4f);
    Tensor<float> rainy = generate_rain(gt, RainSeverity::HEAVY, 3);
    CHECK(rainy.shape == gt.shape);
    bool any_brighter = false;
    for (std::size_t i = 0; i < rainy.v.size(); ++i) {
        CHECK(rainy.v[i] >= gt.v[i]);  // rain only adds light
        CHECK(rainy.v[i] <= 1.0f);
        any_brighter = any_brighter || rainy.v[i] > gt.v[i];
    }
    CHECK(any_brighter);

    // Achromatic: all three channels receive the same streaks.
    int h = 32, w = 32;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float d0 = rainy.v[0 * h * w + y * w + x] - gt.v[0 * h * w + y * w + x];
            CHECK(rainy.v[1 * h * w + y * w + x] - gt.v[1 * h * w + y * w + x] == d0);
            CHECK(rainy.v[2 * h * w + y * w + x] - gt.v[2 * h * w + y * w + x] == d0);
        }
    CHECK(max_abs_diff(rainy, generate_rain(gt, RainSeverity::HEAVY, 3)) == 0.0f);
}

TEST_CASE("a generated pair carries each severity once over one background") {
    Rng rng(11);
    Tensor<float> gt = make_background(32, 32, rng);
    MultiToOnePair pair = make_pair(gt, "scene", 99);
    CHECK(pair.name == "scene");
    CHECK_NOTHROW(validate_pair(pair, kNumSeverities));
    // The pair snaps to the 8-bit storage grid, staying within half a step.
    CHECK(max_abs_diff(pair.gt, quantized(gt)) == 0.0f);
    CHECK(max_abs_diff(pair.gt, gt) <= 0.5f / 255.0f);
    REQUIRE(pair.tags.size() == 3);
    CHECK(pair.tags[0] == RainSeverity::LIGHT);
    CHECK(pair.tags[1] == RainSeverity::MEDIUM);
    CHECK(pair.tags[2] == RainSeverity::HEAVY);
    // Distinct corruptions of the same scene.
    CHECK(max_abs_diff(pair.rainy[0], pair.rainy[1]) > 0.0f);
    CHECK(max_abs_diff(pair.rainy[1], pair.rainy[2]) > 0.0f);
    CHECK(max_abs_diff(pair.rainy[0], pair.rainy[2]) > 0.0f);

    MultiToOnePair again = make_pair(gt, "scene", 99);
    for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(pair.rainy[i], again.rainy[i]) == 0.0f);
}

TEST_CASE("pair validation rejects malformed pairs") {
    Rng rng(2);
    MultiToOnePair pair = make_pair(make_background(16, 16, rng), "p", 1);
    CHECK_NOTHROW(validate_pair(pair));
    CHECK_THROWS_AS(validate_pair(pair, 4), DataError);

    MultiToOnePair bad = pair;
    bad.rainy[1].v[5] = 1.5f;
    CHECK_THROWS_AS(validate_pair(bad), DataError);

    bad = pair;
    bad.tags.pop_back();
    CHECK_THROWS_AS(validate_pair(bad), DataError);

    bad = pair;
    bad.rainy[0] = Tensor<float>({3, 8, 8});
    CHECK_THROWS_AS(validate_pair(bad), DataError);
}

TEST_CASE("augmentation applies one crop and flip to every image") {
    // Encode each rainy image as gt plus a per-image constant; any transform
    // applied identically to all images preserves those constants.
    int h = 20, w = 28;
    Rng rng(8);
    MultiToOnePair pair;
    pair.name = "p";
    pair.gt = Tensor<float>({3, h, w});
    for (auto& v : pair.gt.v) v = static_cast<float>(rng.uniform()) * 0.5f;
    for (int i = 0; i < 3; ++i) {
        Tensor<float> r = pair.gt;
        for (auto& v : r.v) v += 0.1f * static_cast<float>(i + 1);
        pair.rainy.push_back(r);
        pair.tags.push_back(static_cast<RainSeverity>(i));
    }

    MultiToOnePair aug = augment(pair, 31, 12);
    CHECK(aug.gt.shape == std::vector<int>{3, 12, 12});
    for (int i = 0; i < 3; ++i) {
        REQUIRE(aug.rainy[i].shape == aug.gt.shape);
        for (std::size_t k = 0; k < aug.gt.v.size(); ++k)
            CHECK(aug.rainy[i].v[k] - aug.gt.v[k] ==
                  doctest::Approx(0.1f * (i + 1)).epsilon(1e-6));
    }

    MultiToOnePair same = augment(pair, 31, 12);
    CHECK(max_abs_diff(aug.gt, same.gt) == 0.0f);
    // Different seeds eventually pick a different window or flip.
    bool moved = false;
    for (std::uint64_t s = 0; s < 8 && !moved; ++s)
        moved = max_abs_diff(aug.gt, augment(pair, 100 + s, 12).gt) > 0.0f;
    CHECK(moved);

    CHECK_THROWS_AS(augment(pair, 1, 0), DataError);
    CHECK_THROWS_AS(augment(pair, 1, 21), DataError);  // taller than the image
    MultiToOnePair full = augment(pair, 1, 20);        // patch == min dim is fine
    CHECK(full.gt.shape == std::vector<int>{3, 20, 20});
}

TEST_CASE("resizing a pair keeps constants constant") {
    MultiToOnePair pair;
    pair.name = "p";
    pair.gt = gray_image(16, 16, 0.25f);
    pair.rainy = {gray_image(16, 16, 0.5f)};
    pair.tags = {RainSeverity::LIGHT};
    MultiToOnePair out = resize_pair(pair, 9, 13);
    CHECK(out.gt.shape == std::vector<int>{3, 9, 13});
    for (float v : out.gt.v) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));
    for (float v : out.rainy[0].v) CHECK(v == doctest::Approx(0.5f).epsilon(1e-6));
    CHECK_THROWS_AS(resize_pair(pair, 0, 4), DataError);
}

TEST_CASE("PNG save and load round-trip through 8-bit quantization") {
    Rng rng(9);
    Tensor<float> img({3, 21, 17});
    for (auto& v : img.v) v = static_cast<float>(rng.uniform());
    fs::path p = fs::temp_directory_path() / "manas_png_test.png";

    save_png(p.string(), img);
    Tensor<float> back = load_png(p.string());
    REQUIRE(back.shape == img.shape);
    // Round-to-nearest of a value in [0,1] is off by at most half a level.
    CHECK(max_abs_diff(back, img) <= 0.5f / 255.0f + 1e-7f);
    // Already-quantized values survive exactly, and the bytes are stable.
    save_png(p.string(), back);
    Tensor<float> twice = load_png(p.string());
    CHECK(max_abs_diff(back, twice) == 0.0f);
    auto bytes1 = read_bytes(p);
    save_png(p.string(), twice);
    CHECK(read_bytes(p) == bytes1);

    CHECK_THROWS_AS(load_png((fs::temp_directory_path() / "no_such.png").string()), DataError);
    fs::remove(p);
}

TEST_CASE("datasets round-trip through the directory layout") {
    DatasetSplit split;
    Rng rng(14);
    std::uint64_t next_seed = 100;
    // make_pair's 8-bit quantization is what makes the round-trip lossless;
    // no caller-side preparation happens here.
    auto add = [&](std::vector<MultiToOnePair>& dst, const std::string& stem) {
        dst.push_back(make_pair(make_background(16, 16, rng), stem, next_seed++));
    };
    add(split.trainA, "a0");
    add(split.trainA, "a1");
    add(split.trainB, "b0");
    add(split.test, "t0");

    fs::path root = temp_root("manas_dataset_test");
    save_dataset(root.string(), split);
    CHECK(fs::exists(root / "gt" / "a1.png"));
    CHECK(fs::exists(root / "rain" / "b0__medium.png"));
    CHECK(fs::exists(root / "manifest.json"));

    DatasetSplit back = load_dataset(root.string());
    REQUIRE(back.trainA.size() == 2);
    REQUIRE(back.trainB.size() == 1);
    REQUIRE(back.test.size() == 1);
    CHECK(back.trainA[0].name == "a0");
    CHECK(back.trainA[1].name == "a1");
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(max_abs_diff(back.trainA[i].gt, split.trainA[i].gt) == 0.0f);
        for (int r = 0; r < 3; ++r) {
            CHECK(back.trainA[i].tags[r] == split.trainA[i].tags[r]);
            CHECK(max_abs_diff(back.trainA[i].rainy[r], split.trainA[i].rainy[r]) == 0.0f);
        }
    }
    CHECK(max_abs_diff(back.test[0].gt, split.test[0].gt) == 0.0f);

    SUBCASE("an orphan rainy file is diagnosed") {
        save_png((root / "rain" / "zz__light.png").string(), split.test[0].rainy[0]);
        CHECK_THROWS_WITH_AS(load_dataset(root.string()), doctest::Contains("orphan"),
                             DataError);
    }
    SUBCASE("an unparseable rainy name is diagnosed") {
        save_png((root / "rain" / "badname.png").string(), split.test[0].rainy[0]);
        CHECK_THROWS_WITH_AS(load_dataset(root.string()), doctest::Contains("unrecognized"),
                             DataError);
    }
    SUBCASE("a gt file outside the manifest is diagnosed") {
        save_png((root / "gt" / "extra.png").string(), split.test[0].gt);
        CHECK_THROWS_WITH_AS(load_dataset(root.string()), doctest::Contains("not in manifest"),
                             DataError);
    }
    SUBCASE("a missing severity rendering is diagnosed") {
        fs::remove(root / "rain" / "t0__heavy.png");
        CHECK_THROWS_WITH_AS(load_dataset(root.string()), doctest::Contains("t0"), DataError);
    }
    SUBCASE("a missing gt file is diagnosed") {
        fs::remove(root / "gt" / "a0.png");
        CHECK_THROWS_WITH_AS(load_dataset(root.string()), doctest::Contains("a0"), DataError);
    }
    SUBCASE("a stem shared between the training splits is rejected") {
        std::ifstream in(root / "manifest.json");
        std::string manifest((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
        in.close();
        auto pos = manifest.find("b0");
        REQUIRE(pos != std::string::npos);
        manifest.replace(pos, 2, "a0");
        std::ofstream out(root / "manifest.json", std::ios::trunc);
        out << manifest;
        out.close();
        CHECK_THROWS_WITH_AS(load_dataset(root.string()),
                             doctest::Contains("both trainA and trainB"), DataError);
    }
    fs::remove_all(root);
}

TEST_CASE("saving rejects duplicate stems across splits") {
    DatasetSplit split;
    Rng rng(3);
    Tensor<float> gt = make_background(16, 16, rng);
    split.trainA.push_back(make_pair(gt, "x", 1));
    split.trainB.push_back(make_pair(gt, "x", 2));
    fs::path root = temp_root("manas_dupe_test");
    CHECK_THROWS_WITH_AS(save_dataset(root.string(), split), doctest::Contains("duplicate"),
                         DataError);
    fs::remove_all(root);
}

TEST_CASE("whole-dataset generation is sized, bounded, and reproducible") {
    DatasetSplit d1 = generate_dataset(2, 1, 1, 16, 16, 42);
    DatasetSplit d2 = generate_dataset(2, 1, 1, 16, 16, 42);
    DatasetSplit d3 = generate_dataset(2, 1, 1, 16, 16, 43);
    REQUIRE(d1.trainA.size() == 2);
    REQUIRE(d1.trainB.size() == 1);
    REQUIRE(d1.test.size() == 1);
    CHECK(d1.trainA[0].name == "a000");
    CHECK(d1.trainA[1].name == "a001");
    CHECK(d1.trainB[0].name == "b000");
    CHECK(d1.test[0].name == "t000");
    for (const auto& p : d1.trainA) CHECK_NOTHROW(validate_pair(p, kNumSeverities));
    CHECK(max_abs_diff(d1.trainA[1].gt, d2.trainA[1].gt) == 0.0f);
    CHECK(max_abs_diff(d1.test[0].rainy[2], d2.test[0].rainy[2]) == 0.0f);
    CHECK(max_abs_diff(d1.trainA[0].gt, d3.trainA[0].gt) > 0.0f);
    // Every background is distinct within a run.
    CHECK(max_abs_diff(d1.trainA[0].gt, d1.trainA[1].gt) > 0.0f);
    CHECK(max_abs_diff(d1.trainA[0].gt, d1.trainB[0].gt) > 0.0f);
    CHECK_THROWS_AS(generate_dataset(-1, 1, 1, 16, 16, 0), DataError);
    CHECK_THROWS_AS(generate_dataset(1, 1, 1, 0, 16, 0), DataError);
}
