// SPDX-License-Identifier: Apache-2.0
//
// Multi-to-one rain data: the pair and split types, seeded synthetic rain
// generation over procedural backgrounds, paired augmentation, and the
// on-disk dataset layout (PNG trees plus a JSON manifest).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "manas/core.hpp"
#include "manas/rng.hpp"
#include "manas/tensor.hpp"

namespace manas {

enum class RainSeverity : int { LIGHT = 0, MEDIUM = 1, HEAVY = 2 };
inline constexpr int kNumSeverities = 3;

const char* severity_name(RainSeverity s);
RainSeverity severity_from_name(const std::string& name);

// Streak-synthesis constants for one severity. `zero_quantile` is the
// fraction of seed-noise pixels suppressed before streaking; the line
// kernel is `kernel_length` pixels long and the result is scaled by `gain`.
struct RainParams {
    double zero_quantile;
    int kernel_length;
    double gain;
};

RainParams rain_params(RainSeverity s);

// N rainy renderings of one clean background, plus that background.
// Images are [3,H,W] tensors with values in [0,1].
struct MultiToOnePair {
    std::string name;  // file stem inside a dataset directory
    Tensor<float> gt;
    std::vector<Tensor<float>> rainy;
    std::vector<RainSeverity> tags;
};

// Throws DataError unless all images share one [3,H,W] shape, values lie
// in [0,1], and the rainy/tag counts agree (and equal n when n > 0).
void validate_pair(const MultiToOnePair& pair, int n = 0);

struct DatasetSplit {
    std::vector<MultiToOnePair> trainA, trainB, test;
};

// Procedural clean background: a two-color gradient overlaid with random
// rectangles and circles, deterministic in the rng stream.
Tensor<float> make_background(int h, int w, Rng& rng);

// rainy = clip(gt + R, 0, 1) where R is achromatic streak noise: uniform
// per-pixel seeds thresholded at the severity quantile, smeared along a
// random line at an angle in [60, 120] degrees, scaled by the severity
// gain. Deterministic per (seed, severity).
Tensor<float> generate_rain(const Tensor<float>& gt, RainSeverity severity, std::uint64_t seed);

// The additive streak layer itself (before compositing); exposed so the
// non-negativity of rain can be asserted prior to clipping.
Tensor<float> rain_layer(int h, int w, RainSeverity severity, std::uint64_t seed);

// Snaps every value to the 8-bit grid PNG storage uses (round(clip(v)*255)
// / 255), the idempotent image of save_png followed by load_png.
Tensor<float> quantize8(const Tensor<float>& img);

// One pair with all three severities, each under a sub-seed derived from
// `seed` and the severity index. Every image is quantized to the 8-bit
// grid, so a generated pair equals its saved-then-reloaded self exactly.
MultiToOnePair make_pair(const Tensor<float>& gt, const std::string& name, std::uint64_t seed);

// Shared-transform augmentation: one crop offset and one horizontal-flip
// coin drawn from `seed`, applied identically to the gt and every rainy
// image. `patch` must be positive and no larger than either image dim.
MultiToOnePair augment(const MultiToOnePair& pair, std::uint64_t seed, int patch);

// Whole-image alternative to cropping: bilinear resize of every image in
// the pair to h x w (half-pixel centers).
MultiToOnePair resize_pair(const MultiToOnePair& pair, int h, int w);

// 8-bit RGB PNG I/O. Loading divides by 255 into [0,1]; saving rounds
// clip(v,0,1)*255 to the nearest integer.
Tensor<float> load_png(const std::string& path);
void save_png(const std::string& path, const Tensor<float>& image);

// Layout: root/gt/<stem>.png, root/rain/<stem>__<severity>.png, and
// root/manifest.json = {"trainA":[stems],"trainB":[stems],"test":[stems]}.
void save_dataset(const std::string& root, const DatasetSplit& split);

// Rebuilds the split from the layout above. Throws DataError on orphan
// rain files, stems missing severities, shape mismatches inside a pair,
// manifest/file disagreement, or a stem listed in both training splits.
DatasetSplit load_dataset(const std::string& root);

// Generates `counts` pairs per split over procedural backgrounds, with
// per-pair seeds derived as hash(seed, global pair index).
DatasetSplit generate_dataset(int train_a, int train_b, int test, int h, int w,
                              std::uint64_t seed);

}  // namespace manas
