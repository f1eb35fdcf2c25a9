// SPDX-License-Identifier: Apache-2.0
//
// Data module implementation: procedural backgrounds, seeded rain streak
// synthesis, paired augmentation, PNG I/O via libpng, and the dataset
// directory layout with its JSON manifest.

#include "manas/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>

#include "nlohmann/json.hpp"

namespace fs = std::filesystem;

namespace manas {

namespace {

constexpr double kPi = 3.14159265358979323846;

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

void check_unit_range(const Tensor<float>& img, const std::string& what) {
    for (float v : img.v)
        if (!(v >= 0.0f && v <= 1.0f))
            throw DataError(what + ": values out of range [0,1]");
}

void check_image_shape(const Tensor<float>& img, const std::string& what) {
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) < 1 || img.dim(2) < 1)
        throw DataError(what + ": expected shape [3,H,W], got " + shape_str(img.shape));
}

}  // namespace

const char* severity_name(RainSeverity s) {
    switch (s) {
        case RainSeverity::LIGHT: return "light";
        case RainSeverity::MEDIUM: return "medium";
        case RainSeverity::HEAVY: return "heavy";
    }
    throw DataError("invalid severity value");
}

RainSeverity severity_from_name(const std::string& name) {
    for (int i = 0; i < kNumSeverities; ++i)
        if (name == severity_name(static_cast<RainSeverity>(i)))
            return static_cast<RainSeverity>(i);
    throw DataError("unknown severity name: '" + name + "'");
}

RainParams rain_params(RainSeverity s) {
    switch (s) {
        case RainSeverity::LIGHT: return {0.992, 7, 0.6};
        case RainSeverity::MEDIUM: return {0.985, 11, 0.8};
        case RainSeverity::HEAVY: return {0.975, 15, 1.0};
    }
    throw DataError("invalid severity value");
}

void validate_pair(const MultiToOnePair& pair, int n) {
    check_image_shape(pair.gt, "pair '" + pair.name + "' gt");
    check_unit_range(pair.gt, "pair '" + pair.name + "' gt");
    if (pair.rainy.size() != pair.tags.size())
        throw DataError("pair '" + pair.name + "': " + std::to_string(pair.rainy.size()) +
                        " rainy images but " + std::to_string(pair.tags.size()) + " tags");
    if (n > 0 && pair.rainy.size() != static_cast<std::size_t>(n))
        throw DataError("pair '" + pair.name + "' has " + std::to_string(pair.rainy.size()) +
                        " rainy images, expected " + std::to_string(n));
    for (std::size_t i = 0; i < pair.rainy.size(); ++i) {
        if (!pair.rainy[i].same_shape(pair.gt))
            throw DataError("pair '" + pair.name + "' rainy image " + std::to_string(i) +
                            " has shape " + shape_str(pair.rainy[i].shape) + ", gt has " +
                            shape_str(pair.gt.shape));
        check_unit_range(pair.rainy[i], "pair '" + pair.name + "' rainy " + std::to_string(i));
    }
}

Tensor<float> make_background(int h, int w, Rng& rng) {
    if (h < 1 || w < 1) throw DataError("background dims must be positive");
    Tensor<float> img({3, h, w});

    // Two-color gradient along a random direction.
    double c0[3], c1[3];
    for (double& v : c0) v = rng.uniform(0.1, 0.9);
    for (double& v : c1) v = rng.uniform(0.1, 0.9);
    double angle = rng.uniform(0.0, 2.0 * kPi);
    double gx = std::cos(angle), gy = std::sin(angle);
    double span = std::abs(gx) * w + std::abs(gy) * h + 1e-9;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double proj = gx * (x + 0.5) + gy * (y + 0.5);
            double t = std::clamp(0.5 + proj / span, 0.0, 1.0);
            for (int c = 0; c < 3; ++c)
                img.at3(c, y, x) = static_cast<float>(c0[c] + t * (c1[c] - c0[c]));
        }

    // Random translucent rectangles, then circles.
    for (int r = 0; r < 4; ++r) {
        int x0 = rng.uniform_int(w), y0 = rng.uniform_int(h);
        int bw = 1 + rng.uniform_int(std::max(1, w / 2));
        int bh = 1 + rng.uniform_int(std::max(1, h / 2));
        double col[3];
        for (double& v : col) v = rng.uniform(0.0, 1.0);
        double a = rng.uniform(0.4, 0.9);
        for (int y = y0; y < std::min(h, y0 + bh); ++y)
            for (int x = x0; x < std::min(w, x0 + bw); ++x)
                for (int c = 0; c < 3; ++c)
                    img.at3(c, y, x) = static_cast<float>((1.0 - a) * img.at3(c, y, x) +
                                                          a * col[c]);
    }
    for (int k = 0; k < 3; ++k) {
        double cx = rng.uniform(0.0, w), cy = rng.uniform(0.0, h);
        double rad = rng.uniform(2.0, 0.35 * std::min(h, w) + 2.0);
        double col[3];
        for (double& v : col) v = rng.uniform(0.0, 1.0);
        double a = rng.uniform(0.4, 0.9);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                if (dx * dx + dy * dy > rad * rad) continue;
                for (int c = 0; c < 3; ++c)
                    img.at3(c, y, x) = static_cast<float>((1.0 - a) * img.at3(c, y, x) +
                                                          a * col[c]);
            }
    }
    for (float& v : img.v) v = clamp01(v);
    return img;
}

Tensor<float> rain_layer(int h, int w, RainSeverity severity, std::uint64_t seed) {
    if (h < 1 || w < 1) throw DataError("rain layer dims must be positive");
    RainParams rp = rain_params(severity);
    Rng rng(hash_combine(seed, std::string("rain")));

    // The streak direction is drawn first so the draw order is part of the
    // format; then one uniform seed value per pixel.
    double angle = rng.uniform(60.0, 120.0) * kPi / 180.0;
    Tensor<float> noise({h, w});
    for (float& v : noise.v) {
        double u = rng.uniform();
        v = u > rp.zero_quantile
                ? static_cast<float>((u - rp.zero_quantile) / (1.0 - rp.zero_quantile))
                : 0.0f;
    }

    // Integer cells of a centered line segment of the given length; the
    // kernel is deliberately un-normalized so longer streaks deposit more
    // water per seed.
    std::set<std::pair<int, int>> cells;
    for (int i = 0; i < rp.kernel_length; ++i) {
        double t = i - 0.5 * (rp.kernel_length - 1);
        cells.emplace(static_cast<int>(std::lround(t * std::sin(angle))),
                      static_cast<int>(std::lround(t * std::cos(angle))));
    }

    Tensor<float> out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float s = noise.v[static_cast<std::size_t>(y * w + x)];
            if (s == 0.0f) continue;
            for (const auto& [dy, dx] : cells) {
                int yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                out.v[static_cast<std::size_t>(yy * w + xx)] += s;
            }
        }
    for (float& v : out.v) v *= static_cast<float>(rp.gain);
    return out;
}

Tensor<float> generate_rain(const Tensor<float>& gt, RainSeverity severity, std::uint64_t seed) {
    check_image_shape(gt, "generate_rain input");
    check_unit_range(gt, "generate_rain input");
    int h = gt.dim(1), w = gt.dim(2);
    Tensor<float> layer = rain_layer(h, w, severity, seed);
    Tensor<float> out(gt.shape);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at3(c, y, x) =
                    clamp01(gt.at3(c, y, x) + layer.v[static_cast<std::size_t>(y * w + x)]);
    return out;
}

Tensor<float> quantize8(const Tensor<float>& img) {
    Tensor<float> out = img;
    for (float& v : out.v)
        v = static_cast<float>(std::lround(clamp01(v) * 255.0f)) / 255.0f;
    return out;
}

MultiToOnePair make_pair(const Tensor<float>& gt, const std::string& name, std::uint64_t seed) {
    MultiToOnePair pair;
    pair.name = name;
    pair.gt = quantize8(gt);
    for (int i = 0; i < kNumSeverities; ++i) {
        RainSeverity sev = static_cast<RainSeverity>(i);
        pair.rainy.push_back(quantize8(
            generate_rain(gt, sev, hash_combine(seed, static_cast<std::uint64_t>(i + 1)))));
        pair.tags.push_back(sev);
    }
    validate_pair(pair, kNumSeverities);
    return pair;
}

namespace {

Tensor<float> crop_flip(const Tensor<float>& img, int oy, int ox, int patch, bool flip) {
    Tensor<float> out({3, patch, patch});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x)
                out.at3(c, y, x) = img.at3(c, oy + y, ox + (flip ? patch - 1 - x : x));
    return out;
}

Tensor<float> resize_image(const Tensor<float>& img, int h, int w) {
    int ih = img.dim(1), iw = img.dim(2);
    Tensor<float> out({3, h, w});
    for (int y = 0; y < h; ++y) {
        double sy = (y + 0.5) * static_cast<double>(ih) / h - 0.5;
        int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, ih - 1);
        int y1 = std::min(y0 + 1, ih - 1);
        double fy = std::clamp(sy - y0, 0.0, 1.0);
        for (int x = 0; x < w; ++x) {
            double sx = (x + 0.5) * static_cast<double>(iw) / w - 0.5;
            int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, iw - 1);
            int x1 = std::min(x0 + 1, iw - 1);
            double fx = std::clamp(sx - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                double top = img.at3(c, y0, x0) + fx * (img.at3(c, y0, x1) - img.at3(c, y0, x0));
                double bot = img.at3(c, y1, x0) + fx * (img.at3(c, y1, x1) - img.at3(c, y1, x0));
                out.at3(c, y, x) = static_cast<float>(top + fy * (bot - top));
            }
        }
    }
    return out;
}

}  // namespace

MultiToOnePair augment(const MultiToOnePair& pair, std::uint64_t seed, int patch) {
    validate_pair(pair, 0);
    int h = pair.gt.dim(1), w = pair.gt.dim(2);
    if (patch < 1) throw DataError("augment: patch must be positive");
    if (patch > h || patch > w)
        throw DataError("augment: patch " + std::to_string(patch) + " exceeds image dims " +
                        std::to_string(h) + "x" + std::to_string(w));
    Rng rng(hash_combine(seed, std::string("augment")));
    int oy = rng.uniform_int(h - patch + 1);
    int ox = rng.uniform_int(w - patch + 1);
    bool flip = rng.coin();

    MultiToOnePair out;
    out.name = pair.name;
    out.tags = pair.tags;
    out.gt = crop_flip(pair.gt, oy, ox, patch, flip);
    for (const auto& r : pair.rainy) out.rainy.push_back(crop_flip(r, oy, ox, patch, flip));
    return out;
}

MultiToOnePair resize_pair(const MultiToOnePair& pair, int h, int w) {
    validate_pair(pair, 0);
    if (h < 1 || w < 1) throw DataError("resize_pair: target dims must be positive");
    MultiToOnePair out;
    out.name = pair.name;
    out.tags = pair.tags;
    out.gt = resize_image(pair.gt, h, w);
    for (const auto& r : pair.rainy) out.rainy.push_back(resize_image(r, h, w));
    for (float& v : out.gt.v) v = clamp01(v);
    for (auto& r : out.rainy)
        for (float& v : r.v) v = clamp01(v);
    return out;
}

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

Tensor<float> load_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError("cannot open image: " + path);
    unsigned char header[8];
    if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        std::fclose(fp);
        throw DataError("not a PNG file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("PNG reader initialization failed");
    }
    std::vector<unsigned char> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("PNG decode failure: " + path);
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != static_cast<std::size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("unsupported PNG layout in " + path);
    }
    buf.resize(static_cast<std::size_t>(h) * rowbytes);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    Tensor<float> img({3, static_cast<int>(h), static_cast<int>(w)});
    for (png_uint_32 y = 0; y < h; ++y)
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at3(c, static_cast<int>(y), static_cast<int>(x)) =
                    static_cast<float>(buf[y * rowbytes + x * 3 + static_cast<std::size_t>(c)]) /
                    255.0f;
    return img;
}

void save_png(const std::string& path, const Tensor<float>& image) {
    check_image_shape(image, "save_png input");
    int h = image.dim(1), w = image.dim(2);
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("PNG writer initialization failed");
    }
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("PNG encode failure: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<unsigned char>(
                        std::lround(clamp01(image.at3(c, y, x)) * 255.0f));
        png_write_row(png, row.data());
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// ---------------------------------------------------------------------------
// Dataset layout
// ---------------------------------------------------------------------------

namespace {

void collect_stems(const std::vector<MultiToOnePair>& pairs, std::set<std::string>& all,
                   nlohmann::json& list, const std::string& split) {
    for (const auto& p : pairs) {
        if (p.name.empty()) throw DataError("pair in " + split + " has an empty name");
        if (!all.insert(p.name).second)
            throw DataError("duplicate pair name across splits: '" + p.name + "'");
        list.push_back(p.name);
    }
}

std::string rain_file(const std::string& stem, RainSeverity sev) {
    return stem + "__" + severity_name(sev) + ".png";
}

}  // namespace

void save_dataset(const std::string& root, const DatasetSplit& split) {
    fs::path base(root);
    std::error_code ec;
    fs::create_directories(base / "gt", ec);
    fs::create_directories(base / "rain", ec);
    if (!fs::is_directory(base / "gt") || !fs::is_directory(base / "rain"))
        throw DataError("cannot create dataset directories under " + root);

    nlohmann::json manifest;
    std::set<std::string> stems;
    manifest["trainA"] = nlohmann::json::array();
    manifest["trainB"] = nlohmann::json::array();
    manifest["test"] = nlohmann::json::array();
    collect_stems(split.trainA, stems, manifest["trainA"], "trainA");
    collect_stems(split.trainB, stems, manifest["trainB"], "trainB");
    collect_stems(split.test, stems, manifest["test"], "test");

    auto write_split = [&](const std::vector<MultiToOnePair>& pairs) {
        for (const auto& p : pairs) {
            validate_pair(p, 0);
            save_png((base / "gt" / (p.name + ".png")).string(), p.gt);
            for (std::size_t i = 0; i < p.rainy.size(); ++i)
                save_png((base / "rain" / rain_file(p.name, p.tags[i])).string(), p.rainy[i]);
        }
    };
    write_split(split.trainA);
    write_split(split.trainB);
    write_split(split.test);

    std::ofstream mf((base / "manifest.json").string(), std::ios::binary);
    if (!mf) throw DataError("cannot write manifest under " + root);
    mf << manifest.dump(2) << "\n";
}

DatasetSplit load_dataset(const std::string& root) {
    fs::path base(root);
    std::ifstream mf((base / "manifest.json").string(), std::ios::binary);
    if (!mf) throw DataError("missing manifest.json under " + root);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest.json: ") + e.what());
    }

    auto stems_of = [&](const char* key) {
        std::vector<std::string> out;
        try {
            for (const auto& s : manifest.at(key)) out.push_back(s.get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("manifest field '") + key + "' error: " + e.what());
        }
        return out;
    };
    std::vector<std::string> a = stems_of("trainA"), b = stems_of("trainB"), t = stems_of("test");

    // Split disjointness by ground-truth identity, verified, not assumed.
    std::set<std::string> in_a(a.begin(), a.end());
    for (const auto& s : b)
        if (in_a.count(s))
            throw DataError("stem '" + s + "' appears in both trainA and trainB");
    std::set<std::string> all;
    for (const auto* list : {&a, &b, &t})
        for (const auto& s : *list)
            if (!all.insert(s).second) throw DataError("duplicate stem in manifest: '" + s + "'");

    auto load_pair = [&](const std::string& stem) {
        fs::path gt_path = base / "gt" / (stem + ".png");
        if (!fs::exists(gt_path)) throw DataError("manifest lists '" + stem + "' but " +
                                                  gt_path.string() + " is missing");
        MultiToOnePair pair;
        pair.name = stem;
        pair.gt = load_png(gt_path.string());
        for (int i = 0; i < kNumSeverities; ++i) {
            RainSeverity sev = static_cast<RainSeverity>(i);
            fs::path rp = base / "rain" / rain_file(stem, sev);
            if (!fs::exists(rp))
                throw DataError("missing rainy image " + rp.string() + " for gt '" + stem + "'");
            pair.rainy.push_back(load_png(rp.string()));
            pair.tags.push_back(sev);
        }
        validate_pair(pair, kNumSeverities);
        return pair;
    };

    DatasetSplit split;
    for (const auto& s : a) split.trainA.push_back(load_pair(s));
    for (const auto& s : b) split.trainB.push_back(load_pair(s));
    for (const auto& s : t) split.test.push_back(load_pair(s));

    // Files on disk must be accounted for by the manifest.
    for (const auto& entry : fs::directory_iterator(base / "gt")) {
        std::string stem = entry.path().stem().string();
        if (!all.count(stem))
            throw DataError("gt file not in manifest: " + entry.path().string());
    }
    for (const auto& entry : fs::directory_iterator(base / "rain")) {
        std::string name = entry.path().filename().string();
        std::size_t sep = name.rfind("__");
        std::size_t dot = name.rfind(".png");
        if (sep == std::string::npos || dot == std::string::npos || dot != name.size() - 4)
            throw DataError("unrecognized rainy file name: " + entry.path().string());
        std::string stem = name.substr(0, sep);
        severity_from_name(name.substr(sep + 2, dot - sep - 2));
        if (!all.count(stem))
            throw DataError("orphan rainy file (no matching gt stem): " + entry.path().string());
    }
    return split;
}

DatasetSplit generate_dataset(int train_a, int train_b, int test, int h, int w,
                              std::uint64_t seed) {
    if (train_a < 0 || train_b < 0 || test < 0)
        throw DataError("split sizes must be non-negative");
    if (h < 1 || w < 1) throw DataError("image dims must be positive");

    DatasetSplit split;
    std::uint64_t index = 0;
    auto fill = [&](std::vector<MultiToOnePair>& out, int count, const char* prefix) {
        for (int i = 0; i < count; ++i, ++index) {
            std::uint64_t sub = hash_combine(seed, index);
            Rng bg(hash_combine(sub, std::string("background")));
            char name[16];
            std::snprintf(name, sizeof(name), "%s%03d", prefix, i);
            out.push_back(make_pair(make_background(h, w, bg), name, sub));
        }
    };
    fill(split.trainA, train_a, "a");
    fill(split.trainB, train_b, "b");
    fill(split.test, test, "t");
    return split;
}

}  // namespace manas
