// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint archive serialization. Fixed-width little-endian layout:
//   magic "MANASCKP", u32 version,
//   u32 meta count, { u32 key len, key, u32 value len, value } ...
//   u32 entry count, { u32 path len, path, u32 rank, i32 dims[rank],
//                      u64 element count, f32 data[] } ...

#include "manas/checkpoint.hpp"

#include <cstring>

namespace manas {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'N', 'A', 'S', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T take(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& is) {
    auto n = take<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw DataError("checkpoint: truncated string");
    return s;
}

}  // namespace

void TensorArchive::add(const std::string& path, ShapeVec shape, std::vector<float> data) {
    if (index_.count(path)) throw DataError("checkpoint: duplicate entry '" + path + "'");
    if (numel_of(shape) != data.size())
        throw DataError("checkpoint: entry '" + path + "' data size disagrees with shape");
    index_[path] = entries_.size();
    entries_.push_back({path, std::move(shape), std::move(data)});
}

const ArchiveEntry* TensorArchive::find(const std::string& path) const {
    auto it = index_.find(path);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

const ArchiveEntry& TensorArchive::require(const std::string& path) const {
    const ArchiveEntry* e = find(path);
    if (!e) throw DataError("checkpoint: missing entry '" + path + "'");
    return *e;
}

const std::string* TensorArchive::get_meta(const std::string& key) const {
    auto it = meta_.find(key);
    return it == meta_.end() ? nullptr : &it->second;
}

const std::string& TensorArchive::require_meta(const std::string& key) const {
    const std::string* v = get_meta(key);
    if (!v) throw DataError("checkpoint: missing metadata '" + key + "'");
    return *v;
}

void TensorArchive::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(meta_.size()));
    for (const auto& [k, v] : meta_) {
        put_string(os, k);
        put_string(os, v);
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        put_string(os, e.path);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) put<std::int32_t>(os, d);
        put<std::uint64_t>(os, e.data.size());
        os.write(reinterpret_cast<const char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!os) throw DataError("write failure: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    if (take<std::uint32_t>(is) != kVersion)
        throw DataError("unsupported checkpoint version in " + path);
    TensorArchive a;
    auto nmeta = take<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k = take_string(is);
        a.meta_[k] = take_string(is);
    }
    auto nentries = take<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < nentries; ++i) {
        std::string p = take_string(is);
        auto rank = take<std::uint32_t>(is);
        ShapeVec shape(rank);
        for (auto& d : shape) d = take<std::int32_t>(is);
        auto numel = take<std::uint64_t>(is);
        std::vector<float> data(numel);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!is) throw DataError("checkpoint: truncated tensor data in " + path);
        a.add(p, std::move(shape), std::move(data));
    }
    return a;
}

}  // namespace manas
