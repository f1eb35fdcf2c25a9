// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint archive: ordered (path -> float32 tensor) entries plus
// a string metadata section. One format serves network weights, optimizer
// state and search state; values are stored as little-endian float32.

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "manas/core.hpp"

namespace manas {

struct ArchiveEntry {
    std::string path;
    ShapeVec shape;
    std::vector<float> data;
};

class TensorArchive {
public:
    void add(const std::string& path, ShapeVec shape, std::vector<float> data);

    template <typename T>
    void add_tensor(const std::string& path, const Tensor<T>& t) {
        std::vector<float> data(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<float>(t[i]);
        add(path, t.shape, std::move(data));
    }

    const ArchiveEntry* find(const std::string& path) const;
    const ArchiveEntry& require(const std::string& path) const;

    // Copies an entry into a same-shaped tensor, casting to T.
    template <typename T>
    void read_tensor(const std::string& path, Tensor<T>& out) const {
        const ArchiveEntry& e = require(path);
        if (e.shape != out.shape)
            throw DataError("checkpoint entry '" + path + "' has shape " + shape_str(e.shape) +
                            ", expected " + shape_str(out.shape));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(e.data[i]);
    }

    void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
    const std::string* get_meta(const std::string& key) const;
    const std::string& require_meta(const std::string& key) const;

    const std::vector<ArchiveEntry>& entries() const { return entries_; }

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);

private:
    std::vector<ArchiveEntry> entries_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> meta_;
};

}  // namespace manas
