#pragma once

// Embedding corpus, cosine distance and exhaustive ranked retrieval.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvembed/binary_io.hpp"
#include "mvembed/error.hpp"

namespace mvembed {

struct Embedding {
    std::string model_id;
    std::vector<float> vector;

    friend bool operator==(const Embedding&, const Embedding&) = default;
};

/// Counts degenerate comparisons seen while ranking.
struct RetrievalWarnings {
    std::size_t zero_norm = 0;
};

/// 1 - cos(u, v), in [0, 2]. A zero-norm operand yields 1.
inline double cosine_distance(std::span<const float> u, std::span<const float> v,
                              RetrievalWarnings* warnings = nullptr) {
    if (u.size() != v.size())
        throw Error("cosine_distance dimension mismatch: " + std::to_string(u.size()) + " vs " +
                    std::to_string(v.size()));
    double uv = 0, uu = 0, vv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double a = u[i], b = v[i];
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if (uu == 0.0 || vv == 0.0) {
        if (warnings) ++warnings->zero_norm;
        return 1.0;
    }
    const double c = uv / (std::sqrt(uu) * std::sqrt(vv));
    return 1.0 - std::clamp(c, -1.0, 1.0);
}

class EmbeddingIndex {
public:
    struct Item {
        Embedding embedding;
        std::string label;
    };

    void add(Embedding e, std::string label) {
        for (float x : e.vector)
            if (!std::isfinite(x)) throw Error("embedding for '" + e.model_id + "' has a non-finite value");
        if (!items_.empty() && e.vector.size() != dim())
            throw Error("embedding for '" + e.model_id + "' has dimension " + std::to_string(e.vector.size()) +
                        ", corpus uses " + std::to_string(dim()));
        if (by_id_.contains(e.model_id)) throw Error("duplicate embedding id '" + e.model_id + "'");
        by_id_.emplace(e.model_id, items_.size());
        items_.push_back({std::move(e), std::move(label)});
    }

    std::size_t size() const noexcept { return items_.size(); }
    std::size_t dim() const noexcept { return items_.empty() ? 0 : items_.front().embedding.vector.size(); }
    const std::vector<Item>& items() const noexcept { return items_; }
    const Item& at(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw Error("unknown query id '" + id + "'");
        return items_[it->second];
    }
    bool contains(const std::string& id) const { return by_id_.contains(id); }

private:
    std::vector<Item> items_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

struct RankedEntry {
    std::string id;
    double distance = 0;
    friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

struct RankedList {
    std::string query_id;
    std::vector<RankedEntry> entries;
    friend bool operator==(const RankedList&, const RankedList&) = default;
};

/// Every other corpus item by ascending cosine distance; ties by id.
inline RankedList rank_all(const EmbeddingIndex& index, const std::string& query_id,
                           RetrievalWarnings* warnings = nullptr) {
    const auto& q = index.at(query_id).embedding.vector;
    RankedList out;
    out.query_id = query_id;
    out.entries.reserve(index.size() - 1);
    for (const auto& item : index.items()) {
        if (item.embedding.model_id == query_id) continue;
        out.entries.push_back({item.embedding.model_id, cosine_distance(q, item.embedding.vector, warnings)});
    }
    std::sort(out.entries.begin(), out.entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.id < b.id;
    });
    return out;
}

// ---- MVEM corpus files ----------------------------------------------------

inline void write_corpus(const EmbeddingIndex& index, std::ostream& out) {
    io::write_magic(out, "MVEM");
    io::write_u32(out, static_cast<std::uint32_t>(index.size()));
    io::write_u32(out, static_cast<std::uint32_t>(index.dim()));
    for (const auto& item : index.items()) {
        io::write_string(out, item.embedding.model_id);
        io::write_string(out, item.label);
        for (float v : item.embedding.vector) io::write_f32(out, v);
    }
}

inline EmbeddingIndex read_corpus(std::istream& in) {
    io::expect_magic(in, "MVEM");
    const auto count = io::read_u32(in, "MVEM count");
    const auto dim = io::read_u32(in, "MVEM dim");
    if (dim > (1u << 20)) throw FormatError("implausible embedding dimension");
    EmbeddingIndex index;
    for (std::uint32_t i = 0; i < count; ++i) {
        Embedding e;
        e.model_id = io::read_string(in, "MVEM id");
        auto label = io::read_string(in, "MVEM label");
        e.vector.resize(dim);
        for (auto& v : e.vector) v = io::read_f32(in, "MVEM values");
        index.add(std::move(e), std::move(label));
    }
    return index;
}

inline void save_corpus(const EmbeddingIndex& index, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_corpus(index, out);
}

inline EmbeddingIndex load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    return read_corpus(in);
}

/// CSV rows `query_id,rank,item_id,distance`; rank is 1-based.
inline void write_ranked_csv(const std::vector<RankedList>& lists, std::ostream& out) {
    out << "query_id,rank,item_id,distance\n" << std::setprecision(17);
    for (const auto& l : lists)
        for (std::size_t r = 0; r < l.entries.size(); ++r)
            out << l.query_id << ',' << r + 1 << ',' << l.entries[r].id << ',' << l.entries[r].distance << '\n';
}

} // namespace mvembed
