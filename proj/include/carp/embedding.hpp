#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "carp/errors.hpp"
#include "carp/util.hpp"

namespace carp::embed {

struct EmbeddingRecord {
    std::string example_id;
    std::vector<double> vec;
};

enum class SourceTag { simcse_style, finetuned_style, other };

inline const char* to_string(SourceTag t) {
    switch (t) {
        case SourceTag::simcse_style: return "simcse-style";
        case SourceTag::finetuned_style: return "finetuned-style";
        case SourceTag::other: return "other";
    }
    return "?";
}

inline SourceTag source_tag_from(std::string_view name) {
    for (auto t : {SourceTag::simcse_style, SourceTag::finetuned_style, SourceTag::other})
        if (name == to_string(t)) return t;
    throw ConfigError("unknown source tag: " + std::string(name));
}

inline double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// dot(u,v) / (|u| |v|). Both vectors must share a dimension and have
/// nonzero norm.
inline double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size())
        throw Error("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                    std::to_string(v.size()) + ")");
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
    double nu = norm(u), nv = norm(v);
    if (nu == 0.0 || nv == 0.0) throw Error("cosine: zero-norm vector");
    return dot / (nu * nv);
}

struct Neighbor {
    std::string example_id;
    double score;
    bool operator==(const Neighbor&) const = default;
};

/// Immutable embedding store answering exact cosine kNN queries by linear
/// scan. Ties are broken by ascending example id so retrieval is
/// deterministic.
class VectorIndex {
public:
    VectorIndex(std::size_t dimension, SourceTag tag) : dimension_(dimension), tag_(tag) {}

    /// Loads an embedding JSONL file ({id, vector} per line). Every vector
    /// must be finite, share one dimension and have a nonzero norm; ids must
    /// be unique.
    static VectorIndex ingest(const std::filesystem::path& path, SourceTag tag) {
        std::optional<VectorIndex> index;
        util::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
            if (!j.contains("id") || !j.contains("vector"))
                throw ParseError(path.string(), lineno, "record needs \"id\" and \"vector\" fields");
            EmbeddingRecord rec;
            rec.example_id = j.at("id").get<std::string>();
            rec.vec = j.at("vector").get<std::vector<double>>();
            if (!index) index.emplace(rec.vec.size(), tag);
            index->add(std::move(rec));
        });
        if (!index) throw ParseError(path.string() + ": no embedding records");
        return std::move(*index);
    }

    void add(EmbeddingRecord rec) {
        if (rec.vec.size() != dimension_)
            throw Error("dimension mismatch for id '" + rec.example_id + "': got " +
                        std::to_string(rec.vec.size()) + ", index has " +
                        std::to_string(dimension_));
        for (double x : rec.vec)
            if (!std::isfinite(x))
                throw Error("non-finite component in vector for id '" + rec.example_id + "'");
        if (norm(rec.vec) == 0.0)
            throw Error("zero-norm vector for id '" + rec.example_id + "'");
        if (by_id_.count(rec.example_id))
            throw Error("duplicate embedding id '" + rec.example_id + "'");
        by_id_[rec.example_id] = records_.size();
        records_.push_back(std::move(rec));
    }

    std::size_t dimension() const { return dimension_; }
    SourceTag source_tag() const { return tag_; }
    std::size_t size() const { return records_.size(); }
    const std::vector<EmbeddingRecord>& records() const { return records_; }

    const std::vector<double>* find(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) return nullptr;
        return &records_[it->second].vec;
    }

    /// Top-k by cosine, scores non-increasing, ties by ascending id. The
    /// optional filter restricts candidates (return false to skip).
    std::vector<Neighbor> knn(const std::vector<double>& query, std::size_t k,
                              const std::function<bool(const std::string&)>& filter = {}) const {
        if (query.size() != dimension_)
            throw Error("knn: query dimension " + std::to_string(query.size()) +
                        " does not match index dimension " + std::to_string(dimension_));
        std::vector<Neighbor> scored;
        scored.reserve(records_.size());
        for (const auto& rec : records_) {
            if (filter && !filter(rec.example_id)) continue;
            scored.push_back({rec.example_id, cosine_similarity(query, rec.vec)});
        }
        auto better = [](const Neighbor& a, const Neighbor& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.example_id < b.example_id;
        };
        k = std::min(k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                          scored.end(), better);
        scored.resize(k);
        return scored;
    }

private:
    std::size_t dimension_;
    SourceTag tag_;
    std::vector<EmbeddingRecord> records_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Precomputed query vectors for test inputs, same JSONL schema as the index.
class QueryVectors {
public:
    static QueryVectors load(const std::filesystem::path& path) {
        QueryVectors qv;
        util::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
            if (!j.contains("id") || !j.contains("vector"))
                throw ParseError(path.string(), lineno, "record needs \"id\" and \"vector\" fields");
            qv.vectors_[j.at("id").get<std::string>()] = j.at("vector").get<std::vector<double>>();
        });
        return qv;
    }

    std::size_t size() const { return vectors_.size(); }

    const std::vector<double>& get(const std::string& id) const {
        auto it = vectors_.find(id);
        if (it == vectors_.end()) throw Error("missing embedding for id '" + id + "'");
        return it->second;
    }

private:
    std::unordered_map<std::string, std::vector<double>> vectors_;
};

}  // namespace carp::embed
