#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "carp/corpus.hpp"
#include "carp/embedding.hpp"
#include "carp/errors.hpp"
#include "carp/util.hpp"

namespace carp::sampler {

enum class Strategy { random, knn };
enum class Order { random, low_to_high, high_to_low };

inline Strategy strategy_from(std::string_view s) {
    if (s == "random") return Strategy::random;
    if (s == "knn") return Strategy::knn;
    throw ConfigError("unknown sampler strategy: " + std::string(s));
}

inline Order order_from(std::string_view s) {
    if (s == "random") return Order::random;
    if (s == "low-to-high") return Order::low_to_high;
    if (s == "high-to-low") return Order::high_to_low;
    throw ConfigError("unknown demo order: " + std::string(s));
}

struct SamplerConfig {
    Strategy strategy = Strategy::knn;
    int k = 16;
    Order order = Order::low_to_high;
    std::uint64_t seed = 0;
    std::string demo_corpus_tag;  // which augmented corpus demos come from
};

struct DemoCandidate {
    std::string example_id;
    std::optional<double> score;  // present iff selected by knn
};

struct Selection {
    std::vector<DemoCandidate> candidates;
    bool pool_short = false;  // k exceeded the candidate pool; all returned
};

/// Picks min(k, |pool|) demonstration candidates for a test example. The test
/// example's own id is always excluded. Random selection is seeded by
/// (seed, test id) so each test input draws its own demos while full runs
/// stay reproducible; knn selection queries the index restricted to the
/// candidate pool.
inline Selection select(const SamplerConfig& config, const corpus::Example& test,
                        const std::vector<std::string>& train_ids,
                        const embed::VectorIndex* index = nullptr,
                        const std::vector<double>* query = nullptr) {
    if (config.k < 0) throw Error("sampler k must be >= 0");

    std::vector<std::string> pool;
    pool.reserve(train_ids.size());
    for (const auto& id : train_ids)
        if (id != test.id) pool.push_back(id);

    Selection sel;
    std::size_t k = static_cast<std::size_t>(config.k);
    if (k > pool.size()) {
        sel.pool_short = true;
        k = pool.size();
    }

    if (config.strategy == Strategy::random) {
        util::seeded_shuffle(pool, util::mix_seed(config.seed, test.id));
        pool.resize(k);
        for (auto& id : pool) sel.candidates.push_back({std::move(id), std::nullopt});
        return sel;
    }

    if (!index || !query) throw Error("knn sampling requires a vector index and a query vector");
    std::unordered_set<std::string> allowed(pool.begin(), pool.end());
    auto neighbors =
        index->knn(*query, k, [&](const std::string& id) { return allowed.count(id) > 0; });
    for (auto& n : neighbors) sel.candidates.push_back({std::move(n.example_id), n.score});
    return sel;
}

/// Arranges candidates for prompt assembly. low-to-high sorts by ascending
/// similarity so the most similar demo sits last, adjacent to the test
/// input; high-to-low is its exact elementwise reverse; random is a seeded
/// shuffle.
inline std::vector<DemoCandidate> order_candidates(std::vector<DemoCandidate> candidates,
                                                   Order order, std::uint64_t seed) {
    if (order == Order::random) {
        util::seeded_shuffle(candidates, util::mix_seed(seed, std::string_view("demo-order")));
        return candidates;
    }
    for (const auto& c : candidates)
        if (!c.score)
            throw Error("similarity ordering requires scores; candidate '" + c.example_id +
                        "' has none");
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const DemoCandidate& a, const DemoCandidate& b) { return *a.score < *b.score; });
    if (order == Order::high_to_low) std::reverse(candidates.begin(), candidates.end());
    return candidates;
}

}  // namespace carp::sampler
