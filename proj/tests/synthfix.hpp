#pragma once

// Synthetic two-class experiment fixtures: linearly separable embeddings with
// a controllable fraction of boundary-crossing points, an id-complete demo
// store, and a ready-to-run experiment config wired to the mock provider.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "carp/util.hpp"
#include "json.hpp"
#include "testutil.hpp"

namespace synthfix {

struct LabeledVector {
    std::string id;
    int label;
    std::vector<double> vec;
};

struct Experiment {
    std::filesystem::path root;
    std::filesystem::path config_path;
    std::vector<LabeledVector> train;
    std::vector<LabeledVector> test;
};

inline std::vector<double> cluster_point(int label, std::mt19937_64& rng, std::size_t dim) {
    std::uniform_real_distribution<double> noise(-0.35, 0.35);
    std::vector<double> v(dim);
    for (auto& x : v) x = noise(rng);
    v[static_cast<std::size_t>(label)] += 1.0;
    return v;
}

/// Builds the full experiment under `root`. flip_fraction of test points get
/// a vector drawn from the other class's cluster (gold label kept), so the
/// 1-NN accuracy is meaningfully below 1.
inline Experiment build(const std::filesystem::path& root, int n_train, int n_test,
                        std::uint64_t seed, double flip_fraction = 0.0,
                        const std::string& extra_config = "") {
    namespace fs = std::filesystem;
    fs::create_directories(root);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t dim = 8;
    const char* words[] = {"Negative", "Positive"};

    Experiment exp;
    exp.root = root;

    std::string train_jsonl, test_jsonl, train_emb, test_emb, demos;
    for (int i = 0; i < n_train; ++i) {
        int label = i % 2;
        LabeledVector lv{"tr-" + std::to_string(i), label, cluster_point(label, rng, dim)};
        std::string text = "training sample " + std::to_string(i) + " about topic " +
                           std::to_string(label);
        train_jsonl += nlohmann::json({{"id", lv.id}, {"text", text}, {"label", words[label]}})
                           .dump() + "\n";
        train_emb += nlohmann::json({{"id", lv.id}, {"vector", lv.vec}}).dump() + "\n";
        demos += nlohmann::json({{"id", lv.id},
                                 {"text", text},
                                 {"clues", "- keyword-" + std::to_string(i)},
                                 {"reasoning", "pattern " + std::to_string(i) + " points to " +
                                                   words[label]},
                                 {"label_word", words[label]},
                                 {"valid", true}})
                     .dump() + "\n";
        exp.train.push_back(std::move(lv));
    }
    for (int j = 0; j < n_test; ++j) {
        int label = j % 2;
        int cluster = unit(rng) < flip_fraction ? 1 - label : label;
        LabeledVector lv{"te-" + std::to_string(j), label, cluster_point(cluster, rng, dim)};
        std::string text = "test sample " + std::to_string(j);
        test_jsonl += nlohmann::json({{"id", lv.id}, {"text", text}, {"label", words[label]}})
                          .dump() + "\n";
        test_emb += nlohmann::json({{"id", lv.id}, {"vector", lv.vec}}).dump() + "\n";
        exp.test.push_back(std::move(lv));
    }

    carp::util::write_file(root / "train.jsonl", train_jsonl);
    carp::util::write_file(root / "test.jsonl", test_jsonl);
    carp::util::write_file(root / "train_emb.jsonl", train_emb);
    carp::util::write_file(root / "test_emb.jsonl", test_emb);
    carp::util::write_file(root / "demos.jsonl", demos);

    std::string config =
        "[corpus]\n"
        "labels = Negative, Positive\n"
        "train = train.jsonl\n"
        "test = test.jsonl\n"
        "[sampler]\n"
        "strategy = knn\n"
        "k = 4\n"
        "order = low-to-high\n"
        "demo_store = demos.jsonl\n"
        "[embeddings]\n"
        "index = train_emb.jsonl\n"
        "source_tag = finetuned-style\n"
        "queries = test_emb.jsonl\n"
        "[prompting]\n"
        "template = " + (testutil::template_dir() / "sst2" / "carp_fewshot.tmpl").string() + "\n"
        "max_tokens = 4096\n"
        "[provider]\n"
        "kind = mock\n"
        "mock_fallback = last-demo-label\n"
        "concurrency = 2\n"
        "retry_base_ms = 1\n"
        "[inference]\n"
        "method = majority\n"
        "runs = 3\n"
        "[run]\n"
        "seed = 11\n"
        "cache_dir = cache\n"
        "output = preds.jsonl\n" +
        extra_config;
    exp.config_path = root / "exp.conf";
    carp::util::write_file(exp.config_path, config);
    return exp;
}

/// Independent 1-NN oracle over the raw vectors: highest cosine, ties by
/// ascending id, fully separate from the pipeline's retrieval path. Returns
/// the number of correctly classified test points.
inline int one_nn_correct(const Experiment& exp) {
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return dot / std::sqrt(na * nb);
    };
    int correct = 0;
    for (const auto& t : exp.test) {
        const LabeledVector* best = nullptr;
        double best_score = -2.0;
        for (const auto& tr : exp.train) {
            double s = cosine(t.vec, tr.vec);
            if (s > best_score || (s == best_score && best && tr.id < best->id)) {
                best = &tr;
                best_score = s;
            }
        }
        if (best && best->label == t.label) ++correct;
    }
    return correct;
}

inline double one_nn_accuracy(const Experiment& exp) {
    return static_cast<double>(one_nn_correct(exp)) / static_cast<double>(exp.test.size());
}

}  // namespace synthfix
