#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "carp/demo_record.hpp"
#include "carp/errors.hpp"
#include "carp/gateway.hpp"
#include "carp/inference.hpp"
#include "carp/util.hpp"

namespace carp::eval {

struct ClassCount {
    int support = 0;
    int correct = 0;
};

/// Accuracy report over one or more trials. accuracy pools every record;
/// mean/std are over per-trial accuracies (sample std, n-1 denominator,
/// 0 for a single trial).
struct Report {
    double accuracy = 0.0;
    std::map<int, ClassCount> per_class;
    int parse_failures = 0;
    std::vector<double> trials;
    double mean = 0.0;
    double std_dev = 0.0;
};

/// Fraction of records whose prediction matches gold and did not fail.
inline double accuracy(const std::vector<infer::PredictionRecord>& records) {
    if (records.empty()) throw Error("accuracy over empty record list");
    std::size_t correct = 0;
    for (const auto& r : records)
        if (!r.failed && r.predicted == r.gold) ++correct;
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

/// Arithmetic mean and sample standard deviation of per-trial accuracies.
inline std::pair<double, double> aggregate_trials(const std::vector<double>& accuracies) {
    if (accuracies.empty()) throw Error("aggregate over empty trial list");
    double mean = 0.0;
    for (double a : accuracies) mean += a;
    mean /= static_cast<double>(accuracies.size());
    if (accuracies.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double a : accuracies) ss += (a - mean) * (a - mean);
    return {mean, std::sqrt(ss / static_cast<double>(accuracies.size() - 1))};
}

/// Builds the pooled report for a list of trials (each one prediction file's
/// records).
inline Report build_report(const std::vector<std::vector<infer::PredictionRecord>>& trials) {
    if (trials.empty()) throw Error("report over zero trials");
    Report rep;
    int correct = 0, total = 0;
    for (const auto& records : trials) {
        rep.trials.push_back(accuracy(records));
        for (const auto& r : records) {
            auto& c = rep.per_class[r.gold];
            ++c.support;
            ++total;
            if (!r.failed && r.predicted == r.gold) {
                ++c.correct;
                ++correct;
            }
            if (r.failed) ++rep.parse_failures;
        }
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    auto [mean, sd] = aggregate_trials(rep.trials);
    rep.mean = mean;
    rep.std_dev = sd;
    return rep;
}

inline nlohmann::json to_json(const Report& r) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [label, c] : r.per_class)
        per_class[std::to_string(label)] = {{"support", c.support}, {"correct", c.correct}};
    return {{"accuracy", r.accuracy},   {"per_class", std::move(per_class)},
            {"parse_failures", r.parse_failures}, {"trials", r.trials},
            {"mean", r.mean},           {"std", r.std_dev}};
}

// ---------------------------------------------------------------------------
// Reasoning-quality audits

struct QualityPair {
    std::string id;
    std::string text;
    std::string reasoning;
};

/// Fixed-seed sample of (text, reasoning) pairs from valid store records; the
/// chosen ids travel with the result for auditability.
inline std::vector<QualityPair> sample_quality_pairs(
    const std::vector<augment::AugmentedDemonstration>& records, std::size_t n,
    std::uint64_t seed) {
    std::vector<const augment::AugmentedDemonstration*> pool;
    for (const auto& r : records)
        if (r.valid && !r.reasoning.empty()) pool.push_back(&r);
    util::seeded_shuffle(pool, util::mix_seed(seed, std::string_view("quality-sample")));
    if (pool.size() > n) pool.resize(n);
    std::vector<QualityPair> out;
    for (const auto* r : pool) out.push_back({r->example_id, r->text, r->reasoning});
    return out;
}

namespace detail {

inline bool first_word_is_yes(std::string_view text) {
    std::string word = util::trim(text);
    std::size_t end = word.find_first_of(" \t\n\r");
    if (end != std::string::npos) word = word.substr(0, end);
    while (!word.empty() && std::ispunct(static_cast<unsigned char>(word.back()))) word.pop_back();
    return util::iequals(word, "yes");
}

}  // namespace detail

/// Self-critique pass: asks the model whether each generated reasoning
/// process supports a determinate label for its input. Returns the yes
/// fraction; unparseable responses count as no.
inline double reliability_check(const std::vector<QualityPair>& sample, gateway::Gateway& gw,
                                const std::string& label_noun = "sentiment",
                                const gateway::CompletionRequest& params = {}) {
    if (sample.empty()) throw Error("reliability check over empty sample");
    std::size_t yes = 0;
    for (const auto& pair : sample) {
        gateway::CompletionRequest req = params;
        req.prompt = "Is the following REASONING process supporting determinate " + label_noun +
                     " label to INPUT? Please answer Yes or No.\nINPUT: " + pair.text +
                     "\nREASONING: " + pair.reasoning;
        if (detail::first_word_is_yes(gw.complete(req).text)) ++yes;
    }
    return static_cast<double>(yes) / static_cast<double>(sample.size());
}

/// Demonstration for the entailment audit (drawn from an NLI corpus).
struct NliDemo {
    std::string premise;
    std::string hypothesis;
    bool entailed = false;
};

inline std::vector<NliDemo> load_nli_demos(const std::filesystem::path& path) {
    std::vector<NliDemo> out;
    util::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
        out.push_back({j.at("premise").get<std::string>(), j.at("hypothesis").get<std::string>(),
                       j.at("entailed").get<bool>()});
    });
    return out;
}

/// Few-shot entailment audit: is the generated reasoning entailed by the
/// input text? Returns the entailed fraction.
inline double faithfulness_check(const std::vector<QualityPair>& sample, gateway::Gateway& gw,
                                 const std::vector<NliDemo>& nli_demos,
                                 const gateway::CompletionRequest& params = {}) {
    if (sample.empty()) throw Error("faithfulness check over empty sample");
    if (nli_demos.empty()) throw Error("faithfulness check needs NLI demonstrations");
    std::string preamble =
        "Given the premise and hypothesis, please justify whether the HYPOTHESIS can be "
        "entailed from the PREMISE. Please return yes or no.";
    std::string demo_blocks;
    for (const auto& d : nli_demos) {
        demo_blocks += "\n\nPREMISE: " + d.premise + "\nHYPOTHESIS: " + d.hypothesis +
                       "\nANSWER: " + (d.entailed ? "yes" : "no");
    }
    std::size_t yes = 0;
    for (const auto& pair : sample) {
        gateway::CompletionRequest req = params;
        req.prompt = preamble + demo_blocks + "\n\nPREMISE: " + pair.text +
                     "\nHYPOTHESIS: " + pair.reasoning + "\nANSWER:";
        if (detail::first_word_is_yes(gw.complete(req).text)) ++yes;
    }
    return static_cast<double>(yes) / static_cast<double>(sample.size());
}

/// exp(-mean token logprob) over all tokens of all texts, via logprob-echo
/// scoring. Providers that return no token logprobs are unsupported.
inline double fluency_perplexity(const std::vector<std::string>& texts, gateway::Gateway& gw,
                                 const gateway::CompletionRequest& params = {}) {
    if (texts.empty()) throw Error("perplexity over empty text list");
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& text : texts) {
        gateway::CompletionRequest req = params;
        req.prompt = text;
        req.want_logprobs = true;
        req.max_tokens = 0;  // scoring only
        auto resp = gw.complete(req);
        if (!resp.token_logprobs)
            throw Error("provider does not support token logprobs (required for perplexity)");
        for (const auto& tl : *resp.token_logprobs) {
            sum += tl.logprob;
            ++n;
        }
    }
    if (n == 0) throw Error("provider returned no scored tokens");
    return std::exp(-sum / static_cast<double>(n));
}

}  // namespace carp::eval
