#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "carp/corpus.hpp"
#include "carp/embedding.hpp"
#include "carp/errors.hpp"
#include "carp/inference.hpp"
#include "carp/prompting.hpp"
#include "carp/sampler.hpp"
#include "carp/util.hpp"

namespace carp::config {

/// One experiment = one config file: flat `key = value` lines grouped in
/// [section] blocks, `#` comments. Unknown sections or keys are rejected so
/// typos fail fast.
struct PipelineConfig {
    // [corpus]
    std::vector<std::string> labels;
    std::string train_path;
    std::string dev_path;
    std::string test_path;
    corpus::DatasetFormat format = corpus::DatasetFormat::jsonl;
    corpus::VerbalizerStrategy verbalizer = corpus::VerbalizerStrategy::annotation;
    std::vector<std::string> verbalizer_words;  // aligned with labels when given

    // [sampler]
    sampler::Strategy strategy = sampler::Strategy::knn;
    int k = 16;
    sampler::Order order = sampler::Order::low_to_high;
    std::string demo_store_path;

    // [embeddings]
    std::string index_path;
    embed::SourceTag source_tag = embed::SourceTag::other;
    std::string queries_path;
    std::string embed_service_url;

    // [prompting]
    std::string template_path;
    std::string clue_template_path;
    std::string reason_template_path;
    std::string cot_reason_template_path;
    prompt::TokenBudget budget;

    // [provider]
    std::string provider_kind = "mock";
    std::string base_url;
    std::string credentials_env;
    double temperature = 0.7;
    double top_p = 1.0;
    int completion_max_tokens = 200;
    double frequency_penalty = 0.0;
    double presence_penalty = 0.0;
    int best_of = 1;
    std::string logprobs = "auto";  // auto | true | false
    std::string mock_fallback = "none";
    std::string mock_fixed_text;
    std::string mock_label_header;  // default: template's label header
    int concurrency = 4;
    int retry_attempts = 5;
    int retry_base_ms = 200;

    // [inference]
    infer::VoteMethod method = infer::VoteMethod::majority;
    int runs = 5;
    bool retry_on_parse_failure = false;

    // [eval]
    int trials = 5;

    // [run]
    std::uint64_t seed = 0;
    int trial = 0;
    std::string cache_dir;
    std::string output_path = "predictions.jsonl";
    int limit = 0;  // 0 = all

    corpus::LabelSpace label_space() const { return corpus::LabelSpace::from_names(labels); }

    corpus::Verbalizer build_verbalizer() const {
        auto space = label_space();
        std::map<int, std::string> word_map;
        if (!verbalizer_words.empty()) {
            if (static_cast<int>(verbalizer_words.size()) != space.size())
                throw ConfigError("verbalizer_words has " +
                                  std::to_string(verbalizer_words.size()) + " entries for " +
                                  std::to_string(space.size()) + " labels");
            for (std::size_t i = 0; i < verbalizer_words.size(); ++i)
                word_map[static_cast<int>(i)] = verbalizer_words[i];
        }
        return corpus::build_verbalizer(space, verbalizer, word_map);
    }
};

namespace detail {

inline bool parse_bool(const std::string& section, const std::string& key, const std::string& v) {
    std::string low = util::lower_ascii(v);
    if (low == "true" || low == "1" || low == "yes") return true;
    if (low == "false" || low == "0" || low == "no") return false;
    throw ConfigError(section + "." + key + ": expected a boolean, got '" + v + "'");
}

inline int parse_int(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        int n = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError(section + "." + key + ": expected an integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& section, const std::string& key,
                           const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(section + "." + key + ": expected a number, got '" + v + "'");
    }
}

}  // namespace detail

inline PipelineConfig parse_config(std::string_view content, const std::string& origin,
                                   const std::filesystem::path& base_dir) {
    PipelineConfig cfg;
    // Relative paths in the file resolve against the config file's directory.
    auto resolve = [&](const std::string& p) {
        if (p.empty()) return p;
        std::filesystem::path fp(p);
        return fp.is_absolute() ? p : (base_dir / fp).lexically_normal().string();
    };

    std::string section;
    std::size_t lineno = 0, pos = 0;
    while (pos <= content.size()) {
        std::size_t eol = content.find('\n', pos);
        std::string line(content.substr(pos, (eol == std::string_view::npos ? content.size() : eol) - pos));
        ++lineno;
        if (eol == std::string_view::npos)
            pos = content.size() + 1;
        else
            pos = eol + 1;

        std::string trimmed = util::trim(line);
        if (trimmed.empty() || trimmed[0] == '#' || trimmed[0] == ';') continue;
        if (trimmed.front() == '[' && trimmed.back() == ']') {
            section = util::trim(trimmed.substr(1, trimmed.size() - 2));
            static const std::set<std::string> known_sections = {
                "corpus", "sampler", "embeddings", "prompting", "provider",
                "inference", "eval", "run"};
            if (!known_sections.count(section))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got: " + trimmed);
        std::string key = util::trim(trimmed.substr(0, eq));
        std::string value = util::trim(trimmed.substr(eq + 1));
        std::string where = section.empty() ? key : section + "." + key;

        bool handled = true;
        if (section == "corpus") {
            if (key == "labels") cfg.labels = util::split_list(value);
            else if (key == "train") cfg.train_path = resolve(value);
            else if (key == "dev") cfg.dev_path = resolve(value);
            else if (key == "test") cfg.test_path = resolve(value);
            else if (key == "format") cfg.format = corpus::dataset_format_from(value);
            else if (key == "verbalizer") cfg.verbalizer = corpus::verbalizer_strategy_from(value);
            else if (key == "verbalizer_words") cfg.verbalizer_words = util::split_list(value);
            else handled = false;
        } else if (section == "sampler") {
            if (key == "strategy") cfg.strategy = sampler::strategy_from(value);
            else if (key == "k") cfg.k = detail::parse_int(section, key, value);
            else if (key == "order") cfg.order = sampler::order_from(value);
            else if (key == "demo_store") cfg.demo_store_path = resolve(value);
            else handled = false;
        } else if (section == "embeddings") {
            if (key == "index") cfg.index_path = resolve(value);
            else if (key == "source_tag") cfg.source_tag = embed::source_tag_from(value);
            else if (key == "queries") cfg.queries_path = resolve(value);
            else if (key == "service_url") cfg.embed_service_url = value;
            else handled = false;
        } else if (section == "prompting") {
            if (key == "template") cfg.template_path = resolve(value);
            else if (key == "clue_template") cfg.clue_template_path = resolve(value);
            else if (key == "reason_template") cfg.reason_template_path = resolve(value);
            else if (key == "cot_reason_template") cfg.cot_reason_template_path = resolve(value);
            else if (key == "max_tokens") cfg.budget.max_tokens = detail::parse_int(section, key, value);
            else if (key == "counter") cfg.budget.counter = value;
            else handled = false;
        } else if (section == "provider") {
            if (key == "kind") cfg.provider_kind = value;
            else if (key == "base_url") cfg.base_url = value;
            else if (key == "credentials_env") cfg.credentials_env = value;
            else if (key == "temperature") cfg.temperature = detail::parse_double(section, key, value);
            else if (key == "top_p") cfg.top_p = detail::parse_double(section, key, value);
            else if (key == "max_tokens") cfg.completion_max_tokens = detail::parse_int(section, key, value);
            else if (key == "frequency_penalty") cfg.frequency_penalty = detail::parse_double(section, key, value);
            else if (key == "presence_penalty") cfg.presence_penalty = detail::parse_double(section, key, value);
            else if (key == "best_of") cfg.best_of = detail::parse_int(section, key, value);
            else if (key == "logprobs") cfg.logprobs = util::lower_ascii(value);
            else if (key == "mock_fallback") cfg.mock_fallback = value;
            else if (key == "mock_fixed_text") cfg.mock_fixed_text = value;
            else if (key == "mock_label_header") cfg.mock_label_header = value;
            else if (key == "concurrency") cfg.concurrency = detail::parse_int(section, key, value);
            else if (key == "retry_attempts") cfg.retry_attempts = detail::parse_int(section, key, value);
            else if (key == "retry_base_ms") cfg.retry_base_ms = detail::parse_int(section, key, value);
            else handled = false;
        } else if (section == "inference") {
            if (key == "method") cfg.method = infer::vote_method_from(value);
            else if (key == "runs") cfg.runs = detail::parse_int(section, key, value);
            else if (key == "retry_on_parse_failure")
                cfg.retry_on_parse_failure = detail::parse_bool(section, key, value);
            else handled = false;
        } else if (section == "eval") {
            if (key == "trials") cfg.trials = detail::parse_int(section, key, value);
            else handled = false;
        } else if (section == "run") {
            if (key == "seed") {
                try {
                    std::size_t used = 0;
                    cfg.seed = std::stoull(value, &used);
                    if (used != value.size()) throw std::invalid_argument(value);
                } catch (const std::exception&) {
                    throw ConfigError("run.seed: expected an unsigned integer, got '" + value + "'");
                }
            }
            else if (key == "trial") cfg.trial = detail::parse_int(section, key, value);
            else if (key == "cache_dir") cfg.cache_dir = resolve(value);
            else if (key == "output") cfg.output_path = resolve(value);
            else if (key == "limit") cfg.limit = detail::parse_int(section, key, value);
            else handled = false;
        } else {
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": key outside any section: " + key);
        }
        if (!handled)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + where +
                              "'");
    }
    return cfg;
}

/// Validates enum consistency and that every referenced input file exists.
/// Outputs (cache dir, prediction file, demo store) may not exist yet.
inline void validate_config(const PipelineConfig& cfg) {
    if (cfg.labels.empty()) throw ConfigError("corpus.labels is required");
    if (cfg.k < 0) throw ConfigError("sampler.k must be >= 0");
    if (cfg.runs < 1) throw ConfigError("inference.runs must be >= 1");
    if (cfg.budget.max_tokens < 1) throw ConfigError("prompting.max_tokens must be >= 1");
    if (cfg.logprobs != "auto" && cfg.logprobs != "true" && cfg.logprobs != "false")
        throw ConfigError("provider.logprobs must be auto, true or false");
    if (cfg.provider_kind != "mock" && cfg.provider_kind != "http")
        throw ConfigError("provider.kind must be mock or http");
    if (cfg.provider_kind == "http" && cfg.base_url.empty())
        throw ConfigError("provider.base_url is required for the http provider");
    static const std::set<std::string> fallbacks = {"none", "fixed", "last-demo-label",
                                                    "majority-demo-label"};
    if (!fallbacks.count(cfg.mock_fallback))
        throw ConfigError("provider.mock_fallback must be one of none, fixed, "
                          "last-demo-label, majority-demo-label");
    prompt::count_tokens("", cfg.budget.counter);  // rejects unknown counters

    for (const std::string* p :
         {&cfg.train_path, &cfg.dev_path, &cfg.test_path, &cfg.template_path,
          &cfg.clue_template_path, &cfg.reason_template_path, &cfg.cot_reason_template_path,
          &cfg.index_path, &cfg.queries_path}) {
        if (!p->empty() && !std::filesystem::exists(*p))
            throw ConfigError("referenced file does not exist: " + *p);
    }
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    auto cfg = parse_config(util::read_file(path), path.string(),
                            path.has_parent_path() ? path.parent_path() : ".");
    validate_config(cfg);
    return cfg;
}

}  // namespace carp::config
