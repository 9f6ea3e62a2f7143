// carp — retrieval-augmented prompting pipeline for text classification.
//
// Subcommands: ingest-embeddings, augment, classify, eval, subsample.
// Every command exits 0 on success and 1 on error with a message on stderr.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "carp/augmenter.hpp"
#include "carp/config.hpp"
#include "carp/corpus.hpp"
#include "carp/embedding.hpp"
#include "carp/eval.hpp"
#include "carp/pipeline.hpp"
#include "carp/util.hpp"

namespace {

using namespace carp;

int cmd_ingest(const std::string& input, const std::string& tag, const std::string& output) {
    auto index = embed::VectorIndex::ingest(input, embed::source_tag_from(tag));
    nlohmann::json meta = {{"path", std::filesystem::absolute(input).string()},
                           {"dimension", index.dimension()},
                           {"records", index.size()},
                           {"source_tag", to_string(index.source_tag())}};
    if (!output.empty()) util::write_file(output, meta.dump(2) + "\n");
    std::cout << meta.dump() << "\n";
    return 0;
}

int cmd_augment(const std::string& config_path, const std::string& mode_name, int limit,
                bool compact_only) {
    auto cfg = config::load_config(config_path);
    if (cfg.demo_store_path.empty())
        throw ConfigError("sampler.demo_store must be set for augment");
    auto store = augment::DemoStore::open(cfg.demo_store_path);

    if (compact_only) {
        store.compact();
        std::cout << "compacted " << store.path() << " (" << store.size() << " records)\n";
        return 0;
    }

    auto mode = augment::augment_mode_from(mode_name);
    if (cfg.train_path.empty()) throw ConfigError("corpus.train must be set for augment");
    auto space = cfg.label_space();
    auto verbalizer = cfg.build_verbalizer();
    auto train = corpus::load_examples(cfg.train_path, cfg.format, space);
    if (limit > 0 && static_cast<std::size_t>(limit) < train.size())
        train.resize(static_cast<std::size_t>(limit));

    std::optional<prompt::PromptTemplate> clue_tmpl;
    prompt::PromptTemplate reason_tmpl;
    if (mode == augment::Mode::carp) {
        if (cfg.clue_template_path.empty() || cfg.reason_template_path.empty())
            throw ConfigError("carp augment needs prompting.clue_template and reason_template");
        clue_tmpl = prompt::PromptTemplate::load(cfg.clue_template_path);
        reason_tmpl = prompt::PromptTemplate::load(cfg.reason_template_path);
    } else {
        if (cfg.cot_reason_template_path.empty())
            throw ConfigError("cot augment needs prompting.cot_reason_template");
        reason_tmpl = prompt::PromptTemplate::load(cfg.cot_reason_template_path);
    }

    auto provider = pipeline::make_provider(cfg, "SENTIMENT");
    std::optional<gateway::DiskCache> cache;
    if (!cfg.cache_dir.empty()) cache.emplace(cfg.cache_dir);
    gateway::RetryPolicy retry{cfg.retry_attempts, cfg.retry_base_ms, {}};
    gateway::Gateway gw(*provider, cache ? &*cache : nullptr, retry, cfg.concurrency);

    gateway::CompletionRequest params;
    params.temperature = cfg.temperature;
    params.top_p = cfg.top_p;
    params.max_tokens = cfg.completion_max_tokens;
    params.frequency_penalty = cfg.frequency_penalty;
    params.presence_penalty = cfg.presence_penalty;

    auto summary = augment::augment_corpus(train, verbalizer, gw, store, mode,
                                           clue_tmpl ? &*clue_tmpl : nullptr, reason_tmpl,
                                           cfg.budget, params, cfg.concurrency);
    nlohmann::json out = {{"generated", summary.generated},
                          {"skipped", summary.skipped},
                          {"invalid", summary.invalid},
                          {"store", store.path().string()},
                          {"store_records", store.size()},
                          {"provider_calls", gw.provider_calls()}};
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_classify(const std::string& config_path, int limit, long long seed, int trial,
                 const std::string& output, const std::string& provider_kind) {
    auto cfg = config::load_config(config_path);
    if (limit >= 0) cfg.limit = limit;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (trial >= 0) cfg.trial = trial;
    if (!output.empty()) cfg.output_path = output;
    if (!provider_kind.empty()) cfg.provider_kind = provider_kind;
    config::validate_config(cfg);
    if (cfg.test_path.empty()) throw ConfigError("corpus.test must be set for classify");

    pipeline::Pipeline pipe(cfg);
    auto records = pipe.classify_split();
    infer::save_predictions(cfg.output_path, records);

    int failed = 0;
    for (const auto& r : records) failed += r.failed ? 1 : 0;
    nlohmann::json out = {{"examples", records.size()},
                          {"failed", failed},
                          {"accuracy", records.empty() ? 0.0 : eval::accuracy(records)},
                          {"provider_calls", pipe.gw().provider_calls()},
                          {"cache_hits", pipe.gw().cache_hits()},
                          {"output", cfg.output_path}};
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& prediction_files, const std::string& json_path,
             const std::string& csv_path) {
    std::vector<std::vector<infer::PredictionRecord>> trials;
    for (const auto& f : prediction_files) trials.push_back(infer::load_predictions(f));
    auto report = eval::build_report(trials);

    std::printf("accuracy        %.4f\n", report.accuracy);
    std::printf("trials          %zu  mean %.4f  std %.4f\n", report.trials.size(), report.mean,
                report.std_dev);
    std::printf("parse_failures  %d\n", report.parse_failures);
    std::printf("%-8s %-8s %-8s %s\n", "class", "support", "correct", "acc");
    for (const auto& [label, c] : report.per_class) {
        double acc = c.support ? static_cast<double>(c.correct) / c.support : 0.0;
        std::printf("%-8d %-8d %-8d %.4f\n", label, c.support, c.correct, acc);
    }

    auto j = eval::to_json(report);
    std::cout << j.dump() << "\n";
    if (!json_path.empty()) util::write_file(json_path, j.dump(2) + "\n");
    if (!csv_path.empty()) {
        std::string csv = "label,support,correct\n";
        for (const auto& [label, c] : report.per_class)
            csv += std::to_string(label) + "," + std::to_string(c.support) + "," +
                   std::to_string(c.correct) + "\n";
        util::write_file(csv_path, csv);
    }
    return 0;
}

int cmd_subsample(const std::string& config_path, const std::string& input,
                  const std::string& format_name, const std::string& labels_csv, int n,
                  long long seed, const std::string& output) {
    std::string in_path = input;
    auto format = corpus::DatasetFormat::jsonl;
    std::vector<std::string> labels;
    std::uint64_t effective_seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : 0;

    if (!config_path.empty()) {
        auto cfg = config::load_config(config_path);
        if (in_path.empty()) in_path = cfg.train_path;
        format = cfg.format;
        labels = cfg.labels;
        if (seed < 0) effective_seed = cfg.seed;
    }
    if (!format_name.empty()) format = corpus::dataset_format_from(format_name);
    if (!labels_csv.empty()) labels = util::split_list(labels_csv);
    if (in_path.empty()) throw ConfigError("subsample needs --input or a config with corpus.train");
    if (labels.empty()) throw ConfigError("subsample needs --labels or a config with corpus.labels");

    auto space = corpus::LabelSpace::from_names(labels);
    auto train = corpus::load_examples(in_path, format, space);
    auto picked = corpus::subsample_per_class(train, n, effective_seed);

    std::string body;
    for (const auto& e : picked) {
        nlohmann::json j = {{"id", e.id}, {"text", e.text}, {"label", space.name(e.label_id)}};
        body += j.dump() + "\n";
    }
    util::write_file(output, body);
    std::cout << nlohmann::json({{"examples", picked.size()},
                                 {"per_class", n},
                                 {"classes", space.size()},
                                 {"output", output}})
                     .dump()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CARP pipeline: kNN demonstration retrieval, clue-and-reasoning prompting, "
                 "voting and evaluation for LLM text classification"};
    app.require_subcommand(1);

    // ingest-embeddings
    std::string ing_input, ing_tag = "other", ing_output;
    auto* ing = app.add_subcommand("ingest-embeddings", "Validate and register an embedding file");
    ing->add_option("--input", ing_input, "embedding JSONL ({id, vector} per line)")->required();
    ing->add_option("--source-tag", ing_tag, "simcse-style | finetuned-style | other");
    ing->add_option("--output", ing_output, "write index metadata JSON here");

    // augment
    std::string aug_config, aug_mode = "carp";
    int aug_limit = 0;
    bool aug_compact = false;
    auto* aug = app.add_subcommand("augment", "Generate clues/reasoning for the training set");
    aug->add_option("--config", aug_config, "experiment config file")->required();
    aug->add_option("--mode", aug_mode, "carp | cot");
    aug->add_option("--limit", aug_limit, "augment at most N examples");
    aug->add_flag("--compact", aug_compact, "compact the demo store and exit");

    // classify
    std::string cls_config, cls_output, cls_provider;
    int cls_limit = -1, cls_trial = -1;
    long long cls_seed = -1;
    auto* cls = app.add_subcommand("classify", "Classify the test split, writing predictions");
    cls->add_option("--config", cls_config, "experiment config file")->required();
    cls->add_option("--limit", cls_limit, "classify at most N examples");
    cls->add_option("--seed", cls_seed, "override run.seed");
    cls->add_option("--trial", cls_trial, "trial index (shifts voting sample block)");
    cls->add_option("--output", cls_output, "override run.output");
    cls->add_option("--provider", cls_provider, "override provider.kind (mock | http)");

    // eval
    std::vector<std::string> ev_files;
    std::string ev_json, ev_csv;
    auto* ev = app.add_subcommand("eval", "Aggregate prediction files into a report");
    ev->add_option("predictions", ev_files, "prediction JSONL files, one per trial")
        ->required()
        ->expected(-1);
    ev->add_option("--json", ev_json, "write the report JSON here");
    ev->add_option("--csv", ev_csv, "write per-class rows as CSV here");

    // subsample
    std::string sub_config, sub_input, sub_format, sub_labels, sub_output;
    int sub_n = 0;
    long long sub_seed = -1;
    auto* sub = app.add_subcommand("subsample", "Deterministic n-per-class training subset");
    sub->add_option("--config", sub_config, "experiment config file (for input/labels defaults)");
    sub->add_option("--input", sub_input, "training split file");
    sub->add_option("--format", sub_format, "jsonl | tsv");
    sub->add_option("--labels", sub_labels, "comma-separated canonical label names");
    sub->add_option("--n", sub_n, "examples per class")->required();
    sub->add_option("--seed", sub_seed, "shuffle seed");
    sub->add_option("--output", sub_output, "output JSONL path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (ing->parsed()) return cmd_ingest(ing_input, ing_tag, ing_output);
        if (aug->parsed()) return cmd_augment(aug_config, aug_mode, aug_limit, aug_compact);
        if (cls->parsed())
            return cmd_classify(cls_config, cls_limit, cls_seed, cls_trial, cls_output,
                                cls_provider);
        if (ev->parsed()) return cmd_eval(ev_files, ev_json, ev_csv);
        if (sub->parsed())
            return cmd_subsample(sub_config, sub_input, sub_format, sub_labels, sub_n, sub_seed,
                                 sub_output);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
