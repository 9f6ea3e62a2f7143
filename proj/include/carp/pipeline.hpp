#pragma once

#include <future>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "carp/augmenter.hpp"
#include "carp/config.hpp"
#include "carp/corpus.hpp"
#include "carp/embedding.hpp"
#include "carp/eval.hpp"
#include "carp/gateway.hpp"
#include "carp/http.hpp"
#include "carp/inference.hpp"
#include "carp/prompting.hpp"
#include "carp/sampler.hpp"

namespace carp::pipeline {

inline std::unique_ptr<gateway::Provider> make_provider(const config::PipelineConfig& cfg,
                                                        const std::string& default_label_header) {
    if (cfg.provider_kind == "http")
        return std::make_unique<gateway::HttpProvider>(cfg.base_url, cfg.credentials_env);
    gateway::MockProvider::Fallback fb;
    if (cfg.mock_fallback == "fixed") {
        fb.kind = gateway::MockProvider::Fallback::Kind::fixed;
        fb.fixed_text = cfg.mock_fixed_text;
    } else if (cfg.mock_fallback == "last-demo-label") {
        fb.kind = gateway::MockProvider::Fallback::Kind::last_demo_label;
    } else if (cfg.mock_fallback == "majority-demo-label") {
        fb.kind = gateway::MockProvider::Fallback::Kind::majority_demo_label;
    }
    fb.label_header =
        cfg.mock_label_header.empty() ? default_label_header : cfg.mock_label_header;
    return std::make_unique<gateway::MockProvider>("mock", fb);
}

/// End-to-end classification per the configured experiment: demonstration
/// selection and ordering, prompt rendering under the token budget, m voting
/// runs through the gateway, response parsing, and the final vote.
class Pipeline {
public:
    /// provider_override replaces the configured provider (used by tests to
    /// inject pre-seeded fixtures).
    explicit Pipeline(config::PipelineConfig cfg,
                      std::unique_ptr<gateway::Provider> provider_override = nullptr)
        : cfg_(std::move(cfg)) {
        space_ = cfg_.label_space();
        verbalizer_ = cfg_.build_verbalizer();
        template_ = prompt::PromptTemplate::load(cfg_.template_path);
        if (template_.kind != prompt::TemplateKind::classify)
            throw ConfigError("prompting.template must be a classify template");

        if (!cfg_.train_path.empty())
            train_ = corpus::load_examples(cfg_.train_path, cfg_.format, space_);
        if (!cfg_.test_path.empty())
            test_ = corpus::load_examples(cfg_.test_path, cfg_.format, space_);
        for (std::size_t i = 0; i < train_.size(); ++i) train_by_id_[train_[i].id] = i;

        if (template_.shot == prompt::ShotKind::few) {
            if (!cfg_.demo_store_path.empty()) {
                if (!std::filesystem::exists(cfg_.demo_store_path))
                    throw ConfigError("demo store does not exist (run augment first): " +
                                      cfg_.demo_store_path);
                store_.emplace(augment::DemoStore::open(cfg_.demo_store_path));
                demo_pool_ = store_->valid_ids(template_.mode);
            } else if (template_.mode == prompt::PromptMode::vanilla) {
                // Vanilla demos are (text, label word) pairs straight from the
                // training set; no augmented store needed.
                if (train_.empty())
                    throw ConfigError("vanilla few-shot needs corpus.train or sampler.demo_store");
                for (const auto& e : train_) demo_pool_.push_back(e.id);
            } else {
                throw ConfigError("few-shot " + std::string(prompt::to_string(template_.mode)) +
                                  " classification requires sampler.demo_store");
            }
            if (cfg_.strategy == sampler::Strategy::knn) {
                if (cfg_.index_path.empty())
                    throw ConfigError("knn sampling requires embeddings.index");
                index_.emplace(embed::VectorIndex::ingest(cfg_.index_path, cfg_.source_tag));
                if (!cfg_.queries_path.empty())
                    source_.emplace(embed::EmbeddingSource::from_file(cfg_.queries_path));
                else if (!cfg_.embed_service_url.empty())
                    source_.emplace(embed::EmbeddingSource::from_service(
                        cfg_.embed_service_url, retry_policy()));
                else
                    throw ConfigError(
                        "knn sampling requires embeddings.queries or embeddings.service_url");
            }
        }

        provider_ = provider_override ? std::move(provider_override)
                                      : make_provider(cfg_, template_.label_header());
        if (!cfg_.cache_dir.empty()) cache_ = std::make_unique<gateway::DiskCache>(cfg_.cache_dir);
        gateway_ = std::make_unique<gateway::Gateway>(*provider_, cache_.get(), retry_policy(),
                                                      cfg_.concurrency);
    }

    const config::PipelineConfig& config() const { return cfg_; }
    const corpus::Verbalizer& verbalizer() const { return verbalizer_; }
    const prompt::PromptTemplate& prompt_template() const { return template_; }
    const std::vector<corpus::Example>& train() const { return train_; }
    const std::vector<corpus::Example>& test() const { return test_; }
    gateway::Gateway& gw() { return *gateway_; }

    infer::PredictionRecord classify(const corpus::Example& example) {
        prompt::RenderedPrompt rendered = render_for(example);

        const bool want_logprobs =
            cfg_.logprobs == "true" ||
            (cfg_.logprobs == "auto" && cfg_.method == infer::VoteMethod::weighted);

        std::vector<infer::RunResult> runs;
        for (int j = 0; j < cfg_.runs; ++j) {
            int sample_index = cfg_.trial * cfg_.runs + j;
            runs.push_back(one_run(rendered.text, j, sample_index, want_logprobs));
            if (!runs.back().parsed && cfg_.retry_on_parse_failure) {
                // Negative indices form a disjoint sample namespace, so the
                // retry can never collide with another trial's cache block.
                auto retry = one_run(rendered.text, j, -(sample_index + 1), want_logprobs);
                if (retry.parsed) runs.back() = std::move(retry);
            }
        }

        infer::PredictionRecord rec;
        rec.id = example.id;
        rec.gold = example.label_id;
        rec.method = infer::to_string(cfg_.method);
        rec.demo_ids = rendered.included_demo_ids;
        rec.prompt_digest = sha256_hex(rendered.text);
        for (const auto& r : runs) {
            infer::RunRecord rr;
            rr.run_index = r.run_index;
            rr.parsed = r.parsed.has_value();
            rr.label_word = r.parsed ? r.parsed->label_word : "";
            rr.weight = r.weight;
            rr.raw_digest = r.raw_digest;
            rec.runs.push_back(std::move(rr));
        }
        try {
            rec.predicted = infer::vote(runs, cfg_.method).label_id;
        } catch (const Error&) {
            rec.failed = true;  // every run failed to parse; scored incorrect
            rec.predicted = -1;
        }
        return rec;
    }

    /// Classifies the first `limit` test examples (0 = all), running up to
    /// `concurrency` examples at once; records come back in input order.
    std::vector<infer::PredictionRecord> classify_split() {
        std::size_t n = test_.size();
        if (cfg_.limit > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(cfg_.limit));
        std::vector<infer::PredictionRecord> records(n);
        int workers = std::max(1, cfg_.concurrency);
        std::size_t next = 0;
        while (next < n) {
            std::size_t batch = std::min<std::size_t>(workers, n - next);
            std::vector<std::future<infer::PredictionRecord>> futs;
            for (std::size_t i = 0; i < batch; ++i) {
                const corpus::Example& e = test_[next + i];
                futs.push_back(std::async(std::launch::async, [this, &e] { return classify(e); }));
            }
            for (std::size_t i = 0; i < batch; ++i) records[next + i] = futs[i].get();
            next += batch;
        }
        return records;
    }

private:
    gateway::RetryPolicy retry_policy() const {
        gateway::RetryPolicy p;
        p.max_attempts = cfg_.retry_attempts;
        p.base_delay_ms = cfg_.retry_base_ms;
        return p;
    }

    prompt::RenderedPrompt render_for(const corpus::Example& example) {
        if (template_.shot == prompt::ShotKind::zero)
            return prompt::render_zero_shot(template_, example.text, cfg_.budget);

        sampler::SamplerConfig scfg;
        scfg.strategy = cfg_.strategy;
        scfg.k = cfg_.k;
        scfg.order = cfg_.order;
        scfg.seed = util::mix_seed(cfg_.seed, static_cast<std::uint64_t>(cfg_.trial));
        scfg.demo_corpus_tag = cfg_.demo_store_path;

        std::optional<std::vector<double>> query;
        if (cfg_.strategy == sampler::Strategy::knn)
            query = source_->query(example.id, example.text, index_->dimension());

        auto selection = sampler::select(scfg, example, demo_pool_,
                                         index_ ? &*index_ : nullptr,
                                         query ? &*query : nullptr);
        if (selection.pool_short)
            std::cerr << "warning: demo pool smaller than k for example '" << example.id << "'\n";
        auto ordered = sampler::order_candidates(std::move(selection.candidates), cfg_.order,
                                                 util::mix_seed(scfg.seed, example.id));

        std::vector<augment::AugmentedDemonstration> demos;
        demos.reserve(ordered.size());
        for (const auto& c : ordered) demos.push_back(demo_for(c.example_id));
        return prompt::render_few_shot(template_, demos, example.text, cfg_.budget);
    }

    augment::AugmentedDemonstration demo_for(const std::string& id) {
        if (store_) {
            const auto* rec = store_->find(id);
            if (!rec) throw Error("demo store is missing id '" + id + "'");
            return *rec;
        }
        auto it = train_by_id_.find(id);
        if (it == train_by_id_.end()) throw Error("train set is missing id '" + id + "'");
        const corpus::Example& e = train_[it->second];
        return {e.id, e.text, "", "", verbalizer_.word(e.label_id), true};
    }

    infer::RunResult one_run(const std::string& prompt_text, int local_index, int cache_index,
                             bool want_logprobs) {
        gateway::CompletionRequest req;
        req.prompt = prompt_text;
        req.temperature = cfg_.temperature;
        req.top_p = cfg_.top_p;
        req.max_tokens = cfg_.completion_max_tokens;
        req.frequency_penalty = cfg_.frequency_penalty;
        req.presence_penalty = cfg_.presence_penalty;
        req.best_of = cfg_.best_of;
        req.want_logprobs = want_logprobs;
        req.run_index = cache_index;

        infer::RunResult run;
        run.run_index = local_index;
        auto resp = gateway_->complete(req);
        run.raw_digest = sha256_hex(resp.text);
        run.parsed = infer::parse_response(resp.text, template_.mode, template_.field_headers,
                                           verbalizer_);
        if (run.parsed) run.weight = infer::extract_confidence(resp, run.parsed->label_word);
        return run;
    }

    config::PipelineConfig cfg_;
    corpus::LabelSpace space_;
    corpus::Verbalizer verbalizer_;
    prompt::PromptTemplate template_;
    std::vector<corpus::Example> train_;
    std::unordered_map<std::string, std::size_t> train_by_id_;
    std::vector<corpus::Example> test_;
    std::optional<augment::DemoStore> store_;
    std::vector<std::string> demo_pool_;
    std::optional<embed::VectorIndex> index_;
    std::optional<embed::EmbeddingSource> source_;
    std::unique_ptr<gateway::Provider> provider_;
    std::unique_ptr<gateway::DiskCache> cache_;
    std::unique_ptr<gateway::Gateway> gateway_;
};

}  // namespace carp::pipeline
