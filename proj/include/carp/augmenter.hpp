#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "carp/corpus.hpp"
#include "carp/demo_record.hpp"
#include "carp/errors.hpp"
#include "carp/gateway.hpp"
#include "carp/prompting.hpp"
#include "carp/util.hpp"

namespace carp::augment {

enum class Mode { carp, cot };

inline Mode augment_mode_from(std::string_view s) {
    if (s == "carp") return Mode::carp;
    if (s == "cot") return Mode::cot;
    throw ConfigError("unknown augment mode: " + std::string(s));
}

/// Append-only JSONL store of augmented demonstrations ({id, text, clues,
/// reasoning, label_word, valid} per line). Later records for the same id
/// supersede earlier ones; compact() rewrites the file with one line per id.
class DemoStore {
public:
    static DemoStore open(const std::filesystem::path& path) {
        DemoStore store;
        store.path_ = path;
        if (std::filesystem::exists(path)) {
            util::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
                store.insert(demo_from_json(j));
            });
        } else if (path.has_parent_path()) {
            std::filesystem::create_directories(path.parent_path());
        }
        return store;
    }

    const std::filesystem::path& path() const { return path_; }
    std::size_t size() const { return records_.size(); }
    const std::vector<AugmentedDemonstration>& records() const { return records_; }

    bool contains(const std::string& id) const { return by_id_.count(id) > 0; }

    const AugmentedDemonstration* find(const std::string& id) const {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &records_[it->second];
    }

    /// Appends to the file and the in-memory view; flushed per record so an
    /// aborted run leaves a loadable prefix.
    void append(const AugmentedDemonstration& rec) {
        std::lock_guard lock(*mu_);
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) throw Error("cannot open demo store for append: " + path_.string());
        out << to_json(rec).dump() << "\n";
        out.flush();
        if (!out) throw Error("demo store append failed: " + path_.string());
        insert(rec);
    }

    /// Rewrites the store with exactly one (latest) record per id.
    void compact() {
        std::lock_guard lock(*mu_);
        std::string body;
        for (const auto& rec : records_) body += to_json(rec).dump() + "\n";
        util::write_file(path_, body);
    }

    /// Ids of records usable as demonstrations (valid, with every field the
    /// prompt mode serializes non-empty).
    std::vector<std::string> valid_ids(prompt::PromptMode mode) const {
        std::vector<std::string> ids;
        for (const auto& r : records_) {
            if (!r.valid) continue;
            if (r.label_word.empty() || r.text.empty()) continue;
            if (mode == prompt::PromptMode::carp && (r.clues.empty() || r.reasoning.empty()))
                continue;
            if (mode == prompt::PromptMode::cot && r.reasoning.empty()) continue;
            ids.push_back(r.example_id);
        }
        return ids;
    }

private:
    void insert(AugmentedDemonstration rec) {
        auto it = by_id_.find(rec.example_id);
        if (it != by_id_.end()) {
            records_[it->second] = std::move(rec);
        } else {
            by_id_[rec.example_id] = records_.size();
            records_.push_back(std::move(rec));
        }
    }

    std::filesystem::path path_;
    std::vector<AugmentedDemonstration> records_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
};

namespace detail {

// One retry on empty generation, under a fresh run_index so a cached empty
// response is not replayed.
inline std::string generate_text(gateway::Gateway& gw, const prompt::RenderedPrompt& rendered,
                                 const gateway::CompletionRequest& base) {
    gateway::CompletionRequest req = base;
    req.prompt = rendered.text;
    req.run_index = 0;
    std::string text = util::trim(gw.complete(req).text);
    if (text.empty()) {
        req.run_index = 1;
        text = util::trim(gw.complete(req).text);
    }
    return text;
}

}  // namespace detail

/// Asks the model for clues supporting the example's gold label. Returns
/// trimmed text; empty after one retry yields an empty string (the caller
/// marks the record invalid).
inline std::string generate_clues(const corpus::Example& example,
                                  const corpus::Verbalizer& verbalizer, gateway::Gateway& gw,
                                  const prompt::PromptTemplate& clue_template,
                                  const prompt::TokenBudget& budget = {},
                                  const gateway::CompletionRequest& params = {}) {
    auto rendered = prompt::render_clue_gen(clue_template, example.text,
                                            verbalizer.word(example.label_id), budget);
    return detail::generate_text(gw, rendered, params);
}

/// Asks the model for the reasoning that connects clues and input to the
/// gold label.
inline std::string generate_reasoning(const corpus::Example& example, std::string_view clues,
                                      const corpus::Verbalizer& verbalizer, gateway::Gateway& gw,
                                      const prompt::PromptTemplate& reason_template,
                                      const prompt::TokenBudget& budget = {},
                                      const gateway::CompletionRequest& params = {}) {
    auto rendered = prompt::render_reason_gen(reason_template, example.text,
                                              verbalizer.word(example.label_id), clues, budget);
    return detail::generate_text(gw, rendered, params);
}

struct AugmentSummary {
    int generated = 0;
    int skipped = 0;
    int invalid = 0;
};

/// Generates clues and reasoning (carp mode) or reasoning only (cot mode)
/// for every training example not already in the store. Records that come
/// back empty are stored flagged invalid so the store stays id-complete.
/// Resumable: rerunning touches only missing ids. Generation runs through
/// the gateway's concurrency bound; appends happen in input order.
inline AugmentSummary augment_corpus(const std::vector<corpus::Example>& train,
                                     const corpus::Verbalizer& verbalizer, gateway::Gateway& gw,
                                     DemoStore& store, Mode mode,
                                     const prompt::PromptTemplate* clue_template,
                                     const prompt::PromptTemplate& reason_template,
                                     const prompt::TokenBudget& budget = {},
                                     const gateway::CompletionRequest& params = {},
                                     int workers = 1) {
    if (mode == Mode::carp && !clue_template)
        throw Error("carp augmentation requires a clue-gen template");

    AugmentSummary summary;
    std::vector<const corpus::Example*> todo;
    for (const auto& e : train) {
        if (store.contains(e.id)) {
            ++summary.skipped;
        } else {
            todo.push_back(&e);
        }
    }

    auto generate_one = [&](const corpus::Example& e) {
        AugmentedDemonstration rec;
        rec.example_id = e.id;
        rec.text = e.text;
        rec.label_word = verbalizer.word(e.label_id);
        if (mode == Mode::carp) {
            rec.clues = generate_clues(e, verbalizer, gw, *clue_template, budget, params);
            if (rec.clues.empty()) {
                rec.valid = false;
                return rec;
            }
        }
        // cot-mode reason templates take no clues slot; carp-mode ones do.
        if (mode == Mode::carp) {
            rec.reasoning =
                generate_reasoning(e, rec.clues, verbalizer, gw, reason_template, budget, params);
        } else {
            auto rendered = prompt::render_generation(
                reason_template, {{"text", e.text}, {"label_word", rec.label_word}}, budget);
            rec.reasoning = detail::generate_text(gw, rendered, params);
        }
        rec.valid = !rec.reasoning.empty();
        return rec;
    };

    auto record_result = [&](const AugmentedDemonstration& rec) {
        store.append(rec);
        if (rec.valid) {
            ++summary.generated;
        } else {
            ++summary.invalid;
            std::cerr << "warning: empty generation for id '" << rec.example_id
                      << "', record marked invalid\n";
        }
    };

    if (workers <= 1) {
        for (const auto* e : todo) record_result(generate_one(*e));
    } else {
        // Launch in waves of `workers`, appending in input order.
        std::size_t next = 0;
        while (next < todo.size()) {
            std::size_t batch = std::min<std::size_t>(workers, todo.size() - next);
            std::vector<std::future<AugmentedDemonstration>> futs;
            for (std::size_t i = 0; i < batch; ++i)
                futs.push_back(std::async(std::launch::async, generate_one, std::cref(*todo[next + i])));
            for (auto& f : futs) record_result(f.get());
            next += batch;
        }
    }
    return summary;
}

}  // namespace carp::augment
