#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "carp/corpus.hpp"
#include "carp/digest.hpp"
#include "carp/errors.hpp"
#include "carp/gateway.hpp"
#include "carp/prompting.hpp"
#include "carp/util.hpp"

namespace carp::infer {

/// A model completion split into its sections, with the label resolved
/// against the verbalizer.
struct ParsedResponse {
    std::optional<std::string> clues;
    std::optional<std::string> reasoning;
    std::string label_word;
    int label_id = -1;
    std::string raw;
};

namespace detail {

// Last word-boundary occurrence of any verbalizer word in the text
// (case-insensitive). Longer matches win at equal positions, then lower id.
inline std::optional<std::pair<int, std::string>> last_label_word(
    std::string_view text, const corpus::Verbalizer& verbalizer) {
    auto boundary = [&](std::size_t pos, std::size_t len) {
        auto alnum = [](unsigned char c) { return std::isalnum(c) != 0; };
        if (pos > 0 && alnum(text[pos - 1]) && alnum(text[pos])) return false;
        std::size_t end = pos + len;
        if (end < text.size() && alnum(text[end]) && alnum(text[end - 1])) return false;
        return true;
    };
    std::optional<std::pair<int, std::string>> best;
    std::size_t best_pos = 0, best_len = 0;
    for (int id = 0; id < verbalizer.size(); ++id) {
        const std::string& word = verbalizer.word(id);
        std::size_t from = 0, found = std::string_view::npos;
        while (true) {
            std::size_t pos = util::ifind(text, word, from);
            if (pos == std::string_view::npos) break;
            if (boundary(pos, word.size())) found = pos;
            from = pos + 1;
        }
        if (found == std::string_view::npos) continue;
        bool better = !best || found > best_pos ||
                      (found == best_pos && word.size() > best_len);
        if (better) {
            best = {{id, std::string(text.substr(found, word.size()))}};
            best_pos = found;
            best_len = word.size();
        }
    }
    return best;
}

inline std::string first_line(std::string_view s) {
    std::size_t eol = s.find('\n');
    return util::trim(eol == std::string_view::npos ? s : s.substr(0, eol));
}

}  // namespace detail

/// Splits a completion on the template's field headers (case-insensitive)
/// and resolves the label from the final label field; when that fails, falls
/// back to the last verbalizer word anywhere in the text. Returns nullopt on
/// parse failure (no label found) — recorded, never thrown.
///
/// Steered zero-shot completions start mid-section (the prompt already ends
/// with the first generation header), so any text before the first header in
/// the response is attributed to that leading field.
inline std::optional<ParsedResponse> parse_response(std::string_view text, prompt::PromptMode mode,
                                                    const std::vector<std::string>& field_headers,
                                                    const corpus::Verbalizer& verbalizer) {
    ParsedResponse parsed;
    parsed.raw = std::string(text);

    auto sections = prompt::find_header_sections(text, field_headers);
    auto section_value = [&](std::size_t i) {
        std::size_t end = i + 1 < sections.size() ? sections[i + 1].pos : text.size();
        return util::trim(text.substr(sections[i].value_start, end - sections[i].value_start));
    };

    const std::size_t label_index = field_headers.size() - 1;
    std::optional<std::size_t> first_clues, first_reasoning, last_label;
    for (std::size_t i = 0; i < sections.size(); ++i) {
        std::size_t h = sections[i].header_index;
        if (h == label_index) {
            last_label = i;
        } else if (field_headers.size() == 4 && h == 1 && !first_clues) {
            first_clues = i;
        } else if (h == label_index - 1 && h != 0 && !first_reasoning) {
            first_reasoning = i;
        }
    }

    if (first_clues) parsed.clues = section_value(*first_clues);
    if (first_reasoning) parsed.reasoning = section_value(*first_reasoning);

    // Leading text before the first header belongs to the first generation
    // field the mode produces.
    std::size_t lead_end = sections.empty() ? text.size() : sections.front().pos;
    std::string lead = util::trim(text.substr(0, lead_end));
    if (!lead.empty()) {
        if (mode == prompt::PromptMode::carp && !parsed.clues) parsed.clues = lead;
        else if (mode == prompt::PromptMode::cot && !parsed.reasoning) parsed.reasoning = lead;
    }

    std::optional<int> label_id;
    if (last_label) {
        std::string word = detail::first_line(section_value(*last_label));
        if (auto id = verbalizer.try_normalize(word)) {
            label_id = id;
            parsed.label_word = word;
        }
    }
    if (!label_id) {
        auto hit = detail::last_label_word(text, verbalizer);
        if (!hit) return std::nullopt;
        label_id = hit->first;
        parsed.label_word = hit->second;
    }
    parsed.label_id = *label_id;
    return parsed;
}

/// Confidence weight for a run: exp(mean logprob) over the response tokens
/// spanning the label word's last occurrence; 1.0 whenever logprobs are
/// unavailable or the word cannot be located.
inline double extract_confidence(const gateway::CompletionResponse& response,
                                 std::string_view label_word) {
    if (!response.token_logprobs || response.token_logprobs->empty() || label_word.empty())
        return 1.0;

    std::string joined;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // token extents in joined text
    for (const auto& tl : *response.token_logprobs) {
        spans.emplace_back(joined.size(), joined.size() + tl.token.size());
        joined += tl.token;
    }
    std::size_t pos = util::ifind(joined, label_word), last = std::string_view::npos;
    while (pos != std::string_view::npos) {
        last = pos;
        pos = util::ifind(joined, label_word, pos + 1);
    }
    if (last == std::string_view::npos) return 1.0;

    std::size_t begin = last, end = last + label_word.size();
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (spans[i].first < end && spans[i].second > begin) {
            sum += (*response.token_logprobs)[i].logprob;
            ++n;
        }
    }
    if (n == 0) return 1.0;
    double w = std::exp(sum / n);
    return std::min(w, 1.0);
}

/// One voting run. weight is 1.0 when no confidence is available. raw_digest
/// identifies the completion text even when parsing failed.
struct RunResult {
    int run_index = 0;
    std::optional<ParsedResponse> parsed;
    double weight = 1.0;
    std::string raw_digest;
};

enum class VoteMethod { majority, weighted };

inline VoteMethod vote_method_from(std::string_view s) {
    if (s == "majority") return VoteMethod::majority;
    if (s == "weighted") return VoteMethod::weighted;
    throw ConfigError("unknown vote method: " + std::string(s));
}

inline const char* to_string(VoteMethod m) {
    return m == VoteMethod::majority ? "majority" : "weighted";
}

struct Tally {
    int count = 0;
    double weight_sum = 0.0;
};

struct VoteOutcome {
    int label_id = -1;
    std::map<int, Tally> tallies;  // exactly the labels observed
    VoteMethod method = VoteMethod::majority;
};

namespace detail {

inline std::map<int, Tally> tally_runs(const std::vector<RunResult>& runs) {
    std::map<int, Tally> tallies;
    for (const auto& r : runs) {
        if (!r.parsed) continue;
        auto& t = tallies[r.parsed->label_id];
        ++t.count;
        t.weight_sum += r.weight;
    }
    if (tallies.empty()) throw Error("vote abstained: no run parsed successfully");
    return tallies;
}

}  // namespace detail

/// Most frequent label across runs; ties go to the higher summed weight,
/// then the lower label id.
inline VoteOutcome majority_vote(const std::vector<RunResult>& runs) {
    VoteOutcome out;
    out.method = VoteMethod::majority;
    out.tallies = detail::tally_runs(runs);
    out.label_id = out.tallies.begin()->first;
    for (const auto& [label, t] : out.tallies) {
        const Tally& best = out.tallies.at(out.label_id);
        if (t.count > best.count ||
            (t.count == best.count && t.weight_sum > best.weight_sum))
            out.label_id = label;
    }
    return out;
}

/// Label with the highest summed confidence; ties go to the higher count,
/// then the lower label id.
inline VoteOutcome weighted_probability_vote(const std::vector<RunResult>& runs) {
    VoteOutcome out;
    out.method = VoteMethod::weighted;
    out.tallies = detail::tally_runs(runs);
    out.label_id = out.tallies.begin()->first;
    for (const auto& [label, t] : out.tallies) {
        const Tally& best = out.tallies.at(out.label_id);
        if (t.weight_sum > best.weight_sum ||
            (t.weight_sum == best.weight_sum && t.count > best.count))
            out.label_id = label;
    }
    return out;
}

inline VoteOutcome vote(const std::vector<RunResult>& runs, VoteMethod method) {
    return method == VoteMethod::majority ? majority_vote(runs) : weighted_probability_vote(runs);
}

// ---------------------------------------------------------------------------
// Prediction records

struct RunRecord {
    int run_index = 0;
    bool parsed = false;
    std::string label_word;
    double weight = 1.0;
    std::string raw_digest;
};

/// Everything the pipeline decided for one example, ready for the JSONL
/// prediction file.
struct PredictionRecord {
    std::string id;
    int gold = -1;
    int predicted = -1;
    bool failed = false;
    std::string method;
    std::vector<RunRecord> runs;
    std::vector<std::string> demo_ids;
    std::string prompt_digest;
};

inline nlohmann::json to_json(const PredictionRecord& p) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : p.runs) {
        runs.push_back({{"run_index", r.run_index},
                        {"parsed", r.parsed},
                        {"label_word", r.label_word},
                        {"weight", r.weight},
                        {"raw_digest", r.raw_digest}});
    }
    return {{"id", p.id},         {"gold", p.gold},
            {"predicted", p.predicted}, {"failed", p.failed},
            {"method", p.method}, {"runs", std::move(runs)},
            {"demo_ids", p.demo_ids}, {"prompt_digest", p.prompt_digest}};
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
    PredictionRecord p;
    p.id = j.at("id").get<std::string>();
    p.gold = j.at("gold").get<int>();
    p.predicted = j.at("predicted").get<int>();
    p.failed = j.at("failed").get<bool>();
    p.method = j.value("method", "");
    if (j.contains("runs")) {
        for (const auto& r : j.at("runs")) {
            RunRecord rr;
            rr.run_index = r.at("run_index").get<int>();
            rr.parsed = r.value("parsed", true);
            rr.label_word = r.value("label_word", "");
            rr.weight = r.value("weight", 1.0);
            rr.raw_digest = r.value("raw_digest", "");
            p.runs.push_back(std::move(rr));
        }
    }
    if (j.contains("demo_ids")) p.demo_ids = j.at("demo_ids").get<std::vector<std::string>>();
    p.prompt_digest = j.value("prompt_digest", "");
    return p;
}

inline std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
    std::vector<PredictionRecord> out;
    util::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
        out.push_back(prediction_from_json(j));
    });
    return out;
}

inline void save_predictions(const std::filesystem::path& path,
                             const std::vector<PredictionRecord>& records) {
    std::string body;
    for (const auto& r : records) body += to_json(r).dump() + "\n";
    util::write_file(path, body);
}

}  // namespace carp::infer
