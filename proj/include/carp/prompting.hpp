#pragma once

#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "carp/demo_record.hpp"
#include "carp/errors.hpp"
#include "carp/util.hpp"

namespace carp::prompt {

enum class PromptMode { vanilla, cot, carp };
enum class ShotKind { zero, few };
enum class TemplateKind { classify, clue_gen, reason_gen };

inline const char* to_string(PromptMode m) {
    switch (m) {
        case PromptMode::vanilla: return "vanilla";
        case PromptMode::cot: return "cot";
        case PromptMode::carp: return "carp";
    }
    return "?";
}

inline PromptMode prompt_mode_from(std::string_view s) {
    if (s == "vanilla") return PromptMode::vanilla;
    if (s == "cot") return PromptMode::cot;
    if (s == "carp") return PromptMode::carp;
    throw ConfigError("unknown prompt mode: " + std::string(s));
}

inline ShotKind shot_kind_from(std::string_view s) {
    if (s == "zero") return ShotKind::zero;
    if (s == "few") return ShotKind::few;
    throw ConfigError("unknown shot kind: " + std::string(s));
}

inline TemplateKind template_kind_from(std::string_view s) {
    if (s == "classify") return TemplateKind::classify;
    if (s == "clue-gen") return TemplateKind::clue_gen;
    if (s == "reason-gen") return TemplateKind::reason_gen;
    throw ConfigError("unknown template kind: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Token counting

struct TokenBudget {
    int max_tokens = 4096;
    std::string counter = "approx-words";
};

/// Deterministic token estimate under a named scheme. The default
/// "approx-words" scheme is ceil(1.35 x word count), where words are maximal
/// runs of non-space, non-punctuation characters; it overestimates typical
/// subword tokenizers so budgeted prompts stay under provider limits.
/// "words" counts bare words, "chars" is ceil(bytes / 4).
inline int count_tokens(std::string_view text, const std::string& counter = "approx-words") {
    if (counter == "chars")
        return static_cast<int>((text.size() + 3) / 4);
    std::size_t words = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        bool sep = std::isspace(c) || std::ispunct(c);
        if (!sep && !in_word) ++words;
        in_word = !sep;
    }
    if (counter == "words") return static_cast<int>(words);
    if (counter == "approx-words")
        return static_cast<int>(std::ceil(1.35 * static_cast<double>(words)));
    throw ConfigError("unknown token counter: " + counter);
}

// ---------------------------------------------------------------------------
// Templates

/// A prompt template: free-text description, a demonstration block and a
/// request block with {slot} placeholders, plus the ordered field headers
/// that structure blocks and model output (e.g. INPUT, CLUES, REASONING,
/// SENTIMENT). Loaded from versioned template files so ablations are edits
/// to template text, not code.
struct PromptTemplate {
    PromptMode mode = PromptMode::carp;
    ShotKind shot = ShotKind::few;
    TemplateKind kind = TemplateKind::classify;
    std::string description;
    std::string demo_block;
    std::string request_block;
    std::vector<std::string> field_headers;

    const std::string& input_header() const { return field_headers.front(); }
    const std::string& label_header() const { return field_headers.back(); }
    /// Header appended after the request block in zero-shot prompts to steer
    /// the output format (first generation field: CLUES / REASONING / label).
    const std::string& steer_header() const { return field_headers.at(1); }

    static PromptTemplate load(const std::filesystem::path& path);
    static PromptTemplate parse(std::string_view content, const std::string& origin = "<template>");
    void validate(const std::string& origin = "<template>") const;
};

namespace detail {

inline std::set<std::string> slot_names(std::string_view text) {
    std::set<std::string> names;
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string_view::npos) {
        std::size_t end = text.find('}', pos);
        if (end == std::string_view::npos) break;
        names.insert(std::string(text.substr(pos + 1, end - pos - 1)));
        pos = end + 1;
    }
    return names;
}

inline std::string fill_slots(std::string_view tmpl, const std::map<std::string, std::string>& slots) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        std::size_t open = tmpl.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        std::size_t close = tmpl.find('}', open);
        if (close == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        out.append(tmpl.substr(pos, open - pos));
        std::string name(tmpl.substr(open + 1, close - open - 1));
        auto it = slots.find(name);
        if (it == slots.end())
            throw Error("template references unbound slot {" + name + "}");
        out.append(it->second);
        pos = close + 1;
    }
    return out;
}

inline std::string strip_outer_blank(std::string s) {
    std::size_t start = 0;
    while (start < s.size() && (s[start] == '\n' || s[start] == '\r')) ++start;
    std::size_t end = s.size();
    while (end > start && (s[end - 1] == '\n' || s[end - 1] == '\r' || s[end - 1] == ' '))
        --end;
    return s.substr(start, end - start);
}

}  // namespace detail

inline PromptTemplate PromptTemplate::parse(std::string_view content, const std::string& origin) {
    PromptTemplate t;
    std::map<std::string, std::string*> sections = {
        {"description", &t.description}, {"demo", &t.demo_block}, {"request", &t.request_block}};
    std::string* current = nullptr;
    std::string buffer;
    bool saw_mode = false, saw_shot = false, saw_headers = false;

    auto flush = [&] {
        if (current) *current = detail::strip_outer_blank(buffer);
        buffer.clear();
    };

    std::size_t pos = 0;
    while (pos <= content.size()) {
        std::size_t eol = content.find('\n', pos);
        std::string line(content.substr(pos, (eol == std::string_view::npos ? content.size() : eol) - pos));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string trimmed = util::trim(line);

        if (trimmed.size() >= 2 && trimmed.front() == '[' && trimmed.back() == ']') {
            flush();
            std::string name = util::trim(trimmed.substr(1, trimmed.size() - 2));
            auto it = sections.find(name);
            if (it == sections.end())
                throw ParseError(origin + ": unknown template section [" + name + "]");
            current = it->second;
        } else if (current) {
            buffer += line;
            buffer += '\n';
        } else if (!trimmed.empty() && trimmed[0] != '#') {
            std::size_t colon = trimmed.find(':');
            if (colon == std::string::npos)
                throw ParseError(origin + ": expected 'key: value' in template header, got: " + trimmed);
            std::string key = util::trim(trimmed.substr(0, colon));
            std::string value = util::trim(trimmed.substr(colon + 1));
            if (key == "mode") {
                t.mode = prompt_mode_from(value);
                saw_mode = true;
            } else if (key == "shot") {
                t.shot = shot_kind_from(value);
                saw_shot = true;
            } else if (key == "kind") {
                t.kind = template_kind_from(value);
            } else if (key == "field_headers") {
                t.field_headers = util::split_list(value);
                saw_headers = true;
            } else {
                throw ParseError(origin + ": unknown template header key: " + key);
            }
        }
        if (eol == std::string_view::npos) break;
        pos = eol + 1;
    }
    flush();

    if (!saw_mode || !saw_shot || !saw_headers)
        throw ParseError(origin + ": template header needs mode, shot and field_headers");
    t.validate(origin);
    return t;
}

inline PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    return parse(util::read_file(path), path.string());
}

inline void PromptTemplate::validate(const std::string& origin) const {
    if (description.empty()) throw ParseError(origin + ": empty [description]");
    if (field_headers.size() < 2)
        throw ParseError(origin + ": need at least an input header and one output header");
    std::set<std::string> seen;
    for (const auto& h : field_headers)
        if (!seen.insert(util::lower_ascii(h)).second)
            throw ParseError(origin + ": duplicate field header '" + h + "'");
    if (request_block.empty()) throw ParseError(origin + ": empty [request]");

    auto check = [&](std::string_view block, const char* name,
                     const std::set<std::string>& allowed,
                     const std::set<std::string>& required) {
        auto used = detail::slot_names(block);
        for (const auto& s : used)
            if (!allowed.count(s))
                throw ParseError(origin + ": [" + name + "] references unknown slot {" + s + "}");
        for (const auto& s : required)
            if (!used.count(s))
                throw ParseError(origin + ": [" + name + "] must reference slot {" + s + "}");
    };

    if (kind == TemplateKind::classify) {
        check(request_block, "request", {"text"}, {"text"});
        if (shot == ShotKind::few) {
            if (demo_block.empty()) throw ParseError(origin + ": few-shot template needs a [demo] section");
            switch (mode) {
                case PromptMode::carp:
                    check(demo_block, "demo", {"text", "clues", "reasoning", "label_word"},
                          {"text", "clues", "reasoning", "label_word"});
                    break;
                case PromptMode::cot:
                    check(demo_block, "demo", {"text", "reasoning", "label_word"},
                          {"text", "reasoning", "label_word"});
                    break;
                case PromptMode::vanilla:
                    check(demo_block, "demo", {"text", "label_word"}, {"text", "label_word"});
                    break;
            }
        }
    } else if (kind == TemplateKind::clue_gen) {
        check(request_block, "request", {"text", "label_word"}, {"text", "label_word"});
    } else {
        check(request_block, "request", {"text", "label_word", "clues"}, {"text", "label_word"});
    }
}

// ---------------------------------------------------------------------------
// Rendering

/// Final prompt text with its token count and the provenance of every
/// candidate demonstration (included, in order, or dropped for budget).
struct RenderedPrompt {
    std::string text;
    int token_count = 0;
    std::vector<std::string> included_demo_ids;
    std::vector<std::string> dropped_demo_ids;
};

namespace detail {

inline void require_nonempty(std::string_view value, const char* what) {
    if (util::trim_view(value).empty()) throw Error(std::string(what) + " must not be empty");
}

inline RenderedPrompt finish(std::string text, const TokenBudget& budget, const char* what) {
    RenderedPrompt r;
    r.token_count = count_tokens(text, budget.counter);
    if (r.token_count > budget.max_tokens)
        throw BudgetError(std::string(what) + " exceeds token budget (" +
                          std::to_string(r.token_count) + " > " +
                          std::to_string(budget.max_tokens) + ")");
    r.text = std::move(text);
    return r;
}

}  // namespace detail

/// description + request block + trailing steer header.
inline RenderedPrompt render_zero_shot(const PromptTemplate& t, std::string_view test_text,
                                       const TokenBudget& budget = {}) {
    if (t.shot != ShotKind::zero) throw Error("render_zero_shot needs a zero-shot template");
    detail::require_nonempty(test_text, "test text");
    std::string text = t.description + "\n\n" +
                       detail::fill_slots(t.request_block, {{"text", std::string(test_text)}}) +
                       "\n" + t.steer_header() + ":";
    return detail::finish(std::move(text), budget, "zero-shot prompt");
}

/// description + demo blocks in the given order + test block last. When the
/// budget is tight, demonstrations are dropped from the front of the list
/// (the lowest-similarity end under low-to-high ordering) until the prompt
/// fits; the test block itself is never dropped.
inline RenderedPrompt render_few_shot(const PromptTemplate& t,
                                      const std::vector<augment::AugmentedDemonstration>& demos,
                                      std::string_view test_text, const TokenBudget& budget = {}) {
    if (t.shot != ShotKind::few) throw Error("render_few_shot needs a few-shot template");
    detail::require_nonempty(test_text, "test text");

    std::vector<std::string> blocks;
    blocks.reserve(demos.size());
    for (const auto& d : demos) {
        blocks.push_back(detail::fill_slots(t.demo_block, {{"text", d.text},
                                                           {"clues", d.clues},
                                                           {"reasoning", d.reasoning},
                                                           {"label_word", d.label_word}}));
    }
    std::string test_block = detail::fill_slots(t.request_block, {{"text", std::string(test_text)}});

    for (std::size_t drop = 0; drop <= demos.size(); ++drop) {
        std::string text = t.description;
        for (std::size_t i = drop; i < blocks.size(); ++i) {
            text += "\n\n";
            text += blocks[i];
        }
        text += "\n\n";
        text += test_block;
        int tokens = count_tokens(text, budget.counter);
        if (tokens <= budget.max_tokens) {
            RenderedPrompt r;
            r.text = std::move(text);
            r.token_count = tokens;
            for (std::size_t i = 0; i < demos.size(); ++i) {
                auto& dst = i < drop ? r.dropped_demo_ids : r.included_demo_ids;
                dst.push_back(demos[i].example_id);
            }
            return r;
        }
    }
    throw BudgetError("token budget too small for description and test block (max " +
                      std::to_string(budget.max_tokens) + ")");
}

/// Renders a generation prompt (clue or reasoning collection) by filling the
/// request block with the given slots.
inline RenderedPrompt render_generation(const PromptTemplate& t,
                                        const std::map<std::string, std::string>& slots,
                                        const TokenBudget& budget = {}) {
    std::string text = t.description + "\n\n" + detail::fill_slots(t.request_block, slots);
    return detail::finish(std::move(text), budget, "generation prompt");
}

/// Clue-collection prompt: the model is conditioned on the gold label, so the
/// prompt ends after the label field.
inline RenderedPrompt render_clue_gen(const PromptTemplate& t, std::string_view text,
                                      std::string_view label_word, const TokenBudget& budget = {}) {
    if (t.kind != TemplateKind::clue_gen) throw Error("render_clue_gen needs a clue-gen template");
    detail::require_nonempty(text, "input text");
    detail::require_nonempty(label_word, "label word");
    return render_generation(
        t, {{"text", std::string(text)}, {"label_word", std::string(label_word)}}, budget);
}

/// Reasoning prompt conditioned on input, gold label and clues; ends with the
/// reasoning header so the model continues from there.
inline RenderedPrompt render_reason_gen(const PromptTemplate& t, std::string_view text,
                                        std::string_view label_word, std::string_view clues,
                                        const TokenBudget& budget = {}) {
    if (t.kind != TemplateKind::reason_gen)
        throw Error("render_reason_gen needs a reason-gen template");
    detail::require_nonempty(text, "input text");
    detail::require_nonempty(label_word, "label word");
    if (util::trim_view(clues).empty()) throw Error("clues must not be empty");
    return render_generation(t, {{"text", std::string(text)},
                                 {"label_word", std::string(label_word)},
                                 {"clues", std::string(clues)}},
                             budget);
}

// ---------------------------------------------------------------------------
// Header-section scanning (shared with response parsing)

struct HeaderSection {
    std::size_t header_index;  // into the field_headers list
    std::size_t pos;           // offset of the header line
    std::size_t value_start;   // offset just past "HEADER:" and one optional space
};

/// Finds every line that starts with one of the field headers (case
/// insensitive, optional spaces before the colon), in text order.
inline std::vector<HeaderSection> find_header_sections(std::string_view text,
                                                       const std::vector<std::string>& headers) {
    std::vector<HeaderSection> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::size_t line_end = eol == std::string_view::npos ? text.size() : eol;
        std::string_view line = text.substr(pos, line_end - pos);
        for (std::size_t h = 0; h < headers.size(); ++h) {
            const std::string& header = headers[h];
            if (line.size() < header.size() ||
                !util::iequals(line.substr(0, header.size()), header))
                continue;
            std::size_t p = header.size();
            while (p < line.size() && (line[p] == ' ' || line[p] == '\t')) ++p;
            if (p >= line.size() || line[p] != ':') continue;
            ++p;
            if (p < line.size() && line[p] == ' ') ++p;  // single separator space
            out.push_back({h, pos, pos + p});
            break;
        }
        if (eol == std::string_view::npos) break;
        pos = eol + 1;
    }
    return out;
}

/// Re-parses the demonstration blocks of a rendered few-shot prompt. Blocks
/// are anchored on the input header; field values run until the next header
/// line, with the joining newlines stripped. The final block is the test
/// request and is not returned. Field content whose lines collide with a
/// header (e.g. a clue line starting "INPUT:") cannot round-trip; upstream
/// fuzzing and generation keep headers out of field bodies.
inline std::vector<augment::AugmentedDemonstration> parse_demo_blocks(
    std::string_view text, const std::vector<std::string>& headers) {
    auto sections = find_header_sections(text, headers);
    std::vector<augment::AugmentedDemonstration> blocks;

    auto value_of = [&](std::size_t i) {
        std::size_t end = i + 1 < sections.size() ? sections[i + 1].pos : text.size();
        std::string_view v = text.substr(sections[i].value_start, end - sections[i].value_start);
        while (!v.empty() && (v.back() == '\n' || v.back() == '\r')) v.remove_suffix(1);
        return std::string(v);
    };

    // Field semantics by position: first header is the input text, last is
    // the label word; with four headers the middle two are clues/reasoning,
    // with three the middle one is reasoning.
    for (std::size_t i = 0; i < sections.size(); ++i) {
        if (sections[i].header_index != 0) continue;
        augment::AugmentedDemonstration d;
        d.text = value_of(i);
        for (std::size_t j = i + 1; j < sections.size() && sections[j].header_index != 0; ++j) {
            std::size_t h = sections[j].header_index;
            std::string value = value_of(j);
            if (h + 1 == headers.size())
                d.label_word = value;
            else if (headers.size() == 4 && h == 1)
                d.clues = value;
            else
                d.reasoning = value;
        }
        blocks.push_back(std::move(d));
    }
    if (!blocks.empty()) blocks.pop_back();  // final block is the test request
    return blocks;
}

}  // namespace carp::prompt
