#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "carp/errors.hpp"
#include "carp/util.hpp"

namespace carp::corpus {

/// One labeled text instance.
struct Example {
    std::string id;
    std::string text;
    int label_id = 0;
};

/// Ordered label space; ids are contiguous from 0 and names are unique.
class LabelSpace {
public:
    LabelSpace() = default;

    static LabelSpace from_names(std::vector<std::string> names) {
        LabelSpace space;
        for (std::size_t i = 0; i < names.size(); ++i) {
            std::string name = util::trim(names[i]);
            if (name.empty()) throw ConfigError("label name " + std::to_string(i) + " is empty");
            if (space.by_name_.count(name))
                throw ConfigError("duplicate label name: " + name);
            space.by_name_[name] = static_cast<int>(i);
            space.names_.push_back(std::move(name));
        }
        return space;
    }

    int size() const { return static_cast<int>(names_.size()); }
    const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& names() const { return names_; }

    std::optional<int> id_of(std::string_view name) const {
        auto it = by_name_.find(std::string(name));
        if (it == by_name_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> by_name_;
};

enum class VerbalizerStrategy { annotation, position_index, synonym, flipped, random_word, special_token };

inline const char* to_string(VerbalizerStrategy s) {
    switch (s) {
        case VerbalizerStrategy::annotation: return "annotation";
        case VerbalizerStrategy::position_index: return "position-index";
        case VerbalizerStrategy::synonym: return "synonym";
        case VerbalizerStrategy::flipped: return "flipped";
        case VerbalizerStrategy::random_word: return "random-word";
        case VerbalizerStrategy::special_token: return "special-token";
    }
    return "?";
}

inline VerbalizerStrategy verbalizer_strategy_from(std::string_view name) {
    for (auto s : {VerbalizerStrategy::annotation, VerbalizerStrategy::position_index,
                   VerbalizerStrategy::synonym, VerbalizerStrategy::flipped,
                   VerbalizerStrategy::random_word, VerbalizerStrategy::special_token}) {
        if (name == to_string(s)) return s;
    }
    throw ConfigError("unknown verbalizer strategy: " + std::string(name));
}

// Matching form used when comparing generated label words: surrounding
// whitespace/punctuation stripped, ASCII-lowercased. Interior punctuation
// (e.g. "Money/Foreign Exchange", "Sci/Tech") is preserved.
inline std::string label_match_form(std::string_view word) {
    auto is_junk = [](unsigned char c) { return std::isspace(c) || std::ispunct(c); };
    while (!word.empty() && is_junk(static_cast<unsigned char>(word.front()))) word.remove_prefix(1);
    while (!word.empty() && is_junk(static_cast<unsigned char>(word.back()))) word.remove_suffix(1);
    return util::lower_ascii(word);
}

/// Maps label ids to the words the model is expected to emit.
class Verbalizer {
public:
    Verbalizer() = default;

    Verbalizer(VerbalizerStrategy strategy, std::vector<std::string> words)
        : strategy_(strategy), words_(std::move(words)) {
        for (std::size_t i = 0; i < words_.size(); ++i) {
            std::string norm = label_match_form(words_[i]);
            if (norm.empty())
                throw ConfigError("label word for id " + std::to_string(i) +
                                  " has no matchable content: '" + words_[i] + "'");
            auto [it, fresh] = by_norm_.emplace(std::move(norm), static_cast<int>(i));
            if (!fresh)
                throw ConfigError("label words collide after normalization: '" + words_[i] +
                                  "' vs '" + words_[it->second] + "'");
        }
    }

    VerbalizerStrategy strategy() const { return strategy_; }
    int size() const { return static_cast<int>(words_.size()); }
    const std::string& word(int label_id) const { return words_.at(static_cast<std::size_t>(label_id)); }
    const std::vector<std::string>& words() const { return words_; }

    std::optional<int> try_normalize(std::string_view word) const {
        auto it = by_norm_.find(label_match_form(word));
        if (it == by_norm_.end()) return std::nullopt;
        return it->second;
    }

private:
    VerbalizerStrategy strategy_ = VerbalizerStrategy::annotation;
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> by_norm_;
};

struct DatasetSplit {
    std::vector<Example> train;
    std::vector<Example> dev;
    std::vector<Example> test;
};

enum class DatasetFormat { jsonl, tsv };

inline DatasetFormat dataset_format_from(std::string_view name) {
    if (name == "jsonl") return DatasetFormat::jsonl;
    if (name == "tsv") return DatasetFormat::tsv;
    throw ConfigError("unknown dataset format: " + std::string(name));
}

namespace detail {

inline void validate_examples(const std::filesystem::path& path, std::vector<Example>& out,
                              const LabelSpace& space) {
    std::unordered_set<std::string> seen;
    for (const auto& e : out) {
        if (util::trim_view(e.text).empty())
            throw ParseError(path.string() + ": example '" + e.id + "' has empty text");
        if (e.label_id < 0 || e.label_id >= space.size())
            throw ParseError(path.string() + ": example '" + e.id + "' has invalid label id " +
                             std::to_string(e.label_id));
        if (!seen.insert(e.id).second)
            throw ParseError(path.string() + ": duplicate example id '" + e.id + "'");
    }
}

}  // namespace detail

/// Loads one split file. JSONL records carry {id, text, label}; TSV rows are
/// label<TAB>text with ids assigned "row-<k>" (k = 0-based data row).
inline std::vector<Example> load_examples(const std::filesystem::path& path, DatasetFormat format,
                                          const LabelSpace& space) {
    std::vector<Example> out;
    if (format == DatasetFormat::jsonl) {
        util::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
            for (const char* field : {"id", "text", "label"}) {
                if (!j.contains(field))
                    throw ParseError(path.string(), lineno,
                                     std::string("record missing \"") + field + "\" field");
            }
            Example e;
            e.id = j.at("id").get<std::string>();
            e.text = j.at("text").get<std::string>();
            std::string label = j.at("label").get<std::string>();
            auto id = space.id_of(util::trim(label));
            if (!id) throw ParseError(path.string(), lineno, "unknown label name: '" + label + "'");
            e.label_id = *id;
            out.push_back(std::move(e));
        });
    } else {
        std::ifstream in(path);
        if (!in) throw Error("cannot open file: " + path.string());
        std::string line;
        std::size_t lineno = 0, row = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (util::trim_view(line).empty()) continue;
            std::size_t tab = line.find('\t');
            if (tab == std::string::npos)
                throw ParseError(path.string(), lineno, "expected label<TAB>text");
            std::string label = util::trim(line.substr(0, tab));
            auto id = space.id_of(label);
            if (!id) throw ParseError(path.string(), lineno, "unknown label name: '" + label + "'");
            Example e;
            e.id = "row-" + std::to_string(row++);
            e.text = line.substr(tab + 1);
            e.label_id = *id;
            out.push_back(std::move(e));
        }
    }
    if (out.empty()) throw ParseError(path.string() + ": empty split");
    detail::validate_examples(path, out, space);
    return out;
}

/// Loads a dataset directory containing train/dev/test.<ext> files. Absent
/// dev or test files yield empty splits; a present-but-empty file is an
/// error; at least one split file must exist.
inline DatasetSplit load_dataset(const std::filesystem::path& dir, DatasetFormat format,
                                 const LabelSpace& space) {
    const char* ext = format == DatasetFormat::jsonl ? ".jsonl" : ".tsv";
    DatasetSplit split;
    bool any = false;
    auto load_if_present = [&](const char* name, std::vector<Example>& dst) {
        auto path = dir / (std::string(name) + ext);
        if (std::filesystem::exists(path)) {
            dst = load_examples(path, format, space);
            any = true;
        }
    };
    load_if_present("train", split.train);
    load_if_present("dev", split.dev);
    load_if_present("test", split.test);
    if (!any)
        throw Error("no train/dev/test" + std::string(ext) + " files under " + dir.string());
    return split;
}

/// Draws exactly n examples per class via a seeded per-class shuffle. Output
/// is ordered (class ascending, original order within class) so low-resource
/// splits are reproducible byte for byte.
inline std::vector<Example> subsample_per_class(const std::vector<Example>& train, int n,
                                                std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_class;  // label -> original positions
    for (std::size_t i = 0; i < train.size(); ++i) by_class[train[i].label_id].push_back(i);

    std::vector<std::size_t> picked;
    for (auto& [label, positions] : by_class) {
        if (static_cast<int>(positions.size()) < n)
            throw Error("class " + std::to_string(label) + " has " +
                        std::to_string(positions.size()) + " examples, need " + std::to_string(n));
        util::seeded_shuffle(positions, util::mix_seed(seed, static_cast<std::uint64_t>(label)));
        positions.resize(static_cast<std::size_t>(n));
        std::sort(positions.begin(), positions.end());
        picked.insert(picked.end(), positions.begin(), positions.end());
    }

    std::vector<Example> out;
    out.reserve(picked.size());
    for (auto i : picked) out.push_back(train[i]);
    return out;
}

namespace detail {

// English cardinal words for position-index label words ("One".."Ninety-Nine").
inline std::string number_word(int n) {
    static const char* ones[] = {"",     "One",   "Two",   "Three", "Four",
                                 "Five", "Six",   "Seven", "Eight", "Nine",
                                 "Ten",  "Eleven", "Twelve", "Thirteen", "Fourteen",
                                 "Fifteen", "Sixteen", "Seventeen", "Eighteen", "Nineteen"};
    static const char* tens[] = {"", "", "Twenty", "Thirty", "Forty",
                                 "Fifty", "Sixty", "Seventy", "Eighty", "Ninety"};
    if (n < 1 || n > 99) throw ConfigError("position-index supports up to 99 labels");
    if (n < 20) return ones[n];
    std::string word = tens[n / 10];
    if (n % 10) word += std::string("-") + ones[n % 10];
    return word;
}

}  // namespace detail

/// Builds a verbalizer for the label space. word_map (label id -> word) is
/// required for the synonym, random-word and special-token strategies;
/// flipped swaps the two annotation words and only exists for binary spaces.
inline Verbalizer build_verbalizer(const LabelSpace& space, VerbalizerStrategy strategy,
                                   const std::map<int, std::string>& word_map = {}) {
    std::vector<std::string> words;
    switch (strategy) {
        case VerbalizerStrategy::annotation:
            words = space.names();
            break;
        case VerbalizerStrategy::position_index:
            for (int i = 0; i < space.size(); ++i) words.push_back(detail::number_word(i + 1));
            break;
        case VerbalizerStrategy::flipped:
            if (space.size() != 2)
                throw ConfigError("flipped verbalizer requires a binary label space, got " +
                                  std::to_string(space.size()) + " labels");
            words = {space.name(1), space.name(0)};
            break;
        case VerbalizerStrategy::synonym:
        case VerbalizerStrategy::random_word:
        case VerbalizerStrategy::special_token:
            for (int i = 0; i < space.size(); ++i) {
                auto it = word_map.find(i);
                if (it == word_map.end())
                    throw ConfigError(std::string(to_string(strategy)) +
                                      " verbalizer: word map missing label " + std::to_string(i));
                words.push_back(it->second);
            }
            break;
    }
    return Verbalizer(strategy, std::move(words));
}

/// Matches a generated label word against the verbalizer (case-insensitive,
/// surrounding punctuation ignored). Throws on no match.
inline int normalize_label_word(std::string_view word, const Verbalizer& verbalizer) {
    auto id = verbalizer.try_normalize(word);
    if (!id) throw Error("unmatched label word: '" + std::string(word) + "'");
    return *id;
}

}  // namespace carp::corpus
