#pragma once

#include <string>

#include "json.hpp"

namespace carp::augment {

/// A training example with its generated clues and reasoning, ready to be
/// spliced into a few-shot prompt. Invalid records stay in the store (so
/// corpora remain id-complete) but are never used as demonstrations.
struct AugmentedDemonstration {
    std::string example_id;
    std::string text;
    std::string clues;
    std::string reasoning;
    std::string label_word;
    bool valid = true;
};

inline nlohmann::json to_json(const AugmentedDemonstration& d) {
    return {{"id", d.example_id},     {"text", d.text},
            {"clues", d.clues},       {"reasoning", d.reasoning},
            {"label_word", d.label_word}, {"valid", d.valid}};
}

inline AugmentedDemonstration demo_from_json(const nlohmann::json& j) {
    AugmentedDemonstration d;
    d.example_id = j.at("id").get<std::string>();
    d.text = j.at("text").get<std::string>();
    d.clues = j.value("clues", "");
    d.reasoning = j.value("reasoning", "");
    d.label_word = j.value("label_word", "");
    d.valid = j.value("valid", true);
    return d;
}

}  // namespace carp::augment
