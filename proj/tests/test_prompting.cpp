#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "carp/prompting.hpp"
#include "testutil.hpp"

using namespace carp;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::EndsWith;
using augment::AugmentedDemonstration;

namespace {

prompt::PromptTemplate load_tmpl(const std::string& dataset, const std::string& name) {
    return prompt::PromptTemplate::load(testutil::template_dir() / dataset / (name + ".tmpl"));
}

std::vector<AugmentedDemonstration> make_demos(int n) {
    std::vector<AugmentedDemonstration> demos;
    for (int i = 0; i < n; ++i) {
        AugmentedDemonstration d;
        d.example_id = "d" + std::to_string(i);
        d.text = "example text number " + std::to_string(i);
        d.clues = "clue words " + std::to_string(i);
        d.reasoning = "because of clue " + std::to_string(i);
        d.label_word = i % 2 ? "Positive" : "Negative";
        demos.push_back(std::move(d));
    }
    return demos;
}

}  // namespace

TEST_CASE("token counting under the default scheme") {
    CHECK(prompt::count_tokens("") == 0);
    CHECK(prompt::count_tokens("hello world") == 3);  // ceil(2 * 1.35)
    CHECK(prompt::count_tokens("hello") == 2);        // ceil(1.35)
    CHECK(prompt::count_tokens("one two three four") == 6);  // ceil(5.4)
    CHECK(prompt::count_tokens("hello world", "words") == 2);
    CHECK(prompt::count_tokens("abcdefgh", "chars") == 2);
    REQUIRE_THROWS_WITH(prompt::count_tokens("x", "nope"), ContainsSubstring("unknown token counter"));
}

TEST_CASE("token counting is monotone under concatenation (property)") {
    std::mt19937_64 rng(13);
    const std::string alphabet = "ab c.d,e f\ng-h ij k";
    auto random_text = [&] {
        std::string s;
        std::size_t len = rng() % 40;
        for (std::size_t i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
        return s;
    };
    for (int trial = 0; trial < 500; ++trial) {
        std::string a = random_text(), b = random_text();
        CHECK(prompt::count_tokens(a + b) >= prompt::count_tokens(a));
        CHECK(prompt::count_tokens(a + b) >= prompt::count_tokens(b));
    }
}

TEST_CASE("template files load and validate") {
    auto t = load_tmpl("sst2", "carp_fewshot");
    CHECK(t.mode == prompt::PromptMode::carp);
    CHECK(t.shot == prompt::ShotKind::few);
    REQUIRE(t.field_headers.size() == 4);
    CHECK(t.field_headers[0] == "INPUT");
    CHECK(t.label_header() == "SENTIMENT");

    SECTION("header errors") {
        REQUIRE_THROWS_WITH(prompt::PromptTemplate::parse("shot: few\n[description]\nx\n[request]\ny"),
                            ContainsSubstring("mode"));
        REQUIRE_THROWS_WITH(
            prompt::PromptTemplate::parse("mode: carp\nshot: few\nbogus: 1\nfield_headers: A, B\n"),
            ContainsSubstring("unknown template header key"));
    }
    SECTION("slot errors") {
        std::string bad = "mode: vanilla\nshot: few\nfield_headers: INPUT, SENTIMENT\n"
                          "[description]\nd\n[demo]\nINPUT: {text}\nSENTIMENT: {clues}\n"
                          "[request]\nINPUT: {text}\n";
        REQUIRE_THROWS_WITH(prompt::PromptTemplate::parse(bad), ContainsSubstring("{clues}"));
    }
    SECTION("field headers must be unique") {
        std::string bad = "mode: vanilla\nshot: zero\nfield_headers: INPUT, input\n"
                          "[description]\nd\n[request]\nINPUT: {text}\n";
        REQUIRE_THROWS_WITH(prompt::PromptTemplate::parse(bad),
                            ContainsSubstring("duplicate field header"));
    }
}

TEST_CASE("zero-shot prompts end with the steering header") {
    SECTION("carp") {
        auto t = load_tmpl("sst2", "carp_zeroshot");
        auto r = prompt::render_zero_shot(t, "great movie");
        CHECK_THAT(r.text, EndsWith("INPUT: great movie\nCLUES:"));
        CHECK(r.included_demo_ids.empty());
        CHECK(r.token_count == prompt::count_tokens(r.text));
    }
    SECTION("vanilla") {
        auto t = load_tmpl("sst2", "vanilla_zeroshot");
        auto r = prompt::render_zero_shot(t, "great movie");
        CHECK_THAT(r.text, EndsWith("SENTIMENT:"));
    }
    SECTION("empty test text is a precondition error") {
        auto t = load_tmpl("sst2", "carp_zeroshot");
        REQUIRE_THROWS_WITH(prompt::render_zero_shot(t, "   "), ContainsSubstring("empty"));
    }
    SECTION("budget exceeded by the description alone") {
        auto t = load_tmpl("sst2", "carp_zeroshot");
        prompt::TokenBudget tiny{5, "approx-words"};
        REQUIRE_THROWS_AS(prompt::render_zero_shot(t, "great movie", tiny), BudgetError);
    }
}

TEST_CASE("few-shot rendering includes demos in order, test block last") {
    auto t = load_tmpl("sst2", "carp_fewshot");
    auto demos = make_demos(2);
    auto r = prompt::render_few_shot(t, demos, "is it good?");
    REQUIRE(r.included_demo_ids == std::vector<std::string>{"d0", "d1"});
    CHECK(r.dropped_demo_ids.empty());

    auto p0 = r.text.find("example text number 0");
    auto p1 = r.text.find("example text number 1");
    auto pt = r.text.find("INPUT: is it good?");
    REQUIRE(p0 != std::string::npos);
    REQUIRE(p1 != std::string::npos);
    REQUIRE(pt != std::string::npos);
    CHECK(p0 < p1);
    CHECK(p1 < pt);
    CHECK_THAT(r.text, EndsWith("INPUT: is it good?"));
}

TEST_CASE("budget truncation drops demos from the front") {
    auto t = load_tmpl("sst2", "carp_fewshot");
    auto demos = make_demos(16);

    // Derive the budget that admits exactly the last 12 demos.
    std::vector<AugmentedDemonstration> last12(demos.begin() + 4, demos.end());
    prompt::TokenBudget huge{1 << 20, "words"};
    int t12 = prompt::render_few_shot(t, last12, "test input", huge).token_count;
    std::vector<AugmentedDemonstration> last13(demos.begin() + 3, demos.end());
    int t13 = prompt::render_few_shot(t, last13, "test input", huge).token_count;
    REQUIRE(t13 > t12);

    prompt::TokenBudget budget{t12, "words"};
    auto r = prompt::render_few_shot(t, demos, "test input", budget);
    CHECK(r.token_count <= budget.max_tokens);
    REQUIRE(r.dropped_demo_ids == std::vector<std::string>{"d0", "d1", "d2", "d3"});
    REQUIRE(r.included_demo_ids.size() == 12);
    CHECK(r.included_demo_ids.front() == "d4");
}

TEST_CASE("budget too small for description and test block") {
    auto t = load_tmpl("sst2", "carp_fewshot");
    prompt::TokenBudget tiny{3, "words"};
    REQUIRE_THROWS_AS(prompt::render_few_shot(t, make_demos(2), "test", tiny), BudgetError);
}

TEST_CASE("up to k=16 demo blocks render under the default budget") {
    auto t = load_tmpl("sst2", "carp_fewshot");
    auto r = prompt::render_few_shot(t, make_demos(16), "test input");
    CHECK(r.included_demo_ids.size() == 16);
    CHECK(r.token_count <= 4096);
}

TEST_CASE("clue generation prompt is conditioned on the gold label") {
    auto t = load_tmpl("sst2", "clue_gen");
    auto r = prompt::render_clue_gen(t, "great movie", "Positive");
    CHECK_THAT(r.text, ContainsSubstring("INPUT: great movie"));
    CHECK_THAT(r.text, EndsWith("SENTIMENT: Positive"));

    REQUIRE_THROWS_WITH(prompt::render_clue_gen(t, "great movie", " "),
                        ContainsSubstring("label word"));
    prompt::TokenBudget tiny{10, "approx-words"};
    REQUIRE_THROWS_AS(prompt::render_clue_gen(t, "great movie", "Positive", tiny), BudgetError);
}

TEST_CASE("reasoning generation prompt carries input, label and clues") {
    auto t = load_tmpl("sst2", "reason_gen");
    auto r = prompt::render_reason_gen(t, "great movie", "Positive", "snappy, clever");
    CHECK_THAT(r.text, ContainsSubstring("INPUT: great movie"));
    CHECK_THAT(r.text, ContainsSubstring("LABEL: Positive"));
    CHECK_THAT(r.text, ContainsSubstring("CLUES: snappy, clever"));
    CHECK_THAT(r.text, EndsWith("REASONING:"));

    REQUIRE_THROWS_WITH(prompt::render_reason_gen(t, "great movie", "Positive", ""),
                        ContainsSubstring("clues"));
    prompt::TokenBudget tiny{8, "approx-words"};
    REQUIRE_THROWS_AS(
        prompt::render_reason_gen(t, "great movie", "Positive", "long clue list here", tiny),
        BudgetError);
}

TEST_CASE("rendering is a pure function") {
    auto t = load_tmpl("mr", "carp_fewshot");
    auto demos = make_demos(3);
    auto a = prompt::render_few_shot(t, demos, "the same input");
    auto b = prompt::render_few_shot(t, demos, "the same input");
    CHECK(a.text == b.text);
    CHECK(a.token_count == b.token_count);
}

TEST_CASE("demo blocks round-trip through the template field headers") {
    std::mt19937_64 rng(77);
    const std::vector<std::string> words = {"snappy", "clever", "dull",   "bright",
                                            "earnings", "rose",  "sharply", "film"};
    auto random_field = [&](bool multiline) {
        std::string s = words[rng() % words.size()];
        std::size_t extra = rng() % 5;
        for (std::size_t i = 0; i < extra; ++i) {
            if (multiline && rng() % 4 == 0)
                s += "\n- " + words[rng() % words.size()];
            else
                s += " " + words[rng() % words.size()];
        }
        return s;
    };

    for (const std::string dataset : {"sst2", "r8", "agnews"}) {
        for (const std::string name : {"carp_fewshot", "cot_fewshot", "vanilla_fewshot"}) {
            auto t = load_tmpl(dataset, name);
            std::vector<AugmentedDemonstration> demos;
            for (int i = 0; i < 4; ++i) {
                AugmentedDemonstration d;
                d.example_id = "d" + std::to_string(i);
                d.text = random_field(false);
                d.label_word = random_field(false);
                if (t.mode != prompt::PromptMode::vanilla) d.reasoning = random_field(true);
                if (t.mode == prompt::PromptMode::carp) d.clues = random_field(true);
                demos.push_back(std::move(d));
            }
            auto r = prompt::render_few_shot(t, demos, "the test input");
            auto parsed = prompt::parse_demo_blocks(r.text, t.field_headers);
            REQUIRE(parsed.size() == demos.size());
            for (std::size_t i = 0; i < demos.size(); ++i) {
                CHECK(parsed[i].text == demos[i].text);
                CHECK(parsed[i].clues == demos[i].clues);
                CHECK(parsed[i].reasoning == demos[i].reasoning);
                CHECK(parsed[i].label_word == demos[i].label_word);
            }
        }
    }
}

TEST_CASE("every shipped template parses") {
    for (const auto& entry :
         std::filesystem::recursive_directory_iterator(testutil::template_dir())) {
        if (entry.path().extension() != ".tmpl") continue;
        INFO(entry.path().string());
        REQUIRE_NOTHROW(prompt::PromptTemplate::load(entry.path()));
    }
}
