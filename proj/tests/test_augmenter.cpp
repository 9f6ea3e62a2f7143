#include <catch2/catch_amalgamated.hpp>

#include "carp/augmenter.hpp"
#include "testutil.hpp"

using namespace carp;
using Catch::Matchers::ContainsSubstring;
using testutil::TempDir;

namespace {

prompt::PromptTemplate load_tmpl(const std::string& dataset, const std::string& name) {
    return prompt::PromptTemplate::load(testutil::template_dir() / dataset / (name + ".tmpl"));
}

gateway::RetryPolicy fast_retry() {
    gateway::RetryPolicy p;
    p.base_delay_ms = 1;
    p.sleeper = [](std::chrono::milliseconds) {};
    return p;
}

std::vector<corpus::Example> numbered_examples(int n, int offset = 0) {
    std::vector<corpus::Example> out;
    for (int i = 0; i < n; ++i)
        out.push_back({"e" + std::to_string(offset + i), "text " + std::to_string(offset + i),
                       (offset + i) % 2});
    return out;
}

}  // namespace

TEST_CASE("clue generation flows the model response through verbatim") {
    auto clue_tmpl = load_tmpl("sst2", "clue_gen");
    auto verbalizer = corpus::build_verbalizer(testutil::binary_space(),
                                               corpus::VerbalizerStrategy::annotation);
    corpus::Example example{
        "sst2-demo",
        "johnnie to and wai ka fai are sure to find an enthusiastic audience among american "
        "action adventure buffs, but the film 's interests may be too narrow to attract "
        "crossover viewers",
        0};
    const std::string clue_text =
        "- Positive Clues: enthusiastic, action, adventure.\n- Negative Clues: narrow, crossover";

    gateway::MockProvider mock;
    gateway::CompletionRequest req;
    req.prompt = prompt::render_clue_gen(clue_tmpl, example.text, "Negative").text;
    mock.add_fixture_text(req, clue_text);

    gateway::Gateway gw(mock, nullptr, fast_retry());
    CHECK(augment::generate_clues(example, verbalizer, gw, clue_tmpl) == clue_text);
}

TEST_CASE("reasoning generation conditions on input, label and clues") {
    auto reason_tmpl = load_tmpl("r8", "reason_gen");
    auto space = corpus::LabelSpace::from_names(
        {"Money/Foreign Exchange", "Acquisitions", "Trade", "Interest Rates", "Shipping",
         "Earnings and Earnings Forecasts", "Grain", "Crude Oil"});
    auto verbalizer = corpus::build_verbalizer(space, corpus::VerbalizerStrategy::annotation);
    corpus::Example example{"r8-demo",
                            "moore sell globe unit moore resources inc said agreed principle sell "
                            "globe inc unit cyprus minerals co undisclosed terms",
                            1};
    const std::string clues = "- Acquisition (agreed, sell, unit, sale)\n- Companies (Moore "
                              "Resources Inc, Globe Inc, Cyprus Minerals Co)";
    const std::string reasoning =
        "The input mentions an acquisition agreement between Moore Resources Inc and Globe Inc, "
        "suggesting an Acquisitions topic.";

    gateway::MockProvider mock;
    gateway::CompletionRequest req;
    req.prompt =
        prompt::render_reason_gen(reason_tmpl, example.text, "Acquisitions", clues).text;
    mock.add_fixture_text(req, reasoning);

    gateway::Gateway gw(mock, nullptr, fast_retry());
    auto out = augment::generate_reasoning(example, clues, verbalizer, gw, reason_tmpl);
    CHECK_THAT(out, ContainsSubstring("acquisition agreement between Moore Resources Inc"));

    REQUIRE_THROWS_WITH(
        augment::generate_reasoning(example, "", verbalizer, gw, reason_tmpl),
        ContainsSubstring("clues"));
}

TEST_CASE("whitespace-only generations become invalid records after one retry") {
    auto clue_tmpl = load_tmpl("sst2", "clue_gen");
    auto verbalizer = corpus::build_verbalizer(testutil::binary_space(),
                                               corpus::VerbalizerStrategy::annotation);
    corpus::Example example{"e0", "some text", 1};

    gateway::MockProvider mock;
    gateway::CompletionRequest req;
    req.prompt = prompt::render_clue_gen(clue_tmpl, example.text, "Positive").text;
    req.run_index = 0;
    mock.add_fixture_text(req, "   \n ");
    req.run_index = 1;
    mock.add_fixture_text(req, "\t");

    gateway::Gateway gw(mock, nullptr, fast_retry());
    CHECK(augment::generate_clues(example, verbalizer, gw, clue_tmpl).empty());
    CHECK(mock.calls() == 2);  // the one retry happened
}

TEST_CASE("augment_corpus generates, skips and flags invalid records") {
    TempDir dir;
    auto clue_tmpl = load_tmpl("sst2", "clue_gen");
    auto reason_tmpl = load_tmpl("sst2", "reason_gen");
    auto verbalizer = corpus::build_verbalizer(testutil::binary_space(),
                                               corpus::VerbalizerStrategy::annotation);
    auto train = numbered_examples(10);

    gateway::MockFallback fixed{gateway::MockFallback::Kind::fixed, "generated evidence",
                                "SENTIMENT"};
    gateway::MockProvider mock("mock", fixed);

    // Two chosen examples get whitespace clues on both attempts -> invalid.
    for (const auto& victim : {train[2], train[7]}) {
        gateway::CompletionRequest req;
        req.prompt = prompt::render_clue_gen(clue_tmpl, victim.text,
                                             verbalizer.word(victim.label_id))
                         .text;
        for (int run : {0, 1}) {
            req.run_index = run;
            mock.add_fixture_text(req, "  ");
        }
    }

    gateway::Gateway gw(mock, nullptr, fast_retry());
    auto store = augment::DemoStore::open(dir.file("demos.jsonl"));
    auto summary = augment::augment_corpus(train, verbalizer, gw, store, augment::Mode::carp,
                                           &clue_tmpl, reason_tmpl);
    CHECK(summary.generated == 8);
    CHECK(summary.skipped == 0);
    CHECK(summary.invalid == 2);
    CHECK(store.size() == 10);
    CHECK_FALSE(store.find("e2")->valid);
    CHECK(store.find("e3")->valid);
    CHECK(store.valid_ids(prompt::PromptMode::carp).size() == 8);

    SECTION("rerun skips everything") {
        auto before = mock.calls();
        auto again = augment::augment_corpus(train, verbalizer, gw, store, augment::Mode::carp,
                                             &clue_tmpl, reason_tmpl);
        CHECK(again.generated == 0);
        CHECK(again.skipped == 10);
        CHECK(mock.calls() == before);
    }

    SECTION("extending the corpus only generates the new ids") {
        auto before = mock.calls();
        auto extended = train;
        auto extra = numbered_examples(3, 100);
        extended.insert(extended.end(), extra.begin(), extra.end());
        auto summary2 = augment::augment_corpus(extended, verbalizer, gw, store,
                                                augment::Mode::carp, &clue_tmpl, reason_tmpl);
        CHECK(summary2.skipped == 10);
        CHECK(summary2.generated == 3);
        CHECK(mock.calls() - before == 6);  // clue + reasoning per new id
        CHECK(store.size() == 13);
    }

    SECTION("store reloads from disk with identical content") {
        auto reloaded = augment::DemoStore::open(dir.file("demos.jsonl"));
        REQUIRE(reloaded.size() == store.size());
        for (const auto& rec : store.records()) {
            const auto* r = reloaded.find(rec.example_id);
            REQUIRE(r != nullptr);
            CHECK(r->clues == rec.clues);
            CHECK(r->reasoning == rec.reasoning);
            CHECK(r->valid == rec.valid);
        }
    }
}

TEST_CASE("cot mode produces reasoning-only records") {
    TempDir dir;
    auto cot_tmpl = load_tmpl("sst2", "cot_reason_gen");
    auto verbalizer = corpus::build_verbalizer(testutil::binary_space(),
                                               corpus::VerbalizerStrategy::annotation);
    auto train = numbered_examples(4);

    gateway::MockFallback fixed{gateway::MockFallback::Kind::fixed, "step by step", "SENTIMENT"};
    gateway::MockProvider mock("mock", fixed);
    gateway::Gateway gw(mock, nullptr, fast_retry());

    auto store = augment::DemoStore::open(dir.file("cot.jsonl"));
    auto summary = augment::augment_corpus(train, verbalizer, gw, store, augment::Mode::cot,
                                           nullptr, cot_tmpl);
    CHECK(summary.generated == 4);
    CHECK(mock.calls() == 4);  // one reasoning call per example, no clue stage
    for (const auto& rec : store.records()) {
        CHECK(rec.clues.empty());
        CHECK(rec.reasoning == "step by step");
        CHECK(rec.valid);
    }
    CHECK(store.valid_ids(prompt::PromptMode::cot).size() == 4);
    CHECK(store.valid_ids(prompt::PromptMode::carp).empty());  // no clues to splice
}

TEST_CASE("compaction rewrites one line per id, keeping the latest record") {
    TempDir dir;
    auto path = dir.file("demos.jsonl");
    {
        auto store = augment::DemoStore::open(path);
        store.append({"a", "text", "old clues", "old reasoning", "Positive", true});
        store.append({"b", "text", "c", "r", "Negative", true});
        store.append({"a", "text", "new clues", "new reasoning", "Positive", true});
    }
    // Raw file holds the append history.
    auto raw = util::read_file(path);
    CHECK(std::count(raw.begin(), raw.end(), '\n') == 3);

    auto store = augment::DemoStore::open(path);
    REQUIRE(store.size() == 2);
    CHECK(store.find("a")->clues == "new clues");
    store.compact();
    auto compacted = util::read_file(path);
    CHECK(std::count(compacted.begin(), compacted.end(), '\n') == 2);
    auto reloaded = augment::DemoStore::open(path);
    CHECK(reloaded.find("a")->clues == "new clues");
}

TEST_CASE("parallel augmentation produces the same store as sequential") {
    TempDir dir;
    auto clue_tmpl = load_tmpl("sst2", "clue_gen");
    auto reason_tmpl = load_tmpl("sst2", "reason_gen");
    auto verbalizer = corpus::build_verbalizer(testutil::binary_space(),
                                               corpus::VerbalizerStrategy::annotation);
    auto train = numbered_examples(12);
    gateway::MockFallback fixed{gateway::MockFallback::Kind::fixed, "evidence", "SENTIMENT"};

    gateway::MockProvider seq_mock("mock", fixed);
    gateway::Gateway seq_gw(seq_mock, nullptr, fast_retry());
    auto seq_store = augment::DemoStore::open(dir.file("seq.jsonl"));
    augment::augment_corpus(train, verbalizer, seq_gw, seq_store, augment::Mode::carp, &clue_tmpl,
                            reason_tmpl, {}, {}, 1);

    gateway::MockProvider par_mock("mock", fixed);
    gateway::Gateway par_gw(par_mock, nullptr, fast_retry(), 4);
    auto par_store = augment::DemoStore::open(dir.file("par.jsonl"));
    augment::augment_corpus(train, verbalizer, par_gw, par_store, augment::Mode::carp, &clue_tmpl,
                            reason_tmpl, {}, {}, 4);

    CHECK(util::read_file(dir.file("seq.jsonl")) == util::read_file(dir.file("par.jsonl")));
}
