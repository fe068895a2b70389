#include <deque>

#include <gtest/gtest.h>

#include "codriver/reasoning.hpp"
#include "parser_fixtures.hpp"

using namespace codriver;

namespace {

// Replies from a fixed queue and records every prompt it sees.
class QueueBackend : public TextGen {
public:
    explicit QueueBackend(std::deque<std::string> replies, int failures = 0)
        : replies_(std::move(replies)), failures_(failures) {}
    GenResponse generate(const GenRequest& r) override {
        prompts.push_back(r.prompt);
        if (failures_ > 0) {
            --failures_;
            throw BackendError("down");
        }
        std::string text = replies_.size() > 1 ? replies_.front() : replies_.empty() ? "" : replies_.front();
        if (replies_.size() > 1) replies_.pop_front();
        return {text, BackendKind::Scripted};
    }
    BackendKind kind() const override { return BackendKind::Scripted; }
    std::vector<std::string> prompts;

private:
    std::deque<std::string> replies_;
    int failures_;
};

MemoryStore store_with(int n) {
    MemoryStore s;
    for (int i = 0; i < n; ++i) {
        MemoryFields f;
        f.kind = MemoryKind::Experience;
        f.scenario_text = "veh" + std::to_string(i + 2) + " is driving in front of you near the intersection";
        f.reasoning = "- keep a gap";
        f.decision = MetaAction{MetaActionName::Decelerate, 2};
        s.add_item(f);
    }
    return s;
}

AgentContext context(const MemoryStore* memory, int shots) {
    AgentContext c;
    c.agent_id = "veh1";
    c.step = 4;
    c.kind = ScenarioKind::Intersection;
    c.scene.text = "You are driving toward the intersection.";
    c.scene.embedding_query = c.scene.text;
    c.actions = ActionTable::intersection();
    c.memory = memory;
    c.shots = shots;
    return c;
}

}  // namespace

TEST(Parser, Fixtures) {
    const auto all = fixtures::parser_fixtures();
    ASSERT_GE(all.size(), 12u);
    for (const auto& f : all) {
        const ActionTable table = ActionTable::for_scenario(f.table);
        const auto got = try_parse_decision(f.text, table);
        ASSERT_EQ(got.has_value(), f.expected.has_value()) << f.name;
        if (!got) {
            EXPECT_THROW(parse_decision(f.text, table), ParseFailure) << f.name;
            continue;
        }
        EXPECT_EQ(got->action.name, *f.expected) << f.name;
        EXPECT_EQ(got->id_mismatch, f.id_mismatch) << f.name;
        EXPECT_NE(table.find(got->action.name), nullptr) << f.name;
    }
}

TEST(Parser, StripFinalDecision) {
    EXPECT_EQ(strip_final_decision("- a\n- b Final Decision: idle, 1\nFinal Decision: idle, 1"), "- a\n- b");
}

TEST(Prompt, SectionsInOrderWithShotCount) {
    for (int size : {0, 2, 6}) {
        const MemoryStore store = store_with(size);
        for (int k : {0, 1, 3, 5}) {
            QueueBackend backend({"Final Decision: idle, 1"});
            const DecisionRecord r = decide(context(&store, k), backend);
            ASSERT_EQ(r.prompt.sections.size(), 6u);
            std::size_t pos = 0;
            for (std::size_t i = 0; i < 6; ++i) {
                EXPECT_EQ(r.prompt.sections[i].tag, kSectionOrder[i]);
                const auto at = r.prompt.rendered.find("## " + section_title(kSectionOrder[i]), pos);
                ASSERT_NE(at, std::string::npos);
                pos = at + 1;
            }
            const int expected = std::min(k, size);
            EXPECT_EQ(count_shot_blocks(r.prompt.section(SectionTag::FewShots).text), expected);
            EXPECT_EQ(static_cast<int>(r.shot_ids.size()), expected);
            EXPECT_EQ(backend.prompts.front(), r.prompt.rendered);
        }
    }
}

TEST(Prompt, ShotCarriesDecisionAndMessagesRender) {
    PromptInputs in;
    in.scene.text = "scene";
    in.actions = ActionTable::intersection();
    const MemoryStore store = store_with(1);
    in.shots = store.items();
    in.inbox.push_back({"veh2", {"veh1"}, 3, "I will decelerate at the next step."});
    const Prompt p = build_prompt(in);
    EXPECT_NE(p.section(SectionTag::FewShots).text.find("Final Decision: decelerate, 2"), std::string::npos);
    EXPECT_NE(p.section(SectionTag::Messages).text.find("veh2"), std::string::npos);
    EXPECT_NE(p.section(SectionTag::ActionList).text.find("decelerate"), std::string::npos);
    EXPECT_EQ(p.section(SectionTag::ActionList).text.find("change lane"), std::string::npos);
}

TEST(Reasoning, MultiRoundPromptsContainEarlierRounds) {
    QueueBackend backend({"round one", "round two", "Final Decision: decelerate, 2"});
    ReasoningOptions opt;
    opt.rounds = 3;
    const auto out = run_reasoning("base prompt", backend, opt);
    ASSERT_EQ(out.size(), 3u);
    ASSERT_EQ(backend.prompts.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(backend.prompts[i].rfind("base prompt", 0), 0u);
    EXPECT_NE(backend.prompts[1].find("round one"), std::string::npos);
    EXPECT_NE(backend.prompts[2].find("round one"), std::string::npos);
    EXPECT_NE(backend.prompts[2].find("round two"), std::string::npos);
    EXPECT_EQ(backend.prompts[1].rfind(backend.prompts[0], 0), 0u);
    opt.rounds = 0;
    EXPECT_THROW(run_reasoning("x", backend, opt), ConfigError);
}

TEST(Decide, ParsesScriptedReply) {
    QueueBackend backend({"- clear road\nFinal Decision: idle, 1"});
    const DecisionRecord r = decide(context(nullptr, 0), backend);
    EXPECT_EQ(r.action.name, MetaActionName::Idle);
    EXPECT_FALSE(r.fallback_used);
    EXPECT_EQ(r.attempts, 1);
    EXPECT_EQ(r.reasoning, "- clear road");
    EXPECT_EQ(r.raw_rounds.size(), 1u);
}

TEST(Decide, FallsBackAfterThreeUnparseableReplies) {
    QueueBackend backend({"I think we should be careful."});
    const DecisionRecord r = decide(context(nullptr, 0), backend);
    EXPECT_TRUE(r.fallback_used);
    EXPECT_EQ(r.action.name, MetaActionName::Decelerate);
    EXPECT_EQ(r.attempts, kParseAttempts);
    EXPECT_EQ(backend.prompts.size(), 3u);
    EXPECT_NE(backend.prompts[1], backend.prompts[0]);
    EXPECT_EQ(backend.prompts[1].rfind(backend.prompts[0], 0), 0u);

    AgentContext hw = context(nullptr, 0);
    hw.kind = ScenarioKind::Highway;
    hw.actions = ActionTable::highway();
    QueueBackend prose({"no idea"});
    EXPECT_EQ(decide(hw, prose).action.name, MetaActionName::Idle);
}

TEST(Decide, RecoversOnSecondAttempt) {
    QueueBackend backend({"hmm", "Final Decision: accelerate, 3"});
    const DecisionRecord r = decide(context(nullptr, 0), backend);
    EXPECT_FALSE(r.fallback_used);
    EXPECT_EQ(r.attempts, 2);
    EXPECT_EQ(r.action.name, MetaActionName::Accelerate);
    EXPECT_EQ(r.raw_rounds.size(), 2u);
}

TEST(Decide, BackendFailureIsTotal) {
    QueueBackend backend({"Final Decision: idle, 1"}, 100);
    const DecisionRecord r = decide(context(nullptr, 0), backend);
    EXPECT_TRUE(r.fallback_used);
    EXPECT_EQ(r.action.name, MetaActionName::Decelerate);
    QueueBackend flaky({"Final Decision: idle, 1"}, 2);
    EXPECT_EQ(decide(context(nullptr, 0), flaky).action.name, MetaActionName::Idle);
}

TEST(Decide, RestrictedTableStillLegal) {
    AgentContext c = context(nullptr, 0);
    c.actions = ActionTable::for_scenario(ScenarioKind::Intersection, {MetaActionName::Idle, MetaActionName::Accelerate});
    QueueBackend backend({"Final Decision: decelerate, 2"});
    const DecisionRecord r = decide(c, backend);
    EXPECT_TRUE(r.fallback_used);
    EXPECT_NE(c.actions.find(r.action.name), nullptr);
    EXPECT_THROW(ActionTable::for_scenario(ScenarioKind::Intersection, {MetaActionName::LaneLeft}), ConfigError);
}
