#include <gtest/gtest.h>

#include "codriver/reflection.hpp"

using namespace codriver;

namespace {

class FixedBackend : public TextGen {
public:
    explicit FixedBackend(std::string text, int failures = 0) : text_(std::move(text)), failures_(failures) {}
    GenResponse generate(const GenRequest& r) override {
        prompts.push_back(r.prompt);
        roles.push_back(r.role);
        if (failures_ > 0) {
            --failures_;
            throw BackendError("down");
        }
        return {text_, BackendKind::Scripted};
    }
    BackendKind kind() const override { return BackendKind::Scripted; }
    std::vector<std::string> prompts;
    std::vector<RoleTag> roles;

private:
    std::string text_;
    int failures_;
};

const char* kReflection =
    "Corrected Reasoning: veh2 is in the intersection area.\n- I should yield.\n"
    "Lessons: Yield when another car is in the intersection.\nFinal Decision: decelerate, 2";

DecisionRecord record(std::string agent, int step, double nearest = 50.0) {
    DecisionRecord r;
    r.agent_id = std::move(agent);
    r.step = step;
    r.action = MetaAction{MetaActionName::Accelerate, 3};
    r.scene_text = "scene of " + r.agent_id + " at step " + std::to_string(step);
    r.reasoning = "- go";
    r.raw_rounds = {"- go\nFinal Decision: accelerate, 3"};
    r.nearest_distance = nearest;
    return r;
}

EpisodeLog episode(std::vector<CollisionEvent> collisions = {}) {
    EpisodeLog log;
    log.kind = ScenarioKind::Intersection;
    log.actions = ActionTable::intersection();
    for (int s = 0; s < 10; ++s) {
        log.decisions.push_back(record("veh1", s, 40.0 - s));
        log.decisions.push_back(record("veh2", s, 60.0));
    }
    log.collisions = std::move(collisions);
    return log;
}

}  // namespace

TEST(Verdict, HorizonCoversThreeTicksEndingAtTheCollision) {
    const EpisodeLog log = episode({{7, "veh1", "veh5"}});
    for (int step = 0; step < 10; ++step) {
        const bool blamed = step >= 5 && step <= 7;
        EXPECT_EQ(ground_truth_verdict(record("veh1", step), log).label,
                  blamed ? VerdictLabel::Incorrect : VerdictLabel::Correct)
            << step;
        EXPECT_EQ(ground_truth_verdict(record("veh2", step), log).label, VerdictLabel::Correct);
    }
    EXPECT_EQ(ground_truth_verdict(record("veh1", 4), log, 4).label, VerdictLabel::Incorrect);
}

TEST(Verdict, FallbackIsIncorrect) {
    DecisionRecord r = record("veh1", 2);
    r.fallback_used = true;
    const Verdict v = ground_truth_verdict(r, episode());
    EXPECT_EQ(v.label, VerdictLabel::Incorrect);
    EXPECT_EQ(v.score, 0.0);
}

TEST(Verdict, CollisionFreeEpisodeIsAllCorrect) {
    const EpisodeLog log = episode();
    for (const auto& r : log.decisions) EXPECT_EQ(ground_truth_verdict(r, log).label, VerdictLabel::Correct);
}

TEST(Verdict, ModelModeUsesLastWholeWord) {
    EXPECT_EQ(parse_verdict("you should output INCORRECT because ... INCORRECT"), VerdictLabel::Incorrect);
    EXPECT_EQ(parse_verdict("INCORRECT at first, but CORRECT"), VerdictLabel::Correct);
    EXPECT_FALSE(parse_verdict("INCORRECTLY correct").has_value());
    const EpisodeLog log = episode();
    FixedBackend b("I think the action is CORRECT.");
    const Verdict v = evaluate_decision(log.decisions[0], log, EvaluatorMode::Model, &b);
    EXPECT_EQ(v.label, VerdictLabel::Correct);
    EXPECT_EQ(v.source, EvaluatorMode::Model);
    EXPECT_EQ(b.roles.front(), RoleTag::Evaluator);
    EXPECT_NE(b.prompts.front().find("driver's evaluator"), std::string::npos);
    EXPECT_NE(b.prompts.front().find("accelerate, 3"), std::string::npos);
    FixedBackend prose("hard to say");
    const Verdict u = evaluate_decision(log.decisions[0], log, EvaluatorMode::Model, &prose);
    EXPECT_EQ(u.label, VerdictLabel::Incorrect);
    EXPECT_EQ(u.rationale, "unparseable evaluation");
    EXPECT_THROW(evaluate_decision(log.decisions[0], log, EvaluatorMode::Model, nullptr), ConfigError);
}

TEST(Reflect, ParsesSections) {
    const auto out = parse_reflection(kReflection, ActionTable::intersection(), "the scene");
    ASSERT_TRUE(out.has_value());
    EXPECT_EQ(out->scenario_text, "the scene");
    EXPECT_EQ(out->corrected_reasoning, "veh2 is in the intersection area.\n- I should yield.");
    EXPECT_EQ(out->lessons, "Yield when another car is in the intersection.");
    EXPECT_EQ(out->corrected_decision, (MetaAction{MetaActionName::Decelerate, 2}));
    EXPECT_FALSE(parse_reflection("Corrected Reasoning: x\nFinal Decision: idle, 1", ActionTable::intersection(), "s"));
    EXPECT_FALSE(parse_reflection("Corrected Reasoning: x\nLessons: y", ActionTable::intersection(), "s"));
    EXPECT_FALSE(parse_reflection("Lessons: y\nFinal Decision: idle, 1", ActionTable::intersection(), "s"));
}

TEST(Reflect, FailsAfterThreeAttempts) {
    Verdict v;
    v.label = VerdictLabel::Incorrect;
    FixedBackend bad("no structure here");
    EXPECT_THROW(reflect(record("veh1", 1), v, bad, ActionTable::intersection()), ReflectionParseFailure);
    EXPECT_EQ(bad.prompts.size(), static_cast<std::size_t>(kReflectionAttempts));
    EXPECT_EQ(bad.roles.front(), RoleTag::Reflector);
    FixedBackend flaky(kReflection, 2);
    EXPECT_EQ(reflect(record("veh1", 1), v, flaky, ActionTable::intersection()).lessons,
              "Yield when another car is in the intersection.");
    Verdict ok;
    EXPECT_THROW(reflect(record("veh1", 1), ok, flaky, ActionTable::intersection()), Error);
}

TEST(Pass, MistakesBecomeReflections) {
    auto reflector = std::make_shared<FixedBackend>(kReflection);
    BackendSet set(reflector);
    MemoryStore store;
    const EpisodeLog log = episode({{7, "veh1", "veh5"}});
    const auto result = run_reflection_pass(log, store, {}, &set);
    EXPECT_EQ(result.reflections.size(), 3u);
    EXPECT_EQ(result.items_added, 3);
    EXPECT_EQ(result.verdicts.size(), log.decisions.size());
    ASSERT_EQ(store.size(), 3u);
    for (const auto& it : store.items()) {
        EXPECT_EQ(it.kind, MemoryKind::Reflection);
        EXPECT_EQ(it.lessons, "Yield when another car is in the intersection.");
        EXPECT_EQ(it.scenario_text.rfind("scene of veh1", 0), 0u);
    }
}

TEST(Pass, CleanEpisodeAddsClosestExperience) {
    MemoryStore store;
    const auto result = run_reflection_pass(episode(), store, {}, nullptr);
    EXPECT_EQ(result.items_added, 1);
    ASSERT_EQ(store.size(), 1u);
    const MemoryItem& it = store.items().front();
    EXPECT_EQ(it.kind, MemoryKind::Experience);
    EXPECT_EQ(it.scenario_text, "scene of veh1 at step 9");
    EXPECT_EQ(it.decision, (MetaAction{MetaActionName::Accelerate, 3}));
    ReflectionConfig off;
    off.add_experience = false;
    MemoryStore none;
    EXPECT_EQ(run_reflection_pass(episode(), none, off, nullptr).items_added, 0);
}

TEST(Pass, ReflectorFailureIsAnIncident) {
    auto bad = std::make_shared<FixedBackend>("nothing useful");
    BackendSet set(bad);
    MemoryStore store;
    const auto result = run_reflection_pass(episode({{2, "veh2", "veh9"}}), store, {}, &set);
    EXPECT_EQ(result.items_added, 0);
    EXPECT_EQ(result.incidents.size(), 3u);
    EXPECT_TRUE(store.empty());
}
