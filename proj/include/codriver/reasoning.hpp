#pragma once

// Reasoning engine: six-section prompt assembly, single- or multi-round
// model invocation, and decision parsing with a safe fallback.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "codriver/comms.hpp"
#include "codriver/llm.hpp"
#include "codriver/memory.hpp"
#include "codriver/observe.hpp"
#include "codriver/sim.hpp"

namespace codriver {

enum class SectionTag { PrefixInstruction, ScenarioDescription, FewShots, GoalDescription, ActionList, Messages };

std::string to_string(SectionTag tag);      // "prefix_instruction", ...
std::string section_title(SectionTag tag);  // "Prefix Instruction", ...
inline constexpr SectionTag kSectionOrder[] = {SectionTag::PrefixInstruction, SectionTag::ScenarioDescription,
                                                SectionTag::FewShots,          SectionTag::GoalDescription,
                                                SectionTag::ActionList,        SectionTag::Messages};

struct PromptSection {
    SectionTag tag;
    std::string text;
};

struct Prompt {
    std::vector<PromptSection> sections;
    std::string rendered;  // "## <title>\n<text>" blocks joined by blank lines

    const PromptSection& section(SectionTag tag) const;
};

struct ActionEntry {
    int id = 0;
    MetaActionName name = MetaActionName::Idle;
    std::string phrase;
    std::vector<std::string> synonyms;
    std::string description;
};

struct ActionTable {
    std::vector<ActionEntry> entries;

    static ActionTable highway();
    static ActionTable intersection();
    // Scenario default table restricted to `allowed` (empty: unrestricted).
    static ActionTable for_scenario(ScenarioKind kind, const std::vector<MetaActionName>& allowed = {});

    const ActionEntry* find(MetaActionName name) const;
    const ActionEntry* find_id(int id) const;
    // Phrase, synonym or canonical name, case-insensitive.
    const ActionEntry* match(std::string_view phrase) const;
    std::vector<MetaActionName> names() const;
};

// "decelerate, 2" using the table id when the action carries none.
std::string decision_text(const MetaAction& action, const ActionTable& table);

struct PromptInputs {
    SceneText scene;
    std::vector<MemoryItem> shots;
    std::string goal;
    ActionTable actions;
    std::vector<AgentMessage> inbox;
    std::vector<std::string> rules;  // commonsense rules for the prefix
};

Prompt build_prompt(const PromptInputs& inputs, const TemplateSet& templates = TemplateSet::defaults());
std::vector<std::string> default_rules(ScenarioKind kind, const TemplateSet& templates = TemplateSet::defaults());
std::string default_goal(const TemplateSet& templates = TemplateSet::defaults());

// Number of "### Shot" blocks in a rendered few-shot section.
int count_shot_blocks(std::string_view few_shot_text);

struct ParsedDecision {
    MetaAction action;
    bool id_mismatch = false;
};

class ParseFailure : public Error {
public:
    using Error::Error;
};

// Last line with a parseable "Final Decision: <phrase>, <int>" wins. The
// phrase decides the action; a disagreeing id only sets id_mismatch.
ParsedDecision parse_decision(std::string_view text, const ActionTable& table);
std::optional<ParsedDecision> try_parse_decision(std::string_view text, const ActionTable& table);

// Removes "Final Decision:" lines.
std::string strip_final_decision(std::string_view text);

struct ReasoningOptions {
    int rounds = 1;
    int backend_retries = 3;
    std::string model = kDefaultModel;
};

// rounds == 1: one call. rounds > 1: each round appends a cue, then appends
// the reply to the running prompt. Backend errors are retried, then thrown.
std::vector<std::string> run_reasoning(const std::string& prompt, TextGen& backend, const ReasoningOptions& options,
                                       const TemplateSet& templates = TemplateSet::defaults());

struct DecisionRecord {
    AgentId agent_id;
    int step = 0;
    Prompt prompt;
    std::vector<std::string> raw_rounds;  // every round of every attempt, in order
    MetaAction action;
    bool fallback_used = false;
    bool id_mismatch = false;
    int attempts = 0;
    std::int64_t latency_ms = 0;
    std::string scene_text;
    std::vector<std::string> shot_ids;
    std::string reasoning;  // final round with the decision line removed
    double nearest_distance = std::numeric_limits<double>::infinity();
};

struct AgentContext {
    AgentId agent_id;
    int step = 0;
    ScenarioKind kind = ScenarioKind::Highway;
    SceneText scene;
    ActionTable actions;
    std::vector<AgentMessage> inbox;
    const MemoryStore* memory = nullptr;
    int shots = 0;
    std::string goal;  // empty: default goal
    double nearest_distance = std::numeric_limits<double>::infinity();
};

inline constexpr int kParseAttempts = 3;

MetaActionName fallback_action(ScenarioKind kind);

// Total: always returns a legal action.
DecisionRecord decide(const AgentContext& ctx, TextGen& backend, const ReasoningOptions& options = {},
                      const TemplateSet& templates = TemplateSet::defaults());

nlohmann::json decision_to_json(const DecisionRecord& record, bool include_latency);

}  // namespace codriver
