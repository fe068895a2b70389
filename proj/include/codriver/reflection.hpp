#pragma once

// Reinforcement reflection: evaluate decisions, turn mistakes into lessons,
// push lessons and vetted experiences into memory.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "codriver/llm.hpp"
#include "codriver/memory.hpp"
#include "codriver/reasoning.hpp"

namespace codriver {

enum class VerdictLabel { Correct, Incorrect };
enum class EvaluatorMode { GroundTruth, Model };

std::string to_string(VerdictLabel label);
std::string to_string(EvaluatorMode mode);
EvaluatorMode evaluator_mode_from_string(std::string_view s);

struct DecisionRef {
    int episode = 0;
    AgentId agent;
    int step = 0;
};

struct Verdict {
    DecisionRef ref;
    VerdictLabel label = VerdictLabel::Correct;
    double score = 1.0;
    std::string rationale;
    EvaluatorMode source = EvaluatorMode::GroundTruth;
};

struct ReflectionOutput {
    std::string scenario_text;
    std::string corrected_reasoning;
    MetaAction corrected_decision;
    std::string lessons;
};

// What reflection needs from a finished episode.
struct EpisodeLog {
    int episode = 0;
    ScenarioKind kind = ScenarioKind::Highway;
    ActionTable actions;
    std::vector<DecisionRecord> decisions;
    std::vector<CollisionEvent> collisions;
};

inline constexpr int kBlameHorizon = 3;
inline constexpr int kReflectionAttempts = 3;

std::string render_evaluator_prompt(const DecisionRecord& record, const ActionTable& table,
                                    const TemplateSet& templates = TemplateSet::defaults());
std::string render_reflector_prompt(const DecisionRecord& record, const Verdict& verdict, const ActionTable& table,
                                    const TemplateSet& templates = TemplateSet::defaults());

// Last CORRECT / INCORRECT as a whole word.
std::optional<VerdictLabel> parse_verdict(std::string_view text);

Verdict ground_truth_verdict(const DecisionRecord& record, const EpisodeLog& log, int horizon = kBlameHorizon);

Verdict evaluate_decision(const DecisionRecord& record, const EpisodeLog& log, EvaluatorMode mode,
                          TextGen* backend, const TemplateSet& templates = TemplateSet::defaults(),
                          int horizon = kBlameHorizon, const std::string& model = kDefaultModel);

class ReflectionParseFailure : public Error {
public:
    using Error::Error;
};

std::optional<ReflectionOutput> parse_reflection(std::string_view text, const ActionTable& table,
                                                 const std::string& scenario_text);

// Precondition: verdict is INCORRECT. Throws ReflectionParseFailure after the retries.
ReflectionOutput reflect(const DecisionRecord& record, const Verdict& verdict, TextGen& backend,
                         const ActionTable& table, const TemplateSet& templates = TemplateSet::defaults(),
                         const std::string& model = kDefaultModel);

struct ReflectionConfig {
    EvaluatorMode mode = EvaluatorMode::GroundTruth;
    int horizon = kBlameHorizon;
    bool add_experience = true;
    std::string model = kDefaultModel;
};

struct ReflectionPassResult {
    int items_added = 0;
    std::vector<Verdict> verdicts;
    std::vector<ReflectionOutput> reflections;
    std::vector<std::string> incidents;
};

// Evaluator/reflector backends come from the Evaluator and Reflector roles.
ReflectionPassResult run_reflection_pass(const EpisodeLog& log, MemoryStore& store, const ReflectionConfig& config,
                                         const BackendSet* backends,
                                         const TemplateSet& templates = TemplateSet::defaults());

nlohmann::json verdict_to_json(const Verdict& v);
nlohmann::json reflection_to_json(const ReflectionOutput& r);

}  // namespace codriver
