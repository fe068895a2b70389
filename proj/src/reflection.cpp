#include "codriver/reflection.hpp"

#include <algorithm>
#include <regex>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace codriver {

std::string to_string(VerdictLabel label) { return label == VerdictLabel::Correct ? "CORRECT" : "INCORRECT"; }

std::string to_string(EvaluatorMode mode) { return mode == EvaluatorMode::GroundTruth ? "ground_truth" : "model"; }

EvaluatorMode evaluator_mode_from_string(std::string_view s) {
    if (iequals(s, "ground_truth") || iequals(s, "groundtruth")) return EvaluatorMode::GroundTruth;
    if (iequals(s, "model")) return EvaluatorMode::Model;
    throw ConfigError(fmt::format("unknown evaluator mode '{}'", s));
}

namespace {

std::string record_body(const DecisionRecord& r, const ActionTable& table) {
    std::string out = "## Scenario Description\n" + r.scene_text;
    out += "\n\n## Reasoning\n";
    out += r.reasoning.empty() ? std::string("-") : r.reasoning;
    out += "\n\n## Final Decision\n" + decision_text(r.action, table);
    return out;
}

Verdict make_verdict(const DecisionRecord& r, int episode, VerdictLabel label, std::string rationale,
                     EvaluatorMode source) {
    Verdict v;
    v.ref = {episode, r.agent_id, r.step};
    v.label = label;
    v.score = label == VerdictLabel::Correct ? 1.0 : 0.0;
    v.rationale = std::move(rationale);
    v.source = source;
    return v;
}

}  // namespace

std::string render_evaluator_prompt(const DecisionRecord& r, const ActionTable& table, const TemplateSet& t) {
    return t.get("evaluator_prefix") + "\n\n" + record_body(r, table);
}

std::string render_reflector_prompt(const DecisionRecord& r, const Verdict& v, const ActionTable& table,
                                    const TemplateSet& t) {
    std::string out = t.get("reflector_prefix") + "\n\n" + record_body(r, table);
    out += "\n\n## Evaluation\n" + to_string(v.label);
    if (!v.rationale.empty()) out += ": " + v.rationale;
    return out;
}

std::optional<VerdictLabel> parse_verdict(std::string_view text) {
    static const std::regex re(R"(\b(INCORRECT|CORRECT)\b)");
    std::optional<VerdictLabel> last;
    for (std::regex_iterator<std::string_view::const_iterator> it(text.begin(), text.end(), re), end; it != end;
         ++it)
        last = (*it)[1].str() == "CORRECT" ? VerdictLabel::Correct : VerdictLabel::Incorrect;
    return last;
}

Verdict ground_truth_verdict(const DecisionRecord& r, const EpisodeLog& log, int horizon) {
    if (r.fallback_used)
        return make_verdict(r, log.episode, VerdictLabel::Incorrect, "fallback action used", EvaluatorMode::GroundTruth);
    for (const auto& c : log.collisions) {
        if (!c.involves(r.agent_id)) continue;
        const int lag = c.step - r.step;
        if (lag >= 0 && lag < horizon)
            return make_verdict(r, log.episode, VerdictLabel::Incorrect,
                                fmt::format("collision between {} and {} at step {}", c.vehicle_a, c.vehicle_b, c.step),
                                EvaluatorMode::GroundTruth);
    }
    return make_verdict(r, log.episode, VerdictLabel::Correct, "no collision within the horizon",
                        EvaluatorMode::GroundTruth);
}

Verdict evaluate_decision(const DecisionRecord& r, const EpisodeLog& log, EvaluatorMode mode, TextGen* backend,
                          const TemplateSet& t, int horizon, const std::string& model) {
    if (mode == EvaluatorMode::GroundTruth) return ground_truth_verdict(r, log, horizon);
    if (backend == nullptr) throw ConfigError("model evaluator needs a backend");
    const std::string prompt = render_evaluator_prompt(r, log.actions, t);
    std::string last_error;
    for (int i = 0; i < kReflectionAttempts; ++i) {
        try {
            const auto reply = backend->generate(make_request(RoleTag::Evaluator, prompt, model));
            if (auto label = parse_verdict(reply.text))
                return make_verdict(r, log.episode, *label, trim(reply.text), EvaluatorMode::Model);
            return make_verdict(r, log.episode, VerdictLabel::Incorrect, "unparseable evaluation", EvaluatorMode::Model);
        } catch (const BackendError& e) {
            last_error = e.what();
        }
    }
    spdlog::warn("evaluator failed for {} step {} ({}); using ground truth", r.agent_id, r.step, last_error);
    return ground_truth_verdict(r, log, horizon);
}

std::optional<ReflectionOutput> parse_reflection(std::string_view text, const ActionTable& table,
                                                 const std::string& scenario_text) {
    enum class Part { None, Reasoning, Lessons };
    Part part = Part::None;
    std::vector<std::string> reasoning, lessons;
    bool saw_reasoning = false, saw_lessons = false;
    auto starts = [](const std::string& line, std::string_view marker) {
        return to_lower(trim(line)).rfind(to_lower(marker), 0) == 0;
    };
    auto rest = [](const std::string& line, std::string_view marker) {
        const std::string l = trim(line);
        return trim(std::string_view(l).substr(marker.size()));
    };
    for (const auto& line : split_lines(text)) {
        if (starts(line, "Corrected Reasoning:")) {
            part = Part::Reasoning;
            saw_reasoning = true;
            if (auto r = rest(line, "Corrected Reasoning:"); !r.empty()) reasoning.push_back(r);
        } else if (starts(line, "Lessons:")) {
            part = Part::Lessons;
            saw_lessons = true;
            if (auto r = rest(line, "Lessons:"); !r.empty()) lessons.push_back(r);
        } else if (starts(line, "Final Decision:")) {
            part = Part::None;
        } else if (part == Part::Reasoning && !trim(line).empty()) {
            reasoning.push_back(trim(line));
        } else if (part == Part::Lessons && !trim(line).empty()) {
            lessons.push_back(trim(line));
        }
    }
    auto decision = try_parse_decision(text, table);
    if (!saw_reasoning || !saw_lessons || !decision || reasoning.empty() || lessons.empty()) return std::nullopt;
    auto join = [](const std::vector<std::string>& v) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "\n" : "") + v[i];
        return out;
    };
    ReflectionOutput out;
    out.scenario_text = scenario_text;
    out.corrected_reasoning = join(reasoning);
    out.lessons = join(lessons);
    out.corrected_decision = decision->action;
    if (const ActionEntry* e = table.find(out.corrected_decision.name)) out.corrected_decision.declared_id = e->id;
    return out;
}

ReflectionOutput reflect(const DecisionRecord& r, const Verdict& v, TextGen& backend, const ActionTable& table,
                         const TemplateSet& t, const std::string& model) {
    if (v.label != VerdictLabel::Incorrect) throw Error("reflect requires an INCORRECT verdict");
    const std::string prompt = render_reflector_prompt(r, v, table, t);
    std::string last_problem = "no attempt";
    for (int i = 0; i < kReflectionAttempts; ++i) {
        try {
            const auto reply = backend.generate(make_request(RoleTag::Reflector, prompt, model));
            if (auto out = parse_reflection(reply.text, table, r.scene_text)) return *out;
            last_problem = "missing section in reflection";
        } catch (const BackendError& e) {
            last_problem = e.what();
        }
    }
    throw ReflectionParseFailure(
        fmt::format("reflection for {} step {} failed after {} attempts: {}", r.agent_id, r.step, kReflectionAttempts,
                    last_problem));
}

ReflectionPassResult run_reflection_pass(const EpisodeLog& log, MemoryStore& store, const ReflectionConfig& config,
                                         const BackendSet* backends, const TemplateSet& t) {
    ReflectionPassResult result;
    if (log.decisions.empty()) return result;
    TextGen* evaluator = nullptr;
    if (config.mode == EvaluatorMode::Model) {
        if (backends == nullptr) throw ConfigError("model evaluator needs backends");
        evaluator = &backends->for_role(RoleTag::Evaluator);
    }
    bool all_correct = true;
    for (const auto& rec : log.decisions) {
        Verdict v = evaluate_decision(rec, log, config.mode, evaluator, t, config.horizon, config.model);
        if (v.label == VerdictLabel::Incorrect) {
            all_correct = false;
            if (backends == nullptr) {
                result.incidents.push_back(fmt::format("{} step {}: no reflector bound", rec.agent_id, rec.step));
            } else {
                try {
                    ReflectionOutput out =
                        reflect(rec, v, backends->for_role(RoleTag::Reflector), log.actions, t, config.model);
                    MemoryFields f;
                    f.kind = MemoryKind::Reflection;
                    f.scenario_text = out.scenario_text;
                    f.reasoning = out.corrected_reasoning;
                    f.decision = out.corrected_decision;
                    f.lessons = out.lessons;
                    const std::size_t before = store.size();
                    store.add_item(f);
                    result.items_added += static_cast<int>(store.size() - before);
                    result.reflections.push_back(std::move(out));
                } catch (const ReflectionParseFailure& e) {
                    spdlog::warn("{}", e.what());
                    result.incidents.push_back(e.what());
                }
            }
        }
        result.verdicts.push_back(std::move(v));
    }
    if (all_correct && config.add_experience) {
        // The decision taken closest to another vehicle.
        const DecisionRecord* best = nullptr;
        for (const auto& rec : log.decisions) {
            if (rec.reasoning.empty()) continue;
            if (best == nullptr || rec.nearest_distance < best->nearest_distance) best = &rec;
        }
        if (best != nullptr) {
            MemoryFields f;
            f.kind = MemoryKind::Experience;
            f.scenario_text = best->scene_text;
            f.reasoning = best->reasoning;
            MetaAction a = best->action;
            if (const ActionEntry* e = log.actions.find(a.name)) a.declared_id = e->id;
            f.decision = a;
            const std::size_t before = store.size();
            store.add_item(f);
            result.items_added += static_cast<int>(store.size() - before);
        }
    }
    return result;
}

nlohmann::json verdict_to_json(const Verdict& v) {
    return {{"episode", v.ref.episode}, {"agent_id", v.ref.agent}, {"step", v.ref.step}, {"label", to_string(v.label)},
            {"score", v.score},         {"rationale", v.rationale}, {"source", to_string(v.source)}};
}

nlohmann::json reflection_to_json(const ReflectionOutput& r) {
    return {{"scenario_text", r.scenario_text},
            {"corrected_reasoning", r.corrected_reasoning},
            {"corrected_decision", r.corrected_decision},
            {"lessons", r.lessons}};
}

}  // namespace codriver
