#include "codriver/reasoning.hpp"

#include <algorithm>
#include <chrono>
#include <regex>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace codriver {

std::string to_string(SectionTag tag) {
    switch (tag) {
        case SectionTag::PrefixInstruction: return "prefix_instruction";
        case SectionTag::ScenarioDescription: return "scenario_description";
        case SectionTag::FewShots: return "few_shots";
        case SectionTag::GoalDescription: return "goal_description";
        case SectionTag::ActionList: return "action_list";
        case SectionTag::Messages: return "messages";
    }
    return "messages";
}

std::string section_title(SectionTag tag) {
    switch (tag) {
        case SectionTag::PrefixInstruction: return "Prefix Instruction";
        case SectionTag::ScenarioDescription: return "Scenario Description";
        case SectionTag::FewShots: return "Few Shots";
        case SectionTag::GoalDescription: return "Goal Description";
        case SectionTag::ActionList: return "Action List";
        case SectionTag::Messages: return "Messages";
    }
    return "Messages";
}

const PromptSection& Prompt::section(SectionTag tag) const {
    for (const auto& s : sections)
        if (s.tag == tag) return s;
    throw Error("prompt has no section " + to_string(tag));
}

namespace {

const char* kIdleDesc = "Keep the current speed and the current lane.";
const char* kLeftDesc = "Change lane to the left of the current lane.";
const char* kRightDesc = "Change lane to the right of the current lane.";
const char* kAccelDesc = "Accelerate the vehicle.";
const char* kDecelDesc = "Decelerate the vehicle.";

}  // namespace

ActionTable ActionTable::highway() {
    return {{{0, MetaActionName::LaneLeft, "change lane left", {"lane left"}, kLeftDesc},
             {1, MetaActionName::Idle, "idle", {"keep speed"}, kIdleDesc},
             {2, MetaActionName::LaneRight, "change lane right", {"lane right"}, kRightDesc},
             {3, MetaActionName::Accelerate, "accelerate", {"faster", "speed up"}, kAccelDesc},
             {4, MetaActionName::Decelerate, "decelerate", {"slower", "slow down"}, kDecelDesc}}};
}

ActionTable ActionTable::intersection() {
    return {{{1, MetaActionName::Idle, "idle", {"keep speed"}, kIdleDesc},
             {2, MetaActionName::Decelerate, "decelerate", {"slower", "slow down"}, kDecelDesc},
             {3, MetaActionName::Accelerate, "accelerate", {"faster", "speed up"}, kAccelDesc}}};
}

ActionTable ActionTable::for_scenario(ScenarioKind kind, const std::vector<MetaActionName>& allowed) {
    ActionTable t = kind == ScenarioKind::Highway ? highway() : intersection();
    if (allowed.empty()) return t;
    std::erase_if(t.entries, [&](const ActionEntry& e) {
        return std::find(allowed.begin(), allowed.end(), e.name) == allowed.end();
    });
    if (t.entries.empty()) throw ConfigError("no available actions left in the action table");
    return t;
}

const ActionEntry* ActionTable::find(MetaActionName name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

const ActionEntry* ActionTable::find_id(int id) const {
    for (const auto& e : entries)
        if (e.id == id) return &e;
    return nullptr;
}

const ActionEntry* ActionTable::match(std::string_view phrase) const {
    const std::string p = to_lower(trim(phrase));
    for (const auto& e : entries) {
        if (p == e.phrase) return &e;
        for (const auto& s : e.synonyms)
            if (p == s) return &e;
    }
    if (auto n = meta_action_from_string(p)) return find(*n);
    return nullptr;
}

std::vector<MetaActionName> ActionTable::names() const {
    std::vector<MetaActionName> out;
    for (const auto& e : entries) out.push_back(e.name);
    return out;
}

std::string decision_text(const MetaAction& action, const ActionTable& table) {
    const ActionEntry* e = table.find(action.name);
    const std::string phrase = e != nullptr ? e->phrase : to_lower(to_string(action.name));
    const int id = e != nullptr ? e->id : action.declared_id.value_or(0);
    return fmt::format("{}, {}", phrase, id);
}

std::vector<std::string> default_rules(ScenarioKind kind, const TemplateSet& t) {
    return split_lines(t.get(kind == ScenarioKind::Highway ? "rules_highway" : "rules_intersection"));
}

std::string default_goal(const TemplateSet& t) { return t.get("goal_default"); }

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) out += '\n';
        out += lines[i];
    }
    return out;
}

std::string render_shot(std::size_t index, const MemoryItem& item, const ActionTable& table, const TemplateSet& t) {
    std::vector<std::string> phrases;
    for (const auto& e : table.entries) phrases.push_back(e.phrase);
    std::string actions;
    for (std::size_t i = 0; i < phrases.size(); ++i) actions += (i ? ", " : "") + phrases[i];

    std::vector<std::string> lines{fmt::format("### Shot {}", index + 1), "# Scenario Description", item.scenario_text,
                                   "# Available Actions", render_template(t.get("shot_actions"), {{"actions", actions}}),
                                   "# Reasoning"};
    lines.push_back(item.reasoning.empty() ? std::string("-") : item.reasoning);
    if (!item.lessons.empty()) lines.push_back("Lessons: " + item.lessons);
    if (item.decision) {
        const ActionEntry* e = table.find(item.decision->name);
        const std::string phrase = e != nullptr ? e->phrase : to_lower(to_string(item.decision->name));
        const int id = e != nullptr ? e->id : item.decision->declared_id.value_or(0);
        lines.push_back(fmt::format("Final Decision: {}, {}", phrase, id));
    }
    return join_lines(lines);
}

}  // namespace

Prompt build_prompt(const PromptInputs& in, const TemplateSet& t) {
    Prompt p;
    std::vector<std::string> rule_lines;
    for (const auto& r : in.rules) rule_lines.push_back(render_template(t.get("bullet"), {{"item", r}}));
    p.sections.push_back({SectionTag::PrefixInstruction,
                          render_template(t.get("prompt_prefix"), {{"rules", join_lines(rule_lines)}})});
    p.sections.push_back({SectionTag::ScenarioDescription, in.scene.text});

    std::string shots;
    if (in.shots.empty()) {
        shots = t.get("no_shots");
    } else {
        for (std::size_t i = 0; i < in.shots.size(); ++i) {
            if (i) shots += "\n\n";
            shots += render_shot(i, in.shots[i], in.actions, t);
        }
    }
    p.sections.push_back({SectionTag::FewShots, shots});
    p.sections.push_back({SectionTag::GoalDescription, in.goal.empty() ? default_goal(t) : in.goal});

    std::vector<std::string> action_lines{t.get("action_list_header")};
    for (const auto& e : in.actions.entries)
        action_lines.push_back(render_template(
            t.get("action_list_item"),
            {{"phrase", e.phrase}, {"id", std::to_string(e.id)}, {"name", to_string(e.name)}, {"description", e.description}}));
    p.sections.push_back({SectionTag::ActionList, join_lines(action_lines)});

    std::vector<std::string> msgs;
    for (const auto& m : in.inbox)
        msgs.push_back(render_template(t.get("message_line"), {{"sender", m.sender}, {"text", m.text}}));
    p.sections.push_back({SectionTag::Messages, msgs.empty() ? t.get("no_messages") : join_lines(msgs)});

    for (std::size_t i = 0; i < p.sections.size(); ++i) {
        if (i) p.rendered += "\n\n";
        p.rendered += "## " + section_title(p.sections[i].tag) + "\n" + p.sections[i].text;
    }
    return p;
}

int count_shot_blocks(std::string_view text) {
    int n = 0;
    for (const auto& line : split_lines(text))
        if (line.rfind("### Shot ", 0) == 0) ++n;
    return n;
}

std::optional<ParsedDecision> try_parse_decision(std::string_view text, const ActionTable& table) {
    static const std::regex re(R"(final decision:\s*([a-z_][a-z_ ]*?)\s*,\s*(-?\d+))", std::regex::icase);
    std::optional<ParsedDecision> last;
    for (const auto& line : split_lines(text)) {
        std::optional<ParsedDecision> line_last;
        for (std::sregex_iterator it(line.begin(), line.end(), re), end; it != end; ++it) {
            const ActionEntry* e = table.match((*it)[1].str());
            if (e == nullptr) continue;
            ParsedDecision d;
            d.action.name = e->name;
            d.action.declared_id = std::stoi((*it)[2].str());
            d.id_mismatch = *d.action.declared_id != e->id;
            line_last = d;
        }
        if (line_last) last = line_last;
    }
    return last;
}

ParsedDecision parse_decision(std::string_view text, const ActionTable& table) {
    auto d = try_parse_decision(text, table);
    if (!d) throw ParseFailure("no parseable final decision");
    if (d->id_mismatch) {
        const ActionEntry* e = table.find(d->action.name);
        spdlog::warn("decision id {} does not match '{}' (id {}); using the name", *d->action.declared_id, e->phrase,
                     e->id);
    }
    return *d;
}

std::string strip_final_decision(std::string_view text) {
    static const std::regex re(R"(\s*final decision:.*$)", std::regex::icase);
    std::vector<std::string> kept;
    for (const auto& line : split_lines(text)) {
        std::string l = std::regex_replace(line, re, "");
        if (!trim(l).empty()) kept.push_back(l);
    }
    return join_lines(kept);
}

namespace {

std::string call_with_retries(TextGen& backend, const GenRequest& request, int retries) {
    std::string last_error;
    for (int i = 0; i < std::max(1, retries); ++i) {
        try {
            return backend.generate(request).text;
        } catch (const BackendError& e) {
            last_error = e.what();
        }
    }
    throw BackendError(fmt::format("backend failed {} times: {}", std::max(1, retries), last_error));
}

}  // namespace

std::vector<std::string> run_reasoning(const std::string& prompt, TextGen& backend, const ReasoningOptions& options,
                                       const TemplateSet& t) {
    if (options.rounds < 1) throw ConfigError("reasoning rounds must be >= 1");
    std::vector<std::string> outputs;
    if (options.rounds == 1) {
        outputs.push_back(
            call_with_retries(backend, make_request(RoleTag::Driver, prompt, options.model), options.backend_retries));
        return outputs;
    }
    const std::vector<std::string> cues{t.get("cue_situation"), t.get("cue_safety"), t.get("cue_decision")};
    std::string running = prompt;
    for (int i = 0; i < options.rounds; ++i) {
        const std::string& cue = cues[std::min<std::size_t>(static_cast<std::size_t>(i), cues.size() - 1)];
        running += "\n\n" + cue;
        std::string out =
            call_with_retries(backend, make_request(RoleTag::Driver, running, options.model), options.backend_retries);
        running += "\n" + out;
        outputs.push_back(std::move(out));
    }
    return outputs;
}

MetaActionName fallback_action(ScenarioKind kind) {
    return kind == ScenarioKind::Intersection ? MetaActionName::Decelerate : MetaActionName::Idle;
}

DecisionRecord decide(const AgentContext& ctx, TextGen& backend, const ReasoningOptions& options,
                      const TemplateSet& t) {
    const auto start = std::chrono::steady_clock::now();
    DecisionRecord rec;
    rec.agent_id = ctx.agent_id;
    rec.step = ctx.step;
    rec.scene_text = ctx.scene.text;
    rec.nearest_distance = ctx.nearest_distance;

    PromptInputs in;
    in.scene = ctx.scene;
    in.goal = ctx.goal;
    in.actions = ctx.actions;
    in.inbox = ctx.inbox;
    in.rules = default_rules(ctx.kind, t);
    if (ctx.memory != nullptr) {
        for (auto& r : ctx.memory->commonsense_rules()) in.rules.push_back(r);
        in.shots = ctx.memory->recall(ctx.scene.embedding_query, ctx.shots);
    }
    for (const auto& s : in.shots) rec.shot_ids.push_back(s.id);
    rec.prompt = build_prompt(in, t);

    std::string prompt_text = rec.prompt.rendered;
    bool decided = false;
    for (int attempt = 1; attempt <= kParseAttempts && !decided; ++attempt) {
        rec.attempts = attempt;
        std::vector<std::string> rounds;
        try {
            rounds = run_reasoning(prompt_text, backend, options, t);
        } catch (const BackendError& e) {
            spdlog::warn("{} step {}: {}", ctx.agent_id, ctx.step, e.what());
            break;
        }
        rec.raw_rounds.insert(rec.raw_rounds.end(), rounds.begin(), rounds.end());
        if (auto d = try_parse_decision(rounds.back(), ctx.actions)) {
            rec.action = d->action;
            rec.id_mismatch = d->id_mismatch;
            rec.reasoning = strip_final_decision(rounds.back());
            decided = true;
        } else {
            prompt_text = rec.prompt.rendered + "\n\n" + t.get("format_reminder");
        }
    }
    if (!decided) {
        const MetaActionName fb = ctx.actions.find(fallback_action(ctx.kind)) != nullptr
                                      ? fallback_action(ctx.kind)
                                      : ctx.actions.entries.front().name;
        rec.action = MetaAction{fb, ctx.actions.find(fb)->id};
        rec.fallback_used = true;
    }
    rec.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

nlohmann::json decision_to_json(const DecisionRecord& r, bool include_latency) {
    nlohmann::json sections = nlohmann::json::array();
    for (const auto& s : r.prompt.sections) sections.push_back(to_string(s.tag));
    nlohmann::json j{{"agent_id", r.agent_id},
                     {"step", r.step},
                     {"prompt", r.prompt.rendered},
                     {"sections", sections},
                     {"raw_rounds", r.raw_rounds},
                     {"action", r.action},
                     {"fallback_used", r.fallback_used},
                     {"id_mismatch", r.id_mismatch},
                     {"attempts", r.attempts},
                     {"shot_ids", r.shot_ids},
                     {"scene", r.scene_text},
                     {"reasoning", r.reasoning}};
    if (std::isfinite(r.nearest_distance))
        j["nearest_distance"] = r.nearest_distance;
    else
        j["nearest_distance"] = nullptr;
    if (include_latency) j["latency_ms"] = r.latency_ms;
    return j;
}

}  // namespace codriver
