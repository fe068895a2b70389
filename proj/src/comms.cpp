#include "codriver/comms.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace codriver {

bool AgentMessage::addressed_to(std::string_view id) const {
    if (id == sender) return false;
    if (broadcast()) return true;
    return std::find(recipients.begin(), recipients.end(), id) != recipients.end();
}

void to_json(nlohmann::json& j, const AgentMessage& m) {
    j = nlohmann::json{{"sender", m.sender}, {"step_sent", m.step_sent}, {"text", m.text}};
    if (m.broadcast())
        j["recipients"] = "broadcast";
    else
        j["recipients"] = m.recipients;
}

MessageBus::MessageBus(std::vector<AgentId> agents) {
    for (const auto& a : agents) add_agent(a);
}

void MessageBus::add_agent(const AgentId& id) {
    std::lock_guard lock(mutex_);
    if (std::find(agents_.begin(), agents_.end(), id) != agents_.end()) return;
    agents_.push_back(id);
    std::sort(agents_.begin(), agents_.end(), NaturalLess{});
}

void MessageBus::begin_step(int step) {
    std::lock_guard lock(mutex_);
    if (step < step_) throw Error(fmt::format("bus step cannot go back from {} to {}", step_, step));
    step_ = step;
}

int MessageBus::current_step() const {
    std::lock_guard lock(mutex_);
    return step_;
}

void MessageBus::post(const AgentMessage& m) {
    std::lock_guard lock(mutex_);
    if (m.step_sent != step_)
        throw Error(fmt::format("stale message from {}: stamped {}, bus at {}", m.sender, m.step_sent, step_));
    if (trim(m.text).empty()) throw ValidationError("empty message text");
    if (std::find(agents_.begin(), agents_.end(), m.sender) == agents_.end())
        throw Error("unknown sender " + m.sender);
    if (std::find(m.recipients.begin(), m.recipients.end(), m.sender) != m.recipients.end())
        throw ValidationError("sender listed as recipient: " + m.sender);
    if (auto it = last_post_step_.find(m.sender); it != last_post_step_.end() && it->second == step_)
        throw Error(fmt::format("{} already sent a message at step {}", m.sender, step_));
    last_post_step_[m.sender] = step_;
    queued_.push_back({m, seq_++});
    transcript_.push_back(m);
}

std::vector<AgentMessage> MessageBus::fetch_inbox(const AgentId& agent_id, int step) {
    std::lock_guard lock(mutex_);
    std::vector<const Queued*> ready;
    std::size_t& cursor = delivered_upto_[agent_id];
    std::size_t next_cursor = cursor;
    for (const auto& q : queued_) {
        if (q.seq < cursor) continue;
        if (q.message.step_sent >= step) continue;
        if (q.message.addressed_to(agent_id)) ready.push_back(&q);
    }
    // Everything sent before `step` is now consumed for this recipient.
    for (const auto& q : queued_)
        if (q.seq >= next_cursor && q.message.step_sent < step) next_cursor = q.seq + 1;
    cursor = next_cursor;
    std::stable_sort(ready.begin(), ready.end(), [](const Queued* a, const Queued* b) {
        if (a->message.step_sent != b->message.step_sent) return a->message.step_sent < b->message.step_sent;
        if (a->message.sender != b->message.sender) return natural_less(a->message.sender, b->message.sender);
        return a->seq < b->seq;
    });
    std::vector<AgentMessage> out;
    out.reserve(ready.size());
    for (const auto* q : ready) out.push_back(q->message);
    return out;
}

std::vector<AgentMessage> MessageBus::transcript() const {
    std::lock_guard lock(mutex_);
    return transcript_;
}

void CommContext::push_action(int s, const MetaAction& action, int limit) {
    action_history.push_back({s, action});
    while (static_cast<int>(action_history.size()) > limit) action_history.pop_front();
}

void CommContext::push_message(const AgentMessage& message, int limit) {
    dialogue_history.push_back(message);
    while (static_cast<int>(dialogue_history.size()) > limit) dialogue_history.pop_front();
}

std::string to_string(GateMode mode) { return mode == GateMode::Model ? "model" : "heuristic"; }

GateMode gate_mode_from_string(std::string_view s) {
    if (iequals(s, "model")) return GateMode::Model;
    if (iequals(s, "heuristic")) return GateMode::Heuristic;
    throw ConfigError(fmt::format("unknown gate mode '{}'", s));
}

bool heuristic_gate(const WorldState& world, const AgentId& agent_id, double d) {
    const Vehicle* self = world.find(agent_id);
    if (self == nullptr || !self->is_ego()) return false;
    for (const auto& other : world.vehicles) {
        if (!other.is_ego() || other.id == agent_id || other.frozen) continue;
        if (world.network.kind == ScenarioKind::Intersection) {
            if (distance_to_conflict(*self, world.network).distance < d &&
                distance_to_conflict(other, world.network).distance < d)
                return true;
        } else {
            if (std::abs(other.position.x - self->position.x) < d && std::abs(other.lane - self->lane) <= 1)
                return true;
        }
    }
    return false;
}

std::string render_comm_prompt(const CommContext& ctx, const TemplateSet& t) {
    std::string out = t.get("communicator_prefix");
    out += "\n\n## Action History\n";
    if (ctx.action_history.empty()) {
        out += t.get("no_actions");
    } else {
        for (std::size_t i = 0; i < ctx.action_history.size(); ++i) {
            if (i) out += '\n';
            const auto& h = ctx.action_history[i];
            out += render_template(t.get("action_history_line"),
                                   {{"step", std::to_string(h.step)}, {"action", to_lower(to_string(h.action.name))}});
        }
    }
    out += "\n\n## Dialogue History\n";
    if (ctx.dialogue_history.empty()) {
        out += t.get("no_dialogue");
    } else {
        for (std::size_t i = 0; i < ctx.dialogue_history.size(); ++i) {
            if (i) out += '\n';
            const auto& m = ctx.dialogue_history[i];
            out += render_template(t.get("dialogue_line"),
                                   {{"step", std::to_string(m.step_sent)}, {"sender", m.sender}, {"text", m.text}});
        }
    }
    out += "\n\n## Scenario Description\n";
    out += ctx.scene.text;
    out += "\n\n## Goal Description\n";
    out += ctx.goal.empty() ? t.get("goal_default") : ctx.goal;
    return out;
}

std::optional<bool> parse_yes_no(std::string_view text) {
    static const std::regex re(R"(\b(YES|NO|Yes|No|yes|no)\b)");
    std::optional<bool> last;
    for (std::regex_iterator<std::string_view::const_iterator> it(text.begin(), text.end(), re), end; it != end;
         ++it)
        last = to_lower((*it)[1].str()) == "yes";
    return last;
}

bool should_communicate(const CommContext& ctx, GateMode mode, const WorldState& world, TextGen* backend,
                        const TemplateSet& t, const std::string& model) {
    if (mode == GateMode::Heuristic) return heuristic_gate(world, ctx.agent_id);
    if (backend == nullptr) throw ConfigError("model gate needs a backend");
    const std::string prompt = render_comm_prompt(ctx, t) + "\n\n" + t.get("comm_gate_question");
    try {
        const auto reply = backend->generate(make_request(RoleTag::Communicator, prompt, model));
        return parse_yes_no(reply.text).value_or(false);
    } catch (const BackendError& e) {
        spdlog::warn("gate for {} at step {} downgraded to silence: {}", ctx.agent_id, ctx.step, e.what());
        return false;
    }
}

std::optional<AgentMessage> compose_message(const CommContext& ctx, TextGen& backend, const TemplateSet& t,
                                            const std::string& model) {
    const std::string prompt = render_comm_prompt(ctx, t) + "\n\n" +
                               render_template(t.get("comm_compose"), {{"decision", ctx.last_decision_text}});
    std::string last_error;
    for (int attempt = 0; attempt < 3; ++attempt) {
        try {
            const auto reply = backend.generate(make_request(RoleTag::Communicator, prompt, model));
            const std::string text = trim(reply.text);
            if (text.empty()) return std::nullopt;
            return AgentMessage{ctx.agent_id, {}, ctx.step, text};
        } catch (const BackendError& e) {
            last_error = e.what();
        }
    }
    spdlog::warn("no message from {} at step {}: {}", ctx.agent_id, ctx.step, last_error);
    return std::nullopt;
}

}  // namespace codriver
