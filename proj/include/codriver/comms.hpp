#pragma once

// Inter-agent negotiation: a gate deciding whether to speak, a message
// composer, and a step-synchronized bus with one-tick delivery latency.

#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "codriver/llm.hpp"
#include "codriver/observe.hpp"
#include "codriver/sim.hpp"

namespace codriver {

struct AgentMessage {
    AgentId sender;
    std::vector<AgentId> recipients;  // empty: broadcast
    int step_sent = 0;
    std::string text;

    bool broadcast() const { return recipients.empty(); }
    bool addressed_to(std::string_view id) const;
    bool operator==(const AgentMessage&) const = default;
};

void to_json(nlohmann::json& j, const AgentMessage& m);

class MessageBus {
public:
    explicit MessageBus(std::vector<AgentId> agents = {});

    void add_agent(const AgentId& id);
    // Starts tick `step`; later posts must carry this stamp.
    void begin_step(int step);
    int current_step() const;

    // Throws on a stale stamp, empty text, self-addressing, unknown sender or a
    // second message from the same sender in one tick.
    void post(const AgentMessage& message);
    // Drains everything sent before `step` to `agent_id`: sent-step, then
    // sender (natural order), then send order.
    std::vector<AgentMessage> fetch_inbox(const AgentId& agent_id, int step);

    std::vector<AgentMessage> transcript() const;  // every posted message, in post order

private:
    struct Queued {
        AgentMessage message;
        std::size_t seq;
    };

    mutable std::mutex mutex_;
    std::vector<AgentId> agents_;
    int step_ = 0;
    std::size_t seq_ = 0;
    std::vector<Queued> queued_;
    std::map<AgentId, std::size_t> delivered_upto_;  // per-recipient cursor into queued_ by seq
    std::map<AgentId, int> last_post_step_;
    std::vector<AgentMessage> transcript_;
};

inline constexpr int kActionHistory = 5;
inline constexpr int kDialogueHistory = 5;

struct HistoryEntry {
    int step = 0;
    MetaAction action;
};

struct CommContext {
    AgentId agent_id;
    int step = 0;
    SceneText scene;
    MetaAction last_decision;
    std::string last_decision_text;  // "decelerate, 2"
    std::deque<HistoryEntry> action_history;  // oldest first, at most N
    std::deque<AgentMessage> dialogue_history;  // oldest first, at most M
    std::string goal;

    void push_action(int step, const MetaAction& action, int limit = kActionHistory);
    void push_message(const AgentMessage& message, int limit = kDialogueHistory);
};

enum class GateMode { Model, Heuristic };

std::string to_string(GateMode mode);
GateMode gate_mode_from_string(std::string_view s);

inline constexpr double kCommDistance = 30.0;

// Deterministic gate: another active ego shares the conflict neighbourhood
// (intersection: both within d of their conflict points; highway: within d
// longitudinally and at most one lane apart).
bool heuristic_gate(const WorldState& world, const AgentId& agent_id, double d = kCommDistance);

std::string render_comm_prompt(const CommContext& ctx, const TemplateSet& templates = TemplateSet::defaults());

// Last YES/NO word in the reply; none means no.
std::optional<bool> parse_yes_no(std::string_view text);

bool should_communicate(const CommContext& ctx, GateMode mode, const WorldState& world, TextGen* backend,
                        const TemplateSet& templates = TemplateSet::defaults(),
                        const std::string& model = kDefaultModel);

// Broadcast message with the full reply text, or nullopt when the backend fails or replies empty.
std::optional<AgentMessage> compose_message(const CommContext& ctx, TextGen& backend,
                                            const TemplateSet& templates = TemplateSet::defaults(),
                                            const std::string& model = kDefaultModel);

}  // namespace codriver
