#include "codriver/observe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <optional>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace codriver {

std::string to_string(Relation r) {
    switch (r) {
        case Relation::SameLaneAhead: return "same_lane_ahead";
        case Relation::LeftAhead: return "left_ahead";
        case Relation::RightAhead: return "right_ahead";
        case Relation::Ahead: return "ahead";
        case Relation::Behind: return "behind";
    }
    return "ahead";
}

std::string to_string(Zone z) {
    switch (z) {
        case Zone::None: return "none";
        case Zone::Near: return "near_intersection";
        case Zone::In: return "in_intersection";
    }
    return "none";
}

std::string number_word(int n) {
    static constexpr std::array<const char*, 11> kWords{"zero", "one", "two",   "three", "four", "five",
                                                        "six",  "seven", "eight", "nine",  "ten"};
    if (n >= 0 && n < static_cast<int>(kWords.size())) return kWords[static_cast<std::size_t>(n)];
    return std::to_string(n);
}

Observation observe(const WorldState& world, const AgentId& agent_id, const PerceptionLimits& limits) {
    const Vehicle* self = world.find(agent_id);
    if (self == nullptr) throw Error(fmt::format("unknown agent '{}'", agent_id));
    if (!self->is_ego()) throw Error(fmt::format("'{}' is not an ego agent", agent_id));

    Observation obs;
    obs.agent_id = agent_id;
    obs.kind = world.network.kind;
    obs.lane_count = world.network.lane_count;
    obs.ego.speed = self->speed;
    obs.ego.lane = self->lane;

    if (world.network.kind == ScenarioKind::Highway) {
        obs.ego.lane_position = self->position.x;
        std::array<std::optional<Neighbor>, 3> nearest;
        for (const auto& o : world.vehicles) {
            if (o.id == self->id) continue;
            const double ahead = o.position.x - self->position.x;
            if (ahead <= 0.0 || ahead > limits.highway_radius) continue;
            const int dl = o.lane - self->lane;
            std::size_t slot;
            Relation rel;
            if (dl == 0) {
                slot = 0;
                rel = Relation::SameLaneAhead;
            } else if (dl == -1) {
                slot = 1;
                rel = Relation::LeftAhead;
            } else if (dl == 1) {
                slot = 2;
                rel = Relation::RightAhead;
            } else {
                continue;
            }
            auto& cur = nearest[slot];
            if (!cur || o.position.x < cur->lane_position ||
                (o.position.x == cur->lane_position && natural_less(o.id, cur->id))) {
                Neighbor n;
                n.id = o.id;
                n.relation = rel;
                n.speed = o.speed;
                n.lane_position = o.position.x;
                cur = n;
            }
        }
        for (auto& n : nearest)
            if (n) obs.neighbors.push_back(*n);
        return obs;
    }

    const auto own = distance_to_conflict(*self, world.network);
    obs.ego.distance_to_intersection = own.distance;
    obs.ego.exited = own.exited;
    const double fx = std::cos(self->heading), fy = std::sin(self->heading);
    for (const auto& o : world.vehicles) {
        if (o.id == self->id) continue;
        const double cx = o.position.x - world.network.conflict_center.x;
        const double cy = o.position.y - world.network.conflict_center.y;
        if (std::hypot(cx, cy) > limits.intersection_radius) continue;
        const double rx = o.position.x - self->position.x, ry = o.position.y - self->position.y;
        Neighbor n;
        n.id = o.id;
        n.relation = (rx * fx + ry * fy) >= 0.0 ? Relation::Ahead : Relation::Behind;
        n.speed = o.speed;
        n.gap = std::hypot(rx, ry);
        n.distance_to_conflict = distance_to_conflict(o, world.network).distance;
        if (n.distance_to_conflict < limits.in_zone)
            n.zone = Zone::In;
        else if (n.distance_to_conflict < limits.near_zone)
            n.zone = Zone::Near;
        obs.neighbors.push_back(n);
    }
    std::sort(obs.neighbors.begin(), obs.neighbors.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.gap != b.gap) return a.gap < b.gap;
        return natural_less(a.id, b.id);
    });
    return obs;
}

TemplateSet TemplateSet::defaults() {
    TemplateSet t;
    t.templates_ = {
        {"bullet", "- {item}"},
        {"highway_header",
         "You are driving on a highway with {lane_count} lanes and you are driving on {lane_phrase}. Your current "
         "speed is {speed} meter per second and lane position is {lane_position} meters. These cars are around you:"},
        {"highway_same_lane",
         "{id} is driving in front of you and in the same lane, its speed is {speed} meter per second, and lane "
         "position is {lane_position} meters."},
        {"highway_left_lane",
         "{id} is driving in front of you and on your left lane, its speed is {speed} meter per second, and lane "
         "position is {lane_position} meters."},
        {"highway_right_lane",
         "{id} is driving in front of you and on your right lane, its speed is {speed} meter per second, and lane "
         "position is {lane_position} meters."},
        {"lane_leftmost", "the leftmost lane"},
        {"lane_rightmost", "the rightmost lane"},
        {"lane_middle", "one of the middle lanes"},
        {"intersection_header",
         "You are driving toward the intersection. Your current speed is {speed} meter per second and you are "
         "{distance} meters away from the intersection."},
        {"intersection_exited_header",
         "You have passed the intersection. Your current speed is {speed} meter per second and you are {distance} "
         "meters away from the intersection."},
        {"intersection_ahead",
         "{id} is driving in front of you, its speed is {speed} meter per second and it is {gap} meter away from "
         "you."},
        {"intersection_behind",
         "{id} is driving behind you, its speed is {speed} meter per second and it is {gap} meter away from you."},
        {"intersection_in_zone",
         "{id} is driving in the intersection area (less than 5 meters away), its distance from the intersection is "
         "{distance} meters, and its speed is {speed} meter per second."},
        {"intersection_near_zone",
         "{id} is driving near the intersection (less than 10 meters away), its distance from the intersection is "
         "{distance} meters, and its speed is {speed} meter per second."},
        // Reasoning prompt.
        {"prompt_prefix",
         "You now should act as a skilled driver. You will be given the description of the driving scenario, "
         "available actions, some messages from other agents, some past experiences, and the goal that you need to "
         "achieve. You should follow these basic commonsense rules:\n{rules}\nYou should think step by step and the "
         "response should use the following format:\n- <Your reasoning process>\n- <Your reasoning process>\n- "
         "<Repeat until you have a final decision>\nOnce you have a final decision, you should output it in the "
         "following format:\nFinal Decision: <Your final decision>, <The corresponding action id>\nThe output "
         "decision must be unique and not ambiguous. For example, if you think idle is safe and you want to keep "
         "idle, you can output:\nFinal Decision: idle, 1"},
        {"rules_intersection",
         "You should keep your speed if your distance to the intersection is far.\nYou should be slower if your "
         "distance from intersection is close.\nIf there is no vehicle around the intersection, and you are near "
         "the intersection, you should speed up and quickly pass the intersection."},
        {"rules_highway",
         "You should keep your speed if the lane in front of you is clear.\nYou should only change lanes when the "
         "target lane is clear.\nYou should not drive faster than the speed limit of the road."},
        {"goal_default",
         "Your driving goal is to drive safely and smoothly and you may communicate with other agents to "
         "collaboratively achieve this goal."},
        {"action_list_header", "You can take one of the following actions:"},
        {"action_list_item", "- {phrase}, {id}: {description}"},
        {"shot_actions", "You can take one of the following actions: {actions}"},
        {"no_shots", "No past experiences."},
        {"message_line", "From {sender}: {text}"},
        {"no_messages", "No messages."},
        {"format_reminder",
         "Your previous answer did not contain a usable decision. End your answer with exactly one line of the form "
         "\"Final Decision: <action>, <action id>\" using one of the available actions."},
        {"cue_situation", "Step 1: analyze the current situation around you."},
        {"cue_safety", "Step 2: assess the safety of each available action."},
        {"cue_decision", "Step 3: give your final decision in the required format."},
        // Evaluator and reflector.
        {"evaluator_prefix",
         "Now you should act like a driver's evaluator. Your duty is to evaluate the agent's decision and generate "
         "a reward score. You will be given the description of the driving scenario, the agent's reasoning process, "
         "and final decision. You should follow these basic rules: 1) If you find the agent's action is safe and "
         "reasonable, you should output CORRECT, 2) If you find the agent's action is unsafe or may cause collision, "
         "you should output INCORRECT."},
        {"reflector_prefix",
         "Now, you are a driver with rich driving skills and should reflect certain driving decisions. You will be "
         "given some information, including a description of a driving scenario, the corresponding responses "
         "(driving decisions and analysis result), and the evaluator's evaluation. You need to judge each decision "
         "and analysis logic based on the evaluation. In your final reply, provide the correct response and explain "
         "the reason for each error as well as lessons learned. Finally, give the correct answer just like the "
         "following format:\nCorrected Reasoning: <the corrected reasoning process>\nLessons: <the lessons "
         "learned>\nFinal Decision: <Your final decision>, <The corresponding action id>"},
        // Communication.
        {"communicator_prefix",
         "You now should act like a driver's communicator. Your duty is to generate appropriate messages to "
         "communicate with other agents. You will be given the description of the driving scenario, the action "
         "history, the dialogue history, and the goal that you need to achieve."},
        {"comm_gate_question", "Answer YES or NO: is communication necessary now?"},
        {"comm_compose", "Write one short message to the other agents. Your latest decision is: {decision}."},
        {"action_history_line", "- step {step}: {action}"},
        {"no_actions", "No prior actions."},
        {"dialogue_line", "- step {step}, from {sender}: {text}"},
        {"no_dialogue", "No prior messages."},
    };
    return t;
}

TemplateSet TemplateSet::load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    TemplateSet t = defaults();
    if (!fs::is_directory(dir)) throw Error("template directory not found: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".txt") continue;
        std::string body = read_file(entry.path().string());
        if (!body.empty() && body.back() == '\n') body.pop_back();
        t.templates_[entry.path().stem().string()] = body;
    }
    return t;
}

const std::string& TemplateSet::get(const std::string& key) const {
    auto it = templates_.find(key);
    if (it == templates_.end()) throw Error("missing template: " + key);
    return it->second;
}

SceneText describe(const Observation& obs, const TemplateSet& t) {
    std::vector<std::string> lines;
    auto bullet = [&](const std::string& item) { lines.push_back(render_template(t.get("bullet"), {{"item", item}})); };

    if (obs.kind == ScenarioKind::Highway) {
        std::string lane_phrase = t.get("lane_middle");
        if (obs.ego.lane == 0)
            lane_phrase = t.get("lane_leftmost");
        else if (obs.ego.lane == obs.lane_count - 1)
            lane_phrase = t.get("lane_rightmost");
        lines.push_back(render_template(t.get("highway_header"), {{"lane_count", number_word(obs.lane_count)},
                                                                  {"lane_phrase", lane_phrase},
                                                                  {"speed", format2(obs.ego.speed)},
                                                                  {"lane_position", format2(obs.ego.lane_position)}}));
        for (const auto& n : obs.neighbors) {
            const char* key = n.relation == Relation::SameLaneAhead ? "highway_same_lane"
                              : n.relation == Relation::LeftAhead   ? "highway_left_lane"
                                                                    : "highway_right_lane";
            bullet(render_template(t.get(key), {{"id", n.id},
                                                {"speed", format2(n.speed)},
                                                {"lane_position", format2(n.lane_position)}}));
        }
    } else {
        lines.push_back(render_template(t.get(obs.ego.exited ? "intersection_exited_header" : "intersection_header"),
                                        {{"speed", format2(obs.ego.speed)},
                                         {"distance", format2(obs.ego.distance_to_intersection)}}));
        for (const auto& n : obs.neighbors) {
            const std::map<std::string, std::string> vars{{"id", n.id},
                                                          {"speed", format2(n.speed)},
                                                          {"gap", format2(n.gap)},
                                                          {"distance", format2(n.distance_to_conflict)}};
            bullet(render_template(t.get(n.relation == Relation::Behind ? "intersection_behind" : "intersection_ahead"),
                                   vars));
            if (n.zone == Zone::In) bullet(render_template(t.get("intersection_in_zone"), vars));
            if (n.zone == Zone::Near) bullet(render_template(t.get("intersection_near_zone"), vars));
        }
    }

    SceneText scene;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) scene.text += '\n';
        scene.text += lines[i];
    }
    scene.embedding_query = scene.text;
    return scene;
}

void to_json(nlohmann::json& j, const Observation& obs) {
    nlohmann::json neighbors = nlohmann::json::array();
    for (const auto& n : obs.neighbors) {
        nlohmann::json o{{"id", n.id}, {"relation", to_string(n.relation)}, {"speed", n.speed}};
        if (obs.kind == ScenarioKind::Highway) {
            o["lane_position"] = n.lane_position;
        } else {
            o["gap"] = n.gap;
            o["distance_to_conflict"] = n.distance_to_conflict;
            o["zone"] = to_string(n.zone);
        }
        neighbors.push_back(o);
    }
    j = nlohmann::json{{"agent_id", obs.agent_id}, {"scenario", to_string(obs.kind)}, {"speed", obs.ego.speed},
                       {"lane", obs.ego.lane}, {"neighbors", neighbors}};
    if (obs.kind == ScenarioKind::Highway)
        j["lane_position"] = obs.ego.lane_position;
    else
        j["distance_to_intersection"] = obs.ego.distance_to_intersection;
}

}  // namespace codriver
