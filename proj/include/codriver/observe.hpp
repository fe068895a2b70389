#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "codriver/sim.hpp"

namespace codriver {

enum class Relation { SameLaneAhead, LeftAhead, RightAhead, Ahead, Behind };
// Intersection proximity classes: In (< 5 m from the conflict point), Near (< 10 m).
enum class Zone { None, Near, In };

std::string to_string(Relation r);
std::string to_string(Zone z);

struct Neighbor {
    AgentId id;
    Relation relation = Relation::Ahead;
    double speed = 0.0;
    double lane_position = 0.0;          // highway
    double gap = 0.0;                    // intersection: straight-line distance from the ego
    double distance_to_conflict = 0.0;   // intersection
    Zone zone = Zone::None;

    bool operator==(const Neighbor&) const = default;
};

struct EgoState {
    double speed = 0.0;
    int lane = 0;
    double lane_position = 0.0;              // highway
    double distance_to_intersection = 0.0;   // intersection
    bool exited = false;

    bool operator==(const EgoState&) const = default;
};

struct Observation {
    AgentId agent_id;
    ScenarioKind kind = ScenarioKind::Highway;
    EgoState ego;
    int lane_count = 0;
    std::vector<Neighbor> neighbors;

    bool operator==(const Observation&) const = default;
};

struct SceneText {
    std::string text;
    std::string embedding_query;  // equal to text
};

struct PerceptionLimits {
    double highway_radius = 100.0;
    double intersection_radius = 60.0;
    double in_zone = 5.0;
    double near_zone = 10.0;
};

Observation observe(const WorldState& world, const AgentId& agent_id, const PerceptionLimits& limits = {});

// Plain-text scene templates with {placeholder} substitution.
class TemplateSet {
public:
    static TemplateSet defaults();
    // Files named <key>.txt in dir override the defaults; a single trailing newline is dropped.
    static TemplateSet load_dir(const std::string& dir);

    const std::string& get(const std::string& key) const;
    void set(const std::string& key, std::string value) { templates_[key] = std::move(value); }
    const std::map<std::string, std::string>& all() const { return templates_; }

private:
    std::map<std::string, std::string> templates_;
};

SceneText describe(const Observation& obs, const TemplateSet& templates = TemplateSet::defaults());

// "five", "two", ... for small counts; digits otherwise.
std::string number_word(int n);

void to_json(nlohmann::json& j, const Observation& obs);

}  // namespace codriver
