#pragma once

// Discrete-time kinematic driving environment: highway and uncontrolled
// four-way intersection, ego agents driven by meta actions, background
// traffic driven by IDM. One decision tick is 1 s, integrated in
// fixed physics sub-steps.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "codriver/util.hpp"

namespace codriver {

using AgentId = std::string;

enum class ScenarioKind { Highway, Intersection };
enum class VehicleKind { EgoAgent, Background };
enum class RouteIntent { Straight, TurnLeft, TurnRight };
// Intersection approaches, named by the side vehicles enter from.
enum class Approach { South = 0, West = 1, North = 2, East = 3 };

enum class MetaActionName { Idle, LaneLeft, LaneRight, Accelerate, Decelerate };

struct MetaAction {
    MetaActionName name = MetaActionName::Idle;
    std::optional<int> declared_id;

    bool operator==(const MetaAction&) const = default;
};

class PlacementError : public Error {
public:
    using Error::Error;
};

std::string to_string(ScenarioKind kind);
std::string to_string(RouteIntent intent);
std::string to_string(Approach approach);
std::string to_string(MetaActionName name);  // "IDLE", "LANE_LEFT", ...
ScenarioKind scenario_kind_from_string(std::string_view s);
RouteIntent route_intent_from_string(std::string_view s);
Approach approach_from_string(std::string_view s);
// Accepts canonical names in any case ("idle", "LANE_LEFT", "lane left").
std::optional<MetaActionName> meta_action_from_string(std::string_view s);
// Also accepts the reasoning vocabulary: "faster", "slower", "change lane left", ...
std::optional<MetaActionName> meta_action_from_phrase(std::string_view s);

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Vec2&) const = default;
};

struct RoadNetwork {
    ScenarioKind kind = ScenarioKind::Highway;
    int lane_count = 5;  // highway only; lane 0 is the leftmost
    double lane_width = 4.0;
    double segment_length = 2000.0;
    Vec2 conflict_center{};        // intersection only
    double approach_length = 60.0;  // intersection: start of each approach to the center
    double box_half = 6.0;          // half side of the square conflict box
    std::vector<MetaActionName> allowed_actions;

    bool allows(MetaActionName name) const;
    bool operator==(const RoadNetwork&) const = default;
};

struct Vehicle {
    AgentId id;
    VehicleKind kind = VehicleKind::Background;
    Vec2 position{};
    double speed = 0.0;
    double heading = 0.0;
    int lane = 0;  // highway lane index, or the Approach of an intersection route
    RouteIntent route_intent = RouteIntent::Straight;
    double length = 5.0;
    double width = 2.0;
    // Arc length along the lane (highway: the lane position) or along the route.
    double progress = 0.0;
    bool frozen = false;

    bool is_ego() const { return kind == VehicleKind::EgoAgent; }
    bool operator==(const Vehicle&) const = default;
};

struct IdmParams {
    double desired_speed = 25.0;
    double time_headway = 1.5;
    double min_gap = 2.0;
    double max_accel = 2.0;
    double comfort_decel = 3.0;
    double hard_decel = 6.0;
    double exponent = 4.0;

    bool operator==(const IdmParams&) const = default;
};

struct SimParams {
    double accel_cmd = 2.0;
    double decel_cmd = 2.0;
    double max_speed = 30.0;
    double tick = 1.0;
    double physics_dt = 0.25;
    IdmParams idm{};
    // Background vehicles wait for egos closer to the box than their own
    // distance plus this margin.
    double ego_yield_margin = 20.0;
    double reservation_range = 30.0;

    static SimParams for_kind(ScenarioKind kind);
    bool operator==(const SimParams&) const = default;
};

struct CollisionEvent {
    int step = 0;  // tick index during which the rectangles first overlapped
    AgentId vehicle_a;  // canonical (natural) order: vehicle_a < vehicle_b
    AgentId vehicle_b;

    bool involves(std::string_view id) const { return vehicle_a == id || vehicle_b == id; }
    bool operator==(const CollisionEvent&) const = default;
};

struct WorldState {
    RoadNetwork network;
    std::vector<Vehicle> vehicles;
    int step = 0;
    std::uint64_t rng_seed = 0;
    SimParams params;
    // Vehicle currently holding the intersection box reservation.
    std::optional<AgentId> box_holder;

    const Vehicle* find(std::string_view id) const;
    Vehicle* find(std::string_view id);
    std::vector<AgentId> ego_ids() const;  // canonical order
    bool operator==(const WorldState&) const = default;
};

struct LeaderSpawn {
    double gap_min = 30.0;
    double gap_max = 60.0;
    double speed_min = 14.0;
    double speed_max = 18.0;
};

struct EgoSpawn {
    AgentId id;
    // Highway
    int lane = -1;  // -1: middle lane
    double position = 100.0;
    // Intersection
    Approach approach = Approach::South;
    RouteIntent intent = RouteIntent::Straight;
    double distance = 45.0;  // to the route's conflict point
    double speed = 8.0;
    std::optional<LeaderSpawn> leader;  // a slower background vehicle placed ahead
};

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::Highway;
    int lanes = 5;
    double lane_width = 4.0;
    std::vector<EgoSpawn> egos;
    int background_vehicles = 15;
    int max_steps = 30;
    std::uint64_t seed = 0;
    std::vector<MetaActionName> actions;  // empty: scenario default
    double jitter_position = 0.0;
    double jitter_speed = 0.0;
    std::vector<Approach> background_approaches;  // empty: any approach without an ego
    double background_speed_min = -1.0;           // <0: scenario default
    double background_speed_max = -1.0;
    double min_gap = 10.0;

    // Default layout for `agents` egos (intersection: south/right, west/straight, ...).
    static ScenarioConfig defaults(ScenarioKind kind, int agents);
};

std::vector<MetaActionName> default_actions(ScenarioKind kind);

// Geometry of an intersection route: straight inbound leg to a corner, then the exit leg.
struct Route {
    Vec2 start;
    Vec2 inbound_dir;
    Vec2 corner;
    Vec2 exit_dir;
    double corner_s = 0.0;
    double box_entry_s = 0.0;  // arc length where the route centerline enters the box
    double box_exit_s = 0.0;
};

Route make_route(const RoadNetwork& network, Approach approach, RouteIntent intent);
// Puts position/heading consistent with vehicle.progress.
void update_pose(Vehicle& vehicle, const RoadNetwork& network);

WorldState build_scenario(const ScenarioConfig& config, std::uint64_t seed);

struct ActionOutcome {
    Vehicle vehicle;
    bool edge_flag = false;  // a lane change was requested at an edge lane
};

// Lane retarget (instant within the tick) followed by trapezoidal integration over dt.
ActionOutcome apply_meta_action(const Vehicle& vehicle, MetaAction action, double dt, const RoadNetwork& network,
                                const SimParams& params);

struct LeaderInfo {
    double gap = 0.0;  // bumper-to-bumper
    double speed = 0.0;
};

double idm_accel(double speed, std::optional<LeaderInfo> leader, const IdmParams& params);
// Same-lane leader: gap from progress difference and half lengths.
double idm_accel(const Vehicle& ego, const Vehicle* leader, const IdmParams& params);

struct AdvanceResult {
    WorldState world;
    std::vector<CollisionEvent> collisions;
    std::vector<AgentId> edge_flags;  // egos whose lane change was clamped at an edge
};

AdvanceResult advance(const WorldState& world, const std::vector<std::pair<AgentId, MetaAction>>& ego_actions);

std::vector<CollisionEvent> detect_collisions(const WorldState& world);
bool rectangles_overlap(const Vehicle& a, const Vehicle& b);

struct ConflictDistance {
    double distance = 0.0;
    bool exited = false;
};

ConflictDistance distance_to_conflict(const Vehicle& vehicle, const RoadNetwork& network);

void to_json(nlohmann::json& j, const Vehicle& v);
void to_json(nlohmann::json& j, const CollisionEvent& e);
void to_json(nlohmann::json& j, const MetaAction& a);
nlohmann::json scenario_to_json(const ScenarioConfig& config);
ScenarioConfig scenario_from_json(const nlohmann::json& j);

}  // namespace codriver
