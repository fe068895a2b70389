#include "codriver/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace codriver {

namespace {

constexpr double kHeadingTolerance = 0.3;
constexpr double kLeaderRange = 100.0;

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(Vec2 a, double k) { return {a.x * k, a.y * k}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
Vec2 right_normal(Vec2 d) { return {d.y, -d.x}; }

Vec2 approach_direction(Approach a) {
    switch (a) {
        case Approach::South: return {0.0, 1.0};
        case Approach::West: return {1.0, 0.0};
        case Approach::North: return {0.0, -1.0};
        case Approach::East: return {-1.0, 0.0};
    }
    return {0.0, 1.0};
}

// Portable uniform draws: the engine output is standardized, the std distributions are not.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int index(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }

private:
    std::mt19937_64 engine_;
};

double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a < -M_PI) a += 2.0 * M_PI;
    return a;
}

double highway_lane_y(const RoadNetwork& net, int lane) { return -net.lane_width * lane; }

std::array<Vec2, 4> corners(const Vehicle& v) {
    const Vec2 f{std::cos(v.heading), std::sin(v.heading)};
    const Vec2 s{-f.y, f.x};
    const double hl = v.length / 2.0, hw = v.width / 2.0;
    return {v.position + f * hl + s * hw, v.position + f * hl - s * hw, v.position - f * hl - s * hw,
            v.position - f * hl + s * hw};
}

Route route_of(const RoadNetwork& net, const Vehicle& v) {
    return make_route(net, static_cast<Approach>(v.lane), v.route_intent);
}

double front_s(const Vehicle& v) { return v.progress + v.length / 2.0; }
double rear_s(const Vehicle& v) { return v.progress - v.length / 2.0; }

bool occupies_box(const Vehicle& v, const Route& r) {
    return front_s(v) > r.box_entry_s && rear_s(v) < r.box_exit_s;
}

std::vector<MetaActionName> resolved_actions(const ScenarioConfig& c) {
    return c.actions.empty() ? default_actions(c.kind) : c.actions;
}

}  // namespace

std::string to_string(ScenarioKind kind) { return kind == ScenarioKind::Highway ? "highway" : "intersection"; }

std::string to_string(RouteIntent intent) {
    switch (intent) {
        case RouteIntent::Straight: return "straight";
        case RouteIntent::TurnLeft: return "left";
        case RouteIntent::TurnRight: return "right";
    }
    return "straight";
}

std::string to_string(Approach approach) {
    switch (approach) {
        case Approach::South: return "south";
        case Approach::West: return "west";
        case Approach::North: return "north";
        case Approach::East: return "east";
    }
    return "south";
}

std::string to_string(MetaActionName name) {
    switch (name) {
        case MetaActionName::Idle: return "IDLE";
        case MetaActionName::LaneLeft: return "LANE_LEFT";
        case MetaActionName::LaneRight: return "LANE_RIGHT";
        case MetaActionName::Accelerate: return "ACCELERATE";
        case MetaActionName::Decelerate: return "DECELERATE";
    }
    return "IDLE";
}

ScenarioKind scenario_kind_from_string(std::string_view s) {
    if (iequals(s, "highway")) return ScenarioKind::Highway;
    if (iequals(s, "intersection")) return ScenarioKind::Intersection;
    throw ConfigError(fmt::format("unknown scenario kind '{}'", s));
}

RouteIntent route_intent_from_string(std::string_view s) {
    if (iequals(s, "straight")) return RouteIntent::Straight;
    if (iequals(s, "left") || iequals(s, "turn_left")) return RouteIntent::TurnLeft;
    if (iequals(s, "right") || iequals(s, "turn_right")) return RouteIntent::TurnRight;
    throw ConfigError(fmt::format("unknown route intent '{}'", s));
}

Approach approach_from_string(std::string_view s) {
    if (iequals(s, "south")) return Approach::South;
    if (iequals(s, "west")) return Approach::West;
    if (iequals(s, "north")) return Approach::North;
    if (iequals(s, "east")) return Approach::East;
    throw ConfigError(fmt::format("unknown approach '{}'", s));
}

std::optional<MetaActionName> meta_action_from_string(std::string_view s) {
    std::string norm_name = to_lower(trim(s));
    std::replace(norm_name.begin(), norm_name.end(), ' ', '_');
    if (norm_name == "idle") return MetaActionName::Idle;
    if (norm_name == "lane_left") return MetaActionName::LaneLeft;
    if (norm_name == "lane_right") return MetaActionName::LaneRight;
    if (norm_name == "accelerate") return MetaActionName::Accelerate;
    if (norm_name == "decelerate") return MetaActionName::Decelerate;
    return std::nullopt;
}

std::optional<MetaActionName> meta_action_from_phrase(std::string_view s) {
    if (auto n = meta_action_from_string(s)) return n;
    const std::string p = to_lower(trim(s));
    if (p == "faster" || p == "speed up") return MetaActionName::Accelerate;
    if (p == "slower" || p == "slow down") return MetaActionName::Decelerate;
    if (p == "change lane left" || p == "turn left lane") return MetaActionName::LaneLeft;
    if (p == "change lane right" || p == "turn right lane") return MetaActionName::LaneRight;
    if (p == "keep speed" || p == "keep") return MetaActionName::Idle;
    return std::nullopt;
}

bool RoadNetwork::allows(MetaActionName name) const {
    return std::find(allowed_actions.begin(), allowed_actions.end(), name) != allowed_actions.end();
}

SimParams SimParams::for_kind(ScenarioKind kind) {
    SimParams p;
    if (kind == ScenarioKind::Intersection) {
        p.max_speed = 12.0;
        p.idm.desired_speed = 9.0;
    }
    return p;
}

const Vehicle* WorldState::find(std::string_view id) const {
    for (const auto& v : vehicles)
        if (v.id == id) return &v;
    return nullptr;
}

Vehicle* WorldState::find(std::string_view id) {
    for (auto& v : vehicles)
        if (v.id == id) return &v;
    return nullptr;
}

std::vector<AgentId> WorldState::ego_ids() const {
    std::vector<AgentId> ids;
    for (const auto& v : vehicles)
        if (v.is_ego()) ids.push_back(v.id);
    std::sort(ids.begin(), ids.end(), NaturalLess{});
    return ids;
}

std::vector<MetaActionName> default_actions(ScenarioKind kind) {
    if (kind == ScenarioKind::Intersection)
        return {MetaActionName::Idle, MetaActionName::Accelerate, MetaActionName::Decelerate};
    return {MetaActionName::Idle, MetaActionName::LaneLeft, MetaActionName::LaneRight, MetaActionName::Accelerate,
            MetaActionName::Decelerate};
}

ScenarioConfig ScenarioConfig::defaults(ScenarioKind kind, int agents) {
    ScenarioConfig c;
    c.kind = kind;
    if (kind == ScenarioKind::Intersection) c.background_vehicles = 4;
    static constexpr std::array<int, 5> kLanes{2, 1, 3, 0, 4};
    static constexpr std::array<Approach, 4> kApproaches{Approach::South, Approach::West, Approach::North,
                                                         Approach::East};
    static constexpr std::array<RouteIntent, 4> kIntents{RouteIntent::TurnRight, RouteIntent::Straight,
                                                         RouteIntent::Straight, RouteIntent::TurnLeft};
    for (int i = 0; i < agents; ++i) {
        EgoSpawn e;
        e.id = fmt::format("veh{}", i + 1);
        if (kind == ScenarioKind::Highway) {
            e.lane = kLanes[static_cast<std::size_t>(i) % kLanes.size()];
            e.position = 100.0 + 30.0 * i;
            e.speed = 20.0;
        } else {
            e.approach = kApproaches[static_cast<std::size_t>(i) % 4];
            e.intent = agents == 1 ? RouteIntent::TurnLeft : kIntents[static_cast<std::size_t>(i) % 4];
            e.distance = 45.0 + 20.0 * (i / 4);
            e.speed = 8.0;
        }
        c.egos.push_back(e);
    }
    return c;
}

Route make_route(const RoadNetwork& net, Approach approach, RouteIntent intent) {
    Route r;
    const Vec2 d = approach_direction(approach);
    const Vec2 n = right_normal(d);
    const double hw = net.lane_width / 2.0;
    const Vec2 abeam = net.conflict_center + n * hw;
    r.inbound_dir = d;
    r.start = abeam - d * net.approach_length;
    double along = 0.0;
    switch (intent) {
        case RouteIntent::Straight: r.exit_dir = d; break;
        case RouteIntent::TurnRight:
            r.exit_dir = n;
            along = -hw;
            break;
        case RouteIntent::TurnLeft:
            r.exit_dir = n * -1.0;
            along = hw;
            break;
    }
    r.corner = abeam + d * along;
    r.corner_s = net.approach_length + along;
    r.box_entry_s = net.approach_length - net.box_half;
    const Vec2 exit_abeam = net.conflict_center + right_normal(r.exit_dir) * hw;
    const Vec2 exit_point = exit_abeam + r.exit_dir * net.box_half;
    r.box_exit_s = r.corner_s + dot(exit_point - r.corner, r.exit_dir);
    return r;
}

void update_pose(Vehicle& v, const RoadNetwork& net) {
    if (net.kind == ScenarioKind::Highway) {
        v.position = {v.progress, highway_lane_y(net, v.lane)};
        v.heading = 0.0;
        return;
    }
    const Route r = route_of(net, v);
    Vec2 dir;
    if (v.progress <= r.corner_s) {
        v.position = r.start + r.inbound_dir * v.progress;
        dir = r.inbound_dir;
    } else {
        v.position = r.corner + r.exit_dir * (v.progress - r.corner_s);
        dir = r.exit_dir;
    }
    v.heading = std::atan2(dir.y, dir.x);
}

WorldState build_scenario(const ScenarioConfig& config, std::uint64_t seed) {
    WorldState w;
    w.rng_seed = seed;
    w.params = SimParams::for_kind(config.kind);
    w.network.kind = config.kind;
    w.network.lane_width = config.lane_width;
    w.network.allowed_actions = resolved_actions(config);
    if (config.kind == ScenarioKind::Highway) {
        if (config.lanes < 2) throw ConfigError("highway needs at least 2 lanes");
        w.network.lane_count = config.lanes;
    } else {
        w.network.lane_count = 1;
    }
    if (config.background_vehicles < 0) throw ConfigError("background_vehicles must be non-negative");

    SeededRng rng(seed);
    const bool highway = config.kind == ScenarioKind::Highway;
    const double v_max = w.params.max_speed;

    int next_number = 1;
    for (const auto& e : config.egos) {
        Vehicle v;
        v.kind = VehicleKind::EgoAgent;
        v.id = e.id.empty() ? fmt::format("veh{}", next_number) : e.id;
        ++next_number;
        const double dpos = config.jitter_position > 0 ? rng.uniform(-config.jitter_position, config.jitter_position) : 0.0;
        const double dspeed = config.jitter_speed > 0 ? rng.uniform(-config.jitter_speed, config.jitter_speed) : 0.0;
        v.speed = std::clamp(e.speed + dspeed, 0.0, v_max);
        if (highway) {
            v.lane = e.lane < 0 ? config.lanes / 2 : e.lane;
            if (v.lane >= config.lanes) throw ConfigError(fmt::format("ego {} lane {} out of range", v.id, v.lane));
            v.progress = e.position + dpos;
        } else {
            v.lane = static_cast<int>(e.approach);
            v.route_intent = e.intent;
            const Route r = route_of(w.network, v);
            v.progress = r.corner_s - (e.distance + dpos);
        }
        update_pose(v, w.network);
        w.vehicles.push_back(v);
    }
    if (w.find("") != nullptr) throw ConfigError("empty vehicle id");
    {
        auto ids = w.ego_ids();
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("duplicate ego id");
    }

    auto fits = [&](const Vehicle& cand) {
        for (const auto& o : w.vehicles) {
            if (o.lane != cand.lane) continue;
            const double gap = std::fabs(o.progress - cand.progress) - (o.length + cand.length) / 2.0;
            if (gap < config.min_gap) return false;
        }
        return true;
    };

    const double bg_speed_lo = config.background_speed_min >= 0 ? config.background_speed_min : (highway ? 20.0 : 5.0);
    const double bg_speed_hi = config.background_speed_max >= 0 ? config.background_speed_max : (highway ? 24.0 : 9.0);
    int placed = 0;
    auto next_bg_id = [&]() {
        while (w.find(fmt::format("veh{}", next_number)) != nullptr) ++next_number;
        return fmt::format("veh{}", next_number++);
    };

    // Leaders constructed ahead of egos count against the background budget.
    for (std::size_t i = 0; i < config.egos.size(); ++i) {
        const auto& spawn = config.egos[i];
        if (!spawn.leader || !highway) continue;
        const Vehicle& ego = w.vehicles[i];
        Vehicle v;
        v.kind = VehicleKind::Background;
        v.lane = ego.lane;
        v.progress = ego.progress + (ego.length + v.length) / 2.0 + rng.uniform(spawn.leader->gap_min, spawn.leader->gap_max);
        v.speed = rng.uniform(spawn.leader->speed_min, spawn.leader->speed_max);
        if (!fits(v)) throw PlacementError(fmt::format("leader for {} violates the minimum gap", ego.id));
        v.id = next_bg_id();
        update_pose(v, w.network);
        w.vehicles.push_back(v);
        ++placed;
    }

    std::vector<Approach> approaches = config.background_approaches;
    if (!highway && approaches.empty()) {
        for (Approach a : {Approach::South, Approach::West, Approach::North, Approach::East}) {
            bool used = false;
            for (const auto& v : w.vehicles) used = used || (v.is_ego() && v.lane == static_cast<int>(a));
            if (!used) approaches.push_back(a);
        }
        if (approaches.empty()) approaches = {Approach::South, Approach::West, Approach::North, Approach::East};
    }

    double x_lo = 0.0, x_hi = 400.0;
    if (highway && !w.vehicles.empty()) {
        double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
        for (const auto& v : w.vehicles) {
            if (!v.is_ego()) continue;
            lo = std::min(lo, v.progress);
            hi = std::max(hi, v.progress);
        }
        if (lo <= hi) {
            x_lo = std::max(0.0, lo - 80.0);
            x_hi = hi + 250.0;
        }
    }

    constexpr int kMaxAttempts = 500;
    while (placed < config.background_vehicles) {
        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
            Vehicle v;
            v.kind = VehicleKind::Background;
            if (highway) {
                v.lane = rng.index(config.lanes);
                v.progress = rng.uniform(x_lo, x_hi);
            } else {
                v.lane = static_cast<int>(approaches[static_cast<std::size_t>(rng.index(static_cast<int>(approaches.size())))]);
                v.route_intent = static_cast<RouteIntent>(rng.index(3));
                const Route r = route_of(w.network, v);
                v.progress = rng.uniform(0.0, r.box_entry_s - 15.0);
            }
            v.speed = rng.uniform(bg_speed_lo, bg_speed_hi);
            if (!fits(v)) continue;
            v.id = next_bg_id();
            update_pose(v, w.network);
            w.vehicles.push_back(v);
            ok = true;
        }
        if (!ok)
            throw PlacementError(fmt::format("could not place background vehicle {} of {} with {} m gaps", placed + 1,
                                             config.background_vehicles, config.min_gap));
        ++placed;
    }
    return w;
}

namespace {

void integrate_longitudinal(Vehicle& v, double accel, double dt, const RoadNetwork& net, double v_max) {
    const double v0 = v.speed;
    const double v1 = std::clamp(v0 + accel * dt, 0.0, v_max);
    v.progress += 0.5 * (v0 + v1) * dt;
    v.speed = v1;
    update_pose(v, net);
}

double command_accel(MetaActionName name, const SimParams& p) {
    switch (name) {
        case MetaActionName::Accelerate: return p.accel_cmd;
        case MetaActionName::Decelerate: return -p.decel_cmd;
        default: return 0.0;
    }
}

// Returns true if the request was clamped at an edge lane.
bool retarget_lane(Vehicle& v, MetaActionName name, const RoadNetwork& net) {
    if (net.kind != ScenarioKind::Highway) return name == MetaActionName::LaneLeft || name == MetaActionName::LaneRight;
    if (name == MetaActionName::LaneLeft) {
        if (v.lane == 0) return true;
        --v.lane;
    } else if (name == MetaActionName::LaneRight) {
        if (v.lane == net.lane_count - 1) return true;
        ++v.lane;
    }
    update_pose(v, net);
    return false;
}

std::optional<LeaderInfo> find_leader(const WorldState& w, const Vehicle& v) {
    std::optional<LeaderInfo> best;
    if (w.network.kind == ScenarioKind::Highway) {
        for (const auto& o : w.vehicles) {
            if (&o == &v || o.lane != v.lane || o.progress <= v.progress) continue;
            const double gap = o.progress - v.progress - (o.length + v.length) / 2.0;
            if (!best || gap < best->gap) best = LeaderInfo{gap, o.speed};
        }
        return best;
    }
    const Vec2 f{std::cos(v.heading), std::sin(v.heading)};
    for (const auto& o : w.vehicles) {
        if (&o == &v) continue;
        if (std::fabs(wrap_angle(o.heading - v.heading)) > kHeadingTolerance) continue;
        const Vec2 rel = o.position - v.position;
        const double lon = dot(rel, f);
        const double lat = cross(f, rel);
        if (lon <= 0.0 || lon > kLeaderRange) continue;
        if (std::fabs(lat) >= (o.width + v.width) / 2.0 + 0.5) continue;
        const double gap = lon - (o.length + v.length) / 2.0;
        if (!best || gap < best->gap) best = LeaderInfo{gap, o.speed};
    }
    return best;
}

void update_reservation(WorldState& w) {
    if (w.network.kind != ScenarioKind::Intersection) return;
    const auto& net = w.network;
    if (w.box_holder) {
        const Vehicle* h = w.find(*w.box_holder);
        if (h == nullptr || rear_s(*h) >= route_of(net, *h).box_exit_s) w.box_holder.reset();
    }
    if (w.box_holder) return;
    for (const auto& v : w.vehicles)
        if (occupies_box(v, route_of(net, v))) return;

    const Vehicle* cand = nullptr;
    double cand_dist = 0.0;
    for (const auto& v : w.vehicles) {
        if (v.is_ego() || v.frozen) continue;
        const Route r = route_of(net, v);
        const double dist = r.box_entry_s - front_s(v);
        if (dist < 0.0 || dist > w.params.reservation_range) continue;
        if (cand == nullptr || dist < cand_dist || (dist == cand_dist && natural_less(v.id, cand->id))) {
            cand = &v;
            cand_dist = dist;
        }
    }
    if (cand == nullptr) return;
    for (const auto& e : w.vehicles) {
        if (!e.is_ego()) continue;
        const Route r = route_of(net, e);
        if (rear_s(e) >= r.box_exit_s) continue;
        if (e.lane == cand->lane && e.progress < cand->progress) continue;
        if (r.box_entry_s - front_s(e) < cand_dist + w.params.ego_yield_margin) return;
    }
    w.box_holder = cand->id;
}

double background_accel(const WorldState& w, const Vehicle& v) {
    double a = idm_accel(v.speed, find_leader(w, v), w.params.idm);
    if (w.network.kind == ScenarioKind::Intersection && w.box_holder != v.id) {
        const Route r = route_of(w.network, v);
        const double to_line = r.box_entry_s - front_s(v);
        if (to_line >= 0.0) a = std::min(a, idm_accel(v.speed, LeaderInfo{to_line, 0.0}, w.params.idm));
    }
    return a;
}

std::vector<CollisionEvent> new_collisions(const WorldState& w) {
    std::vector<CollisionEvent> out;
    for (std::size_t i = 0; i < w.vehicles.size(); ++i)
        for (std::size_t j = i + 1; j < w.vehicles.size(); ++j) {
            const auto& a = w.vehicles[i];
            const auto& b = w.vehicles[j];
            if (a.frozen && b.frozen) continue;
            if (!rectangles_overlap(a, b)) continue;
            CollisionEvent e{w.step, a.id, b.id};
            if (natural_less(e.vehicle_b, e.vehicle_a)) std::swap(e.vehicle_a, e.vehicle_b);
            out.push_back(e);
        }
    return out;
}

bool event_less(const CollisionEvent& x, const CollisionEvent& y) {
    if (x.vehicle_a != y.vehicle_a) return natural_less(x.vehicle_a, y.vehicle_a);
    return natural_less(x.vehicle_b, y.vehicle_b);
}

}  // namespace

ActionOutcome apply_meta_action(const Vehicle& vehicle, MetaAction action, double dt, const RoadNetwork& network,
                                const SimParams& params) {
    ActionOutcome out{vehicle, false};
    out.edge_flag = retarget_lane(out.vehicle, action.name, network);
    integrate_longitudinal(out.vehicle, command_accel(action.name, params), dt, network, params.max_speed);
    return out;
}

double idm_accel(double speed, std::optional<LeaderInfo> leader, const IdmParams& p) {
    const double free_term = std::pow(speed / p.desired_speed, p.exponent);
    double interaction = 0.0;
    if (leader) {
        if (leader->gap <= 0.0) return -p.hard_decel;
        const double dv = speed - leader->speed;
        const double s_star =
            p.min_gap + speed * p.time_headway + speed * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
        const double ratio = std::max(s_star, 0.0) / leader->gap;
        interaction = ratio * ratio;
    }
    const double a = p.max_accel * (1.0 - free_term - interaction);
    return std::clamp(a, -p.hard_decel, p.max_accel);
}

double idm_accel(const Vehicle& ego, const Vehicle* leader, const IdmParams& params) {
    if (leader == nullptr) return idm_accel(ego.speed, std::nullopt, params);
    const double gap = leader->progress - ego.progress - (leader->length + ego.length) / 2.0;
    return idm_accel(ego.speed, LeaderInfo{gap, leader->speed}, params);
}

AdvanceResult advance(const WorldState& world, const std::vector<std::pair<AgentId, MetaAction>>& ego_actions) {
    AdvanceResult result{world, {}, {}};
    WorldState& w = result.world;

    std::vector<std::optional<MetaAction>> actions(w.vehicles.size());
    for (const auto& [id, action] : ego_actions) {
        auto it = std::find_if(w.vehicles.begin(), w.vehicles.end(), [&](const Vehicle& v) { return v.id == id; });
        if (it == w.vehicles.end() || !it->is_ego()) throw Error(fmt::format("action for unknown agent '{}'", id));
        const auto idx = static_cast<std::size_t>(it - w.vehicles.begin());
        if (actions[idx]) throw Error(fmt::format("duplicate action for agent '{}'", id));
        if (!w.network.allows(action.name))
            throw Error(fmt::format("action {} not available for agent '{}'", to_string(action.name), id));
        actions[idx] = action;
    }
    for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
        const auto& v = w.vehicles[i];
        if (v.is_ego() && !v.frozen && !actions[i]) throw Error(fmt::format("missing action for agent '{}'", v.id));
    }

    for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
        auto& v = w.vehicles[i];
        if (!actions[i] || v.frozen) continue;
        if (retarget_lane(v, actions[i]->name, w.network)) result.edge_flags.push_back(v.id);
    }

    const int substeps = std::max(1, static_cast<int>(std::lround(w.params.tick / w.params.physics_dt)));
    const double h = w.params.tick / substeps;
    std::vector<double> accel(w.vehicles.size());
    for (int k = 0; k < substeps; ++k) {
        update_reservation(w);
        for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
            const auto& v = w.vehicles[i];
            if (v.frozen) continue;
            accel[i] = v.is_ego() ? command_accel(actions[i]->name, w.params) : background_accel(w, v);
        }
        for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
            auto& v = w.vehicles[i];
            if (v.frozen) continue;
            integrate_longitudinal(v, accel[i], h, w.network, w.params.max_speed);
        }
        auto hits = new_collisions(w);
        for (const auto& e : hits) {
            for (auto* id : {&e.vehicle_a, &e.vehicle_b}) {
                Vehicle* v = w.find(*id);
                v->frozen = true;
                v->speed = 0.0;
            }
            result.collisions.push_back(e);
        }
    }
    std::sort(result.collisions.begin(), result.collisions.end(), event_less);
    ++w.step;
    return result;
}

bool rectangles_overlap(const Vehicle& a, const Vehicle& b) {
    const auto ca = corners(a);
    const auto cb = corners(b);
    const std::array<Vec2, 4> axes{Vec2{std::cos(a.heading), std::sin(a.heading)},
                                   Vec2{-std::sin(a.heading), std::cos(a.heading)},
                                   Vec2{std::cos(b.heading), std::sin(b.heading)},
                                   Vec2{-std::sin(b.heading), std::cos(b.heading)}};
    constexpr double eps = 1e-9;
    for (const auto& axis : axes) {
        double amin = std::numeric_limits<double>::max(), amax = std::numeric_limits<double>::lowest();
        double bmin = amin, bmax = amax;
        for (const auto& p : ca) {
            const double t = dot(p, axis);
            amin = std::min(amin, t);
            amax = std::max(amax, t);
        }
        for (const auto& p : cb) {
            const double t = dot(p, axis);
            bmin = std::min(bmin, t);
            bmax = std::max(bmax, t);
        }
        if (amax <= bmin + eps || bmax <= amin + eps) return false;
    }
    return true;
}

std::vector<CollisionEvent> detect_collisions(const WorldState& world) {
    std::vector<CollisionEvent> out;
    for (std::size_t i = 0; i < world.vehicles.size(); ++i)
        for (std::size_t j = i + 1; j < world.vehicles.size(); ++j) {
            if (!rectangles_overlap(world.vehicles[i], world.vehicles[j])) continue;
            CollisionEvent e{world.step, world.vehicles[i].id, world.vehicles[j].id};
            if (natural_less(e.vehicle_b, e.vehicle_a)) std::swap(e.vehicle_a, e.vehicle_b);
            out.push_back(e);
        }
    std::sort(out.begin(), out.end(), event_less);
    return out;
}

ConflictDistance distance_to_conflict(const Vehicle& vehicle, const RoadNetwork& network) {
    if (network.kind != ScenarioKind::Intersection) throw Error("distance_to_conflict requires an intersection");
    const Route r = route_of(network, vehicle);
    const double d = r.corner_s - vehicle.progress;
    if (d >= 0.0) return {d, false};
    return {-d, true};
}

void to_json(nlohmann::json& j, const MetaAction& a) {
    j = nlohmann::json{{"name", to_string(a.name)}};
    if (a.declared_id) j["declared_id"] = *a.declared_id;
}

void to_json(nlohmann::json& j, const Vehicle& v) {
    j = nlohmann::json{{"id", v.id},
                       {"ego", v.is_ego()},
                       {"x", v.position.x},
                       {"y", v.position.y},
                       {"speed", v.speed},
                       {"heading", v.heading},
                       {"lane", v.lane},
                       {"progress", v.progress}};
    if (v.frozen) j["frozen"] = true;
}

void to_json(nlohmann::json& j, const CollisionEvent& e) {
    j = nlohmann::json{{"step", e.step}, {"vehicle_a", e.vehicle_a}, {"vehicle_b", e.vehicle_b}};
}

nlohmann::json scenario_to_json(const ScenarioConfig& c) {
    using nlohmann::json;
    json egos = json::array();
    for (const auto& e : c.egos) {
        json o{{"id", e.id}, {"speed", e.speed}};
        if (c.kind == ScenarioKind::Highway) {
            o["lane"] = e.lane;
            o["position"] = e.position;
        } else {
            o["approach"] = to_string(e.approach);
            o["intent"] = to_string(e.intent);
            o["distance"] = e.distance;
        }
        if (e.leader)
            o["leader"] = {{"gap", {e.leader->gap_min, e.leader->gap_max}},
                           {"speed", {e.leader->speed_min, e.leader->speed_max}}};
        egos.push_back(o);
    }
    json j{{"scenario", to_string(c.kind)},
           {"lanes", c.lanes},
           {"lane_width", c.lane_width},
           {"ego_agents", egos},
           {"background_vehicles", c.background_vehicles},
           {"max_steps", c.max_steps},
           {"seed", c.seed},
           {"min_gap", c.min_gap}};
    if (!c.actions.empty()) {
        json a = json::array();
        for (auto n : c.actions) a.push_back(to_string(n));
        j["actions"] = a;
    }
    if (c.jitter_position > 0 || c.jitter_speed > 0)
        j["spawn_jitter"] = {{"position", c.jitter_position}, {"speed", c.jitter_speed}};
    if (!c.background_approaches.empty()) {
        json a = json::array();
        for (auto ap : c.background_approaches) a.push_back(to_string(ap));
        j["background_approaches"] = a;
    }
    if (c.background_speed_min >= 0) j["background_speed"] = {c.background_speed_min, c.background_speed_max};
    return j;
}

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
    try {
        const auto kind = scenario_kind_from_string(j.at("scenario").get<std::string>());
        ScenarioConfig c;
        if (j.contains("ego_agents")) {
            c = ScenarioConfig::defaults(kind, 0);
            int i = 0;
            for (const auto& o : j.at("ego_agents")) {
                EgoSpawn e;
                e.id = o.value("id", fmt::format("veh{}", i + 1));
                if (kind == ScenarioKind::Highway) {
                    e.speed = 20.0;
                    e.lane = o.value("lane", -1);
                    e.position = o.value("position", 100.0);
                } else {
                    e.approach = approach_from_string(o.value("approach", std::string("south")));
                    e.intent = route_intent_from_string(o.value("intent", std::string("straight")));
                    e.distance = o.value("distance", 45.0);
                }
                e.speed = o.value("speed", e.speed);
                if (o.contains("leader")) {
                    const auto& l = o.at("leader");
                    LeaderSpawn ls;
                    ls.gap_min = l.at("gap").at(0).get<double>();
                    ls.gap_max = l.at("gap").at(1).get<double>();
                    ls.speed_min = l.at("speed").at(0).get<double>();
                    ls.speed_max = l.at("speed").at(1).get<double>();
                    e.leader = ls;
                }
                c.egos.push_back(e);
                ++i;
            }
        } else {
            c = ScenarioConfig::defaults(kind, j.value("agents", 1));
        }
        c.lanes = j.value("lanes", c.lanes);
        c.lane_width = j.value("lane_width", c.lane_width);
        c.background_vehicles = j.value("background_vehicles", c.background_vehicles);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.seed = j.value("seed", c.seed);
        c.min_gap = j.value("min_gap", c.min_gap);
        if (j.contains("actions")) {
            for (const auto& a : j.at("actions")) {
                auto n = meta_action_from_string(a.get<std::string>());
                if (!n) throw ConfigError("unknown action " + a.dump());
                c.actions.push_back(*n);
            }
        }
        if (j.contains("spawn_jitter")) {
            c.jitter_position = j["spawn_jitter"].value("position", 0.0);
            c.jitter_speed = j["spawn_jitter"].value("speed", 0.0);
        }
        if (j.contains("background_approaches"))
            for (const auto& a : j.at("background_approaches"))
                c.background_approaches.push_back(approach_from_string(a.get<std::string>()));
        if (j.contains("background_speed")) {
            c.background_speed_min = j["background_speed"].at(0).get<double>();
            c.background_speed_max = j["background_speed"].at(1).get<double>();
        }
        if (c.max_steps < 1) throw ConfigError("max_steps must be positive");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid scenario config: ") + e.what());
    }
}

}  // namespace codriver
