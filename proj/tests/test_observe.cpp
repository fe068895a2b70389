#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "codriver/observe.hpp"
#include "golden_scenes.hpp"

using namespace codriver;

namespace {

Neighbor neighbor(std::string id, Relation rel, double speed) {
    Neighbor n;
    n.id = std::move(id);
    n.relation = rel;
    n.speed = speed;
    return n;
}

std::set<AgentId> ids(const Observation& o) {
    std::set<AgentId> out;
    for (const auto& n : o.neighbors) out.insert(n.id);
    return out;
}

Vehicle background(std::string id, int lane, double progress, const RoadNetwork& net) {
    Vehicle v;
    v.id = std::move(id);
    v.lane = lane;
    v.progress = progress;
    v.speed = 20.0;
    update_pose(v, net);
    return v;
}

}  // namespace

TEST(Describe, Goldens) {
    for (const auto& g : fixtures::golden_scenes()) {
        const SceneText s = describe(g.observation);
        EXPECT_EQ(s.text, g.expected) << g.name;
        EXPECT_EQ(s.embedding_query, s.text) << g.name;
    }
}

TEST(Describe, EmptyHighwayKeepsHeader) {
    Observation o;
    o.kind = ScenarioKind::Highway;
    o.lane_count = 3;
    o.ego.lane = 0;
    o.ego.speed = 20;
    o.ego.lane_position = 100;
    EXPECT_EQ(describe(o).text,
              "You are driving on a highway with three lanes and you are driving on the leftmost lane. Your current "
              "speed is 20.00 meter per second and lane position is 100.00 meters. These cars are around you:");
}

TEST(Describe, NearZoneAndBehind) {
    Observation o;
    o.kind = ScenarioKind::Intersection;
    o.ego.speed = 10;
    o.ego.distance_to_intersection = 48.33;
    Neighbor b = neighbor("veh1", Relation::Behind, 8.43);
    b.gap = 32.91;
    b.distance_to_conflict = 70;
    Neighbor f = neighbor("veh2", Relation::Ahead, 8.52);
    f.gap = 38.90;
    f.distance_to_conflict = 9.58;
    f.zone = Zone::Near;
    o.neighbors = {b, f};
    const auto lines = split_lines(describe(o).text);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[1], "- veh1 is driving behind you, its speed is 8.43 meter per second and it is 32.91 meter away from you.");
    EXPECT_EQ(lines[3],
              "- veh2 is driving near the intersection (less than 10 meters away), its distance from the intersection "
              "is 9.58 meters, and its speed is 8.52 meter per second.");
}

TEST(Describe, IsPure) {
    const WorldState w = build_scenario(ScenarioConfig::defaults(ScenarioKind::Highway, 2), 9);
    const Observation o = observe(w, "veh1");
    EXPECT_EQ(describe(o).text, describe(o).text);
    EXPECT_EQ(observe(w, "veh1"), o);
}

TEST(Observe, TwoAgentsSeeMoreThanEither) {
    ScenarioConfig c = ScenarioConfig::defaults(ScenarioKind::Highway, 2);
    c.background_vehicles = 0;
    c.egos[0].lane = 2;
    c.egos[0].position = 100;
    c.egos[1].lane = 1;
    c.egos[1].position = 230;
    WorldState w = build_scenario(c, 1);
    w.vehicles.push_back(background("veh7", 2, 150, w.network));  // near veh1 only
    w.vehicles.push_back(background("veh8", 1, 300, w.network));  // near veh2 only
    w.vehicles.push_back(background("veh9", 2, 900, w.network));  // nobody
    const auto a = ids(observe(w, "veh1")), b = ids(observe(w, "veh2"));
    std::set<AgentId> both = a;
    both.insert(b.begin(), b.end());
    EXPECT_TRUE(a.count("veh7"));
    EXPECT_FALSE(a.count("veh8"));
    EXPECT_TRUE(b.count("veh8"));
    EXPECT_FALSE(both.count("veh9"));
    EXPECT_GT(both.size(), a.size());
    EXPECT_GT(both.size(), b.size());
}

TEST(Observe, RelationsFollowLanes) {
    ScenarioConfig c = ScenarioConfig::defaults(ScenarioKind::Highway, 1);
    c.background_vehicles = 0;
    c.egos[0].lane = 2;
    WorldState w = build_scenario(c, 1);
    const double x = w.find("veh1")->progress;
    w.vehicles.push_back(background("veh3", 2, x + 36.86, w.network));
    w.vehicles.push_back(background("veh2", 1, x + 33.72, w.network));
    w.vehicles.push_back(background("veh4", 3, x + 45.04, w.network));
    w.vehicles.push_back(background("veh5", 2, x - 30, w.network));
    const Observation o = observe(w, "veh1");
    std::map<AgentId, Relation> rel;
    for (const auto& n : o.neighbors) rel[n.id] = n.relation;
    EXPECT_EQ(rel.size(), 3u);
    EXPECT_EQ(rel["veh3"], Relation::SameLaneAhead);
    EXPECT_EQ(rel["veh2"], Relation::LeftAhead);
    EXPECT_EQ(rel["veh4"], Relation::RightAhead);
}

TEST(Observe, IntersectionZones) {
    ScenarioConfig c = ScenarioConfig::defaults(ScenarioKind::Intersection, 2);
    c.background_vehicles = 0;
    c.egos[0].distance = 25.0;
    c.egos[1].distance = 3.5;
    const WorldState w = build_scenario(c, 1);
    const Observation o = observe(w, "veh1");
    EXPECT_NEAR(o.ego.distance_to_intersection, 25.0, 1e-9);
    ASSERT_EQ(o.neighbors.size(), 1u);
    EXPECT_EQ(o.neighbors[0].zone, Zone::In);
    EXPECT_NEAR(o.neighbors[0].distance_to_conflict, 3.5, 1e-9);
}

TEST(Templates, ShippedFilesMatchBuiltins) {
    const std::string dir = resource_dir() + "/templates";
    ASSERT_TRUE(std::filesystem::is_directory(dir));
    const TemplateSet builtin = TemplateSet::defaults();
    const TemplateSet shipped = TemplateSet::load_dir(dir);
    EXPECT_EQ(shipped.all(), builtin.all());
    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) files += e.path().extension() == ".txt";
    EXPECT_EQ(files, builtin.all().size());
}

TEST(Templates, NumberWords) {
    EXPECT_EQ(number_word(5), "five");
    EXPECT_EQ(number_word(2), "two");
    EXPECT_EQ(number_word(12), "12");
}
