#include <random>
#include <sstream>

#include "doctest.h"
#include "oracle.hpp"
#include "oshield/dynamics.hpp"
#include "oshield/error.hpp"

using namespace oshield;

namespace {

constexpr const char* kGridworld =
    "....A\n"
    ".###.\n"
    ".....\n"
    ".###.\n"
    "E....\n";

constexpr const char* kPlus =
    "##.##\n"
    "##.##\n"
    ".....\n"
    "##.##\n"
    "##.##\n";

double total(const TransitionDistribution& d) {
    double s = 0.0;
    for (const auto& o : d) s += o.probability;
    return s;
}

}  // namespace

TEST_CASE("decision states") {
    WorldState s = WorldState::at_positions({0, 1});
    CHECK(is_decision_state(s));
    s.turn = 1;
    CHECK_FALSE(is_decision_state(s));
    s.turn = 0;
    s.queues[0] = {0, 0};
    CHECK_FALSE(is_decision_state(s));
}

TEST_CASE("available actions follow the turn and the queues") {
    const Arena a = parse_grid_map(kGridworld);
    const auto b = uniform_behaviour(a, 1);
    const SafetyMdp mdp(a, b);
    const NodeId v13 = a.node({0, 2});
    WorldState s = WorldState::at_positions({v13, a.node({4, 0})});

    const auto acts = mdp.available_actions(s);
    REQUIRE(acts.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(acts[k].kind == ActionLabel::Kind::Choose);
        CHECK(acts[k].task == a.tasks_at(v13)[k]);
    }

    s.turn = 1;
    CHECK(mdp.available_actions(s) == std::vector{ActionLabel::adv_decision()});
    s.queues[1] = {a.tasks_at(a.node({4, 0}))[0], 0};
    CHECK(mdp.available_actions(s) == std::vector{ActionLabel::move()});
    s.turn = 0;
    s.queues[0] = {a.tasks_at(v13)[0], 0};
    CHECK(mdp.available_actions(s) == std::vector{ActionLabel::move()});
}

TEST_CASE("step semantics") {
    const Arena a = parse_grid_map(kGridworld);
    const auto b = uniform_behaviour(a, 1);
    const SafetyMdp mdp(a, b);
    const NodeId v13 = a.node({0, 2});
    const NodeId v53 = a.node({4, 2});
    const WorldState s = WorldState::at_positions({v13, v53});

    SUBCASE("Choose is deterministic and only fills the avatar queue") {
        const TaskId t = a.tasks_at(v13)[1];
        const auto d = mdp.step(s, ActionLabel::choose(t));
        REQUIRE(d.size() == 1);
        CHECK(d[0].probability == 1.0);
        CHECK(d[0].state.queues[0] == QueueRef{t, 0});
        CHECK(d[0].state.positions == s.positions);
        CHECK(d[0].state.turn == 0);
    }
    SUBCASE("AdvDecision under uniform behaviour splits evenly") {
        WorldState adv = s;
        adv.turn = 1;
        const auto d = mdp.step(adv, ActionLabel::adv_decision());
        REQUIRE(d.size() == 3);
        for (const auto& o : d) CHECK(o.probability == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(std::abs(total(d) - 1.0) <= kProbabilityTolerance);
    }
    SUBCASE("Move by the last agent wraps the turn") {
        WorldState mv = s;
        mv.turn = 1;
        const TaskId t = a.tasks_at(v53)[0];
        mv.queues[1] = {t, 0};
        const auto d = mdp.step(mv, ActionLabel::move());
        REQUIRE(d.size() == 1);
        CHECK(d[0].state.turn == 0);
        CHECK(d[0].state.positions[1] == a.task(t).path[1]);
    }
    SUBCASE("illegal actions are rejected") {
        CHECK_THROWS_AS(mdp.step(s, ActionLabel::move()), InvariantViolation);
        CHECK_THROWS_AS(mdp.step(s, ActionLabel::adv_decision()), InvariantViolation);
        CHECK_THROWS_AS(mdp.step(s, ActionLabel::choose(a.tasks_at(v53)[0])), InvariantViolation);
        WorldState broken = s;
        broken.turn = 1;
        broken.queues[1] = {a.tasks_at(v13)[0], 0};  // not anchored at the adversary
        CHECK_THROWS_AS(mdp.step(broken, ActionLabel::move()), InvariantViolation);
        CHECK_THROWS_AS(mdp.validate(broken), InvariantViolation);
    }
}

TEST_CASE("uniform behaviour") {
    const Arena plus = parse_grid_map(kPlus);
    const auto b = uniform_behaviour(plus, 2);
    for (const auto& c : b.at(1, plus.node({2, 2}))) CHECK(c.probability == 0.25);
    for (const auto& c : b.at(2, plus.node({0, 2}))) CHECK(c.probability == 1.0);

    const Arena g = parse_grid_map(kGridworld);
    const auto bg = uniform_behaviour(g, 1);
    CHECK(bg.at(1, g.node({0, 2})).size() == 3);
    CHECK(bg.at(1, g.node({0, 0})).size() == 2);
}

TEST_CASE("behaviour validation and table round trip") {
    const Arena a = parse_grid_map(kPlus);
    const NodeId c = a.node({2, 2});
    AdversaryBehaviour b(a, 1);
    const auto tasks = a.tasks_at(c);
    CHECK_THROWS_AS(b.set(1, c, {{tasks[0], 0.5}}), ConfigError);
    CHECK_THROWS_AS(b.set(1, c, {{tasks[0], 0.5}, {a.tasks_at(a.node({0, 2}))[0], 0.5}}), ConfigError);
    CHECK_THROWS_AS(b.set(2, c, {{tasks[0], 1.0}}), ConfigError);
    const std::vector<double> w{1.0, 0.0, 3.0, 0.0};
    b.set_weights(1, c, w);
    REQUIRE(b.at(1, c).size() == 2);
    CHECK(b.at(1, c)[0].probability == 0.25);
    CHECK(b.at(1, c)[1].probability == 0.75);

    std::stringstream table;
    b.save_table(table);
    const auto back = AdversaryBehaviour::load_table(a, 1, table);
    REQUIRE(back.at(1, c).size() == 2);
    CHECK(back.at(1, c)[1].probability == 0.75);

    std::istringstream partial("1 3 3 2 1\n");
    const auto only = AdversaryBehaviour::load_table(a, 1, partial);
    REQUIRE(only.at(1, c).size() == 1);
    CHECK(only.at(1, c)[0].task == tasks[2]);
    CHECK(only.at(1, a.node({0, 2})).size() == 1);

    std::istringstream bad("1 1 1 0 1\n");  // wall tile
    CHECK_THROWS_AS(AdversaryBehaviour::load_table(a, 1, bad), ConfigError);
}

TEST_CASE("directional rows override the location row for one arrival direction") {
    const Arena a = parse_grid_map(kPlus);
    const NodeId c = a.node({2, 2});
    const NodeId north = a.node({2, 1});
    auto b = uniform_behaviour(a, 1);
    const std::vector<double> w{0.0, 0.0, 1.0, 0.0};
    b.set_directional_weights(1, c, north, w);
    CHECK(b.at(1, c).size() == 4);
    CHECK(b.at(1, c, a.node({1, 2})).size() == 4);
    REQUIRE(b.at(1, c, north).size() == 1);
    CHECK(b.at(1, c, north)[0].task == a.tasks_at(c)[2]);
    CHECK_THROWS_AS(b.set_directional_weights(1, c, a.node({2, 4}), w), ConfigError);

    std::stringstream table;
    b.save_table(table);
    const auto back = AdversaryBehaviour::load_table(a, 1, table);
    REQUIRE(back.at(1, c, north).size() == 1);
    CHECK(back.at(1, c, north)[0].task == a.tasks_at(c)[2]);
    CHECK(back.at(1, c).size() == 4);

    // The MDP picks the row from the footprint's neck.
    const SafetyMdp mdp(a, b);
    WorldState s = WorldState::with_trails({{a.node({0, 2}), a.node({1, 2})}, {c, north}});
    s.turn = 1;
    const auto d = mdp.adversary_distribution(s, 1);
    REQUIRE(d.size() == 1);
    CHECK(d[0].task == a.tasks_at(c)[2]);
}

TEST_CASE("reversal filter and pickups") {
    const Arena a = parse_grid_map(kPlus);
    const auto b = uniform_behaviour(a, 1);
    const PickupTable pickups{{a.node({2, 3})}, {}};
    const SafetyMdp mdp(a, b, pickups);
    const NodeId c = a.node({2, 2});
    // Avatar at the centre having come from the north, adversary parked west.
    WorldState s = WorldState::with_trails({{c, a.node({2, 1}), a.node({2, 0})}, {a.node({0, 2}), a.node({1, 2})}});
    s.pickups = {1u, 0u};
    const auto acts = mdp.available_actions(s);
    CHECK(acts.size() == 3);
    for (const auto& act : acts) CHECK(a.task(act.task).path[1] != a.node({2, 1}));

    // Heading south eats the pickup: the trail grows, the tail stays.
    TaskId south = kNoTask;
    for (const auto& act : acts) {
        if (a.task(act.task).end() == a.node({2, 4})) south = act.task;
    }
    REQUIRE(south != kNoTask);
    WorldState t = mdp.step(s, ActionLabel::choose(south))[0].state;
    t = mdp.step(t, ActionLabel::move())[0].state;
    CHECK(t.pickups[0] == 0u);
    const auto trail = t.trail(0);
    CHECK(std::vector<NodeId>(trail.begin(), trail.end()) ==
          std::vector<NodeId>{a.node({2, 3}), c, a.node({2, 1}), a.node({2, 0})});
    CHECK_FALSE(footprint_collision(t));

    // The adversary at its dead end may only reverse; the filter keeps it.
    const auto adv = mdp.adversary_distribution(t, 1);
    REQUIRE(adv.size() == 1);
    CHECK(adv[0].probability == 1.0);
}

TEST_CASE("collision predicates") {
    WorldState s = WorldState::with_trails({{1, 2, 3}, {5, 1, 7}});
    CHECK_FALSE(head_collision(s));
    CHECK(footprint_collision(s));  // adversary body at position 1 holds the avatar head
    s = WorldState::with_trails({{1, 2, 1}, {5, 6}});
    CHECK(footprint_collision(s));
    s = WorldState::with_trails({{1, 2}, {1, 6}});
    CHECK(head_collision(s));
    s = WorldState::with_trails({{1, 2}, {4, 6}});
    CHECK_FALSE(footprint_collision(s));
}

TEST_CASE("random walks: distributions, turn fairness and queue soundness") {
    std::mt19937_64 rng(11);
    int maps = 0;
    while (maps < 100) {
        auto parsed = oracle::random_map(rng, 7, 7);
        if (!parsed) continue;
        ++maps;
        const Arena& a = *parsed;
        const int m = 1 + maps % 2;
        const auto b = uniform_behaviour(a, m);
        const SafetyMdp mdp(a, b);
        std::vector<NodeId> pos;
        std::uniform_int_distribution<int> pick(0, static_cast<int>(a.node_count()) - 1);
        for (int i = 0; i <= m; ++i) pos.push_back(static_cast<NodeId>(pick(rng)));
        WorldState s = WorldState::at_positions(pos);
        for (int i = 0; i <= m; ++i) s.queues[i] = oracle::random_queue(a, pos[i], rng);
        mdp.validate(s);

        int expected_turn = s.turn;
        for (int stepno = 0; stepno < 60; ++stepno) {
            const auto acts = mdp.available_actions(s);
            REQUIRE_FALSE(acts.empty());
            const auto act = acts[std::uniform_int_distribution<std::size_t>(0, acts.size() - 1)(rng)];
            const auto d = mdp.step(s, act);
            CHECK(std::abs(total(d) - 1.0) <= kProbabilityTolerance);
            for (const auto& o : d) CHECK(o.probability > 0.0);
            if (act.kind != ActionLabel::Kind::AdvDecision) CHECK(d.size() == 1);
            std::vector<double> w;
            for (const auto& o : d) w.push_back(o.probability);
            std::discrete_distribution<std::size_t> draw(w.begin(), w.end());
            s = d[draw(rng)].state;
            mdp.validate(s);
            if (act.kind == ActionLabel::Kind::Move) expected_turn = (expected_turn + 1) % (m + 1);
            CHECK(s.turn == expected_turn);
        }
    }
}
