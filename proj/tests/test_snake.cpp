#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oshield/error.hpp"
#include "oshield/snake.hpp"

using namespace oshield;

namespace {

// Crossings at odd coordinates, corridors of two moves.
constexpr const char* kLattice =
    "#######\n"
    "#.....#\n"
    "#.#.#.#\n"
    "#.....#\n"
    "#.#.#.#\n"
    "#.....#\n"
    "#######\n";

constexpr const char* kTee =
    ".....\n"
    "##.##\n"
    "##.##\n";

std::vector<NodeId> tiles(const Arena& a, std::initializer_list<Location> locs) {
    std::vector<NodeId> out;
    for (auto l : locs) out.push_back(a.node(l));
    return out;
}

QueueRef along(const Arena& a, Location from, Location to, std::size_t at = 0) {
    const auto [t, k] = a.task_through(a.node(from), a.node(to));
    return {t, static_cast<std::uint16_t>(k + at)};
}

GameState make_state(std::vector<NodeId> avatar, QueueRef q0, std::vector<NodeId> adversary, QueueRef q1,
                     std::vector<NodeId> apples0 = {}, std::vector<NodeId> apples1 = {}) {
    GameState g;
    g.snakes[0].tiles = std::move(avatar);
    g.snakes[1].tiles = std::move(adversary);
    g.queues = {q0, q1};
    g.apple_sites = {std::move(apples0), std::move(apples1)};
    for (int i = 0; i < kSnakes; ++i) g.apples_left[i] = (1u << g.apple_sites[i].size()) - 1u;
    return g;
}

bool contiguous(const Arena& a, const SnakeBody& b) {
    for (std::size_t k = 1; k < b.tiles.size(); ++k) {
        if (!a.has_edge(b.tiles[k - 1], b.tiles[k])) return false;
    }
    return true;
}

std::optional<TaskId> random_task(const SnakeGame& game, const GameState& g, int snake, std::mt19937_64& rng) {
    if (!g.needs_decision(snake)) return std::nullopt;
    const auto legal = game.legal_tasks(g, snake);
    return legal[std::uniform_int_distribution<std::size_t>(0, legal.size() - 1)(rng)];
}

}  // namespace

TEST_CASE("colour bins") {
    CHECK(colour_bin(0.0) == Colour::Green);
    CHECK(colour_bin(1e-12) == Colour::Yellow);
    CHECK(colour_bin(1.0 / 3.0) == Colour::Yellow);
    CHECK(colour_bin(0.34) == Colour::Orange);
    CHECK(colour_bin(0.5) == Colour::Orange);
    CHECK(colour_bin(2.0 / 3.0) == Colour::Orange);
    CHECK(colour_bin(0.67) == Colour::Red);
    CHECK(colour_bin(1.0) == Colour::Red);
    CHECK_THROWS_AS(colour_bin(-0.01), ConfigError);
    CHECK_THROWS_AS(colour_bin(1.01), ConfigError);
    CHECK_THROWS_AS(colour_bin(std::nan("")), ConfigError);
    CHECK(colour_name(Colour::Orange) == "orange");
}

TEST_CASE("legal tasks drop the reversal") {
    SUBCASE("four-way crossing") {
        const Arena a = parse_grid_map(kLattice);
        const SnakeGame game(a);
        const auto g = make_state(tiles(a, {{3, 3}, {3, 2}, {3, 1}}), {}, tiles(a, {{1, 5}, {2, 5}}), {});
        const auto legal = game.legal_tasks(g);
        CHECK(legal.size() == 3);
        for (TaskId t : legal) CHECK(a.task(t).path[1] != a.node({3, 2}));
    }
    SUBCASE("corner") {
        const Arena a = parse_grid_map(kLattice);
        const SnakeGame game(a);
        const auto g = make_state(tiles(a, {{1, 1}, {2, 1}}), {}, tiles(a, {{5, 5}, {4, 5}}), {});
        const auto legal = game.legal_tasks(g);
        REQUIRE(legal.size() == 1);
        CHECK(a.task(legal[0]).end() == a.node({1, 3}));
    }
    SUBCASE("T-junction from the stem") {
        const Arena a = parse_grid_map(kTee);
        const SnakeGame game(a, {2, 1, 100});
        const auto g = make_state(tiles(a, {{2, 0}, {2, 1}}), {}, tiles(a, {{0, 0}, {1, 0}}), {});
        const auto legal = game.legal_tasks(g);
        REQUIRE(legal.size() == 2);
        std::set<NodeId> ends;
        for (TaskId t : legal) ends.insert(a.task(t).end());
        CHECK(ends == std::set<NodeId>{a.node({0, 0}), a.node({4, 0})});
    }
    SUBCASE("head in a corridor") {
        const Arena a = parse_grid_map(kLattice);
        const SnakeGame game(a);
        const auto g = make_state(tiles(a, {{2, 1}, {1, 1}}), {}, tiles(a, {{5, 5}, {4, 5}}), {});
        CHECK_THROWS_AS(game.legal_tasks(g), ConfigError);
    }
}

TEST_CASE("advance") {
    const Arena a = parse_grid_map(kLattice);
    const SnakeGame game(a, {3, 2, 100});

    SUBCASE("eating grows the snake and removes the apple") {
        const auto g = make_state(tiles(a, {{2, 1}, {1, 1}, {1, 2}}), along(a, {1, 1}, {2, 1}, 1),
                                  tiles(a, {{5, 4}, {5, 5}, {4, 5}}), along(a, {5, 5}, {5, 4}, 1),
                                  tiles(a, {{3, 1}, {5, 1}}), tiles(a, {{1, 5}, {3, 5}}));
        TickReport r;
        const auto n = game.advance(g, std::nullopt, std::nullopt, &r);
        CHECK(r.ate[0]);
        CHECK_FALSE(r.ate[1]);
        CHECK(n.snakes[0].tiles == tiles(a, {{3, 1}, {2, 1}, {1, 1}, {1, 2}}));
        CHECK(n.snakes[1].tiles == tiles(a, {{5, 3}, {5, 4}, {5, 5}}));
        CHECK(n.apples(0) == tiles(a, {{5, 1}}));
        CHECK(n.apples_remaining(1) == 2);
        CHECK(n.running());
        CHECK(n.tick == 1);
        CHECK(n.needs_decision(0));
    }
    SUBCASE("heads meeting on one tile tie") {
        const auto g = make_state(tiles(a, {{2, 1}, {1, 1}, {1, 2}}), along(a, {1, 1}, {2, 1}, 1),
                                  tiles(a, {{4, 1}, {5, 1}, {5, 2}}), along(a, {5, 1}, {4, 1}, 1));
        const auto n = game.advance(g, std::nullopt, std::nullopt);
        CHECK(n.status == GameStatus::Tie);
        CHECK(n.cause == EndCause::HeadOn);
        CHECK(n.snakes[0].head() == n.snakes[1].head());
    }
    SUBCASE("avatar into the adversary body loses") {
        const auto g = make_state(tiles(a, {{3, 2}, {3, 3}, {3, 4}}), along(a, {3, 3}, {3, 2}, 1),
                                  tiles(a, {{4, 1}, {3, 1}, {2, 1}}), along(a, {3, 1}, {4, 1}, 1));
        const auto n = game.advance(g, std::nullopt, std::nullopt);
        CHECK(n.status == GameStatus::AdversaryWin);
        CHECK(n.cause == EndCause::Collision);
        CHECK(n.tick == 1);
        // The adversary does not move once the game is decided.
        CHECK(n.snakes[1] == g.snakes[1]);
    }
    SUBCASE("adversary into the avatar body loses") {
        const auto g = make_state(tiles(a, {{4, 1}, {3, 1}, {2, 1}}), along(a, {3, 1}, {4, 1}, 1),
                                  tiles(a, {{3, 2}, {3, 3}, {3, 4}}), along(a, {3, 3}, {3, 2}, 1));
        const auto n = game.advance(g, std::nullopt, std::nullopt);
        CHECK(n.status == GameStatus::AvatarWin);
        CHECK(n.cause == EndCause::Collision);
    }
    SUBCASE("the last apple wins") {
        auto g = make_state(tiles(a, {{2, 1}, {1, 1}, {1, 2}}), along(a, {1, 1}, {2, 1}, 1),
                            tiles(a, {{5, 4}, {5, 5}, {4, 5}}), along(a, {5, 5}, {5, 4}, 1), tiles(a, {{3, 1}, {5, 1}}),
                            tiles(a, {{1, 5}, {3, 5}}));
        g.apples_left[0] = 0b01;
        const auto n = game.advance(g, std::nullopt, std::nullopt);
        CHECK(n.status == GameStatus::AvatarWin);
        CHECK(n.cause == EndCause::Apples);
        CHECK(n.apples_remaining(0) == 0);
        CHECK(n.apples_remaining(1) == 2);
    }
    SUBCASE("tasks exactly when needed") {
        const auto g = make_state(tiles(a, {{3, 3}, {3, 2}, {3, 1}}), {}, tiles(a, {{5, 4}, {5, 5}, {4, 5}}),
                                  along(a, {5, 5}, {5, 4}, 1));
        CHECK_THROWS_AS(game.advance(g, std::nullopt, std::nullopt), InvariantViolation);
        const TaskId back = a.task_through(a.node({3, 3}), a.node({3, 2})).first;
        CHECK_THROWS_AS(game.advance(g, back, std::nullopt), InvariantViolation);
        const TaskId any = game.legal_tasks(g)[0];
        CHECK_THROWS_AS(game.advance(g, any, any), InvariantViolation);
        TickReport r;
        const auto n = game.advance(g, any, std::nullopt, &r);
        CHECK(r.chosen[0] == any);
        CHECK(r.chosen[1] == kNoTask);
        CHECK(n.snakes[0].head() == a.task(any).path[1]);
        auto over = n;
        over.status = GameStatus::Tie;
        CHECK_THROWS_AS(game.advance(over, std::nullopt, std::nullopt), InvariantViolation);
    }
}

TEST_CASE("spawn") {
    const Arena a = load_bundled_map("map1");
    const SnakeGame game(a);
    std::mt19937_64 rng(7);
    for (int k = 0; k < 50; ++k) {
        const GameState g = game.spawn(rng);
        std::set<NodeId> used;
        for (int i = 0; i < kSnakes; ++i) {
            const auto& body = g.snakes[i];
            CHECK(body.length() == 4);
            CHECK(contiguous(a, body));
            CHECK_FALSE(a.is_decision(body.head()));
            CHECK_FALSE(g.queues[i].empty());
            CHECK(a.task(g.queues[i].task).path[g.queues[i].at] == body.head());
            used.insert(body.tiles.begin(), body.tiles.end());
        }
        CHECK(used.size() == 8);
        for (int i = 0; i < kSnakes; ++i) {
            CHECK(g.apples_remaining(i) == 5);
            for (NodeId n : g.apple_sites[i]) CHECK(used.insert(n).second);
        }
        const WorldState s = game.to_world_state(g);
        CHECK_FALSE(is_decision_state(s));
        const auto b = greedy_behaviour(game, g);
        SafetyMdp(a, b, game.pickups(g)).validate(s);
    }
    CHECK_THROWS_AS(SnakeGame(a, {1, 5, 10}), ConfigError);
    CHECK_THROWS_AS(SnakeGame(a, {4, 33, 10}), ConfigError);
    const Arena tiny = parse_grid_map(kTee);
    CHECK_THROWS_AS(SnakeGame(tiny, {2, 5, 10}).spawn(rng), ConfigError);
}

TEST_CASE("body bookkeeping") {
    const Arena a = parse_grid_map(kLattice);
    SnakeBody b{tiles(a, {{3, 2}, {3, 1}, {2, 1}, {1, 1}, {1, 2}})};
    CHECK(b.head() == a.node({3, 2}));
    CHECK(b.tail() == a.node({1, 2}));
    CHECK(b.covered_crossings(a) == tiles(a, {{3, 1}, {1, 1}}));
    const DistanceTable d(a);
    CHECK(d(a.node({1, 1}), a.node({5, 5})) == 8);
    CHECK(d(a.node({2, 1}), a.node({2, 1})) == 0);
    CHECK(d(a.node({2, 1}), a.node({4, 3})) == 4);
}

TEST_CASE("random play keeps bodies and apples consistent") {
    const Arena a = load_bundled_map("map1");
    const SnakeGame game(a, {6, 4, 400});
    std::mt19937_64 rng(11);
    for (int k = 0; k < 100; ++k) {
        GameState g = game.spawn(rng);
        while (g.running() && g.tick < 400) {
            const auto t0 = random_task(game, g, 0, rng);
            const auto t1 = random_task(game, g, 1, rng);
            TickReport r;
            const GameState n = game.advance(g, t0, t1, &r);
            for (int i = 0; i < kSnakes; ++i) {
                CHECK(contiguous(a, n.snakes[i]));
                CHECK(n.snakes[i].length() == g.snakes[i].length() + (r.ate[i] ? 1 : 0));
                CHECK((n.apples_left[i] & ~g.apples_left[i]) == 0u);
                CHECK(n.apples_remaining(i) == g.apples_remaining(i) - (r.ate[i] ? 1 : 0));
            }
            g = n;
        }
    }
}

TEST_CASE("collision predicate matches the board") {
    const Arena a = load_bundled_map("map1");
    const SnakeGame game(a);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> node(0, static_cast<int>(a.node_count()) - 1);
    auto random_body = [&](std::size_t len) {
        std::vector<NodeId> body{static_cast<NodeId>(node(rng))};
        while (body.size() < len) {
            const auto nb = a.neighbours(body.back());
            body.push_back(nb[std::uniform_int_distribution<std::size_t>(0, nb.size() - 1)(rng)]);
        }
        return body;
    };
    int hits = 0;
    for (int k = 0; k < 1000; ++k) {
        GameState g;
        g.snakes[0].tiles = random_body(std::uniform_int_distribution<std::size_t>(2, 8)(rng));
        g.snakes[1].tiles = random_body(std::uniform_int_distribution<std::size_t>(2, 8)(rng));
        // Pull the other head next to the avatar half of the time.
        if (k % 2 == 0) {
            const auto& body = g.snakes[1].tiles;
            g.snakes[0].tiles[0] = body[std::uniform_int_distribution<std::size_t>(0, body.size() - 1)(rng)];
        }
        const auto& me = g.snakes[0].tiles;
        const auto& other = g.snakes[1].tiles;
        const NodeId head = me[0];
        const bool board = std::find(other.begin(), other.end(), head) != other.end() ||
                           std::find(me.begin() + 1, me.end(), head) != me.end();
        hits += board;
        CHECK(footprint_collision(game.to_world_state(g)) == board);
    }
    CHECK(hits > 400);
}

TEST_CASE("losses happen exactly when the model flags a collision") {
    const Arena a = load_bundled_map("map1");
    const SnakeGame game(a, {8, 5, 300});
    std::mt19937_64 rng(5);
    int losses = 0;
    for (int k = 0; k < 200; ++k) {
        GameState g = game.spawn(rng);
        while (g.running() && g.tick < 300) {
            const auto t0 = random_task(game, g, 0, rng);
            const auto t1 = random_task(game, g, 1, rng);
            const auto b = greedy_behaviour(game, g);
            const SafetyMdp mdp(a, b, game.pickups(g));
            WorldState s = game.to_world_state(g);
            if (t0) s = mdp.step(s, ActionLabel::choose(*t0))[0].state;
            const WorldState x = mdp.step(s, ActionLabel::move())[0].state;
            WorldState y = x;
            if (t1) y.queues[1] = {*t1, 0};
            y = mdp.step(y, ActionLabel::move())[0].state;

            const GameState n = game.advance(g, t0, t1);
            const bool lost = n.status == GameStatus::Tie ||
                              (n.status == GameStatus::AdversaryWin && n.cause == EndCause::Collision);
            const bool avatar_done = !n.running() && n.snakes[1] == g.snakes[1];
            const bool flagged = footprint_collision(x) || (!avatar_done && footprint_collision(y));
            CHECK(lost == flagged);
            losses += lost;
            if (n.running()) {
                WorldState expect = game.to_world_state(n);
                CHECK(y == expect);
            }
            g = n;
        }
    }
    CHECK(losses > 20);
}

TEST_CASE("greedy behaviour") {
    const Arena a = load_bundled_map("map1");
    const SnakeGame game(a);
    std::mt19937_64 rng(9);
    for (int k = 0; k < 20; ++k) {
        GameState g = game.spawn(rng);
        const GreedyBehaviours cache(game, g);
        while (g.running() && g.tick < 200) {
            if (g.needs_decision(1)) {
                const auto b = greedy_behaviour(game, g);
                const SafetyMdp mdp(a, b, game.pickups(g));
                const auto dist = mdp.adversary_distribution(game.to_world_state(g), 1);
                const auto legal = game.legal_tasks(g, 1);
                int best = std::numeric_limits<int>::max();
                for (TaskId t : legal) best = std::min(best, game.task_score(g, 1, t));
                std::size_t winners = 0;
                for (TaskId t : legal) winners += game.task_score(g, 1, t) == best;
                CHECK(dist.size() == winners);
                for (const auto& c : dist) {
                    CHECK(game.task_score(g, 1, c.task) == best);
                    CHECK(c.probability == doctest::Approx(1.0 / static_cast<double>(winners)));
                }
                const auto model = greedy_model(game, g, std::make_shared<const GreedyBehaviours>(game, g));
                CHECK(model.adversary_distribution(game.to_world_state(g), 1) == dist);
                const auto& cached = cache(g.apples_left[1]);
                const NodeId v = g.snakes[1].head();
                const auto x = cached.at(1, v, g.snakes[1].tiles[1]);
                const auto y = b.at(1, v, g.snakes[1].tiles[1]);
                CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
            }
            const auto t0 = random_task(game, g, 0, rng);
            const auto t1 = random_task(game, g, 1, rng);
            g = game.advance(g, t0, t1);
        }
    }
}

TEST_CASE("task score and apple distance") {
    const Arena a = parse_grid_map(kLattice);
    const SnakeGame game(a, {2, 1, 10});
    const auto g = make_state(tiles(a, {{3, 3}, {3, 2}}), {}, tiles(a, {{1, 1}, {2, 1}}), {}, tiles(a, {{5, 3}}),
                              tiles(a, {{1, 2}}));
    const TaskId right = a.task_through(a.node({3, 3}), a.node({4, 3})).first;
    const TaskId down = a.task_through(a.node({3, 3}), a.node({3, 4})).first;
    CHECK(game.task_score(g, 0, right) == 2);
    CHECK(game.task_score(g, 0, down) == 6);
    CHECK(game.apple_distance(g, 0) == 2);
    CHECK(game.apple_distance(g, 1) == 1);
    auto none = g;
    none.apples_left[0] = 0;
    CHECK(game.apple_distance(none, 0) == -1);
}

TEST_CASE("shielded match") {
    const Arena a = load_bundled_map("map1");
    const SnakeGame game(a);
    std::mt19937_64 rng(21);
    for (const auto execution : {Execution::Serial, Execution::Parallel}) {
        for (int k = 0; k < 10; ++k) {
            ShieldSettings settings{true, AbsoluteThreshold{0.01}, 10, execution};
            Match m(game, game.spawn(rng), settings, rng());
            while (!m.over()) {
                std::optional<TaskId> t;
                if (m.avatar_deciding()) {
                    const DecisionShield& d = m.decision_shield();
                    CHECK(&m.decision_shield() == &d);
                    const auto fresh = decision_valuation(greedy_model(game, m.state(), m.greedy()),
                                                          game.to_world_state(m.state()), 10, footprint_collision);
                    REQUIRE(fresh.values.size() == d.shield.valuation.values.size());
                    for (std::size_t j = 0; j < fresh.values.size(); ++j) {
                        CHECK(fresh.values[j].first == d.shield.valuation.values[j].first);
                        CHECK(fresh.values[j].second == doctest::Approx(d.shield.valuation.values[j].second).epsilon(1e-9));
                    }
                    const auto allowed = m.allowed();
                    const auto legal = m.legal();
                    REQUIRE_FALSE(allowed.empty());
                    for (TaskId x : allowed) CHECK(std::find(legal.begin(), legal.end(), x) != legal.end());
                    t = allowed[rng() % allowed.size()];
                } else {
                    CHECK_THROWS_AS(m.decision_shield(), InvariantViolation);
                }
                m.tick(t);
            }
            const auto& s = m.stats();
            CHECK(s.decisions == s.rerooted + s.recomputed);
            CHECK(s.rerooted > 0);
            CHECK_THROWS_AS(m.tick(std::nullopt), InvariantViolation);
        }
    }
}

TEST_CASE("unshielded match and overrides") {
    const Arena a = parse_grid_map(kLattice);
    const SnakeGame game(a, {3, 2, 50});
    const auto start = make_state(tiles(a, {{2, 1}, {1, 1}, {1, 2}}), along(a, {1, 1}, {2, 1}, 1),
                                  tiles(a, {{5, 4}, {5, 5}, {4, 5}}), along(a, {5, 5}, {5, 4}, 1),
                                  tiles(a, {{1, 5}, {3, 5}}), tiles(a, {{1, 3}, {5, 1}}));
    Match m(game, start, {}, 1);
    CHECK_THROWS_AS(m.decision_shield(), InvariantViolation);
    CHECK_THROWS_AS(m.tick(std::nullopt, 0), InvariantViolation);
    m.tick(std::nullopt);
    REQUIRE(m.avatar_deciding());
    CHECK(m.allowed() == m.legal());
    const auto adv = game.legal_tasks(m.state(), 1);
    m.tick(m.legal()[0], adv.back());
    CHECK(m.state().queues[1].task == adv.back());
    const auto& b = m.behaviour();
    CHECK(b.adversaries() == 1);
    CHECK_THROWS_AS(Match(game, start, {true, AbsoluteThreshold{2.0}, 5, Execution::Serial}, 1), ConfigError);
    CHECK_THROWS_AS(Match(game, start, {true, AbsoluteThreshold{0.1}, 0, Execution::Serial}, 1), ConfigError);
}

TEST_CASE("game log") {
    const Arena a = parse_grid_map(kLattice);
    const SnakeGame game(a, {3, 2, 50});
    const auto g = make_state(tiles(a, {{2, 1}, {1, 1}, {1, 2}}), along(a, {1, 1}, {2, 1}, 1),
                              tiles(a, {{5, 4}, {5, 5}, {4, 5}}), along(a, {5, 5}, {5, 4}, 1),
                              tiles(a, {{1, 5}, {3, 5}}), tiles(a, {{1, 3}, {5, 1}}));
    std::ostringstream os;
    write_log_header(os, game, g, 42);
    DecisionShield d;
    d.shield = shield_absolute(TaskValuation{{{0, 0.0}, {1, 0.5}}, 0.0}, 0.01);
    write_log_tick(os, game, g, &d);
    write_log_tick(os, game, g, nullptr);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    const auto header = nlohmann::json::parse(line);
    CHECK(header["seed"] == 42);
    CHECK(header["config"]["length"] == 3);
    CHECK(header["apple_sites"][1][1] == nlohmann::json::array({6, 2}));
    std::getline(in, line);
    const auto tick = nlohmann::json::parse(line);
    CHECK(tick["heads"][0] == nlohmann::json::array({3, 2}));
    CHECK(tick["status"] == "running");
    REQUIRE(tick["shield"].size() == 2);
    CHECK(tick["shield"][0]["colour"] == "green");
    CHECK(tick["shield"][0]["allowed"] == true);
    CHECK(tick["shield"][1]["colour"] == "orange");
    CHECK(tick["shield"][1]["allowed"] == false);
    std::getline(in, line);
    CHECK_FALSE(nlohmann::json::parse(line).contains("shield"));
}

TEST_CASE("bundled maps") {
    const auto names = bundled_maps();
    for (const char* want : {"map1", "fig1", "plus", "twin"}) {
        CHECK(std::find(names.begin(), names.end(), want) != names.end());
    }
    CHECK(load_bundled_map("fig1").node_count() == 19);
    CHECK(load_bundled_map(asset_map_dir() + "/plus.txt").node_count() == 9);
    CHECK_THROWS_AS(load_bundled_map("no-such-map"), ConfigError);
}
