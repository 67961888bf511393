#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "oshield/arena.hpp"
#include "oshield/dynamics.hpp"
#include "oshield/shielding.hpp"

namespace oshield {

enum class Colour { Green, Yellow, Orange, Red };

/// Green iff 0, then thirds. Throws ConfigError outside [0,1].
Colour colour_bin(double value);
std::string_view colour_name(Colour c);

enum class GameStatus { Running, AvatarWin, AdversaryWin, Tie };
enum class EndCause { None, Apples, Collision, HeadOn };

std::string_view status_name(GameStatus s);
std::string_view cause_name(EndCause c);

inline constexpr int kSnakes = 2;
inline constexpr int kAdversarySnake = 1;

/// Occupied tiles of one snake, head first.
struct SnakeBody {
    std::vector<NodeId> tiles;

    NodeId head() const { return tiles.front(); }
    NodeId tail() const { return tiles.back(); }
    std::size_t length() const { return tiles.size(); }
    bool occupies(NodeId n) const;
    /// Decision locations under the body, head to tail.
    std::vector<NodeId> covered_crossings(const Arena& arena) const;

    friend bool operator==(const SnakeBody&, const SnakeBody&) = default;
};

struct SnakeConfig {
    int length = 4;
    int apples = 5;  // per snake, at most 32
    std::uint64_t max_ticks = 5000;
};

struct GameState {
    std::array<SnakeBody, kSnakes> snakes;
    std::array<QueueRef, kSnakes> queues;
    std::array<std::vector<NodeId>, kSnakes> apple_sites;  // fixed at spawn
    std::array<std::uint32_t, kSnakes> apples_left{};       // bitmask over apple_sites
    std::uint64_t tick = 0;
    GameStatus status = GameStatus::Running;
    EndCause cause = EndCause::None;

    std::vector<NodeId> apples(int snake) const;
    int apples_remaining(int snake) const;
    bool running() const { return status == GameStatus::Running; }
    /// Head at a decision location with nothing queued.
    bool needs_decision(int snake) const { return running() && queues[snake].empty(); }

    friend bool operator==(const GameState&, const GameState&) = default;
};

/// Events of one tick.
struct TickReport {
    std::array<bool, kSnakes> ate{};
    std::array<TaskId, kSnakes> chosen{kNoTask, kNoTask};
};

/// All-pairs corridor-graph distances in tiles.
class DistanceTable {
public:
    explicit DistanceTable(const Arena& arena);
    int operator()(NodeId a, NodeId b) const { return dist_[static_cast<std::size_t>(a) * n_ + b]; }

private:
    std::size_t n_;
    std::vector<int> dist_;
};

/// Snake rules on one arena. Stateless; GameState values are advanced by copy.
class SnakeGame {
public:
    SnakeGame(const Arena& arena, SnakeConfig config = {});

    const Arena& arena() const { return *arena_; }
    const SnakeConfig& config() const { return config_; }
    const DistanceTable& distances() const { return distances_; }

    /// Both snakes mid-corridor, apples uniform over free corridor tiles.
    GameState spawn(std::mt19937_64& rng) const;

    /// Task(head) minus the reversal into the neck (kept when it is the only way out).
    std::vector<TaskId> legal_tasks(const GameState& g, int snake = kAvatar) const;

    /// One tick: avatar moves, then the adversary. A task must be supplied
    /// exactly when that snake needs a decision.
    GameState advance(const GameState& g, std::optional<TaskId> avatar_task, std::optional<TaskId> adversary_task,
                      TickReport* report = nullptr) const;

    /// Heads as positions, bodies as footprints, remaining apples as pickups; avatar to move.
    WorldState to_world_state(const GameState& g) const;
    PickupTable pickups(const GameState& g) const;

    /// Shortest number of moves to reach the nearest remaining own apple after starting with `t`.
    int task_score(const GameState& g, int snake, TaskId t) const;
    /// Distance from the head to the nearest remaining own apple; -1 when none is left.
    int apple_distance(const GameState& g, int snake) const;

private:
    void move(GameState& g, int snake, std::optional<TaskId> task, TickReport* report) const;

    const Arena* arena_;
    SnakeConfig config_;
    DistanceTable distances_;
};

/// Greedy controller as a behaviour table for the adversary snake: uniform
/// over the tasks minimising task_score, per location and per arrival direction.
AdversaryBehaviour greedy_behaviour(const SnakeGame& game, const GameState& g);

/// Greedy tables for every set of remaining adversary apples, built on
/// demand. Lets the model follow the adversary as it retargets after eating.
/// Safe to query from several threads.
class GreedyBehaviours {
public:
    GreedyBehaviours(const SnakeGame& game, GameState start);

    const AdversaryBehaviour& operator()(std::uint32_t remaining) const;
    std::size_t cached() const;

private:
    const SnakeGame* game_;
    GameState base_;
    mutable std::mutex mutex_;
    mutable std::unordered_map<std::uint32_t, std::unique_ptr<const AdversaryBehaviour>> tables_;
};

/// Safety model of a game against the greedy adversary.
SafetyMdp greedy_model(const SnakeGame& game, const GameState& g, std::shared_ptr<const GreedyBehaviours> greedy);

struct ShieldSettings {
    bool enabled = false;
    ThresholdPolicy policy = AbsoluteThreshold{0.01};
    int horizon = 15;
    Execution execution = Execution::Serial;
};

/// Shield in force for one avatar decision.
struct DecisionShield {
    Shield shield;
    bool rerooted = false;  // taken from the background analysis
    double compute_ms = 0.0;
    double wait_ms = 0.0;
};

struct ShieldStats {
    int decisions = 0;
    int rerooted = 0;
    int recomputed = 0;  // valued at the decision itself
    int waits = 0;
    int fallbacks = 0;
    double compute_ms = 0.0;
    double wait_ms = 0.0;
};

/// A game against the greedy adversary with an optional online shield for the
/// avatar. The shield for the next decision is computed in the background as
/// soon as the avatar commits to a task and re-rooted at the decision state.
class Match {
public:
    Match(const SnakeGame& game, GameState start, ShieldSettings shield, std::uint64_t adversary_seed);
    ~Match();
    Match(const Match&) = delete;
    Match& operator=(const Match&) = delete;

    const SnakeGame& game() const { return *game_; }
    const GameState& state() const { return state_; }
    bool over() const;
    bool avatar_deciding() const { return state_.needs_decision(kAvatar); }
    std::vector<TaskId> legal() const { return game_->legal_tasks(state_, kAvatar); }
    const ShieldSettings& settings() const { return settings_; }
    const ShieldStats& stats() const { return stats_; }
    /// Greedy table in force for the adversary's current apples.
    const AdversaryBehaviour& behaviour() const { return (*greedy_)(state_.apples_left[kAdversarySnake]); }
    std::shared_ptr<const GreedyBehaviours> greedy() const { return greedy_; }

    /// Shield for the pending avatar decision; blocks on the background job.
    const DecisionShield& decision_shield();
    /// Legal tasks the shield allows (all legal tasks when shielding is off).
    std::vector<TaskId> allowed();

    /// One tick. The adversary follows the greedy behaviour unless overridden.
    TickReport tick(std::optional<TaskId> avatar_task, std::optional<TaskId> adversary_override = std::nullopt);

private:
    void launch(const WorldState& root);

    const SnakeGame* game_;
    GameState state_;
    ShieldSettings settings_;
    std::mt19937_64 rng_;
    std::shared_ptr<const GreedyBehaviours> greedy_;

    struct Pending;
    std::unique_ptr<Pending> pending_;
    std::optional<DecisionShield> current_;
    ShieldStats stats_;
};

/// Per-tick JSON-lines game log.
void write_log_header(std::ostream& os, const SnakeGame& game, const GameState& start, std::uint64_t seed);
void write_log_tick(std::ostream& os, const SnakeGame& game, const GameState& g, const DecisionShield* shield);

/// Bundled map directory and lookup by name ("map1" -> assets/maps/map1.txt).
std::string asset_map_dir();
std::vector<std::string> bundled_maps();
Arena load_bundled_map(const std::string& name_or_path);

}  // namespace oshield
