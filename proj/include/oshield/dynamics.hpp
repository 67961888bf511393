#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "oshield/arena.hpp"

namespace oshield {

inline constexpr int kAvatar = 0;

/// Remaining activities of an agent: the suffix of `task` starting at path index `at`.
struct QueueRef {
    TaskId task = kNoTask;
    std::uint16_t at = 0;

    bool empty() const { return task == kNoTask; }
    friend auto operator<=>(const QueueRef&, const QueueRef&) = default;
};

/// One state of the safety-relevant MDP.
///
/// Agent 0 is the avatar. Optionally every agent drags a footprint (its
/// occupied tiles, head first) and carries a bitmask of still-available
/// growth pickups; both are empty when the model does not use them.
struct WorldState {
    std::vector<NodeId> positions;
    std::vector<QueueRef> queues;
    std::uint8_t turn = 0;
    std::vector<std::uint8_t> footprint_len;
    std::vector<NodeId> footprint;
    std::vector<std::uint32_t> pickups;

    int agents() const { return static_cast<int>(positions.size()); }
    bool has_footprints() const { return !footprint_len.empty(); }
    /// Occupied tiles of agent i, head first. Empty without footprints.
    std::span<const NodeId> trail(int agent) const;

    /// Plain positions, empty queues, avatar to move.
    static WorldState at_positions(std::vector<NodeId> positions);
    /// Positions taken from the trail heads.
    static WorldState with_trails(const std::vector<std::vector<NodeId>>& trails);

    friend bool operator==(const WorldState&, const WorldState&) = default;
    friend std::strong_ordering operator<=>(const WorldState&, const WorldState&) = default;
};

struct WorldStateHash {
    std::size_t operator()(const WorldState& s) const noexcept;
};

std::ostream& operator<<(std::ostream& os, const WorldState& s);

/// Definition-level decision state: avatar's turn and its queue is empty.
bool is_decision_state(const WorldState& s);

struct ActionLabel {
    enum class Kind : std::uint8_t { AdvDecision, Move, Choose };
    Kind kind = Kind::Move;
    TaskId task = kNoTask;  // only for Choose

    static ActionLabel adv_decision() { return {Kind::AdvDecision, kNoTask}; }
    static ActionLabel move() { return {Kind::Move, kNoTask}; }
    static ActionLabel choose(TaskId t) { return {Kind::Choose, t}; }
    friend bool operator==(const ActionLabel&, const ActionLabel&) = default;
};

struct Outcome {
    WorldState state;
    double probability = 0.0;
};
using TransitionDistribution = std::vector<Outcome>;

struct TaskChoice {
    TaskId task;
    double probability;
    friend bool operator==(const TaskChoice&, const TaskChoice&) = default;
};

inline constexpr double kProbabilityTolerance = 1e-12;

/// Per-adversary, per-decision-location distribution over tasks.
/// Adversaries are numbered 1..m to match agent indices.
class AdversaryBehaviour {
public:
    AdversaryBehaviour(const Arena& arena, int adversaries);

    int adversaries() const { return adversaries_; }
    /// Replace the distribution of `adversary` at `v`; validates support and normalisation.
    void set(int adversary, NodeId v, std::vector<TaskChoice> dist);
    /// Same, from non-negative weights; normalised here.
    void set_weights(int adversary, NodeId v, std::span<const double> weights_per_task);
    std::span<const TaskChoice> at(int adversary, NodeId v) const;

    /// Distribution for an agent at `v` whose previous tile was `neck`.
    /// Overrides the location row for that arrival direction only.
    void set_directional(int adversary, NodeId v, NodeId neck, std::vector<TaskChoice> dist);
    void set_directional_weights(int adversary, NodeId v, NodeId neck, std::span<const double> weights_per_task);
    /// Directional row when one is set for `neck`, else the location row.
    std::span<const TaskChoice> at(int adversary, NodeId v, NodeId neck) const;

    /// Uniform over Task(v) at every decision location, for every adversary.
    static AdversaryBehaviour uniform(const Arena& arena, int adversaries);

    /// Weight table: "adversary x y task_index weight [neck_x neck_y]" rows, 1-based
    /// x/y, task index into tasks_at(v) order. Unlisted locations stay uniform.
    static AdversaryBehaviour load_table(const Arena& arena, int adversaries, std::istream& in);
    void save_table(std::ostream& out) const;

private:
    const Arena* arena_;
    int adversaries_;
    std::vector<TaskChoice> checked(int adversary, NodeId v, std::vector<TaskChoice> dist) const;
    std::vector<TaskChoice> normalised(NodeId v, std::span<const double> weights) const;

    std::vector<std::vector<std::vector<TaskChoice>>> dist_;  // [adversary-1][node]
    std::vector<std::vector<std::vector<std::pair<NodeId, std::vector<TaskChoice>>>>> directional_;
};

AdversaryBehaviour uniform_behaviour(const Arena& arena, int adversaries);

/// Growth pickups: for each agent, up to 32 nodes. Stepping onto an
/// available pickup consumes it and extends the footprint by one tile.
using PickupTable = std::vector<std::vector<NodeId>>;

/// The safety-relevant MDP, explored on the fly.
/// Behaviour of an adversary given the bitmask of its remaining pickups.
/// Must return tables with the same adversary count; called concurrently.
using BehaviourSelector = std::function<const AdversaryBehaviour&(int agent, std::uint32_t remaining)>;

class SafetyMdp {
public:
    SafetyMdp(const Arena& arena, const AdversaryBehaviour& behaviour, PickupTable pickups = {},
              BehaviourSelector select = {});

    const Arena& arena() const { return *arena_; }
    const AdversaryBehaviour& behaviour() const { return *behaviour_; }
    const PickupTable& pickups() const { return pickups_; }
    int agents() const { return behaviour_->adversaries() + 1; }

    /// Tasks agent `agent` may start from its position: Task(v), minus the
    /// task reversing into its own footprint when it has one.
    std::vector<TaskId> choosable_tasks(const WorldState& s, int agent) const;
    /// B_i(v) restricted to choosable tasks and renormalised (uniform if no mass remains).
    std::vector<TaskChoice> adversary_distribution(const WorldState& s, int agent) const;

    std::vector<ActionLabel> available_actions(const WorldState& s) const;
    TransitionDistribution step(const WorldState& s, ActionLabel a) const;
    /// Appends outcomes to `out`; avoids reallocation in hot loops.
    void step_into(const WorldState& s, ActionLabel a, TransitionDistribution& out) const;

    /// Validates agent count, positions and queue anchoring; throws InvariantViolation.
    void validate(const WorldState& s) const;

private:
    void apply_move(WorldState& s) const;

    const Arena* arena_;
    const AdversaryBehaviour* behaviour_;
    PickupTable pickups_;
    BehaviourSelector select_;
};

/// Predicate identifying unsafe states (the set T).
using UnsafePredicate = std::function<bool(const WorldState&)>;

/// Avatar shares its tile with any adversary.
bool head_collision(const WorldState& s);
/// head_collision, or the avatar head lies on any occupied footprint tile
/// (its own body excluding the head, or any other agent's body).
bool footprint_collision(const WorldState& s);

}  // namespace oshield
