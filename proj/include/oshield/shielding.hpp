#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <future>
#include <iosfwd>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "oshield/dynamics.hpp"

namespace oshield {

/// Selects the serial reference kernels or the OpenMP ones. Both produce
/// bitwise-identical results.
enum class Execution { Serial, Parallel };

using StateIndex = std::uint32_t;

struct DepthState {
    WorldState state;
    std::uint16_t depth = 0;
    friend bool operator==(const DepthState&, const DepthState&) = default;
};

struct DepthStateHash {
    std::size_t operator()(const DepthState& s) const noexcept {
        return WorldStateHash{}(s.state) * 31u + s.depth;
    }
};

/// Depth-annotated DAG fragment of the safety MDP rooted at the state
/// right after the avatar committed to a task.
///
/// Stored in compressed-row form: state -> actions -> outcomes. Index 0 is
/// the root. Move-only, since states point into the lookup table.
class SubMdp {
public:
    SubMdp() = default;
    SubMdp(SubMdp&&) noexcept = default;
    SubMdp& operator=(SubMdp&&) noexcept = default;
    SubMdp(const SubMdp&) = delete;
    SubMdp& operator=(const SubMdp&) = delete;

    std::size_t size() const { return states_.size(); }
    const WorldState& state(StateIndex i) const { return *states_[i]; }
    int depth(StateIndex i) const { return depth_[i]; }
    int horizon() const { return horizon_; }
    /// Rounds until the avatar's next decision (|t| for a freshly committed task).
    int task_len() const { return task_len_; }
    int depth_bound() const { return task_len_ + horizon_; }

    std::size_t action_count(StateIndex i) const { return action_offset_[i + 1] - action_offset_[i]; }
    std::size_t total_actions() const { return action_label_.size(); }
    std::size_t total_outcomes() const { return outcome_target_.size(); }
    ActionLabel action(StateIndex i, std::size_t k) const { return action_label_[action_offset_[i] + k]; }
    /// Outcome targets and probabilities for action k of state i.
    std::span<const StateIndex> targets(StateIndex i, std::size_t k) const;
    std::span<const double> probabilities(StateIndex i, std::size_t k) const;

    /// S_FD: decision states at depth task_len().
    std::span<const StateIndex> first_decision_states() const { return first_decision_; }
    /// Task(S_FD), sorted.
    std::span<const TaskId> first_decision_tasks() const { return fd_tasks_; }
    /// Tasks available in one first decision state (also for unexpanded ones).
    std::span<const TaskId> tasks_of_first_decision(std::size_t fd_pos) const { return fd_state_tasks_[fd_pos]; }
    /// States were left unexpanded when this predicate held (absorbing violations).
    bool pruned() const { return pruned_; }

    std::optional<StateIndex> find(const WorldState& s, int depth) const;

    friend class SubMdpBuilder;

private:
    std::unordered_map<DepthState, StateIndex, DepthStateHash> index_;
    std::vector<const WorldState*> states_;
    std::vector<std::uint16_t> depth_;
    std::vector<std::uint32_t> action_offset_{0};
    std::vector<ActionLabel> action_label_;
    std::vector<std::uint32_t> outcome_offset_{0};
    std::vector<StateIndex> outcome_target_;
    std::vector<double> outcome_prob_;
    std::vector<StateIndex> first_decision_;
    std::vector<TaskId> fd_tasks_;
    std::vector<std::vector<TaskId>> fd_state_tasks_;
    int horizon_ = 0;
    int task_len_ = 0;
    bool pruned_ = false;
};

struct BuildOptions {
    Execution execution = Execution::Serial;
    /// When set, states satisfying it are not expanded (violation is absorbing).
    UnsafePredicate prune_unsafe;
    std::stop_token stop;
    /// Accept a decision state as root (task_len 0, S_FD is the root itself).
    /// Values the tasks at a decision reached without a cached analysis.
    bool allow_decision_root = false;
};

/// Rounds until `s` reaches the avatar's next decision.
int rounds_until_decision(const Arena& arena, const WorldState& s);

/// Explore all states reachable from (s_t, 0) within depth |t|+h.
SubMdp build_submdp(const SafetyMdp& mdp, const WorldState& s_t, int horizon, const BuildOptions& options = {});

/// Kahn's algorithm over the sub-MDP; throws InvariantViolation on a cycle.
std::vector<StateIndex> topological_order(const SubMdp& sub);

/// Structural checks: acyclic, no decision state below task_len, no
/// transitions at the depth bound, actions everywhere else (unless pruned).
void check_structure(const SubMdp& sub, const UnsafePredicate& unsafe = {});

/// Minimal probability of reaching an unsafe state, for every state.
/// One backward sweep in reverse topological order.
std::vector<double> min_violation_prob(const SubMdp& sub, const UnsafePredicate& unsafe,
                                       Execution execution = Execution::Serial);

/// val(t) for every t in Task(S_FD), and the optimum.
struct TaskValuation {
    std::vector<std::pair<TaskId, double>> values;  // sorted by task
    double optimal = 0.0;

    bool empty() const { return values.empty(); }
    double value(TaskId t) const;
    bool contains(TaskId t) const;
    std::vector<TaskId> argmin() const;
};

/// Fixed analysis of one sub-MDP: unpinned values plus the per-task pinned
/// values above the first decision frontier. Supports re-rooting at any
/// pre-decision state without recomputation.
class ShieldAnalysis {
public:
    ShieldAnalysis(SubMdp sub, UnsafePredicate unsafe, Execution execution = Execution::Serial);

    const SubMdp& sub() const { return sub_; }
    std::span<const double> values() const { return values_; }
    std::span<const std::uint8_t> unsafe_flags() const { return unsafe_; }

    TaskValuation valuation() const { return valuation_at(0); }
    /// Valuation with `state` as the initial state; it must lie above S_FD.
    TaskValuation valuation_at(StateIndex state) const;
    /// Locate an observed world state above the first decision frontier.
    std::optional<StateIndex> locate(const WorldState& observed) const;

private:
    SubMdp sub_;
    std::vector<std::uint8_t> unsafe_;
    std::vector<double> values_;
    std::vector<StateIndex> upper_;           // pre-decision region incl. S_FD, reverse topological order
    std::vector<std::int32_t> upper_pos_;     // state -> position in upper_, -1 outside
    std::vector<std::vector<double>> pinned_;  // [task position in fd_tasks][upper position]
};

TaskValuation task_valuation(const SubMdp& sub, const UnsafePredicate& unsafe,
                             Execution execution = Execution::Serial);

struct RelativeThreshold {
    double delta;
};
struct AbsoluteThreshold {
    double lambda;
};
using ThresholdPolicy = std::variant<RelativeThreshold, AbsoluteThreshold>;

std::string describe(const ThresholdPolicy& p);
/// Throws ConfigError unless the threshold lies in [0,1].
void validate(const ThresholdPolicy& p);

/// Allowed task set for the next decision.
struct Shield {
    std::vector<TaskId> allowed;  // sorted, never empty
    ThresholdPolicy policy = RelativeThreshold{1.0};
    TaskValuation valuation;
    bool fallback = false;  // absolute policy found no lambda-safe task

    bool allows(TaskId t) const;
};

Shield shield_relative(const TaskValuation& v, double delta);
Shield shield_absolute(const TaskValuation& v, double lambda);
Shield make_shield(const TaskValuation& v, const ThresholdPolicy& policy);

/// Shield after observing an adversary decision: re-root the cached analysis.
Shield update_shield(const ShieldAnalysis& analysis, const WorldState& observed, const ThresholdPolicy& policy);

/// Build, analyse and threshold in one call.
Shield compute_shield(const SafetyMdp& mdp, const WorldState& s_t, int horizon, const UnsafePredicate& unsafe,
                      const ThresholdPolicy& policy, Execution execution = Execution::Serial,
                      std::stop_token stop = {});

/// Valuation of the tasks available at a decision state, h rounds ahead.
TaskValuation decision_valuation(const SafetyMdp& mdp, const WorldState& decision, int horizon,
                                 const UnsafePredicate& unsafe, Execution execution = Execution::Serial);

/// Background shield computation for the next decision. The worker owns
/// copies of everything it needs; the result is published once.
class ShieldJob {
public:
    using Work = std::function<Shield(std::stop_token)>;

    explicit ShieldJob(Work work);
    ~ShieldJob();
    ShieldJob(const ShieldJob&) = delete;
    ShieldJob& operator=(const ShieldJob&) = delete;

    bool ready() const;
    /// Blocks until the shield is published. Rethrows worker failures.
    Shield wait();
    void cancel();

    double compute_ms() const { return compute_ms_; }
    /// Time the consumer spent blocked in wait().
    double wait_ms() const { return wait_ms_; }
    bool waited() const { return waited_; }

private:
    struct Published {
        Shield shield;
        double compute_ms;
    };
    std::future<Published> result_;
    std::jthread worker_;
    double compute_ms_ = 0.0;
    double wait_ms_ = 0.0;
    bool waited_ = false;
};

/// One line of the shield trace.
struct ShieldTraceRecord {
    Location decision;
    TaskValuation valuation;
    ThresholdPolicy policy;
    std::vector<TaskId> allowed;
    bool fallback = false;
    double compute_ms = 0.0;
    double wait_ms = 0.0;
};

/// CSV header: decision,policy,threshold,valuations,allowed,fallback,compute_ms,wait_ms
void write_trace_header(std::ostream& os);
void write_trace_row(std::ostream& os, const ShieldTraceRecord& r);

}  // namespace oshield
