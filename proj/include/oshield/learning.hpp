#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oshield/snake.hpp"

namespace oshield {

/// Feature of one (state, task) pair: graph distance from the head to the
/// nearest own apple and how many moves the task adds to reaching it.
struct Features {
    int distance = 0;
    int detour = 0;
    friend bool operator==(const Features&, const Features&) = default;
};

Features features(const SnakeGame& game, const GameState& g, TaskId t);

/// Q-values over the capped feature grid.
class QFunction {
public:
    static constexpr int kMaxDistance = 48;
    static constexpr int kMaxDetour = 24;

    QFunction();

    double operator()(Features f) const { return weights_[index(f)]; }
    double& at(Features f) { return weights_[index(f)]; }
    std::span<const double> weights() const { return weights_; }

    double max_over(const SnakeGame& game, const GameState& g, std::span<const TaskId> tasks) const;

    friend bool operator==(const QFunction&, const QFunction&) = default;

private:
    static std::size_t index(Features f);
    std::vector<double> weights_;
};

/// SplitMix64 of (base, stream): independent seeds per component from one run seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

enum class ShieldMode { None, Shielded, Informed };

std::string_view mode_name(ShieldMode m);
/// "none", "shield" or "informed"; throws ConfigError otherwise.
ShieldMode parse_mode(std::string_view s);

struct Rewards {
    double apple = 10.0;
    double win = 50.0;
    double loss = -100.0;
    double tie = -100.0;
};

struct TrainingConfig {
    double alpha = 0.1;
    double gamma = 0.5;
    double epsilon = 0.6;
    int episodes = 0;
    ShieldMode mode = ShieldMode::None;
    ThresholdPolicy policy = AbsoluteThreshold{0.01};
    double penalty = -100.0;
    int horizon = 15;
    Execution execution = Execution::Serial;
    Rewards rewards;
    std::uint64_t seed = 1;
};

/// Throws ConfigError on out-of-range parameters.
void validate(const TrainingConfig& c);

struct EpisodeStats {
    int episode = 0;
    double reward = 0.0;
    GameStatus result = GameStatus::Running;
    bool collision = false;  // avatar lost by collision or head-on tie
    std::uint64_t steps = 0;
    int decisions = 0;
    int penalties = 0;
    int shield_waits = 0;
    double shield_wait_ms = 0.0;
    double mean_shield_ms = 0.0;
};

/// With probability epsilon a uniform element of `allowed`, else a Q-argmax
/// with uniform tie-break. Throws InvariantViolation when `allowed` is empty.
TaskId select_action(const QFunction& q, const SnakeGame& game, const GameState& g, std::span<const TaskId> allowed,
                     double epsilon, std::mt19937_64& rng);

/// Q(sa) += alpha * (r + gamma * next - Q(sa)); `next` absent at terminal steps.
void q_update(QFunction& q, Features sa, double reward, std::optional<double> next, double alpha, double gamma);

/// One terminal update with `penalty` per blocked task; returns the count.
int informed_penalize(QFunction& q, const SnakeGame& game, const GameState& g, std::span<const TaskId> blocked,
                      double penalty, double alpha);

/// Settings of a single game run with a fixed policy.
struct PlayConfig {
    ShieldMode mode = ShieldMode::None;
    ThresholdPolicy policy = AbsoluteThreshold{0.01};
    int horizon = 15;
    Execution execution = Execution::Serial;
    double epsilon = 0.0;
    Rewards rewards;
};

/// Plays one game. With `learn` set, updates Q along the way (informed mode
/// adds the penalties). Shield job failures propagate.
EpisodeStats play_episode(QFunction& q, const SnakeGame& game, const PlayConfig& play, std::uint64_t seed,
                          const TrainingConfig* learn = nullptr);

struct TrainingResult {
    QFunction q;
    std::vector<EpisodeStats> episodes;
};

TrainingResult train(const SnakeGame& game, const TrainingConfig& config);

struct EvalSummary {
    int games = 0;
    int wins = 0;
    int losses = 0;
    int collision_losses = 0;
    int ties = 0;
    int timeouts = 0;
    double mean_reward = 0.0;

    double win_rate() const { return games ? static_cast<double>(wins) / games : 0.0; }
    friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

/// Greedy (epsilon 0) play of `games` games.
EvalSummary evaluate(const QFunction& q, const SnakeGame& game, const PlayConfig& play, int games, std::uint64_t seed);

/// Training CSV: episode,reward,result,collision,steps,decisions,penalties,mean_shield_ms,waits,wait_ms
void write_training_header(std::ostream& os);
void write_training_row(std::ostream& os, const EpisodeStats& s);

/// Plain-text checkpoint: config header lines starting with '#', then
/// "distance detour value" rows for every non-zero weight.
void save_checkpoint(std::ostream& os, const QFunction& q, const TrainingConfig& c, const std::string& map_name);
/// Throws ConfigError on malformed input or when `expected_map` is given and differs.
QFunction load_checkpoint(std::istream& is, const std::optional<std::string>& expected_map = std::nullopt);

}  // namespace oshield
