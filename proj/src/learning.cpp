#include "oshield/learning.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "oshield/error.hpp"

namespace oshield {

Features features(const SnakeGame& game, const GameState& g, TaskId t) {
    const int d = std::max(game.apple_distance(g, kAvatar), 0);
    const int detour = game.task_score(g, kAvatar, t) - d;
    return {std::min(d, QFunction::kMaxDistance), std::clamp(detour, 0, QFunction::kMaxDetour)};
}

QFunction::QFunction() : weights_(static_cast<std::size_t>((kMaxDistance + 1) * (kMaxDetour + 1)), 0.0) {}

std::size_t QFunction::index(Features f) {
    if (f.distance < 0 || f.distance > kMaxDistance || f.detour < 0 || f.detour > kMaxDetour) {
        throw InvariantViolation("feature outside the Q grid");
    }
    return static_cast<std::size_t>(f.distance * (kMaxDetour + 1) + f.detour);
}

double QFunction::max_over(const SnakeGame& game, const GameState& g, std::span<const TaskId> tasks) const {
    if (tasks.empty()) throw InvariantViolation("max over an empty task set");
    double best = -std::numeric_limits<double>::infinity();
    for (TaskId t : tasks) best = std::max(best, (*this)(features(game, g, t)));
    return best;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::string_view mode_name(ShieldMode m) {
    switch (m) {
        case ShieldMode::None: return "none";
        case ShieldMode::Shielded: return "shield";
        case ShieldMode::Informed: return "informed";
    }
    return "?";
}

ShieldMode parse_mode(std::string_view s) {
    if (s == "none") return ShieldMode::None;
    if (s == "shield") return ShieldMode::Shielded;
    if (s == "informed") return ShieldMode::Informed;
    throw ConfigError("unknown mode '" + std::string(s) + "' (expected none, shield or informed)");
}

void validate(const TrainingConfig& c) {
    auto unit = [](double x) { return x > 0.0 && x <= 1.0; };
    if (!unit(c.alpha)) throw ConfigError("alpha must lie in (0,1]");
    if (!unit(c.gamma)) throw ConfigError("gamma must lie in (0,1]");
    if (!unit(c.epsilon)) throw ConfigError("epsilon must lie in (0,1]");
    if (c.episodes < 0) throw ConfigError("episodes must be >= 0");
    if (!(c.penalty < 0.0)) throw ConfigError("penalty must be negative");
    if (c.horizon < 1) throw ConfigError("horizon must be >= 1");
    validate(c.policy);
}

TaskId select_action(const QFunction& q, const SnakeGame& game, const GameState& g, std::span<const TaskId> allowed,
                     double epsilon, std::mt19937_64& rng) {
    if (allowed.empty()) throw InvariantViolation("no task to select from");
    if (allowed.size() == 1) return allowed[0];
    if (std::bernoulli_distribution(epsilon)(rng)) {
        return allowed[std::uniform_int_distribution<std::size_t>(0, allowed.size() - 1)(rng)];
    }
    std::vector<TaskId> best;
    double top = -std::numeric_limits<double>::infinity();
    for (TaskId t : allowed) {
        const double v = q(features(game, g, t));
        if (v > top) {
            top = v;
            best.assign(1, t);
        } else if (v == top) {
            best.push_back(t);
        }
    }
    return best[std::uniform_int_distribution<std::size_t>(0, best.size() - 1)(rng)];
}

void q_update(QFunction& q, Features sa, double reward, std::optional<double> next, double alpha, double gamma) {
    double& w = q.at(sa);
    const double target = reward + (next ? gamma * *next : 0.0);
    w += alpha * (target - w);
}

int informed_penalize(QFunction& q, const SnakeGame& game, const GameState& g, std::span<const TaskId> blocked,
                      double penalty, double alpha) {
    for (TaskId t : blocked) q_update(q, features(game, g, t), penalty, std::nullopt, alpha, 0.0);
    return static_cast<int>(blocked.size());
}

EpisodeStats play_episode(QFunction& q, const SnakeGame& game, const PlayConfig& play, std::uint64_t seed,
                          const TrainingConfig* learn) {
    std::mt19937_64 rng(seed);
    GameState start = game.spawn(rng);
    const ShieldSettings shield{play.mode != ShieldMode::None, play.policy, play.horizon, play.execution};
    Match m(game, std::move(start), shield, rng());

    EpisodeStats st;
    std::optional<Features> pending;
    double since_decision = 0.0;
    while (!m.over()) {
        std::optional<TaskId> t;
        if (m.avatar_deciding()) {
            const GameState& g = m.state();
            const auto allowed = m.allowed();
            if (learn && pending) {
                q_update(q, *pending, since_decision, q.max_over(game, g, allowed), learn->alpha, learn->gamma);
            }
            since_decision = 0.0;
            if (learn && play.mode == ShieldMode::Informed) {
                std::vector<TaskId> blocked;
                for (TaskId x : m.legal()) {
                    if (std::find(allowed.begin(), allowed.end(), x) == allowed.end()) blocked.push_back(x);
                }
                st.penalties += informed_penalize(q, game, g, blocked, learn->penalty, learn->alpha);
            }
            t = select_action(q, game, g, allowed, play.epsilon, rng);
            pending = features(game, g, *t);
            ++st.decisions;
        }
        const TickReport r = m.tick(t);
        if (r.ate[kAvatar]) {
            since_decision += play.rewards.apple;
            st.reward += play.rewards.apple;
        }
    }

    const GameState& end = m.state();
    double terminal = 0.0;
    switch (end.status) {
        case GameStatus::AvatarWin: terminal = play.rewards.win; break;
        case GameStatus::AdversaryWin: terminal = play.rewards.loss; break;
        case GameStatus::Tie: terminal = play.rewards.tie; break;
        case GameStatus::Running: break;
    }
    st.reward += terminal;
    if (learn && pending) q_update(q, *pending, since_decision + terminal, std::nullopt, learn->alpha, learn->gamma);

    st.result = end.status;
    st.collision = end.status == GameStatus::Tie ||
                   (end.status == GameStatus::AdversaryWin && end.cause == EndCause::Collision);
    st.steps = end.tick;
    const ShieldStats& ss = m.stats();
    st.shield_waits = ss.waits;
    st.shield_wait_ms = ss.wait_ms;
    st.mean_shield_ms = ss.decisions ? ss.compute_ms / ss.decisions : 0.0;
    return st;
}

TrainingResult train(const SnakeGame& game, const TrainingConfig& config) {
    validate(config);
    TrainingResult out;
    const PlayConfig play{config.mode, config.policy, config.horizon, config.execution, config.epsilon, config.rewards};
    for (int k = 0; k < config.episodes; ++k) {
        EpisodeStats st = play_episode(out.q, game, play, derive_seed(config.seed, static_cast<std::uint64_t>(k)), &config);
        st.episode = k;
        out.episodes.push_back(st);
    }
    return out;
}

EvalSummary evaluate(const QFunction& q, const SnakeGame& game, const PlayConfig& play, int games, std::uint64_t seed) {
    if (games < 0) throw ConfigError("games must be >= 0");
    PlayConfig greedy = play;
    greedy.epsilon = 0.0;
    EvalSummary s;
    double total = 0.0;
    for (int k = 0; k < games; ++k) {
        QFunction fixed = q;
        const EpisodeStats st = play_episode(fixed, game, greedy, derive_seed(seed, static_cast<std::uint64_t>(k)));
        ++s.games;
        total += st.reward;
        switch (st.result) {
            case GameStatus::AvatarWin: ++s.wins; break;
            case GameStatus::AdversaryWin: ++s.losses; break;
            case GameStatus::Tie: ++s.ties; break;
            case GameStatus::Running: ++s.timeouts; break;
        }
        if (st.collision && st.result == GameStatus::AdversaryWin) ++s.collision_losses;
    }
    s.mean_reward = s.games ? total / s.games : 0.0;
    return s;
}

void write_training_header(std::ostream& os) {
    os << "episode,reward,result,collision,steps,decisions,penalties,mean_shield_ms,waits,wait_ms\n";
}

void write_training_row(std::ostream& os, const EpisodeStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.1f,%s,%d,%llu,%d,%d,%.3f,%d,%.3f\n", s.episode, s.reward,
                  std::string(status_name(s.result)).c_str(), s.collision ? 1 : 0,
                  static_cast<unsigned long long>(s.steps), s.decisions, s.penalties, s.mean_shield_ms,
                  s.shield_waits, s.shield_wait_ms);
    os << buf;
}

void save_checkpoint(std::ostream& os, const QFunction& q, const TrainingConfig& c, const std::string& map_name) {
    os << "# oshield q-table 1\n";
    os << "# map " << map_name << "\n";
    os << "# mode " << mode_name(c.mode) << " policy " << describe(c.policy) << " horizon " << c.horizon << "\n";
    os << "# alpha " << c.alpha << " gamma " << c.gamma << " epsilon " << c.epsilon << " episodes " << c.episodes
       << " seed " << c.seed << "\n";
    os << "# grid " << QFunction::kMaxDistance << " " << QFunction::kMaxDetour << "\n";
    char buf[96];
    for (int d = 0; d <= QFunction::kMaxDistance; ++d) {
        for (int x = 0; x <= QFunction::kMaxDetour; ++x) {
            const double w = q({d, x});
            if (w == 0.0) continue;
            std::snprintf(buf, sizeof buf, "%d %d %.17g\n", d, x, w);
            os << buf;
        }
    }
}

QFunction load_checkpoint(std::istream& is, const std::optional<std::string>& expected_map) {
    QFunction q;
    std::string line;
    bool magic = false;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        std::istringstream ls(line);
        if (line[0] == '#') {
            std::string hash, key;
            ls >> hash >> key;
            if (key == "oshield") magic = true;
            if (key == "map" && expected_map) {
                std::string name;
                ls >> name;
                if (name != *expected_map) {
                    throw ConfigError("checkpoint was trained on map '" + name + "', not '" + *expected_map + "'");
                }
            }
            if (key == "grid") {
                int d = 0, x = 0;
                ls >> d >> x;
                if (d != QFunction::kMaxDistance || x != QFunction::kMaxDetour) {
                    throw ConfigError("checkpoint feature grid does not match");
                }
            }
            continue;
        }
        int d = 0, x = 0;
        double w = 0.0;
        std::string rest;
        if (!(ls >> d >> x >> w) || (ls >> rest) || d < 0 || d > QFunction::kMaxDistance || x < 0 ||
            x > QFunction::kMaxDetour || !std::isfinite(w)) {
            throw ConfigError("checkpoint line " + std::to_string(n) + ": bad weight row");
        }
        q.at({d, x}) = w;
    }
    if (!magic) throw ConfigError("not a q-table checkpoint");
    return q;
}

}  // namespace oshield
