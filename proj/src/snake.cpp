#include "oshield/snake.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <filesystem>
#include <limits>
#include <ostream>

#include "json.hpp"
#include "oshield/error.hpp"

namespace oshield {

Colour colour_bin(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("valuation outside [0,1]: " + std::to_string(value));
    if (value == 0.0) return Colour::Green;
    if (value <= 1.0 / 3.0) return Colour::Yellow;
    if (value <= 2.0 / 3.0) return Colour::Orange;
    return Colour::Red;
}

std::string_view colour_name(Colour c) {
    switch (c) {
        case Colour::Green: return "green";
        case Colour::Yellow: return "yellow";
        case Colour::Orange: return "orange";
        case Colour::Red: return "red";
    }
    return "?";
}

std::string_view status_name(GameStatus s) {
    switch (s) {
        case GameStatus::Running: return "running";
        case GameStatus::AvatarWin: return "avatar_win";
        case GameStatus::AdversaryWin: return "adversary_win";
        case GameStatus::Tie: return "tie";
    }
    return "?";
}

std::string_view cause_name(EndCause c) {
    switch (c) {
        case EndCause::None: return "none";
        case EndCause::Apples: return "apples";
        case EndCause::Collision: return "collision";
        case EndCause::HeadOn: return "head_on";
    }
    return "?";
}

bool SnakeBody::occupies(NodeId n) const { return std::find(tiles.begin(), tiles.end(), n) != tiles.end(); }

std::vector<NodeId> SnakeBody::covered_crossings(const Arena& arena) const {
    std::vector<NodeId> out;
    for (NodeId n : tiles) {
        if (arena.is_decision(n)) out.push_back(n);
    }
    return out;
}

std::vector<NodeId> GameState::apples(int snake) const {
    std::vector<NodeId> out;
    const auto& sites = apple_sites[snake];
    for (std::size_t k = 0; k < sites.size(); ++k) {
        if (apples_left[snake] >> k & 1u) out.push_back(sites[k]);
    }
    return out;
}

int GameState::apples_remaining(int snake) const { return std::popcount(apples_left[snake]); }

DistanceTable::DistanceTable(const Arena& arena) : n_(arena.node_count()), dist_(n_ * n_, -1) {
    std::vector<NodeId> queue;
    for (std::size_t s = 0; s < n_; ++s) {
        int* row = &dist_[s * n_];
        queue.assign(1, static_cast<NodeId>(s));
        row[s] = 0;
        for (std::size_t k = 0; k < queue.size(); ++k) {
            const NodeId u = queue[k];
            for (NodeId v : arena.neighbours(u)) {
                if (row[v] < 0) {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

SnakeGame::SnakeGame(const Arena& arena, SnakeConfig config)
    : arena_(&arena), config_(config), distances_(arena) {
    if (config_.length < 2 || config_.length > 255) throw ConfigError("snake length must be in [2,255]");
    if (config_.apples < 1 || config_.apples > 32) throw ConfigError("apples per snake must be in [1,32]");
}

namespace {
constexpr int kSpawnCandidates = 64;
}

GameState SnakeGame::spawn(std::mt19937_64& rng) const {
    const Arena& a = *arena_;
    std::vector<TaskId> long_tasks;
    for (const auto& t : a.tasks()) {
        if (t.length() >= 2) long_tasks.push_back(t.id);
    }
    if (long_tasks.empty()) throw ConfigError("map has no corridor to spawn a snake in");
    const auto len = static_cast<std::size_t>(config_.length);

    auto place = [&](GameState& g, int i) {
        const Task& t = a.task(long_tasks[std::uniform_int_distribution<std::size_t>(0, long_tasks.size() - 1)(rng)]);
        const auto k = std::uniform_int_distribution<std::size_t>(1, t.length() - 1)(rng);
        const SnakeBody& other = g.snakes[1 - i];
        std::vector<NodeId> body;
        for (std::size_t j = k + 1; j-- > 0 && body.size() < len;) body.push_back(t.path[j]);
        while (body.size() < len) {
            std::vector<NodeId> next;
            for (NodeId n : a.neighbours(body.back())) {
                if (std::find(body.begin(), body.end(), n) == body.end()) next.push_back(n);
            }
            if (next.empty()) return false;
            body.push_back(next[std::uniform_int_distribution<std::size_t>(0, next.size() - 1)(rng)]);
        }
        for (NodeId n : body) {
            if (other.occupies(n)) return false;
        }
        g.snakes[i].tiles = std::move(body);
        g.queues[i] = {t.id, static_cast<std::uint16_t>(k)};
        return true;
    };

    // Best of several placements by the smallest tile distance between the
    // snakes, so that neither is committed into the other at the start.
    auto separation = [&](const GameState& g) {
        int best = std::numeric_limits<int>::max();
        for (NodeId x : g.snakes[0].tiles) {
            for (NodeId y : g.snakes[1].tiles) best = std::min(best, distances_(x, y));
        }
        return best;
    };

    std::optional<GameState> chosen;
    int chosen_gap = -1;
    for (int attempt = 0, placed = 0; attempt < 10000 && placed < kSpawnCandidates; ++attempt) {
        GameState g;
        if (!place(g, 0) || !place(g, 1)) continue;
        ++placed;
        if (const int gap = separation(g); gap > chosen_gap) {
            chosen_gap = gap;
            chosen = std::move(g);
        }
    }
    if (chosen) {
        GameState g = std::move(*chosen);
        std::vector<NodeId> free;
        for (NodeId n = 0; n < a.node_count(); ++n) {
            if (!g.snakes[0].occupies(n) && !g.snakes[1].occupies(n)) free.push_back(n);
        }
        const auto need = static_cast<std::size_t>(2 * config_.apples);
        if (free.size() < need) throw ConfigError("map too small for the requested apples");
        std::shuffle(free.begin(), free.end(), rng);
        for (int i = 0; i < kSnakes; ++i) {
            g.apple_sites[i].assign(free.begin() + i * config_.apples, free.begin() + (i + 1) * config_.apples);
            g.apples_left[i] = config_.apples == 32 ? 0xFFFFFFFFu : (1u << config_.apples) - 1u;
        }
        return g;
    }
    throw ConfigError("could not place two snakes of length " + std::to_string(config_.length));
}

std::vector<TaskId> SnakeGame::legal_tasks(const GameState& g, int snake) const {
    const SnakeBody& body = g.snakes.at(snake);
    const auto all = arena_->tasks_at(body.head());
    std::vector<TaskId> out(all.begin(), all.end());
    if (body.length() >= 2) {
        std::vector<TaskId> forward;
        for (TaskId t : out) {
            if (arena_->task(t).path[1] != body.tiles[1]) forward.push_back(t);
        }
        if (!forward.empty()) out = std::move(forward);
    }
    return out;
}

void SnakeGame::move(GameState& g, int i, std::optional<TaskId> task, TickReport* report) const {
    auto& q = g.queues[i];
    if (q.empty()) {
        if (!task) throw InvariantViolation("snake " + std::to_string(i) + " needs a task");
        const auto legal = legal_tasks(g, i);
        if (std::find(legal.begin(), legal.end(), *task) == legal.end()) {
            throw InvariantViolation("task " + std::to_string(*task) + " is not legal for snake " + std::to_string(i));
        }
        q = {*task, 0};
        if (report) report->chosen[i] = *task;
    } else if (task) {
        throw InvariantViolation("snake " + std::to_string(i) + " is inside a corridor and cannot take a task");
    }
    const auto& path = arena_->task(q.task).path;
    const NodeId next = path[q.at + 1u];
    ++q.at;
    if (q.at + 1u == path.size()) q = QueueRef{};

    bool ate = false;
    const auto& sites = g.apple_sites[i];
    for (std::size_t k = 0; k < sites.size(); ++k) {
        if (sites[k] == next && (g.apples_left[i] >> k & 1u)) {
            g.apples_left[i] &= ~(1u << k);
            ate = true;
        }
    }
    auto& tiles = g.snakes[i].tiles;
    tiles.insert(tiles.begin(), next);
    if (!ate || tiles.size() > 255) tiles.pop_back();
    if (report) report->ate[i] = ate;

    const SnakeBody& me = g.snakes[i];
    const SnakeBody& other = g.snakes[1 - i];
    const bool i_am_avatar = i == kAvatar;
    if (me.head() == other.head()) {
        g.status = GameStatus::Tie;
        g.cause = EndCause::HeadOn;
    } else if (std::find(me.tiles.begin() + 1, me.tiles.end(), next) != me.tiles.end() || other.occupies(next)) {
        g.status = i_am_avatar ? GameStatus::AdversaryWin : GameStatus::AvatarWin;
        g.cause = EndCause::Collision;
    } else if (ate && g.apples_left[i] == 0) {
        g.status = i_am_avatar ? GameStatus::AvatarWin : GameStatus::AdversaryWin;
        g.cause = EndCause::Apples;
    }
}

GameState SnakeGame::advance(const GameState& g, std::optional<TaskId> avatar_task,
                             std::optional<TaskId> adversary_task, TickReport* report) const {
    if (!g.running()) throw InvariantViolation("game is over");
    if (g.needs_decision(kAdversarySnake) != adversary_task.has_value()) {
        throw InvariantViolation(adversary_task ? "adversary is inside a corridor" : "adversary needs a task");
    }
    GameState next = g;
    if (report) *report = TickReport{};
    move(next, kAvatar, avatar_task, report);
    if (next.running()) move(next, kAdversarySnake, adversary_task, report);
    ++next.tick;
    return next;
}

WorldState SnakeGame::to_world_state(const GameState& g) const {
    WorldState s = WorldState::with_trails({g.snakes[0].tiles, g.snakes[1].tiles});
    s.queues = {g.queues[0], g.queues[1]};
    s.pickups = {g.apples_left[0], g.apples_left[1]};
    return s;
}

PickupTable SnakeGame::pickups(const GameState& g) const { return {g.apple_sites[0], g.apple_sites[1]}; }

int SnakeGame::task_score(const GameState& g, int snake, TaskId t) const {
    const auto& path = arena_->task(t).path;
    int best = std::numeric_limits<int>::max();
    for (NodeId apple : g.apples(snake)) {
        const auto on_path = std::find(path.begin() + 1, path.end(), apple);
        const int d = on_path != path.end() ? static_cast<int>(on_path - path.begin())
                                            : static_cast<int>(path.size() - 1) + distances_(path.back(), apple);
        best = std::min(best, d);
    }
    return best == std::numeric_limits<int>::max() ? 0 : best;
}

int SnakeGame::apple_distance(const GameState& g, int snake) const {
    int best = -1;
    for (NodeId apple : g.apples(snake)) {
        const int d = distances_(g.snakes[snake].head(), apple);
        if (best < 0 || d < best) best = d;
    }
    return best;
}

AdversaryBehaviour greedy_behaviour(const SnakeGame& game, const GameState& g) {
    const Arena& a = game.arena();
    AdversaryBehaviour b(a, 1);
    auto greedy = [&](std::span<const TaskId> tasks, NodeId neck) {
        std::vector<int> score(tasks.size());
        int best = std::numeric_limits<int>::max();
        bool any = false;
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            if (neck != kNoNode && a.task(tasks[k]).path[1] == neck) continue;
            score[k] = game.task_score(g, kAdversarySnake, tasks[k]);
            best = std::min(best, score[k]);
            any = true;
        }
        std::vector<double> w(tasks.size(), 0.0);
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            const bool candidate = !any || neck == kNoNode || a.task(tasks[k]).path[1] != neck;
            if (candidate && (!any || score[k] == best)) w[k] = 1.0;
        }
        return w;
    };
    for (NodeId v : a.decision_locations()) {
        const auto tasks = a.tasks_at(v);
        b.set_weights(1, v, greedy(tasks, kNoNode));
        for (NodeId n : a.neighbours(v)) b.set_directional_weights(1, v, n, greedy(tasks, n));
    }
    return b;
}

// ---------------------------------------------------------------------------

GreedyBehaviours::GreedyBehaviours(const SnakeGame& game, GameState start)
    : game_(&game), base_(std::move(start)) {}

const AdversaryBehaviour& GreedyBehaviours::operator()(std::uint32_t remaining) const {
    std::lock_guard lock(mutex_);
    auto& slot = tables_[remaining];
    if (!slot) {
        GameState g = base_;
        g.apples_left[kAdversarySnake] = remaining;
        slot = std::make_unique<const AdversaryBehaviour>(greedy_behaviour(*game_, g));
    }
    return *slot;
}

std::size_t GreedyBehaviours::cached() const {
    std::lock_guard lock(mutex_);
    return tables_.size();
}

SafetyMdp greedy_model(const SnakeGame& game, const GameState& g, std::shared_ptr<const GreedyBehaviours> greedy) {
    const AdversaryBehaviour& now = (*greedy)(g.apples_left[kAdversarySnake]);
    return SafetyMdp(game.arena(), now, game.pickups(g),
                     [greedy](int, std::uint32_t remaining) -> const AdversaryBehaviour& { return (*greedy)(remaining); });
}

struct Match::Pending {
    std::unique_ptr<ShieldJob> job;
    std::shared_ptr<std::shared_ptr<const ShieldAnalysis>> analysis;
};

Match::Match(const SnakeGame& game, GameState start, ShieldSettings shield, std::uint64_t adversary_seed)
    : game_(&game), state_(std::move(start)), settings_(shield), rng_(adversary_seed),
      greedy_(std::make_shared<const GreedyBehaviours>(game, state_)) {
    if (settings_.enabled) {
        validate(settings_.policy);
        if (settings_.horizon < 1) throw ConfigError("horizon must be >= 1");
    }
    if (settings_.enabled && !over() && !avatar_deciding()) launch(game_->to_world_state(state_));
}

Match::~Match() = default;

bool Match::over() const { return !state_.running() || state_.tick >= game_->config().max_ticks; }

void Match::launch(const WorldState& root) {
    auto pending = std::make_unique<Pending>();
    pending->analysis = std::make_shared<std::shared_ptr<const ShieldAnalysis>>();
    pending->job = std::make_unique<ShieldJob>(
        [game = game_, state = state_, greedy = greedy_, root, slot = pending->analysis,
         settings = settings_](std::stop_token stop) {
            const SafetyMdp mdp = greedy_model(*game, state, greedy);
            const BuildOptions options{settings.execution, footprint_collision, stop};
            auto analysis = std::make_shared<const ShieldAnalysis>(build_submdp(mdp, root, settings.horizon, options),
                                                                   footprint_collision, settings.execution);
            *slot = analysis;
            return make_shield(analysis->valuation(), settings.policy);
        });
    pending_ = std::move(pending);
}

const DecisionShield& Match::decision_shield() {
    if (!settings_.enabled) throw InvariantViolation("shielding is off");
    if (!avatar_deciding()) throw InvariantViolation("avatar is not at a decision");
    if (current_) return *current_;

    const WorldState here = game_->to_world_state(state_);
    DecisionShield d;
    std::optional<TaskValuation> valuation;
    if (pending_) {
        ShieldJob& job = *pending_->job;
        job.wait();
        d.compute_ms = job.compute_ms();
        d.wait_ms = job.wait_ms();
        if (job.waited()) ++stats_.waits;
        const auto& analysis = *pending_->analysis;
        if (const auto idx = analysis->locate(here)) {
            valuation = analysis->valuation_at(*idx);
            d.rerooted = true;
        }
    }
    pending_.reset();
    if (!valuation) {
        const auto start = std::chrono::steady_clock::now();
        const SafetyMdp mdp = greedy_model(*game_, state_, greedy_);
        valuation = decision_valuation(mdp, here, settings_.horizon, footprint_collision, settings_.execution);
        d.compute_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        ++stats_.recomputed;
    }
    d.shield = make_shield(*valuation, settings_.policy);
    ++stats_.decisions;
    if (d.rerooted) ++stats_.rerooted;
    if (d.shield.fallback) ++stats_.fallbacks;
    stats_.compute_ms += d.compute_ms;
    stats_.wait_ms += d.wait_ms;
    current_ = std::move(d);
    return *current_;
}

std::vector<TaskId> Match::allowed() {
    auto legal = this->legal();
    if (!settings_.enabled) return legal;
    const Shield& s = decision_shield().shield;
    std::vector<TaskId> out;
    for (TaskId t : legal) {
        if (s.allows(t)) out.push_back(t);
    }
    return out.empty() ? legal : out;
}

TickReport Match::tick(std::optional<TaskId> avatar_task, std::optional<TaskId> adversary_override) {
    if (over()) throw InvariantViolation("match is over");
    WorldState root = game_->to_world_state(state_);
    std::optional<TaskId> adversary_task;
    if (state_.needs_decision(kAdversarySnake)) {
        if (adversary_override) {
            adversary_task = adversary_override;
        } else {
            const auto dist = greedy_model(*game_, state_, greedy_).adversary_distribution(root, kAdversarySnake);
            std::vector<double> w;
            for (const auto& c : dist) w.push_back(c.probability);
            adversary_task = dist[std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng_)].task;
        }
    } else if (adversary_override) {
        throw InvariantViolation("adversary is inside a corridor");
    }

    const bool committing = avatar_deciding();
    TickReport report;
    GameState next = game_->advance(state_, avatar_task, adversary_task, &report);
    if (committing) {
        current_.reset();
        root.queues[kAvatar] = {*avatar_task, 0};
        if (settings_.enabled) launch(root);
    }
    state_ = std::move(next);
    if (over()) pending_.reset();
    return report;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json xy(const Arena& a, NodeId n) {
    const Location l = a.location(n);
    return {l.x + 1, l.y + 1};
}

}  // namespace

void write_log_header(std::ostream& os, const SnakeGame& game, const GameState& start, std::uint64_t seed) {
    const Arena& a = game.arena();
    nlohmann::json j;
    j["seed"] = seed;
    j["map"] = {{"width", a.width()}, {"height", a.height()}, {"ascii", a.to_ascii()}};
    j["config"] = {{"length", game.config().length}, {"apples", game.config().apples},
                   {"max_ticks", game.config().max_ticks}};
    for (int i = 0; i < kSnakes; ++i) {
        nlohmann::json apples = nlohmann::json::array();
        for (NodeId n : start.apple_sites[i]) apples.push_back(xy(a, n));
        j["apple_sites"].push_back(apples);
    }
    os << j.dump() << "\n";
}

void write_log_tick(std::ostream& os, const SnakeGame& game, const GameState& g, const DecisionShield* shield) {
    const Arena& a = game.arena();
    nlohmann::json j;
    j["tick"] = g.tick;
    for (int i = 0; i < kSnakes; ++i) {
        j["heads"].push_back(xy(a, g.snakes[i].head()));
        j["lengths"].push_back(g.snakes[i].length());
        nlohmann::json apples = nlohmann::json::array();
        for (NodeId n : g.apples(i)) apples.push_back(xy(a, n));
        j["apples"].push_back(apples);
    }
    j["status"] = status_name(g.status);
    if (g.cause != EndCause::None) j["cause"] = cause_name(g.cause);
    if (shield) {
        nlohmann::json corridors = nlohmann::json::array();
        for (const auto& [t, v] : shield->shield.valuation.values) {
            corridors.push_back({{"task", t},
                                 {"to", xy(a, a.task(t).end())},
                                 {"value", v},
                                 {"colour", colour_name(colour_bin(v))},
                                 {"allowed", shield->shield.allows(t)}});
        }
        j["shield"] = corridors;
    }
    os << j.dump() << "\n";
}

std::string asset_map_dir() { return std::string(OSHIELD_ASSET_DIR) + "/maps"; }

std::vector<std::string> bundled_maps() {
    std::vector<std::string> out;
    std::error_code ec;
    for (const auto& e : std::filesystem::directory_iterator(asset_map_dir(), ec)) {
        if (e.path().extension() == ".txt") out.push_back(e.path().stem().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Arena load_bundled_map(const std::string& name_or_path) {
    if (std::filesystem::is_regular_file(name_or_path)) return load_map_file(name_or_path);
    const std::string bundled = asset_map_dir() + "/" + name_or_path + ".txt";
    if (std::filesystem::is_regular_file(bundled)) return load_map_file(bundled);
    throw ConfigError("unknown map: " + name_or_path);
}

}  // namespace oshield
