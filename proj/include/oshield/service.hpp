#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "oshield/learning.hpp"

namespace httplib {
class Server;
}

namespace oshield {

inline constexpr int kWireVersion = 1;

enum class SessionMode { HumanVsHuman, HumanVsAgent, AgentVsAgent };
std::string_view session_mode_name(SessionMode m);
/// "human-vs-human", "human-vs-agent" or "agent-vs-agent"; throws ConfigError otherwise.
SessionMode parse_session_mode(std::string_view s);

enum class Direction { Up, Down, Left, Right };
std::string_view direction_name(Direction d);
/// "up", "down", "left" or "right"; throws ConfigError otherwise.
Direction parse_direction(std::string_view s);

enum class Role { Avatar, Adversary, Spectator };
std::string_view role_name(Role r);
Role parse_role(std::string_view s);

struct SessionRequest {
    SessionMode mode = SessionMode::HumanVsAgent;
    std::string map = "map1";
    ShieldSettings shield{true, AbsoluteThreshold{0.01}, 15, Execution::Serial};
    SnakeConfig snake;
    int tick_ms = 300;  // 0: advanced only by step()
    std::uint64_t seed = 1;
    std::optional<std::filesystem::path> checkpoint;  // avatar agent policy
};

/// Parses the JSON body of a create request; unknown fields are ignored.
SessionRequest parse_session_request(const nlohmann::json& body);

struct InputResult {
    bool accepted = false;
    std::string reason;  // "buffered", "applied", "reversal", "wall", "shield"
    std::optional<TaskId> task;
    std::optional<double> valuation;
};

/// Chosen tasks of one tick (kNoTask where a snake did not decide).
struct LoggedTick {
    std::array<TaskId, kSnakes> chosen{kNoTask, kNoTask};
    friend bool operator==(const LoggedTick&, const LoggedTick&) = default;
};

/// One running game. Events are JSON objects carrying "v", "seq", "type" and
/// "tick"; "tick" is the game tick being executed and never decreases.
class Session {
public:
    Session(std::string id, const SessionRequest& request);
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    const std::string& id() const { return id_; }
    SessionMode mode() const { return request_.mode; }
    const SessionRequest& request() const { return request_; }
    const SnakeGame& game() const { return *game_; }

    /// Attaches a controller or spectator and returns its player token.
    /// Throws ConfigError when the role is taken or agent-controlled.
    std::string join(Role role);
    /// All controllers attached and the game not over.
    bool ready() const;
    bool over() const;

    InputResult submit_input(const std::string& player, Direction d);
    /// Executes one tick; false when paused or over.
    bool step();

    /// Events with seq >= from; blocks up to `wait` for one to arrive.
    std::vector<nlohmann::json> events(std::size_t from, std::chrono::milliseconds wait = {}) const;
    nlohmann::json snapshot() const;
    std::vector<LoggedTick> input_log() const;
    GameState start_state() const { return start_; }
    GameState state() const;

    /// Starts the tick loop thread when tick_ms > 0.
    void start();
    void stop();

private:
    struct Player {
        Role role;
        std::optional<Direction> buffered;
    };

    bool ready_locked() const;
    void emit(nlohmann::json e);
    void emit_shield_locked();
    std::optional<TaskId> task_towards(int snake, Direction d, InputResult* why) const;
    TaskId human_choice(int snake);
    TaskId agent_choice();
    bool step_locked();
    nlohmann::json board_locked() const;
    int controlled_by_human(Role r) const;

    std::string id_;
    SessionRequest request_;
    std::shared_ptr<const Arena> arena_;
    std::unique_ptr<SnakeGame> game_;
    GameState start_;
    std::unique_ptr<Match> match_;
    std::optional<QFunction> policy_;
    std::mt19937_64 agent_rng_;

    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::map<std::string, Player> players_;
    std::array<bool, kSnakes> attached_{};
    std::vector<nlohmann::json> events_;
    std::vector<LoggedTick> log_;
    std::optional<std::uint64_t> shield_tick_;
    std::jthread loop_;
};

/// Replays a session input log through the game rules from its start state.
std::vector<GameState> replay(const SnakeGame& game, const GameState& start, const std::vector<LoggedTick>& log);

/// Length-delimited frame: decimal byte count, '\n', then the JSON text.
std::string frame(const nlohmann::json& event);
/// Splits a buffer of frames; leaves an incomplete tail in `buffer`.
std::vector<nlohmann::json> unframe(std::string& buffer);

class SessionRegistry {
public:
    std::string create(const SessionRequest& request);
    std::shared_ptr<Session> find(const std::string& id) const;
    std::vector<std::string> ids() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_ = 1;
    std::mt19937_64 rng_{std::random_device{}()};
};

/// HTTP front end.
///   GET  /v1/maps
///   GET  /v1/sessions                    POST /v1/sessions
///   GET  /v1/sessions/{id}               snapshot
///   POST /v1/sessions/{id}/join          {"role"}
///   POST /v1/sessions/{id}/input         {"player","direction"}
///   POST /v1/sessions/{id}/step          manual tick
///   GET  /v1/sessions/{id}/events?from=N JSON array (polling)
///   GET  /v1/sessions/{id}/stream?from=N length-delimited frames until game over
/// Static UI files are served from `ui_dir` when given.
class Service {
public:
    explicit Service(std::optional<std::filesystem::path> ui_dir = std::nullopt);
    ~Service();

    SessionRegistry& registry() { return registry_; }
    /// Binds and serves until stop(); returns false when the port is unavailable.
    bool listen(const std::string& host, int port);
    /// Binds to a free port and serves on a background thread; returns the port.
    int start_background(const std::string& host = "127.0.0.1");
    void stop();

private:
    void routes();

    SessionRegistry registry_;
    std::unique_ptr<httplib::Server> server_;
    std::thread background_;
};

}  // namespace oshield
