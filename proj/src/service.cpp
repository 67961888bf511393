#include "oshield/service.hpp"

#include <algorithm>
#include <fstream>

#include "httplib.h"
#include "oshield/error.hpp"
#include "oshield/harness.hpp"

namespace oshield {

using nlohmann::json;

std::string_view session_mode_name(SessionMode m) {
    switch (m) {
        case SessionMode::HumanVsHuman: return "human-vs-human";
        case SessionMode::HumanVsAgent: return "human-vs-agent";
        case SessionMode::AgentVsAgent: return "agent-vs-agent";
    }
    return "?";
}

SessionMode parse_session_mode(std::string_view s) {
    for (auto m : {SessionMode::HumanVsHuman, SessionMode::HumanVsAgent, SessionMode::AgentVsAgent}) {
        if (s == session_mode_name(m)) return m;
    }
    throw ConfigError("unknown session mode '" + std::string(s) + "'");
}

std::string_view direction_name(Direction d) {
    switch (d) {
        case Direction::Up: return "up";
        case Direction::Down: return "down";
        case Direction::Left: return "left";
        case Direction::Right: return "right";
    }
    return "?";
}

Direction parse_direction(std::string_view s) {
    for (auto d : {Direction::Up, Direction::Down, Direction::Left, Direction::Right}) {
        if (s == direction_name(d)) return d;
    }
    throw ConfigError("unknown direction '" + std::string(s) + "'");
}

std::string_view role_name(Role r) {
    switch (r) {
        case Role::Avatar: return "avatar";
        case Role::Adversary: return "adversary";
        case Role::Spectator: return "spectator";
    }
    return "?";
}

Role parse_role(std::string_view s) {
    for (auto r : {Role::Avatar, Role::Adversary, Role::Spectator}) {
        if (s == role_name(r)) return r;
    }
    throw ConfigError("unknown role '" + std::string(s) + "'");
}

SessionRequest parse_session_request(const json& body) {
    if (!body.is_object()) throw ConfigError("session request must be a JSON object");
    SessionRequest r;
    try {
        if (body.contains("mode")) r.mode = parse_session_mode(body.at("mode").get<std::string>());
        if (body.contains("map")) r.map = body.at("map").get<std::string>();
        if (body.contains("tick_ms")) r.tick_ms = body.at("tick_ms").get<int>();
        if (body.contains("seed")) r.seed = body.at("seed").get<std::uint64_t>();
        if (body.contains("checkpoint")) r.checkpoint = body.at("checkpoint").get<std::string>();
        if (body.contains("snake")) {
            const json& s = body.at("snake");
            if (s.contains("length")) r.snake.length = s.at("length").get<int>();
            if (s.contains("apples")) r.snake.apples = s.at("apples").get<int>();
            if (s.contains("max_ticks")) r.snake.max_ticks = s.at("max_ticks").get<std::uint64_t>();
        }
        if (body.contains("shield")) {
            const json& s = body.at("shield");
            if (s.contains("enabled")) r.shield.enabled = s.at("enabled").get<bool>();
            if (s.contains("horizon")) r.shield.horizon = s.at("horizon").get<int>();
            if (s.contains("lambda")) r.shield.policy = AbsoluteThreshold{s.at("lambda").get<double>()};
            if (s.contains("delta")) r.shield.policy = RelativeThreshold{s.at("delta").get<double>()};
            if (s.contains("lambda") && s.contains("delta")) throw ConfigError("give either lambda or delta");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad session request: ") + e.what());
    }
    return r;
}

namespace {

json xy(const Arena& a, NodeId n) {
    const Location l = a.location(n);
    return json::array({l.x, l.y});
}

Location step_towards(Location l, Direction d) {
    switch (d) {
        case Direction::Up: return {l.x, l.y - 1};
        case Direction::Down: return {l.x, l.y + 1};
        case Direction::Left: return {l.x - 1, l.y};
        case Direction::Right: return {l.x + 1, l.y};
    }
    return l;
}

std::string hex(std::uint64_t x, int digits) {
    static const char* kDigits = "0123456789abcdef";
    std::string s(static_cast<std::size_t>(digits), '0');
    for (int k = digits - 1; k >= 0; --k, x >>= 4) s[static_cast<std::size_t>(k)] = kDigits[x & 15u];
    return s;
}

json policy_json(const ShieldSettings& s) {
    json j{{"enabled", s.enabled}, {"horizon", s.horizon}, {"policy", describe(s.policy)}};
    if (const auto* a = std::get_if<AbsoluteThreshold>(&s.policy)) j["lambda"] = a->lambda;
    if (const auto* r = std::get_if<RelativeThreshold>(&s.policy)) j["delta"] = r->delta;
    return j;
}

}  // namespace

Session::Session(std::string id, const SessionRequest& request) : id_(std::move(id)), request_(request) {
    if (request_.tick_ms < 0) throw ConfigError("tick_ms must be >= 0");
    if (request_.shield.horizon < 1) throw ConfigError("horizon must be >= 1");
    validate(request_.shield.policy);
    arena_ = std::make_shared<const Arena>(load_bundled_map(request_.map));
    game_ = std::make_unique<SnakeGame>(*arena_, request_.snake);
    if (request_.checkpoint) {
        std::ifstream in(*request_.checkpoint);
        if (!in) throw ConfigError("cannot read checkpoint " + request_.checkpoint->string());
        policy_ = load_checkpoint(in, map_name(request_.map));
    }
    std::mt19937_64 rng(request_.seed);
    start_ = game_->spawn(rng);
    const std::uint64_t adversary_seed = rng();
    agent_rng_.seed(rng());
    match_ = std::make_unique<Match>(*game_, start_, request_.shield, adversary_seed);

    json e{{"type", "StateUpdate"}, {"tick", start_.tick}, {"initial", true}};
    e["board"] = board_locked();
    emit(std::move(e));
}

Session::~Session() { stop(); }

int Session::controlled_by_human(Role r) const {
    if (r == Role::Avatar && request_.mode != SessionMode::AgentVsAgent) return kAvatar;
    if (r == Role::Adversary && request_.mode == SessionMode::HumanVsHuman) return kAdversarySnake;
    return -1;
}

std::string Session::join(Role role) {
    std::lock_guard lock(mutex_);
    if (role != Role::Spectator) {
        const int snake = controlled_by_human(role);
        if (snake < 0) throw ConfigError(std::string(role_name(role)) + " is agent-controlled in this session");
        if (attached_[static_cast<std::size_t>(snake)]) throw ConfigError(std::string(role_name(role)) + " is taken");
        attached_[static_cast<std::size_t>(snake)] = true;
    }
    std::string token;
    do {
        token = std::string(role_name(role)) + "-" + hex(agent_rng_(), 12);
    } while (players_.count(token));
    players_[token] = {role, std::nullopt};
    changed_.notify_all();
    return token;
}

bool Session::ready_locked() const {
    for (Role r : {Role::Avatar, Role::Adversary}) {
        const int snake = controlled_by_human(r);
        if (snake >= 0 && !attached_[static_cast<std::size_t>(snake)]) return false;
    }
    return !match_->over();
}

bool Session::ready() const {
    std::lock_guard lock(mutex_);
    return ready_locked();
}

bool Session::over() const {
    std::lock_guard lock(mutex_);
    return match_->over();
}

GameState Session::state() const {
    std::lock_guard lock(mutex_);
    return match_->state();
}

std::vector<LoggedTick> Session::input_log() const {
    std::lock_guard lock(mutex_);
    return log_;
}

void Session::emit(json e) {
    e["v"] = kWireVersion;
    e["seq"] = events_.size();
    e["session"] = id_;
    events_.push_back(std::move(e));
    changed_.notify_all();
}

json Session::board_locked() const {
    const Arena& a = *arena_;
    const GameState& g = match_ ? match_->state() : start_;
    json snakes = json::array();
    for (int i = 0; i < kSnakes; ++i) {
        json tiles = json::array();
        for (NodeId n : g.snakes[i].tiles) tiles.push_back(xy(a, n));
        json apples = json::array();
        for (NodeId n : g.apples(i)) apples.push_back(xy(a, n));
        snakes.push_back({{"tiles", tiles}, {"apples", apples}, {"remaining", g.apples_remaining(i)}});
    }
    json b{{"tick", g.tick}, {"snakes", snakes}, {"status", status_name(g.status)}};
    if (g.cause != EndCause::None) b["cause"] = cause_name(g.cause);
    return b;
}

json Session::snapshot() const {
    std::lock_guard lock(mutex_);
    return {{"v", kWireVersion},
            {"id", id_},
            {"mode", session_mode_name(request_.mode)},
            {"map", {{"name", map_name(request_.map)}, {"width", arena_->width()}, {"height", arena_->height()},
                     {"ascii", arena_->to_ascii()}}},
            {"shield", policy_json(request_.shield)},
            {"tick_ms", request_.tick_ms},
            {"ready", ready_locked()},
            {"over", match_->over()},
            {"attached", {attached_[0], attached_[1]}},
            {"events", events_.size()},
            {"board", board_locked()}};
}

void Session::emit_shield_locked() {
    const Arena& a = *arena_;
    const GameState& g = match_->state();
    const DecisionShield& ds = match_->decision_shield();
    const auto legal = match_->legal();
    json corridors = json::array();
    for (const auto& [t, v] : ds.shield.valuation.values) {
        json path = json::array();
        for (NodeId n : a.task(t).path) path.push_back(xy(a, n));
        corridors.push_back({{"task", t},
                             {"path", path},
                             {"value", v},
                             {"colour", colour_name(colour_bin(v))},
                             {"allowed", ds.shield.allows(t)},
                             {"legal", std::find(legal.begin(), legal.end(), t) != legal.end()}});
    }
    emit({{"type", "ShieldUpdate"},
          {"tick", g.tick},
          {"corridors", corridors},
          {"fallback", ds.shield.fallback},
          {"rerooted", ds.rerooted},
          {"compute_ms", ds.compute_ms},
          {"wait_ms", ds.wait_ms},
          {"waits", match_->stats().waits}});
    shield_tick_ = g.tick;
}

std::optional<TaskId> Session::task_towards(int snake, Direction d, InputResult* why) const {
    const Arena& a = *arena_;
    const GameState& g = match_->state();
    const SnakeBody& body = g.snakes[static_cast<std::size_t>(snake)];
    const QueueRef q = g.queues[static_cast<std::size_t>(snake)];
    NodeId at = body.head();
    NodeId from = body.length() >= 2 ? body.tiles[1] : kNoNode;
    if (!q.empty()) {
        const auto& path = a.task(q.task).path;
        at = path.back();
        from = path[path.size() - 2];
    }
    const Location target = step_towards(a.location(at), d);
    const auto tasks = a.tasks_at(at);
    for (TaskId t : tasks) {
        if (a.location(a.task(t).path[1]) != target) continue;
        if (a.task(t).path[1] == from && tasks.size() > 1) {
            if (why) why->reason = "reversal";
            return std::nullopt;
        }
        return t;
    }
    if (why) why->reason = "wall";
    return std::nullopt;
}

InputResult Session::submit_input(const std::string& player, Direction d) {
    std::lock_guard lock(mutex_);
    const auto it = players_.find(player);
    if (it == players_.end()) throw ConfigError("unknown player '" + player + "'");
    const int snake = controlled_by_human(it->second.role);
    if (snake < 0) throw ConfigError("player '" + player + "' does not control a snake");
    if (match_->over()) throw ConfigError("session " + id_ + " is over");

    InputResult r;
    r.task = task_towards(snake, d, &r);
    if (r.task) {
        r.accepted = true;
        r.reason = "buffered";
        const bool deciding = match_->state().needs_decision(snake);
        if (snake == kAvatar && request_.shield.enabled && deciding) {
            const Shield& s = match_->decision_shield().shield;
            if (s.valuation.contains(*r.task)) r.valuation = s.valuation.value(*r.task);
            if (!s.allows(*r.task)) {
                r.accepted = false;
                r.reason = "shield";
            }
        }
        if (r.accepted) it->second.buffered = d;
    }
    json e{{"type", "InputAck"},
           {"tick", match_->state().tick},
           {"role", role_name(it->second.role)},
           {"direction", direction_name(d)},
           {"accepted", r.accepted},
           {"reason", r.reason}};
    if (r.task) e["task"] = *r.task;
    if (r.valuation) e["valuation"] = *r.valuation;
    emit(std::move(e));
    return r;
}

TaskId Session::human_choice(int snake) {
    const GameState& g = match_->state();
    const auto legal = game_->legal_tasks(g, snake);
    const bool shielded = snake == kAvatar && request_.shield.enabled;
    const auto allowed = snake == kAvatar ? match_->allowed() : legal;
    auto permitted = [&](TaskId t) { return std::find(allowed.begin(), allowed.end(), t) != allowed.end(); };

    const Role role = snake == kAvatar ? Role::Avatar : Role::Adversary;
    for (auto& [token, p] : players_) {
        if (p.role != role || !p.buffered) continue;
        const Direction d = *p.buffered;
        p.buffered.reset();
        if (const auto t = task_towards(snake, d, nullptr); t && permitted(*t)) {
            emit({{"type", "InputAck"},
                  {"tick", g.tick},
                  {"role", role_name(role)},
                  {"direction", direction_name(d)},
                  {"accepted", true},
                  {"reason", "applied"},
                  {"task", *t}});
            return *t;
        } else if (t) {
            json e{{"type", "InputAck"},      {"tick", g.tick}, {"role", role_name(role)}, {"direction", direction_name(d)},
                   {"accepted", false},       {"reason", "shield"}, {"task", *t}};
            const auto& v = match_->decision_shield().shield.valuation;
            if (v.contains(*t)) e["valuation"] = v.value(*t);
            emit(std::move(e));
        }
    }

    // No usable input: keep going straight, else the safest permitted corridor.
    const SnakeBody& body = g.snakes[static_cast<std::size_t>(snake)];
    if (body.length() >= 2) {
        const Location h = arena_->location(body.head());
        const Location n = arena_->location(body.tiles[1]);
        const Location ahead{2 * h.x - n.x, 2 * h.y - n.y};
        for (TaskId t : allowed) {
            if (arena_->location(arena_->task(t).path[1]) == ahead) return t;
        }
    }
    if (shielded) {
        const auto& v = match_->decision_shield().shield.valuation;
        return *std::min_element(allowed.begin(), allowed.end(), [&](TaskId x, TaskId y) {
            return (v.contains(x) ? v.value(x) : 1.0) < (v.contains(y) ? v.value(y) : 1.0);
        });
    }
    return allowed.front();
}

TaskId Session::agent_choice() {
    const GameState& g = match_->state();
    const auto allowed = match_->allowed();
    if (policy_) return select_action(*policy_, *game_, g, allowed, 0.0, agent_rng_);
    std::vector<TaskId> best;
    int top = std::numeric_limits<int>::max();
    for (TaskId t : allowed) {
        const int s = game_->task_score(g, kAvatar, t);
        if (s < top) {
            top = s;
            best.assign(1, t);
        } else if (s == top) {
            best.push_back(t);
        }
    }
    return best[std::uniform_int_distribution<std::size_t>(0, best.size() - 1)(agent_rng_)];
}

bool Session::step_locked() {
    if (!ready_locked()) return false;
    const std::uint64_t n = match_->state().tick;
    const bool shielded = request_.shield.enabled;
    if (shielded && match_->avatar_deciding() && shield_tick_ != n) emit_shield_locked();

    std::optional<TaskId> avatar;
    if (match_->avatar_deciding()) avatar = controlled_by_human(Role::Avatar) >= 0 ? human_choice(kAvatar) : agent_choice();
    std::optional<TaskId> adversary;
    if (controlled_by_human(Role::Adversary) >= 0 && match_->state().needs_decision(kAdversarySnake)) {
        adversary = human_choice(kAdversarySnake);
    }

    const TickReport report = match_->tick(avatar, adversary);
    log_.push_back({report.chosen});

    json chosen = json::array();
    for (TaskId t : report.chosen) chosen.push_back(t == kNoTask ? json(nullptr) : json(t));
    emit({{"type", "StateUpdate"},
          {"tick", n},
          {"board", board_locked()},
          {"diff", {{"ate", {report.ate[0], report.ate[1]}}, {"chosen", chosen}}}});

    if (match_->over()) {
        const GameState& g = match_->state();
        json e{{"type", "GameOver"},
               {"tick", n},
               {"result", g.running() ? "timeout" : status_name(g.status)},
               {"remaining", {g.apples_remaining(0), g.apples_remaining(1)}}};
        if (g.cause != EndCause::None) e["cause"] = cause_name(g.cause);
        emit(std::move(e));
    } else if (shielded && match_->avatar_deciding()) {
        emit_shield_locked();
    }
    return true;
}

bool Session::step() {
    std::lock_guard lock(mutex_);
    return step_locked();
}

std::vector<json> Session::events(std::size_t from, std::chrono::milliseconds wait) const {
    std::unique_lock lock(mutex_);
    if (wait.count() > 0) {
        changed_.wait_for(lock, wait, [&] { return events_.size() > from || match_->over(); });
    }
    if (from >= events_.size()) return {};
    return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

void Session::start() {
    if (request_.tick_ms <= 0 || loop_.joinable()) return;
    loop_ = std::jthread([this](std::stop_token stop) {
        const auto period = std::chrono::milliseconds(request_.tick_ms);
        auto next = std::chrono::steady_clock::now() + period;
        while (!stop.stop_requested()) {
            {
                std::unique_lock lock(mutex_);
                if (match_->over()) return;
            }
            std::this_thread::sleep_until(std::min(next, std::chrono::steady_clock::now() + std::chrono::milliseconds(20)));
            if (std::chrono::steady_clock::now() < next) continue;
            next += period;
            step();
        }
    });
}

void Session::stop() {
    if (loop_.joinable()) {
        loop_.request_stop();
        loop_.join();
    }
}

std::vector<GameState> replay(const SnakeGame& game, const GameState& start, const std::vector<LoggedTick>& log) {
    std::vector<GameState> out;
    GameState g = start;
    auto opt = [](TaskId t) { return t == kNoTask ? std::nullopt : std::optional<TaskId>(t); };
    for (const LoggedTick& t : log) {
        g = game.advance(g, opt(t.chosen[0]), opt(t.chosen[1]));
        out.push_back(g);
    }
    return out;
}

std::string frame(const json& event) {
    const std::string text = event.dump();
    return std::to_string(text.size()) + "\n" + text;
}

std::vector<json> unframe(std::string& buffer) {
    std::vector<json> out;
    std::size_t pos = 0;
    for (;;) {
        const auto nl = buffer.find('\n', pos);
        if (nl == std::string::npos) break;
        std::size_t len = 0;
        try {
            len = std::stoul(buffer.substr(pos, nl - pos));
        } catch (const std::exception&) {
            throw ConfigError("malformed frame header");
        }
        if (buffer.size() < nl + 1 + len) break;
        out.push_back(json::parse(buffer.substr(nl + 1, len)));
        pos = nl + 1 + len;
    }
    buffer.erase(0, pos);
    return out;
}

std::string SessionRegistry::create(const SessionRequest& request) {
    std::string id;
    {
        std::lock_guard lock(mutex_);
        id = "s" + std::to_string(next_++) + "-" + hex(rng_(), 8);
    }
    auto session = std::make_shared<Session>(id, request);
    session->start();
    std::lock_guard lock(mutex_);
    sessions_[id] = std::move(session);
    return id;
}

std::shared_ptr<Session> SessionRegistry::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::vector<std::string> SessionRegistry::ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, int status, json body) {
    body["v"] = kWireVersion;
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
}

std::size_t from_param(const httplib::Request& req) {
    if (!req.has_param("from")) return 0;
    try {
        return std::stoul(req.get_param_value("from"));
    } catch (const std::exception&) {
        throw ConfigError("'from' must be a non-negative integer");
    }
}

}  // namespace

Service::Service(std::optional<std::filesystem::path> ui_dir) : server_(std::make_unique<httplib::Server>()) {
    routes();
    if (ui_dir && !server_->set_mount_point("/", ui_dir->string())) {
        throw ConfigError("UI directory " + ui_dir->string() + " does not exist");
    }
}

Service::~Service() { stop(); }

void Service::routes() {
    httplib::Server& s = *server_;
    s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const ConfigError& e) {
            reply(res, 400, {{"error", e.what()}});
        } catch (const std::exception& e) {
            reply(res, 500, {{"error", e.what()}});
        }
    });
    auto session = [this](const httplib::Request& req) {
        auto p = registry_.find(req.path_params.at("id"));
        if (!p) throw std::out_of_range("no session '" + req.path_params.at("id") + "'");
        return p;
    };
    auto guarded = [session](auto body) {
        return [session, body](const httplib::Request& req, httplib::Response& res) {
            std::shared_ptr<Session> p;
            try {
                p = session(req);
            } catch (const std::out_of_range& e) {
                reply(res, 404, {{"error", e.what()}});
                return;
            }
            body(p, req, res);
        };
    };

    s.Get("/v1/maps", [](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, {{"maps", bundled_maps()}});
    });
    s.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
        json list = json::array();
        for (const auto& id : registry_.ids()) {
            if (auto p = registry_.find(id)) {
                list.push_back({{"id", id}, {"mode", session_mode_name(p->mode())}, {"ready", p->ready()},
                                {"over", p->over()}});
            }
        }
        reply(res, 200, {{"sessions", list}});
    });
    s.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = registry_.create(parse_session_request(parse_body(req)));
        reply(res, 201, {{"id", id}});
    });
    s.Get("/v1/sessions/:id", guarded([](const std::shared_ptr<Session>& p, const httplib::Request&, httplib::Response& res) {
        reply(res, 200, p->snapshot());
    }));
    s.Post("/v1/sessions/:id/join", guarded([](const std::shared_ptr<Session>& p, const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        const Role role = parse_role(body.value("role", std::string("spectator")));
        const std::string token = p->join(role);
        reply(res, 200, {{"player", token}, {"role", role_name(role)}, {"snapshot", p->snapshot()}});
    }));
    s.Post("/v1/sessions/:id/input", guarded([](const std::shared_ptr<Session>& p, const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        if (!body.contains("player") || !body.contains("direction")) {
            throw ConfigError("input needs 'player' and 'direction'");
        }
        const InputResult r =
            p->submit_input(body.at("player").get<std::string>(), parse_direction(body.at("direction").get<std::string>()));
        json out{{"accepted", r.accepted}, {"reason", r.reason}};
        if (r.task) out["task"] = *r.task;
        if (r.valuation) out["valuation"] = *r.valuation;
        reply(res, 200, out);
    }));
    s.Post("/v1/sessions/:id/step", guarded([](const std::shared_ptr<Session>& p, const httplib::Request&, httplib::Response& res) {
        reply(res, 200, {{"stepped", p->step()}});
    }));
    s.Get("/v1/sessions/:id/events", guarded([](const std::shared_ptr<Session>& p, const httplib::Request& req, httplib::Response& res) {
        int wait = 0;
        if (req.has_param("wait_ms")) wait = std::clamp(std::atoi(req.get_param_value("wait_ms").c_str()), 0, 30000);
        reply(res, 200, {{"events", p->events(from_param(req), std::chrono::milliseconds(wait))}});
    }));
    s.Get("/v1/sessions/:id/stream", guarded([](const std::shared_ptr<Session>& p, const httplib::Request& req, httplib::Response& res) {
        auto cursor = std::make_shared<std::size_t>(from_param(req));
        auto keep = p;
        res.set_chunked_content_provider("application/x-oshield-frames",
                                         [keep, cursor](std::size_t, httplib::DataSink& sink) {
                                             const auto batch = keep->events(*cursor, std::chrono::milliseconds(500));
                                             for (const auto& e : batch) {
                                                 const std::string f = frame(e);
                                                 if (!sink.write(f.data(), f.size())) return false;
                                                 ++*cursor;
                                             }
                                             if (batch.empty() && keep->over()) sink.done();
                                             return true;
                                         });
    }));
}

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }

int Service::start_background(const std::string& host) {
    const int port = server_->bind_to_any_port(host);
    if (port <= 0) throw ConfigError("cannot bind a port on " + host);
    background_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void Service::stop() {
    if (server_) server_->stop();
    if (background_.joinable()) background_.join();
}

}  // namespace oshield
