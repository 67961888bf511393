#include "oshield/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <tuple>
#include <numeric>
#include <ostream>
#include <sstream>

#include "oshield/error.hpp"

namespace oshield {

std::span<const NodeId> WorldState::trail(int agent) const {
    if (footprint_len.empty()) return {};
    std::size_t offset = 0;
    for (int i = 0; i < agent; ++i) offset += footprint_len[i];
    return std::span<const NodeId>(footprint).subspan(offset, footprint_len[agent]);
}

WorldState WorldState::at_positions(std::vector<NodeId> positions) {
    WorldState s;
    s.queues.assign(positions.size(), QueueRef{});
    s.positions = std::move(positions);
    return s;
}

WorldState WorldState::with_trails(const std::vector<std::vector<NodeId>>& trails) {
    WorldState s;
    for (const auto& t : trails) {
        if (t.empty() || t.size() > 255) throw ConfigError("footprint length must be in [1,255]");
        s.positions.push_back(t.front());
        s.footprint_len.push_back(static_cast<std::uint8_t>(t.size()));
        s.footprint.insert(s.footprint.end(), t.begin(), t.end());
    }
    s.queues.assign(trails.size(), QueueRef{});
    return s;
}

namespace {

inline void mix(std::size_t& h, std::size_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

}  // namespace

std::size_t WorldStateHash::operator()(const WorldState& s) const noexcept {
    std::size_t h = s.turn;
    for (NodeId p : s.positions) mix(h, p);
    for (const auto& q : s.queues) mix(h, (static_cast<std::size_t>(q.task) << 16) ^ q.at);
    for (NodeId p : s.footprint) mix(h, p);
    for (auto m : s.pickups) mix(h, m);
    return h;
}

std::ostream& operator<<(std::ostream& os, const WorldState& s) {
    os << "{pos=[";
    for (std::size_t i = 0; i < s.positions.size(); ++i) os << (i ? "," : "") << s.positions[i];
    os << "] q=[";
    for (std::size_t i = 0; i < s.queues.size(); ++i) {
        os << (i ? "," : "");
        if (s.queues[i].empty()) {
            os << "e";
        } else {
            os << s.queues[i].task << "@" << s.queues[i].at;
        }
    }
    os << "] turn=" << int(s.turn);
    if (s.has_footprints()) {
        os << " fp=[";
        for (int i = 0; i < s.agents(); ++i) {
            os << (i ? "|" : "");
            const auto t = s.trail(i);
            for (std::size_t k = 0; k < t.size(); ++k) os << (k ? "," : "") << t[k];
        }
        os << "]";
    }
    return os << "}";
}

bool is_decision_state(const WorldState& s) {
    return s.turn == kAvatar && !s.queues.empty() && s.queues[kAvatar].empty();
}

// ---------------------------------------------------------------------------

AdversaryBehaviour::AdversaryBehaviour(const Arena& arena, int adversaries)
    : arena_(&arena), adversaries_(adversaries) {
    if (adversaries < 0) throw ConfigError("adversary count must be >= 0");
    dist_.assign(adversaries, std::vector<std::vector<TaskChoice>>(arena.node_count()));
    directional_.resize(adversaries);
    for (auto& d : directional_) d.resize(arena.node_count());
}

std::vector<TaskChoice> AdversaryBehaviour::checked(int adversary, NodeId v, std::vector<TaskChoice> dist) const {
    if (adversary < 1 || adversary > adversaries_) {
        throw ConfigError("adversary index out of range: " + std::to_string(adversary));
    }
    const auto allowed = arena_->tasks_at(v);
    double total = 0.0;
    std::erase_if(dist, [](const TaskChoice& c) { return c.probability == 0.0; });
    for (const auto& c : dist) {
        if (!(c.probability > 0.0) || !std::isfinite(c.probability)) {
            throw ConfigError("behaviour probabilities must be positive and finite");
        }
        if (std::find(allowed.begin(), allowed.end(), c.task) == allowed.end()) {
            throw ConfigError("behaviour support contains task " + std::to_string(c.task) + " not available at " +
                              to_display(arena_->location(v)));
        }
        total += c.probability;
    }
    if (std::abs(total - 1.0) > kProbabilityTolerance) {
        throw ConfigError("behaviour at " + to_display(arena_->location(v)) + " sums to " + std::to_string(total));
    }
    return dist;
}

void AdversaryBehaviour::set(int adversary, NodeId v, std::vector<TaskChoice> dist) {
    dist_[adversary - 1][v] = checked(adversary, v, std::move(dist));
}

void AdversaryBehaviour::set_directional(int adversary, NodeId v, NodeId neck, std::vector<TaskChoice> dist) {
    if (!arena_->has_edge(v, neck)) throw ConfigError("neck is not adjacent to the decision location");
    auto row = checked(adversary, v, std::move(dist));
    auto& slot = directional_[adversary - 1][v];
    for (auto& [n, d] : slot) {
        if (n == neck) {
            d = std::move(row);
            return;
        }
    }
    slot.emplace_back(neck, std::move(row));
}

std::vector<TaskChoice> AdversaryBehaviour::normalised(NodeId v, std::span<const double> weights) const {
    const auto tasks = arena_->tasks_at(v);
    if (weights.size() != tasks.size()) throw ConfigError("weight row count does not match Task(v)");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w)) throw ConfigError("behaviour weights must be non-negative");
        total += w;
    }
    if (total <= 0.0) throw ConfigError("behaviour weights sum to zero at " + to_display(arena_->location(v)));
    std::vector<TaskChoice> dist;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        if (weights[k] > 0.0) dist.push_back({tasks[k], weights[k] / total});
    }
    // Push the rounding residue onto the largest entry so the row sums to 1 within tolerance.
    double sum = 0.0;
    for (const auto& c : dist) sum += c.probability;
    auto biggest = std::max_element(dist.begin(), dist.end(),
                                    [](const auto& a, const auto& b) { return a.probability < b.probability; });
    biggest->probability += 1.0 - sum;
    return dist;
}

void AdversaryBehaviour::set_weights(int adversary, NodeId v, std::span<const double> weights) {
    set(adversary, v, normalised(v, weights));
}

void AdversaryBehaviour::set_directional_weights(int adversary, NodeId v, NodeId neck,
                                                 std::span<const double> weights) {
    set_directional(adversary, v, neck, normalised(v, weights));
}

std::span<const TaskChoice> AdversaryBehaviour::at(int adversary, NodeId v) const {
    if (adversary < 1 || adversary > adversaries_) {
        throw ConfigError("adversary index out of range: " + std::to_string(adversary));
    }
    return dist_[adversary - 1].at(v);
}

std::span<const TaskChoice> AdversaryBehaviour::at(int adversary, NodeId v, NodeId neck) const {
    const auto row = at(adversary, v);
    if (neck == kNoNode) return row;
    for (const auto& [n, d] : directional_[adversary - 1].at(v)) {
        if (n == neck) return d;
    }
    return row;
}

AdversaryBehaviour AdversaryBehaviour::uniform(const Arena& arena, int adversaries) {
    AdversaryBehaviour b(arena, adversaries);
    for (NodeId v : arena.decision_locations()) {
        const auto tasks = arena.tasks_at(v);
        const std::vector<double> w(tasks.size(), 1.0);
        for (int i = 1; i <= adversaries; ++i) b.set_weights(i, v, w);
    }
    return b;
}

AdversaryBehaviour uniform_behaviour(const Arena& arena, int adversaries) {
    return AdversaryBehaviour::uniform(arena, adversaries);
}

AdversaryBehaviour AdversaryBehaviour::load_table(const Arena& arena, int adversaries, std::istream& in) {
    AdversaryBehaviour b = uniform(arena, adversaries);
    // (adversary, node, neck) -> weights; kNoNode marks the location row
    std::map<std::tuple<int, NodeId, NodeId>, std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        int adv = 0, x = 0, y = 0;
        std::size_t idx = 0;
        double w = 0.0;
        if (!(ls >> adv)) continue;
        if (!(ls >> x >> y >> idx >> w)) {
            throw ConfigError("behaviour table line " + std::to_string(lineno) + ": expected 'adversary x y task weight'");
        }
        if (adv < 1 || adv > adversaries) {
            throw ConfigError("behaviour table line " + std::to_string(lineno) + ": adversary out of range");
        }
        NodeId neck = kNoNode;
        if (int nx = 0, ny = 0; ls >> nx >> ny) neck = arena.node({nx - 1, ny - 1});
        const NodeId v = arena.node({x - 1, y - 1});
        const auto tasks = arena.tasks_at(v);
        if (idx >= tasks.size()) {
            throw ConfigError("behaviour table line " + std::to_string(lineno) + ": task index out of range");
        }
        auto& row = rows[{adv, v, neck}];
        row.resize(tasks.size(), 0.0);
        row[idx] = w;
    }
    for (const auto& [key, weights] : rows) {
        const auto [adv, v, neck] = key;
        if (neck == kNoNode) {
            b.set_weights(adv, v, weights);
        } else {
            b.set_directional_weights(adv, v, neck, weights);
        }
    }
    return b;
}

void AdversaryBehaviour::save_table(std::ostream& out) const {
    out << "# adversary x y task_index weight [neck_x neck_y]\n";
    out.precision(17);
    const auto row = [&](int i, NodeId v, std::span<const TaskChoice> dist, NodeId neck) {
        const auto tasks = arena_->tasks_at(v);
        const Location loc = arena_->location(v);
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            double p = 0.0;
            for (const auto& c : dist) {
                if (c.task == tasks[k]) p = c.probability;
            }
            out << i << " " << loc.x + 1 << " " << loc.y + 1 << " " << k << " " << p;
            if (neck != kNoNode) {
                const Location n = arena_->location(neck);
                out << " " << n.x + 1 << " " << n.y + 1;
            }
            out << "\n";
        }
    };
    for (int i = 1; i <= adversaries_; ++i) {
        for (NodeId v : arena_->decision_locations()) {
            if (!dist_[i - 1][v].empty()) row(i, v, dist_[i - 1][v], kNoNode);
            for (const auto& [neck, d] : directional_[i - 1][v]) row(i, v, d, neck);
        }
    }
}

// ---------------------------------------------------------------------------

SafetyMdp::SafetyMdp(const Arena& arena, const AdversaryBehaviour& behaviour, PickupTable pickups,
                     BehaviourSelector select)
    : arena_(&arena), behaviour_(&behaviour), pickups_(std::move(pickups)), select_(std::move(select)) {
    for (const auto& p : pickups_) {
        if (p.size() > 32) throw ConfigError("at most 32 pickups per agent");
    }
}

std::vector<TaskId> SafetyMdp::choosable_tasks(const WorldState& s, int agent) const {
    const auto all = arena_->tasks_at(s.positions[agent]);
    std::vector<TaskId> out(all.begin(), all.end());
    if (s.has_footprints() && s.footprint_len[agent] >= 2) {
        const NodeId neck = s.trail(agent)[1];
        std::vector<TaskId> forward;
        for (TaskId t : out) {
            if (arena_->task(t).path[1] != neck) forward.push_back(t);
        }
        if (!forward.empty()) out = std::move(forward);
    }
    return out;
}

std::vector<TaskChoice> SafetyMdp::adversary_distribution(const WorldState& s, int agent) const {
    const auto tasks = choosable_tasks(s, agent);
    const NodeId neck = s.has_footprints() && s.footprint_len[agent] >= 2 ? s.trail(agent)[1] : kNoNode;
    const AdversaryBehaviour& b =
        select_ && static_cast<std::size_t>(agent) < s.pickups.size() ? select_(agent, s.pickups[agent]) : *behaviour_;
    const auto dist = b.at(agent, s.positions[agent], neck);
    std::vector<TaskChoice> out;
    double mass = 0.0;
    for (const auto& c : dist) {
        if (std::find(tasks.begin(), tasks.end(), c.task) != tasks.end()) {
            out.push_back(c);
            mass += c.probability;
        }
    }
    if (out.empty()) {
        for (TaskId t : tasks) out.push_back({t, 1.0 / static_cast<double>(tasks.size())});
    } else if (out.size() != dist.size()) {
        for (auto& c : out) c.probability /= mass;
    }
    return out;
}

void SafetyMdp::validate(const WorldState& s) const {
    const int n = agents();
    if (s.agents() != n || static_cast<int>(s.queues.size()) != n) {
        throw InvariantViolation("world state has wrong agent count");
    }
    if (s.turn >= n) throw InvariantViolation("turn out of range");
    for (int i = 0; i < n; ++i) {
        if (s.positions[i] >= arena_->node_count()) throw InvariantViolation("agent position not in arena");
        const auto& q = s.queues[i];
        if (!q.empty()) {
            const auto& path = arena_->task(q.task).path;
            if (q.at + 1u >= path.size() || path[q.at] != s.positions[i]) {
                throw InvariantViolation("queue of agent " + std::to_string(i) + " not anchored at its position");
            }
        }
    }
    if (s.has_footprints()) {
        if (static_cast<int>(s.footprint_len.size()) != n) throw InvariantViolation("footprint count mismatch");
        for (int i = 0; i < n; ++i) {
            if (s.footprint_len[i] == 0 || s.trail(i)[0] != s.positions[i]) {
                throw InvariantViolation("footprint of agent " + std::to_string(i) + " does not start at its position");
            }
        }
    }
}

std::vector<ActionLabel> SafetyMdp::available_actions(const WorldState& s) const {
    if (s.turn >= s.positions.size()) throw InvariantViolation("turn out of range");
    if (s.positions[s.turn] >= arena_->node_count()) throw ConfigError("agent position not in arena");
    if (!s.queues[s.turn].empty()) return {ActionLabel::move()};
    if (s.turn != kAvatar) return {ActionLabel::adv_decision()};
    std::vector<ActionLabel> out;
    for (TaskId t : choosable_tasks(s, kAvatar)) out.push_back(ActionLabel::choose(t));
    return out;
}

void SafetyMdp::apply_move(WorldState& s) const {
    const int i = s.turn;
    auto& q = s.queues[i];
    const auto& path = arena_->task(q.task).path;
    if (path[q.at] != s.positions[i]) throw InvariantViolation("queue head not anchored at current position");
    const NodeId next = path[q.at + 1];
    ++q.at;
    if (q.at + 1u == path.size()) q = QueueRef{};
    s.positions[i] = next;

    bool grow = false;
    if (i < static_cast<int>(pickups_.size()) && !s.pickups.empty()) {
        const auto& mine = pickups_[i];
        for (std::size_t k = 0; k < mine.size(); ++k) {
            if (mine[k] == next && (s.pickups[i] >> k & 1u)) {
                s.pickups[i] &= ~(1u << k);
                grow = true;
            }
        }
    }
    if (s.has_footprints()) {
        std::size_t offset = 0;
        for (int k = 0; k < i; ++k) offset += s.footprint_len[k];
        const std::size_t len = s.footprint_len[i];
        const auto first = s.footprint.begin() + static_cast<std::ptrdiff_t>(offset);
        if (grow && len < 255) {
            s.footprint.insert(first, next);
            ++s.footprint_len[i];
        } else {
            std::shift_right(first, first + static_cast<std::ptrdiff_t>(len), 1);
            *first = next;
        }
    }
    s.turn = static_cast<std::uint8_t>((i + 1) % s.agents());
}

void SafetyMdp::step_into(const WorldState& s, ActionLabel a, TransitionDistribution& out) const {
    const int i = s.turn;
    switch (a.kind) {
        case ActionLabel::Kind::Move: {
            if (s.queues[i].empty()) throw InvariantViolation("Move with an empty queue");
            WorldState next = s;
            apply_move(next);
            out.push_back({std::move(next), 1.0});
            return;
        }
        case ActionLabel::Kind::Choose: {
            if (!is_decision_state(s)) throw InvariantViolation("Choose outside a decision state");
            const auto tasks = choosable_tasks(s, kAvatar);
            if (std::find(tasks.begin(), tasks.end(), a.task) == tasks.end()) {
                throw InvariantViolation("task " + std::to_string(a.task) + " not available");
            }
            WorldState next = s;
            next.queues[kAvatar] = {a.task, 0};
            out.push_back({std::move(next), 1.0});
            return;
        }
        case ActionLabel::Kind::AdvDecision: {
            if (i == kAvatar || !s.queues[i].empty()) throw InvariantViolation("AdvDecision not available");
            for (const auto& c : adversary_distribution(s, i)) {
                WorldState next = s;
                next.queues[i] = {c.task, 0};
                out.push_back({std::move(next), c.probability});
            }
            return;
        }
    }
}

TransitionDistribution SafetyMdp::step(const WorldState& s, ActionLabel a) const {
    TransitionDistribution out;
    step_into(s, a, out);
    return out;
}

bool head_collision(const WorldState& s) {
    for (int i = 1; i < s.agents(); ++i) {
        if (s.positions[i] == s.positions[kAvatar]) return true;
    }
    return false;
}

bool footprint_collision(const WorldState& s) {
    if (head_collision(s)) return true;
    if (!s.has_footprints()) return false;
    const NodeId head = s.positions[kAvatar];
    const auto own = s.trail(kAvatar);
    if (std::find(own.begin() + 1, own.end(), head) != own.end()) return true;
    const auto others = std::span<const NodeId>(s.footprint).subspan(own.size());
    return std::find(others.begin(), others.end(), head) != others.end();
}

}  // namespace oshield
