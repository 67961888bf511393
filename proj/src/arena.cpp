#include "oshield/arena.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "oshield/error.hpp"

namespace oshield {

std::string to_display(Location loc) {
    return "(" + std::to_string(loc.x + 1) + "," + std::to_string(loc.y + 1) + ")";
}

namespace {

bool is_marker(char c) { return c == 'A' || c == 'E' || std::islower(static_cast<unsigned char>(c)); }

std::vector<std::string> split_rows(std::string_view text) {
    std::vector<std::string> rows;
    std::string current;
    for (char c : text) {
        if (c == '\n') {
            rows.push_back(current);
            current.clear();
        } else if (c != '\r') {
            current.push_back(c);
        }
    }
    if (!current.empty()) rows.push_back(current);
    while (!rows.empty() && rows.back().empty()) rows.pop_back();
    return rows;
}

}  // namespace

Arena Arena::from_ascii(std::string_view text) {
    const auto rows = split_rows(text);
    if (rows.empty()) throw ConfigError("map is empty");
    Arena a;
    a.height_ = static_cast<int>(rows.size());
    a.width_ = static_cast<int>(rows.front().size());
    if (a.width_ == 0) throw ConfigError("map row 1 is empty");
    a.grid_.assign(static_cast<std::size_t>(a.width_) * a.height_, kNoNode);

    for (int y = 0; y < a.height_; ++y) {
        if (static_cast<int>(rows[y].size()) != a.width_) {
            throw ConfigError("map is not rectangular: row " + std::to_string(y + 1) + " has " +
                              std::to_string(rows[y].size()) + " columns, expected " + std::to_string(a.width_));
        }
        for (int x = 0; x < a.width_; ++x) {
            const char c = rows[y][x];
            if (c == '#') continue;
            if (c != '.' && !is_marker(c)) {
                throw ConfigError(std::string("unexpected map character '") + c + "' at " + to_display({x, y}));
            }
            if (a.nodes_.size() >= kNoNode) throw ConfigError("map has too many corridor tiles");
            a.grid_[static_cast<std::size_t>(y) * a.width_ + x] = static_cast<NodeId>(a.nodes_.size());
            a.nodes_.push_back({x, y});
            if (c != '.') a.markers_.push_back({c, {x, y}});
        }
    }

    // Node ids are assigned in (y,x) order, so sorting neighbours by id sorts them by location.
    a.adjacency_.resize(a.nodes_.size());
    for (NodeId n = 0; n < a.nodes_.size(); ++n) {
        const auto [x, y] = a.nodes_[n];
        for (const auto& [dx, dy] : {std::pair{0, -1}, {-1, 0}, {1, 0}, {0, 1}}) {
            if (auto m = a.node_at({x + dx, y + dy})) a.adjacency_[n].push_back(*m);
        }
        std::sort(a.adjacency_[n].begin(), a.adjacency_[n].end());
        if (a.adjacency_[n].empty()) throw ConfigError("isolated corridor tile at " + to_display(a.nodes_[n]));
    }

    a.decision_.assign(a.nodes_.size(), false);
    for (NodeId n = 0; n < a.nodes_.size(); ++n) {
        const auto& adj = a.adjacency_[n];
        if (adj.size() != 2) {
            a.decision_[n] = true;
            continue;
        }
        // Corners are decision locations too; only straight corridor tiles are not.
        const Location p = a.nodes_[adj[0]];
        const Location q = a.nodes_[adj[1]];
        a.decision_[n] = !(p.x == q.x || p.y == q.y);
    }
    if (std::count(a.decision_.begin(), a.decision_.end(), true) < 2) {
        throw ConfigError("map has fewer than 2 decision locations");
    }
    a.build_tasks();
    return a;
}

void Arena::build_tasks() {
    tasks_from_.assign(nodes_.size(), {});
    edge_task_.assign(nodes_.size(), {});
    for (NodeId n = 0; n < nodes_.size(); ++n) edge_task_[n].assign(adjacency_[n].size(), {kNoTask, 0});

    for (NodeId v = 0; v < nodes_.size(); ++v) {
        if (!decision_[v]) continue;
        for (NodeId first : adjacency_[v]) {
            Task t;
            t.id = static_cast<TaskId>(tasks_.size());
            t.path = {v, first};
            NodeId prev = v;
            NodeId cur = first;
            while (!decision_[cur]) {
                const auto& adj = adjacency_[cur];
                const NodeId next = adj[0] == prev ? adj[1] : adj[0];
                prev = cur;
                cur = next;
                t.path.push_back(cur);
            }
            for (std::size_t i = 0; i + 1 < t.path.size(); ++i) {
                const NodeId from = t.path[i];
                const auto& adj = adjacency_[from];
                const auto slot = std::find(adj.begin(), adj.end(), t.path[i + 1]) - adj.begin();
                edge_task_[from][slot] = {t.id, static_cast<std::uint32_t>(i)};
            }
            tasks_from_[v].push_back(t.id);
            tasks_.push_back(std::move(t));
        }
    }
    // A ring of straight tiles with no crossing is never covered by a task.
    for (NodeId n = 0; n < nodes_.size(); ++n) {
        for (const auto& [task, idx] : edge_task_[n]) {
            if (task == kNoTask) {
                throw ConfigError("corridor loop without a decision location through " + to_display(nodes_[n]));
            }
        }
    }
}

std::optional<NodeId> Arena::node_at(Location loc) const {
    if (loc.x < 0 || loc.y < 0 || loc.x >= width_ || loc.y >= height_) return std::nullopt;
    const NodeId n = grid_[static_cast<std::size_t>(loc.y) * width_ + loc.x];
    if (n == kNoNode) return std::nullopt;
    return n;
}

NodeId Arena::node(Location loc) const {
    if (auto n = node_at(loc)) return *n;
    throw ConfigError("location " + to_display(loc) + " is not a corridor tile");
}

bool Arena::has_edge(NodeId from, NodeId to) const {
    const auto& adj = adjacency_.at(from);
    return std::binary_search(adj.begin(), adj.end(), to);
}

std::size_t Arena::edge_count() const {
    std::size_t n = 0;
    for (const auto& adj : adjacency_) n += adj.size();
    return n;
}

std::vector<NodeId> Arena::decision_locations() const {
    std::vector<NodeId> out;
    for (NodeId n = 0; n < nodes_.size(); ++n) {
        if (decision_[n]) out.push_back(n);
    }
    return out;
}

std::span<const TaskId> Arena::tasks_at(NodeId v) const {
    if (v >= nodes_.size() || !decision_[v]) {
        throw ConfigError("not a decision location: " + (v < nodes_.size() ? to_display(nodes_[v]) : "#" + std::to_string(v)));
    }
    return tasks_from_[v];
}

std::pair<TaskId, std::size_t> Arena::task_through(NodeId from, NodeId to) const {
    const auto& adj = adjacency_.at(from);
    const auto it = std::lower_bound(adj.begin(), adj.end(), to);
    if (it == adj.end() || *it != to) {
        throw InvariantViolation("no edge " + to_display(nodes_[from]) + " -> " + to_display(nodes_.at(to)));
    }
    const auto [task, idx] = edge_task_[from][it - adj.begin()];
    return {task, idx};
}

std::vector<Location> Arena::markers_of(char symbol) const {
    std::vector<Location> out;
    for (const auto& m : markers_) {
        if (m.symbol == symbol) out.push_back(m.where);
    }
    return out;
}

std::string Arena::to_ascii() const {
    std::string out;
    out.reserve(static_cast<std::size_t>(width_ + 1) * height_);
    std::vector<char> chars(grid_.size(), '#');
    for (const auto& loc : nodes_) chars[static_cast<std::size_t>(loc.y) * width_ + loc.x] = '.';
    for (const auto& m : markers_) chars[static_cast<std::size_t>(m.where.y) * width_ + m.where.x] = m.symbol;
    for (int y = 0; y < height_; ++y) {
        out.append(chars.begin() + static_cast<std::ptrdiff_t>(y) * width_,
                   chars.begin() + static_cast<std::ptrdiff_t>(y + 1) * width_);
        out.push_back('\n');
    }
    return out;
}

std::string Arena::debug_dump() const {
    std::ostringstream os;
    os << "arena " << width_ << "x" << height_ << " nodes=" << nodes_.size() << " edges=" << edge_count()
       << " tasks=" << tasks_.size() << "\n";
    for (NodeId n = 0; n < nodes_.size(); ++n) {
        os << to_display(nodes_[n]) << (decision_[n] ? " D" : "  ") << " ->";
        for (NodeId m : adjacency_[n]) os << " " << to_display(nodes_[m]);
        os << "\n";
    }
    for (NodeId v = 0; v < nodes_.size(); ++v) {
        for (TaskId t : tasks_from_[v]) {
            os << "task " << t << ":";
            for (NodeId n : tasks_[t].path) os << " " << to_display(nodes_[n]);
            os << "\n";
        }
    }
    return os.str();
}

Arena parse_grid_map(std::string_view text) { return Arena::from_ascii(text); }

Arena load_map_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open map file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return Arena::from_ascii(ss.str());
}

}  // namespace oshield
