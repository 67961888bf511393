#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace oshield {

using NodeId = std::uint16_t;
using TaskId = std::uint32_t;

inline constexpr NodeId kNoNode = 0xFFFF;
inline constexpr TaskId kNoTask = 0xFFFFFFFF;

/// Tile coordinate, 0-based. Rows are y, columns are x.
struct Location {
    int x = 0;
    int y = 0;

    friend bool operator==(const Location&, const Location&) = default;
    /// Lexicographic by (y, x), the stable order used for dumps.
    friend std::strong_ordering operator<=>(const Location& a, const Location& b) {
        if (auto c = a.y <=> b.y; c != 0) return c;
        return a.x <=> b.x;
    }
};

/// 1-based "(x,y)" rendering used in logs and the UI.
std::string to_display(Location loc);

/// A maximal corridor segment between two decision locations, as a node path.
struct Task {
    TaskId id = kNoTask;
    std::vector<NodeId> path;  // v1 .. vn, n >= 2

    NodeId start() const { return path.front(); }
    NodeId end() const { return path.back(); }
    /// Number of edges (activities).
    std::size_t length() const { return path.size() - 1; }
};

/// Map character recorded with its location but treated as corridor.
struct Marker {
    char symbol;
    Location where;
};

/// Directed grid graph with decision locations and the task function.
/// Immutable after construction.
class Arena {
public:
    static Arena from_ascii(std::string_view text);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t node_count() const { return nodes_.size(); }

    Location location(NodeId n) const { return nodes_.at(n); }
    std::optional<NodeId> node_at(Location loc) const;
    /// Node id for a corridor tile; throws ConfigError for walls or out-of-bounds.
    NodeId node(Location loc) const;

    std::span<const NodeId> neighbours(NodeId n) const { return adjacency_.at(n); }
    bool has_edge(NodeId from, NodeId to) const;
    std::size_t edge_count() const;

    bool is_decision(NodeId n) const { return decision_.at(n); }
    std::vector<NodeId> decision_locations() const;

    const std::vector<Task>& tasks() const { return tasks_; }
    const Task& task(TaskId id) const { return tasks_.at(id); }
    /// Task(v). Throws ConfigError when v is not a decision location.
    std::span<const TaskId> tasks_at(NodeId v) const;
    /// The task containing the directed edge (from, to) and the index of `from` in its path.
    std::pair<TaskId, std::size_t> task_through(NodeId from, NodeId to) const;

    const std::vector<Marker>& markers() const { return markers_; }
    std::vector<Location> markers_of(char symbol) const;

    /// Plain ASCII map; re-parsing yields an isomorphic arena.
    std::string to_ascii() const;
    /// Adjacency and task listing, lexicographic by (y,x), 1-based coordinates.
    std::string debug_dump() const;

private:
    Arena() = default;
    void build_tasks();

    int width_ = 0;
    int height_ = 0;
    std::vector<Location> nodes_;
    std::vector<NodeId> grid_;  // width*height, kNoNode for walls
    std::vector<std::vector<NodeId>> adjacency_;
    std::vector<bool> decision_;
    std::vector<Task> tasks_;
    std::vector<std::vector<TaskId>> tasks_from_;
    std::vector<std::vector<std::pair<TaskId, std::uint32_t>>> edge_task_;  // parallel to adjacency_
    std::vector<Marker> markers_;
};

/// Parse an ASCII grid map: '#' wall, '.' corridor, 'A'/'E' agents and
/// lowercase apples as corridor metadata.
Arena parse_grid_map(std::string_view text);

/// Read and parse a map file.
Arena load_map_file(const std::string& path);

}  // namespace oshield
