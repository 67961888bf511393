#include <algorithm>
#include <string>

#include "oshield/error.hpp"
#include "oshield/shielding.hpp"

namespace oshield {

std::span<const StateIndex> SubMdp::targets(StateIndex i, std::size_t k) const {
    const std::size_t a = action_offset_[i] + k;
    return std::span<const StateIndex>(outcome_target_).subspan(outcome_offset_[a], outcome_offset_[a + 1] - outcome_offset_[a]);
}

std::span<const double> SubMdp::probabilities(StateIndex i, std::size_t k) const {
    const std::size_t a = action_offset_[i] + k;
    return std::span<const double>(outcome_prob_).subspan(outcome_offset_[a], outcome_offset_[a + 1] - outcome_offset_[a]);
}

std::optional<StateIndex> SubMdp::find(const WorldState& s, int depth) const {
    auto it = index_.find(DepthState{s, static_cast<std::uint16_t>(depth)});
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

int rounds_until_decision(const Arena& arena, const WorldState& s) {
    // The avatar moves once per round; once it has moved in the current
    // round its decision comes one round later.
    const auto& q = s.queues.at(kAvatar);
    const int pending = q.empty() ? 0 : static_cast<int>(arena.task(q.task).path.size()) - 1 - q.at;
    return pending + (s.turn != kAvatar ? 1 : 0);
}

namespace {

struct Successor {
    WorldState state;
    double probability;
    std::uint16_t depth;
};

struct Expansion {
    std::vector<ActionLabel> actions;
    std::vector<std::uint32_t> counts;  // outcomes per action
    std::vector<Successor> outcomes;
};

}  // namespace

class SubMdpBuilder {
public:
    SubMdpBuilder(const SafetyMdp& mdp, const BuildOptions& options) : mdp_(mdp), options_(options) {}

    SubMdp build(const WorldState& root, int horizon) {
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
        if (is_decision_state(root) && !options_.allow_decision_root) {
            throw ConfigError("sub-MDP root must follow a task commitment; avatar queue is empty");
        }
        mdp_.validate(root);

        SubMdp sub;
        sub.horizon_ = horizon;
        sub.task_len_ = rounds_until_decision(mdp_.arena(), root);
        sub.pruned_ = static_cast<bool>(options_.prune_unsafe);
        bound_ = sub.task_len_ + horizon;
        if (bound_ > 0xFFFF) throw ConfigError("horizon too large");

        insert(sub, root, 0);
        std::vector<StateIndex> frontier{0};
        std::vector<StateIndex> next;
        std::vector<Expansion> expansions;
        agents_ = mdp_.agents();

        while (!frontier.empty()) {
            if (options_.stop.stop_requested()) throw Cancelled();
            expansions.assign(frontier.size(), Expansion{});
            const auto n = static_cast<std::ptrdiff_t>(frontier.size());
            if (options_.execution == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic, 64)
                for (std::ptrdiff_t k = 0; k < n; ++k) {
                    expand(sub.state(frontier[k]), sub.depth_[frontier[k]], expansions[k]);
                }
            } else {
                for (std::ptrdiff_t k = 0; k < n; ++k) {
                    expand(sub.state(frontier[k]), sub.depth_[frontier[k]], expansions[k]);
                }
            }
            // Merge in frontier order so that indices do not depend on the schedule.
            next.clear();
            for (std::ptrdiff_t k = 0; k < n; ++k) {
                auto& e = expansions[k];
                std::size_t o = 0;
                for (std::size_t a = 0; a < e.actions.size(); ++a) {
                    sub.action_label_.push_back(e.actions[a]);
                    for (std::uint32_t c = 0; c < e.counts[a]; ++c, ++o) {
                        auto& succ = e.outcomes[o];
                        const auto [idx, fresh] = insert(sub, std::move(succ.state), succ.depth);
                        if (fresh) next.push_back(idx);
                        sub.outcome_target_.push_back(idx);
                        sub.outcome_prob_.push_back(succ.probability);
                    }
                    sub.outcome_offset_.push_back(static_cast<std::uint32_t>(sub.outcome_target_.size()));
                }
                sub.action_offset_.push_back(static_cast<std::uint32_t>(sub.action_label_.size()));
            }
            frontier.swap(next);
        }

        for (StateIndex i = 0; i < sub.size(); ++i) {
            if (sub.depth_[i] == sub.task_len_ && is_decision_state(sub.state(i))) {
                sub.first_decision_.push_back(i);
                auto tasks = mdp_.choosable_tasks(sub.state(i), kAvatar);
                std::sort(tasks.begin(), tasks.end());
                sub.fd_tasks_.insert(sub.fd_tasks_.end(), tasks.begin(), tasks.end());
                sub.fd_state_tasks_.push_back(std::move(tasks));
            }
        }
        std::sort(sub.fd_tasks_.begin(), sub.fd_tasks_.end());
        sub.fd_tasks_.erase(std::unique(sub.fd_tasks_.begin(), sub.fd_tasks_.end()), sub.fd_tasks_.end());
        return sub;
    }

private:
    std::pair<StateIndex, bool> insert(SubMdp& sub, WorldState s, std::uint16_t depth) {
        const auto candidate = static_cast<StateIndex>(sub.states_.size());
        auto [it, fresh] = sub.index_.try_emplace(DepthState{std::move(s), depth}, candidate);
        if (fresh) {
            sub.states_.push_back(&it->first.state);
            sub.depth_.push_back(depth);
        }
        return {it->second, fresh};
    }

    void expand(const WorldState& s, int depth, Expansion& out) const {
        if (depth >= bound_) return;
        if (options_.prune_unsafe && options_.prune_unsafe(s)) return;
        TransitionDistribution dist;
        for (const ActionLabel a : mdp_.available_actions(s)) {
            dist.clear();
            mdp_.step_into(s, a, dist);
            out.actions.push_back(a);
            out.counts.push_back(static_cast<std::uint32_t>(dist.size()));
            const bool last_mover = a.kind == ActionLabel::Kind::Move && s.turn == agents_ - 1;
            const auto d = static_cast<std::uint16_t>(depth + (last_mover ? 1 : 0));
            for (auto& o : dist) out.outcomes.push_back({std::move(o.state), o.probability, d});
        }
    }

    const SafetyMdp& mdp_;
    const BuildOptions& options_;
    int bound_ = 0;
    int agents_ = 0;
};

SubMdp build_submdp(const SafetyMdp& mdp, const WorldState& s_t, int horizon, const BuildOptions& options) {
    return SubMdpBuilder(mdp, options).build(s_t, horizon);
}

}  // namespace oshield
