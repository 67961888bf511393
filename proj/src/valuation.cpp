#include <algorithm>
#include <chrono>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "oshield/error.hpp"
#include "oshield/shielding.hpp"

namespace oshield {

std::vector<StateIndex> topological_order(const SubMdp& sub) {
    const std::size_t n = sub.size();
    std::vector<std::uint32_t> indegree(n, 0);
    for (StateIndex i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < sub.action_count(i); ++a) {
            for (StateIndex t : sub.targets(i, a)) ++indegree[t];
        }
    }
    std::vector<StateIndex> order;
    order.reserve(n);
    for (StateIndex i = 0; i < n; ++i) {
        if (indegree[i] == 0) order.push_back(i);
    }
    for (std::size_t head = 0; head < order.size(); ++head) {
        const StateIndex i = order[head];
        for (std::size_t a = 0; a < sub.action_count(i); ++a) {
            for (StateIndex t : sub.targets(i, a)) {
                if (--indegree[t] == 0) order.push_back(t);
            }
        }
    }
    if (order.size() != n) {
        throw InvariantViolation("sub-MDP contains a cycle (" + std::to_string(n - order.size()) + " states on cycles)");
    }
    return order;
}

void check_structure(const SubMdp& sub, const UnsafePredicate& unsafe) {
    topological_order(sub);
    for (StateIndex i = 0; i < sub.size(); ++i) {
        const int d = sub.depth(i);
        if (d < sub.task_len() && is_decision_state(sub.state(i))) {
            throw InvariantViolation("decision state below the first decision depth");
        }
        if (d > sub.depth_bound()) throw InvariantViolation("state beyond the depth bound");
        if (d == sub.depth_bound() && sub.action_count(i) != 0) {
            throw InvariantViolation("transitions defined at the depth bound");
        }
        if (d < sub.depth_bound() && sub.action_count(i) == 0) {
            const bool absorbing = sub.pruned() && unsafe && unsafe(sub.state(i));
            if (!absorbing) throw InvariantViolation("state without actions before the depth bound");
        }
        for (std::size_t a = 0; a < sub.action_count(i); ++a) {
            double total = 0.0;
            for (double p : sub.probabilities(i, a)) {
                if (!(p > 0.0)) throw InvariantViolation("non-positive transition probability");
                total += p;
            }
            if (std::abs(total - 1.0) > kProbabilityTolerance) {
                throw InvariantViolation("transition distribution does not sum to 1");
            }
        }
    }
}

namespace {

std::vector<std::uint8_t> evaluate_unsafe(const SubMdp& sub, const UnsafePredicate& unsafe, Execution execution) {
    const auto n = static_cast<std::ptrdiff_t>(sub.size());
    std::vector<std::uint8_t> flags(sub.size(), 0);
    if (!unsafe) return flags;
    if (execution == Execution::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) flags[i] = unsafe(sub.state(static_cast<StateIndex>(i))) ? 1 : 0;
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) flags[i] = unsafe(sub.state(static_cast<StateIndex>(i))) ? 1 : 0;
    }
    return flags;
}

double expectation(const SubMdp& sub, StateIndex i, std::size_t a, std::span<const double> values) {
    double v = 0.0;
    const auto targets = sub.targets(i, a);
    const auto probs = sub.probabilities(i, a);
    for (std::size_t k = 0; k < targets.size(); ++k) v += probs[k] * values[targets[k]];
    return v;
}

/// Bellman backup of one state, given successor values. Avatar decisions
/// take the minimum; every other state has exactly one action.
double backup(const SubMdp& sub, StateIndex i, std::span<const std::uint8_t> unsafe, std::span<const double> values) {
    if (unsafe[i]) return 1.0;
    const std::size_t actions = sub.action_count(i);
    if (actions == 0) {
        if (sub.depth(i) < sub.depth_bound()) {
            throw InvariantViolation("unexpanded state before the depth bound is not unsafe; predicate mismatch");
        }
        return 0.0;
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < actions; ++a) best = std::min(best, expectation(sub, i, a, values));
    return best;
}

std::vector<double> sweep_serial(const SubMdp& sub, std::span<const std::uint8_t> unsafe) {
    const auto order = topological_order(sub);
    std::vector<double> values(sub.size(), 0.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) values[*it] = backup(sub, *it, unsafe, values);
    return values;
}

/// Wavefront version: states grouped by height (longest path to a leaf);
/// every state of one height only reads values of lower heights.
std::vector<double> sweep_parallel(const SubMdp& sub, std::span<const std::uint8_t> unsafe) {
    const auto order = topological_order(sub);
    std::vector<std::uint32_t> height(sub.size(), 0);
    std::uint32_t max_height = 0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const StateIndex i = *it;
        std::uint32_t h = 0;
        for (std::size_t a = 0; a < sub.action_count(i); ++a) {
            for (StateIndex t : sub.targets(i, a)) h = std::max(h, height[t] + 1);
        }
        height[i] = h;
        max_height = std::max(max_height, h);
    }
    std::vector<std::uint32_t> level_begin(max_height + 2, 0);
    for (auto h : height) ++level_begin[h + 1];
    for (std::size_t k = 1; k < level_begin.size(); ++k) level_begin[k] += level_begin[k - 1];
    std::vector<StateIndex> by_level(sub.size());
    {
        auto fill = level_begin;
        for (StateIndex i = 0; i < sub.size(); ++i) by_level[fill[height[i]]++] = i;
    }
    std::vector<double> values(sub.size(), 0.0);
    for (std::uint32_t h = 0; h <= max_height; ++h) {
        const auto lo = static_cast<std::ptrdiff_t>(level_begin[h]);
        const auto hi = static_cast<std::ptrdiff_t>(level_begin[h + 1]);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t k = lo; k < hi; ++k) {
            const StateIndex i = by_level[k];
            values[i] = backup(sub, i, unsafe, values);
        }
    }
    return values;
}

std::vector<double> sweep(const SubMdp& sub, std::span<const std::uint8_t> unsafe, Execution execution) {
    return execution == Execution::Parallel ? sweep_parallel(sub, unsafe) : sweep_serial(sub, unsafe);
}

}  // namespace

std::vector<double> min_violation_prob(const SubMdp& sub, const UnsafePredicate& unsafe, Execution execution) {
    const auto flags = evaluate_unsafe(sub, unsafe, execution);
    return sweep(sub, flags, execution);
}

// ---------------------------------------------------------------------------

double TaskValuation::value(TaskId t) const {
    for (const auto& [task, v] : values) {
        if (task == t) return v;
    }
    throw ConfigError("task " + std::to_string(t) + " not in valuation");
}

bool TaskValuation::contains(TaskId t) const {
    return std::any_of(values.begin(), values.end(), [t](const auto& e) { return e.first == t; });
}

std::vector<TaskId> TaskValuation::argmin() const {
    std::vector<TaskId> out;
    for (const auto& [task, v] : values) {
        if (v == optimal) out.push_back(task);
    }
    return out;
}

ShieldAnalysis::ShieldAnalysis(SubMdp sub, UnsafePredicate unsafe, Execution execution) : sub_(std::move(sub)) {
    unsafe_ = evaluate_unsafe(sub_, unsafe, execution);
    values_ = sweep(sub_, unsafe_, execution);

    // Pre-decision region: everything shallower than S_FD, plus S_FD itself.
    const auto order = topological_order(sub_);
    upper_pos_.assign(sub_.size(), -1);
    const auto fd = sub_.first_decision_states();
    std::vector<std::int32_t> fd_pos(sub_.size(), -1);
    for (std::size_t k = 0; k < fd.size(); ++k) fd_pos[fd[k]] = static_cast<std::int32_t>(k);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (sub_.depth(*it) < sub_.task_len() || fd_pos[*it] >= 0) {
            upper_pos_[*it] = static_cast<std::int32_t>(upper_.size());
            upper_.push_back(*it);
        }
    }

    const auto tasks = sub_.first_decision_tasks();
    pinned_.assign(tasks.size(), std::vector<double>(upper_.size(), 0.0));
    const auto task_count = static_cast<std::ptrdiff_t>(tasks.size());

    auto pin = [&](std::ptrdiff_t tk) {
        const TaskId t = tasks[tk];
        auto& local = pinned_[tk];
        for (std::size_t u = 0; u < upper_.size(); ++u) {
            const StateIndex i = upper_[u];
            if (unsafe_[i]) {
                local[u] = 1.0;
                continue;
            }
            if (fd_pos[i] >= 0) {
                // Pin Act(s_FD) = {t}; where t is unavailable keep the local minimum.
                local[u] = values_[i];
                for (std::size_t a = 0; a < sub_.action_count(i); ++a) {
                    const ActionLabel label = sub_.action(i, a);
                    if (label.kind == ActionLabel::Kind::Choose && label.task == t) {
                        local[u] = expectation(sub_, i, a, values_);
                    }
                }
                continue;
            }
            if (sub_.action_count(i) == 0) {
                local[u] = values_[i];
                continue;
            }
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < sub_.action_count(i); ++a) {
                double v = 0.0;
                const auto targets = sub_.targets(i, a);
                const auto probs = sub_.probabilities(i, a);
                for (std::size_t k = 0; k < targets.size(); ++k) {
                    const auto p = upper_pos_[targets[k]];
                    v += probs[k] * (p >= 0 ? local[p] : values_[targets[k]]);
                }
                best = std::min(best, v);
            }
            local[u] = best;
        }
    };
    if (execution == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t tk = 0; tk < task_count; ++tk) pin(tk);
    } else {
        for (std::ptrdiff_t tk = 0; tk < task_count; ++tk) pin(tk);
    }
}

std::optional<StateIndex> ShieldAnalysis::locate(const WorldState& observed) const {
    for (int d = 0; d <= sub_.task_len(); ++d) {
        if (auto i = sub_.find(observed, d); i && upper_pos_[*i] >= 0) return i;
    }
    return std::nullopt;
}

TaskValuation ShieldAnalysis::valuation_at(StateIndex state) const {
    if (state >= sub_.size() || upper_pos_[state] < 0) {
        throw ConfigError("re-rooting requires a state above the first decision frontier");
    }
    const auto tasks = sub_.first_decision_tasks();
    std::vector<std::uint8_t> in_domain(tasks.size(), state == 0 ? 1 : 0);
    if (state != 0) {
        // Task(S_FD) restricted to first decision states reachable from the new root.
        const auto fd = sub_.first_decision_states();
        std::vector<std::uint8_t> seen(upper_.size(), 0);
        std::vector<StateIndex> stack{state};
        seen[upper_pos_[state]] = 1;
        while (!stack.empty()) {
            const StateIndex i = stack.back();
            stack.pop_back();
            if (const auto it = std::lower_bound(fd.begin(), fd.end(), i); it != fd.end() && *it == i) {
                for (TaskId t : sub_.tasks_of_first_decision(static_cast<std::size_t>(it - fd.begin()))) {
                    in_domain[std::lower_bound(tasks.begin(), tasks.end(), t) - tasks.begin()] = 1;
                }
                continue;
            }
            for (std::size_t a = 0; a < sub_.action_count(i); ++a) {
                for (StateIndex t : sub_.targets(i, a)) {
                    const auto p = upper_pos_[t];
                    if (p >= 0 && !seen[p]) {
                        seen[p] = 1;
                        stack.push_back(t);
                    }
                }
            }
        }
    }
    TaskValuation v;
    v.optimal = std::numeric_limits<double>::infinity();
    const auto u = upper_pos_[state];
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        if (!in_domain[k]) continue;
        const double val = pinned_[k][u];
        v.values.emplace_back(tasks[k], val);
        v.optimal = std::min(v.optimal, val);
    }
    if (v.values.empty()) throw InvariantViolation("Task(S_FD) is empty");
    return v;
}

TaskValuation task_valuation(const SubMdp& sub, const UnsafePredicate& unsafe, Execution execution) {
    if (sub.first_decision_states().empty() || sub.first_decision_tasks().empty()) {
        throw InvariantViolation("Task(S_FD) is empty");
    }
    // Literal form: one full sweep per task with Act(s_FD) pinned to {t}.
    // ShieldAnalysis gets the same numbers by reusing the values below S_FD.
    const auto flags = evaluate_unsafe(sub, unsafe, execution);
    const auto order = topological_order(sub);
    const auto fd = sub.first_decision_states();

    TaskValuation v;
    v.optimal = std::numeric_limits<double>::infinity();
    std::vector<double> values(sub.size(), 0.0);
    for (TaskId t : sub.first_decision_tasks()) {
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const StateIndex i = *it;
            double val = backup(sub, i, flags, values);
            if (!flags[i] && std::binary_search(fd.begin(), fd.end(), i)) {
                for (std::size_t a = 0; a < sub.action_count(i); ++a) {
                    const ActionLabel label = sub.action(i, a);
                    if (label.kind == ActionLabel::Kind::Choose && label.task == t) val = expectation(sub, i, a, values);
                }
            }
            values[i] = val;
        }
        v.values.emplace_back(t, values[0]);
        v.optimal = std::min(v.optimal, values[0]);
    }
    return v;
}

// ---------------------------------------------------------------------------

std::string describe(const ThresholdPolicy& p) {
    std::ostringstream os;
    if (const auto* r = std::get_if<RelativeThreshold>(&p)) {
        os << "relative(delta=" << r->delta << ")";
    } else {
        os << "absolute(lambda=" << std::get<AbsoluteThreshold>(p).lambda << ")";
    }
    return os.str();
}

void validate(const ThresholdPolicy& p) {
    const double x = std::visit([](const auto& t) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, RelativeThreshold>) {
            return t.delta;
        } else {
            return t.lambda;
        }
    }, p);
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("threshold must lie in [0,1]: " + describe(p));
}

bool Shield::allows(TaskId t) const { return std::binary_search(allowed.begin(), allowed.end(), t); }

Shield shield_relative(const TaskValuation& v, double delta) {
    validate(RelativeThreshold{delta});
    if (v.empty()) throw InvariantViolation("cannot shield an empty valuation");
    Shield s;
    s.policy = RelativeThreshold{delta};
    s.valuation = v;
    for (const auto& [task, val] : v.values) {
        if (delta * val <= v.optimal) s.allowed.push_back(task);
    }
    return s;
}

Shield shield_absolute(const TaskValuation& v, double lambda) {
    validate(AbsoluteThreshold{lambda});
    if (v.empty()) throw InvariantViolation("cannot shield an empty valuation");
    Shield s;
    s.policy = AbsoluteThreshold{lambda};
    s.valuation = v;
    for (const auto& [task, val] : v.values) {
        if (val <= lambda) s.allowed.push_back(task);
    }
    if (s.allowed.empty()) {
        s.allowed = shield_relative(v, 1.0).allowed;
        s.fallback = true;
    }
    return s;
}

Shield make_shield(const TaskValuation& v, const ThresholdPolicy& policy) {
    if (const auto* r = std::get_if<RelativeThreshold>(&policy)) return shield_relative(v, r->delta);
    return shield_absolute(v, std::get<AbsoluteThreshold>(policy).lambda);
}

Shield update_shield(const ShieldAnalysis& analysis, const WorldState& observed, const ThresholdPolicy& policy) {
    const auto idx = analysis.locate(observed);
    if (!idx) throw ConfigError("observed state is not part of the sub-MDP above its first decision states");
    return make_shield(analysis.valuation_at(*idx), policy);
}

Shield compute_shield(const SafetyMdp& mdp, const WorldState& s_t, int horizon, const UnsafePredicate& unsafe,
                      const ThresholdPolicy& policy, Execution execution, std::stop_token stop) {
    validate(policy);
    BuildOptions options{execution, unsafe, stop};
    ShieldAnalysis analysis(build_submdp(mdp, s_t, horizon, options), unsafe, execution);
    if (stop.stop_requested()) throw Cancelled();
    return make_shield(analysis.valuation(), policy);
}

TaskValuation decision_valuation(const SafetyMdp& mdp, const WorldState& decision, int horizon,
                                 const UnsafePredicate& unsafe, Execution execution) {
    if (!is_decision_state(decision)) throw ConfigError("decision_valuation needs a decision state");
    BuildOptions options{execution, unsafe, {}, true};
    return ShieldAnalysis(build_submdp(mdp, decision, horizon, options), unsafe, execution).valuation();
}

// ---------------------------------------------------------------------------

ShieldJob::ShieldJob(Work work) {
    std::promise<Published> promise;
    result_ = promise.get_future();
    worker_ = std::jthread([work = std::move(work), promise = std::move(promise)](std::stop_token stop) mutable {
        const auto start = std::chrono::steady_clock::now();
        try {
            Shield s = work(stop);
            const std::chrono::duration<double, std::milli> took = std::chrono::steady_clock::now() - start;
            promise.set_value(Published{std::move(s), took.count()});
        } catch (...) {
            promise.set_exception(std::current_exception());
        }
    });
}

ShieldJob::~ShieldJob() { cancel(); }

bool ShieldJob::ready() const {
    return result_.valid() && result_.wait_for(std::chrono::seconds(0)) == std::future_status::ready;
}

Shield ShieldJob::wait() {
    if (!result_.valid()) throw InvariantViolation("shield already consumed");
    const auto start = std::chrono::steady_clock::now();
    waited_ = !ready();
    result_.wait();
    const std::chrono::duration<double, std::milli> blocked = std::chrono::steady_clock::now() - start;
    wait_ms_ = waited_ ? blocked.count() : 0.0;
    auto published = result_.get();
    compute_ms_ = published.compute_ms;
    return std::move(published.shield);
}

void ShieldJob::cancel() {
    if (worker_.joinable()) {
        worker_.request_stop();
        worker_.join();
    }
}

// ---------------------------------------------------------------------------

void write_trace_header(std::ostream& os) {
    os << "decision,policy,threshold,valuations,allowed,fallback,compute_ms,wait_ms\n";
}

void write_trace_row(std::ostream& os, const ShieldTraceRecord& r) {
    const bool relative = std::holds_alternative<RelativeThreshold>(r.policy);
    const double threshold = relative ? std::get<RelativeThreshold>(r.policy).delta
                                      : std::get<AbsoluteThreshold>(r.policy).lambda;
    os << '"' << to_display(r.decision) << "\"," << (relative ? "relative" : "absolute") << "," << threshold << ",";
    for (std::size_t k = 0; k < r.valuation.values.size(); ++k) {
        os << (k ? ";" : "") << r.valuation.values[k].first << "=" << std::setprecision(12)
           << r.valuation.values[k].second;
    }
    os << ",";
    for (std::size_t k = 0; k < r.allowed.size(); ++k) os << (k ? ";" : "") << r.allowed[k];
    os << "," << (r.fallback ? 1 : 0) << "," << std::fixed << std::setprecision(3) << r.compute_ms << ","
       << r.wait_ms << std::defaultfloat << "\n";
}

}  // namespace oshield
