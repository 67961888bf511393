#include "oshield/harness.hpp"

#include <algorithm>
#include <chrono>
#include <tuple>
#include <fstream>
#include <map>
#include <ostream>

#include "oshield/error.hpp"

#ifndef OSHIELD_VERSION
#define OSHIELD_VERSION "0.1.0"
#endif

namespace oshield {

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write " + p.string());
    return os;
}

}  // namespace

std::vector<BenchRecord> bench_shield(const Arena& arena, const BenchConfig& config) {
    if (config.samples < 1) throw ConfigError("samples must be >= 1");
    for (int h : config.horizons) {
        if (h < 1) throw ConfigError("horizons must be >= 1");
    }
    const AdversaryBehaviour behaviour = uniform_behaviour(arena, 1);
    BuildOptions options;
    options.execution = config.execution;
    options.prune_unsafe = footprint_collision;
    std::vector<BenchRecord> out;
    for (int l : config.lengths) {
        SnakeConfig sc;
        sc.length = l;
        const SnakeGame game(arena, sc);
        std::vector<GameState> placements;
        for (int k = 0; k < config.samples; ++k) {
            std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(l) << 32 | static_cast<std::uint64_t>(k)));
            placements.push_back(game.spawn(rng));
        }
        // Untimed warm-up.
        for (int h : config.horizons) {
            const SafetyMdp mdp(arena, behaviour, game.pickups(placements[0]));
            ShieldAnalysis(build_submdp(mdp, game.to_world_state(placements[0]), h, options), footprint_collision,
                           config.execution);
        }
        // Horizons interleaved per placement.
        for (int k = 0; k < config.samples; ++k) {
            const GameState& g = placements[static_cast<std::size_t>(k)];
            const SafetyMdp mdp(arena, behaviour, game.pickups(g));
            const WorldState root = game.to_world_state(g);
            for (int h : config.horizons) {
                const auto t0 = std::chrono::steady_clock::now();
                SubMdp sub = build_submdp(mdp, root, h, options);
                const double build = ms_since(t0);
                const std::size_t states = sub.size();
                const auto t1 = std::chrono::steady_clock::now();
                const ShieldAnalysis analysis(std::move(sub), footprint_collision, config.execution);
                const Shield shield = make_shield(analysis.valuation(), AbsoluteThreshold{0.01});
                const double valuation = ms_since(t1);
                if (shield.allowed.empty()) throw InvariantViolation("benchmark shield allowed nothing");
                out.push_back({h, l, k, build, valuation, build + valuation, states});
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const BenchRecord& x, const BenchRecord& y) {
        return std::tie(x.length, x.horizon, x.sample) < std::tie(y.length, y.horizon, y.sample);
    });
    return out;
}

std::vector<BenchSummary> summarize(const std::vector<BenchRecord>& records) {
    std::map<std::pair<int, int>, BenchSummary> rows;
    for (const auto& r : records) {
        BenchSummary& s = rows[{r.length, r.horizon}];
        s.horizon = r.horizon;
        s.length = r.length;
        ++s.samples;
        s.mean_ms += r.total_ms;
        s.max_ms = std::max(s.max_ms, r.total_ms);
        s.mean_states += static_cast<double>(r.states);
    }
    std::vector<BenchSummary> out;
    for (auto& [key, s] : rows) {
        s.mean_ms /= s.samples;
        s.mean_states /= s.samples;
        out.push_back(s);
    }
    return out;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records) {
    os << "horizon,length,sample,build_ms,valuation_ms,total_ms,states\n";
    char buf[160];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%d,%d,%d,%.4f,%.4f,%.4f,%zu\n", r.horizon, r.length, r.sample, r.build_ms,
                      r.valuation_ms, r.total_ms, r.states);
        os << buf;
    }
}

void write_summary_csv(std::ostream& os, const std::vector<BenchSummary>& rows) {
    os << "horizon,length,samples,mean_ms,max_ms,mean_states\n";
    char buf[160];
    for (const auto& s : rows) {
        std::snprintf(buf, sizeof buf, "%d,%d,%d,%.4f,%.4f,%.1f\n", s.horizon, s.length, s.samples, s.mean_ms,
                      s.max_ms, s.mean_states);
        os << buf;
    }
}

std::string version_string() { return OSHIELD_VERSION; }

Seeds split_seeds(std::uint64_t run_seed) {
    return {derive_seed(run_seed, 0), derive_seed(run_seed, 1), derive_seed(run_seed, 2)};
}

std::string map_name(const std::string& map) {
    const std::filesystem::path p(map);
    if (p.has_parent_path() || p.has_extension()) return p.stem().string();
    return map;
}

nlohmann::json manifest(const RunConfig& c, const std::string& command) {
    const Seeds s = split_seeds(c.seed);
    return {
        {"version", version_string()},
        {"command", command},
        {"map", c.map},
        {"mode", mode_name(c.mode)},
        {"horizon", c.horizon},
        {"policy", describe(c.policy)},
        {"episodes", c.episodes},
        {"games", c.games},
        {"execution", c.execution == Execution::Parallel ? "parallel" : "serial"},
        {"snake", {{"length", c.snake.length}, {"apples", c.snake.apples}, {"max_ticks", c.snake.max_ticks}}},
        {"seed", c.seed},
        {"seeds", {{"training", s.training}, {"evaluation", s.evaluation}, {"bench", s.bench}}},
    };
}

void write_manifest(const RunConfig& c, const std::string& command) {
    std::filesystem::create_directories(c.out);
    open_out(c.out / "manifest.json") << manifest(c, command).dump(2) << "\n";
}

TrainingResult run_training(const RunConfig& c) {
    const Arena arena = load_bundled_map(c.map);
    const SnakeGame game(arena, c.snake);
    TrainingConfig t;
    t.episodes = c.episodes;
    t.mode = c.mode;
    t.policy = c.policy;
    t.horizon = c.horizon;
    t.execution = c.execution;
    t.seed = split_seeds(c.seed).training;
    validate(t);
    write_manifest(c, "train");

    TrainingResult r = train(game, t);
    auto csv = open_out(c.out / "training.csv");
    write_training_header(csv);
    for (const auto& e : r.episodes) write_training_row(csv, e);
    auto ck = open_out(c.out / "qtable.txt");
    save_checkpoint(ck, r.q, t, map_name(c.map));
    return r;
}

nlohmann::json to_json(const EvalSummary& s) {
    return {{"games", s.games},           {"wins", s.wins},   {"losses", s.losses},
            {"collision_losses", s.collision_losses}, {"ties", s.ties}, {"timeouts", s.timeouts},
            {"mean_reward", s.mean_reward}, {"win_rate", s.win_rate()}};
}

EvalSummary run_evaluation(const RunConfig& c, const std::filesystem::path& checkpoint) {
    std::ifstream in(checkpoint);
    if (!in) throw ConfigError("cannot read checkpoint " + checkpoint.string());
    const QFunction q = load_checkpoint(in, map_name(c.map));
    const Arena arena = load_bundled_map(c.map);
    const SnakeGame game(arena, c.snake);
    validate(c.policy);
    write_manifest(c, "eval");

    PlayConfig play;
    play.mode = c.mode == ShieldMode::None ? ShieldMode::None : ShieldMode::Shielded;
    play.policy = c.policy;
    play.horizon = c.horizon;
    play.execution = c.execution;
    const EvalSummary s = evaluate(q, game, play, c.games, split_seeds(c.seed).evaluation);
    open_out(c.out / "eval.json") << to_json(s).dump(2) << "\n";
    return s;
}

std::vector<BenchSummary> run_bench(const RunConfig& c, BenchConfig b) {
    const Arena arena = load_bundled_map(c.map);
    b.seed = split_seeds(c.seed).bench;
    b.execution = c.execution;
    std::filesystem::create_directories(c.out);
    auto m = manifest(c, "bench");
    m["bench"] = {{"lengths", b.lengths}, {"horizons", b.horizons}, {"samples", b.samples}};
    open_out(c.out / "manifest.json") << m.dump(2) << "\n";
    const auto records = bench_shield(arena, b);
    const auto rows = summarize(records);
    auto csv = open_out(c.out / "bench.csv");
    write_bench_csv(csv, records);
    auto sum = open_out(c.out / "bench_summary.csv");
    write_summary_csv(sum, rows);
    return rows;
}

}  // namespace oshield
