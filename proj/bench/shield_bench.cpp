#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>

#include "CLI11.hpp"
#include "oshield/error.hpp"
#include "oshield/harness.hpp"

using namespace oshield;

namespace {

struct Timing {
    double ms = 0.0;
    std::vector<double> values;
};

Timing run(const SnakeGame& game, const AdversaryBehaviour& behaviour, const std::vector<GameState>& placements, int h,
           Execution execution) {
    BuildOptions options;
    options.execution = execution;
    options.prune_unsafe = footprint_collision;
    Timing t;
    const auto t0 = std::chrono::steady_clock::now();
    for (const GameState& g : placements) {
        const SafetyMdp mdp(game.arena(), behaviour, game.pickups(g));
        const ShieldAnalysis a(build_submdp(mdp, game.to_world_state(g), h, options), footprint_collision, execution);
        for (const auto& [task, v] : a.valuation().values) t.values.push_back(v);
    }
    t.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Serial vs OpenMP shield computation"};
    std::string map = "map1";
    int length = 10;
    std::vector<int> horizons{10, 15, 20, 25};
    int samples = 50;
    std::uint64_t seed = 1;
    app.add_option("--map", map)->capture_default_str();
    app.add_option("--length", length)->capture_default_str();
    app.add_option("--horizons", horizons)->delimiter(',')->capture_default_str();
    app.add_option("--samples", samples)->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        const Arena arena = load_bundled_map(map);
        SnakeConfig sc;
        sc.length = length;
        const SnakeGame game(arena, sc);
        const AdversaryBehaviour behaviour = uniform_behaviour(arena, 1);
        std::mt19937_64 rng(seed);
        std::vector<GameState> placements;
        for (int k = 0; k < samples; ++k) placements.push_back(game.spawn(rng));

        std::printf("threads %d, %d placements, snake length %d\n", omp_get_max_threads(), samples, length);
        std::printf("%4s %12s %12s %8s %10s\n", "h", "serial ms", "parallel ms", "speedup", "max diff");
        run(game, behaviour, placements, horizons.front(), Execution::Serial);
        for (int h : horizons) {
            const Timing s = run(game, behaviour, placements, h, Execution::Serial);
            const Timing p = run(game, behaviour, placements, h, Execution::Parallel);
            double diff = 0.0;
            if (s.values.size() != p.values.size()) throw InvariantViolation("serial and parallel valuations differ in size");
            for (std::size_t k = 0; k < s.values.size(); ++k) diff = std::max(diff, std::abs(s.values[k] - p.values[k]));
            std::printf("%4d %12.3f %12.3f %8.2f %10.2g\n", h, s.ms / samples, p.ms / samples, s.ms / p.ms, diff);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const InvariantViolation& e) {
        std::fprintf(stderr, "invariant violated: %s\n", e.what());
        return 3;
    }
    return 0;
}
