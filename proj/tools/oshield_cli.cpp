#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "oshield/error.hpp"
#include "oshield/harness.hpp"
#include "oshield/service.hpp"
#include "scenarios.hpp"

using namespace oshield;

namespace {

struct PolicyFlags {
    std::optional<double> delta;
    std::optional<double> lambda;

    ThresholdPolicy resolve() const {
        if (delta) return RelativeThreshold{*delta};
        return AbsoluteThreshold{lambda.value_or(0.01)};
    }
};

void add_policy(CLI::App* cmd, PolicyFlags& p) {
    auto* d = cmd->add_option("--delta", p.delta, "relative shield threshold in [0,1]");
    auto* l = cmd->add_option("--lambda", p.lambda, "absolute shield threshold in [0,1] (default 0.01)");
    d->excludes(l);
}

void print_eval(const EvalSummary& s) {
    std::printf("games %d  wins %d  losses %d  collision losses %d  ties %d  timeouts %d  mean reward %.2f\n", s.games,
                s.wins, s.losses, s.collision_losses, s.ties, s.timeouts, s.mean_reward);
}

int run_oracle(int instances, int bound, std::uint64_t seed, Execution execution) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    std::size_t tasks = 0;
    for (int n = 0; n < instances; ++n) {
        const auto spec = n % 2 ? oracle::Spec::Footprints : oracle::Spec::Heads;
        const auto sc = scenarios::draw(rng, spec, bound);
        const auto c = scenarios::compare_with_oracle(sc, execution);
        worst = std::max(worst, c.max_error);
        tasks += c.tasks;
    }
    std::printf("instances %d  task valuations %zu  max abs error %.3g\n", instances, tasks, worst);
    return worst <= 1e-9 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online shielding for the multi-agent Snake game"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    RunConfig run;
    std::string mode = "none";
    bool parallel = false;
    PolicyFlags policy;
    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--map", run.map, "bundled map name or path to an ASCII map")->capture_default_str();
        cmd->add_option("--seed", run.seed, "run seed")->capture_default_str();
        cmd->add_option("--out", run.out, "output directory")->capture_default_str();
        cmd->add_flag("--parallel", parallel, "use the OpenMP kernels");
    };

    BenchConfig bench;
    auto* b = app.add_subcommand("bench", "time shield computations over horizons and snake lengths");
    common(b);
    b->add_option("--lengths", bench.lengths, "snake lengths")->delimiter(',')->capture_default_str();
    b->add_option("--horizons", bench.horizons, "horizons")->delimiter(',')->capture_default_str();
    b->add_option("--samples", bench.samples, "placements per length")->capture_default_str();

    auto* t = app.add_subcommand("train", "train the Q-learning agent");
    common(t);
    t->add_option("--mode", mode, "none, shield or informed")->capture_default_str();
    t->add_option("--horizon", run.horizon, "shield horizon")->capture_default_str();
    t->add_option("--episodes", run.episodes, "training episodes")->capture_default_str();
    add_policy(t, policy);

    std::string checkpoint;
    auto* e = app.add_subcommand("eval", "evaluate a trained policy");
    common(e);
    e->add_option("--checkpoint", checkpoint, "q-table written by train")->required();
    e->add_option("--mode", mode, "none evaluates without the shield")->capture_default_str();
    e->add_option("--horizon", run.horizon, "shield horizon")->capture_default_str();
    e->add_option("--games", run.games, "evaluation games")->capture_default_str();
    add_policy(e, policy);

    std::string host = "127.0.0.1";
    int port = 8080;
    std::string ui_dir;
    auto* p = app.add_subcommand("play", "serve games to the browser client");
    p->add_option("--host", host)->capture_default_str();
    p->add_option("--port", port)->capture_default_str();
    p->add_option("--ui-dir", ui_dir, "static client files");

    int instances = 200;
    int bound = 8;
    std::uint64_t oracle_seed = 1;
    auto* o = app.add_subcommand("oracle", "cross-check the engine against brute-force enumeration");
    o->add_option("--instances", instances)->capture_default_str();
    o->add_option("--bound", bound, "maximum |t| + h")->capture_default_str();
    o->add_option("--seed", oracle_seed)->capture_default_str();
    o->add_flag("--parallel", parallel, "use the OpenMP kernels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        run.execution = parallel ? Execution::Parallel : Execution::Serial;
        run.mode = parse_mode(mode);
        run.policy = policy.resolve();
        validate(run.policy);

        if (*b) {
            for (const auto& r : run_bench(run, bench)) {
                std::printf("l=%d h=%d  mean %.3f ms  max %.3f ms  states %.0f\n", r.length, r.horizon, r.mean_ms, r.max_ms,
                            r.mean_states);
            }
        } else if (*t) {
            const TrainingResult r = run_training(run);
            double reward = 0.0;
            int collisions = 0;
            for (const auto& ep : r.episodes) {
                reward += ep.reward;
                collisions += ep.collision ? 1 : 0;
            }
            std::printf("episodes %zu  mean reward %.2f  collisions %d  -> %s\n", r.episodes.size(),
                        r.episodes.empty() ? 0.0 : reward / static_cast<double>(r.episodes.size()), collisions,
                        (run.out / "qtable.txt").string().c_str());
        } else if (*e) {
            print_eval(run_evaluation(run, checkpoint));
        } else if (*p) {
            Service service(ui_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(ui_dir));
            std::printf("serving on http://%s:%d\n", host.c_str(), port);
            std::fflush(stdout);
            if (!service.listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
        } else if (*o) {
            if (instances < 1 || bound < 2) throw ConfigError("need instances >= 1 and bound >= 2");
            return run_oracle(instances, bound, oracle_seed, run.execution);
        }
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const InvariantViolation& err) {
        std::cerr << "invariant violated: " << err.what() << "\n";
        return 3;
    }
    return 0;
}
