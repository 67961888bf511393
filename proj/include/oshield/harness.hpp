#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "oshield/learning.hpp"

namespace oshield {

/// One timed shield computation.
struct BenchRecord {
    int horizon = 0;
    int length = 0;
    int sample = 0;
    double build_ms = 0.0;
    double valuation_ms = 0.0;
    double total_ms = 0.0;
    std::size_t states = 0;
};

struct BenchSummary {
    int horizon = 0;
    int length = 0;
    int samples = 0;
    double mean_ms = 0.0;
    double max_ms = 0.0;
    double mean_states = 0.0;
};

struct BenchConfig {
    std::vector<int> lengths{10, 15};
    std::vector<int> horizons{10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
    int samples = 200;
    Execution execution = Execution::Serial;
    std::uint64_t seed = 1;
};

/// Times the full shield computation (sub-MDP build plus task valuation) for
/// `samples` random mid-corridor placements per snake length, the same
/// placements for every horizon. Records are ordered by (length, horizon, sample).
/// Throws ConfigError when a length cannot be placed on the map.
std::vector<BenchRecord> bench_shield(const Arena& arena, const BenchConfig& config);
std::vector<BenchSummary> summarize(const std::vector<BenchRecord>& records);

/// bench CSV: horizon,length,sample,build_ms,valuation_ms,total_ms,states
void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records);
/// summary CSV: horizon,length,samples,mean_ms,max_ms,mean_states
void write_summary_csv(std::ostream& os, const std::vector<BenchSummary>& rows);

/// Everything needed to replay a CLI run.
struct RunConfig {
    std::string map = "map1";
    ShieldMode mode = ShieldMode::None;
    int horizon = 15;
    ThresholdPolicy policy = AbsoluteThreshold{0.01};
    std::uint64_t seed = 1;
    int episodes = 800;
    int games = 100;
    std::filesystem::path out = "out";
    Execution execution = Execution::Serial;
    SnakeConfig snake;
};

/// Version of the build, "git describe" style when built from a checkout.
std::string version_string();

/// Per-component seeds derived from the run seed.
struct Seeds {
    std::uint64_t training;
    std::uint64_t evaluation;
    std::uint64_t bench;
};
Seeds split_seeds(std::uint64_t run_seed);

/// Bundled map name, or the file stem for a path.
std::string map_name(const std::string& map);

nlohmann::json manifest(const RunConfig& c, const std::string& command);
void write_manifest(const RunConfig& c, const std::string& command);

/// Trains and writes training.csv, qtable.txt and manifest.json under c.out.
TrainingResult run_training(const RunConfig& c);
/// Evaluates a checkpoint with or without the shield and writes eval.json and
/// manifest.json under c.out. The checkpoint must come from the same map.
EvalSummary run_evaluation(const RunConfig& c, const std::filesystem::path& checkpoint);
/// Runs the timing benchmark and writes bench.csv, bench_summary.csv and manifest.json.
std::vector<BenchSummary> run_bench(const RunConfig& c, BenchConfig b);

nlohmann::json to_json(const EvalSummary& s);

}  // namespace oshield
