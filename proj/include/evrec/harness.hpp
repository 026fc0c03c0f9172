#pragma once

#include "evrec/scenario.hpp"
#include "evrec/srl.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace evrec::harness {

enum class SweepAxis { EvFraction, ControllerInterval, DecoderLength, ComplianceRate };

[[nodiscard]] SweepAxis parse_axis(std::string const& name);
[[nodiscard]] std::string axis_name(SweepAxis axis);

struct RunSpec {
    std::filesystem::path scenario;
    srl::Method method = srl::Method::Greedy;
    std::vector<std::uint64_t> seeds;  ///< empty means the scenario's seed list
    std::filesystem::path out;
    double compliance = 1.0;
    bool trace = false;
    int epochs = 0;                      ///< overrides the scenario when positive
    std::filesystem::path checkpoint;  ///< eval: a checkpoint file, or a train output directory
};

struct MetricsRecord {
    std::string method;
    std::uint64_t seed = 0;
    double ttt_s = 0.0;
    double cvv = 0.0;
    double wct_min = 0.0;
    double et_s = 0.0;  ///< wall clock of the whole run for this seed
    double dt_s = 0.0;  ///< mean wall clock per decision
    int steps = 0;
    int evs = 0;
    int stranded = 0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Linear interpolation between order statistics at rank p/100·(n−1).
[[nodiscard]] double percentile(std::vector<double> values, double p);

[[nodiscard]] MeanStd summarize(std::vector<double> const& xs);

/// Trains one policy per seed, evaluates it on that seed and writes the run directory.
std::vector<MetricsRecord> train(Scenario const& scenario, RunSpec const& spec);
/// Evaluates a fixed or checkpointed policy per seed and writes the run directory.
std::vector<MetricsRecord> eval(Scenario const& scenario, RunSpec const& spec);
/// One full run per axis value; learned methods train, greedy evaluates.
void sweep(Scenario const& scenario, RunSpec const& spec, SweepAxis axis,
           std::vector<double> const& values);
/// Turns a finished run directory into plot-ready CSVs under `dir`/report.
void report(std::filesystem::path const& dir);

/// Scenario with one sweep axis set to `value`, re-validated.
[[nodiscard]] Scenario with_axis(Scenario const& base, SweepAxis axis, double value);

void write_metrics_csv(std::filesystem::path const& path, std::string const& hash,
                       std::vector<MetricsRecord> const& records);

[[nodiscard]] std::string build_id();

}  // namespace evrec::harness
