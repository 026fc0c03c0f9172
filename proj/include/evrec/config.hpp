#pragma once

#include "evrec/charging.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace evrec {

struct StationSpec {
    int id = 0;
    int node = 0;  ///< road node id
    int bus = 0;   ///< power bus id
    int piles = 1;

    friend bool operator==(StationSpec const&, StationSpec const&) = default;
};

enum class OdMode { Uniform, Table };

struct OdEntry {
    int origin = 0;
    int destination = 0;
    double weight = 1.0;

    friend bool operator==(OdEntry const&, OdEntry const&) = default;
};

struct DemandSpec {
    double total_rate_vph = 600.0;
    double ev_fraction = 0.5;
    double soc_init_low = 0.30;
    double soc_init_high = 0.60;
    double soc_target = 0.80;
    OdMode od_mode = OdMode::Uniform;
    std::vector<int> od_nodes;  ///< uniform mode only; empty means every node
    std::vector<OdEntry> od_table;

    void validate() const;
    friend bool operator==(DemandSpec const&, DemandSpec const&) = default;
};

struct TimingParams {
    std::int64_t warmup_s = 1200;
    std::int64_t control_s = 3600;
    std::int64_t controller_interval_s = 600;
    std::int64_t sample_s = 60;  ///< load / occupancy sampling period

    [[nodiscard]] std::int64_t horizon_s() const noexcept { return warmup_s + control_s; }
    void validate() const;
    friend bool operator==(TimingParams const&, TimingParams const&) = default;
};

struct RewardParams {
    double w1 = 0.01;
    double r_max = 120.0;
    double w2 = 0.02;

    void validate() const;
    friend bool operator==(RewardParams const&, RewardParams const&) = default;
};

struct GridParams {
    double base_load_scale = 1.0;  ///< multiplier on every bus's base load

    void validate() const;
    friend bool operator==(GridParams const&, GridParams const&) = default;
};

struct TrainConfig {
    int epochs = 200;
    int episodes_per_epoch = 5;
    int batch_size = 64;
    int update_iters = 40;
    double actor_lr = 3e-4;
    double critic_lr = 3e-4;
    double gamma = 0.97;
    double gae_lambda = 0.95;
    double clip = 0.2;
    double entropy_coef = 0.01;
    double lambda_lr = 0.035;
    double lambda_init = 0.0;
    double cost_limit = 0.0;
    std::vector<int> hidden{64, 64};
    bool normalize_advantages = true;
    bool discounted_cost = false;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

    void validate() const;
    friend bool operator==(TrainConfig const&, TrainConfig const&) = default;
};

struct PredictorConfig {
    bool enabled = true;
    int encoder_len = 5;
    int decoder_len = 5;
    std::int64_t step_s = 240;
    int hidden = 256;
    int layers = 2;
    double dropout = 0.5;
    int batch_size = 64;
    double lr = 1e-3;
    int iters = 20;
    int min_pairs = 64;     ///< n1
    int train_every = 50;   ///< n2
    int converge_window = 10;
    double converge_tol = 0.02;

    void validate() const;
    friend bool operator==(PredictorConfig const&, PredictorConfig const&) = default;
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::filesystem::path road_network;
    std::filesystem::path power_network;
    std::vector<StationSpec> stations;
    DemandSpec demand;
    TimingParams timing;
    charging::DroopParams droop;
    charging::BatteryParams battery;
    RewardParams reward;
    GridParams grid;
    TrainConfig srl;
    PredictorConfig predictor;
    std::uint64_t seed = 0;

    friend bool operator==(ScenarioConfig const&, ScenarioConfig const&) = default;
};

}  // namespace evrec
