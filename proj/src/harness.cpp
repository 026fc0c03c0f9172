#include "evrec/harness.hpp"

#include "evrec/charging.hpp"
#include "evrec/csv.hpp"
#include "evrec/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <tuple>

#ifndef EVREC_BUILD_ID
#define EVREC_BUILD_ID "unknown"
#endif

namespace evrec::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

std::ofstream open_out(fs::path const& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StateError("cannot write " + path.string());
    return out;
}

std::vector<std::uint64_t> seeds_of(Scenario const& scenario, RunSpec const& spec) {
    auto seeds = spec.seeds.empty() ? scenario.config.srl.seeds : spec.seeds;
    if (seeds.empty()) throw ValidationError("no seeds given");
    return seeds;
}

std::string seed_file(std::string const& stem, std::uint64_t seed, std::string const& ext = "csv") {
    return fmt::format("{}_seed{}.{}", stem, seed, ext);
}

MetricsRecord record_of(srl::Method method, std::uint64_t seed, srl::EpisodeResult const& res,
                        double et) {
    MetricsRecord r;
    r.method = srl::method_name(method);
    r.seed = seed;
    r.ttt_s = res.metrics.ttt_s;
    r.cvv = res.metrics.cvv;
    r.wct_min = res.metrics.wct_min;
    r.et_s = et;
    r.dt_s = res.decisions ? res.decision_s / res.decisions : 0.0;
    r.steps = res.metrics.steps;
    r.evs = res.metrics.evs;
    r.stranded = res.metrics.stranded;
    return r;
}

void write_curve(fs::path const& path, srl::TrainRun const& run) {
    auto out = open_out(path);
    out << "epoch,mean_ttt_s,mean_cvv,lambda,predictor_loss,predictor_converged,mean_return,"
           "mean_cost,cost_return,surrogate_first,ratio_dev_first,entropy\n";
    for (auto const& r : run.curve) {
        out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r.epoch, r.mean_ttt_s, r.mean_cvv,
                           r.lambda, r.predictor_loss, r.predictor_converged ? 1 : 0, r.mean_return,
                           r.mean_cost, r.stats.cost_return, r.stats.surrogate_first,
                           r.stats.ratio_dev_first, r.stats.entropy);
    }
}

void write_losses(fs::path const& path, std::vector<double> const& losses) {
    auto out = open_out(path);
    out << "train_step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out << fmt::format("{},{}\n", i + 1, losses[i]);
}

void write_traces(fs::path const& dir, std::uint64_t seed, env::ChargingEnv const& env) {
    {
        auto out = open_out(dir / seed_file("droop", seed));
        out << "interval,t,v_bar,setpoint_kw,peak_load_kw\n";
        for (auto const& d : env.droop_log()) {
            out << fmt::format("{},{},{},{},{}\n", d.interval, d.t, d.v_bar, d.setpoint_kw, d.peak_load_kw);
        }
    }
    {
        auto out = open_out(dir / seed_file("occupancy", seed));
        out << "t,setpoint_kw";
        auto const& stations = env.scenario().config.stations;
        for (auto const& s : stations) out << fmt::format(",occupancy_cs{}", s.id);
        for (auto const& s : stations) out << fmt::format(",load_kw_cs{}", s.id);
        out << '\n';
        for (auto const& m : env.minute_samples()) {
            out << fmt::format("{},{}", m.t, m.setpoint_kw);
            for (int o : m.occupancy) out << ',' << o;
            for (double l : m.cs_load_kw) out << fmt::format(",{}", l);
            out << '\n';
        }
    }
    {
        auto out = open_out(dir / seed_file("step_costs", seed));
        out << "step,vehicle,t_start,t_end,action,applied,followed,reward,cost,final\n";
        for (auto const& s : env.step_trace()) {
            out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", s.step, s.vehicle, s.t_start, s.t_end,
                               s.action, s.applied, s.followed ? 1 : 0, s.reward, s.cost,
                               s.final ? 1 : 0);
        }
    }
}

void write_timing(fs::path const& path, std::vector<MetricsRecord> const& records) {
    auto out = open_out(path);
    out << "seed,et_s,dt_s\n";
    for (auto const& r : records) out << fmt::format("{},{},{}\n", r.seed, r.et_s, r.dt_s);
}

void write_summary(fs::path const& path, std::vector<MetricsRecord> const& records) {
    auto col = [&](auto field) {
        std::vector<double> xs;
        for (auto const& r : records) xs.push_back(field(r));
        return summarize(xs);
    };
    auto const ttt = col([](auto const& r) { return r.ttt_s; });
    auto const cvv = col([](auto const& r) { return r.cvv; });
    auto const wct = col([](auto const& r) { return r.wct_min; });
    auto const et = col([](auto const& r) { return r.et_s; });
    auto const dt = col([](auto const& r) { return r.dt_s; });
    auto out = open_out(path);
    out << "method,runs,ttt_mean,ttt_std,cvv_mean,cvv_std,wct_mean,wct_std,et_mean,et_std,dt_mean,dt_std\n";
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", records.front().method, records.size(),
                       ttt.mean, ttt.std, cvv.mean, cvv.std, wct.mean, wct.std, et.mean, et.std,
                       dt.mean, dt.std);
}

void write_manifest(fs::path const& dir, std::string const& mode, Scenario const& scenario,
                    RunSpec const& spec, std::vector<std::uint64_t> const& seeds,
                    json const& files) {
    json m{{"mode", mode},
           {"method", srl::method_name(spec.method)},
           {"scenario", spec.scenario.string()},
           {"scenario_name", scenario.config.name},
           {"config_hash", config_hash(scenario.config)},
           {"seeds", seeds},
           {"compliance", spec.compliance},
           {"epochs", spec.epochs > 0 ? spec.epochs : scenario.config.srl.epochs},
           {"build_id", build_id()},
           {"files", files}};
    auto out = open_out(dir / "manifest.json");
    out << m.dump(2) << '\n';
}

void finish_run(fs::path const& dir, std::string const& mode, Scenario const& scenario,
                RunSpec const& spec, std::vector<std::uint64_t> const& seeds,
                std::vector<MetricsRecord> const& records, json files) {
    write_metrics_csv(dir / "metrics.csv", config_hash(scenario.config), records);
    write_timing(dir / "timing.csv", records);
    write_summary(dir / "summary.csv", records);
    files["metrics.csv"] = "per-seed TTT, CVV, WCT (deterministic)";
    files["timing.csv"] = "per-seed wall clock: ET total, DT per decision";
    files["summary.csv"] = "mean and std over seeds";
    write_manifest(dir, mode, scenario, spec, seeds, files);
}

fs::path checkpoint_for(RunSpec const& spec, std::uint64_t seed) {
    if (spec.checkpoint.empty()) {
        throw ValidationError("eval of " + srl::method_name(spec.method) + " needs --checkpoint");
    }
    auto path = fs::is_directory(spec.checkpoint) ? spec.checkpoint / seed_file("checkpoint", seed, "ckpt")
                                                  : spec.checkpoint;
    if (!fs::exists(path)) throw StateError("checkpoint not found: " + path.string());
    return path;
}

void list_traces(json& files, std::vector<std::uint64_t> const& seeds) {
    for (auto seed : seeds) {
        files[seed_file("droop", seed)] = "droop set-point per controller interval";
        files[seed_file("occupancy", seed)] = "per-minute station occupancy and load";
        files[seed_file("step_costs", seed)] = "per-decision reward and cost";
    }
}

template <class F>
auto with_seed_context(std::uint64_t seed, F&& f) {
    try {
        return f();
    } catch (std::exception const&) {
        std::throw_with_nested(StateError(fmt::format("run failed for seed {}", seed)));
    }
}

}  // namespace

SweepAxis parse_axis(std::string const& name) {
    if (name == "ev_fraction") return SweepAxis::EvFraction;
    if (name == "controller_interval") return SweepAxis::ControllerInterval;
    if (name == "decoder_length") return SweepAxis::DecoderLength;
    if (name == "compliance_rate") return SweepAxis::ComplianceRate;
    throw ValidationError("unknown sweep axis '" + name +
                          "' (expected ev_fraction, controller_interval, decoder_length or compliance_rate)");
}

std::string axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::EvFraction: return "ev_fraction";
        case SweepAxis::ControllerInterval: return "controller_interval";
        case SweepAxis::DecoderLength: return "decoder_length";
        case SweepAxis::ComplianceRate: return "compliance_rate";
    }
    return "unknown";
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw ValidationError("percentile of an empty list");
    if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile rank must be in [0, 100]");
    std::sort(values.begin(), values.end());
    double const rank = p / 100.0 * static_cast<double>(values.size() - 1);
    auto const lo = static_cast<std::size_t>(std::floor(rank));
    auto const hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

MeanStd summarize(std::vector<double> const& xs) {
    auto const [m, s] = charging::mean_std(xs);
    return {m, s};
}

std::string build_id() { return EVREC_BUILD_ID; }

void write_metrics_csv(fs::path const& path, std::string const& hash,
                       std::vector<MetricsRecord> const& records) {
    auto out = open_out(path);
    out << "config_hash,seed,ttt_s,cvv,wct_min,steps,evs,stranded\n";
    for (auto const& r : records) {
        out << fmt::format("{},{},{},{},{},{},{},{}\n", hash, r.seed, r.ttt_s, r.cvv, r.wct_min, r.steps,
                           r.evs, r.stranded);
    }
}

std::vector<MetricsRecord> train(Scenario const& scenario, RunSpec const& spec) {
    auto const seeds = seeds_of(scenario, spec);
    fs::create_directories(spec.out);
    std::vector<MetricsRecord> records;
    json files = json::object();
    for (auto seed : seeds) {
        records.push_back(with_seed_context(seed, [&] {
            auto const t0 = Clock::now();
            srl::Policy policy(scenario, spec.method, seed, spec.epochs);
            auto const run = policy.train();
            auto const res = policy.evaluate(seed, spec.compliance, spec.trace);
            double const et = std::chrono::duration<double>(Clock::now() - t0).count();
            if (srl::is_learned(spec.method)) {
                policy.save(spec.out / seed_file("checkpoint", seed, "ckpt"));
                write_curve(spec.out / seed_file("curve", seed), run);
                files[seed_file("checkpoint", seed, "ckpt")] = "trained parameters";
                files[seed_file("curve", seed)] = "per-epoch training curve";
            }
            if (auto const* p = policy.predictor()) {
                write_losses(spec.out / seed_file("predictor_loss", seed), p->losses());
                files[seed_file("predictor_loss", seed)] = "predictor train-step losses";
            }
            if (spec.trace) write_traces(spec.out, seed, policy.env());
            return record_of(spec.method, seed, res, et);
        }));
    }
    if (spec.trace) list_traces(files, seeds);
    finish_run(spec.out, "train", scenario, spec, seeds, records, files);
    return records;
}

std::vector<MetricsRecord> eval(Scenario const& scenario, RunSpec const& spec) {
    auto const seeds = seeds_of(scenario, spec);
    if (srl::is_learned(spec.method) && spec.checkpoint.empty()) {
        throw ValidationError("eval of " + srl::method_name(spec.method) + " needs --checkpoint");
    }
    fs::create_directories(spec.out);
    std::vector<MetricsRecord> records;
    for (auto seed : seeds) {
        records.push_back(with_seed_context(seed, [&] {
            srl::Policy policy(scenario, spec.method, seed, spec.epochs);
            if (srl::is_learned(spec.method)) policy.load(checkpoint_for(spec, seed));
            auto const t0 = Clock::now();
            auto const res = policy.evaluate(seed, spec.compliance, spec.trace);
            double const et = std::chrono::duration<double>(Clock::now() - t0).count();
            if (spec.trace) write_traces(spec.out, seed, policy.env());
            return record_of(spec.method, seed, res, et);
        }));
    }
    json files = json::object();
    if (spec.trace) list_traces(files, seeds);
    finish_run(spec.out, "eval", scenario, spec, seeds, records, files);
    return records;
}

Scenario with_axis(Scenario const& base, SweepAxis axis, double value) {
    auto cfg = base.config;
    auto integral = [&](char const* what) {
        if (value != std::floor(value) || value <= 0) {
            throw ValidationError(fmt::format("{} sweep value must be a positive integer, got {}", what, value));
        }
        return static_cast<std::int64_t>(value);
    };
    switch (axis) {
        case SweepAxis::EvFraction: cfg.demand.ev_fraction = value; break;
        case SweepAxis::ControllerInterval:
            cfg.timing.controller_interval_s = integral("controller_interval");
            break;
        case SweepAxis::DecoderLength:
            cfg.predictor.decoder_len = static_cast<int>(integral("decoder_length"));
            break;
        case SweepAxis::ComplianceRate:
            if (!(value >= 0.0 && value <= 1.0)) throw ValidationError("compliance rate must be in [0, 1]");
            break;
    }
    return materialize(std::move(cfg));
}

void sweep(Scenario const& scenario, RunSpec const& spec, SweepAxis axis,
           std::vector<double> const& values) {
    if (values.empty()) throw ValidationError("sweep needs at least one value");
    fs::create_directories(spec.out);
    auto rows = open_out(spec.out / "sweep.csv");
    rows << "axis,value,config_hash,seed,ttt_s,cvv,wct_min,steps,evs,stranded\n";
    auto summary = open_out(spec.out / "sweep_summary.csv");
    summary << "axis,value,runs,ttt_mean,ttt_std,cvv_mean,cvv_std,wct_mean,wct_std\n";
    for (double v : values) {
        auto const sc = with_axis(scenario, axis, v);
        RunSpec sub = spec;
        sub.out = spec.out / fmt::format("{}_{}", axis_name(axis), v);
        if (axis == SweepAxis::ComplianceRate) sub.compliance = v;
        auto const records = srl::is_learned(spec.method) ? train(sc, sub) : eval(sc, sub);
        auto const hash = config_hash(sc.config);
        std::vector<double> ttt, cvv, wct;
        for (auto const& r : records) {
            rows << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", axis_name(axis), v, hash, r.seed, r.ttt_s,
                                r.cvv, r.wct_min, r.steps, r.evs, r.stranded);
            ttt.push_back(r.ttt_s);
            cvv.push_back(r.cvv);
            wct.push_back(r.wct_min);
        }
        auto const a = summarize(ttt), b = summarize(cvv), c = summarize(wct);
        summary << fmt::format("{},{},{},{},{},{},{},{},{}\n", axis_name(axis), v, records.size(), a.mean,
                               a.std, b.mean, b.std, c.mean, c.std);
    }
}

void report(fs::path const& dir) {
    if (!fs::is_directory(dir)) throw StateError("run directory not found: " + dir.string());
    if (!fs::exists(dir / "manifest.json")) {
        throw StateError("no manifest.json in " + dir.string() + "; not a finished run directory");
    }
    std::map<std::string, std::vector<std::pair<std::uint64_t, fs::path>>> found;
    std::regex const pattern(R"((curve|droop|occupancy|step_costs|predictor_loss)_seed(\d+)\.csv)");
    for (auto const& e : fs::directory_iterator(dir)) {
        std::smatch m;
        auto const name = e.path().filename().string();
        if (std::regex_match(name, m, pattern)) {
            found[m[1]].emplace_back(std::stoull(m[2]), e.path());
        }
    }
    if (found.empty()) throw StateError("no curve or trace files in " + dir.string());
    for (auto& [_, list] : found) std::sort(list.begin(), list.end());

    auto const out_dir = dir / "report";
    fs::create_directories(out_dir);

    auto concat = [&](std::string const& kind, std::string const& out_name) {
        auto it = found.find(kind);
        if (it == found.end()) return;
        auto out = open_out(out_dir / out_name);
        bool header = false;
        for (auto const& [seed, path] : it->second) {
            auto const t = csv::read(path);
            if (!header) {
                out << "seed";
                for (auto const& h : t.header) out << ',' << h;
                out << '\n';
                header = true;
            }
            for (auto const& row : t.rows) {
                out << seed;
                for (auto const& f : row.fields) out << ',' << f;
                out << '\n';
            }
        }
    };
    concat("curve", "training_curve.csv");
    concat("droop", "power.csv");
    concat("occupancy", "occupancy.csv");
    concat("predictor_loss", "predictor_loss.csv");

    if (auto it = found.find("curve"); it != found.end()) {
        std::map<long long, std::vector<std::array<double, 3>>> by_epoch;
        for (auto const& [seed, path] : it->second) {
            auto const t = csv::read(path);
            for (auto const& row : t.rows) {
                by_epoch[t.integer(row, "epoch")].push_back(
                    {t.number(row, "mean_ttt_s"), t.number(row, "mean_cvv"), t.number(row, "lambda")});
            }
        }
        auto out = open_out(out_dir / "training_curve_mean.csv");
        out << "epoch,seeds,ttt_mean,ttt_std,cvv_mean,cvv_std,lambda_mean\n";
        for (auto const& [epoch, xs] : by_epoch) {
            std::vector<double> a, b, c;
            for (auto const& x : xs) a.push_back(x[0]), b.push_back(x[1]), c.push_back(x[2]);
            auto const sa = summarize(a), sb = summarize(b), sc = summarize(c);
            out << fmt::format("{},{},{},{},{},{},{}\n", epoch, xs.size(), sa.mean, sa.std, sb.mean, sb.std,
                               sc.mean);
        }
    }

    if (auto it = found.find("step_costs"); it != found.end()) {
        std::vector<std::tuple<std::uint64_t, long long, double>> costs;
        for (auto const& [seed, path] : it->second) {
            auto const t = csv::read(path);
            for (auto const& row : t.rows) costs.emplace_back(seed, t.integer(row, "step"), t.number(row, "cost"));
        }
        if (costs.empty()) throw StateError("step cost traces are empty in " + dir.string());
        std::vector<double> values;
        for (auto const& c : costs) values.push_back(std::get<2>(c));
        double const p98 = percentile(values, 98.0);
        auto out = open_out(out_dir / "cost_distribution.csv");
        out << "seed,step,cost,p98\n";
        for (auto const& [seed, step, cost] : costs) out << fmt::format("{},{},{},{}\n", seed, step, cost, p98);
    }
}

}  // namespace evrec::harness
