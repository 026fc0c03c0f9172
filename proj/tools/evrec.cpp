// evrec: train, evaluate, sweep and report on charging-recommendation scenarios.

#include "evrec/error.hpp"
#include "evrec/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cstdio>
#include <iostream>

using namespace evrec;

namespace {

std::string error_type(std::exception const& e) {
    if (dynamic_cast<ParseError const*>(&e)) return "ParseError";
    if (dynamic_cast<ReferenceError const*>(&e)) return "ReferenceError";
    if (dynamic_cast<ValidationError const*>(&e)) return "ValidationError";
    if (dynamic_cast<ShapeError const*>(&e)) return "ShapeError";
    if (dynamic_cast<ConvergenceError const*>(&e)) return "ConvergenceError";
    if (dynamic_cast<UnreachableError const*>(&e)) return "UnreachableError";
    if (dynamic_cast<StateError const*>(&e)) return "StateError";
    if (dynamic_cast<Error const*>(&e)) return "Error";
    return "InternalError";
}

// Walks nested exceptions; the innermost type is the one reported.
void describe(std::exception const& e, std::string& message, std::string& type) {
    message += message.empty() ? e.what() : std::string(": ") + e.what();
    type = error_type(e);
    try {
        std::rethrow_if_nested(e);
    } catch (std::exception const& inner) {
        describe(inner, message, type);
    }
}

void print_summary(std::vector<harness::MetricsRecord> const& records) {
    for (auto const& r : records) {
        fmt::print("{} seed {}: TTT {:.0f} s, CVV {:.4f}, WCT {:.2f} min, ET {:.2f} s, DT {:.2e} s\n",
                   r.method, r.seed, r.ttt_s, r.cvv, r.wct_min, r.et_s, r.dt_s);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EV charging-station recommendation: simulation, safe RL training and evaluation"};
    app.require_subcommand(1);

    harness::RunSpec spec;
    std::string method = "greedy";
    std::string axis;
    std::vector<double> sweep_values;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--scenario", spec.scenario, "scenario JSON file")->required()->check(CLI::ExistingFile);
        cmd->add_option("--method", method,
                        "opsrl, ppolag, ppo, ppopenalty, dqn, reinforce, actorcritic or greedy");
        cmd->add_option("--seeds", spec.seeds, "seed list (default: scenario seeds)")->delimiter(',');
        cmd->add_option("--out", spec.out, "output directory")->required();
        cmd->add_option("--compliance", spec.compliance, "share of EVs following the recommendation")
            ->check(CLI::Range(0.0, 1.0));
        cmd->add_flag("--trace", spec.trace, "write droop, occupancy and per-step cost traces");
        cmd->add_option("--epochs", spec.epochs, "override the scenario's epoch count");
    };

    auto* train = app.add_subcommand("train", "train one policy per seed, then evaluate it");
    add_common(train);
    auto* eval = app.add_subcommand("eval", "evaluate a fixed or checkpointed policy");
    add_common(eval);
    eval->add_option("--checkpoint", spec.checkpoint, "checkpoint file or train output directory");
    auto* sweep = app.add_subcommand("sweep", "repeat a run over values of one parameter");
    add_common(sweep);
    sweep->add_option("--sweep-axis", axis, "ev_fraction, controller_interval (s), decoder_length or compliance_rate")
        ->required();
    sweep->add_option("--sweep-values", sweep_values, "comma-separated values")->required()->delimiter(',');
    auto* report = app.add_subcommand("report", "write plot-ready CSVs for a finished run");
    std::filesystem::path report_dir;
    report->add_option("dir", report_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) {
            harness::report(report_dir);
            fmt::print("report written to {}\n", (report_dir / "report").string());
            return 0;
        }
        spec.method = srl::parse_method(method);
        auto const scenario = load_scenario(spec.scenario);
        if (train->parsed()) {
            print_summary(harness::train(scenario, spec));
        } else if (eval->parsed()) {
            print_summary(harness::eval(scenario, spec));
        } else if (sweep->parsed()) {
            harness::sweep(scenario, spec, harness::parse_axis(axis), sweep_values);
            fmt::print("sweep written to {}\n", spec.out.string());
        }
    } catch (std::exception const& e) {
        std::string message, type;
        describe(e, message, type);
        nlohmann::json line{{"error", type}, {"message", message}};
        std::cerr << line.dump() << '\n';
        return 2;
    }
    return 0;
}
