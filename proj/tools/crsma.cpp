#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "crsma/experiment.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& sweep, int trials,
            const std::string& out, const std::string& format) {
    crsma::ExperimentPlan plan = crsma::load_plan(config_path);
    if (!sweep.empty()) crsma::apply_sweep_spec(plan, sweep);
    if (trials > 0) plan.trials = trials;
    if (!out.empty()) plan.output_path = out;
    if (!format.empty()) plan.format = format;
    plan.validate();

    crsma::ResultTable table = crsma::run_plan(plan);
    crsma::emit(table, plan.format, plan.output_path);
    std::cout << "wrote " << table.rows.size() << " rows to " << plan.output_path << " ("
              << plan.format << ")\n";

    bool any_feasible = false;
    for (const auto& r : table.rows)
        if (r.seed != "-1" && r.feasible > 0) any_feasible = true;
    if (!any_feasible) {
        std::cerr << "all trials infeasible\n";
        return 2;
    }
    return 0;
}

int cmd_validate(const std::string& config_path) {
    crsma::ExperimentPlan plan = crsma::load_plan(config_path);
    plan.validate();
    const auto values = plan.sweep_values();
    std::cout << "config ok: K=" << plan.base.K << " N=" << plan.base.N
              << " trials=" << plan.trials << " sweep=" << crsma::to_string(plan.axis) << " ("
              << values.size() << " values), " << plan.schemes.size() << " scheme(s), "
              << plan.format << " -> " << plan.output_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uplink cooperative rate-splitting simulator"};
    app.require_subcommand(1);

    std::string config_path, sweep, out, format;
    int trials = 0;

    CLI::App* run = app.add_subcommand("run", "run an experiment plan");
    run->add_option("--config", config_path, "plan file")->required();
    run->add_option("--sweep", sweep, "override sweep axis, axis=lo:step:hi");
    run->add_option("--trials", trials, "override trial count");
    run->add_option("--out", out, "override output path");
    run->add_option("--format", format, "override output format (csv|json)")
        ->check(CLI::IsMember({"csv", "json"}));

    CLI::App* validate = app.add_subcommand("validate", "check a plan file");
    validate->add_option("--config", config_path, "plan file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, sweep, trials, out, format);
        return cmd_validate(config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
