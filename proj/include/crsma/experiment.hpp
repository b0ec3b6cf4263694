#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crsma/baselines.hpp"

namespace crsma {

enum class SweepAxis { p_v_max, p_u_max, r_th_v, decoding_order, scheme_set };

inline const char* to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::p_v_max: return "p_v_max";
        case SweepAxis::p_u_max: return "p_u_max";
        case SweepAxis::r_th_v: return "r_th_v";
        case SweepAxis::decoding_order: return "decoding-order";
        default: return "scheme-set";
    }
}

struct ExperimentPlan {
    SystemConfig base;
    ChannelMode mode = ChannelMode::exponential_mean;
    RateMode rate_mode = RateMode::static_ipi;
    SweepAxis axis = SweepAxis::p_v_max;
    std::vector<double> values; // empty -> singleton at the base value
    std::vector<std::string> schemes = {"crsma-susmg"};
    int trials = 1;
    std::string output_path = "results.csv";
    std::string format = "csv";
    bool record_walltime = true;

    void validate() const {
        base.validate();
        if (trials < 1) throw config_error("trials must be >= 1");
        if (schemes.empty()) throw config_error("scheme list must be nonempty");
        for (const auto& s : schemes) scheme_by_id(s);
        if (format != "csv" && format != "json") throw config_error("format must be csv or json");
        if (axis == SweepAxis::decoding_order)
            for (double v : values)
                if (v < 1 || v > 4 || v != std::floor(v))
                    throw config_error("decoding-order sweep values must be integers 1..4");
        if (axis == SweepAxis::scheme_set)
            for (double v : values)
                if (v < 1 || v > (double)schemes.size() || v != std::floor(v))
                    throw config_error("scheme-set sweep values must index the scheme list");
    }

    std::vector<double> sweep_values() const {
        if (!values.empty()) return values;
        switch (axis) {
            case SweepAxis::p_v_max: return {base.p_v_max};
            case SweepAxis::p_u_max: return {base.p_u_max};
            case SweepAxis::r_th_v: return {base.r_th_v};
            case SweepAxis::decoding_order: return {3};
            default: return {1};
        }
    }
};

struct ResultRow {
    std::string sweep_axis;
    double sweep_value = 0;
    std::string scheme;
    std::string seed; // derived seed; "-1" marks a summary row
    double sum_rate = 0;
    double delta = 1;
    double iterations = 0; // mean in summary rows
    double feasible = 0;   // 0/1 per trial, fraction in summary rows
    double wall_ms = 0;
    std::map<int, double> per_user; // not serialized
};

struct SweepSummary {
    std::string axis;
    double value = 0;
    std::string scheme;
    int n = 0;
    double mean_sum_rate = 0;
    double ci_half = 0; // 95% normal half-width
    double feasible_fraction = 0;
    double mean_delta = 0;
    double mean_iterations = 0;
    double mean_wall_ms = 0;
};

struct ResultTable {
    std::vector<ResultRow> rows;
    std::vector<SweepSummary> summaries;
};

inline OrderLabel order_from_index(int i) {
    switch (i) {
        case 1: return OrderLabel::order1;
        case 2: return OrderLabel::order2;
        case 3: return OrderLabel::order3;
        default: return OrderLabel::noma_gain;
    }
}

inline ResultTable run_plan(const ExperimentPlan& plan) {
    plan.validate();
    ResultTable table;
    const auto values = plan.sweep_values();

    for (double value : values) {
        std::vector<std::string> schemes = plan.schemes;
        if (plan.axis == SweepAxis::scheme_set) schemes = {plan.schemes[(size_t)value - 1]};
        for (const auto& scheme_id : schemes) {
            const SchemeSpec spec = scheme_by_id(scheme_id);
            std::vector<ResultRow> batch;
            for (int t = 0; t < plan.trials; ++t) {
                SystemConfig cfg = plan.base;
                cfg.seed = derive_seed(plan.base.seed, (std::uint64_t)t);
                std::optional<OrderLabel> order;
                switch (plan.axis) {
                    case SweepAxis::p_v_max: cfg.p_v_max = value; break;
                    case SweepAxis::p_u_max: cfg.p_u_max = value; break;
                    case SweepAxis::r_th_v: cfg.r_th_v = value; break;
                    case SweepAxis::decoding_order: order = order_from_index((int)value); break;
                    case SweepAxis::scheme_set: break;
                }
                ResultRow row;
                row.sweep_axis = to_string(plan.axis);
                row.sweep_value = value;
                row.scheme = scheme_id;
                row.seed = std::to_string(cfg.seed);
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    ChannelSet ch = generate_channels(cfg, plan.mode);
                    SchemeEvaluation ev = evaluate_scheme(spec, ch, cfg, order, plan.rate_mode);
                    row.delta = ev.delta;
                    row.iterations = ev.outcome.iterations;
                    if (ev.outcome.status == SocpStatus::optimal) {
                        row.sum_rate = ev.report.sum_rate;
                        row.feasible = ev.report.all_feasible() ? 1.0 : 0.0;
                        for (auto& [id, r] : ev.report.r_u) row.per_user[id] = r;
                        for (auto& [id, r] : ev.report.r_v) row.per_user[id] = r;
                    }
                } catch (const std::exception&) {
                    // failed trial: keep the row with feasible=0 and move on
                }
                const auto t1 = std::chrono::steady_clock::now();
                if (plan.record_walltime)
                    row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
                batch.push_back(std::move(row));
            }

            SweepSummary sm;
            sm.axis = to_string(plan.axis);
            sm.value = value;
            sm.scheme = scheme_id;
            sm.n = (int)batch.size();
            double var = 0;
            for (const auto& r : batch) {
                sm.mean_sum_rate += r.sum_rate;
                sm.feasible_fraction += r.feasible;
                sm.mean_delta += r.delta;
                sm.mean_iterations += r.iterations;
                sm.mean_wall_ms += r.wall_ms;
            }
            sm.mean_sum_rate /= sm.n;
            sm.feasible_fraction /= sm.n;
            sm.mean_delta /= sm.n;
            sm.mean_iterations /= sm.n;
            sm.mean_wall_ms /= sm.n;
            for (const auto& r : batch) {
                double d = r.sum_rate - sm.mean_sum_rate;
                var += d * d;
            }
            if (sm.n > 1) sm.ci_half = 1.96 * std::sqrt(var / (sm.n - 1)) / std::sqrt((double)sm.n);

            for (auto& r : batch) table.rows.push_back(std::move(r));
            ResultRow srow;
            srow.sweep_axis = sm.axis;
            srow.sweep_value = sm.value;
            srow.scheme = scheme_id;
            srow.seed = "-1";
            srow.sum_rate = sm.mean_sum_rate;
            srow.delta = sm.mean_delta;
            srow.iterations = sm.mean_iterations;
            srow.feasible = sm.feasible_fraction;
            srow.wall_ms = sm.mean_wall_ms;
            table.rows.push_back(std::move(srow));
            table.summaries.push_back(std::move(sm));
        }
    }
    return table;
}

inline std::string fmt6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

inline constexpr const char* kCsvHeader =
    "sweep_axis,sweep_value,scheme,seed,sum_rate,delta,iterations,feasible,wall_ms";

inline std::string to_csv(const ResultTable& table) {
    if (table.rows.empty()) throw config_error("emit: empty result table");
    std::ostringstream os;
    os << kCsvHeader << "\n";
    for (const auto& r : table.rows) {
        os << r.sweep_axis << ',' << fmt6(r.sweep_value) << ',' << r.scheme << ',' << r.seed << ','
           << fmt6(r.sum_rate) << ',' << fmt6(r.delta) << ',' << fmt6(r.iterations) << ','
           << fmt6(r.feasible) << ',' << fmt6(r.wall_ms) << "\n";
    }
    return os.str();
}

inline std::string to_json(const ResultTable& table) {
    if (table.rows.empty()) throw config_error("emit: empty result table");
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : table.rows) {
        nlohmann::ordered_json o;
        o["sweep_axis"] = r.sweep_axis;
        o["sweep_value"] = fmt6(r.sweep_value);
        o["scheme"] = r.scheme;
        o["seed"] = r.seed;
        o["sum_rate"] = fmt6(r.sum_rate);
        o["delta"] = fmt6(r.delta);
        o["iterations"] = fmt6(r.iterations);
        o["feasible"] = fmt6(r.feasible);
        o["wall_ms"] = fmt6(r.wall_ms);
        arr.push_back(std::move(o));
    }
    return arr.dump(2) + "\n";
}

// Reads back an emitted JSON file into rows (textual fields preserved exactly,
// so json -> csv reproduces the direct csv byte for byte).
inline ResultTable parse_json_results(const std::string& text) {
    ResultTable table;
    auto arr = nlohmann::json::parse(text);
    for (const auto& o : arr) {
        ResultRow r;
        r.sweep_axis = o.at("sweep_axis").get<std::string>();
        r.sweep_value = std::stod(o.at("sweep_value").get<std::string>());
        r.scheme = o.at("scheme").get<std::string>();
        r.seed = o.at("seed").get<std::string>();
        r.sum_rate = std::stod(o.at("sum_rate").get<std::string>());
        r.delta = std::stod(o.at("delta").get<std::string>());
        r.iterations = std::stod(o.at("iterations").get<std::string>());
        r.feasible = std::stod(o.at("feasible").get<std::string>());
        r.wall_ms = std::stod(o.at("wall_ms").get<std::string>());
        table.rows.push_back(std::move(r));
    }
    return table;
}

inline void emit(const ResultTable& table, const std::string& format, const std::string& path) {
    const std::string text = format == "json" ? to_json(table) : to_csv(table);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("emit: cannot open output path " + path);
    out << text;
    if (!out.good()) throw config_error("emit: write failed for " + path);
}

// --- configuration files: flat "dotted.key = value" lines, '#' comments ---

inline std::map<std::string, std::string> parse_config_text(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        size_t b = s.find_last_not_of(" \t\r\n");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw config_error("config line " + std::to_string(lineno) + ": empty key or value");
        kv[key] = val;
    }
    return kv;
}

namespace plan_detail {

inline double num(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw config_error("config key " + key + ": not a number: " + v);
    }
}

inline bool flag(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config key " + key + ": expected true/false");
}

inline std::vector<std::string> split(const std::string& v, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

inline std::vector<double> parse_range(const std::string& key, const std::string& v) {
    if (v.find(':') != std::string::npos) {
        auto parts = split(v, ':');
        if (parts.size() != 3) throw config_error("config key " + key + ": want lo:step:hi");
        double lo = num(key, parts[0]), step = num(key, parts[1]), hi = num(key, parts[2]);
        if (step <= 0 || hi < lo) throw config_error("config key " + key + ": bad range");
        std::vector<double> out;
        for (double x = lo; x <= hi + 1e-9; x += step) out.push_back(x);
        return out;
    }
    std::vector<double> out;
    for (auto& s : split(v, ',')) out.push_back(num(key, s));
    if (out.empty()) throw config_error("config key " + key + ": empty value list");
    return out;
}

} // namespace plan_detail

inline void apply_sweep_spec(ExperimentPlan& plan, const std::string& spec) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) throw config_error("sweep: expected axis=lo:step:hi");
    const std::string axis = spec.substr(0, eq);
    const std::string vals = spec.substr(eq + 1);
    if (axis == "p_v_max") plan.axis = SweepAxis::p_v_max;
    else if (axis == "p_u_max") plan.axis = SweepAxis::p_u_max;
    else if (axis == "r_th_v") plan.axis = SweepAxis::r_th_v;
    else if (axis == "decoding-order") plan.axis = SweepAxis::decoding_order;
    else if (axis == "scheme-set") plan.axis = SweepAxis::scheme_set;
    else throw config_error("sweep: unknown axis " + axis);
    plan.values = plan_detail::parse_range("sweep", vals);
}

inline ExperimentPlan plan_from_config(const std::map<std::string, std::string>& kv) {
    using namespace plan_detail;
    ExperimentPlan plan;
    for (const auto& [key, val] : kv) {
        if (key == "system.K") plan.base.K = (int)num(key, val);
        else if (key == "system.N") plan.base.N = (int)num(key, val);
        else if (key == "system.sigma2") plan.base.sigma2 = num(key, val);
        else if (key == "system.p_u_max") plan.base.p_u_max = num(key, val);
        else if (key == "system.p_v_max") plan.base.p_v_max = num(key, val);
        else if (key == "system.r_th_u") plan.base.r_th_u = num(key, val);
        else if (key == "system.r_th_v") plan.base.r_th_v = num(key, val);
        else if (key == "system.theta") plan.base.theta = num(key, val);
        else if (key == "system.eps") plan.base.eps = num(key, val);
        else if (key == "system.seed") plan.base.seed = (std::uint64_t)num(key, val);
        else if (key == "system.lambda_u") plan.base.lambda_u = num(key, val);
        else if (key == "system.lambda_v") plan.base.lambda_v = num(key, val);
        else if (key == "system.lambda_vu") plan.base.lambda_vu = num(key, val);
        else if (key == "system.delta_grid") plan.base.delta_grid = parse_range(key, val);
        else if (key == "channel.mode") {
            if (val == "disparity-ladder") plan.mode = ChannelMode::disparity_ladder;
            else if (val == "exponential-mean") plan.mode = ChannelMode::exponential_mean;
            else throw config_error("config key channel.mode: unknown mode " + val);
        } else if (key == "experiment.rate_mode") {
            if (val == "static-ipi") plan.rate_mode = RateMode::static_ipi;
            else if (val == "sic-global") plan.rate_mode = RateMode::sic_global;
            else throw config_error("config key experiment.rate_mode: unknown mode " + val);
        } else if (key == "experiment.schemes") plan.schemes = split(val, ',');
        else if (key == "experiment.trials") plan.trials = (int)num(key, val);
        else if (key == "experiment.sweep") apply_sweep_spec(plan, val);
        else if (key == "output.path") plan.output_path = val;
        else if (key == "output.format") plan.format = val;
        else if (key == "output.record_walltime") plan.record_walltime = flag(key, val);
        else throw config_error("unknown config key: " + key);
    }
    return plan;
}

inline ExperimentPlan load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    auto kv = parse_config_text(in);
    return plan_from_config(kv);
}

} // namespace crsma
