// seqcon: simulate synthetic survey scenarios, fit latent Gaussian models
// (full / sequential-consensus / two-pass), compare result sets, and time
// the algorithms against each other.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "seqcon/errors.hpp"
#include "seqcon/report_io.hpp"
#include "seqcon/sequential.hpp"
#include "seqcon/simulate.hpp"
#include "seqcon/version.hpp"

namespace fs = std::filesystem;
using namespace seqcon;
using nlohmann::json;

namespace {

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const double xm = x.mean(), ym = y.mean();
    double cxy = 0.0, cxx = 0.0, cyy = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        cxy += (x[i] - xm) * (y[i] - ym);
        cxx += (x[i] - xm) * (x[i] - xm);
        cyy += (y[i] - ym) * (y[i] - ym);
    }
    return cxy / std::sqrt(cxx * cyy);
}

int default_threads() {
    if (const char* env = std::getenv("SEQCON_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

void ensure_out_dir(const std::string& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory '" + out + "': " + ec.message());
}

double elapsed_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct FitArgs {
    std::string config;
    std::vector<std::string> data;
    std::string mode = "full";
    std::string pooling = "multivariate";
    std::string correct_prior = "off";
    std::uint64_t seed = 0;
    std::string out = "out";
    int threads = default_threads();
};

RunOptions make_run_options(const FitArgs& args) {
    RunOptions opts;
    if (args.pooling == "marginal")
        opts.pooling = RunOptions::Pooling::marginal;
    else if (args.pooling == "multivariate")
        opts.pooling = RunOptions::Pooling::multivariate;
    else
        throw ConfigError("unknown --pooling value '" + args.pooling + "'");
    if (args.correct_prior == "on")
        opts.correct_prior = true;
    else if (args.correct_prior == "off")
        opts.correct_prior = false;
    else
        throw ConfigError("--correct-prior expects on|off");
    opts.fit.threads = args.threads;
    return opts;
}

std::vector<DataTable> load_tables(const std::vector<std::string>& paths) {
    std::vector<DataTable> tables;
    tables.reserve(paths.size());
    for (const auto& p : paths) tables.push_back(DataTable::read_csv(p));
    return tables;
}

int cmd_simulate(const std::string& config, std::uint64_t seed, const std::string& out) {
    const Scenario scenario = parse_scenario_file(config);
    ensure_out_dir(out);
    const auto t0 = std::chrono::steady_clock::now();
    const ScenarioOutput sim = simulate_scenario(scenario, seed);
    const double sim_time = elapsed_since(t0);

    Manifest manifest;
    manifest.command = "simulate";
    manifest.config_path = config;
    manifest.seed = seed;
    manifest.wall_times["simulate"] = sim_time;
    if (scenario.kind == "st_gaussian") {
        sim.st_obs.write_csv(out + "/st_obs.csv");
        manifest.outputs = {"st_obs.csv", "truth.json"};
    } else {
        sim.stratified.write_csv(out + "/stratified.csv");
        sim.preferential.write_csv(out + "/preferential.csv");
        sim.lgcp_cells.write_csv(out + "/preferential_cells.csv");
        manifest.outputs = {"stratified.csv", "preferential.csv", "preferential_cells.csv",
                            "truth.json"};
    }
    {
        std::ofstream truth(out + "/truth.json");
        if (!truth) throw IoError("cannot open for writing: " + out + "/truth.json");
        truth << truth_to_json(scenario, sim.truth) << "\n";
    }
    write_manifest(manifest, out);
    std::cout << "simulate: wrote " << manifest.outputs.size() << " files to " << out << "\n";
    return 0;
}

int cmd_fit(const FitArgs& args) {
    const ModelSpec spec = parse_model_file(args.config);
    const std::vector<DataTable> data = load_tables(args.data);
    const RunOptions opts = make_run_options(args);
    ensure_out_dir(args.out);

    ConsensusReport report;
    if (args.mode == "full") {
        report = run_full(spec, data, opts);
    } else if (args.mode == "sc") {
        report = run_sc(spec, data, spec.partition, opts);
    } else if (args.mode == "scp") {
        report = run_scp(spec, data, spec.partition, opts);
    } else {
        throw ConfigError("--mode expects full|sc|scp");
    }

    write_results(report, args.out + "/results.jsonl");
    write_runlog(report, args.out + "/runlog.jsonl");
    Manifest manifest;
    manifest.command = "fit";
    manifest.config_path = args.config;
    manifest.data_paths = args.data;
    manifest.seed = args.seed;
    manifest.options = {{"mode", args.mode},
                        {"pooling", args.pooling},
                        {"correct_prior", args.correct_prior},
                        {"threads", std::to_string(args.threads)}};
    manifest.wall_times["fit"] = report.fit_wall_time;
    manifest.outputs = {"results.jsonl", "runlog.jsonl"};
    write_manifest(manifest, args.out);
    std::cout << "fit(" << args.mode << "): " << report.steps.size() << " step(s), "
              << report.fit_wall_time << " s fit time, results in " << args.out << "\n";
    return 0;
}

double manifest_fit_time(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) return 0.0;
    json doc;
    in >> doc;
    if (doc.contains("wall_times") && doc["wall_times"].contains("fit"))
        return doc["wall_times"]["fit"].get<double>();
    return 0.0;
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b, const std::string& truth_path,
                const std::vector<std::string>& truth_map, const std::string& out_path) {
    const LoadedResults a = read_results(dir_a + "/results.jsonl");
    const LoadedResults b = read_results(dir_b + "/results.jsonl");

    json metrics;
    metrics["result_a"] = dir_a;
    metrics["result_b"] = dir_b;
    json effects = json::object();
    for (const auto& [name, nodes_a] : a.effects) {
        auto it = b.effects.find(name);
        if (it == b.effects.end())
            throw ConfigError("effect label mismatch: '" + name + "' missing from " + dir_b);
        const auto& nodes_b = it->second;
        if (nodes_a.size() != nodes_b.size())
            throw ConfigError("effect '" + name + "' node counts differ");
        const int n = static_cast<int>(nodes_a.size());
        Eigen::VectorXd ma(n), mb(n);
        double rmse = 0.0, scaled = 0.0;
        for (int i = 0; i < n; ++i) {
            ma[i] = nodes_a[i].mean;
            mb[i] = nodes_b[i].mean;
            const double d = ma[i] - mb[i];
            rmse += d * d;
            const double pooled_sd =
                std::sqrt(0.5 * (nodes_a[i].sd * nodes_a[i].sd + nodes_b[i].sd * nodes_b[i].sd));
            scaled += std::abs(d) / pooled_sd;
        }
        json entry;
        entry["pearson"] = n > 1 ? pearson(ma, mb) : 1.0;
        entry["rmse"] = std::sqrt(rmse / n);
        entry["mean_abs_dmean_over_sd"] = scaled / n;
        effects[name] = entry;
    }
    metrics["effects"] = effects;

    json fixed = json::object();
    for (const auto& [name, ma] : a.fixed) {
        auto it = b.fixed.find(name);
        if (it == b.fixed.end()) continue;
        fixed[name] = {{"dmean", ma.mean - it->second.mean},
                       {"dsd", 1.0 / std::sqrt(ma.precision) - 1.0 / std::sqrt(it->second.precision)}};
    }
    metrics["fixed"] = fixed;

    json hyper = json::object();
    for (const auto& [name, ha] : a.hyper_summary) {
        auto it = b.hyper_summary.find(name);
        if (it == b.hyper_summary.end()) continue;
        hyper[name] = {{"dmode", ha.at("mode") - it->second.at("mode")},
                       {"dmean", ha.at("mean") - it->second.at("mean")}};
    }
    metrics["hyper"] = hyper;

    const double ta = manifest_fit_time(dir_a), tb = manifest_fit_time(dir_b);
    metrics["wall_time_a"] = ta;
    metrics["wall_time_b"] = tb;
    metrics["speedup_a_over_b"] = tb > 0.0 ? ta / tb : 1.0;

    if (!truth_path.empty()) {
        std::ifstream in(truth_path);
        if (!in) throw IoError("cannot open truth: " + truth_path);
        json truth;
        in >> truth;
        json vs_truth = json::object();
        for (const auto& mapping : truth_map) {
            const auto eq = mapping.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--truth-effect expects effect=truth_key");
            const std::string effect = mapping.substr(0, eq);
            const std::string key = mapping.substr(eq + 1);
            if (!truth.contains(key)) throw ConfigError("truth file lacks key '" + key + "'");
            const auto want = truth[key].get<std::vector<double>>();
            auto eval = [&](const LoadedResults& r, const std::string& tag) {
                auto it = r.effects.find(effect);
                if (it == r.effects.end() || it->second.size() != want.size()) return;
                const int n = static_cast<int>(want.size());
                Eigen::VectorXd got(n), tv(n);
                for (int i = 0; i < n; ++i) {
                    got[i] = it->second[i].mean;
                    tv[i] = want[i];
                }
                json entry;
                entry["pearson"] = pearson(got, tv);
                entry["rmse"] = std::sqrt((got - tv).squaredNorm() / n);
                vs_truth[effect][tag] = entry;
            };
            eval(a, "a");
            eval(b, "b");
        }
        metrics["vs_truth"] = vs_truth;
    }

    std::ofstream out(out_path);
    if (!out) throw IoError("cannot open for writing: " + out_path);
    out << metrics.dump(2) << "\n";
    std::cout << "compare: wrote " << out_path << "\n";
    return 0;
}

int cmd_bench(const FitArgs& args) {
    const ModelSpec spec = parse_model_file(args.config);
    const std::vector<DataTable> data = load_tables(args.data);
    const RunOptions opts = make_run_options(args);
    ensure_out_dir(args.out);

    const ConsensusReport full = run_full(spec, data, opts);
    const ConsensusReport sc = run_sc(spec, data, spec.partition, opts);
    const ConsensusReport scp = run_scp(spec, data, spec.partition, opts);

    json doc;
    doc["threads"] = args.threads;
    doc["full_seconds"] = full.fit_wall_time;
    doc["sc_seconds"] = sc.fit_wall_time;
    doc["scp_seconds"] = scp.fit_wall_time;
    doc["speedup_sc"] = full.fit_wall_time / sc.fit_wall_time;
    doc["speedup_scp"] = full.fit_wall_time / scp.fit_wall_time;
    std::ofstream out(args.out + "/bench.json");
    if (!out) throw IoError("cannot open for writing: " + args.out + "/bench.json");
    out << doc.dump(2) << "\n";
    std::cout << "bench: full " << full.fit_wall_time << " s, sc " << sc.fit_wall_time
              << " s, scp " << scp.fit_wall_time << " s (speedup sc "
              << full.fit_wall_time / sc.fit_wall_time << "x)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sequential-consensus inference for latent Gaussian models"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate synthetic survey data");
    std::string sim_config, sim_out = "out";
    std::uint64_t sim_seed = 0;
    sim->add_option("--config", sim_config, "scenario config path")->required();
    sim->add_option("--seed", sim_seed, "RNG seed");
    sim->add_option("--out", sim_out, "output directory");

    // fit
    auto* fit = app.add_subcommand("fit", "fit a model (full, sc, or scp)");
    FitArgs fit_args;
    fit->add_option("--config", fit_args.config, "model config path")->required();
    fit->add_option("--data", fit_args.data, "data table per likelihood block")->required();
    fit->add_option("--mode", fit_args.mode, "full|sc|scp");
    fit->add_option("--pooling", fit_args.pooling, "marginal|multivariate");
    fit->add_option("--correct-prior", fit_args.correct_prior, "on|off");
    fit->add_option("--seed", fit_args.seed, "seed recorded in the manifest");
    fit->add_option("--out", fit_args.out, "output directory");
    fit->add_option("--threads", fit_args.threads, "worker threads (env SEQCON_THREADS)");

    // compare
    auto* cmp = app.add_subcommand("compare", "compare two result directories");
    std::string cmp_a, cmp_b, cmp_truth, cmp_out = "metrics.json";
    std::vector<std::string> cmp_truth_map;
    cmp->add_option("--result-a", cmp_a, "first result directory")->required();
    cmp->add_option("--result-b", cmp_b, "second result directory")->required();
    cmp->add_option("--truth", cmp_truth, "truth.json from simulate");
    cmp->add_option("--truth-effect", cmp_truth_map, "effect=truth_key mapping (repeatable)");
    cmp->add_option("--out", cmp_out, "metrics output file");

    // bench
    auto* bench = app.add_subcommand("bench", "time full vs sc vs scp on one model");
    FitArgs bench_args;
    bench->add_option("--config", bench_args.config, "model config path")->required();
    bench->add_option("--data", bench_args.data, "data table per likelihood block")->required();
    bench->add_option("--pooling", bench_args.pooling, "marginal|multivariate");
    bench->add_option("--correct-prior", bench_args.correct_prior, "on|off");
    bench->add_option("--out", bench_args.out, "output directory");
    bench->add_option("--threads", bench_args.threads, "worker threads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*sim) return cmd_simulate(sim_config, sim_seed, sim_out);
        if (*fit) return cmd_fit(fit_args);
        if (*cmp) return cmd_compare(cmp_a, cmp_b, cmp_truth, cmp_truth_map, cmp_out);
        if (*bench) return cmd_bench(bench_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
