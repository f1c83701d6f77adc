#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqcon/report_io.hpp"
#include "seqcon/rng.hpp"
#include "seqcon/table.hpp"

using namespace seqcon;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kCli = SEQCON_CLI_PATH;

int run(const std::string& args, std::string* output = nullptr) {
    const std::string log = "/tmp/seqcon_cli_test.log";
    const int status = std::system((kCli + " " + args + " > " + log + " 2>&1").c_str());
    if (output != nullptr) {
        std::ifstream in(log);
        std::stringstream ss;
        ss << in.rdbuf();
        *output = ss.str();
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::path("/tmp/seqcon_cli") / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small and fast: a 5-node iid effect under gaussian noise, 3 row blocks.
void write_small_model(const fs::path& dir) {
    std::ofstream cfg(dir / "model.json");
    cfg << R"({
      "effects": {"u": {"kind": "iid", "size": 5, "hyper": {"tau": 1.0}}},
      "fixed": [{"name": "b", "mean": 0, "precision": 0.001}],
      "hyper_priors": {"tau_obs": {"type": "loggamma", "shape": 1.0, "rate": 0.1}},
      "blocks": [{"family": "gaussian", "link": "identity", "response": "y",
                  "hyper": {"tau": "tau_obs"},
                  "predictor": [{"intercept": "b"}, {"effect": "u", "index": "node"}]}],
      "partition": {"mode": "by_row_blocks",
                    "groups": [[0,1,2,3,4,5,6,7,8,9],
                                [10,11,12,13,14,15,16,17,18,19],
                                [20,21,22,23,24,25,26,27,28,29]]}
    })";
    Rng rng(12);
    DataTable t({"y", "node"}, 0);
    for (int i = 0; i < 30; ++i)
        t.append_row({{"y", 1.0 + rng.normal()}, {"node", double(i % 5)}});
    t.write_csv((dir / "data.csv").string());
}

void write_conjugate_model(const fs::path& dir) {
    std::ofstream cfg(dir / "model.json");
    cfg << R"({
      "effects": {"u": {"kind": "ar1", "size": 12, "hyper": {"tau": 1.0, "rho": 0.5}}},
      "blocks": [{"family": "gaussian", "link": "identity", "response": "y",
                  "hyper": {"tau": 2.0},
                  "predictor": [{"effect": "u", "index": "node"}]}],
      "partition": {"mode": "by_row_blocks",
                    "groups": [[0,1,2,3,4,5,6,7,9,11,13,15],
                                [8,10,12,14,16,17,18,19,20,21,22,23]]}
    })";
    Rng rng(77);
    DataTable t({"y", "node"}, 0);
    for (int i = 0; i < 24; ++i)
        t.append_row({{"y", rng.normal()}, {"node", double(i % 12)}});
    t.write_csv((dir / "data.csv").string());
}

void write_small_scenario(const fs::path& dir) {
    std::ofstream cfg(dir / "scenario.json");
    cfg << R"({
      "scenario": {
        "kind": "preferential",
        "domain": {"x0": 0, "y0": 0, "x1": 10, "y1": 10, "nx": 5, "ny": 5},
        "time_nodes": 3,
        "structure": "c",
        "true_params": {"beta0": 1.0, "beta1": 0.5, "gamma_shape": 3.0,
                        "spatial_range": 3.0, "spatial_sd": 1.0,
                        "rw2_prec": 10.0, "alpha": 0.7},
        "stratified": {"cells_x": 5, "cells_y": 5, "per_cell": 4},
        "lgcp": {"target_count": 300}
      }
    })";
}

}  // namespace

TEST_CASE("cli: simulate writes tables, truth, and a checksummed manifest") {
    const fs::path dir = fresh_dir("simulate");
    write_small_scenario(dir);
    const fs::path out = dir / "sim";
    REQUIRE(run("simulate --config " + (dir / "scenario.json").string() + " --seed 5 --out " +
                out.string()) == 0);
    for (const char* f :
         {"stratified.csv", "preferential.csv", "preferential_cells.csv", "truth.json",
          "manifest.json"})
        CHECK(fs::exists(out / f));

    json manifest;
    std::ifstream(out / "manifest.json") >> manifest;
    for (const auto& entry : manifest.at("outputs")) {
        const std::string file = entry.at("file");
        CHECK(fs::exists(out / file));
        CHECK(entry.at("checksum") == file_checksum((out / file).string()));
    }

    // Idempotent per seed: byte-identical outputs.
    const fs::path out2 = dir / "sim2";
    REQUIRE(run("simulate --config " + (dir / "scenario.json").string() + " --seed 5 --out " +
                out2.string()) == 0);
    for (const char* f : {"stratified.csv", "preferential.csv", "preferential_cells.csv"})
        CHECK(slurp((out / f).string()) == slurp((out2 / f).string()));

    // Different seed changes the data.
    const fs::path out3 = dir / "sim3";
    REQUIRE(run("simulate --config " + (dir / "scenario.json").string() + " --seed 6 --out " +
                out3.string()) == 0);
    CHECK(slurp((out / "preferential.csv").string()) !=
          slurp((out3 / "preferential.csv").string()));
}

TEST_CASE("cli: malformed config exits 2 and names the offending section") {
    const fs::path dir = fresh_dir("badcfg");
    std::ofstream(dir / "bad.json") << R"({"scenario": {"kind": "warp_drive"}})";
    std::string output;
    CHECK(run("simulate --config " + (dir / "bad.json").string() + " --out " +
              (dir / "out").string(), &output) == 2);
    CHECK(output.find("scenario.kind") != std::string::npos);
}

TEST_CASE("cli: fit full on a single partition, then sc and scp run logs") {
    const fs::path dir = fresh_dir("fit");
    write_small_model(dir);
    const std::string common = " --config " + (dir / "model.json").string() + " --data " +
                               (dir / "data.csv").string();

    REQUIRE(run("fit" + common + " --mode full --out " + (dir / "full").string()) == 0);
    const LoadedResults full = read_results((dir / "full" / "results.jsonl").string());
    CHECK(full.mode == "full");
    CHECK(full.effects.at("u").size() == 5);

    REQUIRE(run("fit" + common + " --mode sc --out " + (dir / "sc").string()) == 0);
    int sc_steps = 0;
    std::ifstream runlog(dir / "sc" / "runlog.jsonl");
    std::string line;
    while (std::getline(runlog, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        if (rec.value("record", "") == "step" && rec.value("pass", "") == "sc") ++sc_steps;
    }
    CHECK(sc_steps == 3);

    REQUIRE(run("fit" + common + " --mode scp --out " + (dir / "scp").string()) == 0);
    int scp_steps = 0;
    std::ifstream runlog2(dir / "scp" / "runlog.jsonl");
    while (std::getline(runlog2, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        if (rec.value("record", "") == "step" && rec.value("pass", "") == "scp") ++scp_steps;
    }
    CHECK(scp_steps == 3);
}

TEST_CASE("cli: results are byte-identical across thread counts") {
    const fs::path dir = fresh_dir("threads");
    write_small_model(dir);
    const std::string common = " --config " + (dir / "model.json").string() + " --data " +
                               (dir / "data.csv").string() + " --mode sc";
    REQUIRE(run("fit" + common + " --threads 1 --out " + (dir / "t1").string()) == 0);
    REQUIRE(run("fit" + common + " --threads 4 --out " + (dir / "t4").string()) == 0);
    CHECK(slurp((dir / "t1" / "results.jsonl").string()) ==
          slurp((dir / "t4" / "results.jsonl").string()));
}

TEST_CASE("cli: compare of a result with itself is the identity") {
    const fs::path dir = fresh_dir("cmpself");
    write_small_model(dir);
    const std::string common = " --config " + (dir / "model.json").string() + " --data " +
                               (dir / "data.csv").string();
    REQUIRE(run("fit" + common + " --mode full --out " + (dir / "full").string()) == 0);
    const fs::path metrics = dir / "metrics.json";
    REQUIRE(run("compare --result-a " + (dir / "full").string() + " --result-b " +
                (dir / "full").string() + " --out " + metrics.string()) == 0);
    json doc;
    std::ifstream(metrics) >> doc;
    CHECK(doc["effects"]["u"]["pearson"].get<double>() == doctest::Approx(1.0));
    CHECK(doc["effects"]["u"]["rmse"].get<double>() == doctest::Approx(0.0));
    CHECK(doc["speedup_a_over_b"].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("cli: prior-corrected sc matches the full fit at reporting precision") {
    const fs::path dir = fresh_dir("cmpsc");
    write_conjugate_model(dir);
    const std::string common = " --config " + (dir / "model.json").string() + " --data " +
                               (dir / "data.csv").string();
    REQUIRE(run("fit" + common + " --mode full --out " + (dir / "full").string()) == 0);
    REQUIRE(run("fit" + common +
                " --mode sc --pooling multivariate --correct-prior on --out " +
                (dir / "sc").string()) == 0);
    const LoadedResults full = read_results((dir / "full" / "results.jsonl").string());
    const LoadedResults sc = read_results((dir / "sc" / "results.jsonl").string());
    const auto& uf = full.effects.at("u");
    const auto& us = sc.effects.at("u");
    REQUIRE(uf.size() == us.size());
    for (std::size_t i = 0; i < uf.size(); ++i)
        CHECK(std::abs(uf[i].mean - us[i].mv_mean) < 1e-8);
}

TEST_CASE("cli: numerical failures exit 3, unwritable outputs exit 4") {
    const fs::path dir = fresh_dir("errors");
    std::ofstream(dir / "model.json") << R"({
      "fixed": [{"name": "b", "mean": 0, "precision": 1.0}],
      "blocks": [{"family": "gamma", "link": "log", "response": "y", "hyper": {"tau": 2.0},
                  "predictor": [{"intercept": "b"}]}]
    })";
    DataTable t({"y"}, 0);
    t.append_row({{"y", -1.0}});
    t.write_csv((dir / "data.csv").string());
    std::string output;
    CHECK(run("fit --config " + (dir / "model.json").string() + " --data " +
              (dir / "data.csv").string() + " --mode full --out " + (dir / "out").string(),
              &output) == 3);

    write_small_scenario(dir);
    CHECK(run("simulate --config " + (dir / "scenario.json").string() +
              " --out /proc/no_such_place/out") == 4);
}

TEST_CASE("cli: bench emits timing and speedups for all three modes") {
    const fs::path dir = fresh_dir("bench");
    write_small_model(dir);
    REQUIRE(run("bench --config " + (dir / "model.json").string() + " --data " +
                (dir / "data.csv").string() + " --out " + (dir / "bench").string()) == 0);
    json doc;
    std::ifstream(dir / "bench" / "bench.json") >> doc;
    CHECK(doc["full_seconds"].get<double>() > 0.0);
    CHECK(doc["sc_seconds"].get<double>() > 0.0);
    CHECK(doc["scp_seconds"].get<double>() > 0.0);
    CHECK(doc["speedup_sc"].get<double>() > 0.0);
}
