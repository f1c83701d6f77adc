#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqcon/sequential.hpp"

namespace seqcon {

// Line-delimited JSON records, one per node/parameter, with explicit field
// names; float formatting is fixed so identical runs are byte-identical.
void write_results(const ConsensusReport& report, const std::string& path);

// Minimal reader used by the compare tool.
struct LoadedResults {
    std::string mode;
    struct EffectNode {
        double mean = 0.0, sd = 0.0;
        double mv_mean = 0.0, mv_sd_conditional = 0.0, mv_sd_exact = 0.0;
        bool pooled = false;
    };
    std::map<std::string, std::vector<EffectNode>> effects;
    std::map<std::string, GaussianMarginal> fixed;
    std::map<std::string, std::map<std::string, double>> hyper_summary;  // theta -> stats
    std::map<std::string, double> alphas;        // alpha name -> point estimate
    std::map<std::string, double> alpha_means;   // alpha name -> gaussian mean
    double fit_wall_time = 0.0;
};
LoadedResults read_results(const std::string& path);

// Per-step machine-readable run log (includes wall times; not byte-stable).
void write_runlog(const ConsensusReport& report, const std::string& path);

// 64-bit FNV-1a over the file bytes, hex-encoded.
std::string file_checksum(const std::string& path);

struct Manifest {
    std::string command;
    std::string config_path;
    std::vector<std::string> data_paths;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> options;
    std::map<std::string, double> wall_times;  // per phase
    std::vector<std::string> outputs;          // file names relative to out dir
};
void write_manifest(const Manifest& manifest, const std::string& out_dir);

}  // namespace seqcon
