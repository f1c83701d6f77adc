#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqcon/alpha.hpp"
#include "seqcon/consensus.hpp"
#include "seqcon/fit.hpp"
#include "seqcon/model.hpp"

namespace seqcon {

// Eq.-style hand-off: the moment-matched posterior of step i-1 is the prior
// of step i.
GaussianMarginal update_fixed_prior(const GaussianMarginal& posterior_prev);

// Leave-one-block-out prior for the second pass, from the Gaussian
// density-ratio identity pi(b | y_-i) ~ pi(b | y_{<i}) pi(b | y) / pi(b | y_{<=i}):
//   tau* = tau_{i-1} + tau_n - tau_i
//   mu*  = (tau_{i-1} mu_{i-1} + tau_n mu_n - tau_i mu_i) / tau*
GaussianMarginal second_pass_prior(const GaussianMarginal& hist_prev,
                                   const GaussianMarginal& final_posterior,
                                   const GaussianMarginal& hist_i);

struct SequenceState {
    int step = 0;
    std::map<std::string, GaussianMarginal> fixed_priors;  // current chain state
    HyperGridPosterior hyper_chain;
    bool has_chain = false;
    // Latest 1-D marginal per theta (covers thetas absent from the final grid).
    std::map<std::string, HyperGridPosterior> theta_registry;
    std::vector<BlockFitResult> stored_fits;
    std::vector<BlockFitResult> scp_fits;  // second-pass fits (run_scp only)
    // fixed_history[0] = priors; fixed_history[i] = posterior after step i.
    std::vector<std::map<std::string, GaussianMarginal>> fixed_history;
};

struct PooledEffect {
    bool pooled = false;   // false: partition-local passthrough
    int provenance_step = 0;
    int n_inputs = 0;
    // Marginal weighted-average route.
    Vector marginal_mean;
    Vector marginal_precision;
    // Multivariate product route (node marginals under both conventions).
    Vector mv_mean;
    Vector mv_conditional_precision;
    Vector mv_exact_precision;
    GaussianDensity multivariate;  // pooled density (pooled effects only)
    bool has_multivariate = false;
};

struct AlphaReport {
    std::string alpha_name;
    std::string source_effect;
    std::string copy_name;
    int step = 0;
    AlphaEstimate estimate;
    double applied_scale = 1.0;
};

struct StepRecord {
    int step = 0;
    std::string pass;  // "sc" or "scp"
    double wall_time = 0.0;
    double log_marginal_likelihood = 0.0;
    std::size_t rows = 0;
};

struct ConsensusReport {
    std::map<std::string, PooledEffect> effects;
    std::vector<AlphaReport> alphas;
    std::map<std::string, GaussianMarginal> fixed;
    HyperGridPosterior hyper;                                  // final grid
    std::map<std::string, HyperGridPosterior> theta_marginals; // 1-D each
    std::vector<StepRecord> steps;
    double fit_wall_time = 0.0;
    std::string mode;  // "full", "sc", "scp"
};

struct RunOptions {
    enum class Pooling { marginal, multivariate };
    Pooling pooling = Pooling::multivariate;
    bool correct_prior = false;
    enum class AlphaScale { point, gaussian_mean };
    AlphaScale alpha_scale = AlphaScale::point;
    FitOptions fit;
};

// Single-pass sequential consensus (Algorithm SC). An empty plan (mode none)
// fits the whole model as one partition.
ConsensusReport run_sc(const ModelSpec& spec, const std::vector<DataTable>& data,
                       const PartitionPlan& plan, const RunOptions& options,
                       SequenceState* state_out = nullptr);

// Two-pass variant (Algorithm SCP): second pass with the hyper grid fixed to
// the final SC posterior and leave-one-block-out fixed-effect priors.
ConsensusReport run_scp(const ModelSpec& spec, const std::vector<DataTable>& data,
                        const PartitionPlan& plan, const RunOptions& options,
                        SequenceState* state_out = nullptr);

// Convenience: unpartitioned fit through the same reporting path.
ConsensusReport run_full(const ModelSpec& spec, const std::vector<DataTable>& data,
                         const RunOptions& options);

}  // namespace seqcon
