#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seqcon/factor.hpp"
#include "seqcon/gaussian.hpp"
#include "seqcon/hypergrid.hpp"
#include "seqcon/model.hpp"

namespace seqcon {

// Latent layout and observation machinery compiled from one (sub-)model.
// Latent vector = [effect blocks... | fixed effects]; estimated-alpha share
// terms materialize a local copy effect named share_copy_name(link).
class LatentModel {
public:
    LatentModel(const ModelSpec& spec, const std::vector<DataTable>& data,
                const std::map<std::string, EffectMeta>& effect_meta = {});

    struct EffectBlock {
        std::string name;
        EffectSpec spec;
        int offset = 0;
        int size = 0;
        bool shared = false;
        int slice_offset = 0;
        int global_dim = 0;
        std::string source_effect;  // set for share copies
        std::string alpha_name;     // set for share copies
    };
    struct FixedBlock {
        std::string name;
        int index = 0;
        double prior_mean = 0.0;
        double prior_precision = 0.001;
    };

    const std::vector<EffectBlock>& effect_blocks() const { return effects_; }
    const std::vector<FixedBlock>& fixed_blocks() const { return fixed_; }
    const EffectBlock* find_effect(const std::string& name) const;
    int n_latent() const { return n_latent_; }
    std::size_t n_rows() const { return y_.size(); }

    const std::vector<std::string>& theta_names() const { return theta_names_; }
    int theta_dim() const { return static_cast<int>(theta_names_.size()); }
    ThetaTransform theta_transform(int d) const { return theta_transforms_[d]; }
    const HyperPrior& theta_prior(int d) const { return theta_priors_[d]; }
    double log_theta_prior(const std::vector<double>& theta) const;
    // Initial mode-search point from the parametric priors.
    std::vector<double> default_theta() const;

    bool all_gaussian() const { return all_gaussian_; }

    GaussianDensity build_prior(const std::vector<double>& theta,
                                const std::map<std::string, GaussianMarginal>& fixed_priors) const;

    // Constraint rows over the joint latent (intrinsic effect null bases).
    const std::vector<Vector>& constraint_rows() const { return constraints_; }

    double loglik_sum(const Vector& eta, const std::vector<double>& theta) const;
    void loglik_derivs(const Vector& eta, const std::vector<double>& theta, Vector& grad,
                       Vector& weight) const;

    const SpMat& design() const { return a_; }
    const Vector& offsets() const { return offset_; }

private:
    std::vector<EffectBlock> effects_;
    std::vector<FixedBlock> fixed_;
    int n_latent_ = 0;
    std::vector<std::string> theta_names_;
    std::vector<ThetaTransform> theta_transforms_;
    std::vector<HyperPrior> theta_priors_;
    SpMat a_;
    Vector y_;
    Vector offset_;
    std::vector<Family> row_family_;
    std::vector<int> row_hyper_theta_;   // -1 when fixed
    std::vector<double> row_hyper_fix_;
    std::vector<Vector> constraints_;
    bool all_gaussian_ = true;
};

struct GaussianApprox {
    Vector mean;          // mode of the latent posterior at fixed theta
    SpMat precision;      // prior precision + negative likelihood Hessian
    double loglik = 0.0;  // data log-likelihood at the mode
    double quad = 0.0;    // (mode - prior mean)' Q_prior (mode - prior mean)
    double logdet_prior = 0.0;
    double logdet_posterior = 0.0;
    std::shared_ptr<const CholeskyFactor> factor;  // factor of `precision`
    int iterations = 0;

    double log_marginal_likelihood() const {
        return loglik + 0.5 * logdet_prior - 0.5 * quad - 0.5 * logdet_posterior;
    }
};

struct FitOptions {
    int points_per_dim_small = 7;  // theta dim <= 3
    int points_per_dim_large = 5;  // theta dim >= 4
    double span_sd = 3.0;
    int max_newton = 50;
    double newton_tol = 1e-8;
    int max_halvings = 30;
    int mode_search_max_stale = 200;
    int threads = 1;

    int grid_points(int theta_dim) const {
        return theta_dim <= 3 ? points_per_dim_small : points_per_dim_large;
    }
};

struct FitPriors {
    std::map<std::string, GaussianMarginal> fixed;  // overrides spec priors
    enum class HyperMode {
        parametric,      // spec hyper_priors only
        chain,           // add interpolated log-density of hyper_grid (shared dims)
        fixed_support,   // reuse hyper_grid points, re-weight on this data
        fixed_posterior  // reuse hyper_grid verbatim (points and weights)
    };
    HyperMode hyper_mode = HyperMode::parametric;
    std::optional<HyperGridPosterior> hyper_grid;
};

struct EffectPosterior {
    GaussianDensity density;  // theta-mode conditional
    bool exact_precision = true;  // false: conditional sub-block stored instead
    Vector marginal_mean;         // constraint-corrected
    Vector marginal_var;          // exact, constraint-corrected
    SparsePrecision prior_precision;  // effect prior at the theta mode (jittered)
    bool shared = false;
    int slice_offset = 0;
    int global_dim = 0;
    std::string source_effect;
    std::string alpha_name;
};

struct BlockFitResult {
    std::map<std::string, GaussianMarginal> fixed_marginals;  // grid-mixed
    HyperGridPosterior hyper_posterior;
    std::map<std::string, EffectPosterior> effects;
    double log_marginal_likelihood = 0.0;
    double wall_time = 0.0;
};

// Newton optimization of the latent field at fixed theta; exact single-step
// for all-gaussian models. Converged when max |dx| < tol.
GaussianApprox gaussian_approx_latent(const LatentModel& model, const std::vector<double>& theta,
                                      const GaussianDensity& latent_prior,
                                      const FitOptions& options = {},
                                      const Vector* warm_start = nullptr);

// Laplace estimate log pi(y | theta); exact for gaussian likelihoods.
double log_marginal_likelihood(const LatentModel& model, const std::vector<double>& theta,
                               const GaussianDensity& latent_prior,
                               const FitOptions& options = {});

// Mode search + tensor grid exploration of pi(theta | y).
HyperGridPosterior explore_hyper_grid(const LatentModel& model, const FitPriors& priors,
                                      const FitOptions& options = {});

// Full single-block fit: hyper grid, grid-mixed fixed marginals, theta-mode
// effect densities with exact marginal precisions where poolable.
BlockFitResult fit_block(const LatentModel& model, const FitPriors& priors,
                         const FitOptions& options = {});

}  // namespace seqcon
