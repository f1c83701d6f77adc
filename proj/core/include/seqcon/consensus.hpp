#pragma once

#include <optional>
#include <vector>

#include "seqcon/gaussian.hpp"

namespace seqcon {

// Per-model pooling weights, e.g. elicited from experts; must sum to 1.
struct ExpertWeights {
    std::vector<double> weights;
};

// Precision-weighted pooling of per-node marginals. Without expert weights
// w_j = tau_j / sum tau, giving mean = sum w_j mu_j and precision = sum tau_j.
// With expert weights w*_j ~ w_ej * w_j (renormalized) and the general
// precision (sum w*_j^2 / tau_j)^{-1}.
GaussianMarginal combine_marginals(const std::vector<GaussianMarginal>& marginals,
                                   const std::optional<ExpertWeights>& expert = std::nullopt);

// Product of multivariate Gaussian densities: Q = sum Q_j,
// mu = Q^{-1} sum Q_j mu_j. With correct_prior and the shared latent prior
// N(mu0, Q0^{-1}) used in each of the n fits, the prior overcount is removed:
// Q = sum Q_j - (n-1) Q0 and mu = Q^{-1} (sum Q_j mu_j - (n-1) Q0 mu0).
GaussianDensity combine_multivariate(const std::vector<GaussianDensity>& densities,
                                     const std::optional<GaussianDensity>& prior = std::nullopt,
                                     bool correct_prior = false);

// Node marginals of a multivariate density under both conventions:
// conditional precision Q_ii, and exact marginal precision 1/(Q^{-1})_ii.
struct NodeMarginals {
    Vector mean;
    Vector conditional_precision;  // Q_ii
    Vector exact_precision;        // 1/(Q^{-1})_ii
};
NodeMarginals marginals_from_multivariate(const GaussianDensity& density);

}  // namespace seqcon
