#pragma once

#include <vector>

#include "seqcon/gaussian.hpp"

namespace seqcon {

// Pooled estimate of a scaling parameter linking two copies of a shared
// effect: a Gaussian approximation of pi(alpha) and an empirical-median
// point estimate over the usable nodes.
struct AlphaEstimate {
    GaussianMarginal gaussian;
    double point = 0.0;
    int node_count = 0;
};

struct RatioNode {
    GaussianMarginal num;  // scaled copy x*_i
    GaussianMarginal den;  // reference x_i
    double rho = 0.0;      // correlation between the two, often unknown -> 0
};

// Second-order (delta method) Gaussian approximation of num/den.
// Requires |den.mean| sqrt(den.precision) >= 2; the expansion is invalid
// near a zero denominator.
GaussianMarginal ratio_gaussian_approx(const GaussianMarginal& num, const GaussianMarginal& den,
                                       double rho);

// Minimum usable-node criterion applied inside pool_alpha.
bool ratio_node_usable(const GaussianMarginal& den);

// Precision-weighted product of per-node ratio approximations plus the
// empirical median of {mu*_i / mu_i}. Nodes failing the denominator
// criterion are filtered; at least 3 usable nodes required.
AlphaEstimate pool_alpha(const std::vector<RatioNode>& nodes);

// x*/alpha: mean scaled by 1/alpha, precision by alpha^2.
GaussianDensity rescale_effect(const GaussianDensity& density, double alpha);
GaussianMarginal rescale_marginal(const GaussianMarginal& m, double alpha);

}  // namespace seqcon
