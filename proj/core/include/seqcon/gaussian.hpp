#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "seqcon/sparse.hpp"

namespace seqcon {

class Rng;

// Per-node Gaussian in (mean, precision) form.
struct GaussianMarginal {
    double mean = 0.0;
    double precision = 1.0;
};

// Multivariate Gaussian over a latent block: x ~ N(mean, Q^{-1}).
struct GaussianDensity {
    Vector mean;
    SparsePrecision precision;
    std::vector<std::string> node_labels;
    // Optional precomputed log-determinant of the precision (NaN when absent).
    double log_det_hint = std::numeric_limits<double>::quiet_NaN();

    int dim() const { return static_cast<int>(mean.size()); }
};

GaussianDensity make_density(Vector mean, SparsePrecision precision,
                             std::vector<std::string> labels = {});

// Diagonal of Q^{-1}; selected inversion from the sparse factor.
Vector marginal_variances(const SparsePrecision& q);

// Draw from the density; deterministic in seed.
Vector sample_gmrf(const GaussianDensity& density, std::uint64_t seed);

// Exact conditioning of N(mean, Q^{-1}) on A x = e (kriging form).
// Returns the conditional mean; if variances != nullptr it must hold the
// unconditional marginal variances on input and is corrected in place.
Vector condition_on_constraints(const SpMat& q_or_factor_matrix, const Vector& mean,
                                const std::vector<Vector>& constraint_rows,
                                const Vector& e, Vector* variances);

// Constrained draw by conditioning-by-kriging:
// sample unconstrained, then project onto {A x = e}.
Vector sample_gmrf_constrained(const GaussianDensity& density,
                               const std::vector<Vector>& constraint_rows,
                               const Vector& e, std::uint64_t seed);

}  // namespace seqcon
