#pragma once

#include <Eigen/Sparse>
#include <memory>

#include "seqcon/sparse.hpp"

namespace seqcon {

class Rng;

// Sparse Cholesky handle over a fill-reducing permutation: P Q P^T = L L^T.
// Read-only after construction; safe to share across threads.
class CholeskyFactor {
public:
    // Throws NumericalError naming the failing pivot index if q is not
    // positive definite.
    explicit CholeskyFactor(const SpMat& q);

    int dim() const { return n_; }
    double log_det() const { return log_det_; }

    Vector solve(const Vector& rhs) const;

    // x = mean + P^T L^{-T} z, z iid standard normal; covariance Q^{-1}.
    Vector sample(const Vector& mean, Rng& rng) const;

    // Diagonal of Q^{-1} by the Takahashi recursions on the factor pattern.
    Vector inverse_diagonal() const;

private:
    int n_ = 0;
    double log_det_ = 0.0;
    std::shared_ptr<Eigen::SimplicialLLT<SpMat>> llt_;
};

// Convenience wrappers matching the module surface.
inline double log_determinant(const SpMat& q) { return CholeskyFactor(q).log_det(); }

}  // namespace seqcon
