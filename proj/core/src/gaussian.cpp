#include "seqcon/gaussian.hpp"

#include <Eigen/Dense>

#include "seqcon/errors.hpp"
#include "seqcon/factor.hpp"
#include "seqcon/rng.hpp"

namespace seqcon {

GaussianDensity make_density(Vector mean, SparsePrecision precision,
                             std::vector<std::string> labels) {
    if (mean.size() != precision.matrix.rows())
        throw NumericalError("density mean length does not match precision dim");
    GaussianDensity d;
    d.mean = std::move(mean);
    d.precision = std::move(precision);
    d.node_labels = std::move(labels);
    return d;
}

Vector marginal_variances(const SparsePrecision& q) {
    return CholeskyFactor(q.matrix).inverse_diagonal();
}

Vector sample_gmrf(const GaussianDensity& density, std::uint64_t seed) {
    Rng rng(seed);
    return CholeskyFactor(density.precision.matrix).sample(density.mean, rng);
}

Vector condition_on_constraints(const SpMat& q, const Vector& mean,
                                const std::vector<Vector>& constraint_rows,
                                const Vector& e, Vector* variances) {
    if (constraint_rows.empty()) return mean;
    const int m = static_cast<int>(constraint_rows.size());
    const int n = static_cast<int>(mean.size());
    CholeskyFactor factor(q);
    Eigen::MatrixXd w(n, m);  // W = Q^{-1} A^T
    for (int j = 0; j < m; ++j) w.col(j) = factor.solve(constraint_rows[j]);
    Eigen::MatrixXd awt(m, m);  // A Q^{-1} A^T
    Vector resid(m);
    for (int i = 0; i < m; ++i) {
        resid[i] = constraint_rows[i].dot(mean) - e[i];
        for (int j = 0; j < m; ++j) awt(i, j) = constraint_rows[i].dot(w.col(j));
    }
    const Eigen::LDLT<Eigen::MatrixXd> awt_ldlt(awt);
    const Vector correction = w * awt_ldlt.solve(resid);
    if (variances != nullptr) {
        const Eigen::MatrixXd half = awt_ldlt.solve(w.transpose());  // (AQ^{-1}A^T)^{-1} W^T
        for (int i = 0; i < n; ++i) {
            (*variances)[i] -= w.row(i).dot(half.col(i));
            if ((*variances)[i] < 0.0) (*variances)[i] = 0.0;
        }
    }
    return mean - correction;
}

Vector sample_gmrf_constrained(const GaussianDensity& density,
                               const std::vector<Vector>& constraint_rows,
                               const Vector& e, std::uint64_t seed) {
    Vector x = sample_gmrf(density, seed);
    if (constraint_rows.empty()) return x;
    return condition_on_constraints(density.precision.matrix, x, constraint_rows, e, nullptr);
}

}  // namespace seqcon
