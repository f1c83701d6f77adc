#include "seqcon/consensus.hpp"

#include <cmath>
#include <string>

#include "seqcon/errors.hpp"
#include "seqcon/factor.hpp"

namespace seqcon {

GaussianMarginal combine_marginals(const std::vector<GaussianMarginal>& marginals,
                                   const std::optional<ExpertWeights>& expert) {
    if (marginals.empty()) throw NumericalError("combine_marginals: empty input");
    for (const auto& m : marginals)
        if (!(m.precision > 0.0))
            throw NumericalError("combine_marginals: non-positive precision");

    double tau_sum = 0.0;
    for (const auto& m : marginals) tau_sum += m.precision;

    if (!expert.has_value()) {
        double mean = 0.0;
        for (const auto& m : marginals) mean += (m.precision / tau_sum) * m.mean;
        return {mean, tau_sum};
    }

    const auto& we = expert->weights;
    if (we.size() != marginals.size())
        throw NumericalError("expert weights size mismatch");
    double wsum = 0.0;
    for (double w : we) {
        if (!(w > 0.0)) throw NumericalError("expert weights must be positive");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-12)
        throw NumericalError("expert weights must sum to 1, got " + std::to_string(wsum));

    // Blend expert weights with the optimal precision weights, renormalize.
    std::vector<double> blended(marginals.size());
    double norm = 0.0;
    for (std::size_t j = 0; j < marginals.size(); ++j) {
        blended[j] = we[j] * (marginals[j].precision / tau_sum);
        norm += blended[j];
    }
    double mean = 0.0, invprec = 0.0;
    for (std::size_t j = 0; j < marginals.size(); ++j) {
        const double w = blended[j] / norm;
        mean += w * marginals[j].mean;
        invprec += w * w / marginals[j].precision;
    }
    return {mean, 1.0 / invprec};
}

GaussianDensity combine_multivariate(const std::vector<GaussianDensity>& densities,
                                     const std::optional<GaussianDensity>& prior,
                                     bool correct_prior) {
    if (densities.empty()) throw NumericalError("combine_multivariate: empty input");
    const int n = densities.front().dim();
    const auto& labels = densities.front().node_labels;
    for (const auto& d : densities) {
        if (d.dim() != n) throw NumericalError("combine_multivariate: dimension mismatch");
        if (!labels.empty() && !d.node_labels.empty() && d.node_labels != labels)
            throw NumericalError("combine_multivariate: node labelings differ");
    }

    SpMat q(n, n);
    Vector rhs = Vector::Zero(n);
    for (const auto& d : densities) {
        q += d.precision.matrix;
        rhs += d.precision.matrix * d.mean;
    }
    if (correct_prior) {
        if (!prior.has_value())
            throw NumericalError("correct_prior requires the shared latent prior");
        if (prior->dim() != n)
            throw NumericalError("combine_multivariate: prior dimension mismatch");
        const double k = static_cast<double>(densities.size()) - 1.0;
        q -= SpMat(prior->precision.matrix * k);
        rhs -= k * (prior->precision.matrix * prior->mean);
    }
    q.makeCompressed();

    SparsePrecision pooled;
    pooled.matrix = q;
    Vector mean;
    try {
        mean = CholeskyFactor(q).solve(rhs);
    } catch (const NumericalError&) {
        // Prior dominance: report how indefinite the corrected precision is.
        Eigen::VectorXd v = Vector::Ones(n).normalized();
        double lambda = 0.0;
        for (int it = 0; it < 50; ++it) {  // crude smallest-eigenvalue probe
            Vector w = q * v;
            lambda = v.dot(w);
            Vector shifted = w - (std::abs(lambda) + 1.0) * v;
            if (shifted.norm() < 1e-14) break;
            v = shifted.normalized();
        }
        Vector w = q * v;
        throw NumericalError(
            "prior-corrected pooled precision is not positive definite (smallest eigenvalue "
            "estimate " +
            std::to_string(v.dot(w)) + "); the prior dominates the partition posteriors");
    }
    return make_density(std::move(mean), std::move(pooled), labels);
}

NodeMarginals marginals_from_multivariate(const GaussianDensity& density) {
    NodeMarginals out;
    out.mean = density.mean;
    const int n = density.dim();
    out.conditional_precision.resize(n);
    for (int i = 0; i < n; ++i)
        out.conditional_precision[i] = density.precision.matrix.coeff(i, i);
    const Vector var = marginal_variances(density.precision);
    out.exact_precision = var.cwiseInverse();
    return out;
}

}  // namespace seqcon
