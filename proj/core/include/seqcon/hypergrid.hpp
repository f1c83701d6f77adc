#pragma once

#include <string>
#include <vector>

namespace seqcon {

// Discrete representation of pi(theta | y) on a tensor grid of support
// points (internal theta scale). log_density is normalized so that
// sum_k weights[k] * exp(log_density[k]) = 1.
//
// A zero-dimensional grid (no estimated hyperparameters) is the single
// empty point with weight 1.
struct HyperGridPosterior {
    std::vector<std::string> names;          // sorted theta names
    std::vector<std::vector<double>> axes;   // per-dim ascending support points
    std::vector<double> log_density;         // flattened row-major over axes
    std::vector<double> weights;             // quadrature weights per point
    std::vector<double> mode;                // argmax theta

    int dim() const { return static_cast<int>(names.size()); }
    std::size_t n_points() const;
    std::vector<double> point(std::size_t k) const;

    // Trapezoid product weights from the axes.
    void compute_weights();
    // Shifts log_density so the weighted exp-sum is 1; returns the log of
    // the normalizer that was removed.
    double normalize();

    // Multilinear interpolation of log_density; coordinates are clamped to
    // the grid hull. Dimension order must match `names`.
    double interpolate(const std::vector<double>& theta) const;

    // Marginal grid over a subset of dims (logsumexp over the others).
    HyperGridPosterior marginal(const std::vector<std::string>& keep) const;

    // Posterior moments on the internal scale.
    double mean(int d) const;
    double sd(int d) const;
    // Quantile from the 1-D marginal of dimension d (linear CDF interp).
    double quantile(int d, double p) const;

    static HyperGridPosterior zero_dim();
};

}  // namespace seqcon
