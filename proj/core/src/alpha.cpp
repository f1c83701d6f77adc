#include "seqcon/alpha.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seqcon/consensus.hpp"
#include "seqcon/errors.hpp"

namespace seqcon {

bool ratio_node_usable(const GaussianMarginal& den) {
    return std::abs(den.mean) * std::sqrt(den.precision) >= 2.0;
}

GaussianMarginal ratio_gaussian_approx(const GaussianMarginal& num, const GaussianMarginal& den,
                                       double rho) {
    if (!(num.precision > 0.0) || !(den.precision > 0.0))
        throw NumericalError("ratio_gaussian_approx: non-positive precision");
    if (!(rho >= -1.0 && rho <= 1.0))
        throw NumericalError("ratio_gaussian_approx: rho outside [-1,1]");
    if (!ratio_node_usable(den))
        throw NumericalError("ratio_gaussian_approx: denominator too close to zero (|mu| sqrt(tau) = " +
                             std::to_string(std::abs(den.mean) * std::sqrt(den.precision)) + " < 2)");
    const double ms = num.mean, m = den.mean;
    const double ts = num.precision, t = den.precision;
    const double mean = ms / m + ms / (t * m * m * m) - rho / (m * m * std::sqrt(ts * t));
    const double variance = ms * ms / (t * m * m * m * m) + 1.0 / (ts * m * m) -
                            2.0 * rho * ms / (m * m * m * std::sqrt(ts * t));
    if (!(variance > 0.0))
        throw NumericalError("ratio_gaussian_approx: non-positive variance (rho-induced degeneracy)");
    return {mean, 1.0 / variance};
}

AlphaEstimate pool_alpha(const std::vector<RatioNode>& nodes) {
    std::vector<GaussianMarginal> ratios;
    std::vector<double> point_ratios;
    for (const auto& node : nodes) {
        if (!ratio_node_usable(node.den)) continue;
        ratios.push_back(ratio_gaussian_approx(node.num, node.den, node.rho));
        point_ratios.push_back(node.num.mean / node.den.mean);
    }
    if (ratios.size() < 3)
        throw NumericalError("pool_alpha: only " + std::to_string(ratios.size()) +
                             " usable node pairs after filtering (need >= 3)");
    AlphaEstimate out;
    out.gaussian = combine_marginals(ratios);
    out.node_count = static_cast<int>(ratios.size());
    std::sort(point_ratios.begin(), point_ratios.end());
    const std::size_t n = point_ratios.size();
    out.point = n % 2 == 1 ? point_ratios[n / 2]
                           : 0.5 * (point_ratios[n / 2 - 1] + point_ratios[n / 2]);
    return out;
}

GaussianDensity rescale_effect(const GaussianDensity& density, double alpha) {
    if (alpha == 0.0) throw NumericalError("rescale_effect: alpha must be nonzero");
    GaussianDensity out = density;
    out.mean /= alpha;
    out.precision.matrix = SpMat(density.precision.matrix * (alpha * alpha));
    return out;
}

GaussianMarginal rescale_marginal(const GaussianMarginal& m, double alpha) {
    if (alpha == 0.0) throw NumericalError("rescale_marginal: alpha must be nonzero");
    return {m.mean / alpha, m.precision * alpha * alpha};
}

}  // namespace seqcon
