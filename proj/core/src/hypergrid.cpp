#include "seqcon/hypergrid.hpp"

#include <algorithm>
#include <cmath>

#include "seqcon/errors.hpp"

namespace seqcon {

namespace {

double logsumexp(const std::vector<double>& terms) {
    if (terms.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - m);
    return m + std::log(acc);
}

}  // namespace

std::size_t HyperGridPosterior::n_points() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.size();
    return n;
}

std::vector<double> HyperGridPosterior::point(std::size_t k) const {
    std::vector<double> p(axes.size());
    for (int d = dim() - 1; d >= 0; --d) {
        const std::size_t len = axes[d].size();
        p[d] = axes[d][k % len];
        k /= len;
    }
    return p;
}

void HyperGridPosterior::compute_weights() {
    const std::size_t n = n_points();
    weights.assign(n, 1.0);
    if (dim() == 0) return;
    std::vector<std::vector<double>> per_dim(axes.size());
    for (std::size_t d = 0; d < axes.size(); ++d) {
        const auto& a = axes[d];
        auto& w = per_dim[d];
        w.assign(a.size(), 1.0);
        if (a.size() > 1) {
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double left = i == 0 ? 0.0 : a[i] - a[i - 1];
                const double right = i + 1 == a.size() ? 0.0 : a[i + 1] - a[i];
                w[i] = 0.5 * (left + right);
            }
        }
    }
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t rem = k;
        double w = 1.0;
        for (int d = dim() - 1; d >= 0; --d) {
            const std::size_t len = axes[d].size();
            w *= per_dim[d][rem % len];
            rem /= len;
        }
        weights[k] = w;
    }
}

double HyperGridPosterior::normalize() {
    std::vector<double> terms(log_density.size());
    for (std::size_t k = 0; k < log_density.size(); ++k)
        terms[k] = log_density[k] + std::log(weights[k]);
    const double lz = logsumexp(terms);
    if (!std::isfinite(lz)) throw NumericalError("hyper grid normalization failed (all mass zero)");
    for (auto& ld : log_density) ld -= lz;
    return lz;
}

namespace {

// Per-dim interpolation stencil: indices into the axis and value weights.
// Interior points use a cubic Hermite with finite-difference tangents (a
// plain multilinear rule biases quadratic log-densities by O(h^2), which is
// too coarse for sequential grid updates); outside the hull the boundary
// cell is extended linearly.
struct AxisStencil {
    int idx[4];
    double w[4];
    int count;
};

AxisStencil axis_stencil(const std::vector<double>& a, double x) {
    AxisStencil s{};
    const int n = static_cast<int>(a.size());
    if (n == 1) {
        s.idx[0] = 0;
        s.w[0] = 1.0;
        s.count = 1;
        return s;
    }
    auto linear = [&](int i0, int i1) {
        const double t = (x - a[i0]) / (a[i1] - a[i0]);
        s.idx[0] = i0;
        s.idx[1] = i1;
        s.w[0] = 1.0 - t;
        s.w[1] = t;
        s.count = 2;
        return s;
    };
    if (x <= a[0]) return linear(0, 1);
    if (x >= a[n - 1]) return linear(n - 2, n - 1);
    auto it = std::upper_bound(a.begin(), a.end(), x);
    const int hi = std::clamp<int>(static_cast<int>(it - a.begin()), 1, n - 1);
    const int i = hi - 1;
    const double h = a[hi] - a[i];
    const double t = (x - a[i]) / h;
    const double h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
    const double h10 = t * (1.0 - t) * (1.0 - t);
    const double h01 = t * t * (3.0 - 2.0 * t);
    const double h11 = t * t * (t - 1.0);
    // Tangent m_i as value weights: one-sided at the ends, central inside.
    double wl[4] = {0, 0, 0, 0};  // over nodes i-1, i, i+1, i+2
    auto add_tangent = [&](int node, double coeff) {
        // tangent at `node` (relative to stencil base i-1).
        if (node == 1) {  // at a[i]
            if (i == 0) {
                wl[1] += coeff * (-1.0 / h);
                wl[2] += coeff * (1.0 / h);
            } else {
                const double span = a[i + 1] - a[i - 1];
                wl[0] += coeff * (-1.0 / span);
                wl[2] += coeff * (1.0 / span);
            }
        } else {  // at a[hi]
            if (hi == n - 1) {
                wl[1] += coeff * (-1.0 / h);
                wl[2] += coeff * (1.0 / h);
            } else {
                const double span = a[hi + 1] - a[hi - 1];
                wl[1] += coeff * (-1.0 / span);
                wl[3] += coeff * (1.0 / span);
            }
        }
    };
    wl[1] += h00;
    wl[2] += h01;
    add_tangent(1, h10 * h);
    add_tangent(2, h11 * h);
    s.count = 0;
    for (int k = 0; k < 4; ++k) {
        const int node = i - 1 + k;
        if (wl[k] == 0.0) continue;
        s.idx[s.count] = node;
        s.w[s.count] = wl[k];
        ++s.count;
    }
    return s;
}

}  // namespace

double HyperGridPosterior::interpolate(const std::vector<double>& theta) const {
    if (theta.size() != axes.size())
        throw NumericalError("hyper grid interpolation dimension mismatch");
    if (dim() == 0) return log_density.empty() ? 0.0 : log_density[0];
    std::vector<AxisStencil> stencils(axes.size());
    for (std::size_t d = 0; d < axes.size(); ++d) stencils[d] = axis_stencil(axes[d], theta[d]);
    // Tensor-product accumulation over the per-dim stencils.
    std::vector<int> pick(axes.size(), 0);
    double acc = 0.0;
    for (;;) {
        double w = 1.0;
        std::size_t idx = 0;
        for (std::size_t d = 0; d < axes.size(); ++d) {
            const auto& s = stencils[d];
            w *= s.w[pick[d]];
            idx = idx * axes[d].size() + static_cast<std::size_t>(s.idx[pick[d]]);
        }
        acc += w * log_density[idx];
        std::size_t d = axes.size();
        while (d > 0) {
            --d;
            if (++pick[d] < stencils[d].count) break;
            pick[d] = 0;
            if (d == 0) return acc;
        }
    }
}

HyperGridPosterior HyperGridPosterior::marginal(const std::vector<std::string>& keep) const {
    HyperGridPosterior out;
    std::vector<int> keep_dims;
    for (const auto& name : keep) {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw NumericalError("marginal over unknown theta '" + name + "'");
        keep_dims.push_back(static_cast<int>(it - names.begin()));
    }
    out.names = keep;
    for (int d : keep_dims) out.axes.push_back(axes[d]);
    const std::size_t n_out = out.n_points();
    std::vector<std::vector<double>> terms(n_out);
    const std::size_t n = n_points();
    for (std::size_t k = 0; k < n; ++k) {
        // Decompose k into per-dim indices.
        std::vector<std::size_t> sub(axes.size());
        std::size_t rem = k;
        for (int d = dim() - 1; d >= 0; --d) {
            sub[d] = rem % axes[d].size();
            rem /= axes[d].size();
        }
        std::size_t ko = 0;
        for (std::size_t j = 0; j < keep_dims.size(); ++j)
            ko = ko * axes[keep_dims[j]].size() + sub[keep_dims[j]];
        // Weight over dropped dims only.
        double wdrop = weights[k];
        for (std::size_t j = 0; j < keep_dims.size(); ++j) {
            // Recover the kept-dim weight factor to divide out.
            const int d = keep_dims[j];
            const auto& a = axes[d];
            if (a.size() > 1) {
                const std::size_t i = sub[d];
                const double left = i == 0 ? 0.0 : a[i] - a[i - 1];
                const double right = i + 1 == a.size() ? 0.0 : a[i + 1] - a[i];
                wdrop /= 0.5 * (left + right);
            }
        }
        terms[ko].push_back(log_density[k] + std::log(std::max(wdrop, 1e-300)));
    }
    out.log_density.resize(n_out);
    for (std::size_t ko = 0; ko < n_out; ++ko) out.log_density[ko] = logsumexp(terms[ko]);
    out.compute_weights();
    out.normalize();
    if (!mode.empty()) {
        out.mode.clear();
        for (int d : keep_dims) out.mode.push_back(mode[d]);
    }
    return out;
}

double HyperGridPosterior::mean(int d) const {
    double acc = 0.0;
    const std::size_t n = n_points();
    for (std::size_t k = 0; k < n; ++k)
        acc += weights[k] * std::exp(log_density[k]) * point(k)[d];
    return acc;
}

double HyperGridPosterior::sd(int d) const {
    const double m = mean(d);
    double acc = 0.0;
    const std::size_t n = n_points();
    for (std::size_t k = 0; k < n; ++k) {
        const double x = point(k)[d] - m;
        acc += weights[k] * std::exp(log_density[k]) * x * x;
    }
    return std::sqrt(std::max(acc, 0.0));
}

double HyperGridPosterior::quantile(int d, double p) const {
    HyperGridPosterior m1 = marginal({names.at(d)});
    const auto& a = m1.axes[0];
    std::vector<double> mass(a.size());
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        mass[i] = m1.weights[i] * std::exp(m1.log_density[i]);
        total += mass[i];
    }
    double cum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double next = cum + mass[i] / total;
        if (next >= p || i + 1 == a.size()) {
            if (i == 0) return a[0];
            const double f = mass[i] > 0 ? (p - cum) / (mass[i] / total) : 0.0;
            const double lo = 0.5 * (a[i - 1] + a[i]);
            const double hi = i + 1 < a.size() ? 0.5 * (a[i] + a[i + 1]) : a[i];
            return lo + std::clamp(f, 0.0, 1.0) * (hi - lo);
        }
        cum = next;
    }
    return a.back();
}

HyperGridPosterior HyperGridPosterior::zero_dim() {
    HyperGridPosterior g;
    g.log_density = {0.0};
    g.weights = {1.0};
    return g;
}

}  // namespace seqcon
