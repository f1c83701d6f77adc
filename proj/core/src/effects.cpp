#include "seqcon/effects.hpp"

#include <cmath>
#include <mutex>
#include <tuple>

#include "seqcon/errors.hpp"
#include "seqcon/factor.hpp"

namespace seqcon {

EffectKind effect_kind_from_string(const std::string& s) {
    if (s == "iid") return EffectKind::iid;
    if (s == "rw1") return EffectKind::rw1;
    if (s == "rw2") return EffectKind::rw2;
    if (s == "ar1") return EffectKind::ar1;
    if (s == "lattice_matern") return EffectKind::lattice_matern;
    if (s == "kronecker") return EffectKind::kronecker;
    throw ConfigError("unknown effect kind: " + s);
}

std::string to_string(EffectKind k) {
    switch (k) {
        case EffectKind::iid: return "iid";
        case EffectKind::rw1: return "rw1";
        case EffectKind::rw2: return "rw2";
        case EffectKind::ar1: return "ar1";
        case EffectKind::lattice_matern: return "lattice_matern";
        case EffectKind::kronecker: return "kronecker";
    }
    return "?";
}

int EffectSpec::dim() const {
    switch (kind) {
        case EffectKind::lattice_matern: return nx * ny;
        case EffectKind::kronecker: return children.at(0).dim() * children.at(1).dim();
        default: return size;
    }
}

std::vector<std::string> EffectSpec::hyper_names() const {
    std::vector<std::string> out;
    for (const auto& [slot, b] : hyper)
        if (!b.is_fixed()) out.push_back(b.theta_name);
    for (const auto& child : children)
        for (const auto& name : child.hyper_names()) out.push_back(name);
    return out;
}

bool EffectSpec::intrinsic() const {
    if (kind == EffectKind::rw1 || kind == EffectKind::rw2) return true;
    if (kind == EffectKind::kronecker)
        return children.at(0).intrinsic() || children.at(1).intrinsic();
    return false;
}

namespace {

double slot_value(const EffectSpec& spec, const std::string& slot,
                  const std::map<std::string, double>& theta) {
    auto it = spec.hyper.find(slot);
    if (it == spec.hyper.end())
        throw ConfigError("effect kind " + to_string(spec.kind) + " missing hyper slot '" + slot + "'");
    if (it->second.is_fixed()) return it->second.fixed_value;
    auto tv = theta.find(it->second.theta_name);
    if (tv == theta.end())
        throw ConfigError("hyper value not supplied for theta '" + it->second.theta_name + "'");
    return tv->second;
}

double checked_tau(const EffectSpec& spec, const std::map<std::string, double>& theta) {
    const double tau = slot_value(spec, "tau", theta);
    if (!(tau > 0.0)) throw NumericalError("non-positive precision tau = " + std::to_string(tau));
    return tau;
}

SpMat difference_gram(int n, int order, double scale) {
    // D^T D with D the first/second-difference operator ((n-order) x n).
    std::vector<Eigen::Triplet<double>> trips;
    const int rows = n - order;
    Eigen::MatrixXd stencil(1, order + 1);
    if (order == 1)
        stencil << -1.0, 1.0;
    else
        stencil << 1.0, -2.0, 1.0;
    for (int r = 0; r < rows; ++r)
        for (int a = 0; a <= order; ++a)
            for (int b = 0; b <= order; ++b)
                trips.emplace_back(r + a, r + b, scale * stencil(0, a) * stencil(0, b));
    SpMat q(n, n);
    q.setFromTriplets(trips.begin(), trips.end());
    return q;
}

SpMat ar1_precision(int n, double rho, double tau) {
    // Stationary AR1 scaled so the marginal precision is exactly tau.
    const double s = tau / (1.0 - rho * rho);
    std::vector<Eigen::Triplet<double>> trips;
    for (int i = 0; i < n; ++i) {
        const double diag = (i == 0 || i == n - 1) ? 1.0 : 1.0 + rho * rho;
        trips.emplace_back(i, i, s * diag);
        if (i + 1 < n) {
            trips.emplace_back(i, i + 1, -s * rho);
            trips.emplace_back(i + 1, i, -s * rho);
        }
    }
    SpMat q(n, n);
    q.setFromTriplets(trips.begin(), trips.end());
    return q;
}

SpMat lattice_spde_base(int nx, int ny, double h, double kappa) {
    // Mass-lumped alpha=2 stencil: Q0 = K C^{-1} K with K = kappa^2 C + G,
    // C = h^2 I (lumped mass), G the grid graph Laplacian (Neumann boundary).
    const int n = nx * ny;
    std::vector<Eigen::Triplet<double>> gt;
    auto id = [nx](int ix, int iy) { return iy * nx + ix; };
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            int deg = 0;
            const int me = id(ix, iy);
            const int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
            for (int d = 0; d < 4; ++d) {
                const int jx = ix + dx[d], jy = iy + dy[d];
                if (jx < 0 || jy < 0 || jx >= nx || jy >= ny) continue;
                ++deg;
                gt.emplace_back(me, id(jx, jy), -1.0);
            }
            gt.emplace_back(me, me, static_cast<double>(deg));
        }
    }
    SpMat g(n, n);
    g.setFromTriplets(gt.begin(), gt.end());

    const double c = h * h;
    SpMat identity(n, n);
    identity.setIdentity();
    SpMat k = kappa * kappa * c * identity + g;
    SpMat q0 = SpMat(k * (identity / c) * k);
    q0.makeCompressed();
    return q0;
}

SparsePrecision lattice_matern(const EffectSpec& spec, const std::map<std::string, double>& theta) {
    if (spec.nx < 2 || spec.ny < 2)
        throw ConfigError("lattice_matern grid dimensions must be >= 2");
    const double range = std::exp(slot_value(spec, "log_range", theta));
    const double sd = std::exp(slot_value(spec, "log_sd", theta));
    const double kappa = std::sqrt(8.0) / range;  // alpha = 2 (nu = 1) in 2-D
    SpMat q0 = lattice_spde_base(spec.nx, spec.ny, spec.spacing, kappa);
    // Calibrate so the stated sd is the mean marginal sd on this lattice;
    // the Neumann boundary inflates the analytic 1/(4 pi kappa^2) variance.
    // Grid explorations rebuild this at every theta point, so memoize.
    struct Key {
        int nx, ny;
        double h, kappa;
        bool operator<(const Key& o) const {
            return std::tie(nx, ny, h, kappa) < std::tie(o.nx, o.ny, o.h, o.kappa);
        }
    };
    static std::map<Key, double> cache;
    static std::mutex cache_mutex;
    const Key key{spec.nx, spec.ny, spec.spacing, kappa};
    double mean_var;
    {
        std::lock_guard<std::mutex> lock(cache_mutex);
        auto it = cache.find(key);
        if (it != cache.end()) {
            mean_var = it->second;
        } else {
            mean_var = CholeskyFactor(q0).inverse_diagonal().mean();
            cache.emplace(key, mean_var);
        }
    }
    SparsePrecision out;
    out.matrix = SpMat(q0 * (mean_var / (sd * sd)));
    out.matrix.makeCompressed();
    return out;
}

}  // namespace

SparsePrecision build_effect_precision(const EffectSpec& spec,
                                       const std::map<std::string, double>& theta) {
    SparsePrecision out;
    switch (spec.kind) {
        case EffectKind::iid: {
            if (spec.size < 1) throw ConfigError("iid effect needs size >= 1");
            const double tau = checked_tau(spec, theta);
            SpMat q(spec.size, spec.size);
            q.setIdentity();
            out.matrix = SpMat(q * tau);
            break;
        }
        case EffectKind::rw1:
        case EffectKind::rw2: {
            const int order = spec.kind == EffectKind::rw1 ? 1 : 2;
            if (spec.size < order + 1)
                throw ConfigError("rw effect needs size >= " + std::to_string(order + 1));
            const double tau = checked_tau(spec, theta);
            out.matrix = difference_gram(spec.size, order, tau);
            out.rank_deficiency = order;
            break;
        }
        case EffectKind::ar1: {
            if (spec.size < 2) throw ConfigError("ar1 effect needs size >= 2");
            const double tau = checked_tau(spec, theta);
            const double rho = slot_value(spec, "rho", theta);
            if (!(rho > -1.0 && rho < 1.0))
                throw NumericalError("ar1 autocorrelation outside (-1,1): " + std::to_string(rho));
            out.matrix = ar1_precision(spec.size, rho, tau);
            break;
        }
        case EffectKind::lattice_matern:
            out = lattice_matern(spec, theta);
            break;
        case EffectKind::kronecker: {
            if (spec.children.size() != 2)
                throw ConfigError("kronecker effect requires exactly two children");
            SparsePrecision a = build_effect_precision(spec.children[0], theta);
            SparsePrecision b = build_effect_precision(spec.children[1], theta);
            out.matrix = sparse_kronecker(a.matrix, b.matrix);
            const int na = a.dim(), nb = b.dim();
            out.rank_deficiency = na * nb - (na - a.rank_deficiency) * (nb - b.rank_deficiency);
            break;
        }
    }
    out.matrix.makeCompressed();
    return out;
}

std::pair<SparsePrecision, double> build_effect_precision_with_logdet(
    const EffectSpec& spec, const std::map<std::string, double>& theta, double intrinsic_jitter) {
    if (spec.kind == EffectKind::kronecker && spec.children.size() == 2) {
        auto [a, lda] = build_effect_precision_with_logdet(spec.children[0], theta, intrinsic_jitter);
        auto [b, ldb] = build_effect_precision_with_logdet(spec.children[1], theta, intrinsic_jitter);
        if (a.rank_deficiency == 0 && b.rank_deficiency == 0) {
            SparsePrecision out;
            out.matrix = sparse_kronecker(a.matrix, b.matrix);
            out.matrix.makeCompressed();
            const double logdet = b.dim() * lda + a.dim() * ldb;
            return {std::move(out), logdet};
        }
    }
    SparsePrecision q = build_effect_precision(spec, theta);
    if (q.rank_deficiency > 0 && intrinsic_jitter > 0.0) {
        SpMat jitter(q.dim(), q.dim());
        jitter.setIdentity();
        q.matrix += SpMat(jitter * intrinsic_jitter);
        q.rank_deficiency = 0;  // proper after jittering
    }
    double logdet;
    switch (spec.kind) {
        case EffectKind::iid:
            logdet = q.dim() * std::log(q.matrix.coeff(0, 0));
            break;
        default:
            logdet = CholeskyFactor(q.matrix).log_det();
    }
    return {std::move(q), logdet};
}

namespace {

void append_orthonormalized(std::vector<Vector>& basis, Vector v) {
    for (const auto& b : basis) v -= b.dot(v) * b;
    const double norm = v.norm();
    if (norm > 1e-9) basis.push_back(v / norm);
}

}  // namespace

std::vector<Vector> effect_null_basis(const EffectSpec& spec) {
    std::vector<Vector> basis;
    switch (spec.kind) {
        case EffectKind::rw1: {
            append_orthonormalized(basis, Vector::Ones(spec.size));
            break;
        }
        case EffectKind::rw2: {
            append_orthonormalized(basis, Vector::Ones(spec.size));
            Vector t = Vector::LinSpaced(spec.size, 0.0, spec.size - 1.0);
            append_orthonormalized(basis, t);
            break;
        }
        case EffectKind::kronecker: {
            const auto& a = spec.children.at(0);
            const auto& b = spec.children.at(1);
            const int na = a.dim(), nb = b.dim();
            for (const auto& v : effect_null_basis(a)) {
                for (int j = 0; j < nb; ++j) {
                    Vector w = Vector::Zero(na * nb);
                    for (int i = 0; i < na; ++i) w[i * nb + j] = v[i];
                    append_orthonormalized(basis, w);
                }
            }
            for (const auto& v : effect_null_basis(b)) {
                for (int i = 0; i < na; ++i) {
                    Vector w = Vector::Zero(na * nb);
                    w.segment(i * nb, nb) = v;
                    append_orthonormalized(basis, w);
                }
            }
            break;
        }
        default:
            break;
    }
    return basis;
}

}  // namespace seqcon
