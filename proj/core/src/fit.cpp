#include "seqcon/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <Eigen/Dense>

#include "seqcon/errors.hpp"
#include "seqcon/factor.hpp"
#include "seqcon/parallel.hpp"

namespace seqcon {

namespace {
constexpr double kIntrinsicJitter = 1e-8;
}

LatentModel::LatentModel(const ModelSpec& spec, const std::vector<DataTable>& data,
                         const std::map<std::string, EffectMeta>& effect_meta) {
    if (data.size() != spec.blocks.size())
        throw ConfigError("LatentModel: expected " + std::to_string(spec.blocks.size()) +
                          " data tables, got " + std::to_string(data.size()));

    // Effect blocks in name order, then share copies in share order.
    int offset = 0;
    for (const auto& [name, espec] : spec.effects) {
        EffectBlock b;
        b.name = name;
        b.spec = espec;
        b.offset = offset;
        b.size = espec.dim();
        b.global_dim = b.size;
        auto mit = effect_meta.find(name);
        if (mit != effect_meta.end()) {
            b.shared = mit->second.shared;
            b.slice_offset = mit->second.slice_offset;
            b.global_dim = mit->second.global_dim;
        }
        offset += b.size;
        effects_.push_back(std::move(b));
    }
    for (const auto& share : spec.shares) {
        if (!share.estimated()) continue;
        const auto& source = spec.effects.at(share.source_effect);
        if (source.kind == EffectKind::kronecker)
            throw ConfigError("estimated-alpha share of kronecker effects is not supported");
        EffectBlock b;
        b.name = share_copy_name(share);
        b.spec = source;
        b.spec.hyper = share.copy_hyper;
        b.offset = offset;
        b.size = b.spec.dim();
        b.global_dim = b.size;
        b.source_effect = share.source_effect;
        b.alpha_name = share.alpha_name;
        offset += b.size;
        effects_.push_back(std::move(b));
    }
    for (const auto& f : spec.fixed) {
        FixedBlock b;
        b.name = f.name;
        b.index = offset++;
        b.prior_mean = f.prior_mean;
        b.prior_precision = f.prior_precision;
        fixed_.push_back(b);
    }
    n_latent_ = offset;
    if (n_latent_ == 0) throw ConfigError("model has no latent variables");

    // Theta table: spec thetas plus the share-copy thetas, sorted by name.
    {
        std::map<std::string, ThetaTransform> transforms = theta_transforms(spec);
        for (const auto& [name, t] : transforms) {
            theta_names_.push_back(name);
            theta_transforms_.push_back(t);
            auto it = spec.hyper_priors.find(name);
            if (it == spec.hyper_priors.end())
                throw ConfigError("no prior declared for theta '" + name + "'");
            theta_priors_.push_back(it->second);
        }
    }

    auto theta_index = [&](const std::string& name) {
        auto it = std::lower_bound(theta_names_.begin(), theta_names_.end(), name);
        if (it == theta_names_.end() || *it != name)
            throw ConfigError("unknown theta '" + name + "'");
        return static_cast<int>(it - theta_names_.begin());
    };
    auto effect_block_of = [&](const std::string& name) -> const EffectBlock& {
        for (const auto& b : effects_)
            if (b.name == name) return b;
        throw ConfigError("predictor references unknown effect '" + name + "'");
    };
    auto fixed_index_of = [&](const std::string& name) {
        for (const auto& b : fixed_)
            if (b.name == name) return b.index;
        throw ConfigError("predictor references unknown fixed effect '" + name + "'");
    };

    // Observation rows.
    std::size_t total_rows = 0;
    for (const auto& t : data) total_rows += t.rows();
    y_.resize(total_rows);
    offset_ = Vector::Zero(total_rows);
    row_family_.resize(total_rows);
    row_hyper_theta_.assign(total_rows, -1);
    row_hyper_fix_.assign(total_rows, 0.0);
    std::vector<Eigen::Triplet<double>> trips;

    std::size_t row0 = 0;
    for (std::size_t bi = 0; bi < spec.blocks.size(); ++bi) {
        const auto& block = spec.blocks[bi];
        const auto& table = data[bi];
        if (block.family != Family::gaussian) all_gaussian_ = false;
        const auto& resp = table.column(block.response);
        const std::vector<double>* off =
            block.offset.empty() ? nullptr : &table.column(block.offset);
        int hyper_theta = -1;
        double hyper_fix = 0.0;
        if (block.family == Family::gaussian || block.family == Family::gamma) {
            if (block.hyper.is_fixed()) {
                hyper_fix = block.hyper.fixed_value;
                if (!(hyper_fix > 0.0))
                    throw ConfigError("block " + std::to_string(bi) +
                                      ": likelihood hyper must be positive");
            } else {
                hyper_theta = theta_index(block.hyper.theta_name);
            }
        }
        for (std::size_t r = 0; r < table.rows(); ++r) {
            const std::size_t row = row0 + r;
            y_[row] = resp[r];
            if (off != nullptr) offset_[row] = (*off)[r];
            row_family_[row] = block.family;
            row_hyper_theta_[row] = hyper_theta;
            row_hyper_fix_[row] = hyper_fix;
        }
        for (const auto& term : block.predictor) {
            switch (term.kind) {
                case PredictorTerm::Kind::intercept: {
                    const int col = fixed_index_of(term.name);
                    for (std::size_t r = 0; r < table.rows(); ++r)
                        trips.emplace_back(static_cast<int>(row0 + r), col, 1.0);
                    break;
                }
                case PredictorTerm::Kind::covariate: {
                    const int col = fixed_index_of(term.name);
                    const auto& x = table.column(term.column);
                    for (std::size_t r = 0; r < table.rows(); ++r)
                        trips.emplace_back(static_cast<int>(row0 + r), col, x[r]);
                    break;
                }
                case PredictorTerm::Kind::effect:
                case PredictorTerm::Kind::share: {
                    const ShareLink* share = nullptr;
                    if (term.kind == PredictorTerm::Kind::share) {
                        share = spec.find_share(term.name, static_cast<int>(bi));
                        if (share == nullptr)
                            throw ConfigError("share term without a shares entry for '" +
                                              term.name + "'");
                    }
                    const bool copy = share != nullptr && share->estimated();
                    const EffectBlock& eb =
                        copy ? effect_block_of(share_copy_name(*share)) : effect_block_of(term.name);
                    const double scale =
                        (share != nullptr && !copy) ? share->fixed_alpha.value() : 1.0;
                    const auto& idx = table.column(term.column);
                    for (std::size_t r = 0; r < table.rows(); ++r) {
                        const int node = static_cast<int>(idx[r]) - eb.slice_offset;
                        if (node < 0 || node >= eb.size)
                            throw ConfigError("effect '" + eb.name + "' index " +
                                              std::to_string(static_cast<int>(idx[r])) +
                                              " outside the latent block (row " +
                                              std::to_string(r) + ")");
                        trips.emplace_back(static_cast<int>(row0 + r), eb.offset + node, scale);
                    }
                    break;
                }
            }
        }
        row0 += table.rows();
    }
    a_.resize(static_cast<int>(total_rows), n_latent_);
    a_.setFromTriplets(trips.begin(), trips.end());
    a_.makeCompressed();

    // Constraint rows from intrinsic effect null bases.
    for (const auto& eb : effects_) {
        if (!eb.spec.sum_to_zero) continue;
        for (const auto& v : effect_null_basis(eb.spec)) {
            Vector row = Vector::Zero(n_latent_);
            row.segment(eb.offset, eb.size) = v;
            constraints_.push_back(std::move(row));
        }
    }
}

const LatentModel::EffectBlock* LatentModel::find_effect(const std::string& name) const {
    for (const auto& b : effects_)
        if (b.name == name) return &b;
    return nullptr;
}

double LatentModel::log_theta_prior(const std::vector<double>& theta) const {
    double acc = 0.0;
    for (int d = 0; d < theta_dim(); ++d) acc += theta_priors_[d].log_density(theta[d]);
    return acc;
}

std::vector<double> LatentModel::default_theta() const {
    std::vector<double> theta(theta_dim());
    for (int d = 0; d < theta_dim(); ++d) {
        const auto& p = theta_priors_[d];
        double t = 0.0;
        if (p.type == HyperPrior::Type::gaussian) t = p.a;
        if (p.type == HyperPrior::Type::loggamma && p.b > 0.0) t = std::log(p.a / p.b);
        theta[d] = std::clamp(t, -3.0, 5.0);
    }
    return theta;
}

GaussianDensity LatentModel::build_prior(
    const std::vector<double>& theta,
    const std::map<std::string, GaussianMarginal>& fixed_priors) const {
    std::map<std::string, double> natural;
    for (int d = 0; d < theta_dim(); ++d)
        natural[theta_names_[d]] = theta_to_natural(theta_transforms_[d], theta[d]);

    std::vector<Eigen::Triplet<double>> trips;
    Vector mean = Vector::Zero(n_latent_);
    double logdet = 0.0;
    for (const auto& eb : effects_) {
        auto [q, ld] = build_effect_precision_with_logdet(eb.spec, natural, kIntrinsicJitter);
        logdet += ld;
        for (int k = 0; k < q.matrix.outerSize(); ++k)
            for (SpMat::InnerIterator it(q.matrix, k); it; ++it)
                trips.emplace_back(eb.offset + static_cast<int>(it.row()),
                                   eb.offset + static_cast<int>(it.col()), it.value());
    }
    for (const auto& fb : fixed_) {
        double m = fb.prior_mean, p = fb.prior_precision;
        auto it = fixed_priors.find(fb.name);
        if (it != fixed_priors.end()) {
            m = it->second.mean;
            p = it->second.precision;
        }
        if (!(p > 0.0)) throw NumericalError("fixed-effect prior precision must be positive");
        trips.emplace_back(fb.index, fb.index, p);
        mean[fb.index] = m;
        logdet += std::log(p);
    }
    SparsePrecision q;
    q.matrix.resize(n_latent_, n_latent_);
    q.matrix.setFromTriplets(trips.begin(), trips.end());
    q.matrix.makeCompressed();
    GaussianDensity out = make_density(std::move(mean), std::move(q));
    out.log_det_hint = logdet;
    return out;
}

double LatentModel::loglik_sum(const Vector& eta, const std::vector<double>& theta) const {
    double acc = 0.0;
    for (std::size_t r = 0; r < n_rows(); ++r) {
        const double hyper = row_hyper_theta_[r] >= 0
                                 ? std::exp(theta[row_hyper_theta_[r]])
                                 : row_hyper_fix_[r];
        acc += loglik(row_family_[r], y_[r], eta[r], hyper);
        if (!std::isfinite(acc)) return -std::numeric_limits<double>::infinity();
    }
    return acc;
}

void LatentModel::loglik_derivs(const Vector& eta, const std::vector<double>& theta, Vector& grad,
                                Vector& weight) const {
    grad.resize(eta.size());
    weight.resize(eta.size());
    for (std::size_t r = 0; r < n_rows(); ++r) {
        const double hyper = row_hyper_theta_[r] >= 0
                                 ? std::exp(theta[row_hyper_theta_[r]])
                                 : row_hyper_fix_[r];
        grad[r] = dloglik(row_family_[r], y_[r], eta[r], hyper);
        weight[r] = std::max(neg_d2loglik(row_family_[r], y_[r], eta[r], hyper), 0.0);
    }
}

GaussianApprox gaussian_approx_latent(const LatentModel& model, const std::vector<double>& theta,
                                      const GaussianDensity& latent_prior, const FitOptions& options,
                                      const Vector* warm_start) {
    const SpMat& q_prior = latent_prior.precision.matrix;
    const Vector& mu = latent_prior.mean;
    const SpMat& a = model.design();
    const SpMat at = a.transpose();

    GaussianApprox out;
    out.logdet_prior = std::isfinite(latent_prior.log_det_hint)
                           ? latent_prior.log_det_hint
                           : CholeskyFactor(q_prior).log_det();

    Vector x = warm_start != nullptr && warm_start->size() == mu.size() ? *warm_start : mu;
    auto objective = [&](const Vector& v, double& lik, double& quad) {
        const Vector eta = a * v + model.offsets();
        lik = model.loglik_sum(eta, theta);
        const Vector d = v - mu;
        quad = d.dot(q_prior * d);
        return lik - 0.5 * quad;
    };

    double lik = 0.0, quad = 0.0;
    double obj = objective(x, lik, quad);
    if (!std::isfinite(obj)) {  // fall back to the prior mean
        x = mu;
        obj = objective(x, lik, quad);
        if (!std::isfinite(obj))
            throw NumericalError("non-finite likelihood at the prior mean");
    }

    Vector grad_rows, weight_rows;
    const int max_iter = model.all_gaussian() ? 1 : options.max_newton;
    std::shared_ptr<const CholeskyFactor> last_factor;
    SpMat h;
    for (int iter = 0; iter < max_iter; ++iter) {
        const Vector eta = a * x + model.offsets();
        model.loglik_derivs(eta, theta, grad_rows, weight_rows);
        const Vector grad = at * grad_rows - q_prior * (x - mu);
        h = q_prior + SpMat(at * weight_rows.asDiagonal() * a);
        auto hf = std::make_shared<CholeskyFactor>(h);
        last_factor = hf;
        const Vector step = hf->solve(grad);
        double t = 1.0;
        Vector x_new;
        double obj_new = 0.0, lik_new = 0.0, quad_new = 0.0;
        int halvings = 0;
        for (;; ++halvings) {
            if (halvings > options.max_halvings)
                throw NumericalError("Newton diverged: step halving exhausted after " +
                                     std::to_string(options.max_halvings) + " halvings");
            x_new = x + t * step;
            obj_new = objective(x_new, lik_new, quad_new);
            if (std::isfinite(obj_new) && obj_new >= obj - 1e-12 * (1.0 + std::abs(obj))) break;
            t *= 0.5;
        }
        const double dx = (t * step).cwiseAbs().maxCoeff();
        x = x_new;
        obj = obj_new;
        lik = lik_new;
        quad = quad_new;
        out.iterations = iter + 1;
        if (dx < options.newton_tol) break;
    }

    out.mean = x;
    out.loglik = lik;
    out.quad = quad;
    if (model.all_gaussian()) {
        // Gaussian weights do not depend on eta: the step Hessian is exact.
        out.precision = std::move(h);
        out.factor = std::move(last_factor);
    } else {
        // Precision at the mode (exactly prior + negative Hessian there).
        const Vector eta = a * x + model.offsets();
        model.loglik_derivs(eta, theta, grad_rows, weight_rows);
        out.precision = q_prior + SpMat(at * weight_rows.asDiagonal() * a);
        out.factor = std::make_shared<CholeskyFactor>(out.precision);
    }
    out.logdet_posterior = out.factor->log_det();
    return out;
}

double log_marginal_likelihood(const LatentModel& model, const std::vector<double>& theta,
                               const GaussianDensity& latent_prior, const FitOptions& options) {
    return gaussian_approx_latent(model, theta, latent_prior, options).log_marginal_likelihood();
}

namespace {

// Effective log prior over theta given the chaining mode.
struct ThetaPriorEval {
    const LatentModel* model = nullptr;
    std::vector<bool> parametric;
    std::optional<HyperGridPosterior> chain;
    std::vector<int> chain_dims;  // model theta dims covered by the chain

    double operator()(const std::vector<double>& theta) const {
        double acc = 0.0;
        for (int d = 0; d < model->theta_dim(); ++d)
            if (parametric[d]) acc += model->theta_prior(d).log_density(theta[d]);
        if (chain.has_value()) {
            std::vector<double> sub(chain_dims.size());
            for (std::size_t j = 0; j < chain_dims.size(); ++j) sub[j] = theta[chain_dims[j]];
            acc += chain->interpolate(sub);
        }
        return acc;
    }
};

ThetaPriorEval make_theta_prior(const LatentModel& model, const FitPriors& priors) {
    ThetaPriorEval eval;
    eval.model = &model;
    eval.parametric.assign(model.theta_dim(), true);
    if (priors.hyper_mode == FitPriors::HyperMode::chain && priors.hyper_grid.has_value()) {
        std::vector<std::string> shared;
        std::vector<int> dims;
        for (int d = 0; d < model.theta_dim(); ++d) {
            const auto& name = model.theta_names()[d];
            if (std::find(priors.hyper_grid->names.begin(), priors.hyper_grid->names.end(), name) !=
                priors.hyper_grid->names.end()) {
                shared.push_back(name);
                dims.push_back(d);
            }
        }
        if (!shared.empty()) {
            eval.chain = priors.hyper_grid->marginal(shared);
            eval.chain_dims = dims;
            for (int d : dims) eval.parametric[d] = false;
        }
    }
    return eval;
}

struct PointStats {
    std::vector<double> log_density;              // unnormalized
    std::vector<std::vector<double>> beta_mean;   // [point][fixed]
    std::vector<std::vector<double>> beta_var;
};

// Evaluate one theta point: Laplace log marginal likelihood + prior, plus
// the fixed-effect conditional means/variances used for grid mixing.
void evaluate_point(const LatentModel& model, const FitPriors& priors,
                    const ThetaPriorEval& prior_eval, const FitOptions& options,
                    const std::vector<double>& theta, const Vector* warm, std::size_t k,
                    PointStats& stats) {
    GaussianDensity prior = model.build_prior(theta, priors.fixed);
    GaussianApprox approx = gaussian_approx_latent(model, theta, prior, options, warm);
    stats.log_density[k] = approx.log_marginal_likelihood() + prior_eval(theta);
    auto& bm = stats.beta_mean[k];
    auto& bv = stats.beta_var[k];
    bm.resize(model.fixed_blocks().size());
    bv.resize(model.fixed_blocks().size());

    // Constraint conditioning redistributes intrinsic null-space levels onto
    // the fixed effects; without it the grid-mixed betas would be arbitrary.
    const auto& constraints = model.constraint_rows();
    Eigen::MatrixXd w, minv_wt;
    Vector shift;
    if (!constraints.empty()) {
        const int m = static_cast<int>(constraints.size());
        w.resize(model.n_latent(), m);
        for (int j = 0; j < m; ++j) w.col(j) = approx.factor->solve(constraints[j]);
        Eigen::MatrixXd awt(m, m);
        Vector resid(m);
        for (int i = 0; i < m; ++i) {
            resid[i] = constraints[i].dot(approx.mean);
            for (int j = 0; j < m; ++j) awt(i, j) = constraints[i].dot(w.col(j));
        }
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(awt);
        shift = w * ldlt.solve(resid);
        minv_wt = ldlt.solve(w.transpose());
    }

    for (std::size_t j = 0; j < model.fixed_blocks().size(); ++j) {
        const int idx = model.fixed_blocks()[j].index;
        Vector e = Vector::Zero(model.n_latent());
        e[idx] = 1.0;
        double mean = approx.mean[idx];
        double var = approx.factor->solve(e)[idx];
        if (!constraints.empty()) {
            mean -= shift[idx];
            var -= w.row(idx).dot(minv_wt.col(idx));
            var = std::max(var, 1e-300);
        }
        bm[j] = mean;
        bv[j] = var;
    }
}

HyperGridPosterior explore_impl(const LatentModel& model, const FitPriors& priors,
                                const FitOptions& options, PointStats* stats_out,
                                double* log_ml_out) {
    const int d = model.theta_dim();
    const ThetaPriorEval prior_eval = make_theta_prior(model, priors);

    HyperGridPosterior grid;
    const bool reuse_points = priors.hyper_mode == FitPriors::HyperMode::fixed_support ||
                              priors.hyper_mode == FitPriors::HyperMode::fixed_posterior;
    if (reuse_points) {
        if (!priors.hyper_grid.has_value())
            throw NumericalError("fixed-support fit requires a hyper grid");
        if (priors.hyper_grid->names != model.theta_names())
            throw NumericalError("fixed-support grid does not match the model thetas");
        grid = *priors.hyper_grid;
    }

    Vector warm;  // latent warm start threaded through the search
    auto evaluate_objective = [&](const std::vector<double>& theta) {
        GaussianDensity prior = model.build_prior(theta, priors.fixed);
        GaussianApprox approx = gaussian_approx_latent(model, theta, prior, options,
                                                       warm.size() ? &warm : nullptr);
        warm = approx.mean;
        return approx.log_marginal_likelihood() + prior_eval(theta);
    };

    if (!reuse_points) {
        if (d == 0) {
            grid = HyperGridPosterior::zero_dim();
        } else {
            // Coordinate search for the posterior mode.
            std::vector<double> theta = model.default_theta();
            if (prior_eval.chain.has_value() && !prior_eval.chain->mode.empty())
                for (std::size_t j = 0; j < prior_eval.chain_dims.size(); ++j)
                    theta[prior_eval.chain_dims[j]] = prior_eval.chain->mode[j];
            double best = evaluate_objective(theta);
            if (!std::isfinite(best))
                throw NumericalError("hyper mode search: non-finite objective at start");
            double step = 1.0;
            int stale = 0;
            while (step >= 0.02) {
                bool improved = false;
                for (int dim = 0; dim < d; ++dim) {
                    for (double dir : {+1.0, -1.0}) {
                        std::vector<double> cand = theta;
                        cand[dim] += dir * step;
                        const double val = evaluate_objective(cand);
                        ++stale;
                        if (std::isfinite(val) && val > best + 1e-10) {
                            best = val;
                            theta = cand;
                            improved = true;
                            stale = 0;
                        }
                        if (stale >= options.mode_search_max_stale)
                            throw NumericalError(
                                "hyper mode search failed to improve for " +
                                std::to_string(options.mode_search_max_stale) + " evaluations");
                    }
                }
                if (!improved) step *= 0.5;
            }
            grid.mode = theta;

            // Approximate per-dim sd from central second differences.
            std::vector<double> sd(d);
            const double h = 0.3;
            for (int dim = 0; dim < d; ++dim) {
                std::vector<double> up = theta, dn = theta;
                up[dim] += h;
                dn[dim] -= h;
                const double cup = evaluate_objective(up);
                const double cdn = evaluate_objective(dn);
                const double curv = (cup + cdn - 2.0 * best) / (h * h);
                sd[dim] = curv < 0.0 ? 1.0 / std::sqrt(-curv) : 0.75;
                sd[dim] = std::clamp(sd[dim], 0.05, 2.5);
            }
            const int points = options.grid_points(d);
            grid.names = model.theta_names();
            grid.axes.resize(d);
            for (int dim = 0; dim < d; ++dim) {
                auto& axis = grid.axes[dim];
                axis.resize(points);
                for (int i = 0; i < points; ++i) {
                    const double f = points == 1 ? 0.0 : -1.0 + 2.0 * i / (points - 1.0);
                    axis[i] = theta[dim] + options.span_sd * sd[dim] * f;
                }
            }
        }
    }

    // Evaluate every grid point; deterministic slot writes.
    const std::size_t n = grid.n_points();
    PointStats local_stats;
    PointStats& stats = stats_out != nullptr ? *stats_out : local_stats;
    stats.log_density.assign(n, 0.0);
    stats.beta_mean.assign(n, {});
    stats.beta_var.assign(n, {});
    const Vector warm_copy = warm;
    parallel_for(n, options.threads, [&](std::size_t k) {
        Vector w = warm_copy;
        evaluate_point(model, priors, prior_eval, options, grid.point(k),
                       w.size() ? &w : nullptr, k, stats);
    });

    if (priors.hyper_mode == FitPriors::HyperMode::fixed_posterior) {
        // Support points and weights fixed to the supplied posterior.
        if (log_ml_out != nullptr) {
            HyperGridPosterior probe = grid;
            probe.log_density = stats.log_density;
            probe.compute_weights();
            *log_ml_out = probe.normalize();
        }
        return grid;
    }

    grid.log_density = stats.log_density;
    grid.compute_weights();
    const double lz = grid.normalize();
    if (log_ml_out != nullptr) *log_ml_out = lz;
    if (grid.mode.empty() && d > 0) {
        // fixed_support: take the argmax as the mode.
        std::size_t best_k = 0;
        for (std::size_t k = 1; k < n; ++k)
            if (grid.log_density[k] > grid.log_density[best_k]) best_k = k;
        grid.mode = grid.point(best_k);
    }
    return grid;
}

}  // namespace

HyperGridPosterior explore_hyper_grid(const LatentModel& model, const FitPriors& priors,
                                      const FitOptions& options) {
    return explore_impl(model, priors, options, nullptr, nullptr);
}

namespace {

// Exact marginal precision of an effect block: Schur complement of the
// remaining latent variables in the joint posterior precision.
SpMat effect_marginal_precision(const SpMat& q, int off, int size) {
    const int n = static_cast<int>(q.rows());
    const int nb = n - size;
    if (nb == 0) return q;
    std::vector<int> to_b(n, -1);
    int bi = 0;
    for (int i = 0; i < n; ++i)
        if (i < off || i >= off + size) to_b[i] = bi++;
    std::vector<Eigen::Triplet<double>> tbb, tbe, tee;
    for (int k = 0; k < q.outerSize(); ++k) {
        for (SpMat::InnerIterator it(q, k); it; ++it) {
            const int r = static_cast<int>(it.row()), c = static_cast<int>(it.col());
            const bool re = r >= off && r < off + size;
            const bool ce = c >= off && c < off + size;
            if (re && ce)
                tee.emplace_back(r - off, c - off, it.value());
            else if (!re && !ce)
                tbb.emplace_back(to_b[r], to_b[c], it.value());
            else if (!re && ce)
                tbe.emplace_back(to_b[r], c - off, it.value());
        }
    }
    SpMat qbb(nb, nb), qbe(nb, size), qee(size, size);
    qbb.setFromTriplets(tbb.begin(), tbb.end());
    qbe.setFromTriplets(tbe.begin(), tbe.end());
    qee.setFromTriplets(tee.begin(), tee.end());
    CholeskyFactor fb(qbb);
    Eigen::MatrixXd x(nb, size);
    for (int j = 0; j < size; ++j) x.col(j) = fb.solve(Vector(qbe.col(j)));
    Eigen::MatrixXd s = Eigen::MatrixXd(qee) - Eigen::MatrixXd(qbe.transpose()) * x;
    // Symmetrize and sparsify.
    s = 0.5 * (s + s.transpose()).eval();
    const double cutoff = 1e-14 * s.cwiseAbs().maxCoeff();
    std::vector<Eigen::Triplet<double>> ts;
    for (int j = 0; j < size; ++j)
        for (int i = 0; i < size; ++i)
            if (std::abs(s(i, j)) > cutoff) ts.emplace_back(i, j, s(i, j));
    SpMat out(size, size);
    out.setFromTriplets(ts.begin(), ts.end());
    return out;
}

}  // namespace

BlockFitResult fit_block(const LatentModel& model, const FitPriors& priors,
                         const FitOptions& options) {
    const auto t_start = std::chrono::steady_clock::now();
    BlockFitResult out;

    PointStats stats;
    double log_ml = 0.0;
    HyperGridPosterior grid = explore_impl(model, priors, options, &stats, &log_ml);
    out.hyper_posterior = grid;
    out.log_marginal_likelihood = log_ml;

    // Posterior mass per grid point.
    const std::size_t n_pts = grid.n_points();
    std::vector<double> mass(n_pts);
    double total = 0.0;
    for (std::size_t k = 0; k < n_pts; ++k) {
        mass[k] = grid.weights[k] * std::exp(grid.log_density[k]);
        total += mass[k];
    }
    for (auto& m : mass) m /= total;

    // Grid-mixed, moment-matched fixed-effect marginals.
    for (std::size_t j = 0; j < model.fixed_blocks().size(); ++j) {
        double mean = 0.0, second = 0.0;
        for (std::size_t k = 0; k < n_pts; ++k) {
            mean += mass[k] * stats.beta_mean[k][j];
            second += mass[k] * (stats.beta_var[k][j] +
                                 stats.beta_mean[k][j] * stats.beta_mean[k][j]);
        }
        const double var = std::max(second - mean * mean, 1e-300);
        out.fixed_marginals[model.fixed_blocks()[j].name] = GaussianMarginal{mean, 1.0 / var};
    }

    // Theta-mode conditional for effect densities and node marginals.
    const std::vector<double> mode = grid.mode;
    GaussianDensity prior = model.build_prior(mode, priors.fixed);
    GaussianApprox approx = gaussian_approx_latent(model, mode, prior, options);
    Vector vars = approx.factor->inverse_diagonal();
    Vector mean = approx.mean;
    if (!model.constraint_rows().empty()) {
        const Vector e = Vector::Zero(static_cast<int>(model.constraint_rows().size()));
        mean = condition_on_constraints(approx.precision, mean, model.constraint_rows(), e, &vars);
    }

    for (const auto& eb : model.effect_blocks()) {
        EffectPosterior ep;
        ep.shared = eb.shared;
        ep.slice_offset = eb.slice_offset;
        ep.global_dim = eb.global_dim;
        ep.source_effect = eb.source_effect;
        ep.alpha_name = eb.alpha_name;
        ep.marginal_mean = mean.segment(eb.offset, eb.size);
        ep.marginal_var = vars.segment(eb.offset, eb.size);
        {
            std::map<std::string, double> natural;
            for (int d = 0; d < model.theta_dim(); ++d)
                natural[model.theta_names()[d]] =
                    theta_to_natural(model.theta_transform(d), mode[d]);
            ep.prior_precision =
                build_effect_precision_with_logdet(eb.spec, natural, kIntrinsicJitter).first;
        }

        SparsePrecision q;
        const bool whole = eb.size == model.n_latent();
        if (whole) {
            q.matrix = approx.precision;
        } else if (eb.shared || eb.size <= 500 || !eb.source_effect.empty()) {
            q.matrix = effect_marginal_precision(approx.precision, eb.offset, eb.size);
        } else {
            // Large local block: store the conditional sub-block instead.
            ep.exact_precision = false;
            std::vector<Eigen::Triplet<double>> trips;
            for (int k = 0; k < approx.precision.outerSize(); ++k)
                for (SpMat::InnerIterator it(approx.precision, k); it; ++it) {
                    const int r = static_cast<int>(it.row()) - eb.offset;
                    const int c = static_cast<int>(it.col()) - eb.offset;
                    if (r >= 0 && r < eb.size && c >= 0 && c < eb.size)
                        trips.emplace_back(r, c, it.value());
                }
            q.matrix.resize(eb.size, eb.size);
            q.matrix.setFromTriplets(trips.begin(), trips.end());
        }
        std::vector<std::string> labels(eb.size);
        for (int i = 0; i < eb.size; ++i)
            labels[i] = eb.name + "[" + std::to_string(eb.slice_offset + i) + "]";
        ep.density = make_density(mean.segment(eb.offset, eb.size), std::move(q), std::move(labels));
        out.effects[eb.name] = std::move(ep);
    }

    out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

}  // namespace seqcon
