#include "seqcon/sequential.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "seqcon/errors.hpp"
#include "seqcon/factor.hpp"

namespace seqcon {

GaussianMarginal update_fixed_prior(const GaussianMarginal& posterior_prev) {
    if (!(posterior_prev.precision > 0.0))
        throw NumericalError("update_fixed_prior: non-positive precision");
    return posterior_prev;
}

GaussianMarginal second_pass_prior(const GaussianMarginal& hist_prev,
                                   const GaussianMarginal& final_posterior,
                                   const GaussianMarginal& hist_i) {
    const double tau = hist_prev.precision + final_posterior.precision - hist_i.precision;
    if (!(tau > 0.0))
        throw NumericalError("second_pass_prior: non-positive precision " + std::to_string(tau) +
                             " (inconsistent sequential history)");
    const double mu = (hist_prev.precision * hist_prev.mean +
                       final_posterior.precision * final_posterior.mean -
                       hist_i.precision * hist_i.mean) /
                      tau;
    return {mu, tau};
}

namespace {

// Tensor product of grids over disjoint theta sets.
HyperGridPosterior tensor_product(const HyperGridPosterior& a, const HyperGridPosterior& b) {
    HyperGridPosterior out;
    out.names = a.names;
    out.names.insert(out.names.end(), b.names.begin(), b.names.end());
    out.axes = a.axes;
    out.axes.insert(out.axes.end(), b.axes.begin(), b.axes.end());
    const std::size_t na = a.n_points(), nb = b.n_points();
    out.log_density.resize(na * nb);
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j)
            out.log_density[i * nb + j] = a.log_density[i] + b.log_density[j];
    out.compute_weights();
    out.normalize();
    if (!a.mode.empty() && !b.mode.empty()) {
        out.mode = a.mode;
        out.mode.insert(out.mode.end(), b.mode.begin(), b.mode.end());
    }
    return out;
}

// Joint prior grid over `names` assembled from the carried chain and the
// per-theta registry. Returns an empty optional when nothing is covered.
std::optional<HyperGridPosterior> compose_chain(const std::vector<std::string>& names,
                                                const SequenceState& state) {
    std::optional<HyperGridPosterior> acc;
    std::vector<std::string> covered;
    if (state.has_chain) {
        for (const auto& n : names)
            if (std::find(state.hyper_chain.names.begin(), state.hyper_chain.names.end(), n) !=
                state.hyper_chain.names.end())
                covered.push_back(n);
        if (!covered.empty()) acc = state.hyper_chain.marginal(covered);
    }
    for (const auto& n : names) {
        if (std::find(covered.begin(), covered.end(), n) != covered.end()) continue;
        auto it = state.theta_registry.find(n);
        if (it == state.theta_registry.end()) continue;
        acc = acc.has_value() ? tensor_product(*acc, it->second) : it->second;
    }
    return acc;
}

std::map<std::string, GaussianMarginal> default_fixed(const ModelSpec& spec) {
    std::map<std::string, GaussianMarginal> out;
    for (const auto& f : spec.fixed) out[f.name] = {f.prior_mean, f.prior_precision};
    return out;
}

std::vector<Partition> make_partitions(const ModelSpec& spec, const std::vector<DataTable>& data,
                                       const PartitionPlan& plan) {
    if (plan.mode == PartitionPlan::Mode::none) {
        Partition p;
        p.label = 1;
        p.spec = spec;
        p.data = data;
        for (const auto& [name, e] : spec.effects) {
            EffectMeta meta;
            meta.global_dim = e.dim();
            p.effect_meta[name] = meta;
        }
        return {p};
    }
    return partition_dataset(spec, data, plan);
}

struct EffectInput {
    int step = 0;
    const EffectPosterior* ep = nullptr;
};

void correct_pooled(const ModelSpec& spec, const std::string& name, GaussianDensity& density,
                    Vector& vars) {
    auto it = spec.effects.find(name);
    if (it == spec.effects.end() || !it->second.sum_to_zero) return;
    const auto basis = effect_null_basis(it->second);
    if (basis.empty()) return;
    const Vector e = Vector::Zero(static_cast<int>(basis.size()));
    density.mean = condition_on_constraints(density.precision.matrix, density.mean, basis, e, &vars);
}

ConsensusReport build_consensus(const ModelSpec& spec, const std::vector<BlockFitResult>& fits,
                                const RunOptions& options) {
    ConsensusReport report;
    std::map<std::string, std::vector<EffectInput>> pools;
    std::map<std::string, std::vector<EffectInput>> locals;
    std::map<std::string, EffectInput> copies;

    for (std::size_t s = 0; s < fits.size(); ++s) {
        for (const auto& [name, ep] : fits[s].effects) {
            if (!ep.source_effect.empty())
                copies[name] = {static_cast<int>(s + 1), &ep};
            else if (ep.shared)
                pools[name].push_back({static_cast<int>(s + 1), &ep});
            else
                locals[name].push_back({static_cast<int>(s + 1), &ep});
        }
    }

    // Reference per-node marginals of an effect before adding rescaled copies.
    auto reference_marginals = [&](const std::string& name)
        -> std::vector<GaussianMarginal> {
        std::vector<const EffectPosterior*> inputs;
        auto pit = pools.find(name);
        if (pit != pools.end())
            for (const auto& in : pit->second) inputs.push_back(in.ep);
        auto lit = locals.find(name);
        if (pit == pools.end() && lit != locals.end() && lit->second.size() == 1 &&
            lit->second.front().ep->density.dim() == lit->second.front().ep->global_dim)
            inputs.push_back(lit->second.front().ep);
        if (inputs.empty())
            throw NumericalError("no reference posterior for shared effect '" + name + "'");
        const int dim = inputs.front()->global_dim;
        std::vector<GaussianMarginal> out(dim);
        for (int i = 0; i < dim; ++i) {
            std::vector<GaussianMarginal> per;
            per.reserve(inputs.size());
            for (const auto* ep : inputs)
                per.push_back({ep->marginal_mean[i], 1.0 / ep->marginal_var[i]});
            out[i] = combine_marginals(per);
        }
        return out;
    };

    // Alpha estimation and rescaling of copy effects into their source pools.
    struct Rescaled {
        GaussianDensity density;
        Vector mean, var;
        SparsePrecision prior;
        int step;
    };
    std::map<std::string, std::vector<Rescaled>> rescaled_inputs;
    for (const auto& share : spec.shares) {
        if (!share.estimated()) continue;
        const std::string copy_name = share_copy_name(share);
        auto cit = copies.find(copy_name);
        if (cit == copies.end()) continue;  // block not fitted in this run
        const EffectPosterior& copy = *cit->second.ep;
        const auto ref = reference_marginals(share.source_effect);
        if (static_cast<int>(ref.size()) != copy.density.dim())
            throw NumericalError("share '" + share.alpha_name + "': node count mismatch");
        std::vector<RatioNode> nodes(ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            nodes[i].num = {copy.marginal_mean[static_cast<int>(i)],
                            1.0 / copy.marginal_var[static_cast<int>(i)]};
            nodes[i].den = ref[i];
            nodes[i].rho = 0.0;
        }
        AlphaReport ar;
        ar.alpha_name = share.alpha_name;
        ar.source_effect = share.source_effect;
        ar.copy_name = copy_name;
        ar.step = cit->second.step;
        ar.estimate = pool_alpha(nodes);
        ar.applied_scale = options.alpha_scale == RunOptions::AlphaScale::point
                               ? ar.estimate.point
                               : ar.estimate.gaussian.mean;
        if (ar.applied_scale == 0.0)
            throw NumericalError("estimated alpha for '" + share.alpha_name + "' is zero");
        Rescaled r;
        r.density = rescale_effect(copy.density, ar.applied_scale);
        for (std::size_t i = 0; i < r.density.node_labels.size(); ++i)
            r.density.node_labels[i] = share.source_effect + "[" + std::to_string(i) + "]";
        r.mean = copy.marginal_mean / ar.applied_scale;
        r.var = copy.marginal_var / (ar.applied_scale * ar.applied_scale);
        r.prior = copy.prior_precision;
        r.prior.matrix = SpMat(r.prior.matrix * (ar.applied_scale * ar.applied_scale));
        r.step = cit->second.step;
        rescaled_inputs[share.source_effect].push_back(std::move(r));
        report.alphas.push_back(std::move(ar));
    }

    // Fixed-alpha shares with their own copies do not exist (linear terms);
    // pooled effects combine every stored posterior plus rescaled copies.
    std::set<std::string> pooled_names;
    for (const auto& [name, in] : pools) {
        (void)in;
        pooled_names.insert(name);
    }
    for (const auto& [name, in] : rescaled_inputs) {
        (void)in;
        pooled_names.insert(name);
    }

    for (const auto& name : pooled_names) {
        std::vector<GaussianDensity> densities;
        std::vector<const SparsePrecision*> priors;
        std::vector<std::pair<const Vector*, const Vector*>> node_stats;  // mean, var
        int n_inputs = 0;
        auto pit = pools.find(name);
        if (pit != pools.end()) {
            for (const auto& in : pit->second) {
                if (!in.ep->exact_precision)
                    throw NumericalError("effect '" + name +
                                         "' stored without exact marginal precision; cannot pool");
                densities.push_back(in.ep->density);
                priors.push_back(&in.ep->prior_precision);
                node_stats.emplace_back(&in.ep->marginal_mean, &in.ep->marginal_var);
                ++n_inputs;
            }
        } else {
            // Source seen in a single partition; still pooled with copies.
            auto lit = locals.find(name);
            if (lit != locals.end() && lit->second.size() == 1) {
                const auto* ep = lit->second.front().ep;
                densities.push_back(ep->density);
                priors.push_back(&ep->prior_precision);
                node_stats.emplace_back(&ep->marginal_mean, &ep->marginal_var);
                ++n_inputs;
                locals.erase(lit);
            }
        }
        auto rit = rescaled_inputs.find(name);
        if (rit != rescaled_inputs.end()) {
            for (const auto& r : rit->second) {
                densities.push_back(r.density);
                priors.push_back(&r.prior);
                node_stats.emplace_back(&r.mean, &r.var);
                ++n_inputs;
            }
        }
        PooledEffect pe;
        pe.pooled = true;
        pe.n_inputs = n_inputs;
        const int dim = densities.front().dim();

        pe.marginal_mean.resize(dim);
        pe.marginal_precision.resize(dim);
        for (int i = 0; i < dim; ++i) {
            std::vector<GaussianMarginal> per;
            per.reserve(node_stats.size());
            for (const auto& [mean, var] : node_stats)
                per.push_back({(*mean)[i], 1.0 / (*var)[i]});
            const GaussianMarginal pooled = combine_marginals(per);
            pe.marginal_mean[i] = pooled.mean;
            pe.marginal_precision[i] = pooled.precision;
        }

        std::optional<GaussianDensity> prior;
        if (options.correct_prior) {
            GaussianDensity p;
            p.mean = Vector::Zero(dim);
            p.precision = *priors.back();
            p.node_labels = densities.front().node_labels;
            prior = std::move(p);
        }
        GaussianDensity pooled =
            combine_multivariate(densities, prior, options.correct_prior);
        NodeMarginals nm = marginals_from_multivariate(pooled);
        Vector vars = nm.exact_precision.cwiseInverse();
        correct_pooled(spec, name, pooled, vars);
        pe.mv_mean = pooled.mean;
        pe.mv_conditional_precision = nm.conditional_precision;
        pe.mv_exact_precision = vars.cwiseInverse();
        pe.multivariate = std::move(pooled);
        pe.has_multivariate = true;
        report.effects[name] = std::move(pe);
    }

    // Partition-local effects pass through with their provenance.
    for (const auto& [name, slices] : locals) {
        const int global_dim = slices.front().ep->global_dim;
        PooledEffect pe;
        pe.pooled = false;
        pe.n_inputs = static_cast<int>(slices.size());
        pe.marginal_mean = Vector::Zero(global_dim);
        pe.marginal_precision = Vector::Zero(global_dim);
        pe.mv_mean = Vector::Zero(global_dim);
        pe.mv_conditional_precision = Vector::Zero(global_dim);
        pe.mv_exact_precision = Vector::Zero(global_dim);
        for (const auto& in : slices) {
            const auto& ep = *in.ep;
            const int off = ep.slice_offset;
            const int size = ep.density.dim();
            for (int i = 0; i < size; ++i) {
                const int g = off + i;
                pe.marginal_mean[g] = ep.marginal_mean[i];
                pe.marginal_precision[g] = 1.0 / ep.marginal_var[i];
                pe.mv_mean[g] = ep.marginal_mean[i];
                pe.mv_conditional_precision[g] = ep.density.precision.matrix.coeff(i, i);
                pe.mv_exact_precision[g] = 1.0 / ep.marginal_var[i];
            }
            pe.provenance_step = in.step;
        }
        if (slices.size() == 1 && slices.front().ep->density.dim() == global_dim &&
            slices.front().ep->exact_precision) {
            pe.multivariate = slices.front().ep->density;
            pe.has_multivariate = true;
        }
        report.effects[name] = std::move(pe);
    }

    return report;
}

ConsensusReport run_sequence(const ModelSpec& spec, const std::vector<DataTable>& data,
                             const PartitionPlan& plan, const RunOptions& options,
                             SequenceState* state_out, bool second_pass) {
    const std::vector<Partition> partitions = make_partitions(spec, data, plan);
    const int n = static_cast<int>(partitions.size());

    SequenceState state;
    state.fixed_priors = {};
    state.fixed_history.push_back(default_fixed(spec));

    std::vector<StepRecord> steps;

    // First pass: Algorithm SC.
    for (int i = 0; i < n; ++i) {
        const Partition& part = partitions[i];
        LatentModel model(part.spec, part.data, part.effect_meta);
        FitPriors priors;
        priors.fixed = state.fixed_priors;
        if (i > 0 && model.theta_dim() > 0) {
            auto composite = compose_chain(model.theta_names(), state);
            if (composite.has_value()) {
                priors.hyper_mode = FitPriors::HyperMode::chain;
                priors.hyper_grid = std::move(*composite);
            }
        }
        BlockFitResult fit;
        try {
            fit = fit_block(model, priors, options.fit);
        } catch (const NumericalError& e) {
            throw NumericalError("block fit failed at step " + std::to_string(i + 1) + ": " +
                                 e.what());
        }

        StepRecord rec;
        rec.step = i + 1;
        rec.pass = "sc";
        rec.wall_time = fit.wall_time;
        rec.log_marginal_likelihood = fit.log_marginal_likelihood;
        rec.rows = model.n_rows();
        steps.push_back(rec);

        auto hist = state.fixed_history.back();
        for (const auto& [name, marginal] : fit.fixed_marginals) {
            state.fixed_priors[name] = update_fixed_prior(marginal);
            hist[name] = marginal;
        }
        state.fixed_history.push_back(std::move(hist));
        if (model.theta_dim() > 0) {
            state.hyper_chain = fit.hyper_posterior;
            state.has_chain = true;
            for (const auto& theta : model.theta_names())
                state.theta_registry[theta] = fit.hyper_posterior.marginal({theta});
        }
        state.stored_fits.push_back(std::move(fit));
        state.step = i + 1;
    }

    std::vector<BlockFitResult> consensus_fits = state.stored_fits;

    // Second pass: Algorithm SCP.
    if (second_pass && n > 1) {
        std::vector<BlockFitResult> scp_fits(n);
        for (int i = 0; i < n; ++i) {
            const Partition& part = partitions[i];
            LatentModel model(part.spec, part.data, part.effect_meta);
            FitPriors priors;
            for (const auto& [name, final_post] : state.fixed_history.back()) {
                const auto& prev = state.fixed_history[i].at(name);
                const auto& at_i = state.fixed_history[i + 1].at(name);
                priors.fixed[name] = second_pass_prior(prev, final_post, at_i);
            }
            if (model.theta_dim() > 0) {
                auto composite = compose_chain(model.theta_names(), state);
                if (!composite.has_value())
                    throw NumericalError("second pass: no hyper posterior covering step " +
                                         std::to_string(i + 1));
                // Reorder to the model's (sorted) theta order.
                priors.hyper_grid = composite->marginal(model.theta_names());
                priors.hyper_mode = FitPriors::HyperMode::fixed_posterior;
            }
            BlockFitResult fit;
            try {
                fit = fit_block(model, priors, options.fit);
            } catch (const NumericalError& e) {
                throw NumericalError("second-pass fit failed at step " + std::to_string(i + 1) +
                                     ": " + e.what());
            }
            StepRecord rec;
            rec.step = i + 1;
            rec.pass = "scp";
            rec.wall_time = fit.wall_time;
            rec.log_marginal_likelihood = fit.log_marginal_likelihood;
            rec.rows = model.n_rows();
            steps.push_back(rec);
            scp_fits[i] = std::move(fit);
        }
        state.scp_fits = scp_fits;
        consensus_fits = std::move(scp_fits);
    }

    ConsensusReport report = build_consensus(spec, consensus_fits, options);
    report.mode = second_pass ? "scp" : (n == 1 ? "full" : "sc");
    report.fixed = state.fixed_history.back();
    report.hyper = state.has_chain ? state.hyper_chain : HyperGridPosterior::zero_dim();
    report.theta_marginals = state.theta_registry;
    report.steps = steps;
    for (const auto& s : steps) report.fit_wall_time += s.wall_time;

    if (state_out != nullptr) *state_out = std::move(state);
    return report;
}

}  // namespace

ConsensusReport run_sc(const ModelSpec& spec, const std::vector<DataTable>& data,
                       const PartitionPlan& plan, const RunOptions& options,
                       SequenceState* state_out) {
    return run_sequence(spec, data, plan, options, state_out, false);
}

ConsensusReport run_scp(const ModelSpec& spec, const std::vector<DataTable>& data,
                        const PartitionPlan& plan, const RunOptions& options,
                        SequenceState* state_out) {
    return run_sequence(spec, data, plan, options, state_out, true);
}

ConsensusReport run_full(const ModelSpec& spec, const std::vector<DataTable>& data,
                         const RunOptions& options) {
    PartitionPlan none;
    return run_sc(spec, data, none, options, nullptr);
}

}  // namespace seqcon
