#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqcon/effects.hpp"
#include "seqcon/likelihood.hpp"
#include "seqcon/table.hpp"

namespace seqcon {

// 1-D prior density on the internal (unconstrained) theta scale.
struct HyperPrior {
    enum class Type { gaussian, loggamma, flat };
    Type type = Type::flat;
    double a = 0.0;  // gaussian: mean;  loggamma: shape
    double b = 1.0;  // gaussian: precision; loggamma: rate
    double log_density(double theta) const;
};

// Mapping between internal theta (unconstrained) and the natural slot scale.
enum class ThetaTransform { log_precision, ar1_rho, identity };
double theta_to_natural(ThetaTransform t, double theta);
double natural_to_theta(ThetaTransform t, double natural);

struct PredictorTerm {
    enum class Kind { intercept, covariate, effect, share };
    Kind kind = Kind::intercept;
    std::string name;    // fixed-effect / beta / effect / share source name
    std::string column;  // covariate column, or index column for effect/share
};

struct LikelihoodBlock {
    Family family = Family::gaussian;
    Link link = Link::identity;
    std::string response;
    std::string offset;  // empty if none; log cell area for lgcp_lattice
    HyperBinding hyper;  // gaussian precision / gamma shape
    std::vector<PredictorTerm> predictor;
};

struct FixedEffect {
    std::string name;
    double prior_mean = 0.0;
    double prior_precision = 0.001;
};

struct ShareLink {
    std::string source_effect;
    int target_block = -1;
    std::string alpha_name;
    std::optional<double> fixed_alpha;                // set: linear scaled term
    std::map<std::string, HyperBinding> copy_hyper;   // estimated alpha: copy-effect hypers
    bool estimated() const { return !fixed_alpha.has_value(); }
};

struct PartitionPlan {
    enum class Mode { none, by_likelihood_group, by_row_blocks, by_time_blocks };
    Mode mode = Mode::none;
    std::vector<std::vector<int>> groups;
    std::string time_column;
};

struct ModelSpec {
    std::map<std::string, EffectSpec> effects;
    std::vector<FixedEffect> fixed;
    std::map<std::string, HyperPrior> hyper_priors;
    std::vector<LikelihoodBlock> blocks;
    std::vector<ShareLink> shares;
    PartitionPlan partition;

    const FixedEffect* find_fixed(const std::string& name) const;
    const ShareLink* find_share(const std::string& source, int block) const;
};

// Parse / serialize the JSON configuration document (sections: effects,
// fixed, hyper_priors, blocks, shares, partition). parse validates fully.
ModelSpec parse_model_config(const std::string& text);
ModelSpec parse_model_file(const std::string& path);
std::string serialize_model(const ModelSpec& spec);
void validate_model(const ModelSpec& spec);

// Theta names used by the spec (sorted), with their transforms; conflicting
// slot bindings for one name are a config error.
std::map<std::string, ThetaTransform> theta_transforms(const ModelSpec& spec);

// Name of the local copy effect materialized for an estimated-alpha share.
std::string share_copy_name(const ShareLink& share);

// Per-partition bookkeeping produced by partition_dataset.
struct EffectMeta {
    bool shared = false;      // appears in >= 2 partitions
    int slice_offset = 0;     // node offset into the global effect vector
    int global_dim = 0;       // dim of the unsliced effect
};

struct Partition {
    int label = 0;  // 1-based position in the sequence
    ModelSpec spec;
    std::vector<DataTable> data;
    std::map<std::string, EffectMeta> effect_meta;
};

// Splits (spec, data) into ordered sub-models. data holds one table per
// likelihood block, in block order.
std::vector<Partition> partition_dataset(const ModelSpec& spec,
                                         const std::vector<DataTable>& data,
                                         const PartitionPlan& plan);

}  // namespace seqcon
