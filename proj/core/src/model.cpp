#include "seqcon/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "seqcon/errors.hpp"

namespace seqcon {

using nlohmann::json;
using nlohmann::ordered_json;

double HyperPrior::log_density(double theta) const {
    switch (type) {
        case Type::flat: return 0.0;
        case Type::gaussian: return -0.5 * b * (theta - a) * (theta - a);
        case Type::loggamma:
            // tau = exp(theta) ~ Gamma(a, b); density in theta includes the
            // Jacobian: a*theta - b*exp(theta) + const.
            return a * theta - b * std::exp(theta);
    }
    return 0.0;
}

double theta_to_natural(ThetaTransform t, double theta) {
    switch (t) {
        case ThetaTransform::log_precision: return std::exp(theta);
        case ThetaTransform::ar1_rho: {
            const double e = std::exp(theta);
            return (e - 1.0) / (e + 1.0);
        }
        case ThetaTransform::identity: return theta;
    }
    return theta;
}

double natural_to_theta(ThetaTransform t, double natural) {
    switch (t) {
        case ThetaTransform::log_precision: return std::log(natural);
        case ThetaTransform::ar1_rho: return std::log((1.0 + natural) / (1.0 - natural));
        case ThetaTransform::identity: return natural;
    }
    return natural;
}

const FixedEffect* ModelSpec::find_fixed(const std::string& name) const {
    for (const auto& f : fixed)
        if (f.name == name) return &f;
    return nullptr;
}

const ShareLink* ModelSpec::find_share(const std::string& source, int block) const {
    for (const auto& s : shares)
        if (s.source_effect == source && s.target_block == block) return &s;
    return nullptr;
}

std::string share_copy_name(const ShareLink& share) {
    return share.source_effect + "@" + share.alpha_name;
}

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config error at " + where + ": " + what);
}

HyperBinding parse_binding(const json& v, const std::string& where) {
    HyperBinding b;
    if (v.is_string()) {
        b.theta_name = v.get<std::string>();
        if (b.theta_name.empty()) fail(where, "empty theta name");
    } else if (v.is_number()) {
        b.fixed_value = v.get<double>();
    } else {
        fail(where, "hyper binding must be a theta name or a fixed number");
    }
    return b;
}

json binding_to_json(const HyperBinding& b) {
    if (b.is_fixed()) return b.fixed_value;
    return b.theta_name;
}

EffectSpec parse_effect(const json& e, const std::string& where) {
    EffectSpec spec;
    if (!e.contains("kind")) fail(where, "effect missing 'kind'");
    spec.kind = effect_kind_from_string(e.at("kind").get<std::string>());
    spec.size = e.value("size", 0);
    spec.nx = e.value("nx", 0);
    spec.ny = e.value("ny", 0);
    spec.spacing = e.value("spacing", 1.0);
    if (e.contains("constraints")) spec.sum_to_zero = e.at("constraints").value("sum_to_zero", false);
    if (e.contains("hyper")) {
        for (const auto& [slot, v] : e.at("hyper").items())
            spec.hyper[slot] = parse_binding(v, where + ".hyper." + slot);
    }
    if (e.contains("children")) {
        int i = 0;
        for (const auto& child : e.at("children"))
            spec.children.push_back(parse_effect(child, where + ".children[" + std::to_string(i++) + "]"));
    }
    switch (spec.kind) {
        case EffectKind::kronecker:
            if (spec.children.size() != 2) fail(where, "kronecker carries exactly two child specs");
            break;
        case EffectKind::lattice_matern:
            if (spec.nx < 2 || spec.ny < 2) fail(where, "lattice_matern needs nx, ny >= 2");
            break;
        default:
            if (spec.size < 1) fail(where, "effect needs positive size");
    }
    // Intrinsic effects default to their standard constraints.
    if (spec.intrinsic() && !e.contains("constraints")) spec.sum_to_zero = true;
    return spec;
}

json effect_to_json(const EffectSpec& spec) {
    json e;
    e["kind"] = to_string(spec.kind);
    if (spec.kind == EffectKind::lattice_matern) {
        e["nx"] = spec.nx;
        e["ny"] = spec.ny;
        e["spacing"] = spec.spacing;
    } else if (spec.kind != EffectKind::kronecker) {
        e["size"] = spec.size;
    }
    if (!spec.hyper.empty()) {
        json h;
        for (const auto& [slot, b] : spec.hyper) h[slot] = binding_to_json(b);
        e["hyper"] = h;
    }
    e["constraints"] = {{"sum_to_zero", spec.sum_to_zero}};
    if (!spec.children.empty()) {
        json kids = json::array();
        for (const auto& c : spec.children) kids.push_back(effect_to_json(c));
        e["children"] = kids;
    }
    return e;
}

// Reject duplicate keys within one JSON object (nlohmann keeps the last one
// silently; a duplicated theta prior must be reported instead).
void check_duplicate_keys(const std::string& text) {
    std::vector<std::set<std::string>> stack;
    bool in_string = false, escaped = false;
    std::string current;
    std::string last_string;
    std::size_t line = 1;
    char prev_nonspace = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n') ++line;
        if (in_string) {
            if (escaped) {
                escaped = false;
                current += c;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
                last_string = current;
            } else {
                current += c;
            }
            continue;
        }
        switch (c) {
            case '"':
                in_string = true;
                current.clear();
                break;
            case '{':
                stack.emplace_back();
                break;
            case '}':
                if (!stack.empty()) stack.pop_back();
                break;
            case ':':
                if (!stack.empty() && prev_nonspace == '"') {
                    if (!stack.back().insert(last_string).second)
                        throw ConfigError("config error at line " + std::to_string(line) +
                                          ": duplicate key '" + last_string + "'");
                }
                break;
            default:
                break;
        }
        if (!std::isspace(static_cast<unsigned char>(c))) prev_nonspace = c;
    }
}

PartitionPlan parse_partition(const json& p) {
    PartitionPlan plan;
    const std::string mode = p.value("mode", "");
    if (mode == "by_likelihood_group")
        plan.mode = PartitionPlan::Mode::by_likelihood_group;
    else if (mode == "by_row_blocks")
        plan.mode = PartitionPlan::Mode::by_row_blocks;
    else if (mode == "by_time_blocks")
        plan.mode = PartitionPlan::Mode::by_time_blocks;
    else
        fail("partition.mode", "unknown mode '" + mode + "'");
    plan.time_column = p.value("time_column", "time");
    if (!p.contains("groups")) fail("partition", "missing 'groups'");
    for (const auto& g : p.at("groups")) plan.groups.push_back(g.get<std::vector<int>>());
    return plan;
}

}  // namespace

ModelSpec parse_model_config(const std::string& text) {
    check_duplicate_keys(text);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ModelSpec spec;
    if (doc.contains("effects")) {
        for (const auto& [name, e] : doc.at("effects").items())
            spec.effects[name] = parse_effect(e, "effects." + name);
    }
    if (doc.contains("fixed")) {
        for (const auto& f : doc.at("fixed")) {
            FixedEffect fe;
            fe.name = f.at("name").get<std::string>();
            fe.prior_mean = f.value("mean", 0.0);
            fe.prior_precision = f.value("precision", 0.001);
            if (!(fe.prior_precision > 0.0)) fail("fixed." + fe.name, "prior precision must be > 0");
            spec.fixed.push_back(fe);
        }
    }
    if (doc.contains("hyper_priors")) {
        for (const auto& [name, h] : doc.at("hyper_priors").items()) {
            HyperPrior prior;
            const std::string type = h.value("type", "flat");
            if (type == "gaussian") {
                prior.type = HyperPrior::Type::gaussian;
                prior.a = h.at("mean").get<double>();
                prior.b = h.at("precision").get<double>();
            } else if (type == "loggamma") {
                prior.type = HyperPrior::Type::loggamma;
                prior.a = h.at("shape").get<double>();
                prior.b = h.at("rate").get<double>();
            } else if (type == "flat") {
                prior.type = HyperPrior::Type::flat;
            } else {
                fail("hyper_priors." + name, "unknown prior type '" + type + "'");
            }
            spec.hyper_priors[name] = prior;
        }
    }
    if (doc.contains("blocks")) {
        int bi = 0;
        for (const auto& b : doc.at("blocks")) {
            const std::string where = "blocks[" + std::to_string(bi) + "]";
            LikelihoodBlock block;
            block.family = family_from_string(b.at("family").get<std::string>());
            block.link = link_from_string(b.at("link").get<std::string>());
            block.response = b.at("response").get<std::string>();
            block.offset = b.value("offset", "");
            if (b.contains("hyper")) {
                const auto& h = b.at("hyper");
                if (h.contains("tau")) block.hyper = parse_binding(h.at("tau"), where + ".hyper.tau");
            }
            for (const auto& t : b.at("predictor")) {
                PredictorTerm term;
                if (t.contains("intercept")) {
                    term.kind = PredictorTerm::Kind::intercept;
                    term.name = t.at("intercept").get<std::string>();
                } else if (t.contains("covariate")) {
                    term.kind = PredictorTerm::Kind::covariate;
                    term.column = t.at("covariate").get<std::string>();
                    term.name = t.at("beta").get<std::string>();
                } else if (t.contains("effect")) {
                    term.kind = PredictorTerm::Kind::effect;
                    term.name = t.at("effect").get<std::string>();
                    term.column = t.at("index").get<std::string>();
                } else if (t.contains("share")) {
                    term.kind = PredictorTerm::Kind::share;
                    term.name = t.at("share").get<std::string>();
                    term.column = t.at("index").get<std::string>();
                } else {
                    fail(where + ".predictor", "unknown term kind");
                }
                block.predictor.push_back(term);
            }
            spec.blocks.push_back(block);
            ++bi;
        }
    }
    if (doc.contains("shares")) {
        int si = 0;
        for (const auto& s : doc.at("shares")) {
            const std::string where = "shares[" + std::to_string(si++) + "]";
            ShareLink link;
            link.source_effect = s.at("source_effect").get<std::string>();
            link.target_block = s.at("target_block").get<int>();
            link.alpha_name = s.at("alpha_name").get<std::string>();
            if (s.contains("fixed_alpha")) link.fixed_alpha = s.at("fixed_alpha").get<double>();
            if (s.contains("copy_hyper")) {
                for (const auto& [slot, v] : s.at("copy_hyper").items())
                    link.copy_hyper[slot] = parse_binding(v, where + ".copy_hyper." + slot);
            }
            if (link.fixed_alpha.has_value() && !link.copy_hyper.empty())
                fail(where, "alpha is either fixed or estimated, never both");
            spec.shares.push_back(link);
        }
    }
    if (doc.contains("partition")) spec.partition = parse_partition(doc.at("partition"));
    validate_model(spec);
    return spec;
}

ModelSpec parse_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_model_config(ss.str());
}

std::string serialize_model(const ModelSpec& spec) {
    json doc;
    if (!spec.effects.empty()) {
        json effects;
        for (const auto& [name, e] : spec.effects) effects[name] = effect_to_json(e);
        doc["effects"] = effects;
    }
    if (!spec.fixed.empty()) {
        json fixed = json::array();
        for (const auto& f : spec.fixed)
            fixed.push_back({{"name", f.name}, {"mean", f.prior_mean}, {"precision", f.prior_precision}});
        doc["fixed"] = fixed;
    }
    if (!spec.hyper_priors.empty()) {
        json hp;
        for (const auto& [name, h] : spec.hyper_priors) {
            json one;
            switch (h.type) {
                case HyperPrior::Type::flat: one = {{"type", "flat"}}; break;
                case HyperPrior::Type::gaussian:
                    one = {{"type", "gaussian"}, {"mean", h.a}, {"precision", h.b}};
                    break;
                case HyperPrior::Type::loggamma:
                    one = {{"type", "loggamma"}, {"shape", h.a}, {"rate", h.b}};
                    break;
            }
            hp[name] = one;
        }
        doc["hyper_priors"] = hp;
    }
    json blocks = json::array();
    for (const auto& b : spec.blocks) {
        json jb;
        jb["family"] = to_string(b.family);
        jb["link"] = to_string(b.link);
        jb["response"] = b.response;
        if (!b.offset.empty()) jb["offset"] = b.offset;
        if (!b.hyper.is_fixed() || b.hyper.fixed_value != 0.0)
            jb["hyper"] = {{"tau", binding_to_json(b.hyper)}};
        json terms = json::array();
        for (const auto& t : b.predictor) {
            switch (t.kind) {
                case PredictorTerm::Kind::intercept: terms.push_back({{"intercept", t.name}}); break;
                case PredictorTerm::Kind::covariate:
                    terms.push_back({{"covariate", t.column}, {"beta", t.name}});
                    break;
                case PredictorTerm::Kind::effect:
                    terms.push_back({{"effect", t.name}, {"index", t.column}});
                    break;
                case PredictorTerm::Kind::share:
                    terms.push_back({{"share", t.name}, {"index", t.column}});
                    break;
            }
        }
        jb["predictor"] = terms;
        blocks.push_back(jb);
    }
    doc["blocks"] = blocks;
    if (!spec.shares.empty()) {
        json shares = json::array();
        for (const auto& s : spec.shares) {
            json js;
            js["source_effect"] = s.source_effect;
            js["target_block"] = s.target_block;
            js["alpha_name"] = s.alpha_name;
            if (s.fixed_alpha.has_value()) js["fixed_alpha"] = *s.fixed_alpha;
            if (!s.copy_hyper.empty()) {
                json ch;
                for (const auto& [slot, b] : s.copy_hyper) ch[slot] = binding_to_json(b);
                js["copy_hyper"] = ch;
            }
            shares.push_back(js);
        }
        doc["shares"] = shares;
    }
    if (spec.partition.mode != PartitionPlan::Mode::none) {
        json p;
        switch (spec.partition.mode) {
            case PartitionPlan::Mode::by_likelihood_group: p["mode"] = "by_likelihood_group"; break;
            case PartitionPlan::Mode::by_row_blocks: p["mode"] = "by_row_blocks"; break;
            case PartitionPlan::Mode::by_time_blocks: p["mode"] = "by_time_blocks"; break;
            case PartitionPlan::Mode::none: break;
        }
        if (spec.partition.mode == PartitionPlan::Mode::by_time_blocks)
            p["time_column"] = spec.partition.time_column;
        p["groups"] = spec.partition.groups;
        doc["partition"] = p;
    }
    return doc.dump(2);
}

namespace {

void collect_theta_slots(const EffectSpec& e, const std::string& where,
                         std::map<std::string, ThetaTransform>& out) {
    auto add = [&](const std::string& slot, const HyperBinding& b) {
        if (b.is_fixed()) return;
        ThetaTransform t = ThetaTransform::identity;
        if (slot == "tau")
            t = ThetaTransform::log_precision;
        else if (slot == "rho")
            t = ThetaTransform::ar1_rho;
        auto [it, inserted] = out.emplace(b.theta_name, t);
        if (!inserted && it->second != t)
            throw ConfigError("config error at " + where + ": theta '" + b.theta_name +
                              "' bound to slots with incompatible scales");
    };
    for (const auto& [slot, b] : e.hyper) add(slot, b);
    for (const auto& c : e.children) collect_theta_slots(c, where, out);
}

}  // namespace

std::map<std::string, ThetaTransform> theta_transforms(const ModelSpec& spec) {
    std::map<std::string, ThetaTransform> out;
    for (const auto& [name, e] : spec.effects) collect_theta_slots(e, "effects." + name, out);
    int bi = 0;
    for (const auto& b : spec.blocks) {
        if (!b.hyper.is_fixed()) {
            auto [it, inserted] = out.emplace(b.hyper.theta_name, ThetaTransform::log_precision);
            if (!inserted && it->second != ThetaTransform::log_precision)
                throw ConfigError("config error at blocks[" + std::to_string(bi) + "]: theta '" +
                                  b.hyper.theta_name + "' bound to slots with incompatible scales");
        }
        ++bi;
    }
    for (const auto& s : spec.shares) {
        for (const auto& [slot, b] : s.copy_hyper) {
            if (b.is_fixed()) continue;
            ThetaTransform t = slot == "tau" ? ThetaTransform::log_precision
                               : slot == "rho" ? ThetaTransform::ar1_rho
                                               : ThetaTransform::identity;
            auto [it, inserted] = out.emplace(b.theta_name, t);
            if (!inserted && it->second != t)
                throw ConfigError("config error at shares: theta '" + b.theta_name +
                                  "' bound to slots with incompatible scales");
        }
    }
    return out;
}

void validate_model(const ModelSpec& spec) {
    if (spec.blocks.empty()) throw ConfigError("config error: model requires at least one block");
    int bi = 0;
    for (const auto& b : spec.blocks) {
        const std::string where = "blocks[" + std::to_string(bi) + "]";
        if (!family_link_allowed(b.family, b.link))
            fail(where, "family/link pair " + to_string(b.family) + "+" + to_string(b.link) +
                            " not supported");
        if ((b.family == Family::gaussian || b.family == Family::gamma) &&
            b.hyper.is_fixed() && b.hyper.fixed_value <= 0.0)
            fail(where, to_string(b.family) + " likelihood needs a positive 'tau' hyper");
        for (const auto& t : b.predictor) {
            switch (t.kind) {
                case PredictorTerm::Kind::intercept:
                case PredictorTerm::Kind::covariate:
                    if (spec.find_fixed(t.name) == nullptr)
                        fail(where, "predictor references undeclared fixed effect '" + t.name + "'");
                    break;
                case PredictorTerm::Kind::effect:
                    if (spec.effects.find(t.name) == spec.effects.end())
                        fail(where, "predictor references undeclared effect '" + t.name + "'");
                    break;
                case PredictorTerm::Kind::share: {
                    if (spec.effects.find(t.name) == spec.effects.end())
                        fail(where, "share references undeclared effect '" + t.name + "'");
                    if (spec.find_share(t.name, bi) == nullptr)
                        fail(where, "share term for '" + t.name + "' has no matching entry in 'shares'");
                    break;
                }
            }
        }
        ++bi;
    }
    for (const auto& s : spec.shares) {
        if (spec.effects.find(s.source_effect) == spec.effects.end())
            fail("shares", "source effect '" + s.source_effect + "' not declared");
        if (s.target_block < 0 || s.target_block >= static_cast<int>(spec.blocks.size()))
            fail("shares", "target_block out of range");
        if (s.alpha_name.empty()) fail("shares", "alpha_name required");
    }
    // Every estimated theta must have exactly one declared prior.
    const auto transforms = theta_transforms(spec);
    for (const auto& [name, t] : transforms) {
        (void)t;
        if (spec.hyper_priors.find(name) == spec.hyper_priors.end())
            throw ConfigError("config error at hyper_priors: no prior declared for theta '" + name + "'");
    }
    if (static_cast<int>(transforms.size()) > 5)
        throw ConfigError("config error: theta dimension " + std::to_string(transforms.size()) +
                          " exceeds the supported maximum of 5");
}

namespace {

// Restrict spec to a subset of blocks; keep only touched effects/fixed/priors.
ModelSpec restrict_spec(const ModelSpec& spec, const std::vector<int>& block_ids) {
    ModelSpec out;
    std::set<std::string> used_effects, used_fixed;
    for (int bi : block_ids) {
        const auto& b = spec.blocks.at(bi);
        out.blocks.push_back(b);
        for (const auto& t : b.predictor) {
            switch (t.kind) {
                case PredictorTerm::Kind::intercept:
                case PredictorTerm::Kind::covariate: used_fixed.insert(t.name); break;
                case PredictorTerm::Kind::effect:
                case PredictorTerm::Kind::share: used_effects.insert(t.name); break;
            }
        }
    }
    for (const auto& name : used_effects) out.effects[name] = spec.effects.at(name);
    for (const auto& f : spec.fixed)
        if (used_fixed.count(f.name)) out.fixed.push_back(f);
    // Shares retained when their target block is present; retarget indices.
    for (std::size_t local = 0; local < block_ids.size(); ++local) {
        for (const auto& s : spec.shares) {
            if (s.target_block == block_ids[local]) {
                ShareLink copy = s;
                copy.target_block = static_cast<int>(local);
                out.shares.push_back(copy);
            }
        }
    }
    // Priors for every theta still referenced.
    for (const auto& [name, t] : theta_transforms(out)) {
        (void)t;
        auto it = spec.hyper_priors.find(name);
        if (it != spec.hyper_priors.end()) out.hyper_priors[name] = it->second;
    }
    return out;
}

std::vector<std::string> effect_names_of(const ModelSpec& spec) {
    std::vector<std::string> names;
    for (const auto& [name, e] : spec.effects) {
        (void)e;
        names.push_back(name);
    }
    return names;
}

}  // namespace

std::vector<Partition> partition_dataset(const ModelSpec& spec,
                                         const std::vector<DataTable>& data,
                                         const PartitionPlan& plan) {
    if (data.size() != spec.blocks.size())
        throw ConfigError("expected one data table per likelihood block (" +
                          std::to_string(spec.blocks.size()) + "), got " +
                          std::to_string(data.size()));
    if (plan.groups.empty()) throw ConfigError("partition plan has no groups");

    std::vector<Partition> parts;

    if (plan.mode == PartitionPlan::Mode::by_likelihood_group) {
        std::set<int> seen;
        for (const auto& g : plan.groups) {
            for (int b : g) {
                if (b < 0 || b >= static_cast<int>(spec.blocks.size()))
                    throw ConfigError("partition group references block " + std::to_string(b) +
                                      " out of range");
                if (!seen.insert(b).second)
                    throw ConfigError("partition groups overlap at block " + std::to_string(b));
            }
        }
        if (seen.size() != spec.blocks.size())
            throw ConfigError("partition groups must cover every likelihood block");
        int label = 1;
        for (const auto& g : plan.groups) {
            if (g.empty()) throw ConfigError("empty partition group");
            Partition p;
            p.label = label++;
            p.spec = restrict_spec(spec, g);
            for (int b : g) p.data.push_back(data.at(b));
            for (const auto& name : effect_names_of(p.spec)) {
                EffectMeta meta;
                meta.global_dim = p.spec.effects.at(name).dim();
                p.effect_meta[name] = meta;
            }
            parts.push_back(std::move(p));
        }
    } else if (plan.mode == PartitionPlan::Mode::by_row_blocks) {
        // Groups hold global row ids over the block-concatenated row order.
        std::size_t total_rows = 0;
        for (const auto& t : data) total_rows += t.rows();
        std::vector<int> owner(total_rows, -1);
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
            for (int r : plan.groups[g]) {
                if (r < 0 || static_cast<std::size_t>(r) >= total_rows)
                    throw ConfigError("partition row id " + std::to_string(r) + " out of range");
                if (owner[r] != -1)
                    throw ConfigError("partition groups overlap at row " + std::to_string(r));
                owner[r] = static_cast<int>(g);
            }
        }
        for (std::size_t r = 0; r < total_rows; ++r)
            if (owner[r] == -1)
                throw ConfigError("partition groups do not cover row " + std::to_string(r));
        int label = 1;
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
            if (plan.groups[g].empty()) throw ConfigError("empty partition group");
            // Split this group's rows by owning block.
            std::vector<std::vector<std::size_t>> by_block(spec.blocks.size());
            for (int rid : plan.groups[g]) {
                std::size_t r = static_cast<std::size_t>(rid);
                for (std::size_t b = 0; b < data.size(); ++b) {
                    if (r < data[b].rows()) {
                        by_block[b].push_back(r);
                        break;
                    }
                    r -= data[b].rows();
                }
            }
            std::vector<int> block_ids;
            for (std::size_t b = 0; b < by_block.size(); ++b)
                if (!by_block[b].empty()) block_ids.push_back(static_cast<int>(b));
            Partition p;
            p.label = label++;
            p.spec = restrict_spec(spec, block_ids);
            for (int b : block_ids) p.data.push_back(data[b].select_rows(by_block[b]));
            for (const auto& name : effect_names_of(p.spec)) {
                EffectMeta meta;
                meta.global_dim = p.spec.effects.at(name).dim();
                p.effect_meta[name] = meta;
            }
            parts.push_back(std::move(p));
        }
    } else if (plan.mode == PartitionPlan::Mode::by_time_blocks) {
        // Contiguous time-slice groups; time-indexed latent blocks are sliced.
        int n_time = 0;
        std::vector<int> owner;
        for (const auto& g : plan.groups)
            for (int t : g) n_time = std::max(n_time, t + 1);
        owner.assign(n_time, -1);
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
            const auto& grp = plan.groups[g];
            if (grp.empty()) throw ConfigError("empty partition group");
            for (std::size_t i = 0; i < grp.size(); ++i) {
                if (i > 0 && grp[i] != grp[i - 1] + 1)
                    throw ConfigError("by_time_blocks groups must be contiguous");
                if (grp[i] < 0 || grp[i] >= n_time || owner[grp[i]] != -1)
                    throw ConfigError("by_time_blocks groups overlap or leave gaps");
                owner[grp[i]] = static_cast<int>(g);
            }
        }
        for (int t = 0; t < n_time; ++t)
            if (owner[t] == -1)
                throw ConfigError("by_time_blocks groups do not cover time index " + std::to_string(t));

        int label = 1;
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
            const int t0 = plan.groups[g].front();
            const int len = static_cast<int>(plan.groups[g].size());
            // Select rows whose time value falls in this window.
            std::vector<std::vector<std::size_t>> by_block(spec.blocks.size());
            for (std::size_t b = 0; b < data.size(); ++b) {
                const auto& tc = data[b].column(plan.time_column);
                for (std::size_t r = 0; r < data[b].rows(); ++r) {
                    const int t = static_cast<int>(tc[r]);
                    if (t < 0 || t >= n_time)
                        throw ConfigError("row time index " + std::to_string(t) +
                                          " outside the partition plan");
                    if (owner[t] == static_cast<int>(g)) by_block[b].push_back(r);
                }
            }
            std::vector<int> block_ids;
            for (std::size_t b = 0; b < by_block.size(); ++b)
                if (!by_block[b].empty()) block_ids.push_back(static_cast<int>(b));
            if (block_ids.empty()) throw ConfigError("empty partition (no rows in time window)");
            Partition p;
            p.label = label++;
            p.spec = restrict_spec(spec, block_ids);
            for (int b : block_ids) p.data.push_back(data[b].select_rows(by_block[b]));

            for (auto& [name, espec] : p.spec.effects) {
                EffectMeta meta;
                meta.global_dim = espec.dim();
                if (espec.kind == EffectKind::kronecker && espec.children[0].dim() == n_time) {
                    auto& tchild = espec.children[0];
                    if (tchild.kind != EffectKind::ar1 && tchild.kind != EffectKind::iid)
                        throw ConfigError("effect '" + name +
                                          "' is time-indexed but not sliceable (needs ar1 or iid "
                                          "time component)");
                    meta.slice_offset = t0 * espec.children[1].dim();
                    tchild.size = len;
                } else if (espec.kind != EffectKind::kronecker && espec.dim() == n_time &&
                           (espec.kind == EffectKind::ar1 || espec.kind == EffectKind::iid)) {
                    meta.slice_offset = t0;
                    espec.size = len;
                } else if (espec.dim() == n_time) {
                    throw ConfigError("effect '" + name +
                                      "' is time-indexed but not sliceable (needs ar1 or iid)");
                }
                p.effect_meta[name] = meta;
            }
            parts.push_back(std::move(p));
        }
    } else {
        throw ConfigError("partition plan has no mode");
    }

    // Shared bookkeeping: an effect appearing whole in >= 2 partitions is
    // pooled; sliced appearances hold disjoint nodes and stay local.
    std::map<std::string, int> appearances;
    for (const auto& p : parts)
        for (const auto& [name, meta] : p.effect_meta)
            if (p.spec.effects.at(name).dim() == meta.global_dim) appearances[name] += 1;
    for (auto& p : parts)
        for (auto& [name, meta] : p.effect_meta)
            meta.shared = appearances[name] >= 2 && p.spec.effects.at(name).dim() == meta.global_dim;

    return parts;
}

}  // namespace seqcon
