#pragma once

#include <map>
#include <string>
#include <vector>

#include "seqcon/sparse.hpp"

namespace seqcon {

enum class EffectKind { iid, rw1, rw2, ar1, lattice_matern, kronecker };

EffectKind effect_kind_from_string(const std::string& s);
std::string to_string(EffectKind k);

// One hyperparameter slot of an effect: either bound to a named theta or
// fixed to a literal value (natural scale).
struct HyperBinding {
    std::string theta_name;   // empty when fixed
    double fixed_value = 0.0;
    bool is_fixed() const { return theta_name.empty(); }
};

// Structured random-effect description.
//   iid/rw1/rw2: slot "tau"
//   ar1:         slots "tau", "rho"
//   lattice_matern: slots "log_range", "log_sd"; grid nx x ny, spacing h
//   kronecker:   exactly two children, first child is the slow (outer) index
struct EffectSpec {
    EffectKind kind = EffectKind::iid;
    int size = 0;
    int nx = 0, ny = 0;
    double spacing = 1.0;
    std::map<std::string, HyperBinding> hyper;
    bool sum_to_zero = false;
    std::vector<EffectSpec> children;

    int dim() const;
    // Theta names referenced by this spec (recursing into children).
    std::vector<std::string> hyper_names() const;
    bool intrinsic() const;
};

// tau * R(theta) per kind; theta maps names to natural-scale values
// (tau > 0, rho in (-1,1), log_range / log_sd as logs).
SparsePrecision build_effect_precision(const EffectSpec& spec,
                                       const std::map<std::string, double>& theta);

// Same, plus diagonal jitter for intrinsic kinds and the log-determinant of
// the returned (jittered) matrix. Proper Kronecker products use
// logdet(A (x) B) = nB logdet(A) + nA logdet(B) instead of factorizing the
// product.
std::pair<SparsePrecision, double> build_effect_precision_with_logdet(
    const EffectSpec& spec, const std::map<std::string, double>& theta, double intrinsic_jitter);

// Orthonormal basis of the precision null space (empty for proper kinds);
// used as sum-to-zero style constraint rows.
std::vector<Vector> effect_null_basis(const EffectSpec& spec);

}  // namespace seqcon
