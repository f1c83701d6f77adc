#pragma once

#include <string>

#include "seqcon/sparse.hpp"

namespace seqcon {

enum class Family { gaussian, poisson, gamma, bernoulli, lgcp_lattice };
enum class Link { identity, log, logit };

Family family_from_string(const std::string& s);
Link link_from_string(const std::string& s);
std::string to_string(Family f);
std::string to_string(Link l);

// Allowed pairs: gaussian+identity, poisson+log, gamma+log, bernoulli+logit,
// lgcp_lattice+log.
bool family_link_allowed(Family f, Link l);

// Log-likelihood terms as functions of the linear predictor eta (offset
// already folded into eta for all families).
//   hyper: gaussian -> observation precision; gamma -> shape; others unused.
// Derivatives are with respect to eta. Throws NumericalError on domain
// violations (gamma y <= 0, negative counts, non-finite values).
double loglik(Family f, double y, double eta, double hyper);
double dloglik(Family f, double y, double eta, double hyper);
// Negative second derivative (observation weight in the Newton step); >= 0.
double neg_d2loglik(Family f, double y, double eta, double hyper);

// Poisson lattice approximation of the LGCP likelihood:
//   sum_i [ c_i (eta_i + log area_i) - exp(eta_i) area_i - log(c_i!) ]
double lgcp_lattice_loglik(const std::vector<double>& counts, const Vector& eta,
                           const std::vector<double>& areas);

}  // namespace seqcon
