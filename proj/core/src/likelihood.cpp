#include "seqcon/likelihood.hpp"

#include <cmath>

#include "seqcon/errors.hpp"

namespace seqcon {

Family family_from_string(const std::string& s) {
    if (s == "gaussian") return Family::gaussian;
    if (s == "poisson") return Family::poisson;
    if (s == "gamma") return Family::gamma;
    if (s == "bernoulli") return Family::bernoulli;
    if (s == "lgcp_lattice") return Family::lgcp_lattice;
    throw ConfigError("unknown family: " + s);
}

Link link_from_string(const std::string& s) {
    if (s == "identity") return Link::identity;
    if (s == "log") return Link::log;
    if (s == "logit") return Link::logit;
    throw ConfigError("unknown link: " + s);
}

std::string to_string(Family f) {
    switch (f) {
        case Family::gaussian: return "gaussian";
        case Family::poisson: return "poisson";
        case Family::gamma: return "gamma";
        case Family::bernoulli: return "bernoulli";
        case Family::lgcp_lattice: return "lgcp_lattice";
    }
    return "?";
}

std::string to_string(Link l) {
    switch (l) {
        case Link::identity: return "identity";
        case Link::log: return "log";
        case Link::logit: return "logit";
    }
    return "?";
}

bool family_link_allowed(Family f, Link l) {
    switch (f) {
        case Family::gaussian: return l == Link::identity;
        case Family::poisson: return l == Link::log;
        case Family::gamma: return l == Link::log;
        case Family::bernoulli: return l == Link::logit;
        case Family::lgcp_lattice: return l == Link::log;
    }
    return false;
}

namespace {

void check_count(Family f, double y) {
    if (y < 0.0 || y != std::floor(y))
        throw NumericalError(to_string(f) + " response must be a non-negative count, got " +
                             std::to_string(y));
}

}  // namespace

double loglik(Family f, double y, double eta, double hyper) {
    switch (f) {
        case Family::gaussian: {
            const double r = y - eta;
            return 0.5 * std::log(hyper / (2.0 * M_PI)) - 0.5 * hyper * r * r;
        }
        case Family::poisson:
        case Family::lgcp_lattice: {
            check_count(f, y);
            return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
        }
        case Family::gamma: {
            if (!(y > 0.0))
                throw NumericalError("gamma family requires y > 0, got " + std::to_string(y));
            const double a = hyper;
            return a * std::log(a) - std::lgamma(a) + (a - 1.0) * std::log(y) - a * eta -
                   a * y * std::exp(-eta);
        }
        case Family::bernoulli: {
            if (y != 0.0 && y != 1.0)
                throw NumericalError("bernoulli response must be 0 or 1, got " + std::to_string(y));
            // y*eta - log(1 + e^eta), computed stably.
            const double m = std::max(eta, 0.0);
            return y * eta - (m + std::log(std::exp(-m) + std::exp(eta - m)));
        }
    }
    return 0.0;
}

double dloglik(Family f, double y, double eta, double hyper) {
    switch (f) {
        case Family::gaussian: return hyper * (y - eta);
        case Family::poisson:
        case Family::lgcp_lattice: return y - std::exp(eta);
        case Family::gamma: return hyper * (y * std::exp(-eta) - 1.0);
        case Family::bernoulli: return y - 1.0 / (1.0 + std::exp(-eta));
    }
    return 0.0;
}

double neg_d2loglik(Family f, double y, double eta, double hyper) {
    switch (f) {
        case Family::gaussian: return hyper;
        case Family::poisson:
        case Family::lgcp_lattice: return std::exp(eta);
        case Family::gamma: return hyper * y * std::exp(-eta);
        case Family::bernoulli: {
            const double p = 1.0 / (1.0 + std::exp(-eta));
            return p * (1.0 - p);
        }
    }
    return 0.0;
}

double lgcp_lattice_loglik(const std::vector<double>& counts, const Vector& eta,
                           const std::vector<double>& areas) {
    if (counts.size() != static_cast<std::size_t>(eta.size()) || counts.size() != areas.size())
        throw NumericalError("lgcp_lattice_loglik: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (!(areas[i] > 0.0)) throw NumericalError("lgcp cell area must be positive");
        check_count(Family::lgcp_lattice, counts[i]);
        total += counts[i] * (eta[i] + std::log(areas[i])) - std::exp(eta[i]) * areas[i] -
                 std::lgamma(counts[i] + 1.0);
    }
    return total;
}

}  // namespace seqcon
