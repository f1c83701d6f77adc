#pragma once

// Test-only oracles, kept independent of the library implementation paths
// they are used to check: dense linear algebra routes, quadrature, golden
// section search, and Monte Carlo helpers.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "seqcon/sparse.hpp"

namespace oracle {

inline Eigen::MatrixXd dense(const seqcon::SpMat& m) { return Eigen::MatrixXd(m); }

inline double dense_log_det(const Eigen::MatrixXd& m) {
    return m.partialPivLu().matrixLU().diagonal().array().abs().log().sum();
}

inline Eigen::MatrixXd dense_kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

// Posterior of x ~ N(mu0, Q0^{-1}) with data y = A x + noise, noise
// precision diag(w): the conjugate normal-equations route.
struct DensePosterior {
    Eigen::MatrixXd precision;
    Eigen::VectorXd mean;
};
inline DensePosterior conjugate_gaussian(const Eigen::MatrixXd& q0, const Eigen::VectorXd& mu0,
                                         const Eigen::MatrixXd& a, const Eigen::VectorXd& w,
                                         const Eigen::VectorXd& y) {
    DensePosterior out;
    out.precision = q0 + a.transpose() * w.asDiagonal() * a;
    out.mean = out.precision.ldlt().solve(q0 * mu0 + a.transpose() * (w.asDiagonal() * y));
    return out;
}

// log N(y; mean, cov) for the marginal-likelihood oracle.
inline double gaussian_log_density(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                                   const Eigen::MatrixXd& cov) {
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    double logdet = 0.0;
    for (int i = 0; i < cov.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const Eigen::VectorXd r = y - mean;
    return -0.5 * (y.size() * std::log(2.0 * M_PI) + logdet + r.dot(llt.solve(r)));
}

// Golden-section maximizer for smooth unimodal 1-D objectives, polished by
// a few finite-difference Newton steps (plain golden section stalls at the
// sqrt(machine-eps) noise floor near the optimum).
inline double golden_max(const std::function<double(double)>& f, double lo, double hi) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > 1e-8) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    double x = 0.5 * (a + b);
    const double h = 1e-4;
    for (int it = 0; it < 4; ++it) {
        const double fp = (f(x + h) - f(x - h)) / (2.0 * h);
        const double fpp = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        if (fpp >= 0.0) break;
        x -= fp / fpp;
    }
    return x;
}

// Simpson quadrature on a uniform grid.
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int n) {
    if (n % 2 == 1) ++n;
    const double h = (hi - lo) / n;
    double acc = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// Moments of the product density prod_j N(x; mu_j, 1/tau_j) by quadrature.
struct Moments {
    double mean, var;
};
inline Moments gaussian_product_moments(const std::vector<double>& mu,
                                        const std::vector<double>& tau) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t j = 0; j < mu.size(); ++j) {
        lo = std::min(lo, mu[j] - 12.0 / std::sqrt(tau[j]));
        hi = std::max(hi, mu[j] + 12.0 / std::sqrt(tau[j]));
    }
    auto dens = [&](double x) {
        double ld = 0.0;
        for (std::size_t j = 0; j < mu.size(); ++j) ld += -0.5 * tau[j] * (x - mu[j]) * (x - mu[j]);
        return std::exp(ld);
    };
    const double z = simpson(dens, lo, hi, 20000);
    const double m = simpson([&](double x) { return x * dens(x); }, lo, hi, 20000) / z;
    const double v =
        simpson([&](double x) { return (x - m) * (x - m) * dens(x); }, lo, hi, 20000) / z;
    return {m, v};
}

// Correlated Gaussian-ratio Monte Carlo (mean, variance of num/den).
inline Moments ratio_mc(double mu_num, double tau_num, double mu_den, double tau_den, double rho,
                        std::size_t draws, unsigned seed) {
    std::mt19937_64 engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double s_num = 1.0 / std::sqrt(tau_num), s_den = 1.0 / std::sqrt(tau_den);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        const double z1 = gauss(engine), z2 = gauss(engine);
        const double x = mu_num + s_num * z1;
        const double y = mu_den + s_den * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
        const double r = x / y;
        sum += r;
        sumsq += r * r;
    }
    const double mean = sum / draws;
    return {mean, sumsq / draws - mean * mean};
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double am = a.mean(), bm = b.mean();
    double cn = 0, ca = 0, cb = 0;
    for (int i = 0; i < a.size(); ++i) {
        cn += (a[i] - am) * (b[i] - bm);
        ca += (a[i] - am) * (a[i] - am);
        cb += (b[i] - bm) * (b[i] - bm);
    }
    return cn / std::sqrt(ca * cb);
}

}  // namespace oracle
