#include <doctest.h>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "seqcon/effects.hpp"
#include "seqcon/errors.hpp"
#include "seqcon/factor.hpp"
#include "seqcon/gaussian.hpp"
#include "seqcon/rng.hpp"

using namespace seqcon;

namespace {

EffectSpec make_ar1(int n, double rho, double tau = 1.0) {
    EffectSpec s;
    s.kind = EffectKind::ar1;
    s.size = n;
    s.hyper["tau"] = HyperBinding{"", tau};
    s.hyper["rho"] = HyperBinding{"", rho};
    return s;
}

EffectSpec make_rw(int order, int n, double tau) {
    EffectSpec s;
    s.kind = order == 1 ? EffectKind::rw1 : EffectKind::rw2;
    s.size = n;
    s.hyper["tau"] = HyperBinding{"", tau};
    return s;
}

}  // namespace

TEST_CASE("iid precision is tau * identity") {
    EffectSpec s;
    s.kind = EffectKind::iid;
    s.size = 3;
    s.hyper["tau"] = HyperBinding{"", 2.0};
    const auto q = build_effect_precision(s, {});
    CHECK(oracle::dense(q.matrix).isApprox(2.0 * Eigen::MatrixXd::Identity(3, 3)));
    CHECK(q.rank_deficiency == 0);
}

TEST_CASE("ar1 with zero autocorrelation is the identity") {
    const auto q = build_effect_precision(make_ar1(3, 0.0), {});
    CHECK(oracle::dense(q.matrix).isApprox(Eigen::MatrixXd::Identity(3, 3)));
}

TEST_CASE("rw2 precision equals D'D for the explicit second-difference operator") {
    const auto q = build_effect_precision(make_rw(2, 5, 1.0), {});
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 5);
    for (int r = 0; r < 3; ++r) {
        d(r, r) = 1.0;
        d(r, r + 1) = -2.0;
        d(r, r + 2) = 1.0;
    }
    CHECK((oracle::dense(q.matrix) - d.transpose() * d).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(q.rank_deficiency == 2);
}

TEST_CASE("effect precision validates its inputs") {
    CHECK_THROWS_AS((void)build_effect_precision(make_ar1(3, 1.5), {}), NumericalError);
    CHECK_THROWS_AS((void)build_effect_precision(make_ar1(3, 0.5, -1.0), {}), NumericalError);
    CHECK_THROWS_AS((void)effect_kind_from_string("car2"), ConfigError);
    EffectSpec bad_grid;
    bad_grid.kind = EffectKind::lattice_matern;
    bad_grid.nx = 1;
    bad_grid.ny = 5;
    bad_grid.hyper["log_range"] = HyperBinding{"", 0.0};
    bad_grid.hyper["log_sd"] = HyperBinding{"", 0.0};
    CHECK_THROWS_AS((void)build_effect_precision(bad_grid, {}), ConfigError);
}

TEST_CASE("rw null spaces: constants (and trends for rw2) are annihilated") {
    const auto q1 = build_effect_precision(make_rw(1, 9, 2.5), {});
    CHECK((q1.matrix * Vector::Ones(9)).cwiseAbs().maxCoeff() < 1e-10);
    const auto q2 = build_effect_precision(make_rw(2, 9, 0.7), {});
    CHECK((q2.matrix * Vector::Ones(9)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((q2.matrix * Vector::LinSpaced(9, 1.0, 9.0)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("ar1 is scaled to unit marginal variance") {
    for (double rho : {0.3, -0.6, 0.9}) {
        const auto q = build_effect_precision(make_ar1(12, rho), {});
        const Eigen::MatrixXd cov = oracle::dense(q.matrix).inverse();
        for (int i = 0; i < 12; ++i) CHECK(cov(i, i) == doctest::Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("kronecker dimension and dense identity") {
    Rng rng(5);
    EffectSpec kron;
    kron.kind = EffectKind::kronecker;
    kron.children.push_back(make_ar1(3, 0.4, 2.0));
    kron.children.push_back(make_ar1(4, -0.3, 0.5));
    const auto q = build_effect_precision(kron, {});
    CHECK(q.dim() == 12);
    const auto qa = build_effect_precision(kron.children[0], {});
    const auto qb = build_effect_precision(kron.children[1], {});
    const Eigen::MatrixXd want = oracle::dense_kronecker(oracle::dense(qa.matrix),
                                                         oracle::dense(qb.matrix));
    CHECK((oracle::dense(q.matrix) - want).cwiseAbs().maxCoeff() < 1e-12);

    // (A (x) B) vec(X) = vec(B X A') with the second index fastest.
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
    Vector vec(12);
    for (int j = 0; j < 3; ++j) vec.segment(4 * j, 4) = x.col(j);
    const Eigen::MatrixXd rhs =
        oracle::dense(qb.matrix) * x * oracle::dense(qa.matrix).transpose();
    Vector want_vec(12);
    for (int j = 0; j < 3; ++j) want_vec.segment(4 * j, 4) = rhs.col(j);
    CHECK((q.matrix * vec - want_vec).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kronecker rank deficiency combines children") {
    EffectSpec kron;
    kron.kind = EffectKind::kronecker;
    kron.children.push_back(make_rw(1, 4, 1.0));
    EffectSpec iid;
    iid.kind = EffectKind::iid;
    iid.size = 3;
    iid.hyper["tau"] = HyperBinding{"", 1.0};
    kron.children.push_back(iid);
    const auto q = build_effect_precision(kron, {});
    CHECK(q.rank_deficiency == 3);  // 4*3 - 3*3
}

TEST_CASE("factorize: log-determinants") {
    SpMat eye(4, 4);
    eye.setIdentity();
    CHECK(log_determinant(eye) == doctest::Approx(0.0));

    SpMat d(2, 2);
    d.insert(0, 0) = 2.0;
    d.insert(1, 1) = 2.0;
    CHECK(log_determinant(d) == doctest::Approx(2.0 * std::log(2.0)));

    // random SPD 50x50 vs dense LU oracle
    Rng rng(11);
    Eigen::MatrixXd m(50, 50);
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 50; ++j) m(i, j) = rng.normal();
    Eigen::MatrixXd spd = m * m.transpose() + 50.0 * Eigen::MatrixXd::Identity(50, 50);
    SpMat sparse_spd = spd.sparseView();
    CHECK(log_determinant(sparse_spd) ==
          doctest::Approx(oracle::dense_log_det(spd)).epsilon(1e-8));
}

TEST_CASE("factorize reports the failing pivot of an indefinite matrix") {
    SpMat q(3, 3);
    q.insert(0, 0) = 1.0;
    q.insert(1, 1) = -2.0;
    q.insert(2, 2) = 1.0;
    try {
        CholeskyFactor f(q);
        CHECK(false);
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("pivot") != std::string::npos);
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
}

TEST_CASE("factorize/build round trip: solve(Q, Q v) = v") {
    const auto q = build_effect_precision(make_ar1(30, 0.7, 2.0), {});
    CholeskyFactor f(q.matrix);
    Rng rng(3);
    Vector v(30);
    for (int i = 0; i < 30; ++i) v[i] = rng.normal();
    CHECK((f.solve(q.matrix * v) - v).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("marginal variances: diagonal and closed-form cases") {
    SparsePrecision d;
    d.matrix.resize(2, 2);
    d.matrix.insert(0, 0) = 4.0;
    d.matrix.insert(1, 1) = 5.0;
    const Vector v = marginal_variances(d);
    CHECK(v[0] == doctest::Approx(0.25));
    CHECK(v[1] == doctest::Approx(0.2));

    SparsePrecision t;  // [[2,-1],[-1,2]] has inverse diag 2/3
    t.matrix.resize(2, 2);
    t.matrix.insert(0, 0) = 2.0;
    t.matrix.insert(1, 1) = 2.0;
    t.matrix.insert(0, 1) = -1.0;
    t.matrix.insert(1, 0) = -1.0;
    const Vector v2 = marginal_variances(t);
    CHECK(v2[0] == doctest::Approx(2.0 / 3.0));
    CHECK(v2[1] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("marginal variances match the dense inverse") {
    SUBCASE("ar1 chain") {
        const auto q = build_effect_precision(make_ar1(20, 0.5), {});
        const Vector v = marginal_variances(q);
        const Eigen::MatrixXd inv = oracle::dense(q.matrix).inverse();
        for (int i = 0; i < 20; ++i) CHECK(v[i] == doctest::Approx(inv(i, i)).epsilon(1e-8));
    }
    SUBCASE("random SPD with fill-in") {
        Rng rng(17);
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(60, 60);
        for (int i = 0; i < 60; ++i) {
            m(i, i) = 6.0 + rng.uniform();
            if (i + 1 < 60) m(i, i + 1) = m(i + 1, i) = rng.normal() * 0.5;
            if (i + 7 < 60) m(i, i + 7) = m(i + 7, i) = rng.normal() * 0.3;
        }
        SparsePrecision q;
        q.matrix = m.sparseView();
        const Vector v = marginal_variances(q);
        const Eigen::MatrixXd inv = m.inverse();
        for (int i = 0; i < 60; ++i) CHECK(v[i] == doctest::Approx(inv(i, i)).epsilon(1e-8));
    }
}

TEST_CASE("sample_gmrf is deterministic and respects moments") {
    const auto q3 = build_effect_precision(make_ar1(3, 0.2), {});
    GaussianDensity d = make_density(Vector::Zero(3), q3);
    CHECK((sample_gmrf(d, 7) - sample_gmrf(d, 7)).cwiseAbs().maxCoeff() == 0.0);

    SparsePrecision tight;
    tight.matrix.resize(2, 2);
    tight.matrix.insert(0, 0) = 1e6;
    tight.matrix.insert(1, 1) = 1e6;
    GaussianDensity near = make_density(Vector::Ones(2), tight);
    const Vector x = sample_gmrf(near, 12);
    CHECK(std::abs(x[0] - 1.0) < 0.01);
    CHECK(std::abs(x[1] - 1.0) < 0.01);

    const auto q = build_effect_precision(make_ar1(4, 0.8), {});
    GaussianDensity ar = make_density(Vector::Zero(4), q);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(4, 4);
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
        const Vector s = sample_gmrf(ar, 100000 + k);
        cov += s * s.transpose();
    }
    cov /= draws;
    const Eigen::MatrixXd truth = oracle::dense(q.matrix).inverse();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(std::abs(cov(i, j) - truth(i, j)) < 0.05 * std::abs(truth(i, j)));
}

TEST_CASE("constrained sampling satisfies the constraints exactly") {
    EffectSpec rw2 = make_rw(2, 8, 1.0);
    auto q = build_effect_precision(rw2, {});
    SpMat jitter(8, 8);
    jitter.setIdentity();
    q.matrix += SpMat(jitter * 1e-6);
    const auto basis = effect_null_basis(rw2);
    REQUIRE(basis.size() == 2);
    const GaussianDensity d = make_density(Vector::Zero(8), q);
    const Vector x = sample_gmrf_constrained(d, basis, Vector::Zero(2), 99);
    for (const auto& b : basis) CHECK(std::abs(b.dot(x)) < 1e-10);
    CHECK(x.cwiseAbs().maxCoeff() > 1e-3);  // not the degenerate zero draw
}

TEST_CASE("triplet file round trip") {
    const auto q = build_effect_precision(make_ar1(6, 0.4, 1.3), {});
    const std::string path = "/tmp/seqcon_test_triplets.txt";
    write_triplets(q.matrix, path);
    const SpMat back = read_triplets(path, 6, 6);
    CHECK((oracle::dense(q.matrix) - oracle::dense(back)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("validate_precision flags asymmetry and bad diagonals") {
    SparsePrecision q;
    q.matrix.resize(2, 2);
    q.matrix.insert(0, 0) = 1.0;
    q.matrix.insert(0, 1) = 0.5;
    q.matrix.insert(1, 0) = 0.4;
    q.matrix.insert(1, 1) = 1.0;
    CHECK_THROWS_AS(validate_precision(q), NumericalError);
}
