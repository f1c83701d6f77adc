#include "seqcon/factor.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "seqcon/errors.hpp"
#include "seqcon/rng.hpp"

namespace seqcon {

namespace {

// On LLT failure, rerun as LDLT and report the first non-positive pivot.
[[noreturn]] void report_failing_pivot(const SpMat& q) {
    Eigen::SimplicialLDLT<SpMat> ldlt(q);
    int pivot = -1;
    if (ldlt.info() == Eigen::Success) {
        const Vector d = ldlt.vectorD();
        for (int i = 0; i < d.size(); ++i) {
            if (!(d[i] > 0.0)) {
                pivot = ldlt.permutationPinv().indices()[i];
                break;
            }
        }
    }
    throw NumericalError("matrix not positive definite (failing pivot index " +
                         std::to_string(pivot) + ")");
}

}  // namespace

CholeskyFactor::CholeskyFactor(const SpMat& q) : n_(static_cast<int>(q.rows())) {
    llt_ = std::make_shared<Eigen::SimplicialLLT<SpMat>>();
    llt_->compute(q);
    if (llt_->info() != Eigen::Success) report_failing_pivot(q);
    const SpMat& l = llt_->matrixL();
    double acc = 0.0;
    for (int j = 0; j < l.outerSize(); ++j) {
        const double piv = l.coeff(j, j);
        if (!(piv > 0.0)) report_failing_pivot(q);
        acc += std::log(piv);
    }
    log_det_ = 2.0 * acc;
}

Vector CholeskyFactor::solve(const Vector& rhs) const { return llt_->solve(rhs); }

Vector CholeskyFactor::sample(const Vector& mean, Rng& rng) const {
    Vector z(n_);
    for (int i = 0; i < n_; ++i) z[i] = rng.normal();
    // Solve L^T w = z, then undo the permutation: cov(P^T w) = Q^{-1}.
    const SpMat& l = llt_->matrixL();
    Vector w = l.transpose().triangularView<Eigen::Upper>().solve(z);
    return mean + llt_->permutationPinv() * w;
}

Vector CholeskyFactor::inverse_diagonal() const {
    // Takahashi recursions: with B = P Q P^T = L L^T and S = B^{-1} restricted
    // to the symmetric pattern of L + L^T,
    //   S_jj = 1/L_jj^2 - (1/L_jj) sum_{k>j} L_kj S_kj
    //   S_ij = -(1/L_jj) sum_{k>j} L_kj S_ki          (i > j)
    // computed for j = n-1 .. 0, rows of each column processed bottom-up.
    const SpMat l = llt_->matrixL();
    SpMat s = SpMat(l.selfadjointView<Eigen::Lower>());
    s.makeCompressed();
    for (int k = 0; k < s.outerSize(); ++k)
        for (SpMat::InnerIterator it(s, k); it; ++it) it.valueRef() = 0.0;

    const int* lp = l.outerIndexPtr();
    const int* li = l.innerIndexPtr();
    const double* lx = l.valuePtr();
    const int* sp = s.outerIndexPtr();
    const int* si = s.innerIndexPtr();
    double* sx = s.valuePtr();

    // Both L and S columns are sorted by row, so the inner products run as
    // two-pointer merges over the symmetric pattern.
    auto find_in_col = [&](int col, int row) -> double* {
        int lo = sp[col], hi = sp[col + 1];
        while (lo < hi) {
            const int mid = (lo + hi) / 2;
            if (si[mid] < row)
                lo = mid + 1;
            else
                hi = mid;
        }
        return (lo < sp[col + 1] && si[lo] == row) ? &sx[lo] : nullptr;
    };

    for (int j = n_ - 1; j >= 0; --j) {
        const double ljj = lx[lp[j]];
        // rows of column j of L in descending order (diagonal stored first).
        for (int p = lp[j + 1] - 1; p >= lp[j]; --p) {
            const int i = li[p];
            double acc = 0.0;
            int q = lp[j] + 1;         // L column j, rows k > j
            int r = sp[i];             // S column i
            const int qe = lp[j + 1], re = sp[i + 1];
            while (q < qe && r < re) {
                if (li[q] < si[r]) {
                    ++q;
                } else if (li[q] > si[r]) {
                    ++r;
                } else {
                    acc += lx[q] * sx[r];
                    ++q;
                    ++r;
                }
            }
            double value;
            if (i == j) {
                value = 1.0 / (ljj * ljj) - acc / ljj;
            } else {
                value = -acc / ljj;
            }
            *find_in_col(j, i) = value;
            if (i != j) *find_in_col(i, j) = value;
        }
    }

    Vector diag_perm(n_);
    for (int i = 0; i < n_; ++i) diag_perm[i] = s.coeff(i, i);
    // B = P Q P^T means (Q^{-1})_{ii} = S_{p(i) p(i)} with p = permutationP.
    const auto& perm = llt_->permutationP().indices();
    Vector out(n_);
    for (int i = 0; i < n_; ++i) out[i] = diag_perm[perm[i]];
    return out;
}

}  // namespace seqcon
