#pragma once

#include <Eigen/Sparse>
#include <string>

namespace seqcon {

using SpMat = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;

// Symmetric positive (semi-)definite precision matrix of a GMRF.
// rank_deficiency > 0 marks intrinsic models (RW1: 1, RW2: 2); such matrices
// need constraint handling and jitter before factorization.
struct SparsePrecision {
    SpMat matrix;
    int rank_deficiency = 0;

    int dim() const { return static_cast<int>(matrix.rows()); }
};

// Validates symmetry (1e-12 relative) and strictly positive diagonal.
// Throws NumericalError with the offending index otherwise.
void validate_precision(const SparsePrecision& q);

// Coordinate-triplet text format: "row col value", 0-based, one entry per
// line, '#' comments allowed. Only stored (structurally nonzero) entries are
// written.
void write_triplets(const SpMat& m, const std::string& path);
SpMat read_triplets(const std::string& path, int rows, int cols);

// Dense Kronecker-free product: kron(a, b), b's index fastest.
SpMat sparse_kronecker(const SpMat& a, const SpMat& b);

}  // namespace seqcon
