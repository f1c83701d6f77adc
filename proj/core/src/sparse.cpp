#include "seqcon/sparse.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "seqcon/errors.hpp"

namespace seqcon {

void validate_precision(const SparsePrecision& q) {
    const SpMat& m = q.matrix;
    if (m.rows() != m.cols()) throw NumericalError("precision matrix is not square");
    SpMat diff = SpMat(m - SpMat(m.transpose()));
    double max_abs = 0.0;
    for (int k = 0; k < m.outerSize(); ++k)
        for (SpMat::InnerIterator it(m, k); it; ++it)
            max_abs = std::max(max_abs, std::abs(it.value()));
    for (int k = 0; k < diff.outerSize(); ++k) {
        for (SpMat::InnerIterator it(diff, k); it; ++it) {
            if (std::abs(it.value()) > 1e-12 * std::max(1.0, max_abs)) {
                throw NumericalError("precision matrix not symmetric at (" +
                                     std::to_string(it.row()) + "," + std::to_string(it.col()) + ")");
            }
        }
    }
    for (int i = 0; i < m.rows(); ++i) {
        if (m.coeff(i, i) <= 0.0) {
            throw NumericalError("non-positive diagonal entry at index " + std::to_string(i));
        }
    }
}

void write_triplets(const SpMat& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.precision(17);
    for (int k = 0; k < m.outerSize(); ++k)
        for (SpMat::InnerIterator it(m, k); it; ++it)
            out << it.row() << " " << it.col() << " " << it.value() << "\n";
    if (!out) throw IoError("write failed: " + path);
}

SpMat read_triplets(const std::string& path, int rows, int cols) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<Eigen::Triplet<double>> trips;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long r, c;
        double v;
        if (!(ss >> r >> c >> v)) throw IoError(path + ":" + std::to_string(lineno) + ": bad triplet line");
        if (r < 0 || c < 0 || r >= rows || c >= cols)
            throw IoError(path + ":" + std::to_string(lineno) + ": index out of range");
        trips.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
    }
    SpMat m(rows, cols);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

SpMat sparse_kronecker(const SpMat& a, const SpMat& b) {
    const int ar = static_cast<int>(a.rows()), ac = static_cast<int>(a.cols());
    const int br = static_cast<int>(b.rows()), bc = static_cast<int>(b.cols());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(a.nonZeros()) * static_cast<std::size_t>(b.nonZeros()));
    for (int ka = 0; ka < a.outerSize(); ++ka) {
        for (SpMat::InnerIterator ita(a, ka); ita; ++ita) {
            for (int kb = 0; kb < b.outerSize(); ++kb) {
                for (SpMat::InnerIterator itb(b, kb); itb; ++itb) {
                    trips.emplace_back(ita.row() * br + itb.row(),
                                       ita.col() * bc + itb.col(),
                                       ita.value() * itb.value());
                }
            }
        }
    }
    SpMat out(ar * br, ac * bc);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

}  // namespace seqcon
