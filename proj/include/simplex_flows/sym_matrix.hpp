#pragma once

#include "simplex_flows/types.hpp"

#include <cmath>
#include <utility>

namespace sflow {

/// Dense symmetric matrix. Construction checks symmetry (1e-12 relative to the
/// largest entry) and then stores the exactly symmetrized average.
template <typename Scalar = double> class SymMatrix {
public:
  explicit SymMatrix(Mat<Scalar> m) {
    if (m.rows() != m.cols())
      throw NotSymmetric("SymMatrix: matrix is not square");
    if (m.size() > 0) {
      const Scalar scale = std::max(Scalar(1), m.cwiseAbs().maxCoeff());
      const Scalar asym = (m - m.transpose()).cwiseAbs().maxCoeff();
      if (!(asym <= Scalar(1e-12) * scale))
        throw NotSymmetric("SymMatrix: asymmetry " + std::to_string(static_cast<double>(asym)));
    }
    m_ = Scalar(0.5) * (m + m.transpose());
  }

  static SymMatrix identity(Index n) { return SymMatrix(Mat<Scalar>::Identity(n, n)); }

  Index dim() const { return m_.rows(); }
  const Mat<Scalar> &matrix() const { return m_; }
  operator const Mat<Scalar> &() const { return m_; }
  Scalar operator()(Index i, Index j) const { return m_(i, j); }

private:
  Mat<Scalar> m_;
};

using SymMatrixd = SymMatrix<double>;

} // namespace sflow
