#pragma once

#include <Eigen/Dense>

namespace axs::detail {

// Mean about the first element: exact for constant data, where the naive sum
// can drift by an ulp and leave a spurious nonzero residual.
template <typename V>
double shifted_mean(const V& v) {
  if (v.size() == 0) return 0.0;
  const double x0 = v[0];
  double s = 0.0;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(v.size()); ++i) s += v[i] - x0;
  return x0 + s / static_cast<double>(v.size());
}

template <typename M>
Eigen::RowVectorXd column_means(const M& m) {
  Eigen::RowVectorXd out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const Eigen::VectorXd c = m.col(j);
    out(j) = shifted_mean(c);
  }
  return out;
}

}  // namespace axs::detail
