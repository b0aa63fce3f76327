#include "eloss/pca.hpp"

namespace eloss {

namespace {

void fix_sign(Eigen::VectorXd& axis) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < axis.size(); ++i) {
    if (std::abs(axis[i]) > std::abs(axis[best])) best = i;
  }
  if (axis[best] < 0.0) axis = -axis;
}

GaussianFit1d fit(const Eigen::VectorXd& x) {
  const double n = double(x.size());
  GaussianFit1d g;
  g.mean = x.sum() / n;
  g.stddev = std::sqrt((x.array() - g.mean).square().sum() / n);
  return g;
}

}  // namespace

Pca2Summary pca2_summary(const SampleMatrix& s) {
  if (s.d() < 2) throw DomainError("pca2_summary needs d >= 2, got d = " + std::to_string(s.d()));
  if (s.n() < 3) {
    throw InsufficientSamplesError("pca2_summary needs n >= 3, got n = " + std::to_string(s.n()));
  }
  const double n = double(s.n());
  Eigen::MatrixXd x = s.values();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).sum() / n;
    x.col(j).array() -= mu;
    const double sd = std::sqrt(x.col(j).squaredNorm() / n);
    if (sd > 0.0) x.col(j) /= sd;
  }
  const Eigen::MatrixXd cov = (x.transpose() * x) / n;
  const auto eig = jacobi_eigen<double>(cov);

  Pca2Summary out;
  out.axis1 = eig.vectors.col(0);
  out.axis2 = eig.vectors.col(1);
  fix_sign(out.axis1);
  fix_sign(out.axis2);
  out.fit1 = fit(x * out.axis1);
  out.fit2 = fit(x * out.axis2);
  const double trace = cov.trace();
  const double top = std::max(eig.values[0], 0.0);
  if (trace > 0.0) {
    out.explained1 = std::max(eig.values[0], 0.0) / trace;
    out.explained2 = std::max(eig.values[1], 0.0) / trace;
  }
  out.second_degenerate = !(eig.values[1] > kPcaRankTolerance * top);
  return out;
}

}  // namespace eloss
