#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace retro::testing {

struct LogisticData {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

inline LogisticData random_logistic_data(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd truth(static_cast<Eigen::Index>(d));
  for (auto& w : truth) w = normal(rng);
  LogisticData data;
  data.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) data.x(i, j) = normal(rng);
    const double p = 1.0 / (1.0 + std::exp(-data.x.row(i).dot(truth)));
    data.y.push_back(u(rng) < p ? 1 : 0);
  }
  return data;
}

// Minimizes mean_i [CE_i + (l2/2)|w|^2] over the rows not equal to `skip`
// with Newton steps and step halving, to gradient norm below 1e-12.
inline Eigen::VectorXd retrain_logistic(const LogisticData& data, double l2, long skip) {
  const Eigen::Index d = data.x.cols();
  auto objective = [&](const Eigen::VectorXd& w, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    double total = 0.0;
    std::size_t used = 0;
    if (grad) grad->setZero(d);
    if (hess) hess->setZero(d, d);
    for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
      if (i == skip) continue;
      ++used;
      const Eigen::VectorXd xi = data.x.row(i).transpose();
      const double z = xi.dot(w);
      const double s = 1.0 / (1.0 + std::exp(-z));
      const int y = data.y[static_cast<std::size_t>(i)];
      total += y == 1 ? std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      if (grad) *grad += (s - y) * xi;
      if (hess) *hess += s * (1.0 - s) * xi * xi.transpose();
    }
    const double n = static_cast<double>(used);
    if (grad) *grad = *grad / n + l2 * w;
    if (hess) *hess = *hess / n + l2 * Eigen::MatrixXd::Identity(d, d);
    return total / n + 0.5 * l2 * w.squaredNorm();
  };
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd g(d);
  Eigen::MatrixXd h(d, d);
  double f = objective(w, &g, &h);
  for (int it = 0; it < 100 && g.norm() > 1e-12; ++it) {
    const Eigen::VectorXd step = h.llt().solve(g);
    double t = 1.0;
    Eigen::VectorXd trial = w - step;
    while (objective(trial, nullptr, nullptr) > f && t > 1e-8) {
      t *= 0.5;
      trial = w - t * step;
    }
    w = trial;
    f = objective(w, &g, &h);
  }
  return w;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace retro::testing
