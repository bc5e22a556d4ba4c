#include "retro/memorization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace retro {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

}  // namespace

// ------------------------------------------------------------ InfluenceModel

std::vector<double> InfluenceModel::loss_grad_at(std::size_t, std::span<const double>) const {
  throw Error(ErrorCode::InvalidArgument, "model provides neither an analytic Hessian nor shifted gradients");
}

std::vector<double> InfluenceModel::current_params() const {
  throw Error(ErrorCode::InvalidArgument, "model does not expose its parameters");
}

Eigen::MatrixXd InfluenceModel::loss_hessian(std::size_t example) const {
  auto theta = current_params();
  const auto n = static_cast<Eigen::Index>(theta.size());
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double saved = theta[j];
    theta[j] = saved + fd_step_;
    const auto up = loss_grad_at(example, theta);
    theta[j] = saved - fd_step_;
    const auto down = loss_grad_at(example, theta);
    theta[j] = saved;
    for (Eigen::Index i = 0; i < n; ++i) h(i, j) = (up[i] - down[i]) / (2.0 * fd_step_);
  }
  return 0.5 * (h + h.transpose());
}

// ------------------------------------------------------------ QuadraticModel

QuadraticModel QuadraticModel::fit(std::vector<double> anchors) {
  if (anchors.empty()) throw Error(ErrorCode::EmptyCorpus, "no anchors");
  const double mean = std::accumulate(anchors.begin(), anchors.end(), 0.0) / static_cast<double>(anchors.size());
  return QuadraticModel(std::move(anchors), mean);
}

// --------------------------------------------------- LogisticRegressionModel

LogisticRegressionModel::LogisticRegressionModel(Eigen::MatrixXd x, std::vector<int> y, double l2, Eigen::VectorXd w,
                                                 Eigen::MatrixXd probes, std::vector<int> probe_labels)
    : x_(std::move(x)), y_(std::move(y)), l2_(l2), w_(std::move(w)), probes_(std::move(probes)),
      probe_labels_(std::move(probe_labels)) {
  if (static_cast<std::size_t>(x_.rows()) != y_.size() || x_.cols() != w_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "logistic regression shapes");
  }
  if (static_cast<std::size_t>(probes_.rows()) != probe_labels_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "probe shapes");
  }
}

double LogisticRegressionModel::prob(const Eigen::VectorXd& w, const Eigen::VectorXd& x, int y) {
  const double s = sigmoid(w.dot(x));
  return y == 1 ? s : 1.0 - s;
}

Eigen::VectorXd LogisticRegressionModel::fit(const Eigen::MatrixXd& x, const std::vector<int>& y, double l2,
                                             double tol) {
  const auto n = x.rows();
  const auto d = x.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd g = l2 * w;
    Eigen::MatrixXd h = l2 * Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = sigmoid(w.dot(x.row(i)));
      g += (s - y[i]) * x.row(i).transpose() / static_cast<double>(n);
      h += s * (1.0 - s) * x.row(i).transpose() * x.row(i) / static_cast<double>(n);
    }
    if (g.norm() < tol) break;
    w -= h.ldlt().solve(g);
  }
  return w;
}

std::vector<double> LogisticRegressionModel::loss_grad(std::size_t i) const {
  const Eigen::VectorXd xi = x_.row(static_cast<Eigen::Index>(i)).transpose();
  const Eigen::VectorXd g = (sigmoid(w_.dot(xi)) - y_[i]) * xi + l2_ * w_;
  return {g.data(), g.data() + g.size()};
}

Eigen::MatrixXd LogisticRegressionModel::loss_hessian(std::size_t i) const {
  const Eigen::VectorXd xi = x_.row(static_cast<Eigen::Index>(i)).transpose();
  const double s = sigmoid(w_.dot(xi));
  return s * (1.0 - s) * xi * xi.transpose() + l2_ * Eigen::MatrixXd::Identity(w_.size(), w_.size());
}

std::vector<double> LogisticRegressionModel::prob_grad(InfluenceTarget::Kind kind, std::size_t index) const {
  const bool self = kind == InfluenceTarget::Kind::Self;
  const auto& rows = self ? x_ : probes_;
  const int y = self ? y_.at(index) : probe_labels_.at(index);
  const Eigen::VectorXd xi = rows.row(static_cast<Eigen::Index>(index)).transpose();
  const double s = sigmoid(w_.dot(xi));
  const Eigen::VectorXd g = (y == 1 ? 1.0 : -1.0) * s * (1.0 - s) * xi;
  return {g.data(), g.data() + g.size()};
}

// ------------------------------------------------------ EncoderInfluenceModel

EncoderInfluenceModel::EncoderInfluenceModel(ToyEncoder encoder, LabelSpace labels, std::vector<Item> train,
                                             std::vector<Item> probes, double l2)
    : encoder_(std::move(encoder)), labels_(std::move(labels)), train_(std::move(train)), probes_(std::move(probes)),
      l2_(l2) {
  if (!(l2 >= 0.0)) throw Error(ErrorCode::InvalidArgument, "l2 must be nonnegative");
}

std::vector<double> EncoderInfluenceModel::loss_grad(std::size_t i) const { return loss_grad_at(i, encoder_.params()); }

std::vector<double> EncoderInfluenceModel::loss_grad_at(std::size_t i, std::span<const double> params) const {
  ToyEncoder shifted = encoder_;
  std::copy(params.begin(), params.end(), shifted.params().begin());
  const auto& item = train_.at(i);
  auto g = shifted.backward(item.templated, item.fused ? &*item.fused : nullptr, labels_, item.label, item.weight);
  if (l2_ > 0.0) {
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += l2_ * params[j];
  }
  return g;
}

std::vector<double> EncoderInfluenceModel::current_params() const {
  return {encoder_.params().begin(), encoder_.params().end()};
}

std::vector<double> EncoderInfluenceModel::prob_grad(InfluenceTarget::Kind kind, std::size_t index) const {
  const auto& item = kind == InfluenceTarget::Kind::Self ? train_.at(index) : probes_.at(index);
  // dP/dtheta = -P * dCE/dtheta with CE = -log P.
  double ce = 0.0;
  auto g = encoder_.backward(item.templated, item.fused ? &*item.fused : nullptr, labels_, item.label, 1.0, &ce);
  const double p = std::exp(-ce);
  for (double& x : g) x *= -p;
  return g;
}

// ------------------------------------------------------------------ scoring

InfluenceResult memorization_scores(const InfluenceModel& model, const InfluenceOptions& options) {
  const std::size_t n = model.num_examples();
  const auto p = static_cast<Eigen::Index>(model.num_params());
  if (n == 0) throw Error(ErrorCode::EmptyCorpus, "no training examples");

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
  std::vector<Eigen::VectorXd> grads(n);
  InfluenceResult out;
  for (std::size_t i = 0; i < n; ++i) {
    h += model.loss_hessian(i);
    const auto g = model.loss_grad(i);
    grads[i] = as_vector(g);
    out.grad_norms.push_back(grads[i].norm());
  }
  h /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  std::optional<double> chosen;
  for (double delta : options.damping_sweep) {
    const double dlo = lo + delta, dhi = hi + delta;
    const double cond = dlo > 0.0 ? dhi / dlo : std::numeric_limits<double>::infinity();
    if (cond < options.max_condition) {
      chosen = delta;
      out.condition = cond;
      break;
    }
  }
  if (!chosen) {
    throw Error(ErrorCode::SingularHessian,
                "no damping in the sweep brings the Hessian condition below the limit (eigenvalues " +
                    std::to_string(lo) + " .. " + std::to_string(hi) + ")");
  }
  out.damping = *chosen;
  out.eigen_min = lo + *chosen;
  out.eigen_max = hi + *chosen;

  Eigen::LLT<Eigen::MatrixXd> llt(h + *chosen * Eigen::MatrixXd::Identity(p, p));
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularHessian, "Cholesky factorization failed");

  out.scores.resize(n);
  if (options.target.kind == InfluenceTarget::Kind::Probe) {
    const auto gp = model.prob_grad(InfluenceTarget::Kind::Probe, options.target.probe);
    const Eigen::VectorXd v = llt.solve(as_vector(gp));
    for (std::size_t i = 0; i < n; ++i) out.scores[i] = -v.dot(grads[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto gp = model.prob_grad(InfluenceTarget::Kind::Self, i);
      out.scores[i] = -as_vector(gp).dot(llt.solve(grads[i]));
    }
  }
  return out;
}

InfluenceReport decile_report(const InfluenceResult& result, std::span<const ExampleId> ids) {
  const std::size_t n = result.scores.size();
  if (ids.size() != n) throw Error(ErrorCode::DimensionMismatch, "one id per score required");
  if (n < 10) throw Error(ErrorCode::InvalidArgument, "decile report needs at least 10 examples");
  InfluenceReport report;
  report.ids.assign(ids.begin(), ids.end());
  report.result = result;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = result.scores[a], sb = result.scores[b];
    return sa > sb || (sa == sb && ids[a] < ids[b]);
  });
  const std::size_t tenth = n / 10;
  for (std::size_t i = 0; i < tenth; ++i) {
    report.top_decile.push_back(ids[order[i]]);
    report.bottom_decile.push_back(ids[order[n - tenth + i]]);
  }
  report.mean_score = std::accumulate(result.scores.begin(), result.scores.end(), 0.0) / static_cast<double>(n);
  const auto [mn, mx] = std::minmax_element(result.scores.begin(), result.scores.end());
  report.degenerate = *mn == *mx;
  return report;
}

nlohmann::json InfluenceReport::to_json() const {
  return {{"ids", ids},
          {"scores", result.scores},
          {"grad_norms", result.grad_norms},
          {"top_decile", top_decile},
          {"bottom_decile", bottom_decile},
          {"mean_score", mean_score},
          {"degenerate", degenerate},
          {"damping", result.damping},
          {"condition", result.condition},
          {"eigen_min", result.eigen_min},
          {"eigen_max", result.eigen_max}};
}

}  // namespace retro
