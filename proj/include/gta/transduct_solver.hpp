#pragma once

// Block majorize-minimization of
//
//   L(z, mu, sigma2) = -(1/N) sum_i z_i' log p_i
//                      - sum_ij w_ij z_i' z_j
//                      + sum_i [ z_i' log z_i - lambda z_i' log yhat_i ]
//
// p_i is the (unnormalized) shared-diagonal Gaussian density of f_i under each
// class mean. The Laplacian term is linearized at the previous z, which is an
// upper bound whenever W is PSD; the remaining per-row problem is minimized in
// closed form by a softmax. mu and sigma2 have closed-form minimizers given z.

#include "gta/affinity_graph.hpp"
#include "gta/log.hpp"
#include "gta/model_state.hpp"
#include "gta/text_prior.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace gta {

enum class GmmWeightMode {
  kAsWritten,    // clustering term weighted by 1/N
  kUnnormalized  // clustering term weighted by 1
};

struct SolverConfig {
  double lambda = 1.0;
  int max_outer_iters = 25;
  double z_tol = 1e-6;
  int inner_z_iters = 3;
  GmmWeightMode gmm_weight_mode = GmmWeightMode::kAsWritten;
  bool per_class_covariance = false;
  double sigma_floor = kSigmaFloor;
  bool record_snapshots = false;

  void check() const {
    if (!(lambda > 0.0)) throw Error("lambda must be > 0");
    if (!(z_tol > 0.0)) throw Error("z_tol must be > 0");
    if (max_outer_iters < 1) throw Error("max_outer_iters must be >= 1");
    if (inner_z_iters < 1) throw Error("inner_z_iters must be >= 1");
    if (!(sigma_floor > 0.0)) throw Error("sigma_floor must be > 0");
  }

  double clustering_weight(Index n) const {
    return gmm_weight_mode == GmmWeightMode::kAsWritten ? 1.0 / static_cast<double>(n) : 1.0;
  }
};

/// log p[i][j] = -1/2 sum_d [ log sigma2_d + (f_id - mu_jd)^2 / sigma2_d ]
inline Matrix gaussian_log_density(const FeatureMatrix& features, const GmmState& gmm) {
  const Index n = features.size();
  const Index m = gmm.mu.rows();
  Matrix out(n, m);
  if (!gmm.per_class()) {
    const Eigen::ArrayXd inv = gmm.sigma2.array().inverse();
    const double log_det = gmm.sigma2.array().log().sum();
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j)
        out(i, j) = -0.5 * (log_det + ((features.data.row(i) - gmm.mu.row(j)).array().square() *
                                       inv.transpose())
                                          .sum());
    return out;
  }
  for (Index j = 0; j < m; ++j) {
    const Eigen::ArrayXXd inv = gmm.class_sigma2.row(j).array().inverse();
    const double log_det = gmm.class_sigma2.row(j).array().log().sum();
    for (Index i = 0; i < n; ++i)
      out(i, j) = -0.5 * (log_det +
                          ((features.data.row(i) - gmm.mu.row(j)).array().square() * inv).sum());
  }
  return out;
}

/// log yhat, taken from s_bar via log-softmax when available so it never underflows.
inline Matrix log_prior(const TextPrior& prior) {
  if (prior.s_bar.rows() == prior.y_hat.rows() && prior.s_bar.cols() == prior.y_hat.cols()) {
    Matrix out(prior.s_bar.rows(), prior.s_bar.cols());
    for (Index i = 0; i < out.rows(); ++i) {
      const double mx = prior.s_bar.row(i).maxCoeff();
      const double lse = mx + std::log((prior.s_bar.row(i).array() - mx).exp().sum());
      out.row(i) = prior.s_bar.row(i).array() - lse;
    }
    return out;
  }
  return prior.y_hat.array().max(std::numeric_limits<double>::min()).log().matrix();
}

/// Neighbor term sum_j w_ij z_j for every row.
inline Matrix neighbor_sums(const AffinityGraph& graph, const Matrix& z) {
  Matrix out = Matrix::Zero(z.rows(), z.cols());
  for (Index i = 0; i < graph.num_nodes; ++i)
    for (const Edge& e : graph.row(i)) out.row(i) += e.weight * z.row(e.col);
  return out;
}

/// One decoupled pass: every unclamped row is replaced by the minimizer of its
/// surrogate, linearized at `z_old`.
inline Matrix z_update_pass(const Matrix& log_density, const Matrix& log_yhat,
                            const AffinityGraph& graph, const Assignments& z_old,
                            const SolverConfig& cfg) {
  const double c = cfg.clustering_weight(z_old.size());
  const Matrix nbr = neighbor_sums(graph, z_old.z);
  Matrix logits = c * log_density + cfg.lambda * log_yhat + 2.0 * nbr;
  Matrix z = softmax_rows(logits);
  for (Index i = 0; i < z.rows(); ++i)
    if (z_old.clamped(i)) z.row(i) = z_old.z.row(i);
  return z;
}

inline Assignments z_update(const FeatureMatrix& features, const GmmState& gmm,
                            const TextPrior& prior, const AffinityGraph& graph,
                            const Assignments& z_current, const SolverConfig& cfg) {
  const Matrix logp = gaussian_log_density(features, gmm);
  const Matrix logy = log_prior(prior);
  Assignments z = z_current;
  for (int pass = 0; pass < cfg.inner_z_iters; ++pass)
    z.z = z_update_pass(logp, logy, graph, z, cfg);
  return z;
}

/// Closed-form mean and variance given z. A class with zero total
/// responsibility keeps its previous mean (or the global mean without one).
inline GmmState gmm_update(const FeatureMatrix& features, const Matrix& z,
                           const SolverConfig& cfg = {}, const GmmState* previous = nullptr) {
  const Index n = features.size();
  const Index d = features.dim();
  const Index m = z.cols();
  const Matrix& f = features.data;

  GmmState g;
  const Vector mass = z.colwise().sum().transpose();
  g.mu = z.transpose() * f;
  for (Index j = 0; j < m; ++j) {
    if (mass[j] > 0.0) {
      g.mu.row(j) /= mass[j];
      continue;
    }
    log::warn() << "class " << j << " has zero total responsibility; keeping previous mean";
    if (previous != nullptr && previous->mu.rows() == m)
      g.mu.row(j) = previous->mu.row(j);
    else
      g.mu.row(j) = f.colwise().mean();
  }

  g.sigma2 = Vector::Zero(d);
  Matrix class_scatter = Matrix::Zero(m, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) {
      if (z(i, j) == 0.0) continue;
      class_scatter.row(j) += z(i, j) * (f.row(i) - g.mu.row(j)).array().square().matrix();
    }
  g.sigma2 = (class_scatter.colwise().sum() / static_cast<double>(n)).transpose();
  g.sigma2 = g.sigma2.cwiseMax(cfg.sigma_floor);

  if (cfg.per_class_covariance) {
    g.class_sigma2.resize(m, d);
    for (Index j = 0; j < m; ++j) {
      if (mass[j] > 0.0)
        g.class_sigma2.row(j) = (class_scatter.row(j) / mass[j]).cwiseMax(cfg.sigma_floor);
      else if (previous != nullptr && previous->per_class())
        g.class_sigma2.row(j) = previous->class_sigma2.row(j);
      else
        g.class_sigma2.row(j) = g.sigma2.transpose();
    }
  }
  return g;
}

namespace detail {

inline double xlogx_sum(const Matrix& z) {
  double s = 0.0;
  for (Index i = 0; i < z.rows(); ++i)
    for (Index j = 0; j < z.cols(); ++j)
      if (z(i, j) > 0.0) s += z(i, j) * std::log(z(i, j));
  return s;
}

inline double dot_skip_zero(const Matrix& z, const Matrix& logs) {
  double s = 0.0;
  for (Index i = 0; i < z.rows(); ++i)
    for (Index j = 0; j < z.cols(); ++j)
      if (z(i, j) != 0.0) s += z(i, j) * logs(i, j);
  return s;
}

}  // namespace detail

inline double objective_from_logs(const Matrix& z, const Matrix& log_density,
                                  const Matrix& log_yhat, const AffinityGraph& graph,
                                  const SolverConfig& cfg) {
  const double c = cfg.clustering_weight(z.rows());
  double laplacian = 0.0;
  for (Index i = 0; i < graph.num_nodes; ++i)
    for (const Edge& e : graph.row(i)) laplacian += e.weight * z.row(i).dot(z.row(e.col));
  return -c * detail::dot_skip_zero(z, log_density) - laplacian + detail::xlogx_sum(z) -
         cfg.lambda * detail::dot_skip_zero(z, log_yhat);
}

inline double objective(const FeatureMatrix& features, const Matrix& z, const GmmState& gmm,
                        const TextPrior& prior, const AffinityGraph& graph,
                        const SolverConfig& cfg) {
  return objective_from_logs(z, gaussian_log_density(features, gmm), log_prior(prior), graph,
                             cfg);
}

struct SolverSnapshot {
  Matrix z;      // after the z block of this outer iteration
  GmmState gmm;  // after the Gaussian block of this outer iteration
};

struct TransductResult {
  Assignments z;
  GmmState gmm;
  std::vector<double> objective_trace;  // initial state, then after every block update
  std::vector<SolverSnapshot> snapshots;
  int outer_iterations = 0;
  bool converged = false;
};

/// Starts from `init` (or the text prior), clamps labeled rows, then
/// alternates z and Gaussian blocks until z moves less than z_tol.
inline TransductResult transduct(const FeatureMatrix& features, const TextPrior& prior,
                                 const AffinityGraph& graph, const std::optional<Matrix>& init,
                                 const ClampLabels& clamps, const SolverConfig& cfg) {
  cfg.check();
  const Index n = features.size();
  const Index m = prior.y_hat.cols();
  if (prior.y_hat.rows() != n)
    throw Error("text prior has " + std::to_string(prior.y_hat.rows()) + " rows, features have " +
                std::to_string(n));
  if (graph.num_nodes != n) throw Error("affinity graph size does not match features");
  if (init && (init->rows() != n || init->cols() != m))
    throw Error("initial assignments have the wrong shape");

  TransductResult r;
  r.z = make_assignments(init ? *init : prior.y_hat, clamps);
  r.gmm = gmm_update(features, r.z.z, cfg);
  const Matrix logy = log_prior(prior);
  Matrix logp = gaussian_log_density(features, r.gmm);
  r.objective_trace.push_back(objective_from_logs(r.z.z, logp, logy, graph, cfg));

  for (int outer = 0; outer < cfg.max_outer_iters; ++outer) {
    const Matrix before = r.z.z;
    for (int pass = 0; pass < cfg.inner_z_iters; ++pass) {
      r.z.z = z_update_pass(logp, logy, graph, r.z, cfg);
      r.objective_trace.push_back(objective_from_logs(r.z.z, logp, logy, graph, cfg));
    }
    const Matrix z_after = r.z.z;
    r.gmm = gmm_update(features, r.z.z, cfg, &r.gmm);
    logp = gaussian_log_density(features, r.gmm);
    r.objective_trace.push_back(objective_from_logs(r.z.z, logp, logy, graph, cfg));
    ++r.outer_iterations;
    if (cfg.record_snapshots) r.snapshots.push_back({z_after, r.gmm});
    if ((z_after - before).cwiseAbs().maxCoeff() < cfg.z_tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

inline TransductResult transduct(const FeatureMatrix& features, const AttributeBank& bank,
                                 const AffinityGraph& graph, const std::optional<Matrix>& init,
                                 const ClampLabels& clamps, const SolverConfig& cfg,
                                 double temperature = kDefaultTemperature) {
  return transduct(features, text_prior(features, bank, temperature), graph, init, clamps, cfg);
}

}  // namespace gta
