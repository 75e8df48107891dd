#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cashomon/space.hpp"

namespace cashomon::gp {

// Hyperparameters of one class block: Matern-5/2 with one lengthscale per
// encoded dimension (ARD), signal variance, homoscedastic noise variance.
struct ClassKernelParams {
  double output_variance = 1.0;
  Eigen::VectorXd lengthscales;
  double noise_variance = 1e-2;

  void validate(int expected_dim) const;
};

struct KernelParams {
  std::vector<ClassKernelParams> classes;

  static KernelParams defaults(const CashSpace& space);
  void validate(const CashSpace& space) const;
};

double matern52(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const ClassKernelParams& k);

// Zero across classes, matern52 of the class block otherwise.
double block_kernel(const ConfigPoint& x, const ConfigPoint& y, const KernelParams& params);

struct PosteriorValue {
  double mean = 0.0;
  double variance = 0.0;
};

struct SurrogateConfig {
  // Fit on standardized objective values (zero mean, unit variance over all
  // observations) and de-standardize predictions. Off means the latent and
  // raw scales coincide, the setting of the fixed-kernel theory tests.
  bool standardize = true;
  double jitter_rel = 1e-8;  // added to the factored diagonal, times output_variance
  int fit_restarts = 5;
  int fit_max_evals = 70;    // marginal-likelihood evaluations per restart
};

// Posterior state over a combined space. The block-diagonal kernel makes
// class blocks exactly independent (cross-class posterior covariance is
// identically zero), so each class keeps its own Cholesky factor.
class Surrogate {
 public:
  Surrogate(const CashSpace& space, KernelParams params, SurrogateConfig config = {});

  void update(const ConfigPoint& pt, double value);
  // Per-class maximum-likelihood refit; classes with fewer than 2
  // observations keep their current parameters. Deterministic for a seed.
  // restarts <= 0 uses the configured count. The first start is always the
  // current parameter vector, so restarts == 1 is a warm refit.
  void fit_hyperparams(std::uint64_t seed, int restarts = 0);

  PosteriorValue posterior(const ConfigPoint& q) const;         // raw objective scale
  PosteriorValue posterior_latent(const ConfigPoint& q) const;  // standardized scale

  // Variance at target after a hypothetical evaluation at cand, using the
  // current kernel; value independent. Raw objective scale. Cross-class
  // pairs return the target's current variance unchanged.
  double lookahead_variance(const ConfigPoint& cand, const ConfigPoint& target) const;

  // Batched posterior for all candidates of one class; enc_cols holds one
  // encoded candidate per column.
  struct ClassBatch {
    Eigen::VectorXd mean_raw;
    Eigen::VectorXd var_raw;
    Eigen::VectorXd var_latent;
    Eigen::MatrixXd v;        // n_obs x n_cand back-solved cross terms
    Eigen::MatrixXd enc;      // copy of the candidate encodings
    double noise_latent = 0.0;
    double output_variance = 1.0;
  };
  ClassBatch batch_posterior(std::size_t class_index, const Eigen::MatrixXd& enc_cols) const;
  // Latent posterior covariance between candidates i and j of one batch.
  double pair_cov_latent(std::size_t class_index, const ClassBatch& batch, int i, int j) const;
  // Latent posterior covariance matrix between two index subsets of one
  // batch, rows x cols. Bulk form of pair_cov_latent for acquisition loops.
  Eigen::MatrixXd cross_cov_latent(std::size_t class_index, const ClassBatch& batch,
                                   const std::vector<int>& rows,
                                   const std::vector<int>& cols) const;
  // Latent lookahead variance at target j given a hypothetical evaluation at
  // candidate i (same batch, same class).
  double lookahead_var_latent(std::size_t class_index, const ClassBatch& batch, int i, int j) const;
  // Denominator of the lookahead reduction for batch candidate i: posterior
  // variance plus noise plus the stabilization term, latent scale.
  double lookahead_denom_latent(const ClassBatch& batch, int i) const;

  const KernelParams& kernel() const { return params_; }
  const SurrogateConfig& config() const { return config_; }
  void set_kernel(KernelParams params);
  std::size_t num_observations() const { return observed_points_.size(); }
  std::size_t class_observations(std::size_t class_index) const;
  double value_mean() const { return mean_; }
  double value_scale() const { return scale_; }
  const std::vector<double>& observed_values() const { return observed_values_; }
  // Times the lookahead denominator hit its numerical floor and the
  // reduction was skipped.
  std::size_t lookahead_floor_hits() const { return lookahead_floor_hits_; }

 private:
  struct ClassData {
    Eigen::MatrixXd x;                    // d x n encodings
    Eigen::VectorXd y;                    // raw values
    std::vector<Eigen::MatrixXd> sqdiff;  // per-dim squared differences, n x n
    Eigen::MatrixXd l;                    // lower Cholesky of K + noise + jitter
    Eigen::VectorXd z;                    // standardized values
    Eigen::VectorXd alpha;                // (L L^T)^{-1} z
    int n = 0;
  };

  void refresh_standardization();
  void rebuild_class(std::size_t m);
  void append_to_factor(std::size_t m, const Eigen::VectorXd& enc);
  Eigen::MatrixXd build_kernel_matrix(const ClassData& cd, const ClassKernelParams& kp) const;

  std::vector<int> class_dims_;
  KernelParams params_;
  SurrogateConfig config_;
  std::vector<ClassData> classes_;
  std::vector<ConfigPoint> observed_points_;
  std::vector<double> observed_values_;
  double mean_ = 0.0;
  double scale_ = 1.0;
  mutable std::size_t lookahead_floor_hits_ = 0;
};

}  // namespace cashomon::gp
