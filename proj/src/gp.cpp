#include "cashomon/gp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>

#include "cashomon/rng.hpp"

namespace cashomon::gp {

namespace {

constexpr double kSqrt5 = 2.23606797749978969;

double matern52_of_r2(double r2, double output_variance) {
  double r = std::sqrt(std::max(r2, 0.0));
  return output_variance * (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * std::exp(-kSqrt5 * r);
}

double scaled_sq_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                      const Eigen::VectorXd& ls) {
  double r2 = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double d = (a[i] - b[i]) / ls[i];
    r2 += d * d;
  }
  return r2;
}

// Nelder-Mead on a box in log-parameter space. Vertices are clamped into the
// box before every evaluation, so the returned point always lies inside.
struct NelderMead {
  Eigen::VectorXd lo, hi;
  int max_evals = 70;

  Eigen::VectorXd clamp(Eigen::VectorXd x) const {
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
    return x;
  }

  std::pair<Eigen::VectorXd, double> minimize(
      const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& start) {
    const int d = static_cast<int>(start.size());
    int evals = 0;
    auto eval = [&](const Eigen::VectorXd& x) {
      ++evals;
      return f(clamp(x));
    };
    std::vector<Eigen::VectorXd> xs;
    std::vector<double> fs;
    xs.push_back(clamp(start));
    fs.push_back(eval(xs[0]));
    for (int i = 0; i < d; ++i) {
      Eigen::VectorXd v = xs[0];
      v[i] += 0.5 * ((hi[i] - v[i] >= v[i] - lo[i]) ? 1.0 : -1.0);
      xs.push_back(clamp(v));
      fs.push_back(eval(xs.back()));
    }
    auto order = [&]() {
      std::vector<int> idx(xs.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
      std::vector<Eigen::VectorXd> x2;
      std::vector<double> f2;
      for (int i : idx) {
        x2.push_back(xs[i]);
        f2.push_back(fs[i]);
      }
      xs = std::move(x2);
      fs = std::move(f2);
    };
    order();
    while (evals < max_evals) {
      if (fs.back() - fs.front() < 1e-9) break;
      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < d; ++i) centroid += xs[static_cast<std::size_t>(i)];
      centroid /= d;
      Eigen::VectorXd xr = centroid + (centroid - xs.back());
      double fr = eval(xr);
      if (fr < fs.front()) {
        Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs.back());
        double fe = eval(xe);
        if (fe < fr) {
          xs.back() = clamp(xe);
          fs.back() = fe;
        } else {
          xs.back() = clamp(xr);
          fs.back() = fr;
        }
      } else if (fr < fs[fs.size() - 2]) {
        xs.back() = clamp(xr);
        fs.back() = fr;
      } else {
        Eigen::VectorXd xc = centroid + 0.5 * (xs.back() - centroid);
        double fc = eval(xc);
        if (fc < fs.back()) {
          xs.back() = clamp(xc);
          fs.back() = fc;
        } else {
          for (std::size_t i = 1; i < xs.size(); ++i) {
            if (evals >= max_evals) break;
            Eigen::VectorXd shrunk = clamp(xs.front() + 0.5 * (xs[i] - xs.front()));
            double fshrunk = eval(shrunk);
            xs[i] = std::move(shrunk);
            fs[i] = fshrunk;
          }
        }
      }
      order();
    }
    return {xs.front(), fs.front()};
  }
};

}  // namespace

void ClassKernelParams::validate(int expected_dim) const {
  if (!(output_variance > 0.0)) throw std::invalid_argument("output variance must be positive");
  if (!(noise_variance >= 0.0)) throw std::invalid_argument("noise variance must be nonnegative");
  if (lengthscales.size() != expected_dim)
    throw std::invalid_argument("lengthscale count does not match encoded dimension");
  for (Eigen::Index i = 0; i < lengthscales.size(); ++i)
    if (!(lengthscales[i] > 0.0)) throw std::invalid_argument("lengthscales must be positive");
}

KernelParams KernelParams::defaults(const CashSpace& space) {
  KernelParams out;
  for (const auto& cls : space.classes) {
    ClassKernelParams k;
    k.output_variance = 1.0;
    k.lengthscales = Eigen::VectorXd::Constant(cls.encoded_dim(), 0.25);
    k.noise_variance = 1e-2;
    out.classes.push_back(std::move(k));
  }
  return out;
}

void KernelParams::validate(const CashSpace& space) const {
  if (classes.size() != space.classes.size())
    throw std::invalid_argument("kernel parameter count does not match class count");
  for (std::size_t m = 0; m < classes.size(); ++m)
    classes[m].validate(space.classes[m].encoded_dim());
}

double matern52(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const ClassKernelParams& k) {
  if (a.size() != b.size() || a.size() != k.lengthscales.size())
    throw std::invalid_argument("matern52 dimension mismatch");
  return matern52_of_r2(scaled_sq_dist(a, b, k.lengthscales), k.output_variance);
}

double block_kernel(const ConfigPoint& x, const ConfigPoint& y, const KernelParams& params) {
  if (x.class_index >= params.classes.size() || y.class_index >= params.classes.size())
    throw std::invalid_argument("block_kernel class index out of range");
  if (x.class_index != y.class_index) return 0.0;
  return matern52(x.encoded, y.encoded, params.classes[x.class_index]);
}

Surrogate::Surrogate(const CashSpace& space, KernelParams params, SurrogateConfig config)
    : params_(std::move(params)), config_(config) {
  space.validate();
  params_.validate(space);
  for (const auto& cls : space.classes) class_dims_.push_back(cls.encoded_dim());
  classes_.resize(space.classes.size());
  for (std::size_t m = 0; m < classes_.size(); ++m) {
    classes_[m].x.resize(class_dims_[m], 0);
    classes_[m].sqdiff.resize(static_cast<std::size_t>(class_dims_[m]));
  }
}

std::size_t Surrogate::class_observations(std::size_t class_index) const {
  return static_cast<std::size_t>(classes_.at(class_index).n);
}

void Surrogate::update(const ConfigPoint& pt, double value) {
  if (pt.class_index >= classes_.size()) throw std::invalid_argument("class index out of range");
  if (pt.encoded.size() != class_dims_[pt.class_index])
    throw std::invalid_argument("encoded dimension mismatch");
  if (!std::isfinite(value)) throw std::invalid_argument("observation value must be finite");

  ClassData& cd = classes_[pt.class_index];
  int n = cd.n;
  cd.x.conservativeResize(Eigen::NoChange, n + 1);
  cd.x.col(n) = pt.encoded;
  cd.y.conservativeResize(n + 1);
  cd.y[n] = value;
  for (int d = 0; d < class_dims_[pt.class_index]; ++d) {
    auto& sq = cd.sqdiff[static_cast<std::size_t>(d)];
    sq.conservativeResize(n + 1, n + 1);
    for (int i = 0; i <= n; ++i) {
      double diff = cd.x(d, i) - pt.encoded[d];
      sq(i, n) = diff * diff;
      sq(n, i) = sq(i, n);
    }
  }
  cd.n = n + 1;
  append_to_factor(pt.class_index, pt.encoded);
  observed_points_.push_back(pt);
  observed_values_.push_back(value);
  refresh_standardization();
}

void Surrogate::append_to_factor(std::size_t m, const Eigen::VectorXd& enc) {
  ClassData& cd = classes_[m];
  const ClassKernelParams& kp = params_.classes[m];
  int n = cd.n;  // already includes the new point
  double jitter = config_.jitter_rel * kp.output_variance;
  double kappa = kp.output_variance + kp.noise_variance + jitter;
  if (n == 1) {
    cd.l.resize(1, 1);
    cd.l(0, 0) = std::sqrt(kappa);
    return;
  }
  Eigen::VectorXd kvec(n - 1);
  for (int i = 0; i < n - 1; ++i)
    kvec[i] = matern52_of_r2(scaled_sq_dist(cd.x.col(i), enc, kp.lengthscales), kp.output_variance);
  Eigen::VectorXd r = cd.l.triangularView<Eigen::Lower>().solve(kvec);
  double d2 = kappa - r.squaredNorm();
  double d = std::sqrt(std::max(d2, jitter));
  cd.l.conservativeResize(n, n);
  cd.l.row(n - 1).head(n - 1) = r.transpose();
  cd.l.col(n - 1).setZero();
  cd.l(n - 1, n - 1) = d;
}

Eigen::MatrixXd Surrogate::build_kernel_matrix(const ClassData& cd,
                                               const ClassKernelParams& kp) const {
  int n = cd.n;
  Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t d = 0; d < cd.sqdiff.size(); ++d) {
    double inv = 1.0 / (kp.lengthscales[static_cast<Eigen::Index>(d)] *
                        kp.lengthscales[static_cast<Eigen::Index>(d)]);
    r2 += cd.sqdiff[d] * inv;
  }
  Eigen::MatrixXd k(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) k(i, j) = matern52_of_r2(r2(i, j), kp.output_variance);
  double diag = kp.noise_variance + config_.jitter_rel * kp.output_variance;
  k.diagonal().array() += diag;
  return k;
}

void Surrogate::rebuild_class(std::size_t m) {
  ClassData& cd = classes_[m];
  if (cd.n == 0) {
    cd.l.resize(0, 0);
    cd.z.resize(0);
    cd.alpha.resize(0);
    return;
  }
  Eigen::MatrixXd k = build_kernel_matrix(cd, params_.classes[m]);
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("kernel matrix factorization failed");
  cd.l = llt.matrixL();
  cd.z = (cd.y.array() - mean_) / scale_;
  cd.alpha = cd.l.triangularView<Eigen::Lower>().solve(cd.z);
  cd.alpha = cd.l.transpose().triangularView<Eigen::Upper>().solve(cd.alpha);
}

void Surrogate::refresh_standardization() {
  if (config_.standardize && !observed_values_.empty()) {
    double s = 0.0;
    for (double v : observed_values_) s += v;
    mean_ = s / static_cast<double>(observed_values_.size());
    double var = 0.0;
    for (double v : observed_values_) var += (v - mean_) * (v - mean_);
    var /= static_cast<double>(observed_values_.size());
    scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
  } else {
    mean_ = 0.0;
    scale_ = 1.0;
  }
  for (auto& cd : classes_) {
    if (cd.n == 0) continue;
    cd.z = (cd.y.array() - mean_) / scale_;
    cd.alpha = cd.l.triangularView<Eigen::Lower>().solve(cd.z);
    cd.alpha = cd.l.transpose().triangularView<Eigen::Upper>().solve(cd.alpha);
  }
}

PosteriorValue Surrogate::posterior_latent(const ConfigPoint& q) const {
  if (q.class_index >= classes_.size()) throw std::invalid_argument("class index out of range");
  if (q.encoded.size() != class_dims_[q.class_index])
    throw std::invalid_argument("encoded dimension mismatch");
  const ClassData& cd = classes_[q.class_index];
  const ClassKernelParams& kp = params_.classes[q.class_index];
  if (cd.n == 0) return {0.0, kp.output_variance};
  Eigen::VectorXd kvec(cd.n);
  for (int i = 0; i < cd.n; ++i)
    kvec[i] =
        matern52_of_r2(scaled_sq_dist(cd.x.col(i), q.encoded, kp.lengthscales), kp.output_variance);
  Eigen::VectorXd v = cd.l.triangularView<Eigen::Lower>().solve(kvec);
  double mean = kvec.dot(cd.alpha);
  double variance = std::max(kp.output_variance - v.squaredNorm(), 0.0);
  return {mean, variance};
}

PosteriorValue Surrogate::posterior(const ConfigPoint& q) const {
  PosteriorValue latent = posterior_latent(q);
  return {mean_ + scale_ * latent.mean, scale_ * scale_ * latent.variance};
}

double Surrogate::lookahead_variance(const ConfigPoint& cand, const ConfigPoint& target) const {
  if (cand.class_index != target.class_index) return posterior(target).variance;
  const ClassData& cd = classes_.at(cand.class_index);
  const ClassKernelParams& kp = params_.classes[cand.class_index];
  double var_c, var_t, cov;
  if (cd.n == 0) {
    var_c = kp.output_variance;
    var_t = kp.output_variance;
    cov = matern52(cand.encoded, target.encoded, kp);
  } else {
    Eigen::VectorXd kc(cd.n), kt(cd.n);
    for (int i = 0; i < cd.n; ++i) {
      kc[i] = matern52_of_r2(scaled_sq_dist(cd.x.col(i), cand.encoded, kp.lengthscales),
                             kp.output_variance);
      kt[i] = matern52_of_r2(scaled_sq_dist(cd.x.col(i), target.encoded, kp.lengthscales),
                             kp.output_variance);
    }
    Eigen::VectorXd vc = cd.l.triangularView<Eigen::Lower>().solve(kc);
    Eigen::VectorXd vt = cd.l.triangularView<Eigen::Lower>().solve(kt);
    var_c = std::max(kp.output_variance - vc.squaredNorm(), 0.0);
    var_t = std::max(kp.output_variance - vt.squaredNorm(), 0.0);
    cov = matern52(cand.encoded, target.encoded, kp) - vc.dot(vt);
  }
  // The appended point would get noise + jitter on its diagonal, so the
  // rank-one identity needs the same term here to match an actual update.
  double denom = var_c + kp.noise_variance + config_.jitter_rel * kp.output_variance;
  if (denom <= 1e-12 * kp.output_variance) {
    ++lookahead_floor_hits_;
    return scale_ * scale_ * var_t;
  }
  double reduced = std::max(var_t - cov * cov / denom, 0.0);
  return scale_ * scale_ * reduced;
}

Surrogate::ClassBatch Surrogate::batch_posterior(std::size_t class_index,
                                                 const Eigen::MatrixXd& enc_cols) const {
  if (class_index >= classes_.size()) throw std::invalid_argument("class index out of range");
  if (enc_cols.rows() != class_dims_[class_index])
    throw std::invalid_argument("encoded dimension mismatch");
  const ClassData& cd = classes_[class_index];
  const ClassKernelParams& kp = params_.classes[class_index];
  const Eigen::Index nc = enc_cols.cols();

  ClassBatch b;
  b.enc = enc_cols;
  b.noise_latent = kp.noise_variance;
  b.output_variance = kp.output_variance;
  if (cd.n == 0) {
    b.mean_raw = Eigen::VectorXd::Constant(nc, mean_);
    b.var_latent = Eigen::VectorXd::Constant(nc, kp.output_variance);
    b.var_raw = scale_ * scale_ * b.var_latent;
    b.v.resize(0, nc);
    return b;
  }
  Eigen::MatrixXd koc(cd.n, nc);
  for (Eigen::Index j = 0; j < nc; ++j)
    for (int i = 0; i < cd.n; ++i)
      koc(i, j) = matern52_of_r2(scaled_sq_dist(cd.x.col(i), enc_cols.col(j), kp.lengthscales),
                                 kp.output_variance);
  b.v = cd.l.triangularView<Eigen::Lower>().solve(koc);
  Eigen::VectorXd mean_latent = koc.transpose() * cd.alpha;
  b.var_latent =
      (kp.output_variance - b.v.colwise().squaredNorm().transpose().array()).cwiseMax(0.0);
  b.mean_raw = mean_ + scale_ * mean_latent.array();
  b.var_raw = scale_ * scale_ * b.var_latent;
  return b;
}

double Surrogate::pair_cov_latent(std::size_t class_index, const ClassBatch& batch, int i,
                                  int j) const {
  const ClassKernelParams& kp = params_.classes.at(class_index);
  double prior =
      matern52_of_r2(scaled_sq_dist(batch.enc.col(i), batch.enc.col(j), kp.lengthscales),
                     kp.output_variance);
  if (batch.v.rows() == 0) return prior;
  return prior - batch.v.col(i).dot(batch.v.col(j));
}

Eigen::MatrixXd Surrogate::cross_cov_latent(std::size_t class_index, const ClassBatch& batch,
                                            const std::vector<int>& rows,
                                            const std::vector<int>& cols) const {
  const ClassKernelParams& kp = params_.classes.at(class_index);
  const Eigen::Index nr = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index nc = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd out(nr, nc);
  for (Eigen::Index j = 0; j < nc; ++j)
    for (Eigen::Index i = 0; i < nr; ++i)
      out(i, j) =
          matern52_of_r2(scaled_sq_dist(batch.enc.col(rows[i]), batch.enc.col(cols[j]),
                                        kp.lengthscales),
                         kp.output_variance);
  if (batch.v.rows() == 0) return out;
  Eigen::MatrixXd vr(batch.v.rows(), nr), vc(batch.v.rows(), nc);
  for (Eigen::Index i = 0; i < nr; ++i) vr.col(i) = batch.v.col(rows[i]);
  for (Eigen::Index j = 0; j < nc; ++j) vc.col(j) = batch.v.col(cols[j]);
  out.noalias() -= vr.transpose() * vc;
  return out;
}

double Surrogate::lookahead_denom_latent(const ClassBatch& batch, int i) const {
  return batch.var_latent[i] + batch.noise_latent + config_.jitter_rel * batch.output_variance;
}

double Surrogate::lookahead_var_latent(std::size_t class_index, const ClassBatch& batch, int i,
                                       int j) const {
  double denom = lookahead_denom_latent(batch, i);
  if (denom <= 1e-12 * batch.output_variance) {
    ++lookahead_floor_hits_;
    return batch.var_latent[j];
  }
  double cov = pair_cov_latent(class_index, batch, i, j);
  return std::max(batch.var_latent[j] - cov * cov / denom, 0.0);
}

void Surrogate::set_kernel(KernelParams params) {
  if (params.classes.size() != classes_.size())
    throw std::invalid_argument("kernel parameter count does not match class count");
  for (std::size_t m = 0; m < classes_.size(); ++m) params.classes[m].validate(class_dims_[m]);
  params_ = std::move(params);
  for (std::size_t m = 0; m < classes_.size(); ++m) rebuild_class(m);
}

void Surrogate::fit_hyperparams(std::uint64_t seed, int restarts) {
  bool any = false;
  for (const auto& cd : classes_)
    if (cd.n >= 2) any = true;
  if (!any) throw std::invalid_argument("hyperparameter fit needs a class with >= 2 observations");

  for (std::size_t m = 0; m < classes_.size(); ++m) {
    ClassData& cd = classes_[m];
    if (cd.n < 2) continue;
    const int d = class_dims_[m];
    const int n = cd.n;

    Eigen::VectorXd z = (cd.y.array() - mean_) / scale_;
    double zmean = z.mean();
    double sample_var = (z.array() - zmean).square().sum() / n;

    Eigen::VectorXd lo(d + 2), hi(d + 2);
    for (int i = 0; i < d; ++i) {
      lo[i] = std::log(1e-2);
      hi[i] = std::log(1e2);
    }
    lo[d] = std::log(1e-4);
    hi[d] = std::log(std::max(1e4 * sample_var, 1e-4));
    lo[d + 1] = std::log(1e-8);
    hi[d + 1] = std::log(std::max(sample_var, 1e-8));

    auto nlml = [&](const Eigen::VectorXd& u) -> double {
      ClassKernelParams kp;
      kp.lengthscales = u.head(d).array().exp();
      kp.output_variance = std::exp(u[d]);
      kp.noise_variance = std::exp(u[d + 1]);
      Eigen::MatrixXd k = build_kernel_matrix(cd, kp);
      Eigen::LLT<Eigen::MatrixXd> llt(k);
      if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
      Eigen::MatrixXd l = llt.matrixL();
      Eigen::VectorXd a = l.triangularView<Eigen::Lower>().solve(z);
      double logdet = l.diagonal().array().log().sum();
      return 0.5 * a.squaredNorm() + logdet + 0.5 * n * std::log(2.0 * M_PI);
    };

    NelderMead nm;
    nm.lo = lo;
    nm.hi = hi;
    nm.max_evals = config_.fit_max_evals;

    Eigen::VectorXd best_u;
    double best_f = std::numeric_limits<double>::infinity();
    auto eng = make_engine(seed, {0x6Bu, m});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int starts = restarts > 0 ? restarts : std::max(config_.fit_restarts, 1);
    for (int restart = 0; restart < starts; ++restart) {
      Eigen::VectorXd start(d + 2);
      if (restart == 0) {
        const ClassKernelParams& cur = params_.classes[m];
        for (int i = 0; i < d; ++i) start[i] = std::log(cur.lengthscales[i]);
        start[d] = std::log(cur.output_variance);
        start[d + 1] = std::log(std::max(cur.noise_variance, 1e-8));
      } else {
        for (int i = 0; i < d + 2; ++i) start[i] = lo[i] + unit(eng) * (hi[i] - lo[i]);
      }
      auto [u, f] = nm.minimize(nlml, start);
      if (f < best_f) {
        best_f = f;
        best_u = u;
      }
    }
    if (std::isfinite(best_f)) {
      params_.classes[m].lengthscales = best_u.head(d).array().exp();
      params_.classes[m].output_variance = std::exp(best_u[d]);
      params_.classes[m].noise_variance = std::exp(best_u[d + 1]);
      rebuild_class(m);
    }
  }
}

}  // namespace cashomon::gp
