#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "skelattack/errors.hpp"

namespace skelattack {

/// k indices into a search space; duplicates are allowed here and collapse
/// when the perturbation is applied.
using PerturbationVector = std::vector<std::size_t>;

struct Observation {
  PerturbationVector candidate;
  double loss = 0.0;
};

enum class OptimizerKind { RandomSearch, CmaEs, Tpe };

inline std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::RandomSearch:
      return "random";
    case OptimizerKind::CmaEs:
      return "cmaes";
    case OptimizerKind::Tpe:
      return "tpe";
  }
  return "?";
}

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "random") return OptimizerKind::RandomSearch;
  if (s == "cmaes") return OptimizerKind::CmaEs;
  if (s == "tpe") return OptimizerKind::Tpe;
  throw InputError("unknown optimizer '" + std::string(s) + "' (expected random, cmaes or tpe)");
}

struct CmaEsOptions {
  /// Initial step size, expressed in squashed (0,1) units around the mean.
  double sigma0 = 0.3;
  /// Initial mean of every coordinate before squashing.
  double mean0 = 0.0;
  /// Population size; 0 selects 4 + floor(3 ln k).
  int lambda = 0;

  friend bool operator==(const CmaEsOptions&, const CmaEsOptions&) = default;
};

struct TpeOptions {
  double gamma = 0.25;
  int n_candidates = 24;
  int n_startup = 10;

  friend bool operator==(const TpeOptions&, const TpeOptions&) = default;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::RandomSearch;
  CmaEsOptions cmaes;
  TpeOptions tpe;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Ask/tell minimiser over k indices in [0, L).
class Optimizer {
 public:
  Optimizer(std::size_t k, std::size_t domain, std::uint64_t seed)
      : k_(k), domain_(domain), rng_(seed) {
    if (k == 0) throw UsageError("optimizer dimension k must be >= 1");
    if (domain == 0) throw UsageError("optimizer domain size must be >= 1");
  }
  virtual ~Optimizer() = default;

  virtual OptimizerKind kind() const = 0;
  virtual PerturbationVector propose() = 0;

  void observe(const PerturbationVector& candidate, double loss) {
    if (!std::isfinite(loss)) throw InputError("optimizer loss must be finite");
    if (candidate.size() != k_) throw InputError("candidate has wrong dimension");
    for (auto i : candidate)
      if (i >= domain_) throw InputError("candidate index outside the domain");
    history_.push_back({candidate, loss});
    on_observe(history_.back());
  }

  /// Minimum-loss observation; the earliest wins ties.
  const Observation& best_so_far() const {
    if (history_.empty()) throw UsageError("best_so_far on an optimizer with no history");
    auto it = std::min_element(history_.begin(), history_.end(),
                               [](const Observation& a, const Observation& b) {
                                 return a.loss < b.loss;
                               });
    return *it;
  }

  /// Forget the search distribution (history is kept).
  virtual void restart() {}

  const std::vector<Observation>& history() const { return history_; }
  std::size_t dimension() const { return k_; }
  std::size_t domain_size() const { return domain_; }

 protected:
  virtual void on_observe(const Observation&) {}

  std::size_t to_index(double squashed) const {
    const double scaled = std::floor(squashed * static_cast<double>(domain_));
    if (!(scaled >= 0.0)) return 0;
    return std::min(domain_ - 1, static_cast<std::size_t>(scaled));
  }

  std::size_t k_;
  std::size_t domain_;
  std::mt19937_64 rng_;
  std::vector<Observation> history_;
};

class RandomSearch final : public Optimizer {
 public:
  using Optimizer::Optimizer;

  OptimizerKind kind() const override { return OptimizerKind::RandomSearch; }

  PerturbationVector propose() override {
    std::uniform_int_distribution<std::size_t> pick(0, domain_ - 1);
    PerturbationVector out(k_);
    for (auto& i : out) i = pick(rng_);
    return out;
  }
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// CMA-ES on an unbounded k-dimensional point, squashed coordinatewise
/// through the logistic map before being floored to an index.
///
/// Strategy parameters follow Hansen's tutorial defaults: weighted
/// recombination over the best mu = lambda/2, cumulative step-size
/// adaptation, rank-one plus rank-mu covariance update.
class CmaEs final : public Optimizer {
 public:
  CmaEs(std::size_t k, std::size_t domain, std::uint64_t seed, CmaEsOptions opts = {})
      : Optimizer(k, domain, seed), opts_(opts) {
    const double n = static_cast<double>(k);
    lambda_ = opts.lambda > 0 ? opts.lambda
                              : 4 + static_cast<int>(std::floor(3.0 * std::log(n)));
    mu_ = lambda_ / 2;
    weights_.resize(mu_);
    for (int i = 0; i < mu_; ++i) weights_(i) = std::log(mu_ + 0.5) - std::log(i + 1.0);
    weights_ /= weights_.sum();
    mueff_ = 1.0 / weights_.squaredNorm();
    cc_ = (4.0 + mueff_ / n) / (n + 4.0 + 2.0 * mueff_ / n);
    cs_ = (mueff_ + 2.0) / (n + mueff_ + 5.0);
    c1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mueff_);
    cmu_ = std::min(1.0 - c1_, 2.0 * (mueff_ - 2.0 + 1.0 / mueff_) / ((n + 2.0) * (n + 2.0) + mueff_));
    damps_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff_ - 1.0) / (n + 1.0)) - 1.0) + cs_;
    chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
    reset_distribution();
  }

  OptimizerKind kind() const override { return OptimizerKind::CmaEs; }

  PerturbationVector propose() override {
    if (next_sample_ == generation_.size()) {
      if (!pending_.empty()) {
        throw UsageError("CMA-ES: observe the current generation before proposing more");
      }
      sample_generation();
    }
    const Eigen::VectorXd& x = generation_[next_sample_++];
    pending_.push_back(x);
    return to_candidate(x);
  }

  void restart() override { reset_distribution(); }

  int lambda() const { return lambda_; }
  int mu() const { return mu_; }
  double sigma() const { return sigma_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return cov_; }
  std::size_t generations() const { return generation_count_; }

  Eigen::VectorXd squashed_mean() const { return mean_.unaryExpr(&logistic); }

  /// Smallest eigenvalue floor applied after every covariance update.
  static constexpr double kEigenFloor = 1e-14;

 protected:
  void on_observe(const Observation& obs) override {
    if (pending_.empty()) {
      throw UsageError("CMA-ES: observed a candidate that was never proposed");
    }
    Eigen::VectorXd x = pending_.front();
    if (to_candidate(x) != obs.candidate) {
      throw UsageError("CMA-ES: observations must follow proposal order");
    }
    pending_.pop_front();
    results_.push_back({std::move(x), obs.loss});
    if (results_.size() == static_cast<std::size_t>(lambda_)) update();
  }

 private:
  struct Scored {
    Eigen::VectorXd x;
    double loss;
  };

  void reset_distribution() {
    const auto n = static_cast<Eigen::Index>(k_);
    mean_ = Eigen::VectorXd::Constant(n, opts_.mean0);
    // The logistic map has slope 1/4 at the origin.
    sigma_ = opts_.sigma0 * 4.0;
    cov_ = Eigen::MatrixXd::Identity(n, n);
    basis_ = Eigen::MatrixXd::Identity(n, n);
    scales_ = Eigen::VectorXd::Ones(n);
    pc_ = Eigen::VectorXd::Zero(n);
    ps_ = Eigen::VectorXd::Zero(n);
    generation_.clear();
    pending_.clear();
    results_.clear();
    next_sample_ = 0;
    generation_count_ = 0;
  }

  void sample_generation() {
    std::normal_distribution<double> normal(0.0, 1.0);
    generation_.clear();
    const auto n = static_cast<Eigen::Index>(k_);
    for (int i = 0; i < lambda_; ++i) {
      Eigen::VectorXd z(n);
      for (Eigen::Index j = 0; j < n; ++j) z(j) = normal(rng_);
      generation_.push_back(mean_ + sigma_ * (basis_ * scales_.asDiagonal() * z));
    }
    next_sample_ = 0;
  }

  PerturbationVector to_candidate(const Eigen::VectorXd& x) const {
    PerturbationVector out(k_);
    for (std::size_t i = 0; i < k_; ++i) out[i] = to_index(logistic(x(static_cast<Eigen::Index>(i))));
    return out;
  }

  void update() {
    const double n = static_cast<double>(k_);
    std::stable_sort(results_.begin(), results_.end(),
                     [](const Scored& a, const Scored& b) { return a.loss < b.loss; });
    const Eigen::VectorXd old_mean = mean_;
    mean_.setZero();
    for (int i = 0; i < mu_; ++i) mean_ += weights_(i) * results_[i].x;

    const Eigen::VectorXd y_w = (mean_ - old_mean) / sigma_;
    const Eigen::MatrixXd inv_sqrt_c =
        basis_ * scales_.cwiseInverse().asDiagonal() * basis_.transpose();
    ps_ = (1.0 - cs_) * ps_ + std::sqrt(cs_ * (2.0 - cs_) * mueff_) * (inv_sqrt_c * y_w);
    ++generation_count_;
    const double ps_norm = ps_.norm();
    const double decay = 1.0 - std::pow(1.0 - cs_, 2.0 * static_cast<double>(generation_count_));
    const bool hsig = ps_norm / std::sqrt(decay) / chi_n_ < 1.4 + 2.0 / (n + 1.0);
    pc_ = (1.0 - cc_) * pc_ + (hsig ? std::sqrt(cc_ * (2.0 - cc_) * mueff_) : 0.0) * y_w;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(cov_.rows(), cov_.cols());
    for (int i = 0; i < mu_; ++i) {
      const Eigen::VectorXd d = (results_[i].x - old_mean) / sigma_;
      rank_mu += weights_(i) * d * d.transpose();
    }
    const double hsig_fix = hsig ? 0.0 : cc_ * (2.0 - cc_);
    cov_ = (1.0 - c1_ - cmu_) * cov_ + c1_ * (pc_ * pc_.transpose() + hsig_fix * cov_) +
           cmu_ * rank_mu;

    sigma_ *= std::exp((cs_ / damps_) * (ps_norm / chi_n_ - 1.0));
    sigma_ = std::clamp(sigma_, 1e-300, 1e12);

    decompose();
    results_.clear();
  }

  void decompose() {
    cov_ = 0.5 * (cov_ + cov_.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_);
    Eigen::VectorXd values = eig.eigenvalues();
    const double floor = std::max(values.maxCoeff(), 1.0) * kEigenFloor;
    bool clamped = false;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      if (!(values(i) > floor)) {
        values(i) = floor;
        clamped = true;
      }
    }
    basis_ = eig.eigenvectors();
    scales_ = values.cwiseSqrt();
    if (clamped) cov_ = basis_ * values.asDiagonal() * basis_.transpose();
  }

  CmaEsOptions opts_;
  int lambda_ = 0;
  int mu_ = 0;
  Eigen::VectorXd weights_;
  double mueff_ = 0, cc_ = 0, cs_ = 0, c1_ = 0, cmu_ = 0, damps_ = 0, chi_n_ = 0;

  Eigen::VectorXd mean_;
  double sigma_ = 0;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd scales_;
  Eigen::VectorXd pc_;
  Eigen::VectorXd ps_;

  std::vector<Eigen::VectorXd> generation_;
  std::size_t next_sample_ = 0;
  std::deque<Eigen::VectorXd> pending_;
  std::vector<Scored> results_;
  std::size_t generation_count_ = 0;
};

/// Univariate tree-structured Parzen estimator.
///
/// Each index is relaxed to (i + 0.5) / L in (0,1). After the startup
/// trials, observations are split at the gamma-quantile of loss into good
/// and bad sets, each modelled per dimension by a Gaussian KDE (Scott's rule
/// bandwidth) mixed with a uniform prior. Candidates are drawn from the good
/// density and the one maximising good/bad density wins.
class Tpe final : public Optimizer {
 public:
  Tpe(std::size_t k, std::size_t domain, std::uint64_t seed, TpeOptions opts = {})
      : Optimizer(k, domain, seed), opts_(opts) {
    if (!(opts.gamma > 0.0 && opts.gamma < 1.0)) throw UsageError("TPE gamma must be in (0,1)");
    if (opts.n_candidates < 1) throw UsageError("TPE needs at least one candidate");
  }

  OptimizerKind kind() const override { return OptimizerKind::Tpe; }

  PerturbationVector propose() override {
    const std::size_t n_obs = history_.size() - horizon_;
    PerturbationVector out(k_);
    if (n_obs < static_cast<std::size_t>(std::max(opts_.n_startup, 1))) {
      std::uniform_int_distribution<std::size_t> pick(0, domain_ - 1);
      for (auto& i : out) i = pick(rng_);
      return out;
    }

    std::vector<std::size_t> order(n_obs);
    std::iota(order.begin(), order.end(), horizon_);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return history_[a].loss < history_[b].loss;
    });
    const auto n_good = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(opts_.gamma * static_cast<double>(n_obs))));

    std::vector<double> good(n_good);
    std::vector<double> bad(n_obs - n_good);
    for (std::size_t d = 0; d < k_; ++d) {
      for (std::size_t i = 0; i < n_obs; ++i) {
        const double u = relax(history_[order[i]].candidate[d]);
        if (i < n_good) {
          good[i] = u;
        } else {
          bad[i - n_good] = u;
        }
      }
      const Parzen l(good, bandwidth(good));
      const Parzen g(bad, bandwidth(bad));
      double best_u = 0.5;
      double best_score = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < opts_.n_candidates; ++c) {
        const double u = l.sample(rng_);
        const double score = std::log(l.pdf(u)) - std::log(g.pdf(u));
        if (score > best_score) {
          best_score = score;
          best_u = u;
        }
      }
      out[d] = to_index(best_u);
    }
    return out;
  }

  void restart() override { horizon_ = history_.size(); }

  const TpeOptions& options() const { return opts_; }

 private:
  /// Equal-weight Gaussian mixture over the points plus one uniform
  /// component on [0,1].
  struct Parzen {
    const std::vector<double>& points;
    double h;

    Parzen(const std::vector<double>& pts, double bw) : points(pts), h(bw) {}

    double pdf(double u) const {
      double sum = 1.0;  // uniform prior
      const double norm = 1.0 / (h * std::sqrt(2.0 * M_PI));
      for (double p : points) {
        const double z = (u - p) / h;
        sum += norm * std::exp(-0.5 * z * z);
      }
      return sum / static_cast<double>(points.size() + 1);
    }

    double sample(std::mt19937_64& rng) const {
      std::uniform_int_distribution<std::size_t> which(0, points.size());
      const std::size_t c = which(rng);
      double u;
      if (c == points.size()) {
        u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      } else {
        u = points[c] + h * std::normal_distribution<double>(0.0, 1.0)(rng);
      }
      // Reflect into [0,1].
      for (int i = 0; i < 4 && (u < 0.0 || u > 1.0); ++i) u = u < 0.0 ? -u : 2.0 - u;
      return std::clamp(u, 0.0, std::nextafter(1.0, 0.0));
    }
  };

  double relax(std::size_t index) const {
    return (static_cast<double>(index) + 0.5) / static_cast<double>(domain_);
  }

  /// Scott's rule, clipped below by 1/min(100, n+1) so a collapsed set of
  /// good points keeps exploring its neighbourhood.
  double bandwidth(const std::vector<double>& pts) const {
    const double clip = 1.0 / std::min(100.0, static_cast<double>(pts.size()) + 1.0);
    const double floor = std::max(clip, 1.0 / static_cast<double>(domain_));
    if (pts.size() < 2) return std::max(floor, 0.1);
    const double mean = std::accumulate(pts.begin(), pts.end(), 0.0) / static_cast<double>(pts.size());
    double var = 0.0;
    for (double p : pts) var += (p - mean) * (p - mean);
    var /= static_cast<double>(pts.size() - 1);
    const double scott = std::sqrt(var) * std::pow(static_cast<double>(pts.size()), -0.2);
    return std::max(scott, floor);
  }

  TpeOptions opts_;
  std::size_t horizon_ = 0;
};

inline std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg, std::size_t k,
                                                 std::size_t domain, std::uint64_t seed) {
  switch (cfg.kind) {
    case OptimizerKind::RandomSearch:
      return std::make_unique<RandomSearch>(k, domain, seed);
    case OptimizerKind::CmaEs:
      return std::make_unique<CmaEs>(k, domain, seed, cfg.cmaes);
    case OptimizerKind::Tpe:
      return std::make_unique<Tpe>(k, domain, seed, cfg.tpe);
  }
  throw UsageError("unknown optimizer kind");
}

}  // namespace skelattack
