#include "photonstat/fitting.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "photonstat/error.hpp"

namespace photonstat {
namespace {

constexpr char kModule[] = "fitting";
constexpr double kMuFloor = 1e-12;
constexpr double kLambdaMax = 1e20;

[[noreturn]] void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, kModule, msg);
}

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Evaluation {
  double f = 0.0;
  Vec grad;
  Mat hess;  // Gauss-Newton / Fisher curvature of f
  bool finite = true;
};

class Engine {
public:
  explicit Engine(const FitProblem& p) : p_(p), n_(p.parameters.size()), m_(p.x.size()) {
    start_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) start_[i] = p.parameters[i].value;
  }

  double weight(std::size_t k) const { return p_.weights.empty() ? 1.0 : p_.weights[k]; }

  double objective(const std::vector<double>& par) const {
    double f = 0.0;
    for (std::size_t k = 0; k < m_; ++k) {
      const double mu = p_.model_fn(p_.x[k], par);
      if (!std::isfinite(mu)) return std::numeric_limits<double>::infinity();
      f += term(k, mu);
    }
    return f;
  }

  Evaluation evaluate(const std::vector<double>& par) const {
    Evaluation e;
    e.grad = Vec::Zero(static_cast<Eigen::Index>(n_));
    e.hess = Mat::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    std::vector<double> d(n_);
    Vec dv(static_cast<Eigen::Index>(n_));
    for (std::size_t k = 0; k < m_; ++k) {
      const double mu = p_.model_fn(p_.x[k], par);
      if (!std::isfinite(mu)) {
        e.finite = false;
        e.f = std::numeric_limits<double>::infinity();
        return e;
      }
      jacobian_row(p_.x[k], par, d);
      for (std::size_t i = 0; i < n_; ++i) dv[static_cast<Eigen::Index>(i)] = d[i];
      e.f += term(k, mu);
      double g_coef = 0.0, h_coef = 0.0;
      if (p_.objective == Objective::least_squares) {
        const double w = weight(k);
        g_coef = -2.0 * w * (p_.y[k] - mu);
        h_coef = 2.0 * w;
      } else {
        const double m = std::max(mu, kMuFloor);
        g_coef = 2.0 * (1.0 - p_.y[k] / m);
        h_coef = 2.0 / m;
      }
      e.grad += g_coef * dv;
      e.hess.selfadjointView<Eigen::Lower>().rankUpdate(dv, h_coef);
    }
    e.hess = e.hess.selfadjointView<Eigen::Lower>();
    e.finite = std::isfinite(e.f) && e.grad.allFinite() && e.hess.allFinite();
    return e;
  }

  std::vector<double> clamp(std::vector<double> par) const {
    for (std::size_t i = 0; i < n_; ++i)
      par[i] = std::clamp(par[i], p_.parameters[i].lower, p_.parameters[i].upper);
    return par;
  }

  std::size_t size() const { return n_; }

private:
  double term(std::size_t k, double mu) const {
    const double y = p_.y[k];
    if (p_.objective == Objective::least_squares) {
      const double r = y - mu;
      return weight(k) * r * r;
    }
    const double m = std::max(mu, kMuFloor);
    return 2.0 * (m - y + (y > 0.0 ? y * std::log(y / m) : 0.0));
  }

  void jacobian_row(double x, const std::vector<double>& par, std::vector<double>& d) const {
    if (p_.gradient_fn) {
      p_.gradient_fn(x, par, d);
      return;
    }
    // central differences: truncation h^2 balances rounding eps/h
    static const double kStep = std::cbrt(std::numeric_limits<double>::epsilon());
    std::vector<double> q = par;
    for (std::size_t i = 0; i < n_; ++i) {
      double scale = std::max(std::abs(par[i]), std::abs(start_[i]));
      if (scale == 0.0) scale = 1.0;
      const double h = kStep * scale;
      const double lo = p_.parameters[i].lower, hi = p_.parameters[i].upper;
      double a = par[i] - h, b = par[i] + h;
      if (a < lo) a = par[i];
      if (b > hi) b = par[i];
      if (a == b) {
        d[i] = 0.0;
        continue;
      }
      q[i] = a;
      const double fa = p_.model_fn(x, q);
      q[i] = b;
      const double fb = p_.model_fn(x, q);
      q[i] = par[i];
      d[i] = (fb - fa) / (b - a);
    }
  }

  const FitProblem& p_;
  std::size_t n_, m_;
  std::vector<double> start_;
};

void check_problem(const FitProblem& p) {
  const std::size_t n = p.parameters.size();
  if (n == 0) fail(ErrorCode::InvalidArgument, "no parameters");
  if (!p.model_fn) fail(ErrorCode::InvalidArgument, "model function missing");
  if (p.x.size() != p.y.size()) fail(ErrorCode::InvalidArgument, "x and y lengths differ");
  if (!p.weights.empty() && p.weights.size() != p.x.size())
    fail(ErrorCode::InvalidArgument, "weights length differs from data");
  if (p.x.size() < n)
    fail(ErrorCode::InvalidArgument, "fewer data points than parameters");
  if (p.max_iterations <= 0) fail(ErrorCode::InvalidArgument, "max_iterations must be > 0");
  for (const auto& par : p.parameters) {
    if (!(par.lower <= par.upper))
      fail(ErrorCode::InvalidArgument, "empty bounds for parameter " + par.name);
    if (!std::isfinite(par.value) || par.value < par.lower || par.value > par.upper)
      fail(ErrorCode::InvalidArgument, "initial value outside bounds for parameter " + par.name);
  }
  for (std::size_t k = 0; k < p.x.size(); ++k) {
    if (!std::isfinite(p.x[k]) || !std::isfinite(p.y[k]))
      fail(ErrorCode::InvalidArgument, "non-finite data point");
    if (!p.weights.empty() && !(p.weights[k] >= 0.0 && std::isfinite(p.weights[k])))
      fail(ErrorCode::InvalidArgument, "weights must be finite and >= 0");
    if (p.objective == Objective::poisson_mle && p.y[k] < 0.0)
      fail(ErrorCode::InvalidArgument, "Poisson data must be >= 0");
  }
}

// Parameters that may move: off their bounds, or on a bound with the
// descent direction pointing inward, and with nonzero curvature.
std::vector<Eigen::Index> free_set(const FitProblem& p, const std::vector<double>& par,
                                   const Evaluation& e) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < par.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (!(e.hess(ii, ii) > 0.0)) continue;
    const double g = e.grad[ii];
    if (par[i] <= p.parameters[i].lower && g > 0.0) continue;
    if (par[i] >= p.parameters[i].upper && g < 0.0) continue;
    idx.push_back(ii);
  }
  return idx;
}

Mat sub_matrix(const Mat& h, const std::vector<Eigen::Index>& idx) {
  const auto k = static_cast<Eigen::Index>(idx.size());
  Mat s(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b) s(a, b) = h(idx[a], idx[b]);
  return s;
}

Vec sub_vector(const Vec& v, const std::vector<Eigen::Index>& idx) {
  Vec s(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t a = 0; a < idx.size(); ++a) s[static_cast<Eigen::Index>(a)] = v[idx[a]];
  return s;
}

}  // namespace

double objective_value(const FitProblem& problem, std::span<const double> params) {
  check_problem(problem);
  if (params.size() != problem.parameters.size())
    fail(ErrorCode::InvalidArgument, "parameter vector length mismatch");
  Engine engine(problem);
  return engine.objective(std::vector<double>(params.begin(), params.end()));
}

FitResult fit_nonlinear(const FitProblem& problem) {
  check_problem(problem);
  Engine engine(problem);
  const std::size_t n = engine.size();

  std::vector<double> par(n);
  for (std::size_t i = 0; i < n; ++i) par[i] = problem.parameters[i].value;
  Evaluation ev = engine.evaluate(par);
  if (!ev.finite) fail(ErrorCode::InvalidArgument, "objective not finite at the initial point");

  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (!(ev.hess(ii, ii) > 0.0))
      fail(ErrorCode::SingularCurvature,
           "model '" + problem.model + "' does not depend on parameter '" +
               problem.parameters[i].name + "' at the initial point; it is not identifiable");
  }

  FitResult res;
  double lambda = 1e-3;
  int iter = 0;
  bool converged = false;
  for (; iter < problem.max_iterations && !converged; ++iter) {
    const auto idx = free_set(problem, par, ev);
    if (idx.empty()) {
      converged = true;
      break;
    }
    const Mat h = sub_matrix(ev.hess, idx);
    const Vec g = sub_vector(ev.grad, idx);

    // Newton decrement g^T H^-1 g / 2 measures the remaining reducible objective.
    Eigen::LLT<Mat> llt_h(h);
    if (llt_h.info() == Eigen::Success) {
      const double dec = 0.5 * g.dot(llt_h.solve(g));
      if (dec <= 1e-20 * std::max(ev.f, std::numeric_limits<double>::min())) {
        converged = true;
        break;
      }
    }

    bool accepted = false;
    while (!accepted) {
      Mat a = h;
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, i) += lambda * h(i, i);
      Eigen::LLT<Mat> llt(a);
      if (llt.info() == Eigen::Success) {
        const Vec step = llt.solve(-g);
        std::vector<double> trial = par;
        for (std::size_t a_i = 0; a_i < idx.size(); ++a_i)
          trial[static_cast<std::size_t>(idx[a_i])] += step[static_cast<Eigen::Index>(a_i)];
        trial = engine.clamp(std::move(trial));
        const double f_trial = engine.objective(trial);
        if (std::isfinite(f_trial) && f_trial < ev.f) {
          const double rel = (ev.f - f_trial) / std::max(f_trial, std::numeric_limits<double>::min());
          const bool small_lambda = lambda < 1.0;
          par = std::move(trial);
          ev = engine.evaluate(par);
          if (!ev.finite) fail(ErrorCode::InvalidArgument, "objective derivatives not finite");
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
          if (rel < 1e-10 && small_lambda) converged = true;
          continue;
        }
      }
      lambda *= 10.0;
      if (lambda > kLambdaMax) {
        // No damped step lowers the objective: floating-point optimum.
        converged = true;
        break;
      }
    }
    if (!accepted) break;
  }

  res.iterations = iter;
  res.converged = converged;
  if (!converged) res.note = "iteration limit reached; best point returned";

  res.parameters = par;
  for (const auto& fp : problem.parameters) res.names.push_back(fp.name);
  res.objective = ev.f;
  const double dof = static_cast<double>(problem.x.size()) - static_cast<double>(n);
  res.reduced_objective = dof > 0 ? ev.f / dof : 0.0;

  // Covariance 2 H^-1 (H is the curvature of chi^2 or of the deviance).
  const Mat& h = ev.hess;
  Vec dscale(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < dscale.size(); ++i)
    dscale[i] = h(i, i) > 0.0 ? 1.0 / std::sqrt(h(i, i)) : 1.0;
  const Mat hn = dscale.asDiagonal() * h * dscale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Mat> eig(hn);
  const Vec evals = eig.eigenvalues();
  const double emax = evals.maxCoeff();
  const double emin = evals.minCoeff();
  res.condition_number = emin > 0.0 ? emax / emin : std::numeric_limits<double>::infinity();
  res.covariance_reliable = res.condition_number <= 1e10;

  Mat cov_n;
  if (emin > 0.0) {
    cov_n = eig.eigenvectors() * evals.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  } else {
    Vec inv = Vec::Zero(evals.size());
    for (Eigen::Index i = 0; i < evals.size(); ++i)
      if (evals[i] > emax * 1e-14) inv[i] = 1.0 / evals[i];
    cov_n = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  }
  const Mat cov = 2.0 * (dscale.asDiagonal() * cov_n * dscale.asDiagonal());
  res.covariance.resize(n * n);
  res.std_errors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      res.covariance[i * n + j] = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    res.std_errors[i] = std::sqrt(std::max(0.0, res.covariance[i * n + i]));
  }
  if (!res.covariance_reliable) {
    std::string weak;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (!(h(ii, ii) > 0.0)) weak += (weak.empty() ? "" : ", ") + problem.parameters[i].name;
    }
    if (!res.note.empty()) res.note += "; ";
    res.note += "ill-conditioned curvature; covariance unreliable";
    if (!weak.empty()) res.note += " (no curvature for: " + weak + ")";
  }
  return res;
}

// ---------------------------------------------------------------------------

double saturation_model(double fluence, double A, double B, double P_sat) {
  return A * -std::expm1(-fluence / P_sat) + B * fluence;
}

SaturationFit fit_saturation(std::span<const SaturationPoint> points) {
  for (const auto& pt : points) {
    if (!std::isfinite(pt.fluence) || pt.fluence < 0.0)
      fail(ErrorCode::NegativeFluence, "fluence must be finite and >= 0");
    if (!(pt.sigma > 0.0) || !std::isfinite(pt.sigma))
      fail(ErrorCode::InvalidArgument, "sigma must be > 0");
    if (!std::isfinite(pt.intensity)) fail(ErrorCode::InvalidArgument, "intensity not finite");
  }
  if (points.size() < 4)
    fail(ErrorCode::InsufficientSpan, "need at least 4 fluence points, got " +
                                          std::to_string(points.size()));
  double pmin = std::numeric_limits<double>::infinity(), pmax = 0.0;
  for (const auto& pt : points) {
    if (pt.fluence > 0.0) pmin = std::min(pmin, pt.fluence);
    pmax = std::max(pmax, pt.fluence);
  }
  if (!std::isfinite(pmin) || pmax < 3.0 * pmin)
    fail(ErrorCode::InsufficientSpan, "fluences must span at least a factor of 3");

  std::vector<SaturationPoint> sorted(points.begin(), points.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.fluence < b.fluence; });

  FitProblem prob;
  prob.model = "saturation";
  for (const auto& pt : sorted) {
    prob.x.push_back(pt.fluence);
    prob.y.push_back(pt.intensity);
    prob.weights.push_back(1.0 / (pt.sigma * pt.sigma));
  }

  double a0 = 0.0;
  for (double y : prob.y) a0 = std::max(a0, y);
  if (a0 <= 0.0) a0 = 1.0;
  std::vector<double> fl = prob.x;
  std::sort(fl.begin(), fl.end());
  const std::size_t m = fl.size();
  double ps0 = m % 2 ? fl[m / 2] : 0.5 * (fl[m / 2 - 1] + fl[m / 2]);
  const double ps_lo = 1e-3 * pmin;
  ps0 = std::max(ps0, ps_lo);
  double b0 = 0.0;
  const auto& hi1 = sorted[m - 1];
  const auto& hi2 = sorted[m - 2];
  if (hi1.fluence > hi2.fluence)
    b0 = std::max(0.0, (hi1.intensity - hi2.intensity) / (hi1.fluence - hi2.fluence));

  const double inf = std::numeric_limits<double>::infinity();
  prob.parameters = {{"A", a0, 0.0, inf}, {"B", b0, 0.0, inf}, {"P_sat", ps0, ps_lo, inf}};
  prob.model_fn = [](double x, std::span<const double> p) {
    return saturation_model(x, p[0], p[1], p[2]);
  };
  prob.gradient_fn = [](double x, std::span<const double> p, std::span<double> g) {
    const double e = std::exp(-x / p[2]);
    g[0] = -std::expm1(-x / p[2]);
    g[1] = x;
    g[2] = -p[0] * e * x / (p[2] * p[2]);
  };

  SaturationFit out;
  out.fit = fit_nonlinear(prob);
  out.A = out.fit.parameters[0];
  out.B = out.fit.parameters[1];
  out.P_sat = out.fit.parameters[2];
  out.A_err = out.fit.std_errors[0];
  out.B_err = out.fit.std_errors[1];
  out.P_sat_err = out.fit.std_errors[2];
  return out;
}

}  // namespace photonstat
