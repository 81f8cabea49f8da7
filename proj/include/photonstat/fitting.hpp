#pragma once

// Damped Gauss-Newton (Levenberg-Marquardt) curve fitting with box bounds and
// a pluggable objective: weighted least squares or Poisson maximum likelihood.

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace photonstat {

enum class Objective { least_squares, poisson_mle };

struct FitParameter {
  std::string name;
  double value = 0.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

/// Model value at abscissa x for parameter vector p.
using ModelFn = std::function<double(double x, std::span<const double> p)>;
/// Partial derivatives of the model at x with respect to every parameter.
using GradientFn = std::function<void(double x, std::span<const double> p, std::span<double> grad)>;

struct FitProblem {
  std::string model;  // identifier used in reports
  std::vector<FitParameter> parameters;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> weights;  // least squares: 1 / sigma^2; empty means unit weights
  Objective objective = Objective::least_squares;
  ModelFn model_fn;
  GradientFn gradient_fn;  // optional; central differences otherwise
  int max_iterations = 500;
};

struct FitResult {
  std::vector<std::string> names;
  std::vector<double> parameters;
  std::vector<double> std_errors;
  std::vector<double> covariance;  // row-major n x n
  double objective = 0.0;          // chi^2 or Poisson deviance
  double reduced_objective = 0.0;  // objective / degrees of freedom
  int iterations = 0;
  bool converged = false;
  bool covariance_reliable = true;
  double condition_number = 0.0;
  std::string note;  // identifiability / convergence remarks

  double cov(std::size_t i, std::size_t j) const { return covariance[i * parameters.size() + j]; }
};

/// Throws InvalidArgument for malformed problems and SingularCurvature when a
/// parameter has no influence on the model at the starting point. Running
/// out of iterations is not an error: the best point is returned with
/// converged = false.
FitResult fit_nonlinear(const FitProblem& problem);

/// Objective (chi^2 or Poisson deviance) at an arbitrary parameter vector.
double objective_value(const FitProblem& problem, std::span<const double> params);

// ---------------------------------------------------------------------------
// Saturation curve I(P) = A (1 - exp(-P / P_sat)) + B P

struct SaturationPoint {
  double fluence = 0.0;    // P, uJ/cm^2
  double intensity = 0.0;  // I, counts/s
  double sigma = 1.0;
};

struct SaturationFit {
  double A = 0.0;
  double B = 0.0;
  double P_sat = 0.0;
  double A_err = 0.0;
  double B_err = 0.0;
  double P_sat_err = 0.0;
  FitResult fit;  // parameter order: A, B, P_sat
};

double saturation_model(double fluence, double A, double B, double P_sat);

/// Throws NegativeFluence, InsufficientSpan (< 4 points or less than a
/// factor 3 between the smallest and largest positive fluence).
SaturationFit fit_saturation(std::span<const SaturationPoint> points);

}  // namespace photonstat
