#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ehrseq/model.hpp"

namespace ehrseq {

struct AdamHyper {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(std::size_t n, AdamHyper h = {}) : hyper(h), m(n, 0.0), v(n, 0.0) {}
};

struct NamedRange {
  std::string name;
  std::size_t offset;
  std::size_t size;
};

/// One bias-corrected Adam update over a flat parameter vector. Non-finite
/// gradients reject the whole step (parameters and state untouched) with an
/// error naming the offending range.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::span<const NamedRange> ranges = {});

/// Model-aware overload: keeps embedding row 0 at zero.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state);

enum class CalibrationKind { logistic_linear, saps_curve };

/// logistic_linear: logit p = b0 + b1 s. saps_curve: logit p = g0 + g1 s + g2 ln(s + 1).
struct CalibrationModel {
  CalibrationKind kind = CalibrationKind::logistic_linear;
  std::vector<double> coef;
  int iterations = 0;
  double final_objective = 0.0;
  std::vector<double> cost_trace;  // LM fits: cost after each accepted step, not persisted
  std::string warning;
};

double severity_to_probability(double score, const CalibrationModel& model);
std::string_view calibration_kind_name(CalibrationKind k);

/// Maximum-likelihood logistic regression by damped Newton iterations.
/// Perfectly separated data fall back to a ridge-penalised fit and set `warning`.
CalibrationModel fit_logistic(std::span<const double> scores, std::span<const double> outcomes);

struct LmOptions {
  double initial_lambda = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double max_lambda = 1e16;
  double rel_tolerance = 1e-10;
  int max_iterations = 200;
  bool check_jacobian = true;
  double jacobian_check_tolerance = 1e-4;
};

struct LmResult {
  Eigen::VectorXd params;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::vector<double> accepted_costs;  // cost after each accepted step, starting with the initial cost
  bool converged = false;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Levenberg-Marquardt on cost = 0.5 ||r||^2 with Marquardt diagonal scaling.
/// lambda starts at 1e-3, x10 on a rejected step, /10 on an accepted one.
LmResult lm_fit(const ResidualFn& residual, const JacobianFn& jacobian, Eigen::VectorXd initial,
                const LmOptions& options = {});

/// Curve fit of a calibration model by LM on signed deviance residuals, which
/// makes the least-squares optimum the binomial maximum-likelihood fit.
/// Outcomes may be binary or observed proportions in [0, 1].
CalibrationModel fit_calibration_lm(CalibrationKind kind, std::span<const double> scores,
                                    std::span<const double> outcomes, const LmOptions& options = {});

void write_calibration(std::ostream& out, const CalibrationModel& model);
CalibrationModel read_calibration(std::istream& in);

}  // namespace ehrseq
