#include "ehrseq/optim.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace ehrseq {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::span<const NamedRange> ranges) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw_usage("adam_step: parameter, gradient and moment sizes differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (std::isfinite(grads[i])) continue;
    std::string where = "index " + std::to_string(i);
    for (const auto& r : ranges)
      if (i >= r.offset && i < r.offset + r.size) where = r.name + "[" + std::to_string(i - r.offset) + "]";
    throw_numeric("non-finite gradient in block " + where + "; update rejected");
  }
  const auto& hp = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
  }
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state) {
  std::vector<NamedRange> ranges;
  for (const auto& b : params.blocks()) ranges.push_back(NamedRange{b.name, b.offset, b.size()});
  if (state.m.empty()) state = AdamState(params.flat().size(), state.hyper);
  adam_step(params.flat(), grads.flat(), state, ranges);
  params.embedding().row(Vocab::kMissing).setZero();
}

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd features(CalibrationKind kind, double s) {
  if (kind == CalibrationKind::logistic_linear) return Eigen::Vector2d(1.0, s);
  if (s < 0.0) throw_data("saps_curve is defined for non-negative scores (got " + format_double(s) + ")");
  return Eigen::Vector3d(1.0, s, std::log1p(s));
}

void check_calibration_inputs(std::span<const double> scores, std::span<const double> outcomes) {
  if (scores.size() != outcomes.size()) throw_usage("scores and outcomes differ in length");
  bool distinct = false;
  double lo = 1, hi = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw_data("non-finite severity score");
    if (!(outcomes[i] >= 0.0 && outcomes[i] <= 1.0)) throw_data("outcomes must lie in [0, 1]");
    if (scores[i] != scores[0]) distinct = true;
    lo = std::min(lo, outcomes[i]);
    hi = std::max(hi, outcomes[i]);
  }
  if (!distinct) throw_data("calibration needs at least two distinct scores");
  if (!(lo < hi)) throw_data("calibration needs both outcome classes");
}

bool separated(std::span<const double> scores, std::span<const double> outcomes) {
  double max0 = -INFINITY, min0 = INFINITY, max1 = -INFINITY, min1 = INFINITY;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (outcomes[i] == 0.0) {
      max0 = std::max(max0, scores[i]);
      min0 = std::min(min0, scores[i]);
    } else if (outcomes[i] == 1.0) {
      max1 = std::max(max1, scores[i]);
      min1 = std::min(min1, scores[i]);
    } else {
      return false;
    }
  }
  return max0 <= min1 || max1 <= min0;
}

double mean_outcome(std::span<const double> outcomes) {
  double m = 0;
  for (double y : outcomes) m += y;
  return m / static_cast<double>(outcomes.size());
}

}  // namespace

std::string_view calibration_kind_name(CalibrationKind k) {
  return k == CalibrationKind::logistic_linear ? "logistic_linear" : "saps_curve";
}

double severity_to_probability(double score, const CalibrationModel& model) {
  if (model.kind == CalibrationKind::saps_curve && score < 0.0)
    throw_data("saps_curve is defined for non-negative scores (got " + format_double(score) + ")");
  const auto phi = features(model.kind, score);
  if (static_cast<std::size_t>(phi.size()) != model.coef.size()) throw_usage("calibration coefficient count mismatch");
  const double eta = phi.dot(Eigen::Map<const Eigen::VectorXd>(model.coef.data(), phi.size()));
  return std::clamp(logistic(eta), 1e-12, 1.0 - 1e-12);
}

CalibrationModel fit_logistic(std::span<const double> scores, std::span<const double> outcomes) {
  check_calibration_inputs(scores, outcomes);
  CalibrationModel model;
  model.kind = CalibrationKind::logistic_linear;
  double ridge = 0.0;
  if (separated(scores, outcomes)) {
    ridge = 1.0;
    model.warning = "perfect separation: ridge-penalised fit (lambda=1) used";
  }
  const double ybar = std::clamp(mean_outcome(outcomes), 1e-6, 1 - 1e-6);
  Eigen::Vector2d beta(std::log(ybar / (1 - ybar)), 0.0);

  const auto objective = [&](const Eigen::Vector2d& b) {
    double ll = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double eta = b[0] + b[1] * scores[i];
      ll += outcomes[i] * -softplus(-eta) + (1 - outcomes[i]) * -softplus(eta);
    }
    return ll - 0.5 * ridge * b.squaredNorm();
  };

  double current = objective(beta);
  int it = 0;
  for (; it < 100; ++it) {
    Eigen::Vector2d grad = -ridge * beta;
    Eigen::Matrix2d hess = ridge * Eigen::Matrix2d::Identity();
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const Eigen::Vector2d x(1.0, scores[i]);
      const double p = logistic(beta.dot(x));
      grad += (outcomes[i] - p) * x;
      hess += p * (1 - p) * x * x.transpose();
    }
    if (grad.norm() < 1e-8) break;
    const Eigen::Vector2d step = hess.ldlt().solve(grad);
    if (!step.allFinite()) throw_numeric("logistic fit: singular Hessian");
    double t = 1.0;
    bool moved = false;
    for (int halvings = 0; halvings < 40; ++halvings, t *= 0.5) {
      const Eigen::Vector2d cand = beta + t * step;
      const double obj = objective(cand);
      if (obj >= current) {
        beta = cand;
        current = obj;
        moved = true;
        break;
      }
    }
    if (!moved) break;  // at machine precision
  }
  model.coef = {beta[0], beta[1]};
  model.iterations = it;
  model.final_objective = -current;
  return model;
}

LmResult lm_fit(const ResidualFn& residual, const JacobianFn& jacobian, Eigen::VectorXd initial,
                const LmOptions& options) {
  LmResult out;
  Eigen::VectorXd x = std::move(initial);
  Eigen::VectorXd r = residual(x);
  Eigen::MatrixXd jac = jacobian(x);
  if (!r.allFinite() || !jac.allFinite()) throw_numeric("lm_fit: non-finite residual or Jacobian at the initial point");
  if (jac.rows() != r.size() || jac.cols() != x.size()) throw_usage("lm_fit: Jacobian shape does not match");

  if (options.check_jacobian) {
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
      Eigen::VectorXd xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const Eigen::VectorXd fd = (residual(xp) - residual(xm)) / (2 * h);
      const double scale = std::max(1.0, jac.col(k).cwiseAbs().maxCoeff());
      const double err = (fd - jac.col(k)).cwiseAbs().maxCoeff() / scale;
      if (err > options.jacobian_check_tolerance)
        throw_usage("lm_fit: Jacobian column " + std::to_string(k) + " disagrees with finite differences (error " +
                    format_double(err) + ")");
    }
  }

  double cost = 0.5 * r.squaredNorm();
  out.initial_cost = cost;
  out.accepted_costs.push_back(cost);
  double lambda = options.initial_lambda;

  while (out.iterations < options.max_iterations) {
    if (cost == 0.0) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd a = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;
    if (g.cwiseAbs().maxCoeff() == 0.0) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd diag = a.diagonal();
    const double floor = 1e-12 * std::max(1.0, diag.maxCoeff());
    diag = diag.cwiseMax(floor);

    bool accepted = false;
    bool solver_failed = false;
    while (true) {
      Eigen::MatrixXd m = a;
      m.diagonal() += lambda * diag;
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
      const Eigen::VectorXd step = ldlt.solve(-g);
      solver_failed = ldlt.info() != Eigen::Success || !step.allFinite();
      if (!solver_failed) {
        const Eigen::VectorXd xn = x + step;
        const Eigen::VectorXd rn = residual(xn);
        const double cn = rn.allFinite() ? 0.5 * rn.squaredNorm() : INFINITY;
        if (cn < cost) {
          const double rel = (cost - cn) / cost;
          x = xn;
          r = rn;
          cost = cn;
          jac = jacobian(x);
          lambda = std::max(lambda / options.lambda_down, 1e-300);
          out.accepted_costs.push_back(cost);
          accepted = true;
          if (rel < options.rel_tolerance) out.converged = true;
          break;
        }
      }
      lambda *= options.lambda_up;
      if (lambda > options.max_lambda) break;
    }
    if (!accepted) {
      if (solver_failed)
        throw_numeric("lm_fit: singular normal equations at maximum damping (lambda=" + format_double(lambda) +
                      ", cost=" + format_double(cost) + ", iterations=" + std::to_string(out.iterations) + ")");
      out.converged = true;  // no representable decrease left
      break;
    }
    ++out.iterations;
    if (out.converged) break;
  }
  out.params = x;
  out.final_cost = cost;
  return out;
}

CalibrationModel fit_calibration_lm(CalibrationKind kind, std::span<const double> scores,
                                    std::span<const double> outcomes, const LmOptions& options) {
  check_calibration_inputs(scores, outcomes);
  const auto n = static_cast<Eigen::Index>(scores.size());
  const Eigen::Index k = kind == CalibrationKind::logistic_linear ? 2 : 3;
  Eigen::MatrixXd phi(n, k);
  for (Eigen::Index i = 0; i < n; ++i) phi.row(i) = features(kind, scores[static_cast<std::size_t>(i)]).transpose();

  // Signed deviance residual and its derivative with respect to the linear predictor.
  const auto eval = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* r, Eigen::VectorXd* dr) {
    const Eigen::VectorXd eta = phi * theta;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double y = outcomes[static_cast<std::size_t>(i)];
      const double log_p = -softplus(-eta[i]);
      const double log_q = -softplus(eta[i]);
      const double p = std::exp(log_p);
      double dev = 0.0;
      if (y > 0) dev += y * (std::log(y) - log_p);
      if (y < 1) dev += (1 - y) * (std::log1p(-y) - log_q);
      const double ri = (p >= y ? 1.0 : -1.0) * std::sqrt(2.0 * std::max(dev, 0.0));
      if (r) (*r)[i] = ri;
      if (dr) (*dr)[i] = std::abs(ri) > 1e-8 ? (p - y) / ri : std::sqrt(p * (1 - p));
    }
  };
  const ResidualFn res = [&](const Eigen::VectorXd& theta) {
    Eigen::VectorXd r(n);
    eval(theta, &r, nullptr);
    return r;
  };
  const JacobianFn jac = [&](const Eigen::VectorXd& theta) {
    Eigen::VectorXd dr(n);
    eval(theta, nullptr, &dr);
    return Eigen::MatrixXd(dr.asDiagonal() * phi);
  };
  const double ybar = std::clamp(mean_outcome(outcomes), 1e-6, 1 - 1e-6);
  Eigen::VectorXd init = Eigen::VectorXd::Zero(k);
  init[0] = std::log(ybar / (1 - ybar));
  const auto fit = lm_fit(res, jac, init, options);

  CalibrationModel model;
  model.kind = kind;
  model.coef.assign(fit.params.data(), fit.params.data() + fit.params.size());
  model.iterations = fit.iterations;
  model.final_objective = fit.final_cost;
  model.cost_trace = fit.accepted_costs;
  if (!fit.converged) model.warning = "iteration limit reached";
  return model;
}

void write_calibration(std::ostream& out, const CalibrationModel& model) {
  out << "kind=" << calibration_kind_name(model.kind) << "\ncoef=";
  for (std::size_t i = 0; i < model.coef.size(); ++i) out << (i ? "," : "") << format_double(model.coef[i]);
  out << "\niterations=" << model.iterations << "\nfinal_objective=" << format_double(model.final_objective)
      << "\nwarning=" << model.warning << '\n';
}

CalibrationModel read_calibration(std::istream& in) {
  CalibrationModel model;
  std::string line;
  bool have_kind = false;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = line.substr(0, eq);
    const auto val = line.substr(eq + 1);
    if (key == "kind") {
      if (val == "logistic_linear") model.kind = CalibrationKind::logistic_linear;
      else if (val == "saps_curve") model.kind = CalibrationKind::saps_curve;
      else throw_data("unknown calibration kind " + val);
      have_kind = true;
    } else if (key == "coef") {
      for (auto part : split(val, ',')) {
        const auto v = parse_double(part);
        if (!v) throw_data("bad calibration coefficient");
        model.coef.push_back(*v);
      }
    } else if (key == "iterations") {
      model.iterations = static_cast<int>(parse_int(val).value_or(0));
    } else if (key == "final_objective") {
      model.final_objective = parse_double(val).value_or(0.0);
    } else if (key == "warning") {
      model.warning = val;
    }
  }
  if (!have_kind || model.coef.size() != (model.kind == CalibrationKind::logistic_linear ? 2u : 3u))
    throw_data("incomplete calibration record");
  return model;
}

}  // namespace ehrseq
