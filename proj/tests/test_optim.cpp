#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ehrseq/optim.hpp"
#include "ehrseq/random.hpp"

using namespace ehrseq;

TEST_CASE("first Adam step moves each coordinate by about the learning rate") {
  std::vector<double> p = {1.0, -2.0, 0.5};
  const std::vector<double> g = {0.3, -4.0, 1e-3};
  AdamState st(3, AdamHyper{0.01});
  adam_step(p, g, st);
  CHECK(st.step == 1);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));
}

TEST_CASE("Adam matches a hand-rolled reference over several steps") {
  std::vector<double> p = {0.2}, ref = {0.2};
  AdamState st(1, AdamHyper{0.1});
  double m = 0, v = 0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2 * p[0] - 1.0;
    const std::vector<double> gv = {g};
    adam_step(p, gv, st);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    ref[0] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p[0] == doctest::Approx(ref[0]).epsilon(1e-12));
  }
}

TEST_CASE("non-finite gradients reject the step and name the block") {
  std::vector<double> p = {1.0, 2.0};
  const std::vector<double> g = {0.1, NAN};
  AdamState st(2);
  const std::vector<NamedRange> ranges = {{"alpha", 0, 1}, {"beta", 1, 1}};
  try {
    adam_step(p, g, st, ranges);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("beta") != std::string::npos);
  }
  CHECK(p[0] == 1.0);
  CHECK(st.step == 0);
}

TEST_CASE("model-aware Adam keeps the missing-token embedding at zero") {
  ModelConfig c;
  c.vocab_size = 5;
  c.embed_dim = 2;
  c.hidden_units = 2;
  c.horizon_hours = 2;
  auto p = init_params(c, 1);
  Gradients g(c);
  for (auto& x : g.flat()) x = 1.0;
  AdamState st(p.flat().size());
  adam_step(p, g, st);
  CHECK(p.embedding().row(0).isZero());
}

namespace {

struct LogisticSample {
  std::vector<double> s, y;
};

LogisticSample logistic_sample(std::size_t n, double b0, double b1, std::uint64_t seed) {
  Rng rng(seed);
  LogisticSample out;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rng.uniform(0.0, 60.0);
    out.s.push_back(s);
    out.y.push_back(rng.bernoulli(1 / (1 + std::exp(-(b0 + b1 * s)))) ? 1.0 : 0.0);
  }
  return out;
}

}  // namespace

TEST_CASE("Newton logistic fit and LM fit agree") {
  const auto d = logistic_sample(3000, -4.0, 0.08, 3);
  const auto a = fit_logistic(d.s, d.y);
  const auto b = fit_calibration_lm(CalibrationKind::logistic_linear, d.s, d.y);
  CHECK(a.warning.empty());
  CHECK(a.coef[1] == doctest::Approx(0.08).epsilon(0.25));
  for (double s : {0.0, 10.0, 30.0, 60.0})
    CHECK(std::abs(severity_to_probability(s, a) - severity_to_probability(s, b)) < 1e-5);
}

TEST_CASE("separated data fall back to a penalised fit with a warning") {
  const std::vector<double> s = {1, 2, 3, 4}, y = {0, 0, 1, 1};
  const auto m = fit_logistic(s, y);
  CHECK_FALSE(m.warning.empty());
  CHECK(std::isfinite(m.coef[1]));
}

TEST_CASE("LM on a quadratic bowl converges with non-increasing cost") {
  const ResidualFn r = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(3);
    out << x[0] - 1.0, 10 * (x[1] - x[0] * x[0]), 0.5 * x[1];
    return out;
  };
  const JacobianFn j = [](const Eigen::VectorXd& x) {
    Eigen::MatrixXd out(3, 2);
    out << 1, 0, -20 * x[0], 10, 0, 0.5;
    return out;
  };
  Eigen::VectorXd x0(2);
  x0 << -1.5, 2.0;
  const auto fit = lm_fit(r, j, x0);
  CHECK(fit.converged);
  for (std::size_t i = 1; i < fit.accepted_costs.size(); ++i) CHECK(fit.accepted_costs[i] <= fit.accepted_costs[i - 1]);
  CHECK(fit.final_cost < fit.initial_cost);
}

TEST_CASE("LM rejects a wrong Jacobian") {
  const ResidualFn r = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x.array().square()); };
  const JacobianFn j = [](const Eigen::VectorXd& x) { return Eigen::MatrixXd(x.asDiagonal()); };
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(2, 1.0);
  CHECK_THROWS_AS(lm_fit(r, j, x0), Error);
}

TEST_CASE("severity curve recovers its coefficients from expected proportions") {
  Rng rng(5);
  std::vector<double> s, y;
  for (int i = 0; i < 2000; ++i) {
    const double score = rng.uniform(0.0, 110.0);
    s.push_back(score);
    y.push_back(1 / (1 + std::exp(-(-7.7631 + 0.0737 * score + 0.9971 * std::log(score + 1)))));
  }
  const auto m = fit_calibration_lm(CalibrationKind::saps_curve, s, y);
  CHECK(m.coef[0] == doctest::Approx(-7.7631).epsilon(1e-3));
  CHECK(m.coef[1] == doctest::Approx(0.0737).epsilon(1e-3));
  CHECK(m.coef[2] == doctest::Approx(0.9971).epsilon(1e-3));
  CHECK_THROWS_AS(severity_to_probability(-1.0, m), Error);
}

TEST_CASE("calibration inputs are validated") {
  const std::vector<double> s = {1, 2, 3}, bad = {0, 2, 1}, one = {1, 1, 1};
  CHECK_THROWS_AS(fit_logistic(s, bad), Error);
  CHECK_THROWS_AS(fit_logistic(s, one), Error);
  const std::vector<double> same = {4, 4, 4}, y = {0, 1, 0};
  CHECK_THROWS_AS(fit_calibration_lm(CalibrationKind::logistic_linear, same, y), Error);
}

TEST_CASE("calibration records round trip") {
  CalibrationModel m;
  m.kind = CalibrationKind::saps_curve;
  m.coef = {-7.5, 0.07, 1.0 / 3.0};
  m.iterations = 12;
  m.final_objective = 0.25;
  m.warning = "iteration limit reached";
  std::stringstream ss;
  write_calibration(ss, m);
  const auto back = read_calibration(ss);
  CHECK(back.kind == m.kind);
  CHECK(back.coef == m.coef);
  CHECK(back.warning == m.warning);
  std::stringstream broken("kind=other\n");
  CHECK_THROWS_AS(read_calibration(broken), Error);
}
