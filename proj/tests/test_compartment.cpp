#include <doctest.h>

#include "oracles.hpp"
#include "rdtac/compartment.hpp"
#include "rdtac/errors.hpp"
#include "rdtac/phantom.hpp"

using namespace rdtac;
using doctest::Approx;

namespace {

const FengParams kFeng{85.11225, 2.187980, 2.081130, 4.133859, 0.01043449, 0.1190996};

CompartmentModelSpec spec(int n, std::vector<double> rates, double vb = 0.0) {
  CompartmentModelSpec s;
  s.n_tissue = n;
  s.rates = std::move(rates);
  s.vb = vb;
  return s;
}

// e^{-t} sampled on a dyadic grid, so every segment has the same exact length.
InputFunction fine_exponential(double t_end, int per_minute) {
  std::vector<double> t, v;
  const int n = static_cast<int>(t_end * per_minute);
  for (int i = 0; i <= n; ++i) {
    t.push_back(static_cast<double>(i) / per_minute);
    v.push_back(std::exp(-t.back()));
  }
  return InputFunction::sampled(Tac(t, v));
}

std::vector<double> frame_times(int n) {
  auto t = PhantomConfig::default_frame_times(15);
  t.resize(static_cast<std::size_t>(n));
  return t;
}

// Catenary ODE right-hand side for the RK4 oracle.
Eigen::VectorXd catenary_rhs(const CompartmentModelSpec& s, const InputFunction& cp, double t,
                             const Eigen::VectorXd& c) {
  const auto& k = s.rates;
  Eigen::VectorXd d(c.size());
  if (s.n_tissue == 1) {
    d(0) = k[0] * cp(t) - k[1] * c(0);
  } else if (s.n_tissue == 2) {
    d(0) = k[0] * cp(t) - (k[1] + k[2]) * c(0) + k[3] * c(1);
    d(1) = k[2] * c(0) - k[3] * c(1);
  } else {
    d(0) = k[0] * cp(t) - (k[1] + k[2]) * c(0) + k[3] * c(1);
    d(1) = k[2] * c(0) - (k[3] + k[4]) * c(1) + k[5] * c(2);
    d(2) = k[4] * c(1) - k[5] * c(2);
  }
  return d;
}

}  // namespace

TEST_CASE("spec validation and names") {
  CHECK_THROWS_AS(spec(4, {1, 1, 1, 1, 1, 1, 1, 1}).validate(), ArgumentError);
  CHECK_THROWS_AS(spec(2, {1, 1, 1}).validate(), ArgumentError);
  CHECK_THROWS_AS(spec(1, {-1, 1}).validate(), ArgumentError);
  CHECK_THROWS_AS(spec(1, {1, 1}, 1.0).validate(), ArgumentError);
  CHECK(spec(3, {1, 1, 1, 1, 1, 1}).model_name() == "3tcm");
  CHECK(tissue_count_from_name("2tcm") == 2);
  CHECK_THROWS_AS(tissue_count_from_name("4tcm"), ArgumentError);
}

TEST_CASE("Feng input") {
  CHECK(feng_value(kFeng, 0.0) == Approx(0.0).scale(1.0));
  CHECK(feng_value(FengParams{}, 3.0) == 0.0);
  const FengParams single{2.0, 0.0, 0.0, 0.5, 0.0, 0.0};
  const double peak = feng_value(single, 2.0);
  CHECK(peak == Approx(2.0 * 2.0 * std::exp(-1.0)));
  CHECK(feng_value(single, 1.9) < peak);
  CHECK(feng_value(single, 2.1) < peak);
  const std::vector<double> times{0.0, 1.0, 10.0};
  const auto tac = feng_input(kFeng, times);
  CHECK(tac.values[0] == Approx(0.0).scale(1.0));
  CHECK(tac.values[1] > 0.0);
}

TEST_CASE("sampled input semantics") {
  const auto in = InputFunction::sampled(Tac({1.0, 2.0, 4.0}, {2.0, 4.0, 0.0}));
  CHECK(in(0.5) == 0.0);
  CHECK(in(1.5) == Approx(3.0));
  CHECK(in(3.0) == Approx(2.0));
  CHECK(in(10.0) == 0.0);
  CHECK_THROWS_AS(InputFunction::sampled(Tac({}, {})), ArgumentError);
}

TEST_CASE("compartment forward closed forms") {
  SUBCASE("pure integration") {
    const auto cp = InputFunction::sampled(Tac({0.0}, {1.0}));
    const std::vector<double> t{0.5, 1.0, 7.25};
    const auto c = compartment_forward(spec(1, {1.0, 0.0}), cp, t);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(c.values[i] == Approx(t[i]).epsilon(1e-12));
  }
  SUBCASE("exponential input") {
    const auto cp = fine_exponential(6.0, 4096);
    const std::vector<double> t{0.25, 1.0, 2.0, 3.5, 6.0};
    const auto c = compartment_forward(spec(1, {1.0, 2.0}), cp, t);
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(std::abs(c.values[i] - (std::exp(-t[i]) - std::exp(-2 * t[i]))) < 1e-8);
    }
    CHECK(c.values[1] == Approx(0.36788 - 0.13534).epsilon(1e-4));
  }
  SUBCASE("no uptake leaves only the blood fraction") {
    const auto cp = InputFunction::feng(kFeng);
    const std::vector<double> t{0.5, 3.0, 40.0};
    const auto c = compartment_forward(spec(2, {0.0, 0.3, 0.1, 0.05}, 0.07), cp, t);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(c.values[i] == 0.07 * cp(t[i]));
  }
  SUBCASE("errors") {
    const auto cp = InputFunction::feng(kFeng);
    CHECK_THROWS_AS(compartment_forward(spec(1, {1.0}), cp, std::vector<double>{1.0}), ArgumentError);
    CHECK_THROWS_AS(compartment_forward(spec(1, {1.0, 1.0}), cp, std::vector<double>{2.0, 1.0}), ArgumentError);
  }
}

TEST_CASE("exponential integrator matches fine RK4") {
  const auto cp = InputFunction::feng(kFeng);
  const std::vector<std::vector<double>> cases = {{0.6, 0.2, 0.08, 0.02}, {0.3, 0.5, 0.3, 0.1}, {1.2, 0.05, 0.01, 0.2}};
  for (const auto& rates : cases) {
    const auto s = spec(2, rates);
    const std::vector<double> t{0.75, 2.0, 10.0, 30.0};
    const auto c = compartment_forward(s, cp, t);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(2);
    double t0 = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const int steps = static_cast<int>(std::lround((t[i] - t0) * 64 * 8));
      y = oracle::rk4([&](double tt, const Eigen::VectorXd& c2) { return catenary_rhs(s, cp, tt, c2); }, y, t0, t[i],
                      steps);
      t0 = t[i];
      CHECK(std::abs(c.values[i] - y.sum()) < 1e-8);
    }
  }
}

TEST_CASE("linearity in K1") {
  const auto cp = InputFunction::feng(kFeng);
  const std::vector<double> t{1.0, 5.0, 20.0};
  const auto a = compartment_forward(spec(3, {0.4, 0.2, 0.1, 0.05, 0.03, 0.01}, 0.05), cp, t);
  const auto b = compartment_forward(spec(3, {1.2, 0.2, 0.1, 0.05, 0.03, 0.01}, 0.05), cp, t);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(b.values[i] - 0.05 * cp(t[i]) == Approx(3.0 * (a.values[i] - 0.05 * cp(t[i]))).epsilon(1e-10));
  }
}

TEST_CASE("fit recovers a noiseless 1TCM") {
  const auto cp = InputFunction::feng(kFeng);
  const auto t = frame_times(11);
  const auto tac = compartment_forward(spec(1, {0.5, 0.3}), cp, t);
  FitOptions opts;
  opts.seed = 1;
  const auto fit = lm_fit(tac, cp, 1, 11, opts);
  CHECK(fit.spec.rates[0] == Approx(0.5).epsilon(0.02));
  CHECK(fit.spec.rates[1] == Approx(0.3).epsilon(0.02));
  CHECK(fit.converged);

  // The chosen start can only improve on its initial point.
  for (const auto& p : multistart_points(1, opts.n_starts, opts.seed)) {
    const auto s0 = spec(1, {std::exp(p[0]), std::exp(p[1])});
    CHECK(fit.rss <= compartment_rss(s0, cp, tac, 11));
  }
}

TEST_CASE("fit handles degenerate and vb cases") {
  const auto cp = InputFunction::feng(kFeng);
  const auto t = frame_times(11);
  const auto zero = lm_fit(Tac(t, std::vector<double>(11, 0.0)), cp, 3, 11, FitOptions{});
  CHECK(zero.rss == 0.0);
  CHECK(zero.converged);
  CHECK(zero.spec.rates[0] == 0.0);

  const auto tac = compartment_forward(spec(1, {0.4, 0.1}, 0.08), cp, t);
  FitOptions opts;
  opts.fit_vb = true;
  const auto fit = lm_fit(tac, cp, 1, 11, opts);
  CHECK(fit.spec.vb == Approx(0.08).epsilon(0.05));
  CHECK(fit.spec.rates[0] == Approx(0.4).epsilon(0.05));

  CHECK_THROWS_AS(lm_fit(tac, cp, 1, 12, opts), ArgumentError);
  CHECK_THROWS_AS(lm_fit(tac, cp, 4, 11, opts), ArgumentError);
}

TEST_CASE("multistart points are seeded and in range") {
  const auto a = multistart_points(3, 8, 5), b = multistart_points(3, 8, 5);
  CHECK(a == b);
  for (const auto& p : a) {
    CHECK(p.size() == 6);
    for (double v : p) {
      CHECK(v >= std::log(1e-3));
      CHECK(v <= std::log(10.0));
    }
  }
}

TEST_CASE("extrapolation") {
  const auto t = frame_times(15);
  const std::vector<double> fit_t(t.begin(), t.begin() + 11), test_t(t.begin() + 11, t.end());

  SUBCASE("inside the fit window it is the forward model") {
    const auto cp = InputFunction::feng(kFeng);
    FitResult fit;
    fit.spec = spec(2, {0.5, 0.2, 0.1, 0.05});
    const auto ex = ctm_extrapolate(fit, cp, fit_t);
    CHECK(ex.tac.values == compartment_forward(fit.spec, cp, fit_t).values);
  }
  SUBCASE("no uptake extrapolates the blood fraction of the input") {
    const auto cp = InputFunction::feng(kFeng);
    FitResult fit;
    fit.spec = spec(1, {0.0, 0.2}, 0.1);
    const auto ex = ctm_extrapolate(fit, cp, test_t);
    for (std::size_t i = 0; i < test_t.size(); ++i) CHECK(ex.tac.values[i] == Approx(0.1 * cp(test_t[i])));
  }
  SUBCASE("self-consistent 1TCM on a frame-sampled input") {
    std::vector<double> st{0.0}, sv{0.0};
    for (double x : fit_t) {
      st.push_back(x);
      sv.push_back(feng_value(kFeng, x));
    }
    const auto cp = InputFunction::sampled(Tac(st, sv));
    const auto truth_spec = spec(1, {0.6, 0.15});
    const auto full = InputFunction::feng(kFeng);
    const auto tac = compartment_forward(truth_spec, cp, fit_t);
    const auto fit = lm_fit(tac, cp, 1, 11, FitOptions{});
    const auto ex = ctm_extrapolate(fit, cp, test_t);
    CHECK_FALSE(ex.constant_tail);
    const auto ref = compartment_forward(truth_spec, full, test_t);
    for (std::size_t i = 0; i < test_t.size(); ++i) CHECK(ex.tac.values[i] == Approx(ref.values[i]).epsilon(0.01));
  }
  SUBCASE("short input falls back to a flagged constant tail") {
    const auto cp = InputFunction::sampled(Tac({0.0, 1.0}, {0.0, 2.0}));
    FitResult fit;
    fit.spec = spec(1, {0.0, 0.1}, 0.5);
    const std::vector<double> later{3.0, 5.0};
    const auto ex = ctm_extrapolate(fit, cp, later);
    CHECK(ex.constant_tail);
    CHECK(ex.tac.values[0] == Approx(1.0));
    CHECK(ex.tac.values[1] == Approx(1.0));
  }
}

TEST_CASE("fit results round trip through JSON") {
  FitResult f;
  f.spec = spec(3, {0.5, 0.2, 0.1, 0.05, 0.02, 0.01}, 0.03);
  f.rss = 1.25;
  f.n_iters = 17;
  f.converged = true;
  f.multistart_index = 4;
  const auto back = fit_result_from_json(fit_result_to_json(f));
  CHECK(back.spec.rates == f.spec.rates);
  CHECK(back.spec.vb == f.spec.vb);
  CHECK(back.rss == f.rss);
  CHECK(back.multistart_index == 4);
  CHECK_THROWS_AS(fit_result_from_json(nlohmann::json{{"model", "3tcm"}}), FormatError);
}
