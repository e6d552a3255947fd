#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "svmixer/optim.hpp"

using namespace svmixer;
using svmixer::test::random_tensor;

namespace {

ParameterStore one(double v) {
  ParameterStore s;
  s.add("p", Tensor({1}, v));
  return s;
}

}  // namespace

TEST_CASE("adamw: zero gradient without decay leaves parameters unchanged") {
  ParameterStore p;
  p.add("a", random_tensor({3, 2}, 1));
  p.add("b", random_tensor({4}, 2));
  const ParameterStore before = p;
  AdamWState st = make_adamw_state(p);
  for (int i = 0; i < 3; ++i) adamw_step(p, p.zeros_like(), st, 1e-3, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.entries()[i].second == before.entries()[i].second);
  CHECK(st.step == 3);
}

TEST_CASE("adamw: one step with g=1 moves by lr/(1+eps)") {
  ParameterStore p = one(0.5);
  AdamWState st = make_adamw_state(p);
  adamw_step(p, one(1.0), st, 2e-4, 0.0);
  CHECK(std::abs(p.get("p")[0] - (0.5 - 2e-4 / (1.0 + 1e-8))) <= 1e-16);

  // Sign follows the gradient, magnitude does not.
  ParameterStore q = one(0.5);
  AdamWState sq = make_adamw_state(q);
  adamw_step(q, one(-37.0), sq, 2e-4, 0.0);
  CHECK(std::abs(q.get("p")[0] - (0.5 + 2e-4 * 37.0 / (37.0 + 1e-8))) <= 1e-16);
}

TEST_CASE("adamw: decay without gradient is a pure multiplicative shrink") {
  ParameterStore p = one(3.0);
  AdamWState st = make_adamw_state(p);
  double want = 3.0;
  for (int i = 0; i < 5; ++i) {
    adamw_step(p, one(0.0), st, 1e-2, 2e-5);
    want *= 1.0 - 1e-2 * 2e-5;
  }
  CHECK(std::abs(p.get("p")[0] - want) <= 1e-15);
}

TEST_CASE("adamw: two-step closed form") {
  ParameterStore p = one(1.0);
  AdamWState st = make_adamw_state(p);
  const double lr = 0.1, wd = 0.01, g1 = 2.0, g2 = -1.0;
  adamw_step(p, one(g1), st, lr, wd);
  adamw_step(p, one(g2), st, lr, wd);
  double x = 1.0;
  x -= lr * wd * x;
  x -= lr * ((0.1 * g1) / 0.1) / (std::sqrt((0.001 * g1 * g1) / 0.001) + 1e-8);
  const double m2 = 0.9 * 0.1 * g1 + 0.1 * g2, v2 = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
  x -= lr * wd * x;
  x -= lr * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(std::abs(p.get("p")[0] - x) <= 1e-12);
}

TEST_CASE("plateau: six equal losses halve the rate after epoch 6") {
  PlateauScheduler s(2e-4, 5, 0.5);
  std::vector<bool> fired;
  for (int e = 0; e < 6; ++e) fired.push_back(s.step(1.0));
  CHECK(fired == std::vector<bool>{false, false, false, false, false, true});
  CHECK(s.lr() == 1e-4);
}

TEST_CASE("plateau: improvement resets the counter") {
  PlateauScheduler s(1.0, 3, 0.5);
  for (double m : {5.0, 5.0, 5.0, 4.0, 4.0, 4.0}) CHECK_FALSE(s.step(m));
  CHECK(s.step(4.0));
  CHECK(s.lr() == 0.5);
}

TEST_CASE("early stopping fires ten epochs after the best") {
  EarlyStopping es(10);
  int stopped = 0;
  for (int e = 1; e <= 16; ++e)
    if (es.step(1.0)) {
      stopped = e;
      break;
    }
  CHECK(stopped == 11);
  CHECK(es.best_epoch() == 1);
}

TEST_CASE("learning rate never increases and stays on lr0 * 2^-k") {
  PlateauScheduler s(2e-4, 5, 0.5);
  Rng rng(3);
  double prev = s.lr();
  for (int e = 0; e < 200; ++e) {
    s.step(rng.uniform() < 0.1 ? 1.0 / (e + 1) : 10.0);
    CHECK(s.lr() <= prev);
    const double k = std::log2(2e-4 / s.lr());
    CHECK(std::abs(k - std::round(k)) <= 1e-12);
    prev = s.lr();
  }
}
