#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "svmixer/distill.hpp"
#include "svmixer/errors.hpp"

using namespace svmixer;
using svmixer::test::random_tensor;

namespace {

// Unit embedding along axis 0 and class rows with the requested cosines to it.
std::pair<Tensor, Tensor> with_cosines(const std::vector<double>& cos) {
  const std::size_t c = cos.size(), d = c + 1;
  Tensor e({d});
  e[0] = 1.0;
  Tensor w({c, d});
  for (std::size_t j = 0; j < c; ++j) {
    w.at(j, 0) = cos[j];
    w.at(j, j + 1) = std::sqrt(1.0 - cos[j] * cos[j]);
  }
  return {e, w};
}

long double aam_oracle(const std::vector<double>& cos, std::size_t y, double s, double m,
                       const std::vector<double>& u = {}) {
  const long double num = std::exp((long double)s * std::cos(std::acos((long double)cos[y]) + m));
  long double den = num;
  for (std::size_t j = 0; j < cos.size(); ++j)
    if (j != y) den += (u.empty() ? 1.0L : u[j]) * std::exp((long double)s * cos[j]);
  return -std::log(num / den);
}

}  // namespace

TEST_CASE("AAM without margin at unit scale is cross-entropy over cosines") {
  const Tensor e = random_tensor({5}, 1), w = random_tensor({3, 5}, 2);
  for (std::size_t y = 0; y < 3; ++y) {
    std::vector<double> cos(3);
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0, ne = 0, nw = 0;
      for (std::size_t i = 0; i < 5; ++i) dot += e[i] * w.at(j, i), ne += e[i] * e[i], nw += w.at(j, i) * w.at(j, i);
      cos[j] = dot / std::sqrt(ne * nw);
    }
    double z = 0;
    for (double c : cos) z += std::exp(c);
    const double ce = -std::log(std::exp(cos[y]) / z);
    CHECK(std::abs(distill::aam_softmax_loss(e, w, y, 1.0, 0.0).loss - ce) <= 1e-10);
  }
}

TEST_CASE("AAM parallel to its class, orthogonal to the rest") {
  const auto [e, w] = with_cosines({1.0, 0.0, 0.0, 0.0});
  const long double want = -std::log(std::exp(30.0L * std::cos(0.2L)) /
                                     (std::exp(30.0L * std::cos(0.2L)) + 3.0L));
  // The target cosine is clamped to 1 - 1e-7 before arccos: theta ~ 4.5e-4.
  const long double clamped = aam_oracle({1.0 - 1e-7, 0, 0, 0}, 0, 30.0, 0.2);
  const double got = distill::aam_softmax_loss(e, w, 0, 30.0, 0.2).loss;
  CHECK(std::abs(got - double(clamped)) <= 1e-10);
  CHECK(std::abs(got - double(want)) <= 1e-3);
}

TEST_CASE("AAM loss grows with the margin when the target wins") {
  const auto [e, w] = with_cosines({0.7, 0.3, -0.1, 0.2});
  double prev = -1;
  for (double m : {0.0, 0.1, 0.2, 0.3, 0.4}) {
    const double l = distill::aam_softmax_loss(e, w, 0, 30.0, m).loss;
    CHECK(l > prev);
    prev = l;
  }
}

TEST_CASE("AAM is invariant to rescaling the embedding") {
  const Tensor e = random_tensor({8}, 3), w = random_tensor({5, 8}, 4);
  const double base = distill::aam_softmax_loss(e, w, 2, 30.0, 0.2).loss;
  for (double a : {0.1, 10.0}) {
    Tensor s = e;
    for (double& v : s.storage()) v *= a;
    CHECK(std::abs(distill::aam_softmax_loss(s, w, 2, 30.0, 0.2).loss - base) <= 1e-8);
  }
}

TEST_CASE("AAM errors") {
  const Tensor e = random_tensor({4}, 5), w = random_tensor({3, 4}, 6);
  CHECK_THROWS_AS(distill::aam_softmax_loss(e, w, 3, 30.0, 0.2), DataError);
  CHECK_THROWS_AS(distill::aam_softmax_loss(random_tensor({5}, 7), w, 0, 30.0, 0.2), DimensionError);
  CHECK_THROWS_AS(distill::aam_softmax_loss(Tensor({4}), w, 0, 30.0, 0.2), NumericalError);
}

TEST_CASE("hard impostor penalty example") {
  const std::vector<double> cos{0.9, 0.8, 0.1, 0.2};
  const Tensor pen = distill::hard_impostor_penalty(Tensor({1, 4}, cos), {0}, 2, 10.0);
  CHECK(pen == Tensor({1, 4}, {1, 10, 1, 10}));
  const auto [e, w] = with_cosines(cos);
  const double got = distill::aam_softmax_loss(e, w, 0, 30.0, 0.2, pen.reshaped({4})).loss;
  CHECK(std::abs(got - double(aam_oracle(cos, 0, 30.0, 0.2, {1, 10, 1, 10}))) <= 1e-10);
}

TEST_CASE("penalty degenerates to plain AAM") {
  const Tensor e = random_tensor({6}, 8), w = random_tensor({5, 6}, 9);
  const Tensor cos = distill::cosines(e, w).reshaped({1, 5});
  const double plain = distill::aam_softmax_loss(e, w, 1, 30.0, 0.2).loss;
  const Tensor k0 = distill::hard_impostor_penalty(cos, {1}, 0, 10.0);
  CHECK(k0 == Tensor({1, 5}, 1.0));
  CHECK(distill::aam_softmax_loss(e, w, 1, 30.0, 0.2, k0.reshaped({5})).loss == plain);
  for (std::size_t k = 0; k <= 4; ++k) {
    const Tensor m1 = distill::hard_impostor_penalty(cos, {1}, k, 1.0);
    CHECK(distill::aam_softmax_loss(e, w, 1, 30.0, 0.2, m1.reshaped({5})).loss == plain);
  }
  CHECK_THROWS_AS(distill::hard_impostor_penalty(cos, {1}, 5, 10.0), ConfigError);
}

TEST_CASE("penalty rows hold exactly K multipliers on the hardest impostors") {
  const std::size_t B = 6, C = 8, K = 5;
  const Tensor cos = random_tensor({B, C}, 10);
  std::vector<std::size_t> labels{0, 3, 7, 2, 2, 5};
  const Tensor pen = distill::hard_impostor_penalty(cos, labels, K, 10.0);
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < C; ++j) {
      CHECK((pen.at(i, j) == 1.0 || pen.at(i, j) == 10.0));
      n += pen.at(i, j) == 10.0;
    }
    CHECK(n == K);
    CHECK(pen.at(i, labels[i]) == 1.0);
    double lowest_hit = 2, highest_miss = -2;
    for (std::size_t j = 0; j < C; ++j) {
      if (j == labels[i]) continue;
      if (pen.at(i, j) == 10.0) lowest_hit = std::min(lowest_hit, cos.at(i, j));
      else highest_miss = std::max(highest_miss, cos.at(i, j));
    }
    CHECK(lowest_hit >= highest_miss);
  }
}

TEST_CASE("utterance-scope weights pick the hardest samples") {
  const Tensor cos = Tensor::matrix({{0.9, 0.1, 0.0}, {0.2, 0.8, 0.7}, {0.5, 0.6, 0.1}, {0.1, 0.3, 0.9}});
  const Tensor w = distill::hard_utterance_weights(cos, {0, 1, 2, 2}, 2, 10.0);
  // Hardest impostor cosines: 0.1, 0.7, 0.6, 0.3.
  CHECK(w == Tensor::vector({1, 10, 10, 1}));
  CHECK_THROWS_AS(distill::hard_utterance_weights(cos, {0, 1, 2, 2}, 5, 10.0), ConfigError);
}

TEST_CASE("mse distillation examples") {
  const Tensor t = random_tensor({3, 4}, 11);
  distill::ProjectionHead id{Tensor({4, 4}), Tensor({4})};
  for (std::size_t i = 0; i < 4; ++i) id.weight.at(i, i) = 1.0;
  CHECK(distill::mse_distill_loss(t, t, &id) == 0.0);
  CHECK(distill::mse_distill_loss(t, t) == 0.0);

  Tensor shifted = t;
  for (double& v : shifted.storage()) v += 0.25;
  CHECK(std::abs(distill::mse_distill_loss(shifted, t) - 0.0625) <= 1e-15);

  const Tensor s = random_tensor({3, 4}, 12);
  double acc = 0;
  for (std::size_t i = 0; i < 12; ++i) acc += (s[i] - t[i]) * (s[i] - t[i]);
  CHECK(std::abs(distill::mse_distill_loss(s, t) - acc / 12) <= 1e-12);

  const Tensor t5 = random_tensor({3, 5}, 13);
  distill::ProjectionHead h{random_tensor({4, 5}, 14), random_tensor({5}, 15)};
  acc = 0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      double p = h.bias[c];
      for (std::size_t k = 0; k < 4; ++k) p += s.at(r, k) * h.weight.at(k, c);
      acc += (p - t5.at(r, c)) * (p - t5.at(r, c));
    }
  CHECK(std::abs(distill::mse_distill_loss(s, t5, &h) - acc / 15) <= 1e-12);

  CHECK_THROWS_AS(distill::mse_distill_loss(s, random_tensor({2, 4}, 16)), DimensionError);
  CHECK_THROWS_AS(distill::mse_distill_loss(s, t5), DimensionError);
}

namespace {

struct Fake {
  ad::Tape tape;
  nn::EncodeVars vars;
  Fake(const Tensor& agg, const Tensor& emb) {
    vars.aggregated = tape.leaf(agg);
    vars.embedding = tape.leaf(emb);
  }
};

}  // namespace

TEST_CASE("total loss with a cloned student and no classification term is zero") {
  const Tensor feats = random_tensor({5, 4}, 17);
  Fake f(feats, random_tensor({6}, 18));
  DistillConfig cfg;
  cfg.lambda_cls = 0.0;
  const ParameterStore heads = distill::make_heads(cfg, 4, 4, 6, 3, 1);
  CHECK_FALSE(heads.contains("kd.head0"));
  BoundParams hp(f.tape, heads, true);
  const auto parts = distill::total_loss(f.vars, {&feats}, 1, hp, Tensor(), 1.0, cfg);
  CHECK(parts.total.value()[0] == 0.0);
  CHECK(parts.cls.value()[0] > 0.0);
}

TEST_CASE("multi-head on the last teacher layer equals final-state mode") {
  const Tensor agg = random_tensor({5, 4}, 19), emb = random_tensor({6}, 20);
  const Tensor teacher_last = random_tensor({5, 7}, 21);
  DistillConfig fs;
  DistillConfig mh;
  mh.mode = DistillMode::multi_head;
  mh.matched_teacher_layers = {2};
  const ParameterStore h1 = distill::make_heads(fs, 4, 7, 6, 3, 9), h2 = distill::make_heads(mh, 4, 7, 6, 3, 9);
  CHECK(bitwise_equal(h1.get("kd.head0.weight"), h2.get("kd.head0.weight")));
  Fake a(agg, emb), b(agg, emb);
  BoundParams pa(a.tape, h1, true), pb(b.tape, h2, true);
  const double la = distill::total_loss(a.vars, {&teacher_last}, 2, pa, Tensor(), 1.0, fs).total.value()[0];
  const double lb = distill::total_loss(b.vars, {&teacher_last}, 2, pb, Tensor(), 1.0, mh).total.value()[0];
  CHECK(std::abs(la - lb) <= 1e-12);
}

TEST_CASE("multi-head averages the per-head MSE") {
  const Tensor agg = random_tensor({5, 4}, 22), emb = random_tensor({6}, 23);
  const Tensor t0 = random_tensor({5, 7}, 24), t1 = random_tensor({5, 7}, 25);
  DistillConfig mh;
  mh.mode = DistillMode::multi_head;
  mh.matched_teacher_layers = {0, 1};
  mh.lambda_cls = 0.0;
  const ParameterStore heads = distill::make_heads(mh, 4, 7, 6, 3, 2);
  Fake f(agg, emb);
  BoundParams hp(f.tape, heads, true);
  const double got = distill::total_loss(f.vars, {&t0, &t1}, 0, hp, Tensor(), 1.0, mh).kd.value()[0];
  const distill::ProjectionHead a{heads.get("kd.head0.weight"), heads.get("kd.head0.bias")};
  const distill::ProjectionHead b{heads.get("kd.head1.weight"), heads.get("kd.head1.bias")};
  const double want = 0.5 * (distill::mse_distill_loss(agg, t0, &a) + distill::mse_distill_loss(agg, t1, &b));
  CHECK(std::abs(got - want) <= 1e-12);
  CHECK_THROWS_AS(distill::total_loss(f.vars, {&t0}, 0, hp, Tensor(), 1.0, mh), DataError);
}

TEST_CASE("total loss is non-negative") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor agg = random_tensor({5, 4}, 100 + seed), emb = random_tensor({6}, 200 + seed);
    const Tensor t = random_tensor({5, 7}, 300 + seed);
    DistillConfig cfg;
    cfg.hard_k = 2;
    const ParameterStore heads = distill::make_heads(cfg, 4, 7, 6, 4, seed);
    Fake f(agg, emb);
    BoundParams hp(f.tape, heads, true);
    const Tensor cos = distill::cosines(emb, heads.get("aam.weight")).reshaped({1, 4});
    const Tensor pen = distill::hard_impostor_penalty(cos, {seed % 4}, 2, 10.0).reshaped({4});
    const auto parts = distill::total_loss(f.vars, {&t}, seed % 4, hp, pen, 1.0, cfg);
    CHECK(parts.kd.value()[0] >= 0.0);
    CHECK(parts.cls.value()[0] >= 0.0);
    CHECK(parts.total.value()[0] >= 0.0);
  }
}

TEST_CASE("distill config invariants") {
  DistillConfig c;
  c.validate();
  c.hard_multiplier = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DistillConfig();
  c.aam_margin = 1.6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DistillConfig();
  c.aam_scale = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
