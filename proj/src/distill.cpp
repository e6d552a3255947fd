#include "svmixer/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "svmixer/errors.hpp"
#include "svmixer/ops.hpp"
#include "svmixer/random.hpp"

namespace svmixer::distill {
namespace {

constexpr double kCosClamp = 1e-7;

double norm2(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

void check_aam_inputs(const Tensor& e, const Tensor& w, std::size_t label,
                      const Tensor& term_weights) {
  if (e.rank() != 1 || w.rank() != 2 || w.cols() != e.numel()) {
    throw DimensionError("aam_softmax: embedding " + shape_str(e.shape()) + " vs class weights " +
                         shape_str(w.shape()));
  }
  if (label >= w.rows()) {
    throw DataError("aam_softmax: label " + std::to_string(label) + " out of range for " +
                    std::to_string(w.rows()) + " classes");
  }
  if (!term_weights.empty() && term_weights.numel() != w.rows()) {
    throw DimensionError("aam_softmax: term weights " + shape_str(term_weights.shape()) +
                         " for " + std::to_string(w.rows()) + " classes");
  }
}

// Forward state shared by the value and gradient paths.
struct AamForward {
  Tensor cosines;
  std::vector<double> logits, probs;
  double theta = 0.0;
  bool clamped = false;
  double loss = 0.0;
};

AamForward aam_forward(const Tensor& e, const Tensor& w, std::size_t label, double s, double m,
                       const Tensor& term_weights) {
  AamForward f;
  f.cosines = cosines(e, w);
  const std::size_t c = w.rows();
  f.logits.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    if (j == label) continue;
    const double u = term_weights.empty() ? 1.0 : term_weights[j];
    f.logits[j] = s * f.cosines[j] + std::log(u);
  }
  const double cy = f.cosines[label];
  const double clamped = std::clamp(cy, -1.0 + kCosClamp, 1.0 - kCosClamp);
  f.clamped = clamped != cy;
  f.theta = std::acos(clamped);
  f.logits[label] = s * std::cos(f.theta + m);
  const double mx = *std::max_element(f.logits.begin(), f.logits.end());
  double z = 0.0;
  f.probs.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    f.probs[j] = std::exp(f.logits[j] - mx);
    z += f.probs[j];
  }
  for (double& p : f.probs) p /= z;
  f.loss = mx + std::log(z) - f.logits[label];
  return f;
}

}  // namespace

Tensor cosines(const Tensor& embedding, const Tensor& class_weights) {
  const std::size_t c = class_weights.rows(), d = class_weights.cols();
  if (embedding.numel() != d) throw DimensionError("cosines: embedding/class width mismatch");
  const double en = norm2(embedding.data().data(), d);
  if (en == 0.0) throw NumericalError("cosines: zero embedding");
  Tensor out({c});
  for (std::size_t j = 0; j < c; ++j) {
    const double* wr = class_weights.data().data() + j * d;
    const double wn = norm2(wr, d);
    if (wn == 0.0) throw NumericalError("cosines: zero class weight row " + std::to_string(j));
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += embedding[i] * wr[i];
    out[j] = dot / (en * wn);
  }
  return out;
}

AamResult aam_softmax_loss(const Tensor& embedding, const Tensor& class_weights,
                           std::size_t label, double scale, double margin,
                           const Tensor& term_weights) {
  check_aam_inputs(embedding, class_weights, label, term_weights);
  AamForward f = aam_forward(embedding, class_weights, label, scale, margin, term_weights);
  return {f.loss, std::move(f.cosines)};
}

ad::Var aam_softmax(ad::Var embedding, ad::Var class_weights, std::size_t label, double scale,
                    double margin, const Tensor& term_weights) {
  const Tensor& e = embedding.value();
  const Tensor& w = class_weights.value();
  check_aam_inputs(e, w, label, term_weights);
  AamForward f = aam_forward(e, w, label, scale, margin, term_weights);
  const double loss = f.loss;
  return ad::tape_of(embedding).record(
      "aam_softmax", Tensor({1}, {loss}), {embedding, class_weights},
      [embedding, class_weights, label, scale, margin, f = std::move(f)](const Tensor& g) {
        const Tensor& ev = embedding.value();
        const Tensor& wv = class_weights.value();
        const std::size_t c = wv.rows(), d = wv.cols();
        // d loss / d cos_j
        std::vector<double> dcos(c);
        for (std::size_t j = 0; j < c; ++j) {
          const double dz = f.probs[j] - (j == label ? 1.0 : 0.0);
          if (j != label) {
            dcos[j] = g[0] * dz * scale;
          } else if (!f.clamped) {
            dcos[j] = g[0] * dz * scale * std::sin(f.theta + margin) / std::sin(f.theta);
          }
        }
        const double en = norm2(ev.data().data(), d);
        std::vector<double> ehat(d);
        for (std::size_t i = 0; i < d; ++i) ehat[i] = ev[i] / en;
        std::vector<double> dehat(d, 0.0);
        Tensor dw(wv.shape());
        for (std::size_t j = 0; j < c; ++j) {
          const double* wr = wv.data().data() + j * d;
          const double wn = norm2(wr, d);
          double proj = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            dehat[i] += dcos[j] * wr[i] / wn;
            proj += (wr[i] / wn) * ehat[i];
          }
          // Gradient through w_j / |w_j| of dcos_j * ehat.
          for (std::size_t i = 0; i < d; ++i)
            dw.at(j, i) = dcos[j] * (ehat[i] - (wr[i] / wn) * proj) / wn;
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += ehat[i] * dehat[i];
        Tensor de(ev.shape());
        for (std::size_t i = 0; i < d; ++i) de[i] = (dehat[i] - ehat[i] * dot) / en;
        return std::vector<Tensor>{std::move(de), std::move(dw)};
      });
}

Tensor hard_impostor_penalty(const Tensor& cos, const std::vector<std::size_t>& labels,
                             std::size_t k, double multiplier) {
  if (cos.rank() != 2 || cos.rows() != labels.size()) {
    throw DimensionError("hard_impostor_penalty: cosines " + shape_str(cos.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = cos.rows(), c = cos.cols();
  if (c == 0 || k > c - 1) {
    throw ConfigError("hard_impostor_penalty: K=" + std::to_string(k) + " exceeds the " +
                      std::to_string(c == 0 ? 0 : c - 1) + " impostor classes");
  }
  Tensor w({b, c}, 1.0);
  std::vector<std::size_t> order(c);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) throw DataError("hard_impostor_penalty: label out of range");
    order.clear();
    for (std::size_t j = 0; j < c; ++j)
      if (j != labels[i]) order.push_back(j);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return cos.at(i, x) > cos.at(i, y); });
    for (std::size_t r = 0; r < k; ++r) w.at(i, order[r]) = multiplier;
  }
  return w;
}

Tensor hard_utterance_weights(const Tensor& cos, const std::vector<std::size_t>& labels,
                              std::size_t k, double multiplier) {
  if (cos.rank() != 2 || cos.rows() != labels.size()) {
    throw DimensionError("hard_utterance_weights: cosines/labels mismatch");
  }
  const std::size_t b = cos.rows(), c = cos.cols();
  if (k > b) {
    throw ConfigError("hard_utterance_weights: K=" + std::to_string(k) + " exceeds batch size " +
                      std::to_string(b));
  }
  std::vector<double> hardness(b, -2.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (j != labels[i]) hardness[i] = std::max(hardness[i], cos.at(i, j));
  std::vector<std::size_t> order(b);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return hardness[x] > hardness[y]; });
  Tensor w({b}, 1.0);
  for (std::size_t r = 0; r < k; ++r) w[order[r]] = multiplier;
  return w;
}

double mse_distill_loss(const Tensor& student, const Tensor& teacher, const ProjectionHead* head) {
  if (student.rank() != 2 || teacher.rank() != 2 || student.rows() != teacher.rows()) {
    throw DimensionError("mse_distill_loss: frame counts differ, student " +
                         shape_str(student.shape()) + " vs teacher " + shape_str(teacher.shape()));
  }
  Tensor s = student;
  if (head) {
    s = ops::add_row_bias(ops::matmul(student, head->weight), head->bias);
  } else if (student.cols() != teacher.cols()) {
    throw DimensionError("mse_distill_loss: widths differ and no projection head was given");
  }
  if (s.shape() != teacher.shape()) throw DimensionError("mse_distill_loss: head output width");
  double acc = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) acc += (s[i] - teacher[i]) * (s[i] - teacher[i]);
  return acc / static_cast<double>(s.numel());
}

ad::Var mse_distill(ad::Var student, ad::Var teacher, const HeadVars* head) {
  const Tensor& sv = student.value();
  const Tensor& tv = teacher.value();
  if (sv.rank() != 2 || tv.rank() != 2 || sv.rows() != tv.rows()) {
    throw DimensionError("mse_distill: frame counts differ, student " + shape_str(sv.shape()) +
                         " vs teacher " + shape_str(tv.shape()));
  }
  ad::Var s = student;
  if (head) {
    s = ad::add_row_bias(ad::matmul(student, head->weight), head->bias);
  } else if (sv.cols() != tv.cols()) {
    throw DimensionError("mse_distill: widths differ and no projection head was given");
  }
  return ad::mse(s, teacher);
}

std::size_t head_count(const DistillConfig& cfg, std::size_t student_h, std::size_t teacher_h) {
  if (student_h == teacher_h) return 0;
  return cfg.mode == DistillMode::final_state ? 1 : cfg.matched_teacher_layers.size();
}

ParameterStore make_heads(const DistillConfig& cfg, std::size_t student_h, std::size_t teacher_h,
                          std::size_t embed_dim, std::size_t n_classes, std::uint64_t seed) {
  ParameterStore store;
  const std::size_t n = head_count(cfg, student_h, teacher_h);
  for (std::size_t i = 0; i < n; ++i) {
    // Seeded per index so head i is identical across modes.
    Rng rng(mix_seed(seed, i));
    Tensor w({student_h, teacher_h});
    const double bound = 1.0 / std::sqrt(double(student_h));
    for (double& v : w.storage()) v = static_cast<float>(rng.uniform(-bound, bound));
    const std::string name = "kd.head" + std::to_string(i);
    store.add(name + ".weight", std::move(w));
    store.add(name + ".bias", Tensor({teacher_h}));
  }
  if (n_classes > 0) {
    Rng rng(mix_seed(seed, 0xAA));
    Tensor w({n_classes, embed_dim});
    for (double& v : w.storage()) v = static_cast<float>(rng.normal());
    store.add("aam.weight", std::move(w));
  }
  return store;
}

LossParts total_loss(const nn::EncodeVars& student, const std::vector<const Tensor*>& teacher,
                     std::size_t label, const BoundParams& heads, const Tensor& term_weights,
                     double utterance_weight, const DistillConfig& cfg) {
  ad::Tape& tape = heads.tape();
  const std::size_t expected = cfg.mode == DistillMode::final_state
                                   ? 1
                                   : cfg.matched_teacher_layers.size();
  if (teacher.size() != expected) {
    throw DataError("total_loss: expected " + std::to_string(expected) +
                    " teacher targets, got " + std::to_string(teacher.size()));
  }
  const std::size_t student_h = student.aggregated.value().cols();
  std::vector<ad::Var> kd_terms;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    ad::Var target = tape.leaf_ref(*teacher[i], false);
    if (teacher[i]->cols() != student_h) {
      const std::string name = "kd.head" + std::to_string(i);
      HeadVars h{heads(name + ".weight"), heads(name + ".bias")};
      kd_terms.push_back(mse_distill(student.aggregated, target, &h));
    } else {
      kd_terms.push_back(mse_distill(student.aggregated, target));
    }
  }
  ad::Var kd = kd_terms.front();
  for (std::size_t i = 1; i < kd_terms.size(); ++i) kd = ad::add(kd, kd_terms[i]);
  if (kd_terms.size() > 1) kd = ad::scale(kd, 1.0 / static_cast<double>(kd_terms.size()));

  ad::Var cls = aam_softmax(student.embedding, heads("aam.weight"), label, cfg.aam_scale,
                            cfg.aam_margin, term_weights);
  ad::Var total = ad::add(ad::scale(kd, cfg.lambda_kd),
                          ad::scale(cls, cfg.lambda_cls * utterance_weight));
  return {total, kd, cls};
}

}  // namespace svmixer::distill
