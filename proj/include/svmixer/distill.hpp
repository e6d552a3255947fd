#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "svmixer/autodiff.hpp"
#include "svmixer/config.hpp"
#include "svmixer/encoder.hpp"
#include "svmixer/params.hpp"
#include "svmixer/tensor.hpp"

namespace svmixer::distill {

// Cosine of `embedding` [D] against every row of `class_weights` [C x D].
Tensor cosines(const Tensor& embedding, const Tensor& class_weights);

struct AamResult {
  double loss = 0.0;
  Tensor cosines;
};

// Additive angular margin softmax:
//   -log( e^{s cos(theta_y + m)} / (e^{s cos(theta_y + m)} + sum_{j != y} u_j e^{s cos theta_j}) )
// `term_weights` holds u_j (all ones when empty). cos(theta_y) is clamped to
// [-1 + 1e-7, 1 - 1e-7] before arccos.
AamResult aam_softmax_loss(const Tensor& embedding, const Tensor& class_weights,
                           std::size_t label, double scale, double margin,
                           const Tensor& term_weights = Tensor());

ad::Var aam_softmax(ad::Var embedding, ad::Var class_weights, std::size_t label, double scale,
                    double margin, const Tensor& term_weights = Tensor());

// Per sample, the k non-target classes with the highest cosine get `multiplier`;
// everything else (target column included) is 1. Ties go to the lower class index.
Tensor hard_impostor_penalty(const Tensor& cosines, const std::vector<std::size_t>& labels,
                             std::size_t k, double multiplier);

// Utterance-scope reading: the k samples whose most similar impostor class is
// closest get `multiplier` on their whole classification loss. Returns [B].
Tensor hard_utterance_weights(const Tensor& cosines, const std::vector<std::size_t>& labels,
                              std::size_t k, double multiplier);

// Plain linear head W [H x H_t], b [H_t] (no activation).
struct ProjectionHead {
  Tensor weight, bias;
};

// Mean over all T * H_t elements of (head(student) - teacher)^2. Without a head
// the widths must already agree.
double mse_distill_loss(const Tensor& student, const Tensor& teacher,
                        const ProjectionHead* head = nullptr);

struct HeadVars {
  ad::Var weight, bias;
};
ad::Var mse_distill(ad::Var student, ad::Var teacher, const HeadVars* head = nullptr);

// Trainable parameters that live next to the encoder during distillation:
//   kd.head{i}.{weight,bias} (one per matched teacher layer, or one for
//   final_state mode when widths differ), aam.weight [n_classes x embed_dim].
ParameterStore make_heads(const DistillConfig& cfg, std::size_t student_h, std::size_t teacher_h,
                          std::size_t embed_dim, std::size_t n_classes, std::uint64_t seed);
std::size_t head_count(const DistillConfig& cfg, std::size_t student_h, std::size_t teacher_h);

struct LossParts {
  ad::Var total, kd, cls;
};

// lambda_kd * KD + lambda_cls * utterance_weight * AAM for one sample.
//   teacher: one [T x H_t] target per head (final_state: the last teacher layer).
// Teacher features enter as constants, so no gradient reaches them.
LossParts total_loss(const nn::EncodeVars& student, const std::vector<const Tensor*>& teacher,
                     std::size_t label, const BoundParams& heads, const Tensor& term_weights,
                     double utterance_weight, const DistillConfig& cfg);

}  // namespace svmixer::distill
