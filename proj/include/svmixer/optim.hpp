#pragma once

#include <cstddef>
#include <limits>

#include "svmixer/params.hpp"

namespace svmixer {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  ParameterStore m, v;
  std::size_t step = 0;
};

AdamWState make_adamw_state(const ParameterStore& params);

// Decoupled weight decay (p -= lr * wd * p) followed by the bias-corrected Adam update.
void adamw_step(ParameterStore& params, const ParameterStore& grads, AdamWState& state, double lr,
                double weight_decay, const AdamWOptions& opt = {});

// Multiplies the learning rate by `factor` once `patience` consecutive epochs
// fail to strictly improve on the best metric (lower is better).
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, std::size_t patience, double factor);

  // Returns true when this epoch's metric triggered a reduction.
  bool step(double metric);
  double lr() const { return lr_; }
  std::size_t bad_epochs() const { return bad_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

// Signals a stop once `patience` consecutive epochs fail to strictly improve.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when training should stop after this epoch.
  bool step(double metric);
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
};

}  // namespace svmixer
