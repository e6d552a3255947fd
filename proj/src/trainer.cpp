#include "svmixer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "json.hpp"

#include "svmixer/autodiff.hpp"
#include "svmixer/distill.hpp"
#include "svmixer/errors.hpp"
#include "svmixer/optim.hpp"
#include "svmixer/random.hpp"

namespace svmixer {

// ---- teachers --------------------------------------------------------------

SyntheticTeacher::SyntheticTeacher(EncoderConfig cfg, std::uint64_t seed) : model_(cfg, seed) {}

const Tensor& SyntheticTeacher::features(const Utterance& utt, const Tensor& waveform,
                                         std::optional<std::size_t> layer) {
  // Key on id and a content checksum of the crop so distinct crops never collide.
  std::string key = utt.id;
  {
    std::string bytes(reinterpret_cast<const char*>(waveform.storage().data()),
                      waveform.numel() * sizeof(double));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%08x", io::crc32(bytes));
    key += buf;
  }
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    EncodeOutput out = model_.encode(waveform);
    it = cache_.emplace(key, std::move(out.layer_outputs)).first;
  }
  const std::size_t idx = layer ? *layer : it->second.size() - 1;
  if (idx >= it->second.size()) {
    throw ConfigError("teacher has " + std::to_string(it->second.size()) +
                      " layer outputs; layer " + std::to_string(idx) + " requested");
  }
  return it->second[idx];
}

std::uint32_t SyntheticTeacher::cache_crc32() const {
  std::string bytes;
  for (const auto& [key, layers] : cache_) {
    bytes += key;
    for (const Tensor& t : layers) {
      bytes.append(reinterpret_cast<const char*>(t.storage().data()), t.numel() * sizeof(double));
    }
  }
  return io::crc32(bytes);
}

FeatureFileTeacher::FeatureFileTeacher(std::vector<io::FeatureFile> files) : files_(std::move(files)) {
  if (files_.empty()) throw DataError("FeatureFileTeacher: no feature files");
  hidden_ = files_.front().H;
  frames_ = files_.front().T;
  for (const auto& f : files_) {
    if (f.H != hidden_ || f.T != frames_) {
      throw DimensionError("FeatureFileTeacher: feature files disagree on [T x H_t]");
    }
  }
}

const Tensor& FeatureFileTeacher::features(const Utterance& utt, const Tensor&,
                                           std::optional<std::size_t> layer) {
  for (const auto& f : files_) {
    if (f.layer != layer) continue;
    if (const Tensor* t = f.find(utt.id)) return *t;
    throw DataError("feature file for layer " + (layer ? std::to_string(*layer) : "final") +
                    " has no entry for '" + utt.id + "'");
  }
  throw DataError("no feature file for teacher layer " + (layer ? std::to_string(*layer) : "final"));
}

EncoderConfig teacher_config(const EncoderConfig& student, const TrainConfig& train) {
  EncoderConfig t = student;
  t.H = train.teacher_H;
  t.L = train.teacher_L;
  return t;
}

Split split_corpus(std::vector<Utterance> all, std::size_t val_per_speaker) {
  std::map<std::size_t, std::size_t> count, seen;
  for (const auto& u : all) ++count[u.speaker];
  Split s;
  for (auto& u : all) {
    const std::size_t idx = seen[u.speaker]++;
    (idx + val_per_speaker >= count[u.speaker] ? s.val : s.train).push_back(std::move(u));
  }
  return s;
}

std::string metrics_jsonl(const TrainResult& r) {
  std::string out;
  for (const auto& m : r.epochs) {
    nlohmann::json j;
    j["epoch"] = m.epoch;
    j["steps"] = m.steps;
    j["train_loss"] = m.train_loss;
    j["train_kd"] = m.train_kd;
    j["train_cls"] = m.train_cls;
    j["val_loss"] = m.val_loss;
    j["lr"] = m.lr;
    out += j.dump() + "\n";
  }
  return out;
}

// ---- batch evaluation ------------------------------------------------------

namespace {

// Runs f(i) for i in [0, n) on up to `threads` workers. Each index is handled
// by exactly one worker; callers reduce results in index order.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<std::optional<std::size_t>> teacher_layers(const DistillConfig& d) {
  if (d.mode == DistillMode::final_state) return {std::nullopt};
  return {d.matched_teacher_layers.begin(), d.matched_teacher_layers.end()};
}

Tensor crop(const Tensor& w, std::size_t offset, std::size_t samples) {
  if (offset + samples > w.numel()) {
    throw DataError("crop of " + std::to_string(samples) + " samples at " + std::to_string(offset) +
                    " exceeds a " + std::to_string(w.numel()) + "-sample waveform");
  }
  std::vector<double> v(w.storage().begin() + offset, w.storage().begin() + offset + samples);
  return Tensor({samples}, std::move(v));
}

struct Sample {
  std::unique_ptr<ad::Tape> tape;
  std::unique_ptr<BoundParams> model_p;
  std::unique_ptr<BoundParams> head_p;
  nn::EncodeVars enc;
  Tensor cos;
};

struct BatchOutcome {
  double total = 0.0, kd = 0.0, cls = 0.0;  // batch means
  ParameterStore model_grad, head_grad;
};

// Two passes: forward every sample to get its cosines, derive the batch-level
// hard-impostor weights, then finish each sample's loss (and backward when
// `with_grad`). Per-sample tapes keep the reduction order fixed for any
// thread count.
BatchOutcome run_batch(const SvMixerModel& student, const ParameterStore& heads,
                       const std::vector<const Utterance*>& batch,
                       const std::vector<std::size_t>& offsets, TeacherSource& teacher,
                       const TrainConfig& tcfg, const DistillConfig& dcfg, bool with_grad) {
  const std::size_t b = batch.size();
  if (b == 0) throw DataError("empty batch");
  const std::size_t samples = static_cast<std::size_t>(std::llround(tcfg.crop_seconds * kSampleRate));
  const auto layers = teacher_layers(dcfg);

  std::vector<Tensor> crops(b);
  std::vector<std::vector<const Tensor*>> targets(b);
  for (std::size_t i = 0; i < b; ++i) {
    crops[i] = crop(batch[i]->waveform, offsets[i], samples);
    for (const auto& l : layers) {
      const Tensor& t = teacher.features(*batch[i], crops[i], l);
      if (t.rank() != 2 || t.rows() != student.config().frames) {
        throw DimensionError("teacher/student frame-count mismatch: teacher " + shape_str(t.shape()) +
                             ", student frames " + std::to_string(student.config().frames));
      }
      targets[i].push_back(&t);
    }
  }

  std::vector<Sample> work(b);
  const Tensor& class_w = heads.get("aam.weight");
  parallel_for(b, tcfg.threads, [&](std::size_t i) {
    Sample& s = work[i];
    s.tape = std::make_unique<ad::Tape>(with_grad ? ad::GradMode::enabled : ad::GradMode::disabled);
    s.model_p = std::make_unique<BoundParams>(*s.tape, student.params(), with_grad);
    s.head_p = std::make_unique<BoundParams>(*s.tape, heads, with_grad);
    s.enc = student.encode(s.tape->leaf_ref(crops[i], false), *s.model_p);
    s.cos = distill::cosines(s.enc.embedding.value(), class_w);
  });

  const std::size_t n_classes = class_w.rows();
  Tensor cos({b, n_classes});
  std::vector<std::size_t> labels(b);
  for (std::size_t i = 0; i < b; ++i) {
    labels[i] = batch[i]->speaker;
    for (std::size_t c = 0; c < n_classes; ++c) cos.at(i, c) = work[i].cos[c];
  }
  Tensor term_w, utt_w({b}, 1.0);
  if (dcfg.penalty_scope == PenaltyScope::class_terms) {
    term_w = distill::hard_impostor_penalty(cos, labels, dcfg.hard_k, dcfg.hard_multiplier);
  } else {
    utt_w = distill::hard_utterance_weights(cos, labels, std::min(dcfg.hard_k, b), dcfg.hard_multiplier);
  }

  std::vector<double> tot(b), kd(b), cls(b);
  std::vector<ParameterStore> mg(b), hg(b);
  const double inv_b = 1.0 / static_cast<double>(b);
  parallel_for(b, tcfg.threads, [&](std::size_t i) {
    Sample& s = work[i];
    Tensor row;
    if (!term_w.empty()) {
      std::vector<double> r(term_w.storage().begin() + i * n_classes,
                            term_w.storage().begin() + (i + 1) * n_classes);
      row = Tensor({n_classes}, std::move(r));
    }
    distill::LossParts lp =
        distill::total_loss(s.enc, targets[i], labels[i], *s.head_p, row, utt_w[i], dcfg);
    tot[i] = lp.total.value()[0];
    kd[i] = lp.kd.value()[0];
    cls[i] = lp.cls.value()[0];
    if (with_grad) {
      s.tape->backward(ad::scale(lp.total, inv_b));
      mg[i] = s.model_p->gradients();
      hg[i] = s.head_p->gradients();
    }
    s = Sample{};
  });

  BatchOutcome out;
  for (std::size_t i = 0; i < b; ++i) {
    out.total += tot[i] * inv_b;
    out.kd += kd[i] * inv_b;
    out.cls += cls[i] * inv_b;
  }
  if (with_grad) {
    out.model_grad = std::move(mg[0]);
    out.head_grad = std::move(hg[0]);
    for (std::size_t i = 1; i < b; ++i) {
      accumulate(out.model_grad, mg[i]);
      accumulate(out.head_grad, hg[i]);
    }
  }
  return out;
}

std::size_t crop_samples(const TrainConfig& tcfg, const EncoderConfig& cfg) {
  const double s = tcfg.crop_seconds * kSampleRate;
  if (std::abs(s - std::round(s)) > 1e-9) {
    throw ConfigError("crop_seconds must be a whole number of samples");
  }
  const auto n = static_cast<std::size_t>(std::llround(s));
  if (frames_for_samples(cfg, n) != cfg.frames) {
    throw ConfigError("a crop of " + std::to_string(n) + " samples yields " +
                      std::to_string(frames_for_samples(cfg, n)) +
                      " frames but the encoder is built for " + std::to_string(cfg.frames));
  }
  return n;
}

std::vector<std::size_t> centre_offsets(const std::vector<const Utterance*>& batch, std::size_t samples) {
  std::vector<std::size_t> off;
  for (const Utterance* u : batch) {
    if (u->waveform.numel() < samples) {
      throw DataError("utterance '" + u->id + "' is shorter than the crop");
    }
    off.push_back((u->waveform.numel() - samples) / 2);
  }
  return off;
}

double validation_loss(const SvMixerModel& student, const ParameterStore& heads,
                       const std::vector<Utterance>& val, TeacherSource& teacher,
                       const TrainConfig& tcfg, const DistillConfig& dcfg, std::size_t samples) {
  if (val.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t start = 0; start < val.size(); start += tcfg.batch_size) {
    std::vector<const Utterance*> batch;
    for (std::size_t i = start; i < std::min(val.size(), start + tcfg.batch_size); ++i)
      batch.push_back(&val[i]);
    const double mean = run_batch(student, heads, batch, centre_offsets(batch, samples), teacher,
                                  tcfg, dcfg, false)
                            .total;
    sum += mean * static_cast<double>(batch.size());
  }
  return sum / static_cast<double>(val.size());
}

}  // namespace

double batch_loss(const SvMixerModel& student, const ParameterStore& heads,
                  const std::vector<const Utterance*>& batch, const std::vector<std::size_t>& offsets,
                  TeacherSource& teacher, const TrainConfig& tcfg, const DistillConfig& dcfg) {
  return run_batch(student, heads, batch, offsets, teacher, tcfg, dcfg, false).total;
}

// ---- training loop ---------------------------------------------------------

TrainResult train(SvMixerModel& student, const Split& split, TeacherSource& teacher,
                  const TrainConfig& tcfg, const DistillConfig& dcfg, const TrainHooks& hooks) {
  tcfg.validate();
  dcfg.validate();
  if (split.train.empty()) throw DataError("train: empty corpus");
  const EncoderConfig& cfg = student.config();
  const std::size_t samples = crop_samples(tcfg, cfg);
  if (teacher.frames() != cfg.frames) {
    throw DimensionError("teacher/student frame-count mismatch: teacher " +
                         std::to_string(teacher.frames()) + ", student " + std::to_string(cfg.frames));
  }
  std::size_t n_classes = 0;
  for (const auto& u : split.train) n_classes = std::max(n_classes, u.speaker + 1);

  TrainResult r;
  r.heads = distill::make_heads(dcfg, cfg.H, teacher.hidden(), cfg.embed_dim, n_classes,
                                mix_seed(tcfg.seed, 0x4EAD));
  AdamWState model_state = make_adamw_state(student.params());
  AdamWState head_state = make_adamw_state(r.heads);
  PlateauScheduler sched(tcfg.lr0, tcfg.plateau_patience, tcfg.lr_factor);
  EarlyStopping stopper(tcfg.early_stop_patience);
  Rng rng(mix_seed(tcfg.seed, 0x5EED));

  std::vector<std::size_t> order(split.train.size());
  bool budget_spent = false;
  for (std::size_t epoch = 1; epoch <= tcfg.max_epochs && !budget_spent; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = sched.lr();
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      std::vector<const Utterance*> batch;
      std::vector<std::size_t> offsets;
      for (std::size_t i = start; i < std::min(order.size(), start + tcfg.batch_size); ++i) {
        const Utterance& u = split.train[order[i]];
        if (u.waveform.numel() < samples) {
          throw DataError("utterance '" + u.id + "' is shorter than the crop");
        }
        const std::size_t slack = u.waveform.numel() - samples;
        batch.push_back(&u);
        offsets.push_back(teacher.supports_random_crops() ? rng.below(slack + 1) : slack / 2);
      }
      BatchOutcome bo = run_batch(student, r.heads, batch, offsets, teacher, tcfg, dcfg, true);
      adamw_step(student.params(), bo.model_grad, model_state, sched.lr(), tcfg.weight_decay);
      adamw_step(r.heads, bo.head_grad, head_state, sched.lr(), tcfg.weight_decay);
      r.step_losses.push_back(bo.total);
      m.train_loss += bo.total;
      m.train_kd += bo.kd;
      m.train_cls += bo.cls;
      ++epoch_steps;
      ++r.steps;
      if (tcfg.max_steps != 0 && r.steps >= tcfg.max_steps) {
        budget_spent = true;
        break;
      }
    }
    m.steps = r.steps;
    m.train_loss /= static_cast<double>(epoch_steps);
    m.train_kd /= static_cast<double>(epoch_steps);
    m.train_cls /= static_cast<double>(epoch_steps);
    m.val_loss = validation_loss(student, r.heads, split.val, teacher, tcfg, dcfg, samples);
    r.epochs.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
    if (budget_spent) break;
    const double metric = split.val.empty() ? m.train_loss : m.val_loss;
    sched.step(metric);
    if (stopper.step(metric)) {
      r.early_stopped = true;
      break;
    }
  }
  return r;
}

io::Embeddings embed_utterances(const SvMixerModel& model, const std::vector<Utterance>& utts,
                                std::size_t samples) {
  io::Embeddings out;
  for (const auto& u : utts) out.emplace_back(u.id, model.encode(center_crop(u.waveform, samples)).embedding);
  return out;
}

std::vector<eval::TrialScore> score_all_pairs(const io::Embeddings& emb,
                                              const std::vector<std::size_t>& speakers) {
  if (speakers.size() != emb.size()) throw DimensionError("score_all_pairs: one speaker per embedding");
  std::vector<eval::TrialScore> out;
  for (std::size_t i = 0; i < emb.size(); ++i)
    for (std::size_t j = i + 1; j < emb.size(); ++j)
      out.push_back({emb[i].first, emb[j].first, eval::cosine_score(emb[i].second, emb[j].second),
                     speakers[i] == speakers[j]});
  return out;
}

}  // namespace svmixer
