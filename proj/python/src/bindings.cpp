#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "svmixer/config.hpp"
#include "svmixer/encoder.hpp"
#include "svmixer/errors.hpp"
#include "svmixer/eval.hpp"
#include "svmixer/gradcheck.hpp"
#include "svmixer/io.hpp"
#include "svmixer/profiler.hpp"
#include "svmixer/synth.hpp"
#include "svmixer/trainer.hpp"

namespace py = pybind11;
using namespace svmixer;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

EncoderConfig config_from(const py::object& cfg) {
  if (cfg.is_none()) return EncoderConfig::desk_student();
  return io::parse_encoder_config(cfg.cast<std::string>());
}

py::dict cost_dict(const profiler::CostReport& r) {
  py::list rows;
  for (const auto& row : r.per_layer) {
    py::dict d;
    d["name"] = row.name;
    d["params"] = row.params;
    d["macs"] = row.macs;
    rows.append(d);
  }
  py::dict out;
  out["model"] = r.model;
  out["frames"] = r.frames;
  out["rows"] = rows;
  out["total_params"] = r.total_params;
  out["total_macs"] = r.total_macs;
  return out;
}

std::vector<eval::TrialScore> trials_from(const std::vector<double>& scores,
                                          const std::vector<bool>& labels) {
  if (scores.size() != labels.size())
    throw DataError("scores and labels differ in length: " + std::to_string(scores.size()) +
                    " vs " + std::to_string(labels.size()));
  std::vector<eval::TrialScore> t(scores.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i].score = scores[i];
    t[i].target = labels[i];
  }
  return t;
}

py::dict encode_dict(const EncodeOutput& e) {
  py::list layers;
  for (const auto& l : e.layer_outputs) layers.append(to_array(l));
  py::dict d;
  d["embedding"] = to_array(e.embedding);
  d["aggregated"] = to_array(e.aggregated);
  d["layer_weights"] = to_array(e.layer_weights);
  d["layer_outputs"] = layers;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  auto base = py::register_exception<Error>(m, "Error");
  auto config_err = py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto data_err = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<CheckError>(m, "CheckError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", data_err.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", data_err.ptr());
  auto format_err = py::register_exception<FormatError>(m, "FormatError", data_err.ptr());
  py::register_exception<ChecksumError>(m, "ChecksumError", format_err.ptr());
  py::register_exception<ConfigMismatchError>(m, "ConfigMismatchError", format_err.ptr());
  (void)config_err;

  m.attr("SAMPLE_RATE") = kSampleRate;

  m.def("canonical_config", [] { return io::dump_encoder_config(EncoderConfig()); });
  m.def("desk_student_config", [] { return io::dump_encoder_config(EncoderConfig::desk_student()); });
  m.def("validate_config", [](const std::string& cfg) {
    io::parse_encoder_config(cfg).validate();
  });

  m.def("frames_for_samples", [](std::size_t samples, const py::object& cfg) {
          return frames_for_samples(config_from(cfg), samples);
        },
        py::arg("samples"), py::arg("config") = py::none());

  m.def("count_params", [](const std::string& cfg) { return cost_dict(profiler::count_params(io::parse_encoder_config(cfg))); });
  m.def("count_macs", [](const std::string& cfg, std::size_t frames) {
    return cost_dict(profiler::count_macs(io::parse_encoder_config(cfg), frames));
  });
  m.def("encoder_layer_cost", [](const std::string& cfg, std::size_t frames) {
    return cost_dict(profiler::encoder_layer_cost(io::parse_encoder_config(cfg), frames));
  });
  m.def("transformer_layer_cost", [](std::size_t hidden, std::size_t ffn, std::size_t frames) {
          return cost_dict(profiler::transformer_layer_cost(hidden, ffn, frames));
        },
        py::arg("hidden") = 1024, py::arg("ffn_dim") = 2048, py::arg("frames") = 149);

  py::class_<SvMixerModel>(m, "Model")
      .def(py::init([](const py::object& cfg, std::uint64_t seed) { return SvMixerModel(config_from(cfg), seed); }),
           py::arg("config") = py::none(), py::arg("seed") = 0)
      .def_property_readonly("config", [](const SvMixerModel& s) { return io::dump_encoder_config(s.config()); })
      .def_property_readonly("num_params", [](const SvMixerModel& s) { return s.params().numel(); })
      .def("parameter_names", [](const SvMixerModel& s) {
             std::vector<std::string> names;
             for (const auto& [n, t] : s.params().entries()) names.push_back(n);
             return names;
           })
      .def("parameter", [](const SvMixerModel& s, const std::string& name) { return to_array(s.params().get(name)); })
      .def("encode", [](const SvMixerModel& s, const Array& wav) {
             Tensor w = to_tensor(wav);
             EncodeOutput out;
             {
               py::gil_scoped_release nogil;
               out = s.encode(w);
             }
             return encode_dict(out);
           })
      .def("verify_census", [](const SvMixerModel& s) { return profiler::verify_against_model(s).ok; })
      .def("save", [](const SvMixerModel& s, const std::string& path) { io::save_checkpoint(path, s); })
      .def("to_bytes", [](const SvMixerModel& s) { return py::bytes(io::encode_checkpoint(s)); });

  m.def("load_model", [](const std::string& path) { return io::load_model(path); });

  m.def("cosine_score", [](const Array& a, const Array& b) { return eval::cosine_score(to_tensor(a), to_tensor(b)); });
  m.def("eer", [](const std::vector<double>& scores, const std::vector<bool>& labels) {
    const auto r = eval::eer(trials_from(scores, labels));
    return py::make_tuple(r.eer, r.threshold);
  });
  m.def("min_dcf",
        [](const std::vector<double>& scores, const std::vector<bool>& labels, double p_target, double c_miss, double c_fa) {
          return eval::min_dcf(trials_from(scores, labels), p_target, c_miss, c_fa);
        },
        py::arg("scores"), py::arg("labels"), py::arg("p_target") = 0.05, py::arg("c_miss") = 1.0, py::arg("c_fa") = 1.0);

  m.def("read_wav", [](const std::string& path) {
    const auto w = io::read_wav(path);
    return py::make_tuple(to_array(w.samples), w.sample_rate);
  });
  m.def("write_wav", [](const std::string& path, const Array& samples) { io::write_wav(path, to_tensor(samples)); });

  m.def("read_features",
        [](const std::string& path) {
          const auto f = io::read_features(path);
          py::list blocks;
          for (const auto& b : f.blocks) blocks.append(to_array(b));
          py::dict d;
          d["teacher_name"] = f.teacher_name;
          d["layer"] = f.layer ? py::object(py::int_(*f.layer)) : py::object(py::none());
          d["T"] = f.T;
          d["H"] = f.H;
          d["ids"] = f.ids;
          d["blocks"] = blocks;
          return d;
        });
  m.def("write_features",
        [](const std::string& path, const std::string& teacher_name, const std::vector<std::string>& ids,
           const std::vector<Array>& blocks, const py::object& layer) {
          io::FeatureFile f;
          f.teacher_name = teacher_name;
          if (!layer.is_none()) f.layer = layer.cast<std::size_t>();
          f.ids = ids;
          for (const auto& b : blocks) f.blocks.push_back(to_tensor(b));
          if (!f.blocks.empty()) {
            if (f.blocks[0].rank() != 2) throw DimensionError("feature blocks must be [T x H]");
            f.T = f.blocks[0].rows();
            f.H = f.blocks[0].cols();
          }
          io::write_features(path, f);
        },
        py::arg("path"), py::arg("teacher_name"), py::arg("ids"), py::arg("blocks"), py::arg("layer") = py::none());

  m.def("synth_utterance", [](std::size_t speaker, std::size_t utt, std::uint64_t seed, std::size_t samples) {
          return to_array(synth_utterance(speaker, utt, seed, samples));
        },
        py::arg("speaker"), py::arg("utt"), py::arg("seed") = 1234, py::arg("samples") = 48000);

  m.def("gradcheck", [](std::uint64_t seed) {
          gradcheck::Options opt;
          opt.seed = seed;
          gradcheck::Report r;
          {
            py::gil_scoped_release nogil;
            r = gradcheck::run_all(opt);
          }
          py::list rows;
          for (const auto& row : r.rows) {
            py::dict d;
            d["name"] = row.name;
            d["checked"] = row.checked;
            d["max_rel_error"] = row.max_rel_error;
            d["passed"] = row.passed;
            rows.append(d);
          }
          return py::make_tuple(r.ok(), rows);
        },
        py::arg("seed") = 7);

  // Distills the synthetic teacher into a fresh student on the synthetic corpus.
  m.def("train_synthetic", [](const std::string& run_config) {
    const io::RunConfig rc = io::parse_run_config(run_config);
    rc.validate();
    SyntheticCorpus c;
    c.n_speakers = rc.train.n_speakers;
    c.utterances_per_speaker = rc.train.utterances_per_speaker;
    c.seed = rc.train.corpus_seed;
    c.samples = static_cast<std::size_t>(std::llround(rc.train.crop_seconds * kSampleRate));
    SvMixerModel student(rc.encoder, rc.train.seed);
    TrainResult res;
    double val_eer = -1.0;
    {
      py::gil_scoped_release nogil;
      const Split split = split_corpus(make_corpus(c), rc.train.val_utts_per_speaker);
      SyntheticTeacher teacher(teacher_config(rc.encoder, rc.train), rc.train.teacher_seed);
      res = train(student, split, teacher, rc.train, rc.distill);
      std::vector<std::size_t> spk;
      for (const auto& u : split.val) spk.push_back(u.speaker);
      const auto trials = score_all_pairs(embed_utterances(student, split.val, c.samples), spk);
      const bool both = std::any_of(trials.begin(), trials.end(), [](auto& t) { return t.target; }) &&
                        std::any_of(trials.begin(), trials.end(), [](auto& t) { return !t.target; });
      if (both) val_eer = eval::eer(trials).eer;
    }
    py::dict d;
    d["steps"] = res.steps;
    d["step_losses"] = res.step_losses;
    d["metrics_jsonl"] = metrics_jsonl(res);
    d["val_eer"] = val_eer < 0 ? py::object(py::none()) : py::object(py::float_(val_eer));
    return py::make_tuple(std::move(student), d);
  });
}
