#include "svmixer/io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "svmixer/errors.hpp"

namespace svmixer::io {

using nlohmann::json;

std::uint32_t crc32(std::string_view bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    c = ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

namespace {

// ---- little-endian helpers -------------------------------------------------

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& s, double v) {
  put_u32(s, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint16_t get_u16(std::string_view s, std::size_t pos) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[pos]) |
                                    (static_cast<unsigned char>(s[pos + 1]) << 8));
}

std::uint32_t get_u32(std::string_view s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

double get_f32(std::string_view s, std::size_t pos) {
  return static_cast<double>(std::bit_cast<float>(get_u32(s, pos)));
}

// ---- framed binary container ----------------------------------------------

std::string frame(std::string_view magic, const json& header, std::string_view payload) {
  const std::string h = header.dump();
  std::string out;
  out.reserve(magic.size() + 8 + h.size() + payload.size());
  out.append(magic);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out.append(h);
  out.append(payload);
  return out;
}

struct Unframed {
  json header;
  std::string_view payload;
};

Unframed unframe(std::string_view bytes, std::string_view magic, const char* what) {
  const std::string who(what);
  if (bytes.size() < magic.size() + 8 || bytes.substr(0, magic.size()) != magic) {
    throw FormatError(who + ": bad magic (expected " + std::string(magic) + ")");
  }
  const std::uint32_t version = get_u32(bytes, magic.size());
  if (version != kFormatVersion) {
    throw FormatError(who + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t hlen = get_u32(bytes, magic.size() + 4);
  const std::size_t hstart = magic.size() + 8;
  if (bytes.size() < hstart + hlen) throw FormatError(who + ": truncated header");
  Unframed u;
  try {
    u.header = json::parse(bytes.substr(hstart, hlen));
  } catch (const json::exception& e) {
    throw FormatError(who + ": malformed header: " + e.what());
  }
  if (!u.header.is_object()) throw FormatError(who + ": header is not an object");
  u.payload = bytes.substr(hstart + hlen);
  return u;
}

template <class T>
T header_field(const json& h, const char* key, const char* who) {
  if (!h.contains(key)) throw FormatError(std::string(who) + ": header lacks '" + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string(who) + ": header field '" + key + "' has the wrong type");
  }
}

void check_payload(const json& h, std::string_view payload, std::size_t expected, const char* who) {
  const auto declared = header_field<std::size_t>(h, "payload_bytes", who);
  if (declared != expected || payload.size() != expected) {
    throw FormatError(std::string(who) + ": payload length " + std::to_string(payload.size()) +
                      " bytes, header declares " + std::to_string(declared) +
                      ", shape implies " + std::to_string(expected));
  }
  const auto crc = header_field<std::uint32_t>(h, "payload_crc32", who);
  if (crc32(payload) != crc) throw ChecksumError(std::string(who) + ": payload CRC32 mismatch");
}

}  // namespace

// ---- WAV -------------------------------------------------------------------

Wave decode_wav(std::string_view b, bool allow_any_rate) {
  if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE") {
    throw FormatError("wav: not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint32_t rate = 0;
  while (pos + 8 <= b.size()) {
    const std::string_view id = b.substr(pos, 4);
    const std::uint32_t len = get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + 16 > b.size()) throw FormatError("wav: truncated fmt chunk");
      const std::uint16_t tag = get_u16(b, body);
      const std::uint16_t channels = get_u16(b, body + 2);
      rate = get_u32(b, body + 4);
      const std::uint16_t bits = get_u16(b, body + 14);
      if (tag != 1) throw FormatError("wav: format tag " + std::to_string(tag) + " is not PCM");
      if (channels != 1) {
        throw FormatError("wav: " + std::to_string(channels) + " channels; only mono is supported");
      }
      if (bits != 16) throw FormatError("wav: " + std::to_string(bits) + "-bit samples; need 16");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (body + len > b.size()) {
        throw FormatError("wav: truncated data chunk (" + std::to_string(b.size() - body) + " of " +
                          std::to_string(len) + " bytes)");
      }
      if (len % 2 != 0) throw FormatError("wav: odd data length for 16-bit samples");
      if (rate != kSampleRate && !allow_any_rate) {
        throw DataError("wav: sample rate " + std::to_string(rate) + " Hz; expected " +
                        std::to_string(kSampleRate));
      }
      const std::size_t n = len / 2;
      std::vector<double> x(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = static_cast<std::int16_t>(get_u16(b, body + 2 * i)) / 32768.0;
      }
      return {Tensor({n}, std::move(x)), rate};
    }
    pos = body + len + (len & 1);
  }
  throw FormatError(have_fmt ? "wav: missing data chunk" : "wav: missing fmt chunk");
}

Wave read_wav(const std::string& path, bool allow_any_rate) {
  return decode_wav(read_file(path), allow_any_rate);
}

std::string encode_wav(const Tensor& samples, std::uint32_t sample_rate) {
  const std::size_t n = samples.numel();
  std::string out;
  out.reserve(44 + 2 * n);
  out.append("RIFF");
  put_u32(out, static_cast<std::uint32_t>(36 + 2 * n));
  out.append("WAVEfmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, sample_rate);
  put_u32(out, sample_rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.append("data");
  put_u32(out, static_cast<std::uint32_t>(2 * n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(samples[i])) throw NumericalError("write_wav: non-finite sample");
    const double q = std::clamp(std::nearbyint(samples[i] * 32768.0), -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

void write_wav(const std::string& path, const Tensor& samples, std::uint32_t sample_rate) {
  write_file(path, encode_wav(samples, sample_rate));
}

// ---- feature files ---------------------------------------------------------

const Tensor* FeatureFile::find(std::string_view id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return &blocks[i];
  return nullptr;
}

std::string encode_features(const FeatureFile& f) {
  if (f.blocks.size() != f.ids.size()) throw DataError("write_features: ids and blocks differ in count");
  std::set<std::string> seen;
  std::string payload;
  payload.reserve(f.ids.size() * f.T * f.H * 4);
  for (std::size_t i = 0; i < f.ids.size(); ++i) {
    if (!seen.insert(f.ids[i]).second) throw DataError("write_features: duplicate id '" + f.ids[i] + "'");
    if (f.blocks[i].shape() != Shape{f.T, f.H}) {
      throw DimensionError("write_features: block '" + f.ids[i] + "' has shape " +
                           shape_str(f.blocks[i].shape()) + ", header says " +
                           shape_str({f.T, f.H}));
    }
    for (double v : f.blocks[i].data()) put_f32(payload, v);
  }
  json h;
  h["n_utts"] = f.ids.size();
  h["T"] = f.T;
  h["H_t"] = f.H;
  h["dtype"] = "float32";
  h["teacher_name"] = f.teacher_name;
  if (f.layer) {
    h["layer"] = *f.layer;
  } else {
    h["layer"] = "final";
  }
  h["ids"] = f.ids;
  h["payload_bytes"] = payload.size();
  h["payload_crc32"] = crc32(payload);
  return frame("SVFT1", h, payload);
}

FeatureFile decode_features(std::string_view bytes) {
  constexpr const char* who = "read_features";
  const Unframed u = unframe(bytes, "SVFT1", who);
  FeatureFile f;
  const auto n = header_field<std::size_t>(u.header, "n_utts", who);
  f.T = header_field<std::size_t>(u.header, "T", who);
  f.H = header_field<std::size_t>(u.header, "H_t", who);
  f.teacher_name = header_field<std::string>(u.header, "teacher_name", who);
  if (header_field<std::string>(u.header, "dtype", who) != "float32") {
    throw FormatError("read_features: only float32 payloads are supported");
  }
  const json& layer = u.header.contains("layer") ? u.header.at("layer") : json();
  if (layer.is_number_unsigned()) {
    f.layer = layer.get<std::size_t>();
  } else if (!(layer.is_string() && layer.get<std::string>() == "final")) {
    throw FormatError("read_features: layer must be an index or \"final\"");
  }
  f.ids = header_field<std::vector<std::string>>(u.header, "ids", who);
  if (f.ids.size() != n) {
    throw FormatError("read_features: " + std::to_string(f.ids.size()) + " ids for n_utts=" +
                      std::to_string(n));
  }
  std::set<std::string> seen;
  for (const auto& id : f.ids)
    if (!seen.insert(id).second) throw FormatError("read_features: duplicate id '" + id + "'");
  const std::size_t block = f.T * f.H;
  check_payload(u.header, u.payload, n * block * 4, who);
  f.blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(block);
    for (std::size_t e = 0; e < block; ++e) v[e] = get_f32(u.payload, 4 * (i * block + e));
    f.blocks.emplace_back(Shape{f.T, f.H}, std::move(v));
  }
  return f;
}

void write_features(const std::string& path, const FeatureFile& f) {
  write_file(path, encode_features(f));
}

FeatureFile read_features(const std::string& path) { return decode_features(read_file(path)); }

FeatureFile read_features(const std::string& path, std::size_t expected_T, std::size_t expected_H) {
  FeatureFile f = read_features(path);
  if (f.T != expected_T || f.H != expected_H) {
    throw DimensionError("read_features: file holds [" + std::to_string(f.T) + " x " +
                         std::to_string(f.H) + "] blocks, expected [" + std::to_string(expected_T) +
                         " x " + std::to_string(expected_H) + "]");
  }
  return f;
}

// ---- config JSON -----------------------------------------------------------

namespace {

json encoder_json(const EncoderConfig& c) {
  json j;
  j["H"] = c.H;
  j["L"] = c.L;
  j["G"] = c.G;
  j["expansion"] = c.expansion;
  j["frames"] = c.frames;
  j["conv_kernels"] = c.conv_kernels;
  j["conv_strides"] = c.conv_strides;
  j["conv_channels"] = c.conv_channels;
  j["lgm_conv_kernel"] = c.lgm_conv_kernel;
  j["embed_dim"] = c.embed_dim;
  j["block_variant"] = to_string(c.block_variant);
  j["use_gcm"] = c.use_gcm;
  j["use_lgm"] = c.use_lgm;
  j["use_msm"] = c.use_msm;
  return j;
}

json distill_json(const DistillConfig& c) {
  json j;
  j["mode"] = to_string(c.mode);
  j["matched_teacher_layers"] = c.matched_teacher_layers;
  j["lambda_kd"] = c.lambda_kd;
  j["lambda_cls"] = c.lambda_cls;
  j["aam_scale"] = c.aam_scale;
  j["aam_margin"] = c.aam_margin;
  j["hard_k"] = c.hard_k;
  j["hard_multiplier"] = c.hard_multiplier;
  j["penalty_scope"] = to_string(c.penalty_scope);
  return j;
}

json train_json(const TrainConfig& c) {
  json j;
  j["lr0"] = c.lr0;
  j["weight_decay"] = c.weight_decay;
  j["plateau_patience"] = c.plateau_patience;
  j["early_stop_patience"] = c.early_stop_patience;
  j["lr_factor"] = c.lr_factor;
  j["batch_size"] = c.batch_size;
  j["crop_seconds"] = c.crop_seconds;
  j["seed"] = c.seed;
  j["max_epochs"] = c.max_epochs;
  j["max_steps"] = c.max_steps;
  j["n_speakers"] = c.n_speakers;
  j["utterances_per_speaker"] = c.utterances_per_speaker;
  j["val_utts_per_speaker"] = c.val_utts_per_speaker;
  j["corpus_seed"] = c.corpus_seed;
  j["teacher_seed"] = c.teacher_seed;
  j["teacher_H"] = c.teacher_H;
  j["teacher_L"] = c.teacher_L;
  j["threads"] = c.threads;
  return j;
}

[[noreturn]] void bad_type(const std::string& key, const char* want) {
  throw ConfigError("config key '" + key + "' must be " + want);
}

std::size_t as_size(const json& v, const std::string& key) {
  if (!v.is_number_unsigned()) bad_type(key, "a non-negative integer");
  return v.get<std::size_t>();
}

std::uint64_t as_u64(const json& v, const std::string& key) {
  if (!v.is_number_unsigned()) bad_type(key, "a non-negative integer");
  return v.get<std::uint64_t>();
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) bad_type(key, "a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) bad_type(key, "true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) bad_type(key, "a string");
  return v.get<std::string>();
}

std::vector<std::size_t> as_size_list(const json& v, const std::string& key) {
  if (!v.is_array()) bad_type(key, "a list of non-negative integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) out.push_back(as_size(e, key));
  return out;
}

// Returns false when `key` is not an encoder field.
bool set_encoder(EncoderConfig& c, const std::string& k, const json& v) {
  if (k == "H") c.H = as_size(v, k);
  else if (k == "L") c.L = as_size(v, k);
  else if (k == "G") c.G = as_size(v, k);
  else if (k == "expansion") c.expansion = as_size(v, k);
  else if (k == "frames") c.frames = as_size(v, k);
  else if (k == "conv_kernels") c.conv_kernels = as_size_list(v, k);
  else if (k == "conv_strides") c.conv_strides = as_size_list(v, k);
  else if (k == "conv_channels") c.conv_channels = as_size(v, k);
  else if (k == "lgm_conv_kernel") c.lgm_conv_kernel = as_size(v, k);
  else if (k == "embed_dim") c.embed_dim = as_size(v, k);
  else if (k == "block_variant") c.block_variant = parse_block_variant(as_string(v, k));
  else if (k == "use_gcm") c.use_gcm = as_bool(v, k);
  else if (k == "use_lgm") c.use_lgm = as_bool(v, k);
  else if (k == "use_msm") c.use_msm = as_bool(v, k);
  else return false;
  return true;
}

bool set_distill(DistillConfig& c, const std::string& k, const json& v) {
  if (k == "mode") c.mode = parse_distill_mode(as_string(v, k));
  else if (k == "matched_teacher_layers") c.matched_teacher_layers = as_size_list(v, k);
  else if (k == "lambda_kd") c.lambda_kd = as_double(v, k);
  else if (k == "lambda_cls") c.lambda_cls = as_double(v, k);
  else if (k == "aam_scale") c.aam_scale = as_double(v, k);
  else if (k == "aam_margin") c.aam_margin = as_double(v, k);
  else if (k == "hard_k") c.hard_k = as_size(v, k);
  else if (k == "hard_multiplier") c.hard_multiplier = as_double(v, k);
  else if (k == "penalty_scope") c.penalty_scope = parse_penalty_scope(as_string(v, k));
  else return false;
  return true;
}

bool set_train(TrainConfig& c, const std::string& k, const json& v) {
  if (k == "lr0") c.lr0 = as_double(v, k);
  else if (k == "weight_decay") c.weight_decay = as_double(v, k);
  else if (k == "plateau_patience") c.plateau_patience = as_size(v, k);
  else if (k == "early_stop_patience") c.early_stop_patience = as_size(v, k);
  else if (k == "lr_factor") c.lr_factor = as_double(v, k);
  else if (k == "batch_size") c.batch_size = as_size(v, k);
  else if (k == "crop_seconds") c.crop_seconds = as_double(v, k);
  else if (k == "seed") c.seed = as_u64(v, k);
  else if (k == "max_epochs") c.max_epochs = as_size(v, k);
  else if (k == "max_steps") c.max_steps = as_size(v, k);
  else if (k == "n_speakers") c.n_speakers = as_size(v, k);
  else if (k == "utterances_per_speaker") c.utterances_per_speaker = as_size(v, k);
  else if (k == "val_utts_per_speaker") c.val_utts_per_speaker = as_size(v, k);
  else if (k == "corpus_seed") c.corpus_seed = as_u64(v, k);
  else if (k == "teacher_seed") c.teacher_seed = as_u64(v, k);
  else if (k == "teacher_H") c.teacher_H = as_size(v, k);
  else if (k == "teacher_L") c.teacher_L = as_size(v, k);
  else if (k == "threads") c.threads = as_size(v, k);
  else return false;
  return true;
}

json parse_object(std::string_view text, const char* what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  return j;
}

}  // namespace

void RunConfig::validate() const {
  encoder.validate();
  distill.validate();
  train.validate();
  if (train.teacher_H % encoder.G != 0) {
    throw ConfigError("teacher_H=" + std::to_string(train.teacher_H) +
                      " is not divisible by G=" + std::to_string(encoder.G));
  }
  if (distill.penalty_scope == PenaltyScope::class_terms && distill.hard_k >= train.n_speakers) {
    throw ConfigError("hard_k=" + std::to_string(distill.hard_k) + " needs more than " +
                      std::to_string(distill.hard_k) + " speakers");
  }
  for (std::size_t l : distill.matched_teacher_layers) {
    if (l > train.teacher_L) {
      throw ConfigError("matched teacher layer " + std::to_string(l) + " exceeds teacher_L=" +
                        std::to_string(train.teacher_L));
    }
  }
}

RunConfig parse_run_config(std::string_view text, const RunConfig& base) {
  const json j = parse_object(text, "run config");
  RunConfig c = base;
  for (const auto& [k, v] : j.items()) {
    if (!set_encoder(c.encoder, k, v) && !set_distill(c.distill, k, v) && !set_train(c.train, k, v)) {
      throw ConfigError("run config: unknown key '" + k + "'");
    }
  }
  c.validate();
  return c;
}

RunConfig read_run_config(const std::string& path, const RunConfig& base) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text, base);
}

std::string dump_run_config(const RunConfig& cfg) {
  json j = encoder_json(cfg.encoder);
  j.update(distill_json(cfg.distill));
  j.update(train_json(cfg.train));
  return j.dump(2) + "\n";
}

std::string dump_encoder_config(const EncoderConfig& cfg) { return encoder_json(cfg).dump(); }

EncoderConfig parse_encoder_config(std::string_view text) {
  const json j = parse_object(text, "encoder config");
  EncoderConfig c;
  for (const auto& [k, v] : j.items()) {
    if (!set_encoder(c, k, v)) throw ConfigError("encoder config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

// ---- checkpoints -----------------------------------------------------------

std::string encode_checkpoint(const SvMixerModel& model) {
  std::string payload;
  payload.reserve(model.params().numel() * 4);
  json params = json::array();
  for (const auto& [name, t] : model.params().entries()) {
    params.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    for (double v : t.data()) put_f32(payload, v);
  }
  json h;
  h["config"] = encoder_json(model.config());
  h["params"] = params;
  h["payload_bytes"] = payload.size();
  h["payload_crc32"] = crc32(payload);
  return frame("SVMX1", h, payload);
}

void save_checkpoint(const std::string& path, const SvMixerModel& model) {
  write_file(path, encode_checkpoint(model));
}

namespace {

EncoderConfig checkpoint_config(const json& h) {
  if (!h.contains("config") || !h.at("config").is_object()) {
    throw FormatError("load_checkpoint: header lacks the config echo");
  }
  try {
    return parse_encoder_config(h.at("config").dump());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("load_checkpoint: bad config echo: ") + e.what());
  }
}

}  // namespace

void decode_checkpoint_into(std::string_view bytes, SvMixerModel& model) {
  constexpr const char* who = "load_checkpoint";
  const Unframed u = unframe(bytes, "SVMX1", who);
  const EncoderConfig stored = checkpoint_config(u.header);
  if (!(stored == model.config())) {
    throw ConfigMismatchError("load_checkpoint: checkpoint config " + encoder_json(stored).dump() +
                              " does not match model config " + encoder_json(model.config()).dump());
  }
  const json& plist = u.header.contains("params") ? u.header.at("params") : json();
  auto& entries = model.params().entries();
  if (!plist.is_array() || plist.size() != entries.size()) {
    throw ConfigMismatchError("load_checkpoint: parameter list differs from the model's (" +
                              std::to_string(plist.is_array() ? plist.size() : 0) + " vs " +
                              std::to_string(entries.size()) + " tensors)");
  }
  std::size_t expected = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto name = header_field<std::string>(plist[i], "name", who);
    const auto shape = header_field<Shape>(plist[i], "shape", who);
    const auto offset = header_field<std::size_t>(plist[i], "offset", who);
    if (name != entries[i].first || shape != entries[i].second.shape()) {
      throw ConfigMismatchError("load_checkpoint: entry " + std::to_string(i) + " is " + name + " " +
                                shape_str(shape) + ", model has " + entries[i].first + " " +
                                shape_str(entries[i].second.shape()));
    }
    if (offset != expected) throw FormatError("load_checkpoint: non-contiguous offset for " + name);
    expected += shape_numel(shape) * 4;
  }
  check_payload(u.header, u.payload, expected, who);
  std::size_t pos = 0;
  for (auto& [name, t] : entries) {
    for (std::size_t e = 0; e < t.numel(); ++e, pos += 4) t[e] = get_f32(u.payload, pos);
  }
}

void load_checkpoint(const std::string& path, SvMixerModel& model) {
  decode_checkpoint_into(read_file(path), model);
}

SvMixerModel load_model(const std::string& path) {
  const std::string bytes = read_file(path);
  const Unframed u = unframe(bytes, "SVMX1", "load_checkpoint");
  SvMixerModel model(checkpoint_config(u.header), 0);
  decode_checkpoint_into(bytes, model);
  return model;
}

// ---- text formats ----------------------------------------------------------

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

template <class F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t lineno = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++lineno;
    std::string line(text.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto toks = split_ws(line);
    if (!toks.empty() && toks[0][0] != '#') f(lineno, toks);
    pos = end + 1;
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t lineno) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(lineno) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<Trial> parse_trials(std::string_view text) {
  std::vector<Trial> out;
  for_each_line(text, [&](std::size_t lineno, const std::vector<std::string>& t) {
    if (t.size() != 3) {
      throw DataError("trials line " + std::to_string(lineno) + ": expected 'enroll test label'");
    }
    bool target;
    if (t[2] == "target" || t[2] == "1") target = true;
    else if (t[2] == "impostor" || t[2] == "nontarget" || t[2] == "0") target = false;
    else throw DataError("trials line " + std::to_string(lineno) + ": unknown label '" + t[2] + "'");
    out.push_back({t[0], t[1], target});
  });
  return out;
}

std::vector<Trial> read_trials(const std::string& path) { return parse_trials(read_file(path)); }

std::string format_trials(const std::vector<Trial>& trials) {
  std::string out;
  for (const auto& t : trials) {
    out += t.enroll_id + " " + t.test_id + (t.target ? " target\n" : " impostor\n");
  }
  return out;
}

std::string format_scores(const std::vector<eval::TrialScore>& scores) {
  std::string out;
  for (const auto& s : scores) out += s.enroll_id + " " + s.test_id + " " + fmt_double(s.score) + "\n";
  return out;
}

std::string format_embeddings(const Embeddings& e) {
  std::string out;
  for (const auto& [id, v] : e) {
    out += id;
    for (double x : v.data()) out += " " + fmt_double(x);
    out += "\n";
  }
  return out;
}

Embeddings parse_embeddings(std::string_view text) {
  Embeddings out;
  std::set<std::string> seen;
  for_each_line(text, [&](std::size_t lineno, const std::vector<std::string>& t) {
    if (t.size() < 2) throw DataError("embeddings line " + std::to_string(lineno) + ": no values");
    if (!seen.insert(t[0]).second) {
      throw DataError("embeddings line " + std::to_string(lineno) + ": duplicate id '" + t[0] + "'");
    }
    std::vector<double> v;
    for (std::size_t i = 1; i < t.size(); ++i) v.push_back(parse_double(t[i], lineno));
    if (!out.empty() && v.size() != out.front().second.numel()) {
      throw DimensionError("embeddings line " + std::to_string(lineno) + ": dimension " +
                           std::to_string(v.size()) + " differs from " +
                           std::to_string(out.front().second.numel()));
    }
    const std::size_t n = v.size();
    out.emplace_back(t[0], Tensor({n}, std::move(v)));
  });
  return out;
}

Embeddings read_embeddings(const std::string& path) { return parse_embeddings(read_file(path)); }

}  // namespace svmixer::io
