// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sentfuse/ops.hpp"
#include "sentfuse/rng.hpp"
#include "sentfuse/tensor.hpp"

namespace sentfuse {

// Token budget per modality: 50 content tokens plus one aggregation token.
inline constexpr std::size_t kContentTokens = 50;
inline constexpr std::size_t kSeqTokens = 51;

enum class LabelScale { three, one };  // [-3,3] vs [-1,1]

inline double scale_bound(LabelScale s) { return s == LabelScale::three ? 3.0 : 1.0; }

inline std::string scale_name(LabelScale s) { return s == LabelScale::three ? "three" : "one"; }

inline LabelScale scale_from_name(const std::string& n) {
  if (n == "three") return LabelScale::three;
  if (n == "one") return LabelScale::one;
  throw ConfigError("unknown label scale: " + n);
}

// One sample: three 50-token modality matrices, three explanation-embedding
// matrices sharing the text feature dimension, and a scalar label.
struct FeatureRecord {
  std::string id;
  Tensor<float> text;        // 50 × d_t
  Tensor<float> audio;       // 50 × d_a
  Tensor<float> video;       // 50 × d_v
  Tensor<float> expl_audio;  // L_e × d_t
  Tensor<float> expl_video;  // L_e × d_t
  Tensor<float> comments;    // L_e × d_t
  float label = 0.0f;
  LabelScale scale = LabelScale::one;
};

struct FeatureDims {
  std::size_t d_t = 0, d_a = 0, d_v = 0;
};

inline void validate_record(const FeatureRecord& r, const FeatureDims& dims) {
  auto check = [&](const Tensor<float>& t, std::size_t d, const char* field) {
    if (t.ndim() != 2 || t.shape()[1] != d) {
      throw FormatError("record '" + r.id + "': field " + field + " has shape " +
                        t.shape_str() + ", manifest expects feature dim " + std::to_string(d));
    }
  };
  check(r.text, dims.d_t, "text");
  check(r.audio, dims.d_a, "audio");
  check(r.video, dims.d_v, "video");
  check(r.expl_audio, dims.d_t, "expl_audio");
  check(r.expl_video, dims.d_t, "expl_video");
  check(r.comments, dims.d_t, "comments");
  const double bound = scale_bound(r.scale);
  if (r.label < -bound || r.label > bound) {
    throw DataError("record '" + r.id + "': label " + std::to_string(r.label) +
                    " outside scale range [-" + std::to_string(bound) + ", " +
                    std::to_string(bound) + "]");
  }
}

// ---------------------------------------------------------------------------
// TXF1 binary record format. Little-endian byte order throughout:
//   "TXF1" | u32 id_len, id bytes | u32 scale | f32 label |
//   6 fields (text, audio, video, expl_audio, expl_video, comments),
//   each u32 rows, u32 cols, rows*cols f32 row-major.
// ---------------------------------------------------------------------------

namespace txf {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) {
      throw FormatError("truncated payload in '" + path + "' at offset " +
                        std::to_string(pos) + " while reading " + what);
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline void put_matrix(std::string& buf, const Tensor<float>& t) {
  put_u32(buf, static_cast<std::uint32_t>(t.rows()));
  put_u32(buf, static_cast<std::uint32_t>(t.cols()));
  for (float v : t.data()) put_f32(buf, v);
}

inline Tensor<float> matrix(Reader& r, const char* what) {
  const std::size_t rows = r.u32(what), cols = r.u32(what);
  if (rows == 0 || cols == 0) {
    throw FormatError("zero-sized matrix for field " + std::string(what) + " in '" + r.path +
                      "' at offset " + std::to_string(r.pos));
  }
  std::vector<float> data(rows * cols);
  for (auto& v : data) v = r.f32(what);
  return Tensor<float>({rows, cols}, std::move(data));
}

}  // namespace txf

inline void write_feature_file(const FeatureRecord& rec, const std::filesystem::path& path) {
  std::string buf;
  buf += "TXF1";
  txf::put_u32(buf, static_cast<std::uint32_t>(rec.id.size()));
  buf += rec.id;
  txf::put_u32(buf, rec.scale == LabelScale::three ? 0u : 1u);
  txf::put_f32(buf, rec.label);
  for (const Tensor<float>* t :
       {&rec.text, &rec.audio, &rec.video, &rec.expl_audio, &rec.expl_video, &rec.comments}) {
    txf::put_matrix(buf, *t);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for write: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write: " + path.string());
}

inline FeatureRecord read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  txf::Reader r{buf, 0, path.string()};
  const std::string magic = r.bytes(4, "magic");
  if (magic != "TXF1") {
    throw FormatError("bad magic at offset 0 in '" + path.string() + "': expected \"TXF1\"");
  }
  FeatureRecord rec;
  const std::uint32_t id_len = r.u32("id length");
  rec.id = r.bytes(id_len, "id");
  const std::uint32_t scale = r.u32("scale");
  if (scale > 1) {
    throw FormatError("unknown scale code " + std::to_string(scale) + " in '" + path.string() +
                      "' at offset " + std::to_string(r.pos - 4));
  }
  rec.scale = scale == 0 ? LabelScale::three : LabelScale::one;
  rec.label = r.f32("label");
  rec.text = txf::matrix(r, "text");
  rec.audio = txf::matrix(r, "audio");
  rec.video = txf::matrix(r, "video");
  rec.expl_audio = txf::matrix(r, "expl_audio");
  rec.expl_video = txf::matrix(r, "expl_video");
  rec.comments = txf::matrix(r, "comments");
  if (r.pos != buf.size()) {
    throw FormatError("trailing bytes in '" + path.string() + "' at offset " +
                      std::to_string(r.pos));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// length normalization + aggregation token
// ---------------------------------------------------------------------------

// Truncate to the first `target` tokens or zero-pad the tail; the mask marks
// real tokens with 1.
inline std::pair<Tensor<float>, Tensor<float>> normalize_length(const Tensor<float>& seq,
                                                                std::size_t target = kContentTokens) {
  detail::require_2d(seq, "normalize_length");
  const std::size_t len = seq.shape()[0], d = seq.shape()[1];
  if (len == 0) throw DataError("normalize_length: empty sequence");
  Tensor<float> out({target, d});
  Tensor<float> mask({target});
  const std::size_t keep = std::min(len, target);
  std::copy_n(seq.data().begin(), keep * d, out.data().begin());
  for (std::size_t i = 0; i < keep; ++i) mask[i] = 1.0f;
  return {std::move(out), std::move(mask)};
}

// Graph-side counterpart used inside the alignment block.
template <class S>
Var<S> normalize_length_var(const Var<S>& seq, std::size_t target = kContentTokens) {
  const std::size_t len = seq.value().shape()[0];
  if (len == 0) throw DataError("normalize_length: empty sequence");
  if (len == target) return seq;
  if (len > target) return ops::slice_rows(seq, 0, target);
  return ops::pad_rows(seq, target);
}

// Prepend the learnable aggregation token at index 0.
template <class S>
Var<S> attach_agg_token(const Var<S>& seq, const Var<S>& agg) {
  detail::require_2d(seq.value(), "attach_agg_token");
  detail::require_2d(agg.value(), "attach_agg_token");
  if (agg.value().shape()[0] != 1 || agg.value().shape()[1] != seq.value().shape()[1]) {
    throw ShapeError("attach_agg_token: aggregation token " + agg.value().shape_str() +
                     " incompatible with sequence " + seq.value().shape_str());
  }
  return ops::concat_rows(agg, seq);
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

struct ExplanationState {
  std::string status = "none";  // none | raw | refined | pending-embedding | error:<msg>
  std::vector<std::string> sidecars;
};

struct Manifest {
  LabelScale scale = LabelScale::one;
  FeatureDims dims;
  std::vector<std::string> train, val, test;
  std::map<std::string, std::string> paths;  // id -> path relative to base_dir
  std::map<std::string, ExplanationState> explanations;
  std::filesystem::path base_dir;

  const std::vector<std::string>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split: " + name);
  }

  std::filesystem::path record_path(const std::string& id) const {
    auto it = paths.find(id);
    if (it == paths.end()) throw DataError("manifest does not resolve id '" + id + "'");
    return base_dir / it->second;
  }

  FeatureRecord load(const std::string& id) const {
    FeatureRecord rec = read_feature_file(record_path(id));
    if (rec.id != id) {
      throw FormatError("record file for '" + id + "' contains id '" + rec.id + "'");
    }
    validate_record(rec, dims);
    if (rec.scale != scale) {
      throw FormatError("record '" + id + "' uses scale " + scale_name(rec.scale) +
                        " but manifest declares " + scale_name(scale));
    }
    return rec;
  }
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json j;
  j["scale"] = scale_name(m.scale);
  j["dims"] = {{"d_t", m.dims.d_t}, {"d_a", m.dims.d_a}, {"d_v", m.dims.d_v}};
  j["splits"] = {{"train", m.train}, {"val", m.val}, {"test", m.test}};
  j["records"] = m.paths;
  if (!m.explanations.empty()) {
    nlohmann::json e;
    for (const auto& [id, st] : m.explanations) {
      e[id] = {{"status", st.status}, {"sidecars", st.sidecars}};
    }
    j["explanations"] = e;
  }
  return j;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for write: " + path.string());
  out << manifest_to_json(m).dump(2) << "\n";
}

inline void validate_manifest(const Manifest& m, bool check_files = true) {
  const std::size_t total = m.train.size() + m.val.size() + m.test.size();
  if (total == 0) throw DataError("manifest has empty split lists");
  std::map<std::string, int> seen;
  for (const auto* split : {&m.train, &m.val, &m.test}) {
    for (const auto& id : *split) {
      if (++seen[id] > 1) throw DataError("id '" + id + "' appears in more than one split");
    }
  }
  for (const auto& [id, n] : seen) {
    (void)n;
    if (!m.paths.count(id)) throw DataError("manifest does not resolve id '" + id + "'");
    if (check_files && !std::filesystem::exists(m.record_path(id))) {
      throw DataError("missing feature file for id '" + id + "': " +
                      m.record_path(id).string());
    }
  }
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  Manifest m;
  try {
    m.scale = scale_from_name(j.at("scale").get<std::string>());
    m.dims.d_t = j.at("dims").at("d_t").get<std::size_t>();
    m.dims.d_a = j.at("dims").at("d_a").get<std::size_t>();
    m.dims.d_v = j.at("dims").at("d_v").get<std::size_t>();
    m.train = j.at("splits").at("train").get<std::vector<std::string>>();
    m.val = j.at("splits").at("val").get<std::vector<std::string>>();
    m.test = j.at("splits").at("test").get<std::vector<std::string>>();
    m.paths = j.at("records").get<std::map<std::string, std::string>>();
    if (j.contains("explanations")) {
      for (const auto& [id, st] : j.at("explanations").items()) {
        ExplanationState e;
        e.status = st.at("status").get<std::string>();
        if (st.contains("sidecars"))
          e.sidecars = st.at("sidecars").get<std::vector<std::string>>();
        m.explanations[id] = e;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path.string() + "' is missing required fields: " +
                      e.what());
  }
  m.base_dir = path.parent_path();
  validate_manifest(m);
  return m;
}

// ---------------------------------------------------------------------------
// synthetic dataset generator
// ---------------------------------------------------------------------------

// Labels are a deterministic latent y; modality features carry y along planted
// unit directions. Each sample hides an extra strong copy of the signal at one
// "hot" token whose positional code is echoed by the explanation embedding, so
// alignment that reads explanations can find it while plain projections can't.
struct SynthSpec {
  std::size_t n_train = 64, n_val = 32, n_test = 32;
  std::size_t d_t = 16, d_a = 12, d_v = 12;
  std::size_t expl_len = 50;
  std::uint64_t seed = 7;
  LabelScale scale = LabelScale::one;
  double signal_text = 0.5;   // broadcast strength on text tokens
  double signal_audio = 1.0;  // hot-token strength on audio
  double signal_video = 1.0;  // hot-token strength on video
  double broadcast = 0.2;     // shared every-token strength on audio/video
  double noise = 0.2;
};

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  if (j.contains("n_train")) s.n_train = j.at("n_train").get<std::size_t>();
  if (j.contains("n_val")) s.n_val = j.at("n_val").get<std::size_t>();
  if (j.contains("n_test")) s.n_test = j.at("n_test").get<std::size_t>();
  if (j.contains("d_t")) s.d_t = j.at("d_t").get<std::size_t>();
  if (j.contains("d_a")) s.d_a = j.at("d_a").get<std::size_t>();
  if (j.contains("d_v")) s.d_v = j.at("d_v").get<std::size_t>();
  if (j.contains("expl_len")) s.expl_len = j.at("expl_len").get<std::size_t>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("scale")) s.scale = scale_from_name(j.at("scale").get<std::string>());
  if (j.contains("signal_text")) s.signal_text = j.at("signal_text").get<double>();
  if (j.contains("signal_audio")) s.signal_audio = j.at("signal_audio").get<double>();
  if (j.contains("signal_video")) s.signal_video = j.at("signal_video").get<double>();
  if (j.contains("broadcast")) s.broadcast = j.at("broadcast").get<double>();
  if (j.contains("noise")) s.noise = j.at("noise").get<double>();
  return s;
}

// Ground-truth generator structure, exposed so tests can build closed-form
// probes against the planted directions.
struct SynthPlant {
  std::vector<double> u_t, u_a, u_v;            // planted unit directions
  Tensor<float> codes_a{{1, 1}}, codes_v{{1, 1}};  // 50 × d positional codes
  std::map<std::string, std::pair<std::size_t, std::size_t>> hot;  // id -> (audio, video)
};

struct SynthResult {
  Manifest manifest;
  SynthPlant plant;
  std::filesystem::path manifest_path;
};

namespace detail_synth {

inline std::vector<double> unit_direction(Rng& rng, std::size_t d) {
  std::vector<double> u(d);
  double norm = 0;
  for (auto& x : u) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  for (auto& x : u) x /= norm;
  return u;
}

// Positional codes orthogonal to the content direction, unit length.
inline Tensor<float> make_codes(Rng& rng, std::size_t tokens, std::size_t d,
                                const std::vector<double>& u) {
  Tensor<float> codes({tokens, d});
  for (std::size_t i = 0; i < tokens; ++i) {
    std::vector<double> c(d);
    double dot = 0;
    for (std::size_t k = 0; k < d; ++k) {
      c[k] = rng.normal();
      dot += c[k] * u[k];
    }
    double norm = 0;
    for (std::size_t k = 0; k < d; ++k) {
      c[k] -= dot * u[k];
      norm += c[k] * c[k];
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (std::size_t k = 0; k < d; ++k) codes.at(i, k) = static_cast<float>(c[k] / norm);
  }
  return codes;
}

inline std::vector<std::vector<double>> make_map(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<std::vector<double>> m(rows, std::vector<double>(cols));
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& row : m)
    for (auto& x : row) x = rng.normal() * s;
  return m;
}

}  // namespace detail_synth

inline SynthResult synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.n_train + spec.n_val + spec.n_test == 0) {
    throw ConfigError("synth_dataset: zero samples requested");
  }
  if (spec.expl_len == 0) throw ConfigError("synth_dataset: expl_len must be positive");
  std::filesystem::create_directories(out_dir / "records");

  Rng rng(spec.seed);
  SynthPlant plant;
  plant.u_t = detail_synth::unit_direction(rng, spec.d_t);
  plant.u_a = detail_synth::unit_direction(rng, spec.d_a);
  plant.u_v = detail_synth::unit_direction(rng, spec.d_v);
  plant.codes_a = detail_synth::make_codes(rng, kContentTokens, spec.d_a, plant.u_a);
  plant.codes_v = detail_synth::make_codes(rng, kContentTokens, spec.d_v, plant.u_v);
  // Pointer maps embed a positional code into the explanation (text) space.
  const auto map_a = detail_synth::make_map(rng, spec.d_a, spec.d_t);
  const auto map_v = detail_synth::make_map(rng, spec.d_v, spec.d_t);
  const auto u_c = detail_synth::unit_direction(rng, spec.d_t);  // comments direction

  Manifest m;
  m.scale = spec.scale;
  m.dims = {spec.d_t, spec.d_a, spec.d_v};
  m.base_dir = out_dir;

  const double bound = scale_bound(spec.scale);
  auto gen_split = [&](const std::string& split, std::size_t n,
                       std::vector<std::string>& ids) {
    for (std::size_t i = 0; i < n; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%s_%04zu", split.c_str(), i);
      const std::string id = name;
      const double y = rng.uniform(-bound, bound);
      const std::size_t hot_a = rng.index(kContentTokens);
      const std::size_t hot_v = rng.index(kContentTokens);
      plant.hot[id] = {hot_a, hot_v};

      FeatureRecord rec;
      rec.id = id;
      rec.scale = spec.scale;
      rec.label = static_cast<float>(y);

      rec.text = Tensor<float>({kContentTokens, spec.d_t});
      for (std::size_t t = 0; t < kContentTokens; ++t)
        for (std::size_t k = 0; k < spec.d_t; ++k)
          rec.text.at(t, k) = static_cast<float>(rng.normal() * spec.noise +
                                                 spec.signal_text * y * plant.u_t[k]);

      auto fill_modality = [&](Tensor<float>& out, std::size_t d,
                               const std::vector<double>& u, const Tensor<float>& codes,
                               std::size_t hot, double hot_strength) {
        out = Tensor<float>({kContentTokens, d});
        for (std::size_t t = 0; t < kContentTokens; ++t)
          for (std::size_t k = 0; k < d; ++k) {
            double v = rng.normal() * spec.noise + codes.at(t, k) +
                       spec.broadcast * y * u[k];
            if (t == hot) v += hot_strength * y * u[k];
            out.at(t, k) = static_cast<float>(v);
          }
      };
      fill_modality(rec.audio, spec.d_a, plant.u_a, plant.codes_a, hot_a, spec.signal_audio);
      fill_modality(rec.video, spec.d_v, plant.u_v, plant.codes_v, hot_v, spec.signal_video);

      auto fill_expl = [&](Tensor<float>& out, const Tensor<float>& codes, std::size_t hot,
                           const std::vector<std::vector<double>>& map, std::size_t d_src) {
        out = Tensor<float>({spec.expl_len, spec.d_t});
        std::vector<double> pointer(spec.d_t, 0.0);
        for (std::size_t k = 0; k < d_src; ++k)
          for (std::size_t j = 0; j < spec.d_t; ++j)
            pointer[j] += static_cast<double>(codes.at(hot, k)) * map[k][j];
        for (std::size_t t = 0; t < spec.expl_len; ++t)
          for (std::size_t j = 0; j < spec.d_t; ++j)
            out.at(t, j) =
                static_cast<float>(pointer[j] + rng.normal() * spec.noise * 0.5);
      };
      fill_expl(rec.expl_audio, plant.codes_a, hot_a, map_a, spec.d_a);
      fill_expl(rec.expl_video, plant.codes_v, hot_v, map_v, spec.d_v);

      rec.comments = Tensor<float>({spec.expl_len, spec.d_t});
      for (std::size_t t = 0; t < spec.expl_len; ++t)
        for (std::size_t j = 0; j < spec.d_t; ++j)
          rec.comments.at(t, j) = static_cast<float>(rng.normal() * spec.noise +
                                                     spec.signal_text * y * u_c[j]);

      const std::string rel = "records/" + id + ".txf";
      write_feature_file(rec, out_dir / rel);
      m.paths[id] = rel;
      ids.push_back(id);
    }
  };
  gen_split("train", spec.n_train, m.train);
  gen_split("val", spec.n_val, m.val);
  gen_split("test", spec.n_test, m.test);

  const auto manifest_path = out_dir / "manifest.json";
  save_manifest(m, manifest_path);
  return {std::move(m), std::move(plant), manifest_path};
}

}  // namespace sentfuse
