#pragma once

// Binary checkpoint/index container:
//
//   "DAQU" | u32 format version | u32 header length | JSON header
//   | u32 matrix count | per matrix: u32 rows, u32 cols, rows*cols f32
//
// All integers and floats little-endian, matrices row-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "daqu/augment.hpp"
#include "daqu/encoder.hpp"
#include "daqu/errors.hpp"
#include "daqu/index.hpp"
#include "daqu/trainer.hpp"
#include "daqu/util.hpp"

namespace daqu {

inline constexpr char kMagic[4] = {'D', 'A', 'Q', 'U'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct Matrix {
  std::uint32_t rows = 0, cols = 0;
  std::vector<float> data;
};

struct Artifact {
  nlohmann::json header;
  std::vector<Matrix> matrices;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("artifact truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline std::string serialize_artifact(const Artifact& a) {
  std::string out(kMagic, 4);
  detail::put_u32(out, kFormatVersion);
  const std::string header = a.header.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  detail::put_u32(out, static_cast<std::uint32_t>(a.matrices.size()));
  for (const auto& m : a.matrices) {
    if (m.data.size() != static_cast<std::size_t>(m.rows) * m.cols) throw DimensionError("matrix payload does not match its shape");
    detail::put_u32(out, m.rows);
    detail::put_u32(out, m.cols);
    for (float f : m.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline Artifact deserialize_artifact(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a DAQU artifact (bad magic)");
  std::size_t pos = 4;
  const std::uint32_t version = detail::get_u32(bytes, pos);
  if (version != kFormatVersion)
    throw VersionMismatchError("artifact format version " + std::to_string(version) + ", this build reads " +
                               std::to_string(kFormatVersion));
  const std::uint32_t hlen = detail::get_u32(bytes, pos);
  if (pos + hlen > bytes.size()) throw FormatError("artifact header truncated");
  Artifact a;
  try {
    a.header = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("artifact header is not JSON: ") + e.what());
  }
  pos += hlen;
  const std::uint32_t count = detail::get_u32(bytes, pos);
  for (std::uint32_t i = 0; i < count; ++i) {
    Matrix m;
    m.rows = detail::get_u32(bytes, pos);
    m.cols = detail::get_u32(bytes, pos);
    const std::size_t n = static_cast<std::size_t>(m.rows) * m.cols;
    if (pos + 4 * n > bytes.size()) throw FormatError("artifact matrix truncated");
    m.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) m.data[k] = std::bit_cast<float>(detail::get_u32(bytes, pos));
    a.matrices.push_back(std::move(m));
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after artifact");
  return a;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string content_digest(const std::string& bytes) { return hex64(fnv1a64(bytes)); }

// Checkpoints.

inline Matrix params_matrix(const EncoderParams& p) {
  Matrix m{static_cast<std::uint32_t>(p.dim()), p.buckets(), {}};
  m.data.reserve(p.dim() * p.buckets());
  for (std::size_t d = 0; d < p.dim(); ++d)
    for (std::uint32_t v = 0; v < p.buckets(); ++v) m.data.push_back(static_cast<float>(p.at(d, v)));
  return m;
}

inline EncoderParams params_from_matrix(EncoderRole role, const Matrix& m) {
  EncoderParams p(role, m.rows, m.cols);
  for (std::size_t d = 0; d < m.rows; ++d)
    for (std::uint32_t v = 0; v < m.cols; ++v) p.at(d, v) = m.data[d * m.cols + v];
  return p;
}

inline nlohmann::json blend_to_json(const BlendConfig& b) {
  return {{"lambda", b.lambda}, {"empty_metadata_policy", to_string(b.empty_metadata_policy)}};
}

inline BlendConfig blend_from_json(const nlohmann::json& j) {
  BlendConfig b;
  try {
    b.lambda = j.value("lambda", b.lambda);
    const auto p = j.value("empty_metadata_policy", std::string("fallback_to_query"));
    if (p == "fallback_to_query") b.empty_metadata_policy = EmptyMetadataPolicy::fallback_to_query;
    else if (p == "blend_with_zero") b.empty_metadata_policy = EmptyMetadataPolicy::blend_with_zero;
    else throw ConfigError("unknown empty_metadata_policy '" + p + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed blend config: ") + e.what());
  }
  b.validate();
  return b;
}

/// `extra` is merged into the header (e.g. the experiment config).
inline std::string serialize_checkpoint(const Checkpoint& c, const nlohmann::json& extra = nlohmann::json::object()) {
  Artifact a;
  a.header = extra;
  a.header["kind"] = "checkpoint";
  a.header["featurizer"] = {{"hash_buckets", c.model.featurizer.hash_buckets}, {"max_tokens", c.model.featurizer.max_tokens}};
  a.header["dim"] = c.model.dim();
  a.header["blend"] = blend_to_json(c.blend);
  a.header["specs_digest"] = c.specs_digest;
  a.header["seed"] = c.seed;
  a.header["epoch"] = c.epoch;
  a.matrices = {params_matrix(c.model.query), params_matrix(c.model.document), params_matrix(c.model.attribute)};
  return serialize_artifact(a);
}

inline Checkpoint checkpoint_from_artifact(const Artifact& a) {
  if (a.header.value("kind", std::string()) != "checkpoint") throw FormatError("artifact is not a checkpoint");
  if (a.matrices.size() != 3) throw FormatError("checkpoint must hold 3 matrices");
  Checkpoint c;
  try {
    c.model.featurizer.hash_buckets = a.header.at("featurizer").at("hash_buckets").get<std::uint32_t>();
    c.model.featurizer.max_tokens = a.header.at("featurizer").at("max_tokens").get<std::size_t>();
    c.specs_digest = a.header.at("specs_digest").get<std::string>();
    c.seed = a.header.at("seed").get<std::uint64_t>();
    c.epoch = a.header.at("epoch").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  c.blend = blend_from_json(a.header.at("blend"));
  c.model.query = params_from_matrix(EncoderRole::query, a.matrices[0]);
  c.model.document = params_from_matrix(EncoderRole::document, a.matrices[1]);
  c.model.attribute = params_from_matrix(EncoderRole::attribute, a.matrices[2]);
  for (const auto* p : {&c.model.query, &c.model.document, &c.model.attribute}) {
    if (p->dim() != c.model.query.dim() || p->buckets() != c.model.featurizer.hash_buckets)
      throw DimensionMismatchError("checkpoint parameter blocks have inconsistent shapes");
  }
  return c;
}

// Dense index.

inline std::string serialize_index(const DenseIndex& index, const nlohmann::json& extra = nlohmann::json::object()) {
  Artifact a;
  a.header = extra;
  a.header["kind"] = "index";
  a.header["metric"] = index.metric() == Metric::dot ? "dot" : "cosine";
  a.header["ids"] = index.ids();
  Matrix m{static_cast<std::uint32_t>(index.size()), static_cast<std::uint32_t>(index.dim()), {}};
  for (double x : index.matrix()) m.data.push_back(static_cast<float>(x));
  a.matrices.push_back(std::move(m));
  return serialize_artifact(a);
}

inline DenseIndex index_from_artifact(const Artifact& a) {
  if (a.header.value("kind", std::string()) != "index") throw FormatError("artifact is not an index");
  if (a.matrices.size() != 1) throw FormatError("index must hold 1 matrix");
  const auto& m = a.matrices[0];
  auto ids = a.header.at("ids").get<std::vector<std::string>>();
  if (ids.size() != m.rows) throw DimensionMismatchError("index id count does not match its matrix");
  return DenseIndex(std::move(ids), m.cols, std::vector<double>(m.data.begin(), m.data.end()),
                    a.header.value("metric", std::string("dot")) == "cosine" ? Metric::cosine : Metric::dot);
}

/// The index as it reads back from disk (entries rounded to f32).
inline DenseIndex at_storage_precision(const DenseIndex& index) {
  std::vector<double> m(index.matrix().size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(static_cast<float>(index.matrix()[i]));
  return DenseIndex(index.ids(), index.dim(), std::move(m), index.metric());
}

}  // namespace daqu
