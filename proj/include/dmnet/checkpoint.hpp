#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   "DMN1"                      magic
//   u32 version                 currently 1
//   u32 len, bytes              run configuration text (key = value lines)
//   tensor table                model weights
//   u8 has_optimizer
//   [u64 step, tensor table]    Adam moments, named adam.m.<param> / adam.v.<param>
//
// tensor table: u32 count, then per entry u32 name_len, UTF-8 name,
// u8 dtype (1 = f32), u32 rank, rank x u32 dims, raw values.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmnet/run_config.hpp"

namespace dmnet {

inline constexpr char kCheckpointMagic[4] = {'D', 'M', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  bool operator==(const NamedArray&) const = default;
};

struct OptimizerSnapshot {
  std::uint64_t step = 0;
  std::vector<NamedArray> moments;

  bool operator==(const OptimizerSnapshot&) const = default;
};

struct Checkpoint {
  RunConfig config;
  std::vector<NamedArray> tensors;
  std::optional<OptimizerSnapshot> optimizer;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  void bytes(const std::string& s) { buf_.append(s); }
  [[nodiscard]] const std::string& str() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : buf_(b) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const noexcept { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw CheckpointError("checkpoint: truncated file");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

inline void write_table(ByteWriter& w, const std::vector<NamedArray>& table) {
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& t : table) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float v : t.values) w.f32(v);
  }
}

inline std::vector<NamedArray> read_table(ByteReader& r) {
  const std::uint32_t count = r.u32();
  std::vector<NamedArray> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.bytes(r.u32());
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32)
      throw CheckpointError("checkpoint: tensor " + a.name + " has unsupported dtype " + std::to_string(dtype));
    const std::uint32_t rank = r.u32();
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      a.dims.push_back(r.u32());
      numel *= a.dims.back();
    }
    a.values.resize(numel);
    for (auto& v : a.values) v = r.f32();
    table.push_back(std::move(a));
  }
  return table;
}

inline NamedArray to_array(const std::string& name, const Shape& s, std::span<const float> v) {
  return {name,
          {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
           static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
          std::vector<float>(v.begin(), v.end())};
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  const std::string cfg = serialize_run_config(ck.config);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  detail::write_table(w, ck.tensors);
  w.u8(ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    w.u64(ck.optimizer->step);
    detail::write_table(w, ck.optimizer->moments);
  }
  return w.str();
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.config = parse_run_config(r.bytes(r.u32()));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: embedded config invalid: ") + e.what());
  }
  ck.tensors = detail::read_table(r);
  if (r.u8() != 0) {
    OptimizerSnapshot o;
    o.step = r.u64();
    o.moments = detail::read_table(r);
    ck.optimizer = std::move(o);
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after optimizer table");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot write '" + path + "'");
  const std::string bytes = encode_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Snapshot of model weights (and optionally Adam state) under `cfg`.
inline Checkpoint make_checkpoint(const RunConfig& cfg, DMNetWeights<float>& w,
                                  const AdamState* opt = nullptr) {
  Checkpoint ck;
  ck.config = cfg;
  auto params = w.parameters();
  for (auto& p : params) ck.tensors.push_back(detail::to_array(p.name, p.tensor.shape(), p.tensor.data()));
  if (opt && !opt->m.empty()) {
    OptimizerSnapshot o;
    o.step = opt->step;
    for (std::size_t i = 0; i < params.size(); ++i)
      o.moments.push_back(detail::to_array("adam.m." + params[i].name, params[i].tensor.shape(), opt->m[i]));
    for (std::size_t i = 0; i < params.size(); ++i)
      o.moments.push_back(detail::to_array("adam.v." + params[i].name, params[i].tensor.shape(), opt->v[i]));
    ck.optimizer = std::move(o);
  }
  return ck;
}

namespace detail {

inline bool dims_match(const NamedArray& a, const Shape& s) {
  return a.dims == std::vector<std::uint32_t>{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                              static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
}

}  // namespace detail

/// Copies checkpoint tensors into `w`. Any missing, extra or mis-shaped
/// tensor is rejected, naming the first offender in parameter order.
inline void load_weights(const Checkpoint& ck, DMNetWeights<float>& w) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t;
  auto params = w.parameters();
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing tensor " + p.name);
    if (!detail::dims_match(*it->second, p.tensor.shape()))
      throw CheckpointError("checkpoint: shape mismatch for tensor " + p.name + " (model " +
                            p.tensor.shape().str() + ")");
    std::copy(it->second->values.begin(), it->second->values.end(), p.tensor.data().begin());
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    // Report the first unexpected tensor in file order.
    for (const auto& t : ck.tensors)
      if (by_name.count(t.name)) throw CheckpointError("checkpoint: unexpected tensor " + t.name);
  }
}

inline AdamState load_optimizer(const Checkpoint& ck, DMNetWeights<float>& w) {
  AdamState st;
  if (!ck.optimizer) return st;
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& t : ck.optimizer->moments) by_name[t.name] = &t;
  st.step = ck.optimizer->step;
  for (auto& p : w.parameters()) {
    for (const char* kind : {"adam.m.", "adam.v."}) {
      auto it = by_name.find(kind + p.name);
      if (it == by_name.end() || !detail::dims_match(*it->second, p.tensor.shape()))
        throw CheckpointError(std::string("checkpoint: optimizer state missing or mis-shaped for ") + kind + p.name);
      (kind[5] == 'm' ? st.m : st.v).push_back(it->second->values);
    }
  }
  return st;
}

}  // namespace dmnet
