#pragma once

// Plain-text `key = value` run configuration. Blank lines and lines starting
// with '#' are ignored; unknown keys are rejected.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dmnet/training.hpp"

namespace dmnet {

struct RunConfig {
  DMNetConfig model;
  TrainConfig train;
  std::string data_dir;
  std::string out_dir = ".";

  bool operator==(const RunConfig& o) const {
    const TrainConfig &a = train, &b = o.train;
    return model == o.model && data_dir == o.data_dir && out_dir == o.out_dir && a.batch == b.batch &&
           a.patch == b.patch && a.lr0 == b.lr0 && a.total_iters == b.total_iters &&
           a.lambda == b.lambda && a.seed == b.seed && a.log_every == b.log_every &&
           a.ckpt_every == b.ckpt_every && a.augment == b.augment;
  }

  void validate() const {
    model.validate();
    train.validate();
  }
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class Int>
Int parse_uint(const std::string& key, const std::string& v) {
  Int out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::string real_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Applies one key/value pair. Throws ConfigError for unknown keys or bad values.
inline void apply_config_value(RunConfig& rc, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "scale") rc.model.scale = parse_uint<std::size_t>(key, v);
  else if (key == "channels") rc.model.channels = parse_uint<std::size_t>(key, v);
  else if (key == "n_groups") rc.model.n_groups = parse_uint<std::size_t>(key, v);
  else if (key == "n_blocks") rc.model.n_blocks = parse_uint<std::size_t>(key, v);
  else if (key == "ffn_ratio") rc.model.ffn_ratio = parse_real(key, v);
  else if (key == "lambda") rc.train.lambda = parse_real(key, v);
  else if (key == "lr0") rc.train.lr0 = parse_real(key, v);
  else if (key == "iters") rc.train.total_iters = parse_uint<std::size_t>(key, v);
  else if (key == "batch") rc.train.batch = parse_uint<std::size_t>(key, v);
  else if (key == "patch") rc.train.patch = parse_uint<std::size_t>(key, v);
  else if (key == "seed") rc.train.seed = parse_uint<std::uint64_t>(key, v);
  else if (key == "data_dir") rc.data_dir = v;
  else if (key == "out_dir") rc.out_dir = v;
  else if (key == "log_every") rc.train.log_every = parse_uint<std::size_t>(key, v);
  else if (key == "ckpt_every") rc.train.ckpt_every = parse_uint<std::size_t>(key, v);
  else if (key == "augment") rc.train.augment = parse_bool(key, v);
  else if (key == "ablation.dynamic") rc.model.ablation.dynamic = parse_bool(key, v);
  else if (key == "ablation.freq_domain") {
    if (v == "wavelet") rc.model.ablation.domain = FreqDomain::wavelet;
    else if (v == "fourier") rc.model.ablation.domain = FreqDomain::fourier;
    else throw ConfigError("config: ablation.freq_domain expects wavelet|fourier, got '" + v + "'");
  } else if (key == "ablation.freq_loss") {
    if (v == "fourier") rc.model.ablation.loss = FreqLoss::fourier;
    else if (v == "wavelet") rc.model.ablation.loss = FreqLoss::wavelet;
    else throw ConfigError("config: ablation.freq_loss expects fourier|wavelet, got '" + v + "'");
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

inline RunConfig parse_run_config(std::istream& in) {
  RunConfig rc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    try {
      apply_config_value(rc, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  try {
    rc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

inline RunConfig parse_run_config(const std::string& text) {
  std::istringstream is(text);
  return parse_run_config(is);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_run_config(in);
}

inline std::string serialize_run_config(const RunConfig& rc) {
  using detail::real_str;
  std::ostringstream os;
  const auto& m = rc.model;
  const auto& t = rc.train;
  os << "scale = " << m.scale << '\n'
     << "channels = " << m.channels << '\n'
     << "n_groups = " << m.n_groups << '\n'
     << "n_blocks = " << m.n_blocks << '\n'
     << "ffn_ratio = " << real_str(m.ffn_ratio) << '\n'
     << "ablation.dynamic = " << (m.ablation.dynamic ? "true" : "false") << '\n'
     << "ablation.freq_domain = " << (m.ablation.domain == FreqDomain::wavelet ? "wavelet" : "fourier") << '\n'
     << "ablation.freq_loss = " << (m.ablation.loss == FreqLoss::fourier ? "fourier" : "wavelet") << '\n'
     << "lambda = " << real_str(t.lambda) << '\n'
     << "lr0 = " << real_str(t.lr0) << '\n'
     << "iters = " << t.total_iters << '\n'
     << "batch = " << t.batch << '\n'
     << "patch = " << t.patch << '\n'
     << "seed = " << t.seed << '\n'
     << "log_every = " << t.log_every << '\n'
     << "ckpt_every = " << t.ckpt_every << '\n'
     << "augment = " << (t.augment ? "true" : "false") << '\n';
  if (!rc.data_dir.empty()) os << "data_dir = " << rc.data_dir << '\n';
  if (!rc.out_dir.empty()) os << "out_dir = " << rc.out_dir << '\n';
  return os.str();
}

}  // namespace dmnet
