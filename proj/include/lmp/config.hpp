#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "lmp/common.hpp"
#include "lmp/diagnostics.hpp"
#include "lmp/msem.hpp"
#include "lmp/simulator.hpp"

namespace lmp {

// Minimal TOML subset: [section] headers, `key = value` lines, # comments,
// and scalar values (quoted string, integer, float, bool) plus flat arrays
// of scalars. That covers the whole run configuration; the README documents
// the subset.
namespace toml {

struct Value {
  enum class Kind { string, integer, real, boolean, array };
  Kind kind = Kind::string;
  std::string str;
  std::int64_t integer = 0;
  std::uint64_t uinteger = 0;
  double real = 0.0;
  bool boolean = false;
  std::vector<Value> array;
  int line = 0;
};

using Section = std::map<std::string, Value>;
using Table = std::map<std::string, Section>;

namespace detail {

inline void skip_ws(const std::string& s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

inline Value parse_scalar(const std::string& tok, int line) {
  Value v;
  v.line = line;
  if (tok == "true" || tok == "false") {
    v.kind = Value::Kind::boolean;
    v.boolean = tok == "true";
    return v;
  }
  if (!tok.empty() && tok.front() == '"') {
    if (tok.size() < 2 || tok.back() != '"')
      throw io_error("config: unterminated string at line " + std::to_string(line));
    v.kind = Value::Kind::string;
    std::string out;
    for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
      if (tok[i] == '\\' && i + 2 < tok.size()) {
        ++i;
        out += tok[i] == 'n' ? '\n' : tok[i] == 't' ? '\t' : tok[i];
      } else {
        out += tok[i];
      }
    }
    v.str = out;
    return v;
  }
  const bool looks_float = tok.find_first_of(".eE") != std::string::npos &&
                           tok.find_first_not_of("+-0123456789.eE") == std::string::npos;
  if (!looks_float) {
    if (!tok.empty() && tok.front() == '-') {
      std::int64_t iv = 0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
      if (res.ec == std::errc() && res.ptr == tok.data() + tok.size()) {
        v.kind = Value::Kind::integer;
        v.integer = iv;
        v.uinteger = static_cast<std::uint64_t>(iv);
        return v;
      }
    } else {
      std::uint64_t uv = 0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), uv);
      if (res.ec == std::errc() && res.ptr == tok.data() + tok.size()) {
        v.kind = Value::Kind::integer;
        v.integer = static_cast<std::int64_t>(uv);
        v.uinteger = uv;
        return v;
      }
    }
  }
  bool ok = false;
  double d = parse_double(tok, ok);
  if (ok) {
    v.kind = Value::Kind::real;
    v.real = d;
    return v;
  }
  throw io_error("config: cannot parse value '" + tok + "' at line " + std::to_string(line));
}

inline std::string strip_trailing(std::string s) {
  // remove a trailing comment that is not inside a string
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) {
      s.resize(i);
      break;
    }
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace detail

inline Table parse(const std::string& text) {
  Table table;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = detail::strip_trailing(raw);
    std::size_t i = 0;
    detail::skip_ws(s, i);
    if (i >= s.size()) continue;
    if (s[i] == '[') {
      auto close = s.find(']', i);
      if (close == std::string::npos)
        throw io_error("config: unterminated section header at line " + std::to_string(line));
      section = s.substr(i + 1, close - i - 1);
      if (section.empty())
        throw io_error("config: empty section name at line " + std::to_string(line));
      table[section];
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw io_error("config: expected 'key = value' at line " + std::to_string(line));
    std::string key = s.substr(0, eq);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::size_t k0 = 0;
    detail::skip_ws(key, k0);
    key = key.substr(k0);
    if (key.empty()) throw io_error("config: empty key at line " + std::to_string(line));
    std::string val = s.substr(eq + 1);
    std::size_t v0 = 0;
    detail::skip_ws(val, v0);
    val = val.substr(v0);
    if (val.empty()) throw io_error("config: missing value at line " + std::to_string(line));
    Value v;
    if (val.front() == '[') {
      if (val.back() != ']')
        throw io_error("config: unterminated array at line " + std::to_string(line));
      v.kind = Value::Kind::array;
      v.line = line;
      std::string body = val.substr(1, val.size() - 2);
      std::string cur;
      bool in_str = false;
      auto flush = [&] {
        std::size_t a = 0;
        detail::skip_ws(cur, a);
        std::string t = cur.substr(a);
        while (!t.empty() && (t.back() == ' ' || t.back() == '\t')) t.pop_back();
        if (!t.empty()) v.array.push_back(detail::parse_scalar(t, line));
        cur.clear();
      };
      for (char c : body) {
        if (c == '"') in_str = !in_str;
        if (c == ',' && !in_str) flush();
        else cur += c;
      }
      flush();
    } else {
      v = detail::parse_scalar(val, line);
    }
    table[section][key] = v;
  }
  return table;
}

}  // namespace toml

// Fully resolved run configuration: defaults filled, every key validated.
struct RunConfig {
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  int threads = 1;

  DgpSpec dgp;
  std::string sim_params_path;  // for kind = fitted

  std::string panel_path;
  MsemConfig msem;
  ModelStructure structure;
  bool checkpoint = false;

  std::string diag_params_path;
  std::string diag_panel_path;
  DiagnosticsOptions diag;
};

namespace detail {

struct SectionReader {
  const toml::Section* sec;
  std::string name;
  std::map<std::string, bool> seen;

  bool has(const std::string& key) {
    if (!sec) return false;
    seen[key] = true;
    return sec->count(key) > 0;
  }
  const toml::Value& get(const std::string& key) { return sec->at(key); }

  template <typename T>
  void read_int(const std::string& key, T& out) {
    if (!has(key)) return;
    const auto& v = get(key);
    if (v.kind != toml::Value::Kind::integer)
      throw io_error("config: key '" + key + "' in [" + name + "] must be an integer (line " +
                     std::to_string(v.line) + ")");
    out = static_cast<T>(v.integer);
  }
  void read_u64(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const auto& v = get(key);
    if (v.kind != toml::Value::Kind::integer)
      throw io_error("config: key '" + key + "' in [" + name + "] must be an integer (line " +
                     std::to_string(v.line) + ")");
    out = v.uinteger;
  }
  void read_real(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = get(key);
    if (v.kind == toml::Value::Kind::real) out = v.real;
    else if (v.kind == toml::Value::Kind::integer) out = static_cast<double>(v.integer);
    else
      throw io_error("config: key '" + key + "' in [" + name + "] must be a number (line " +
                     std::to_string(v.line) + ")");
  }
  void read_string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = get(key);
    if (v.kind != toml::Value::Kind::string)
      throw io_error("config: key '" + key + "' in [" + name + "] must be a string (line " +
                     std::to_string(v.line) + ")");
    out = v.str;
  }
  void read_bool(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = get(key);
    if (v.kind != toml::Value::Kind::boolean)
      throw io_error("config: key '" + key + "' in [" + name + "] must be a boolean (line " +
                     std::to_string(v.line) + ")");
    out = v.boolean;
  }
  void read_int_array(const std::string& key, std::vector<int>& out) {
    if (!has(key)) return;
    const auto& v = get(key);
    if (v.kind != toml::Value::Kind::array)
      throw io_error("config: key '" + key + "' in [" + name + "] must be an array (line " +
                     std::to_string(v.line) + ")");
    out.clear();
    for (const auto& e : v.array) {
      if (e.kind != toml::Value::Kind::integer)
        throw io_error("config: array '" + key + "' in [" + name + "] must hold integers");
      out.push_back(static_cast<int>(e.integer));
    }
  }
  void read_real_array(const std::string& key, std::vector<double>& out) {
    if (!has(key)) return;
    const auto& v = get(key);
    if (v.kind != toml::Value::Kind::array)
      throw io_error("config: key '" + key + "' in [" + name + "] must be an array (line " +
                     std::to_string(v.line) + ")");
    out.clear();
    for (const auto& e : v.array) {
      if (e.kind == toml::Value::Kind::real) out.push_back(e.real);
      else if (e.kind == toml::Value::Kind::integer) out.push_back(static_cast<double>(e.integer));
      else throw io_error("config: array '" + key + "' in [" + name + "] must hold numbers");
    }
  }

  void finish() {
    if (!sec) return;
    for (const auto& [key, v] : *sec)
      if (!seen.count(key))
        throw io_error("config: unknown key '" + key + "' in [" + name + "] (line " +
                       std::to_string(v.line) + ")");
  }
};

}  // namespace detail

inline RunConfig config_from_table(const toml::Table& table) {
  static const std::vector<std::string> known_sections = {"run", "simulate", "estimate",
                                                          "diagnose"};
  for (const auto& [name, _] : table) {
    bool ok = false;
    for (const auto& k : known_sections) ok = ok || k == name;
    if (!ok) throw io_error("config: unknown section [" + name + "]");
  }
  RunConfig cfg;
  auto section = [&](const std::string& name) -> detail::SectionReader {
    auto it = table.find(name);
    return {it == table.end() ? nullptr : &it->second, name, {}};
  };

  {
    auto r = section("run");
    r.read_string("out_dir", cfg.out_dir);
    r.read_u64("seed", cfg.seed);
    r.read_int("threads", cfg.threads);
    r.finish();
    if (cfg.threads < 1) throw io_error("config: threads must be >= 1");
  }
  {
    auto r = section("simulate");
    std::string kind = "canonical";
    r.read_string("kind", kind);
    if (kind == "canonical") cfg.dgp.kind = DgpKind::canonical;
    else if (kind == "nonlinear_sieve") cfg.dgp.kind = DgpKind::nonlinear_sieve;
    else if (kind == "fitted") cfg.dgp.kind = DgpKind::fitted;
    else throw io_error("config: unknown simulate kind '" + kind + "'");
    r.read_int("n_households", cfg.dgp.n_households);
    r.read_int("n_periods", cfg.dgp.n_periods);
    r.read_real("sigma_eta", cfg.dgp.sigma_eta);
    std::string dist = "gaussian";
    r.read_string("transitory", dist);
    if (dist == "gaussian") cfg.dgp.transitory_dist = TransitoryDist::gaussian;
    else if (dist == "laplace") cfg.dgp.transitory_dist = TransitoryDist::laplace;
    else throw io_error("config: unknown transitory distribution '" + dist + "'");
    r.read_real("transitory_scale", cfg.dgp.transitory_scale);
    r.read_real("beta0", cfg.dgp.beta0);
    r.read_real("beta1", cfg.dgp.beta1);
    r.read_real("age_start", cfg.dgp.age_profile.start);
    r.read_real("age_increment", cfg.dgp.age_profile.increment);
    r.read_int("year_start", cfg.dgp.year_start);
    r.read_real("rho", cfg.dgp.nonlinear.rho);
    r.read_real("sigma", cfg.dgp.nonlinear.sigma);
    r.read_real("kappa", cfg.dgp.nonlinear.kappa);
    r.read_string("params_path", cfg.sim_params_path);
    r.finish();
  }
  {
    auto r = section("estimate");
    r.read_string("panel_path", cfg.panel_path);
    r.read_int("n_outer", cfg.msem.n_outer);
    r.read_int("n_draws", cfg.msem.n_draws);
    r.read_int("mh_steps_per_estep", cfg.msem.mh_steps_per_estep);
    r.read_real("mh_proposal_sd", cfg.msem.mh_proposal_sd);
    r.read_real("burn_in_fraction", cfg.msem.burn_in_fraction);
    r.read_int("averaging_window", cfg.msem.averaging_window);
    r.read_real("tol_qreg", cfg.msem.tol_qreg);
    r.read_int("tau_knots", cfg.structure.n_tau_knots);
    r.read_int("degree_lag", cfg.structure.degree_lag);
    r.read_int("degree_age", cfg.structure.degree_age);
    r.read_int("degree_age_initial", cfg.structure.degree_age_initial);
    r.read_bool("checkpoint", cfg.checkpoint);
    r.finish();
    cfg.msem.validate();
  }
  {
    auto r = section("diagnose");
    r.read_string("params_path", cfg.diag_params_path);
    r.read_string("panel_path", cfg.diag_panel_path);
    r.read_int("n_sim", cfg.diag.n_sim);
    r.read_real("skew_tau", cfg.diag.skew_tau);
    r.read_int_array("horizons", cfg.diag.horizons);
    r.read_real_array("cond_percentiles", cfg.diag.cond_percentiles);
    r.read_real_array("tau_init_grid", cfg.diag.tau_init_grid);
    r.read_real_array("tau_shock_grid", cfg.diag.tau_shock_grid);
    r.read_bool("average_over_ages", cfg.diag.average_over_ages);
    r.finish();
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_table(toml::parse(ss.str()));
}

// Echo of the effective configuration; parses back to the same RunConfig.
inline std::string to_toml(const RunConfig& c) {
  std::ostringstream o;
  auto str = [](const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
      if (ch == '"' || ch == '\\') out += '\\';
      out += ch;
    }
    return out + "\"";
  };
  o << "[run]\n";
  o << "out_dir = " << str(c.out_dir) << "\n";
  o << "seed = " << c.seed << "\n";
  o << "threads = " << c.threads << "\n\n";
  o << "[simulate]\n";
  o << "kind = " << str(c.dgp.kind == DgpKind::canonical ? "canonical"
                        : c.dgp.kind == DgpKind::nonlinear_sieve ? "nonlinear_sieve"
                                                                 : "fitted")
    << "\n";
  o << "n_households = " << c.dgp.n_households << "\n";
  o << "n_periods = " << c.dgp.n_periods << "\n";
  o << "sigma_eta = " << format_double(c.dgp.sigma_eta) << "\n";
  o << "transitory = "
    << str(c.dgp.transitory_dist == TransitoryDist::gaussian ? "gaussian" : "laplace") << "\n";
  o << "transitory_scale = " << format_double(c.dgp.transitory_scale) << "\n";
  o << "beta0 = " << format_double(c.dgp.beta0) << "\n";
  o << "beta1 = " << format_double(c.dgp.beta1) << "\n";
  o << "age_start = " << format_double(c.dgp.age_profile.start) << "\n";
  o << "age_increment = " << format_double(c.dgp.age_profile.increment) << "\n";
  o << "year_start = " << c.dgp.year_start << "\n";
  o << "rho = " << format_double(c.dgp.nonlinear.rho) << "\n";
  o << "sigma = " << format_double(c.dgp.nonlinear.sigma) << "\n";
  o << "kappa = " << format_double(c.dgp.nonlinear.kappa) << "\n";
  o << "params_path = " << str(c.sim_params_path) << "\n\n";
  o << "[estimate]\n";
  o << "panel_path = " << str(c.panel_path) << "\n";
  o << "n_outer = " << c.msem.n_outer << "\n";
  o << "n_draws = " << c.msem.n_draws << "\n";
  o << "mh_steps_per_estep = " << c.msem.mh_steps_per_estep << "\n";
  o << "mh_proposal_sd = " << format_double(c.msem.mh_proposal_sd) << "\n";
  o << "burn_in_fraction = " << format_double(c.msem.burn_in_fraction) << "\n";
  o << "averaging_window = " << c.msem.averaging_window << "\n";
  o << "tol_qreg = " << format_double(c.msem.tol_qreg) << "\n";
  o << "tau_knots = " << c.structure.n_tau_knots << "\n";
  o << "degree_lag = " << c.structure.degree_lag << "\n";
  o << "degree_age = " << c.structure.degree_age << "\n";
  o << "degree_age_initial = " << c.structure.degree_age_initial << "\n";
  o << "checkpoint = " << (c.checkpoint ? "true" : "false") << "\n\n";
  o << "[diagnose]\n";
  o << "params_path = " << str(c.diag_params_path) << "\n";
  o << "panel_path = " << str(c.diag_panel_path) << "\n";
  o << "n_sim = " << c.diag.n_sim << "\n";
  o << "skew_tau = " << format_double(c.diag.skew_tau) << "\n";
  auto arr = [&](const char* key, const auto& xs, auto fmt) {
    o << key << " = [";
    for (std::size_t i = 0; i < xs.size(); ++i) o << (i ? ", " : "") << fmt(xs[i]);
    o << "]\n";
  };
  arr("horizons", c.diag.horizons, [](int h) { return std::to_string(h); });
  arr("cond_percentiles", c.diag.cond_percentiles, format_double);
  arr("tau_init_grid", c.diag.tau_init_grid, format_double);
  arr("tau_shock_grid", c.diag.tau_shock_grid, format_double);
  o << "average_over_ages = " << (c.diag.average_over_ages ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace lmp
