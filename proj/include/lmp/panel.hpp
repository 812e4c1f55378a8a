#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lmp/common.hpp"

namespace lmp {

struct PanelSchema {
  std::string household_id = "household_id";
  std::string year = "year";
  std::string log_earnings = "log_earnings";
  std::string age = "age";
  std::string instrument = "instrument";
  // Empty means: every other column is a demographic regressor.
  std::vector<std::string> demographics;
};

// Balanced household x year panel as read from disk. Ages are raw years
// here; demographics are stored per observation with row index i*T + t.
struct RawPanel {
  std::vector<std::int64_t> household_ids;
  std::vector<int> years;  // shared across households, equally spaced
  Eigen::MatrixXd log_earnings;  // N x T
  Eigen::MatrixXd age;           // N x T
  Eigen::MatrixXd demographics;  // (N*T) x k
  Eigen::MatrixXi instrument;    // N x T, entries 0/1
  std::vector<std::string> demographic_names;
  int n_dropped = 0;

  int n_households() const { return static_cast<int>(household_ids.size()); }
  int n_periods() const { return static_cast<int>(years.size()); }
};

// Estimation-ready panel: residualized log-earnings and standardized ages.
// Immutable once built; safe to share across threads.
struct PanelDataset {
  int n_households = 0;
  int n_periods = 0;
  Eigen::MatrixXd y;           // N x T residuals
  Eigen::MatrixXd age;         // N x T standardized
  Eigen::MatrixXi instrument;  // N x T
  std::vector<double> beta_hat;  // empty when no residualization was run
  double age_mean = 0.0;
  double age_sd = 1.0;
  int year_start = 0;
  int year_spacing = 1;
  std::vector<std::int64_t> household_ids;

  void validate() const {
    if (n_households < 1) throw invariant_error("panel_io: empty panel");
    if (n_periods < 5) throw invariant_error("panel_io: panel too short (T < 5)");
    if (y.rows() != n_households || y.cols() != n_periods ||
        age.rows() != n_households || age.cols() != n_periods ||
        instrument.rows() != n_households || instrument.cols() != n_periods)
      throw invariant_error("panel_io: matrix dimensions inconsistent with N, T");
    if (!y.allFinite() || !age.allFinite())
      throw invariant_error("panel_io: non-finite panel entries");
    for (Eigen::Index i = 0; i < instrument.rows(); ++i)
      for (Eigen::Index t = 0; t < instrument.cols(); ++t)
        if (instrument(i, t) != 0 && instrument(i, t) != 1)
          throw invariant_error("panel_io: instrument must be 0/1");
    if (!beta_hat.empty() && std::abs(y.mean()) > 1e-8)
      throw invariant_error("panel_io: residuals not centered");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_cell(const std::string& cell, std::size_t row, const std::string& col) {
  bool ok = false;
  double v = parse_double(cell, ok);
  if (!ok)
    throw io_error("panel_io: malformed numeric cell at row " + std::to_string(row) +
                   ", column '" + col + "' (value '" + cell + "')");
  return v;
}

}  // namespace detail

// Reads a CSV panel, drops unbalanced households (those whose year vector
// differs from the modal one), and checks the five-period minimum.
inline RawPanel parse_panel(const std::string& path, const PanelSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw io_error("panel_io: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw io_error("panel_io: empty file '" + path + "'");
  auto header = detail::split_csv_line(line);
  std::map<std::string, int> col;
  for (std::size_t c = 0; c < header.size(); ++c) col[header[c]] = static_cast<int>(c);
  auto need = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw io_error("panel_io: missing column '" + name + "'");
    return it->second;
  };
  const int c_id = need(schema.household_id);
  const int c_year = need(schema.year);
  const int c_earn = need(schema.log_earnings);
  const int c_age = need(schema.age);
  const int c_instr = need(schema.instrument);
  std::vector<std::string> demo_names = schema.demographics;
  if (demo_names.empty()) {
    for (const auto& h : header)
      if (h != schema.household_id && h != schema.year && h != schema.log_earnings &&
          h != schema.age && h != schema.instrument && !h.empty())
        demo_names.push_back(h);
  }
  std::vector<int> c_demo;
  for (const auto& d : demo_names) c_demo.push_back(need(d));

  struct Obs {
    int year;
    double earn, age, instr;
    std::vector<double> demo;
  };
  std::map<std::int64_t, std::vector<Obs>> households;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw io_error("panel_io: row " + std::to_string(row) + " has " +
                     std::to_string(cells.size()) + " cells, expected " +
                     std::to_string(header.size()));
    Obs o;
    double idv = detail::parse_cell(cells[static_cast<std::size_t>(c_id)], row, schema.household_id);
    double yearv = detail::parse_cell(cells[static_cast<std::size_t>(c_year)], row, schema.year);
    o.year = static_cast<int>(yearv);
    if (static_cast<double>(o.year) != yearv)
      throw io_error("panel_io: non-integer year at row " + std::to_string(row));
    o.earn = detail::parse_cell(cells[static_cast<std::size_t>(c_earn)], row, schema.log_earnings);
    o.age = detail::parse_cell(cells[static_cast<std::size_t>(c_age)], row, schema.age);
    o.instr = detail::parse_cell(cells[static_cast<std::size_t>(c_instr)], row, schema.instrument);
    if (o.instr != 0.0 && o.instr != 1.0)
      throw io_error("panel_io: instrument must be 0/1 at row " + std::to_string(row));
    for (std::size_t d = 0; d < c_demo.size(); ++d)
      o.demo.push_back(detail::parse_cell(cells[static_cast<std::size_t>(c_demo[d])], row,
                                          demo_names[d]));
    households[static_cast<std::int64_t>(idv)].push_back(o);
  }
  if (households.empty()) throw io_error("panel_io: no data rows in '" + path + "'");

  // modal year vector decides the balanced sample
  std::map<std::vector<int>, int> year_pattern_count;
  for (auto& [id, obs] : households) {
    std::sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) { return a.year < b.year; });
    std::vector<int> ys;
    bool dup = false;
    for (const auto& o : obs) {
      if (!ys.empty() && o.year == ys.back()) dup = true;
      ys.push_back(o.year);
    }
    if (!dup) year_pattern_count[ys]++;
  }
  if (year_pattern_count.empty())
    throw io_error("panel_io: no household has a usable year sequence");
  std::vector<int> modal;
  int best = -1;
  for (const auto& [ys, count] : year_pattern_count) {
    if (count > best || (count == best && ys.size() > modal.size())) {
      best = count;
      modal = ys;
    }
  }
  if (static_cast<int>(modal.size()) < 5)
    throw io_error("panel_io: panel too short (T=" + std::to_string(modal.size()) +
                   " < 5 after balancing)");
  int spacing = modal[1] - modal[0];
  for (std::size_t t = 2; t < modal.size(); ++t)
    if (modal[t] - modal[t - 1] != spacing)
      throw io_error("panel_io: years are not equally spaced");

  RawPanel raw;
  raw.years = modal;
  raw.demographic_names = demo_names;
  const int T = static_cast<int>(modal.size());
  std::vector<std::int64_t> keep;
  for (const auto& [id, obs] : households) {
    std::vector<int> ys;
    for (const auto& o : obs) ys.push_back(o.year);
    if (ys == modal) keep.push_back(id);
    else raw.n_dropped++;
  }
  const int N = static_cast<int>(keep.size());
  raw.household_ids = keep;
  raw.log_earnings.resize(N, T);
  raw.age.resize(N, T);
  raw.instrument.resize(N, T);
  raw.demographics.resize(static_cast<Eigen::Index>(N) * T, static_cast<Eigen::Index>(demo_names.size()));
  for (int i = 0; i < N; ++i) {
    const auto& obs = households[keep[static_cast<std::size_t>(i)]];
    for (int t = 0; t < T; ++t) {
      raw.log_earnings(i, t) = obs[static_cast<std::size_t>(t)].earn;
      raw.age(i, t) = obs[static_cast<std::size_t>(t)].age;
      raw.instrument(i, t) = static_cast<int>(obs[static_cast<std::size_t>(t)].instr);
      for (std::size_t d = 0; d < demo_names.size(); ++d)
        raw.demographics(static_cast<Eigen::Index>(i) * T + t, static_cast<Eigen::Index>(d)) =
            obs[static_cast<std::size_t>(t)].demo[d];
    }
  }
  return raw;
}

// Pooled OLS of log-earnings on [1, demographics]; the residual y_it is the
// object the latent model describes. Ages are standardized in place and the
// constants kept so simulator and diagnostics share the same units.
inline PanelDataset residualize(const RawPanel& raw) {
  const int N = raw.n_households();
  const int T = raw.n_periods();
  const auto n = static_cast<Eigen::Index>(N) * T;
  const auto k = raw.demographics.cols();
  Eigen::MatrixXd X(n, k + 1);
  X.col(0).setOnes();
  if (k > 0) X.rightCols(k) = raw.demographics;
  Eigen::VectorXd earn(n);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) earn[static_cast<Eigen::Index>(i) * T + t] = raw.log_earnings(i, t);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < k + 1)
    throw invariant_error("panel_io: rank-deficient design (collinear demographics)");
  Eigen::VectorXd beta = qr.solve(earn);
  Eigen::VectorXd resid = earn - X * beta;

  PanelDataset ds;
  ds.n_households = N;
  ds.n_periods = T;
  ds.household_ids = raw.household_ids;
  ds.year_start = raw.years.front();
  ds.year_spacing = raw.years.size() > 1 ? raw.years[1] - raw.years[0] : 1;
  ds.y.resize(N, T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) ds.y(i, t) = resid[static_cast<Eigen::Index>(i) * T + t];
  ds.instrument = raw.instrument;
  ds.age_mean = raw.age.mean();
  double ss = (raw.age.array() - ds.age_mean).square().sum();
  ds.age_sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 1.0;
  if (!(ds.age_sd > 1e-12)) ds.age_sd = 1.0;
  ds.age = (raw.age.array() - ds.age_mean) / ds.age_sd;
  ds.beta_hat.assign(beta.data(), beta.data() + beta.size());
  ds.validate();
  return ds;
}

inline void write_panel_csv(const RawPanel& raw, const std::string& path,
                            const PanelSchema& schema = {}) {
  std::ofstream out(path);
  if (!out) throw io_error("panel_io: cannot write '" + path + "'");
  out << schema.household_id << ',' << schema.year << ',' << schema.log_earnings << ','
      << schema.age;
  for (const auto& d : raw.demographic_names) out << ',' << d;
  out << ',' << schema.instrument << '\n';
  const int T = raw.n_periods();
  for (int i = 0; i < raw.n_households(); ++i) {
    for (int t = 0; t < T; ++t) {
      out << raw.household_ids[static_cast<std::size_t>(i)] << ','
          << raw.years[static_cast<std::size_t>(t)] << ','
          << format_double(raw.log_earnings(i, t)) << ',' << format_double(raw.age(i, t));
      for (Eigen::Index d = 0; d < raw.demographics.cols(); ++d)
        out << ',' << format_double(raw.demographics(static_cast<Eigen::Index>(i) * T + t, d));
      out << ',' << raw.instrument(i, t) << '\n';
    }
  }
  if (!out) throw io_error("panel_io: write failed for '" + path + "'");
}

inline nlohmann::json panel_meta(const PanelDataset& ds, int n_dropped = 0) {
  return nlohmann::json{{"n_households", ds.n_households},
                        {"n_periods", ds.n_periods},
                        {"beta_hat", ds.beta_hat},
                        {"age_mean", ds.age_mean},
                        {"age_sd", ds.age_sd},
                        {"year_start", ds.year_start},
                        {"year_spacing", ds.year_spacing},
                        {"n_dropped", n_dropped}};
}

}  // namespace lmp
