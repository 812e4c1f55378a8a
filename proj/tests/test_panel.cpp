#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "lmp/panel.hpp"
#include "lmp/rng.hpp"

using lmp::parse_panel;
using lmp::PanelSchema;
using lmp::RawPanel;
using lmp::residualize;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "lmp_panel_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string small_panel_csv(bool drop_year = false) {
  std::string s = "household_id,year,log_earnings,age,instrument\n";
  for (int h = 1; h <= 3; ++h)
    for (int y = 2000; y < 2005; ++y) {
      if (drop_year && h == 2 && y == 2002) continue;
      s += std::to_string(h) + "," + std::to_string(y) + "," +
           std::to_string(10.0 + h + 0.1 * (y - 2000)) + "," +
           std::to_string(30 + y - 2000) + "," + std::to_string((h + y) % 2) + "\n";
    }
  return s;
}

}  // namespace

TEST_CASE("well-formed panel parses to N=3, T=5") {
  auto p = temp_file("ok.csv");
  write_file(p, small_panel_csv());
  RawPanel raw = parse_panel(p.string());
  CHECK(raw.n_households() == 3);
  CHECK(raw.n_periods() == 5);
  CHECK(raw.n_dropped == 0);
  CHECK(raw.years == std::vector<int>{2000, 2001, 2002, 2003, 2004});
}

TEST_CASE("household with a missing year is dropped") {
  auto p = temp_file("gap.csv");
  write_file(p, small_panel_csv(true));
  RawPanel raw = parse_panel(p.string());
  CHECK(raw.n_households() == 2);
  CHECK(raw.n_dropped == 1);
}

TEST_CASE("panel with four periods is rejected") {
  auto p = temp_file("short.csv");
  std::string s = "household_id,year,log_earnings,age,instrument\n";
  for (int h = 1; h <= 3; ++h)
    for (int y = 2000; y < 2004; ++y)
      s += std::to_string(h) + "," + std::to_string(y) + ",10.0,40,0\n";
  write_file(p, s);
  CHECK_THROWS_WITH(parse_panel(p.string()), Catch::Matchers::ContainsSubstring("too short"));
}

TEST_CASE("malformed cells are reported with row and column") {
  auto p = temp_file("bad.csv");
  std::string s = small_panel_csv();
  s += "4,2000,not_a_number,30,0\n";
  write_file(p, s);
  CHECK_THROWS_WITH(parse_panel(p.string()),
                    Catch::Matchers::ContainsSubstring("log_earnings") &&
                        Catch::Matchers::ContainsSubstring("row 17"));
}

TEST_CASE("missing declared column errors") {
  auto p = temp_file("nocol.csv");
  write_file(p, "household_id,year,age,instrument\n1,2000,30,0\n");
  CHECK_THROWS_AS(parse_panel(p.string()), lmp::io_error);
}

TEST_CASE("residualize intercept-only on constant earnings") {
  auto p = temp_file("const.csv");
  std::string s = "household_id,year,log_earnings,age,instrument\n";
  for (int h = 1; h <= 3; ++h)
    for (int y = 2000; y < 2005; ++y)
      s += std::to_string(h) + "," + std::to_string(y) + ",7.25," +
           std::to_string(30 + y - 2000) + ",0\n";
  write_file(p, s);
  auto ds = residualize(parse_panel(p.string()));
  REQUIRE(ds.beta_hat.size() == 1);
  CHECK_THAT(ds.beta_hat[0], Catch::Matchers::WithinAbs(7.25, 1e-12));
  CHECK(ds.y.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("residualize recovers an exact linear relation") {
  auto p = temp_file("lin.csv");
  std::string s = "household_id,year,log_earnings,age,z1,instrument\n";
  lmp::Rng rng(6);
  for (int h = 1; h <= 4; ++h)
    for (int y = 2000; y < 2005; ++y) {
      double z = rng.next_normal();
      s += std::to_string(h) + "," + std::to_string(y) + "," + lmp::format_double(2.0 * z) +
           ",40," + lmp::format_double(z) + ",0\n";
    }
  write_file(p, s);
  auto ds = residualize(parse_panel(p.string()));
  REQUIRE(ds.beta_hat.size() == 2);
  CHECK_THAT(ds.beta_hat[1], Catch::Matchers::WithinAbs(2.0, 1e-10));
  CHECK(ds.y.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("residuals are orthogonal to the design") {
  // normal-equations oracle: X'(y - X beta) must vanish
  auto p = temp_file("ortho.csv");
  std::string s = "household_id,year,log_earnings,age,z1,z2,instrument\n";
  lmp::Rng rng(21);
  for (int h = 1; h <= 50; ++h)
    for (int y = 2000; y < 2005; ++y) {
      double z1 = rng.next_normal(), z2 = rng.next_normal();
      double earn = 9.0 + 0.8 * z1 - 0.4 * z2 + 0.5 * rng.next_normal();
      s += std::to_string(h) + "," + std::to_string(y) + "," + lmp::format_double(earn) +
           "," + std::to_string(25 + y - 2000) + "," + lmp::format_double(z1) + "," +
           lmp::format_double(z2) + ",0\n";
    }
  write_file(p, s);
  RawPanel raw = parse_panel(p.string());
  auto ds = residualize(raw);
  const int N = ds.n_households, T = ds.n_periods;
  Eigen::VectorXd r(N * T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) r[i * T + t] = ds.y(i, t);
  CHECK(std::abs(r.sum()) < 1e-8);
  for (int d = 0; d < 2; ++d) {
    double dot = 0.0;
    for (int i = 0; i < N * T; ++i) dot += raw.demographics(i, d) * r[i];
    CHECK(std::abs(dot) < 1e-8);
  }
}

TEST_CASE("collinear demographics are rejected") {
  auto p = temp_file("collinear.csv");
  std::string s = "household_id,year,log_earnings,age,z1,z2,instrument\n";
  lmp::Rng rng(33);
  for (int h = 1; h <= 4; ++h)
    for (int y = 2000; y < 2005; ++y) {
      double z = rng.next_normal();
      s += std::to_string(h) + "," + std::to_string(y) + "," +
           lmp::format_double(rng.next_normal()) + ",40," + lmp::format_double(z) + "," +
           lmp::format_double(2.0 * z) + ",0\n";
    }
  write_file(p, s);
  CHECK_THROWS_AS(residualize(parse_panel(p.string())), lmp::invariant_error);
}

TEST_CASE("parse, serialize, parse is the identity on balanced panels") {
  auto p = temp_file("round1.csv");
  std::string s = "household_id,year,log_earnings,age,z1,instrument\n";
  lmp::Rng rng(44);
  for (int h = 1; h <= 5; ++h)
    for (int y = 1990; y < 1996; ++y)
      s += std::to_string(h) + "," + std::to_string(y) + "," +
           lmp::format_double(rng.next_normal()) + "," +
           lmp::format_double(20.0 + y - 1990 + 0.5 * h) + "," +
           lmp::format_double(rng.next_normal()) + "," + std::to_string(h % 2) + "\n";
  write_file(p, s);
  RawPanel a = parse_panel(p.string());
  auto p2 = temp_file("round2.csv");
  lmp::write_panel_csv(a, p2.string());
  RawPanel b = parse_panel(p2.string());
  CHECK(a.household_ids == b.household_ids);
  CHECK(a.years == b.years);
  CHECK(a.log_earnings == b.log_earnings);
  CHECK(a.age == b.age);
  CHECK(a.instrument == b.instrument);
  CHECK(a.demographics == b.demographics);
}

TEST_CASE("panel meta json carries the dataset summary") {
  auto p = temp_file("meta.csv");
  write_file(p, small_panel_csv());
  auto ds = residualize(parse_panel(p.string()));
  auto j = lmp::panel_meta(ds, 2);
  CHECK(j.at("n_households") == 3);
  CHECK(j.at("n_periods") == 5);
  CHECK(j.at("n_dropped") == 2);
  CHECK(j.at("beta_hat").size() == 1);
  CHECK(j.at("age_mean").get<double>() > 0.0);
}
