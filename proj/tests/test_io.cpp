#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "cqr/io.hpp"

using namespace cqr;

namespace {

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name, const std::string& content) {
    path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::error_code ec; std::filesystem::remove(path, ec); }
};

DatasetSchema group_schema() {
  DatasetSchema s;
  s.time_col = "time";
  s.status_col = "status";
  s.group_col = "group";
  s.covariate_cols = {"x"};
  return s;
}

}  // namespace

TEST_CASE("group mode splits rows into two samples") {
  TempFile f("cqr_io_group.csv",
             "time,status,group,x\n"
             "1.0,1,1,0.1\n"
             "2.0,1,1,0.4\n"
             "1.5,1,2,0.2\n"
             "3.0,0,2,0.9\n"
             "2.5,1,2,0.5\n");
  const auto data = load_csv(f.path.string(), group_schema());
  CHECK_FALSE(data.input.paired);
  CHECK(data.label1 == "1");
  CHECK(data.label2 == "2");
  CHECK(data.input.sample1.n() == 2);
  CHECK(data.input.sample2.n() == 3);
  CHECK(data.input.p() == 1);
  CHECK(data.input.sample1[1].log_time == Catch::Approx(std::log(2.0)));

  // group-one override flips the sample order
  DatasetSchema s = group_schema();
  s.group_one = "2";
  const auto flipped = load_csv(f.path.string(), s);
  CHECK(flipped.label1 == "2");
  CHECK(flipped.input.sample1.n() == 3);
}

TEST_CASE("pair mode aligns subjects by id and arm") {
  TempFile f("cqr_io_pair.csv",
             "id,time,status,arm,x\n"
             "a,1.0,1,treat,0.1\n"
             "a,2.0,1,control,0.1\n"
             "b,4.0,0,control,0.7\n"
             "b,3.0,1,treat,0.7\n");
  DatasetSchema s;
  s.time_col = "time";
  s.status_col = "status";
  s.pair_col = "id";
  s.arm_col = "arm";
  s.covariate_cols = {"x"};
  s.arm_one = "treat";
  const auto data = load_csv(f.path.string(), s);
  REQUIRE(data.input.paired);
  CHECK(data.label1 == "treat");
  CHECK(data.input.sample1.n() == 2);
  // subject order follows first appearance; arms are aligned within pairs
  CHECK(data.input.sample1[0].log_time == 0.0);                       // a/treat
  CHECK(data.input.sample2[0].log_time == Catch::Approx(std::log(2.0)));  // a/control
  CHECK(data.input.sample2[1].event == 0);                            // b/control
}

TEST_CASE("ingestion errors name the offending row and column") {
  SECTION("bad status value") {
    TempFile f("cqr_io_status.csv", "time,status,group,x\n1.0,2,1,0.1\n2.0,1,2,0.2\n");
    CHECK_THROWS_WITH(load_csv(f.path.string(), group_schema()),
                      Catch::Matchers::ContainsSubstring("row 2") &&
                          Catch::Matchers::ContainsSubstring("status"));
  }
  SECTION("unparseable cell") {
    TempFile f("cqr_io_cell.csv", "time,status,group,x\n1.0,1,1,abc\n2.0,1,2,0.2\n");
    CHECK_THROWS_WITH(load_csv(f.path.string(), group_schema()),
                      Catch::Matchers::ContainsSubstring("row 2") &&
                          Catch::Matchers::ContainsSubstring("'x'"));
  }
  SECTION("pair with three rows") {
    TempFile f("cqr_io_pair3.csv",
               "id,time,status,arm,x\na,1,1,t,0\na,2,1,c,0\na,3,1,t,0\nb,1,1,t,0\nb,2,1,c,0\n");
    DatasetSchema s;
    s.time_col = "time";
    s.status_col = "status";
    s.pair_col = "id";
    s.arm_col = "arm";
    CHECK_THROWS_WITH(load_csv(f.path.string(), s),
                      Catch::Matchers::ContainsSubstring("pair 'a'"));
  }
  SECTION("duplicate arm within a pair") {
    TempFile f("cqr_io_dup.csv", "id,time,status,arm,x\na,1,1,t,0\na,2,1,t,0\n");
    DatasetSchema s;
    s.time_col = "time";
    s.status_col = "status";
    s.pair_col = "id";
    s.arm_col = "arm";
    CHECK_THROWS_WITH(load_csv(f.path.string(), s),
                      Catch::Matchers::ContainsSubstring("duplicate arm"));
  }
  SECTION("schema demands exactly one of group and pair") {
    DatasetSchema s;
    s.time_col = "time";
    s.status_col = "status";
    CHECK_THROWS(s.validate());
    s.group_col = "g";
    s.pair_col = "id";
    CHECK_THROWS(s.validate());
  }
}

TEST_CASE("coefficient CSV round-trips bit-exactly") {
  const TauGrid grid = TauGrid::make(0.3, 0.1, 0.1, 0.3);
  Eigen::MatrixXd beta(3, 2);
  beta << 0.123456789123456789, -1.0 / 3.0, 2.0 / 7.0, 1e-17, 3.5, -0.0;
  const CoefficientProcess proc(grid, beta, 3);
  const std::string csv = coefficient_csv({{"all", &proc}}, {"intercept", "x"});
  const auto parsed = parse_coefficient_csv(csv);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].group == "all");
  REQUIRE(parsed[0].taus.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(parsed[0].taus[static_cast<std::size_t>(k)] == grid.level(k + 1));
    for (int j = 0; j < 2; ++j)
      CHECK(parsed[0].beta[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] ==
            beta(k, j));
  }
}

TEST_CASE("band table shapes, conventions and edge draws") {
  const TauGrid grid = TauGrid::make(0.3, 0.1, 0.1, 0.3);
  Eigen::MatrixXd point = Eigen::MatrixXd::Constant(3, 2, 0.25);

  SECTION("all-zero draws collapse the bands") {
    BootstrapDraws d;
    d.n_effective = 4;
    d.draws = {Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(3, 2)};
    const auto rows = band_table(point, d, grid, {"intercept", "x"});
    REQUIRE(rows.size() == 6);  // |A| x (p+1)
    for (const auto& r : rows) {
      CHECK(r.lower == 0.0);
      CHECK(r.mean == 0.0);
      CHECK(r.upper == 0.0);
      CHECK(r.point == 0.25);
    }
  }
  SECTION("two draws +v/-v band at +-v under nearest rank") {
    BootstrapDraws d;
    d.n_effective = 4;
    Eigen::MatrixXd v = Eigen::MatrixXd::Constant(3, 2, 0.8);
    d.draws = {v, -v};
    const auto rows = band_table(point, d, grid, {"intercept", "x"});
    for (const auto& r : rows) {
      CHECK(r.lower == -0.8);
      CHECK(r.upper == 0.8);
      CHECK(r.mean == 0.0);
      CHECK(r.lower <= r.mean);
      CHECK(r.mean <= r.upper);
    }
  }
}

TEST_CASE("atomic write replaces content and never leaves temp files") {
  const auto path = std::filesystem::temp_directory_path() / "cqr_io_atomic.csv";
  write_file_atomic(path.string(), "first\n");
  write_file_atomic(path.string(), "second\n");
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content == "second\n");
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  std::filesystem::remove(path);
}

TEST_CASE("doubles format and parse losslessly") {
  for (double v : {0.1, 1e-300, -2.5e17, 0.30000000000000004, 123456.78901234567}) {
    CHECK(parse_double(format_double(v), "test") == v);
  }
}

TEST_CASE("single-sample loader ignores grouping") {
  TempFile f("cqr_io_single.csv", "time,status,x\n1.0,1,0.1\n2.0,0,0.2\n");
  DatasetSchema s;
  s.time_col = "time";
  s.status_col = "status";
  s.covariate_cols = {"x"};
  const auto sample = load_single_csv(f.path.string(), s);
  CHECK(sample.n() == 2);
  CHECK(sample.p() == 1);
}
