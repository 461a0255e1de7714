#include "costq/dataset_io.hpp"
#include "costq/loss.hpp"
#include "costq/types.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace costq;

namespace {

Record make_record(double x0, std::optional<double> x1, std::optional<double> x2, double y,
                   AcquisitionPath path) {
  Record r;
  r.x0 = Vector::Constant(1, x0);
  if (x1) r.x1 = Vector::Constant(1, *x1);
  if (x2) r.x2 = Vector::Constant(1, *x2);
  r.y = y;
  r.path = path;
  return r;
}

}  // namespace

TEST_CASE("state_of_path maps the five admissible paths") {
  CHECK(state_of_path({0, 0}) == InformationState::S0);
  CHECK(state_of_path({1, 0}) == InformationState::S1only);
  CHECK(state_of_path({2, 0}) == InformationState::S2only);
  CHECK(state_of_path({1, 2}) == InformationState::S12);
  CHECK(state_of_path({2, 1}) == InformationState::S12);
}

TEST_CASE("state_of_path rejects repeats and resumption") {
  CHECK_THROWS_AS(state_of_path({1, 1}), InvalidPath);
  CHECK_THROWS_AS(state_of_path({2, 2}), InvalidPath);
  CHECK_THROWS_AS(state_of_path({0, 1}), InvalidPath);
  CHECK_THROWS_AS(state_of_path({0, 2}), InvalidPath);
  CHECK_THROWS_AS(state_of_path({3, 0}), InvalidPath);
}

TEST_CASE("state_of_path is total on valid paths and exactly two reach S12") {
  int full = 0;
  for (int a = 0; a <= 2; ++a) {
    for (int b = 0; b <= 2; ++b) {
      const AcquisitionPath p{a, b};
      if (is_valid_path(p)) {
        CHECK_NOTHROW(state_of_path(p));
        full += state_of_path(p) == InformationState::S12 ? 1 : 0;
      } else {
        CHECK_THROWS_AS(state_of_path(p), InvalidPath);
      }
    }
  }
  CHECK(full == 2);
}

TEST_CASE("features_at_state concatenates x0, x1, x2 in order") {
  const Record r = make_record(0.5, 1.0, std::nullopt, 0, {1, 0});
  const Vector f = features_at_state(r, InformationState::S1only);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == 0.5);
  CHECK(f[1] == 1.0);

  const Record full = make_record(1.0, 2.0, 3.0, 1, {2, 1});
  const Vector g = features_at_state(full, InformationState::S12);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 2.0);
  CHECK(g[2] == 3.0);

  const Record stop = make_record(0.5, std::nullopt, std::nullopt, 0, {0, 0});
  CHECK_THROWS_AS(features_at_state(stop, InformationState::S1only), MissingBlock);
}

TEST_CASE("state feature dimensions add block sizes") {
  const BlockDims d{2, 3, 4};
  CHECK(d.at_state(InformationState::S0) == 2);
  CHECK(d.at_state(InformationState::S1only) == 5);
  CHECK(d.at_state(InformationState::S2only) == 6);
  CHECK(d.at_state(InformationState::S12) == 9);
}

TEST_CASE("prediction loss values") {
  CHECK(prediction_loss(1.0, 1.0) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(prediction_loss(1.0, 1.0) < 1e-11);
  CHECK(prediction_loss(0.0, 0.5) == doctest::Approx(std::log(2.0)));
  CHECK(std::isfinite(prediction_loss(1.0, 0.0)));
  CHECK(prediction_loss(2.0, 1.5, OutcomeKind::continuous) == 0.25);
}

TEST_CASE("cost augmented loss adds the cumulative state cost") {
  const double l = std::log(2.0);
  CHECK(cost_augmented_loss(0, 0.5, InformationState::S0, CostSchedule(0.3, 0.4)) == doctest::Approx(l));
  CHECK(cost_augmented_loss(0, 0.5, InformationState::S12, CostSchedule(0.01, 0.02)) ==
        doctest::Approx(l + 0.03));
  CHECK(cost_augmented_loss(0, 0.5, InformationState::S1only, CostSchedule(0.012, 0.024)) ==
        doctest::Approx(l + 0.012));
}

TEST_CASE("cost term is exact and monotone in each cost") {
  const double base = prediction_loss(1.0, 0.3);
  for (auto s : kAllStates) {
    const CostSchedule c(0.013, 0.021);
    CHECK(cost_augmented_loss(1.0, 0.3, s, c) - base == doctest::Approx(c.cumulative(s)).epsilon(1e-15));
    double prev = -1.0;
    for (double c1 : {0.0, 0.01, 0.1, 1.0}) {
      const double v = cost_augmented_loss(1.0, 0.3, s, CostSchedule(c1, 0.02));
      CHECK(v >= prev);
      prev = v;
    }
  }
  CHECK_THROWS_AS(CostSchedule(-0.1, 0.0), ConfigError);
}

TEST_CASE("cheaper test breaks cost ties toward test 1") {
  CHECK(CostSchedule(0.01, 0.02).cheaper_test() == 1);
  CHECK(CostSchedule(0.004, 0.002).cheaper_test() == 2);
  CHECK(CostSchedule(0.01, 0.01).cheaper_test() == 1);
}

TEST_CASE("pairwise summation agrees with a long double reference") {
  std::vector<double> v;
  long double ref = 0.0L;
  for (int i = 0; i < 10007; ++i) {
    v.push_back(1.0 / (1.0 + i));
    ref += 1.0L / (1.0L + i);
  }
  CHECK(std::abs(pairwise_sum(v) - static_cast<double>(ref)) < 1e-12);
  CHECK(pairwise_mean(v) == doctest::Approx(static_cast<double>(ref) / 10007));
}

TEST_CASE("dataset validates observability against the path") {
  const BlockDims d{1, 1, 1};
  std::vector<Record> ok = {make_record(0.1, std::nullopt, std::nullopt, 0, {0, 0}),
                            make_record(0.2, 1.0, 2.0, 1, {1, 2})};
  CHECK_NOTHROW(Dataset(ok, d, OutcomeKind::binary));

  std::vector<Record> bad = ok;
  bad.push_back(make_record(0.3, 1.0, 2.0, 1, {1, 0}));
  try {
    Dataset ds(bad, d, OutcomeKind::binary);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.row() == 3);
  }
  CHECK_THROWS_AS(Dataset({}, d, OutcomeKind::binary), EmptyData);
  std::vector<Record> y2 = {make_record(0.1, std::nullopt, std::nullopt, 2, {0, 0})};
  CHECK_THROWS_AS(Dataset(y2, d, OutcomeKind::binary), SchemaError);
  CHECK_NOTHROW(Dataset(y2, d, OutcomeKind::continuous));
}

TEST_CASE("csv round trip is exact") {
  const BlockDims d{1, 1, 1};
  std::vector<Record> recs = {make_record(0.1, std::nullopt, std::nullopt, 0, {0, 0}),
                              make_record(1.0 / 3.0, -2.5e-7, std::nullopt, 1, {1, 0}),
                              make_record(-0.7, std::nullopt, 0.123456789012345678, 0, {2, 0}),
                              make_record(0.2, 1.0, 2.0, 1, {2, 1})};
  const Dataset ds(recs, d, OutcomeKind::binary);
  std::stringstream ss;
  write_dataset_csv(ss, ds);
  const std::string text = ss.str();
  CHECK(text.substr(0, text.find('\n')) == "x0_1,x1_1,x2_1,y,s1,s2");
  CHECK(text.find("\n0.10000000000000001,,,0,0,0\n") != std::string::npos);

  const Dataset back = read_dataset_csv(ss);
  REQUIRE(back.size() == ds.size());
  CHECK(back.dims() == d);
  CHECK(back.outcome() == OutcomeKind::binary);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].x0 == ds[i].x0);
    CHECK(back[i].x1 == ds[i].x1);
    CHECK(back[i].x2 == ds[i].x2);
    CHECK(back[i].y == ds[i].y);
    CHECK(back[i].path == ds[i].path);
  }
  std::stringstream again;
  write_dataset_csv(again, back);
  CHECK(again.str() == text);
}

TEST_CASE("csv loader names the offending row") {
  auto row_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      read_dataset_csv(in);
    } catch (const SchemaError& e) {
      return e.row();
    }
    return 0;
  };
  const std::string header = "x0_1,x1_1,x2_1,y,s1,s2\n";
  CHECK(row_of(header + "0.1,,,0,0,0\n0.2,,,1,3,0\n") == 2);
  CHECK(row_of(header + "0.1,,,0,0,0\n0.2,1,,1,1,1\n") == 2);
  CHECK(row_of(header + "0.1,1.0,,0,0,0\n") == 1);
  CHECK(row_of(header + "0.1,,,0,0,0\n0.2,,2,1,1,0\n") == 2);
  CHECK(row_of(header + "abc,,,0,0,0\n") == 1);
  CHECK(row_of(header + "0.1,,,0,0\n") == 1);
  std::istringstream bad_header("x0_1,x2_1,y,s1,s2\n0,,0,0,0\n");
  CHECK_THROWS_AS(read_dataset_csv(bad_header), SchemaError);
}

TEST_CASE("csv reader infers continuous outcomes and reads multi-dimensional blocks") {
  std::istringstream in("x0_1,x0_2,x1_1,x2_1,x2_2,y,s1,s2\n1,2,,3,4,0.5,2,0\n");
  const Dataset ds = read_dataset_csv(in);
  CHECK(ds.outcome() == OutcomeKind::continuous);
  CHECK(ds.dims() == BlockDims{2, 1, 2});
  CHECK(ds[0].x2->size() == 2);
  CHECK((*ds[0].x2)[1] == 4.0);
}
