#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "qrs/oracle.hpp"
#include "qrs/quantum.hpp"

using namespace qrs;

TEST_CASE("werner parametrization") {
  CHECK(werner_from_fidelity(Fidelity{1.0}).w == Catch::Approx(1.0));
  CHECK(werner_from_fidelity(Fidelity{0.25}).w == Catch::Approx(0.0));
  CHECK(werner_from_fidelity(Fidelity{0.625}).w == Catch::Approx(0.5));

  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    double f = 0.25 + (rng() >> 11) * 0x1p-53 * 0.75;
    double back = fidelity_from_werner(werner_from_fidelity(Fidelity{f})).value;
    REQUIRE(back == Catch::Approx(f).margin(1e-15));
  }
}

TEST_CASE("fidelity clamping and range errors") {
  auto before = fidelity_clamp_count.load();
  Fidelity f{0.1};
  CHECK(f.value == 0.25);
  CHECK(fidelity_clamp_count.load() == before + 1);
  CHECK_THROWS_AS(Fidelity{1.1}, std::domain_error);
  CHECK_THROWS_AS(swap_fidelity(0.2, 0.9), std::domain_error);
}

TEST_CASE("swap fidelity closed form") {
  CHECK(swap_fidelity(1.0, 1.0) == Catch::Approx(1.0));
  CHECK(swap_fidelity(1.0, 0.8) == Catch::Approx(0.8));
  CHECK(swap_fidelity(0.9, 0.9) == Catch::Approx(0.8133333333).margin(1e-9));
}

TEST_CASE("purify closed form") {
  auto perfect = purify_outcome(1.0, 1.0);
  CHECK(perfect.p_success == Catch::Approx(1.0));
  CHECK(perfect.f_success == Catch::Approx(1.0));
  auto p99 = purify_outcome(0.9, 0.9);
  CHECK(p99.p_success == Catch::Approx(0.8755555556).margin(1e-9));
  CHECK(p99.f_success == Catch::Approx(0.9263959391).margin(1e-8));
  auto p77 = purify_outcome(0.7, 0.7);
  CHECK(p77.p_success == Catch::Approx(0.68).margin(1e-12));
  CHECK(p77.f_success == Catch::Approx(0.7352941176).margin(1e-9));
  // symmetric in its arguments, exactly
  auto a = purify_outcome(0.61, 0.93);
  auto b = purify_outcome(0.93, 0.61);
  CHECK(a.p_success == b.p_success);
  CHECK(a.f_success == b.f_success);
}

TEST_CASE("purify monotonicity above 1/2") {
  for (double f1 = 0.5; f1 <= 1.0001; f1 += 0.05) {
    for (double f2 = 0.5; f2 <= 1.0001; f2 += 0.05) {
      auto r = purify_outcome(std::min(f1, 1.0), std::min(f2, 1.0));
      REQUIRE(r.f_success >= std::min({f1, f2, 1.0}) - 1e-12);
    }
  }
}

TEST_CASE("swap never improves fidelity") {
  for (double f1 = 0.25; f1 < 1.0; f1 += 0.05) {
    for (double f2 = 0.25; f2 <= 1.0001; f2 += 0.05) {
      REQUIRE(swap_fidelity(f1, std::min(f2, 1.0)) <= std::min(f1, f2) + 1e-12);
    }
  }
}

TEST_CASE("decohere") {
  CHECK(decohere(0.9, 0.0, 1.0) == Catch::Approx(0.9));
  CHECK(decohere(0.9, 1e12, 1.0) == Catch::Approx(0.25).margin(1e-9));
  CHECK(decohere(0.95, 1.0, 1.0) == Catch::Approx(0.5075160023).margin(1e-9));
  // monoid action: decaying a then b equals decaying a+b
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    double f = 0.25 + (rng() >> 11) * 0x1p-53 * 0.75;
    double a = (rng() >> 11) * 0x1p-53 * 5.0;
    double b = (rng() >> 11) * 0x1p-53 * 5.0;
    double two = decohere(decohere(f, a, 2.0), b, 2.0);
    double one = decohere(f, a + b, 2.0);
    REQUIRE(two == Catch::Approx(one).margin(1e-12));
  }
}

TEST_CASE("qber_z") {
  CHECK(qber_z(1.0) == Catch::Approx(0.0));
  CHECK(qber_z(0.25) == Catch::Approx(0.5));
  CHECK(qber_z(0.9) == Catch::Approx(0.0666666667).margin(1e-9));
}

TEST_CASE("oracle trivial branches") {
  auto swap = oracle::swap_branches(0.7, 1.0);
  for (const auto& b : swap) {
    CHECK(b.probability == Catch::Approx(0.25).margin(1e-12));
    CHECK(b.fidelity == Catch::Approx(0.7).margin(1e-12));
  }
  auto pur = oracle::purify(1.0, 1.0);
  CHECK(pur.p_success == Catch::Approx(1.0));
  CHECK(pur.f_success == Catch::Approx(1.0));
}

TEST_CASE("closed forms match the density-matrix oracle on a grid") {
  for (double f1 = 0.25; f1 <= 1.0 + 1e-9; f1 += 0.05) {
    for (double f2 = 0.25; f2 <= 1.0 + 1e-9; f2 += 0.05) {
      double a = std::min(f1, 1.0), b = std::min(f2, 1.0);
      REQUIRE(oracle::swap_avg_fidelity(a, b) ==
              Catch::Approx(swap_fidelity(a, b)).margin(1e-9));
      auto got = oracle::purify(a, b);
      auto want = purify_outcome(a, b);
      REQUIRE(got.p_success == Catch::Approx(want.p_success).margin(1e-9));
      REQUIRE(got.f_success == Catch::Approx(want.f_success).margin(1e-9));
    }
  }
}

TEST_CASE("oracle validates qber and decoherence models") {
  for (double f = 0.25; f <= 1.0 + 1e-9; f += 0.125) {
    double ff = std::min(f, 1.0);
    REQUIRE(oracle::qber_z(ff) == Catch::Approx(qber_z(ff)).margin(1e-12));
    REQUIRE(oracle::decohere(ff, 0.7, 1.3) ==
            Catch::Approx(decohere(ff, 0.7, 1.3)).margin(1e-12));
  }
}
