#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecmvae/rng.hpp"

using namespace ecmvae;

TEST_CASE("same seed gives identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("fork depends on key, not on draw position") {
  Rng a(7), b(7);
  for (int i = 0; i < 17; ++i) a.next_u64();  // advance a only
  Rng ca = a.fork(3), cb = b.fork(3);
  for (int i = 0; i < 100; ++i) CHECK(ca.next_u64() == cb.next_u64());
}

TEST_CASE("distinct forks decorrelate") {
  Rng r(1);
  Rng a = r.fork(1), b = r.fork(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += (a.next_u64() == b.next_u64());
  CHECK(same == 0);
}

TEST_CASE("uniform in (0,1]") {
  Rng r(5);
  for (int i = 0; i < 100000; ++i) {
    double u = r.uniform();
    CHECK(u > 0.0);
    CHECK(u <= 1.0);
  }
}

TEST_CASE("normal moments") {
  Rng r(11);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  double mean = s / n;
  double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(double(n)));
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("uniform_int range and rough uniformity") {
  Rng r(13);
  int counts[7] = {0};
  for (int i = 0; i < 70000; ++i) {
    int64_t v = r.uniform_int(7);
    REQUIRE(v >= 0);
    REQUIRE(v < 7);
    counts[v]++;
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("categorical respects degenerate weights") {
  Rng r(17);
  for (int i = 0; i < 100; ++i) CHECK(r.categorical({1.0, 0.0, 0.0}) == 0);
}
