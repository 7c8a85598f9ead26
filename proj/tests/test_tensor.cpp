#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ecmvae/tensor.hpp"

using namespace ecmvae;

TEST_CASE("shape/data size invariant") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.data.size() == 6);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
}

TEST_CASE("row-major accessors") {
  Tensor t({2, 3});
  for (int64_t i = 0; i < 6; ++i) t[i] = double(i);
  CHECK(t.at2(1, 2) == 5.0);
  Tensor u({2, 2, 2, 2});
  for (int64_t i = 0; i < 16; ++i) u[i] = double(i);
  CHECK(u.at4(1, 0, 1, 0) == 10.0);
}

TEST_CASE("finiteness probe") {
  Tensor t({3}, 0.0);
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK(!t.all_finite());
}

TEST_CASE("same-shape guard") {
  Tensor a({2, 2}), b({4});
  CHECK_THROWS_AS(require_same_shape(a, b, "test"), std::invalid_argument);
}
