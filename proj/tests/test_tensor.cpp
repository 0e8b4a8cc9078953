#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "scorelab/errors.hpp"
#include "scorelab/tensor.hpp"

using scorelab::ShapeError;
using scorelab::Tensor;

TEST_CASE("a fresh tensor is zero-filled with the requested extents") {
  Tensor t({2, 3});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.extent(0) == 2);
  CHECK(t.extent(1) == 3);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
}

TEST_CASE("shape and payload length must agree") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  try {
    Tensor({2, 2}, {1.0});
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,2]") != std::string::npos);
    CHECK(msg.find("1") != std::string::npos);
  }
}

TEST_CASE("scalars carry one value at rank zero") {
  Tensor s = Tensor::scalar(2.5);
  CHECK(s.is_scalar());
  CHECK(s.rank() == 0);
  CHECK(s.scalar_value() == 2.5);
  CHECK_FALSE(Tensor({2}).is_scalar());
  CHECK(Tensor({1}).is_scalar());
  CHECK_THROWS_AS(Tensor({2}).scalar_value(), ShapeError);
}

TEST_CASE("row-major indexing via at") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at(0, 2) == 2.0);
  CHECK(t.at(1, 0) == 3.0);
  t.at(1, 2) = 9.0;
  CHECK(t[5] == 9.0);
}

TEST_CASE("all_finite flags NaN and infinity") {
  Tensor t = Tensor::row({1.0, 2.0});
  CHECK(t.all_finite());
  t[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  t[0] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("shape_str prints bracketed extents") {
  CHECK(Tensor({2, 3}).shape_str() == "[2,3]");
  CHECK(Tensor::scalar(0.0).shape_str() == "[]");
  CHECK(Tensor::shape_str({7}) == "[7]");
}

TEST_CASE("full and ones fill every entry") {
  Tensor f = Tensor::full({2, 2}, -1.5);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == -1.5);
  Tensor o = Tensor::ones({3});
  for (std::size_t i = 0; i < o.size(); ++i) CHECK(o[i] == 1.0);
}
