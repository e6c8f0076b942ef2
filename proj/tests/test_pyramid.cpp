#include <doctest.h>

#include <cmath>
#include <set>

#include "rankpyr/errors.hpp"
#include "rankpyr/geometry.hpp"
#include "rankpyr/pyramid.hpp"
#include "rankpyr/rng.hpp"

using namespace rankpyr;
using namespace rankpyr::pyramid;

TEST_CASE("sample_center: uniform over the central H/8 x W/8 region") {
  LevelShape shape{8, 64, 64};
  Rng rng(3);
  int lo_r = 1000, hi_r = -1, lo_c = 1000, hi_c = -1;
  for (int i = 0; i < 500; ++i) {
    auto [r, c] = sample_center(shape, rng);
    lo_r = std::min(lo_r, r);
    hi_r = std::max(hi_r, r);
    lo_c = std::min(lo_c, c);
    hi_c = std::max(hi_c, c);
  }
  CHECK(lo_r >= 28);
  CHECK(hi_r <= 36);
  CHECK(lo_c >= 28);
  CHECK(hi_c <= 36);
  CHECK(hi_r - lo_r >= 4);  // actually spreads

  Rng a(99), b(99);
  CHECK(sample_center(shape, a) == sample_center(shape, b));

  LevelShape tiny{8, 8, 8};
  Rng c_rng(1);
  auto [r8, c8] = sample_center(tiny, c_rng);
  CHECK(std::abs(r8 - 4) <= 1);
  CHECK(std::abs(c8 - 4) <= 1);

  LevelShape too_small{8, 7, 64};
  CHECK_THROWS_AS(sample_center(too_small, c_rng), LevelTooSmall);
}

TEST_CASE("generate_nested_boxes: side schedule for 64x64, r=0.75, M=4") {
  auto set = generate_nested_boxes({16, 64, 64}, {32, 32}, 4, 0.75);
  REQUIRE(set.boxes.size() == 5);
  const int expect[5] = {20, 27, 36, 48, 64};  // v0..v4, round half up
  for (int m = 0; m <= 4; ++m) {
    CHECK(set.boxes[m].height == expect[m]);
    CHECK(set.boxes[m].width == expect[m]);
  }
  CHECK(set.boxes[4] == CropBox::full(64, 64));
}

TEST_CASE("generate_nested_boxes: M=1 gives the full map and one r-crop") {
  auto set = generate_nested_boxes({4, 32, 48}, {16, 24}, 1, 0.75);
  REQUIRE(set.boxes.size() == 2);
  CHECK(set.boxes[1] == CropBox::full(32, 48));
  CHECK(set.boxes[0].height == 24);
  CHECK(set.boxes[0].width == 36);
}

TEST_CASE("generate_nested_boxes: 16x16 schedule applies rounding and the floor") {
  auto set = generate_nested_boxes({4, 16, 16}, {8, 8}, 4, 0.75);
  const int expect[5] = {5, 7, 9, 12, 16};
  for (int m = 0; m <= 4; ++m) CHECK(set.boxes[m].height == expect[m]);
  CHECK(set.boxes[0].height >= 2);
}

TEST_CASE("generate_nested_boxes: rejects bad parameters") {
  CHECK_THROWS_AS(generate_nested_boxes({4, 32, 32}, {16, 16}, 0, 0.75), InvalidParameter);
  CHECK_THROWS_AS(generate_nested_boxes({4, 32, 32}, {16, 16}, 4, 0.0), InvalidParameter);
  CHECK_THROWS_AS(generate_nested_boxes({4, 32, 32}, {16, 16}, 4, 1.0), InvalidParameter);
}

TEST_CASE("property: nesting survives off-center clamping for random draws") {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    LevelShape shape{1, 2 + static_cast<int>(rng.uniform_int(0, 126)),
                     2 + static_cast<int>(rng.uniform_int(0, 126))};
    const int m = 1 + static_cast<int>(rng.uniform_int(0, 5));
    const double r = rng.uniform(0.5, 0.9);
    // Centers anywhere, including corners: clamping must keep nesting.
    const std::pair<int, int> center{static_cast<int>(rng.uniform_int(0, shape.h - 1)),
                                     static_cast<int>(rng.uniform_int(0, shape.w - 1))};
    auto set = generate_nested_boxes(shape, center, m, r);
    REQUIRE(set.boxes.size() == static_cast<size_t>(m) + 1);
    for (int i = 0; i + 1 <= m; ++i) {
      CHECK(set.boxes[i + 1].contains(set.boxes[i]));
      CHECK(set.boxes[i].fits(shape.h, shape.w));
    }
  }
}

TEST_CASE("property: input-space receptive-field regions nest like the boxes") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    LevelShape shape{1, 8 + static_cast<int>(rng.uniform_int(0, 56)),
                     8 + static_cast<int>(rng.uniform_int(0, 56))};
    const int stride = 1 << rng.uniform_int(1, 3);
    const int rf_radius = static_cast<int>(rng.uniform_int(1, 12));
    const int input_h = shape.h * stride, input_w = shape.w * stride;
    auto center = sample_center(shape, rng);
    auto set = generate_nested_boxes(shape, center, 4, rng.uniform(0.5, 0.9));
    for (size_t i = 0; i + 1 < set.boxes.size(); ++i) {
      const CropBox inner = input_region(set.boxes[i], stride, rf_radius, input_h, input_w);
      const CropBox outer = input_region(set.boxes[i + 1], stride, rf_radius, input_h, input_w);
      CHECK(outer.contains(inner));
    }
  }
}

TEST_CASE("build_pair_set: cardinality M(M+1)/2 and exact enumeration") {
  auto set4 = generate_nested_boxes({4, 64, 64}, {32, 32}, 4, 0.75);
  auto pairs4 = build_pair_set(set4);
  CHECK(pairs4.pairs.size() == 10);
  CHECK(pair_count(4) == 10);

  auto set1 = generate_nested_boxes({4, 64, 64}, {32, 32}, 1, 0.75);
  auto pairs1 = build_pair_set(set1);
  REQUIRE(pairs1.pairs.size() == 1);
  CHECK(pairs1.pairs[0] == std::pair<int, int>{0, 1});

  // Exactly the ascending 2-subsets of {0..M}.
  std::set<std::pair<int, int>> expect;
  for (int m = 0; m <= 4; ++m)
    for (int n = m + 1; n <= 4; ++n) expect.insert({m, n});
  std::set<std::pair<int, int>> got(pairs4.pairs.begin(), pairs4.pairs.end());
  REQUIRE(got == expect);
  for (auto [m, n] : pairs4.pairs) CHECK(m < n);
}

TEST_CASE("crop_and_resize: full box is the identity") {
  Rng rng(29);
  Tensor f(3, 12, 10);
  for (double& v : f.data) v = rng.uniform(-2.0, 2.0);
  Tensor out = crop_and_resize(f, CropBox::full(12, 10));
  REQUIRE(out.same_shape(f));
  for (size_t i = 0; i < f.size(); ++i) CHECK(out.data[i] == doctest::Approx(f.data[i]).epsilon(1e-6));
}

TEST_CASE("crop_and_resize: constants stay constant") {
  Tensor f(2, 9, 9, 1.75);
  Tensor out = crop_and_resize(f, CropBox{2, 3, 4, 5});
  REQUIRE(out.same_shape(f));
  for (double v : out.data) CHECK(v == doctest::Approx(1.75).epsilon(1e-12));
}

TEST_CASE("crop_and_resize: 2x2 crop upscaled matches the bilinear stencil") {
  Tensor f(1, 4, 4);
  f.at(0, 1, 1) = 1.0;
  f.at(0, 2, 2) = 1.0;  // checkerboard inside the 2x2 crop at (1,1)
  Tensor out = crop_and_resize(f, CropBox{1, 1, 2, 2});
  REQUIRE(out.h == 4);
  auto lerp1d = [](int o) {
    const double src = (o + 0.5) * 0.5 - 0.5;
    const double fl = std::floor(src);
    return std::tuple<int, int, double>{std::clamp(static_cast<int>(fl), 0, 1),
                                        std::clamp(static_cast<int>(fl) + 1, 0, 1), src - fl};
  };
  Tensor patch(1, 2, 2);
  patch.at(0, 0, 0) = 1.0;
  patch.at(0, 1, 1) = 1.0;
  for (int oy = 0; oy < 4; ++oy) {
    auto [ylo, yhi, fy] = lerp1d(oy);
    for (int ox = 0; ox < 4; ++ox) {
      auto [xlo, xhi, fx] = lerp1d(ox);
      const double expect = (1 - fy) * ((1 - fx) * patch.at(0, ylo, xlo) + fx * patch.at(0, ylo, xhi)) +
                            fy * ((1 - fx) * patch.at(0, yhi, xlo) + fx * patch.at(0, yhi, xhi));
      CHECK(out.at(0, oy, ox) == doctest::Approx(expect).epsilon(1e-14));
    }
  }
}

TEST_CASE("crop_and_resize: rejects out-of-bounds boxes") {
  Tensor f(1, 8, 8);
  CHECK_THROWS_AS(crop_and_resize(f, CropBox{4, 4, 8, 8}), InvalidRegion);
}

TEST_CASE("determinism: same shape/seed/M/r give identical boxes and pairs") {
  Rng a(77), b(77);
  LevelShape shape{8, 48, 40};
  auto ca = sample_center(shape, a);
  auto cb = sample_center(shape, b);
  REQUIRE(ca == cb);
  auto sa = generate_nested_boxes(shape, ca, 4, 0.75);
  auto sb = generate_nested_boxes(shape, cb, 4, 0.75);
  REQUIRE(sa.boxes == sb.boxes);
  REQUIRE(build_pair_set(sa).pairs == build_pair_set(sb).pairs);
}
