#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "patternspace/geometry.hpp"
#include "patternspace/patches.hpp"
#include "patternspace/rng.hpp"

#include <cmath>
#include <numeric>

using namespace ps;

TEST_CASE("iou identities") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{20, 20, 5, 5}) == doctest::Approx(0.0));
  CHECK(iou(a, Box{5, 0, 10, 10}) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS(iou(a, Box{0, 0, 0, 5}));
}

TEST_CASE("iou symmetry and bound over random boxes") {
  Rng rng(99);
  for (int i = 0; i < 2000; ++i) {
    Box a{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(1, 40), rng.uniform(1, 40)};
    Box b{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(1, 40), rng.uniform(1, 40)};
    const double ab = iou(a, b);
    CHECK(ab == doctest::Approx(iou(b, a)));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(iou(a, a) == doctest::Approx(1.0));
  }
}

TEST_CASE("sample_patch scale is uniform (chi-square)") {
  SamplerConfig cfg;
  Rng rng(4242);
  const ImageDims dims{400, 300};
  const int n = 10000, bins = 20;
  std::vector<int> hist(bins, 0);
  for (int i = 0; i < n; ++i) {
    auto s = sample_patch(dims, cfg, rng);
    REQUIRE(s.has_value());
    const int b = std::min(bins - 1, static_cast<int>((s->scale - cfg.scale_min) /
                                                      (cfg.scale_max - cfg.scale_min) * bins));
    hist[b]++;
  }
  const double expected = static_cast<double>(n) / bins;
  double chi2 = 0.0;
  for (int b = 0; b < bins; ++b) chi2 += (hist[b] - expected) * (hist[b] - expected) / expected;
  // chi-square critical value at p = 0.01, dof = 19
  CHECK(chi2 < 36.191);
}

TEST_CASE("sample_patch respects degenerate ratio and bounds") {
  SamplerConfig cfg;  // ratio fixed at 3.0
  Rng rng(7);
  const ImageDims dims{256, 192};
  for (int i = 0; i < 3000; ++i) {
    auto s = sample_patch(dims, cfg, rng);
    REQUIRE(s.has_value());
    CHECK(s->x >= 0);
    CHECK(s->y >= 0);
    CHECK(s->x + s->w <= dims.width);
    CHECK(s->y + s->h <= dims.height);
    CHECK(s->h <= 192);  // clamped when scale > height
    if (s->h < 192)      // unclamped: h/w within rounding of the sampled ratio 3.0
      CHECK(std::abs(s->h / 3.0 - s->w) <= 0.5 + 1e-9);
    CHECK(s->scale >= cfg.scale_min);
    CHECK(s->scale <= cfg.scale_max);
  }
}

TEST_CASE("sample_patch is bit-reproducible for a fixed seed") {
  SamplerConfig cfg;
  const ImageDims dims{256, 192};
  Rng a(123), b(123);
  for (int i = 0; i < 200; ++i) {
    auto sa = sample_patch(dims, cfg, a);
    auto sb = sample_patch(dims, cfg, b);
    REQUIRE(sa.has_value());
    REQUIRE(sb.has_value());
    CHECK(sa->x == sb->x);
    CHECK(sa->y == sb->y);
    CHECK(sa->w == sb->w);
    CHECK(sa->h == sb->h);
    CHECK(sa->scale == sb->scale);
  }
}

TEST_CASE("sample_pair always satisfies the IoU acceptance rule") {
  SamplerConfig cfg;
  Rng rng(31337);
  const ImageDims dims{256, 192};
  for (int i = 0; i < 10000; ++i) {
    auto [p1, p2] = sample_pair(dims, cfg, rng);
    CHECK(iou(p1.box(), p2.box()) > cfg.iou_min);
    CHECK(p2.x >= 0);
    CHECK(p2.x + p2.w <= dims.width);
    CHECK(p2.y >= 0);
    CHECK(p2.y + p2.h <= dims.height);
  }
}

TEST_CASE("zero jitter gives an identical partner") {
  SamplerConfig cfg;
  cfg.pos_jitter = 0.0;
  cfg.scale_jitter_lo = 1.0;
  cfg.scale_jitter_hi = 1.0;
  Rng rng(5);
  const ImageDims dims{256, 192};
  for (int i = 0; i < 100; ++i) {
    auto [p1, p2] = sample_pair(dims, cfg, rng);
    CHECK(p1.x == p2.x);
    CHECK(p1.y == p2.y);
    CHECK(p1.w == p2.w);
    CHECK(p1.h == p2.h);
    CHECK(iou(p1.box(), p2.box()) == doctest::Approx(1.0));
  }
}

// Brute-force oracle: enumerate the jitter cube on a dense grid, replicate
// the partner geometry (rounding and clamping), and average the IoU of the
// accepted cells. The sampler's accepted-pair mean must agree.
TEST_CASE("accepted-pair mean IoU matches jitter-grid enumeration") {
  SamplerConfig cfg;
  const ImageDims dims{400, 300};
  PatchSpec base;
  base.x = 100;
  base.y = 80;
  base.w = 30;
  base.h = 90;
  base.scale = 90.0;
  base.ratio = 3.0;

  auto partner_iou = [&](double dxf, double dyf, double s) -> double {
    int h = static_cast<int>(std::lround(base.h * s));
    h = std::clamp(h, 2, dims.height);
    int w = static_cast<int>(std::lround(h / base.ratio));
    w = std::clamp(w, 2, dims.width);
    const int x = std::clamp(static_cast<int>(std::lround(base.x + dxf * base.w)), 0, dims.width - w);
    const int y = std::clamp(static_cast<int>(std::lround(base.y + dyf * base.h)), 0, dims.height - h);
    return iou(base.box(), Box{double(x), double(y), double(w), double(h)});
  };

  const int g = 41;
  double oracle_sum = 0.0;
  int oracle_n = 0;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j)
      for (int k = 0; k < g; ++k) {
        const double dxf = -cfg.pos_jitter + 2.0 * cfg.pos_jitter * (i + 0.5) / g;
        const double dyf = -cfg.pos_jitter + 2.0 * cfg.pos_jitter * (j + 0.5) / g;
        const double s = cfg.scale_jitter_lo + (cfg.scale_jitter_hi - cfg.scale_jitter_lo) * (k + 0.5) / g;
        const double v = partner_iou(dxf, dyf, s);
        if (v > cfg.iou_min) {
          oracle_sum += v;
          oracle_n++;
        }
      }
  REQUIRE(oracle_n > 0);
  const double oracle_mean = oracle_sum / oracle_n;

  Rng rng(2024);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto p2 = jitter_partner(base, dims, cfg, rng);
    REQUIRE(p2.has_value());
    sum += iou(base.box(), p2->box());
  }
  CHECK(sum / n == doctest::Approx(oracle_mean).epsilon(0.015));
}

TEST_CASE("extract: 32x32 region is an identity crop") {
  ImageU8 img(64, 64);
  Rng rng(1);
  for (auto& v : img.data) v = static_cast<uint8_t>(rng.uniform_int(256));
  PatchSpec s;
  s.x = 10;
  s.y = 20;
  s.w = 32;
  s.h = 32;
  const PixelPatch p = extract(img, s);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(p.rgb[(y * 32 + x) * 3 + c] == img.px(10 + x, 20 + y)[c]);
}

TEST_CASE("extract: uniform region stays uniform") {
  ImageU8 img(100, 100, 137);
  PatchSpec s;
  s.x = 5;
  s.y = 5;
  s.w = 60;
  s.h = 90;
  const PixelPatch p = extract(img, s);
  for (auto v : p.rgb) CHECK(v == 137);
}

TEST_CASE("extract: checkerboard 4x downsize preserves the mean") {
  ImageU8 img(200, 200, 0);
  // 4px cells inside the crop region (32,16)..(160,144)
  double src_sum = 0.0;
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) {
      const bool on = ((x / 4) + (y / 4)) % 2 == 0;
      const uint8_t v = on ? 255 : 0;
      src_sum += v;
      uint8_t* p = img.px(32 + x, 16 + y);
      p[0] = p[1] = p[2] = v;
    }
  const double src_mean = src_sum / (128.0 * 128.0);

  PatchSpec s;
  s.x = 32;
  s.y = 16;
  s.w = 128;
  s.h = 128;
  const PixelPatch p = extract(img, s);
  double out_sum = 0.0;
  for (int i = 0; i < 32 * 32; ++i) out_sum += p.rgb[3 * i];
  CHECK(std::abs(out_sum / (32.0 * 32.0) - src_mean) <= 2.0);
}

TEST_CASE("extract rejects out-of-bounds specs") {
  ImageU8 img(50, 50);
  PatchSpec s;
  s.x = 40;
  s.y = 0;
  s.w = 20;
  s.h = 10;
  CHECK_THROWS(extract(img, s));
}

namespace {
PixelPatch gray_patch(uint8_t v) {
  PixelPatch p;
  p.rgb.fill(v);
  return p;
}
}  // namespace

TEST_CASE("sobel: constant patch gives zero gradients") {
  const GradientPatch g = sobel(gray_patch(180));
  for (float v : g.grads) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("sobel: vertical step edge responds in dx only") {
  PixelPatch p;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const uint8_t v = x < 16 ? 0 : 255;
      p.rgb[(y * 32 + x) * 3 + 0] = v;
      p.rgb[(y * 32 + x) * 3 + 1] = v;
      p.rgb[(y * 32 + x) * 3 + 2] = v;
    }
  const GradientPatch g = sobel(p);
  bool dx_responds = false;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const float dx = g.grads[y * 32 + x];
      const float dy = g.grads[32 * 32 + y * 32 + x];
      CHECK(dy == doctest::Approx(0.0f));  // replicate border keeps dy flat
      if (std::abs(dx) > 0.5f) dx_responds = true;
    }
  CHECK(dx_responds);
}

// Hand-computed responses for a horizontal luma ramp v = 8x: interior
// columns see dx = 2*(8/255), the replicated border columns half that,
// and dy = 0 everywhere.
TEST_CASE("sobel: hand-computed ramp responses") {
  PixelPatch p;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const uint8_t v = static_cast<uint8_t>(8 * x);
      p.rgb[(y * 32 + x) * 3 + 0] = v;
      p.rgb[(y * 32 + x) * 3 + 1] = v;
      p.rgb[(y * 32 + x) * 3 + 2] = v;
    }
  const GradientPatch g = sobel(p);
  const float c = 8.0f / 255.0f;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const float dx = g.grads[y * 32 + x];
      const float dy = g.grads[32 * 32 + y * 32 + x];
      const float want = (x == 0 || x == 31) ? c : 2.0f * c;
      CHECK(dx == doctest::Approx(want).epsilon(1e-4));
      CHECK(dy == doctest::Approx(0.0f));
    }
}

TEST_CASE("sobel commutes with horizontal flip up to dx sign") {
  Rng rng(77);
  PixelPatch p;
  for (auto& v : p.rgb) v = static_cast<uint8_t>(rng.uniform_int(256));
  PixelPatch flipped;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c)
        flipped.rgb[(y * 32 + (31 - x)) * 3 + c] = p.rgb[(y * 32 + x) * 3 + c];

  const GradientPatch g = sobel(p);
  const GradientPatch gf = sobel(flipped);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      CHECK(gf.grads[y * 32 + (31 - x)] == doctest::Approx(-g.grads[y * 32 + x]).epsilon(1e-5));
      CHECK(gf.grads[32 * 32 + y * 32 + (31 - x)] ==
            doctest::Approx(g.grads[32 * 32 + y * 32 + x]).epsilon(1e-5));
    }
}

TEST_CASE("patch spec jsonl round trip") {
  PatchSpec s;
  s.image_id = "img_42";
  s.x = 3;
  s.y = 4;
  s.w = 30;
  s.h = 90;
  s.scale = 90.5;
  s.ratio = 3.0;
  const PatchSpec r = patch_spec_from_json(patch_spec_to_json(s));
  CHECK(r.image_id == s.image_id);
  CHECK(r.x == s.x);
  CHECK(r.y == s.y);
  CHECK(r.w == s.w);
  CHECK(r.h == s.h);
  CHECK(r.scale == doctest::Approx(s.scale));
  CHECK(r.ratio == doctest::Approx(s.ratio));
}
