#include "patternspace/synthetic.hpp"

#include "patternspace/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace fs = std::filesystem;

namespace ps {

namespace {

struct Color {
  double r, g, b;
};

Color hsv(double h, double s, double v) {
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) { r = c; g = x; }
  else if (h < 120) { r = x; g = c; }
  else if (h < 180) { g = c; b = x; }
  else if (h < 240) { g = x; b = c; }
  else if (h < 300) { r = x; b = c; }
  else { r = c; b = x; }
  return {255.0 * (r + m), 255.0 * (g + m), 255.0 * (b + m)};
}

uint8_t q(double v) { return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0)); }

// Warm template, aspect 3:1 (h:w): smooth red->yellow ramp with a fixed
// fine texture and a dark outline. The interior is locally low-contrast so
// only near-complete crops see a strong color boundary, the way a clothed
// person contrasts with a scene rather than with themselves.
ImageU8 make_template() {
  const int tw = 48, th = 144;
  ImageU8 t(tw, th);
  // luma stripes with matched hue and saturation: the Sobel channels get a
  // strong repeatable signature while the H-S histogram stays flat inside
  // the object, so small interior crops score no color saliency
  const Color dark{170, 48, 40};    // S ~ 0.76, hue ~ 4 deg
  const Color light{255, 82, 62};   // S ~ 0.76, hue ~ 6 deg
  Rng tex(20240601);
  for (int y = 0; y < th; ++y) {
    for (int x = 0; x < tw; ++x) {
      Color c = ((y / 18) % 2 == 0) ? dark : light;
      const double n = tex.uniform(-8.0, 8.0);
      c.r += n;
      c.g += n * 0.3;
      c.b += n * 0.25;
      if (x < 3 || x >= tw - 3 || y < 3 || y >= th - 3) c = {60, 18, 15};
      uint8_t* p = t.px(x, y);
      p[0] = q(c.r);
      p[1] = q(c.g);
      p[2] = q(c.b);
    }
  }
  return t;
}

// Bilinear lattice noise: every crop of the background looks different,
// the way crops of natural scenes do.
struct ValueNoise {
  int gw, gh, spacing;
  std::vector<double> lattice;
  ValueNoise(int width, int height, int spacing_, Rng& rng) : spacing(spacing_) {
    gw = width / spacing + 2;
    gh = height / spacing + 2;
    lattice.resize(static_cast<size_t>(gw) * gh);
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  }
  double at(int x, int y) const {
    const double fx = static_cast<double>(x) / spacing;
    const double fy = static_cast<double>(y) / spacing;
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const double tx = fx - x0, ty = fy - y0;
    const double a = lattice[y0 * gw + x0], b = lattice[y0 * gw + x0 + 1];
    const double c = lattice[(y0 + 1) * gw + x0], d = lattice[(y0 + 1) * gw + x0 + 1];
    return (a + (b - a) * tx) * (1 - ty) + (c + (d - c) * tx) * ty;
  }
};

void paint_background(ImageU8& img, Rng& rng) {
  // cool-toned multi-octave noise field, fresh per image
  const Color base = hsv(rng.uniform(150.0, 260.0), rng.uniform(0.25, 0.7), rng.uniform(0.45, 0.9));
  const Color tint = hsv(rng.uniform(150.0, 260.0), rng.uniform(0.25, 0.7), rng.uniform(0.35, 0.85));
  const ValueNoise coarse(img.width, img.height, 96, rng);
  const ValueNoise mid(img.width, img.height, 28, rng);
  const ValueNoise fine(img.width, img.height, 9, rng);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      uint8_t* p = img.px(x, y);
      const double t = 0.5 + 0.5 * coarse.at(x, y);
      const double tex = 28.0 * mid.at(x, y) + 14.0 * fine.at(x, y) + rng.uniform(-6.0, 6.0);
      p[0] = q(base.r + (tint.r - base.r) * t + tex);
      p[1] = q(base.g + (tint.g - base.g) * t + tex);
      p[2] = q(base.b + (tint.b - base.b) * t + tex);
    }
  }
  // sparse low-contrast distractor shapes in the background palette,
  // never at the object's 3:1 aspect
  const int n_shapes = 3 + rng.uniform_index(4);
  for (int s = 0; s < n_shapes; ++s) {
    const Color c = hsv(rng.uniform(150.0, 260.0), rng.uniform(0.2, 0.6), rng.uniform(0.35, 0.85));
    const int w = 18 + rng.uniform_index(70);
    const int h = static_cast<int>(w * rng.uniform(0.5, 1.6));
    const int x0 = rng.uniform_index(std::max(1, img.width - w));
    const int y0 = rng.uniform_index(std::max(1, img.height - h));
    const bool ellipse = rng.uniform() < 0.5;
    for (int y = y0; y < std::min(img.height, y0 + h); ++y)
      for (int x = x0; x < std::min(img.width, x0 + w); ++x) {
        if (ellipse) {
          const double dx = (x - x0 - w / 2.0) / (w / 2.0), dy = (y - y0 - h / 2.0) / (h / 2.0);
          if (dx * dx + dy * dy > 1.0) continue;
        }
        uint8_t* p = img.px(x, y);
        p[0] = q(0.6 * p[0] + 0.4 * c.r);
        p[1] = q(0.6 * p[1] + 0.4 * c.g);
        p[2] = q(0.6 * p[2] + 0.4 * c.b);
      }
  }
  // ground strip shared across the set: same two tones in every image, so
  // it forms a frequent background pattern the pipeline must suppress
  const Color ga{110, 115, 95};
  const Color gb{85, 88, 72};
  const int strip_top = img.height * 3 / 4;
  for (int y = strip_top; y < img.height; ++y) {
    const Color& c = ((y / 16) % 2 == 0) ? ga : gb;
    for (int x = 0; x < img.width; ++x) {
      uint8_t* p = img.px(x, y);
      const double n = rng.uniform(-6.0, 6.0);
      p[0] = q(c.r + n);
      p[1] = q(c.g + n);
      p[2] = q(c.b + n);
    }
  }
}

void blit_instance(ImageU8& img, const ImageU8& tmpl, const Box& at, double gain, Rng& rng) {
  const ImageU8 scaled = resize_bilinear(tmpl, static_cast<int>(at.w), static_cast<int>(at.h));
  // per-instance channel gains spread the instances in raw pixel space
  // (clothing-like variation) without touching the luma-stripe structure
  const double gr = gain * rng.uniform(0.88, 1.12);
  const double gg = gain * rng.uniform(0.82, 1.18);
  const double gb = gain * rng.uniform(0.82, 1.18);
  for (int y = 0; y < scaled.height; ++y)
    for (int x = 0; x < scaled.width; ++x) {
      const uint8_t* s = scaled.px(x, y);
      uint8_t* d = img.px(static_cast<int>(at.x) + x, static_cast<int>(at.y) + y);
      const double n = rng.uniform(-5.0, 5.0);
      d[0] = q(s[0] * gr + n);
      d[1] = q(s[1] * gg + n);
      d[2] = q(s[2] * gb + n);
    }
}

}  // namespace

std::vector<AnnotatedImage> generate_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.n_images < 1) throw std::invalid_argument("synthetic: n_images must be >= 1");
  const ImageU8 tmpl = make_template();
  Rng rng = substream(cfg.seed, "synthetic");

  std::vector<AnnotatedImage> out;
  out.reserve(cfg.n_images);
  for (int i = 0; i < cfg.n_images; ++i) {
    AnnotatedImage a;
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04d", i);
    a.image_id = id;
    a.pixels = ImageU8(cfg.width, cfg.height);
    paint_background(a.pixels, rng);

    const int want = cfg.min_instances + rng.uniform_index(cfg.max_instances - cfg.min_instances + 1);
    for (int k = 0; k < want; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
        const int h = cfg.obj_h_min + rng.uniform_index(cfg.obj_h_max - cfg.obj_h_min + 1);
        const int w = h / 3;
        if (w >= cfg.width || h >= cfg.height) continue;
        const int x = rng.uniform_index(cfg.width - w);
        const int y = rng.uniform_index(cfg.height - h);
        const Box cand{double(x), double(y), double(w), double(h)};
        bool clash = false;
        for (const auto& b : a.gt_boxes)
          if (iou(cand, b) > 0.1) clash = true;
        if (clash) continue;
        blit_instance(a.pixels, tmpl, cand, rng.uniform(0.9, 1.1), rng);
        a.gt_boxes.push_back(cand);
        placed = true;
      }
    }
    if (a.gt_boxes.empty()) {
      // guarantee at least one instance per scene
      const int h = cfg.obj_h_min;
      const int w = h / 3;
      const Box cand{double(cfg.width / 2 - w / 2), double(cfg.height / 2 - h / 2), double(w), double(h)};
      blit_instance(a.pixels, tmpl, cand, 1.0, rng);
      a.gt_boxes.push_back(cand);
    }
    out.push_back(std::move(a));
  }
  return out;
}

int write_synthetic_fixture(const std::string& dir, const SyntheticConfig& cfg) {
  fs::create_directories(fs::path(dir) / "images");
  auto scenes = generate_synthetic_dataset(cfg);

  DatasetManifest m;
  m.name = "synthetic";
  m.base_dir = dir;
  std::vector<AnnotationRecord> ann;
  int boxes = 0;
  for (auto& s : scenes) {
    const std::string rel = "images/" + s.image_id + ".png";
    save_image((fs::path(dir) / rel).string(), s.pixels);
    ManifestEntry e;
    e.id = s.image_id;
    e.path = rel;
    e.boxes = s.gt_boxes;
    boxes += static_cast<int>(s.gt_boxes.size());
    m.images.push_back(std::move(e));
    ann.push_back({s.image_id, s.gt_boxes});
  }
  save_manifest((fs::path(dir) / "manifest.json").string(), m);
  save_annotations_jsonl((fs::path(dir) / "annotations.jsonl").string(), ann);
  return boxes;
}

}  // namespace ps
