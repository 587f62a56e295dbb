#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "patternspace/dataset.hpp"
#include "patternspace/rng.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace ps;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ps_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ImageU8 noise_image(int w, int h, uint64_t seed) {
  ImageU8 img(w, h);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<uint8_t>(rng.uniform_int(256));
  return img;
}

}  // namespace

TEST_CASE("manifest + dataset load round trip with counts") {
  TempDir dir("dataset");
  DatasetManifest m;
  m.name = "mini";
  m.base_dir = dir.path.string();
  for (int i = 0; i < 3; ++i) {
    const std::string id = "img" + std::to_string(i);
    save_image((dir.path / (id + ".png")).string(), noise_image(80, 60, 100 + i));
    ManifestEntry e;
    e.id = id;
    e.path = id + ".png";
    e.boxes = {Box{5, 5, 20, 30}};
    m.images.push_back(e);
  }
  const std::string mpath = (dir.path / "manifest.json").string();
  save_manifest(mpath, m);

  const DatasetManifest loaded = load_manifest(mpath);
  CHECK(loaded.name == "mini");
  REQUIRE(loaded.images.size() == 3);
  CHECK(loaded.images[1].boxes.size() == 1);

  const auto ds = load_dataset(loaded);
  REQUIRE(ds.size() == 3);
  CHECK(ds[0].pixels.width == 80);
  CHECK(ds[0].gt_boxes.size() == 1);
  // deterministic ordering follows the manifest
  CHECK(ds[0].image_id == "img0");
  CHECK(ds[2].image_id == "img2");
}

TEST_CASE("empty manifest loads to an empty dataset") {
  DatasetManifest m;
  m.name = "empty";
  CHECK(load_dataset(m).empty());
}

TEST_CASE("missing image path is a hard error naming the path") {
  DatasetManifest m;
  ManifestEntry e;
  e.id = "gone";
  e.path = "/nonexistent/gone.png";
  m.images.push_back(e);
  try {
    load_dataset(m);
    FAIL("expected a throw");
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find("/nonexistent/gone.png") != std::string::npos);
  }
}

TEST_CASE("box outside image bounds is a hard error naming the image") {
  TempDir dir("oob");
  save_image((dir.path / "a.png").string(), noise_image(50, 50, 1));
  DatasetManifest m;
  m.base_dir = dir.path.string();
  ManifestEntry e;
  e.id = "a";
  e.path = "a.png";
  e.boxes = {Box{40, 40, 20, 20}};
  m.images.push_back(e);
  try {
    load_dataset(m);
    FAIL("expected a throw");
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find("'a'") != std::string::npos);
  }
}

TEST_CASE("duplicate manifest ids are rejected") {
  TempDir dir("dup");
  std::ofstream out(dir.path / "m.json");
  out << R"({"name":"d","images":[{"id":"x","path":"x.png"},{"id":"x","path":"y.png"}]})";
  out.close();
  CHECK_THROWS((void)load_manifest((dir.path / "m.json").string()));
}

namespace {
AnnotatedImage with_boxes(std::vector<Box> boxes) {
  AnnotatedImage a;
  a.image_id = "x";
  a.pixels = ImageU8(1000, 1000);
  a.gt_boxes = std::move(boxes);
  return a;
}
}  // namespace

TEST_CASE("inria-ez: image with six people is excluded") {
  std::vector<AnnotatedImage> in;
  in.push_back(with_boxes(std::vector<Box>(6, Box{0, 0, 200, 200})));
  CHECK(filter_inria_ez(std::move(in)).empty());
}

TEST_CASE("inria-ez: area rule keeps only boxes > 10000") {
  // 9999 px^2 and 20000 px^2 -> keep image, one box survives
  auto out = filter_inria_ez({with_boxes({Box{0, 0, 99.995, 100}, Box{0, 0, 200, 100}})});
  REQUIRE(out.size() == 1);
  REQUIRE(out[0].gt_boxes.size() == 1);
  CHECK(out[0].gt_boxes[0].w == doctest::Approx(200));

  // exactly 10000 px^2 is strictly excluded
  auto out2 = filter_inria_ez({with_boxes({Box{0, 0, 100, 100}})});
  CHECK(out2.empty());

  // image whose box list empties is dropped
  auto out3 = filter_inria_ez({with_boxes({Box{0, 0, 50, 50}})});
  CHECK(out3.empty());
}

TEST_CASE("inria-ez counts people before the area filter") {
  // six boxes, only one large: image must still be excluded by people count
  std::vector<Box> boxes(5, Box{0, 0, 10, 10});
  boxes.push_back(Box{0, 0, 500, 500});
  boxes.push_back(Box{1, 1, 10, 10});  // 7 total
  CHECK(filter_inria_ez({with_boxes(boxes)}).empty());
}

TEST_CASE("inria-ez is idempotent") {
  std::vector<AnnotatedImage> in;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    std::vector<Box> boxes;
    const int n = 1 + rng.uniform_index(8);
    for (int b = 0; b < n; ++b)
      boxes.push_back(Box{0, 0, rng.uniform(20, 400), rng.uniform(20, 400)});
    in.push_back(with_boxes(std::move(boxes)));
  }
  auto once = filter_inria_ez(in);
  auto twice = filter_inria_ez(once);
  REQUIRE(once.size() == twice.size());
  for (size_t i = 0; i < once.size(); ++i)
    CHECK(once[i].gt_boxes.size() == twice[i].gt_boxes.size());
}

TEST_CASE("normalize_image: width 256, aspect preserved, boxes rescaled") {
  AnnotatedImage a;
  a.image_id = "n";
  a.pixels = ImageU8(512, 384, 42);
  a.gt_boxes = {Box{100, 100, 50, 80}};
  const ScaledImage s = normalize_image(a);
  CHECK(s.pixels.width == 256);
  CHECK(s.pixels.height == 192);
  CHECK(s.scale_factor == doctest::Approx(2.0));
  CHECK(s.gt_boxes[0].x == doctest::Approx(50));
  CHECK(s.gt_boxes[0].y == doctest::Approx(50));
  CHECK(s.gt_boxes[0].w == doctest::Approx(25));
  CHECK(s.gt_boxes[0].h == doctest::Approx(40));
}

TEST_CASE("normalize_image: 256-wide input is the identity") {
  AnnotatedImage a;
  a.pixels = noise_image(256, 100, 9);
  const ScaledImage s = normalize_image(a);
  CHECK(s.scale_factor == doctest::Approx(1.0));
  CHECK(s.pixels.data == a.pixels.data);
}

TEST_CASE("box normalize/denormalize round trip is lossless within 1px") {
  Rng rng(123);
  for (int i = 0; i < 500; ++i) {
    const double w = rng.uniform(100, 4000);
    const double scale = w / 256.0;
    const Box orig{rng.uniform(0, 500), rng.uniform(0, 500), rng.uniform(1, 300), rng.uniform(1, 300)};
    const Box norm{orig.x / scale, orig.y / scale, orig.w / scale, orig.h / scale};
    const Box back = denormalize_box(norm, scale);
    CHECK(std::abs(back.x - orig.x) <= 1.0);
    CHECK(std::abs(back.y - orig.y) <= 1.0);
    CHECK(std::abs(back.w - orig.w) <= 1.0);
    CHECK(std::abs(back.h - orig.h) <= 1.0);
  }
}

TEST_CASE("pascal text annotation parser") {
  const std::string content = R"(# PASCAL Annotation Version 1.00
Image filename : "PennFudanPed/PNGImages/FudanPed00001.png"
Image size (X x Y x C) : 559 x 536 x 3
Objects with ground truth : 2 { "PASpersonWalking" "PASpersonWalking" }
Original label for object 1 "PASpersonWalking" : "PennFudanPed"
Bounding box for object 1 "PASpersonWalking" (Xmin, Ymin) - (Xmax, Ymax) : (160, 182) - (302, 431)
Pixel mask for object 1 "PASpersonWalking" : "PennFudanPed/PedMasks/FudanPed00001_mask.png"

Original label for object 2 "PASpersonWalking" : "PennFudanPed"
Bounding box for object 2 "PASpersonWalking" (Xmin, Ymin) - (Xmax, Ymax) : (420, 171) - (535, 486)
)";
  const auto boxes = parse_pascal_text_annotation(content);
  REQUIRE(boxes.size() == 2);
  CHECK(boxes[0].x == doctest::Approx(160));
  CHECK(boxes[0].y == doctest::Approx(182));
  CHECK(boxes[0].w == doctest::Approx(302 - 160 + 1));
  CHECK(boxes[0].h == doctest::Approx(431 - 182 + 1));
  CHECK(boxes[1].x == doctest::Approx(420));
}

TEST_CASE("pascal xml annotation parser") {
  const std::string content = R"(<annotation>
  <object><name>person</name>
    <bndbox><xmin>10</xmin><ymin>20</ymin><xmax>110</xmax><ymax>220</ymax></bndbox>
  </object>
  <object><name>person</name>
    <bndbox>
      <xmin>5.5</xmin>
      <ymin>6</ymin>
      <xmax>50</xmax>
      <ymax>60</ymax>
    </bndbox>
  </object>
</annotation>)";
  const auto boxes = parse_pascal_xml_annotation(content);
  REQUIRE(boxes.size() == 2);
  CHECK(boxes[0].w == doctest::Approx(100));
  CHECK(boxes[0].h == doctest::Approx(200));
  CHECK(boxes[1].x == doctest::Approx(5.5));
}

TEST_CASE("annotations jsonl round trip") {
  TempDir dir("jsonl");
  std::vector<AnnotationRecord> recs = {{"a", {Box{1, 2, 3, 4}}}, {"b", {Box{5, 6, 7, 8}, Box{9, 1, 2, 3}}}};
  const std::string path = (dir.path / "ann.jsonl").string();
  save_annotations_jsonl(path, recs);
  const auto got = load_annotations_jsonl(path);
  REQUIRE(got.size() == 2);
  CHECK(got[1].image_id == "b");
  REQUIRE(got[1].boxes.size() == 2);
  CHECK(got[1].boxes[1].x == doctest::Approx(9));
}
