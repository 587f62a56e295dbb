#include "patternspace/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ps {

namespace {

json box_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("annotation box must be [x,y,w,h]");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_manifest: parse error in '" + path + "': " + e.what());
  }

  DatasetManifest m;
  m.name = j.value("name", "");
  m.base_dir = fs::path(path).parent_path().string();
  std::vector<std::string> seen;
  for (const auto& je : j.at("images")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.path = je.at("path").get<std::string>();
    if (je.contains("boxes"))
      for (const auto& jb : je["boxes"]) e.boxes.push_back(box_from_json(jb));
    if (std::find(seen.begin(), seen.end(), e.id) != seen.end())
      throw std::runtime_error("load_manifest: duplicate image id '" + e.id + "'");
    seen.push_back(e.id);
    m.images.push_back(std::move(e));
  }
  if (j.contains("filter")) {
    FilterSpec f;
    f.max_people = j["filter"].value("max_people", 5);
    f.min_box_area = j["filter"].value("min_box_area", 10000.0);
    m.filter_spec = f;
  }
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  json j;
  j["name"] = m.name;
  j["images"] = json::array();
  for (const auto& e : m.images) {
    json je;
    je["id"] = e.id;
    je["path"] = e.path;
    je["boxes"] = json::array();
    for (const auto& b : e.boxes) je["boxes"].push_back(box_to_json(b));
    j["images"].push_back(je);
  }
  if (m.filter_spec) {
    j["filter"] = {{"max_people", m.filter_spec->max_people},
                   {"min_box_area", m.filter_spec->min_box_area}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

std::vector<AnnotatedImage> load_dataset(const DatasetManifest& manifest) {
  std::vector<AnnotatedImage> out;
  out.reserve(manifest.images.size());
  for (const auto& e : manifest.images) {
    fs::path p(e.path);
    if (p.is_relative() && !manifest.base_dir.empty()) p = fs::path(manifest.base_dir) / p;
    AnnotatedImage img;
    img.image_id = e.id;
    img.source_path = p.string();
    img.pixels = load_image(img.source_path);
    img.gt_boxes = e.boxes;
    for (const auto& b : img.gt_boxes) {
      if (b.w <= 0.0 || b.h <= 0.0)
        throw std::runtime_error("load_dataset: empty box in image '" + e.id + "'");
      if (b.x < 0.0 || b.y < 0.0 || b.x2() > img.pixels.width || b.y2() > img.pixels.height)
        throw std::runtime_error("load_dataset: box outside image bounds in '" + e.id + "'");
    }
    out.push_back(std::move(img));
  }
  return out;
}

namespace {

template <typename T, typename GetBoxes, typename SetBoxes>
std::vector<T> apply_inria_filter(std::vector<T> items, const FilterSpec& spec,
                                  GetBoxes get_boxes, SetBoxes set_boxes) {
  std::vector<T> out;
  for (auto& item : items) {
    const auto& boxes = get_boxes(item);
    if (static_cast<int>(boxes.size()) > spec.max_people) continue;
    std::vector<Box> kept;
    for (const auto& b : boxes)
      if (b.area() > spec.min_box_area) kept.push_back(b);
    if (kept.empty()) continue;
    set_boxes(item, std::move(kept));
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace

std::vector<AnnotatedImage> filter_inria_ez(std::vector<AnnotatedImage> images, const FilterSpec& spec) {
  return apply_inria_filter(
      std::move(images), spec, [](const AnnotatedImage& i) -> const std::vector<Box>& { return i.gt_boxes; },
      [](AnnotatedImage& i, std::vector<Box> b) { i.gt_boxes = std::move(b); });
}

std::vector<ManifestEntry> filter_inria_ez_entries(std::vector<ManifestEntry> entries, const FilterSpec& spec) {
  return apply_inria_filter(
      std::move(entries), spec, [](const ManifestEntry& e) -> const std::vector<Box>& { return e.boxes; },
      [](ManifestEntry& e, std::vector<Box> b) { e.boxes = std::move(b); });
}

ScaledImage normalize_image(const AnnotatedImage& img) {
  if (img.pixels.width < 1) throw std::invalid_argument("normalize_image: empty image");
  const double scale = static_cast<double>(img.pixels.width) / 256.0;
  const int out_h = std::max(1, static_cast<int>(std::lround(img.pixels.height / scale)));

  ScaledImage s;
  s.image_id = img.image_id;
  s.scale_factor = scale;
  s.pixels = resize_bilinear(img.pixels, 256, out_h);
  s.gt_boxes.reserve(img.gt_boxes.size());
  for (const auto& b : img.gt_boxes)
    s.gt_boxes.push_back(Box{b.x / scale, b.y / scale, b.w / scale, b.h / scale});
  return s;
}

Box denormalize_box(const Box& scaled_box, double scale_factor) {
  return Box{scaled_box.x * scale_factor, scaled_box.y * scale_factor,
             scaled_box.w * scale_factor, scaled_box.h * scale_factor};
}

std::vector<Box> parse_pascal_text_annotation(const std::string& file_content) {
  // e.g.  Bounding box for object 1 "PASpersonWalking" (Xmin, Ymin) - (Xmax, Ymax) : (160, 182) - (302, 431)
  static const std::regex line_re(
      R"(Bounding box[^:]*:\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*-\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\))");
  std::vector<Box> boxes;
  auto begin = std::sregex_iterator(file_content.begin(), file_content.end(), line_re);
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const double xmin = std::stod((*it)[1]);
    const double ymin = std::stod((*it)[2]);
    const double xmax = std::stod((*it)[3]);
    const double ymax = std::stod((*it)[4]);
    // inclusive pixel corners
    boxes.push_back(Box{xmin, ymin, xmax - xmin + 1.0, ymax - ymin + 1.0});
  }
  return boxes;
}

std::vector<Box> parse_pascal_xml_annotation(const std::string& file_content) {
  static const std::regex box_re(
      R"(<bndbox>[\s\S]*?<xmin>\s*([\d.]+)\s*</xmin>[\s\S]*?<ymin>\s*([\d.]+)\s*</ymin>[\s\S]*?<xmax>\s*([\d.]+)\s*</xmax>[\s\S]*?<ymax>\s*([\d.]+)\s*</ymax>[\s\S]*?</bndbox>)");
  std::vector<Box> boxes;
  auto begin = std::sregex_iterator(file_content.begin(), file_content.end(), box_re);
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const double xmin = std::stod((*it)[1]);
    const double ymin = std::stod((*it)[2]);
    const double xmax = std::stod((*it)[3]);
    const double ymax = std::stod((*it)[4]);
    boxes.push_back(Box{xmin, ymin, xmax - xmin, ymax - ymin});
  }
  return boxes;
}

std::vector<AnnotationRecord> load_annotations_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_annotations_jsonl: cannot open '" + path + "'");
  std::vector<AnnotationRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    AnnotationRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    for (const auto& jb : j.at("boxes")) r.boxes.push_back(box_from_json(jb));
    records.push_back(std::move(r));
  }
  return records;
}

void save_annotations_jsonl(const std::string& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_annotations_jsonl: cannot write '" + path + "'");
  for (const auto& r : records) {
    json j;
    j["image_id"] = r.image_id;
    j["boxes"] = json::array();
    for (const auto& b : r.boxes) j["boxes"].push_back(box_to_json(b));
    out << j.dump() << "\n";
  }
}

}  // namespace ps
