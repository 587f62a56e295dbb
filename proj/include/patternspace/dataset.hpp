#pragma once

#include "patternspace/geometry.hpp"
#include "patternspace/image.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ps {

struct AnnotatedImage {
  std::string image_id;
  ImageU8 pixels;
  std::vector<Box> gt_boxes;  // original pixel coordinates
  std::string source_path;
};

struct ScaledImage {
  std::string image_id;
  ImageU8 pixels;            // width exactly 256
  double scale_factor = 1.0; // original_width / 256
  std::vector<Box> gt_boxes; // rescaled to the 256-wide frame
};

struct ManifestEntry {
  std::string id;
  std::string path;            // image path, relative to the manifest file
  std::vector<Box> boxes;      // may be empty (annotation-free mode)
};

struct FilterSpec {
  int max_people = 5;
  double min_box_area = 10000.0;
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> images;
  std::optional<FilterSpec> filter_spec;
  std::string base_dir;  // directory of the manifest file, for relative paths
};

// Manifest JSON schema:
//   { "name": str,
//     "images": [ { "id": str, "path": str,
//                   "boxes": [[x,y,w,h], ...] }, ... ],
//     "filter": { "max_people": int, "min_box_area": num }   (optional)
//   }
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& m);

// Loads every image and validates boxes against image bounds.
// Missing file or out-of-bounds box is a hard error naming the offender.
std::vector<AnnotatedImage> load_dataset(const DatasetManifest& manifest);

// INRIA-EZ selection: keep images with <= max_people annotated people,
// then keep only boxes with area > min_box_area, drop images left empty.
// People are counted on the full annotation, before the area filter.
std::vector<AnnotatedImage> filter_inria_ez(std::vector<AnnotatedImage> images,
                                            const FilterSpec& spec = {});

// Same rule applied at the annotation level (used by `prepare`, avoids
// decoding pixels just to filter).
std::vector<ManifestEntry> filter_inria_ez_entries(std::vector<ManifestEntry> entries,
                                                   const FilterSpec& spec = {});

// Resamples to width 256 (aspect preserved, bilinear) and rescales boxes.
ScaledImage normalize_image(const AnnotatedImage& img);

Box denormalize_box(const Box& scaled_box, double scale_factor);

// ---- annotation converters (feed `prepare`) ----

// PASCAL-style plain-text annotations (Penn-Fudan and INRIA ship this
// format): "Bounding box for object N ... (Xmin, Ymin) - (Xmax, Ymax)".
// Coordinates there are inclusive corners.
std::vector<Box> parse_pascal_text_annotation(const std::string& file_content);

// PASCAL VOC XML: <object><bndbox><xmin>... Only bounding boxes are read.
std::vector<Box> parse_pascal_xml_annotation(const std::string& file_content);

// Internal line-delimited annotation schema, one object per line:
//   {"image_id": str, "boxes": [[x,y,w,h], ...]}
struct AnnotationRecord {
  std::string image_id;
  std::vector<Box> boxes;
};
std::vector<AnnotationRecord> load_annotations_jsonl(const std::string& path);
void save_annotations_jsonl(const std::string& path, const std::vector<AnnotationRecord>& records);

}  // namespace ps
