// Generates the bundled synthetic scene set used by the demo configs and
// the verification suites.

#include <CLI11.hpp>

#include "patternspace/synthetic.hpp"

#include <cstdio>

int main(int argc, char** argv) {
  CLI::App app{"synthetic scene generator"};
  ps::SyntheticConfig cfg;
  std::string out = "fixture";
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--images", cfg.n_images, "number of scenes");
  app.add_option("--width", cfg.width, "scene width");
  app.add_option("--height", cfg.height, "scene height");
  app.add_option("--min-instances", cfg.min_instances, "min objects per scene");
  app.add_option("--max-instances", cfg.max_instances, "max objects per scene");
  app.add_option("--obj-h-min", cfg.obj_h_min, "min object height");
  app.add_option("--obj-h-max", cfg.obj_h_max, "max object height");
  app.add_option("--seed", cfg.seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const int boxes = ps::write_synthetic_fixture(out, cfg);
    std::printf("%d images / %d boxes -> %s\n", cfg.n_images, boxes, out.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
