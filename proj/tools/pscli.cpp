// Command-line front end: prepare | train | discover | evaluate | neighbors | render.
// Exit code 0 on success; any failure prints one "error: ..." line and exits 1.

#include <CLI11.hpp>
#include <json.hpp>

#include "patternspace/config.hpp"
#include "patternspace/discovery.hpp"
#include "patternspace/evaluation.hpp"
#include "patternspace/synthetic.hpp"
#include "patternspace/training.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ps;

namespace {

struct OutputLock {
  std::string path;
  explicit OutputLock(const fs::path& dir) {
    fs::create_directories(dir);
    path = (dir / ".lock").string();
    const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw std::runtime_error("output directory '" + dir.string() +
                               "' is locked by another run (remove .lock if stale)");
    ::close(fd);
  }
  ~OutputLock() { ::unlink(path.c_str()); }
};

struct CommonOpts {
  std::string config_path;
  std::string manifest_override;
  std::string out_override;
  std::string mode_override;
  int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "pipeline config JSON");
  if (config_required) c->required();
  cmd->add_option("--manifest", opts.manifest_override, "dataset manifest (overrides config)");
  cmd->add_option("--out", opts.out_override, "output directory (overrides config and env)");
  cmd->add_option("--seed", opts.seed_override, "master seed (overrides config)");
  cmd->add_option("--mode", opts.mode_override, "modulation mode: none|hist|bgnd|both");
}

PipelineConfig resolve_config(const CommonOpts& opts) {
  PipelineConfig cfg;
  if (!opts.config_path.empty()) cfg = load_pipeline_config(opts.config_path);
  if (!opts.manifest_override.empty()) cfg.manifest = opts.manifest_override;
  if (opts.seed_override >= 0) cfg.seed = static_cast<uint64_t>(opts.seed_override);
  if (!opts.mode_override.empty()) cfg.train.modulation = modulation_from_string(opts.mode_override);
  if (!opts.out_override.empty()) {
    cfg.output_dir = opts.out_override;
  } else if (const char* env = std::getenv("PATTERNSPACE_OUT"); env != nullptr && *env != '\0') {
    cfg.output_dir = env;
  }
  cfg.validate();
  return cfg;
}

std::vector<ScaledImage> load_scaled_dataset(const PipelineConfig& cfg) {
  if (cfg.manifest.empty()) throw std::runtime_error("no dataset manifest configured");
  const DatasetManifest manifest = load_manifest(cfg.manifest);
  const auto raw = load_dataset(manifest);
  if (raw.empty()) throw std::runtime_error("manifest '" + cfg.manifest + "' lists no images");
  std::vector<ScaledImage> scaled;
  scaled.reserve(raw.size());
  for (const auto& img : raw) scaled.push_back(normalize_image(img));
  return scaled;
}

BackgroundModel fit_bg(const std::vector<ScaledImage>& dataset, const PipelineConfig& cfg) {
  Rng rng = substream(cfg.seed, "bgfit");
  std::vector<PixelPatch> pool;
  pool.reserve(cfg.objectness.bg_pool_size);
  while (static_cast<int>(pool.size()) < cfg.objectness.bg_pool_size) {
    const auto& img = dataset[rng.uniform_index(static_cast<int>(dataset.size()))];
    auto s = sample_patch({img.pixels.width, img.pixels.height}, cfg.sampler, rng);
    if (!s) continue;
    pool.push_back(extract(img, *s));
  }
  BackgroundModel bg = fit_background_model(pool, cfg.objectness.bg_clusters, rng);
  bg.fit_seed = cfg.seed;
  return bg;
}

void write_meta(const fs::path& path, const PipelineConfig& cfg, json extra) {
  extra["config_hash"] = config_hash(cfg);
  extra["seed"] = cfg.seed;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << extra.dump(2) << "\n";
}

// ---------------- prepare ----------------

int cmd_prepare(const std::string& images_dir, const std::string& annotations,
                const std::string& format, const std::string& name, bool inria_ez, int limit,
                const std::string& out_dir) {
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.name = name;

  const std::set<std::string> img_exts = {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"};

  if (format == "fddb-folds") {
    // `annotations` is the fold file listing image stems in canonical order
    std::ifstream fold(annotations);
    if (!fold) throw std::runtime_error("cannot open fold file '" + annotations + "'");
    std::string line;
    while (std::getline(fold, line) && (limit <= 0 || static_cast<int>(m.images.size()) < limit)) {
      if (line.empty()) continue;
      ManifestEntry e;
      e.id = line;
      std::replace(e.id.begin(), e.id.end(), '/', '_');
      e.path = (fs::path(images_dir) / (line + ".jpg")).string();
      m.images.push_back(std::move(e));  // annotation-free, qualitative mode
    }
  } else {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(images_dir))
      if (entry.is_regular_file() && img_exts.count(entry.path().extension().string()))
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (limit > 0 && static_cast<int>(files.size()) > limit) files.resize(limit);

    for (const auto& f : files) {
      ManifestEntry e;
      e.id = f.stem().string();
      e.path = fs::absolute(f).string();
      if (format == "pascal-txt" || format == "pascal-xml") {
        const std::string ext = format == "pascal-txt" ? ".txt" : ".xml";
        const fs::path ann = fs::path(annotations) / (e.id + ext);
        std::ifstream in(ann);
        if (!in) throw std::runtime_error("missing annotation '" + ann.string() + "'");
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        e.boxes = format == "pascal-txt" ? parse_pascal_text_annotation(content)
                                         : parse_pascal_xml_annotation(content);
      } else if (format == "jsonl") {
        // filled in below from the shared annotation file
      } else if (format != "none") {
        throw std::runtime_error("unknown format '" + format +
                                 "' (want pascal-txt|pascal-xml|jsonl|fddb-folds|none)");
      }
      m.images.push_back(std::move(e));
    }
    if (format == "jsonl") {
      std::map<std::string, std::vector<Box>> by_id;
      for (const auto& r : load_annotations_jsonl(annotations)) by_id[r.image_id] = r.boxes;
      for (auto& e : m.images)
        if (auto it = by_id.find(e.id); it != by_id.end()) e.boxes = it->second;
    }
  }

  if (inria_ez) {
    m.images = filter_inria_ez_entries(std::move(m.images));
    m.filter_spec = FilterSpec{};
  }

  // validate: every image decodes and every box is inside its bounds
  int boxes = 0;
  for (const auto& e : m.images) {
    const ImageU8 img = load_image(e.path);
    for (const auto& b : e.boxes) {
      if (b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.x2() > img.width || b.y2() > img.height)
        throw std::runtime_error("box outside image bounds in '" + e.id + "'");
    }
    boxes += static_cast<int>(e.boxes.size());
  }

  save_manifest((fs::path(out_dir) / "manifest.json").string(), m);
  std::vector<AnnotationRecord> recs;
  for (const auto& e : m.images) recs.push_back({e.id, e.boxes});
  save_annotations_jsonl((fs::path(out_dir) / "annotations.jsonl").string(), recs);

  std::printf("%zu images / %d boxes\n", m.images.size(), boxes);
  return 0;
}

// ---------------- train ----------------

int cmd_train(const CommonOpts& opts, const std::string& resume_path) {
  const PipelineConfig cfg = resolve_config(opts);
  const fs::path out(cfg.output_dir);
  OutputLock lock(out);

  const auto dataset = load_scaled_dataset(cfg);
  std::fprintf(stderr, "train: %zu images, mode=%s, epochs=%d\n", dataset.size(),
               to_string(cfg.train.modulation).c_str(), cfg.train.epochs);

  // The background model is fitted unconditionally: the P-O constraint at
  // discovery time needs it even when training modulation does not.
  const BackgroundModel bg = fit_bg(dataset, cfg);
  const std::string bg_path = (out / "bg_model.bin").string();
  save_background_model(bg_path, bg);

  TrainInputs in;
  in.dataset = &dataset;
  in.bg_model = &bg;
  in.sampler = cfg.sampler;
  in.objectness = cfg.objectness;
  in.cfg = cfg.train;
  in.master_seed = cfg.seed;
  in.config_hash = config_hash(cfg);
  in.bg_model_ref = "bg_model.bin";

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    resume_ptr = &resume;
  }

  Checkpoint ckpt = train(in, resume_ptr, [](int epoch, const EpochStats& s) {
    std::fprintf(stderr, "epoch %d: total=%.4f contrastive=%.4f recon=%.4f kld=%.4f\n", epoch,
                 s.total, s.contrastive, s.reconstruction, s.kld);
  });

  const std::string ckpt_path = (out / "checkpoint.bin").string();
  save_checkpoint(ckpt_path, ckpt);

  std::ofstream csv(out / "loss_curve.csv");
  csv << "epoch,total,contrastive,reconstruction,kld\n";
  for (size_t e = 0; e < ckpt.meta.loss_history.size(); ++e) {
    const auto& s = ckpt.meta.loss_history[e];
    csv << e << "," << s.total << "," << s.contrastive << "," << s.reconstruction << "," << s.kld
        << "\n";
  }
  save_pipeline_config((out / "config.json").string(), cfg);
  write_meta(out / "train_meta.json", cfg,
             {{"epochs_completed", ckpt.meta.epoch},
              {"aborted_on_divergence", ckpt.meta.aborted_on_divergence},
              {"bg_model", "bg_model.bin"},
              {"checkpoint", "checkpoint.bin"}});
  std::printf("checkpoint: %s\n", ckpt_path.c_str());
  return 0;
}

// ---------------- discover ----------------

int cmd_discover(const CommonOpts& opts, const std::string& checkpoint_path,
                 const std::string& bg_path, int runs, bool save_pool_flag) {
  const PipelineConfig cfg = resolve_config(opts);
  const fs::path out(cfg.output_dir);
  OutputLock lock(out);

  const auto dataset = load_scaled_dataset(cfg);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const BackgroundModel bg = load_background_model(bg_path);
  nn::configure_blas_threads();

  for (int r = 0; r < runs; ++r) {
    Rng rng = substream(cfg.seed, "infer:" + std::to_string(r));
    PatternPool pool;
    const auto dets = discover(dataset, *ckpt.model, bg, cfg.sampler, cfg.objectness,
                               cfg.discovery, rng, &pool);
    char sub[32];
    std::snprintf(sub, sizeof(sub), "run_%02d", r);
    fs::create_directories(out / sub);
    save_detections((out / sub / "detections.jsonl").string(), dets);
    write_meta(out / sub / "meta.json", cfg,
               {{"run_index", r},
                {"n_per_image", cfg.discovery.n_per_image},
                {"n_candidate", cfg.discovery.n_candidate},
                {"max_keep", cfg.discovery.max_keep},
                {"iou_nms", cfg.discovery.iou_nms},
                {"post_objectness", cfg.discovery.post_objectness},
                {"mean_lscore", pool.mean_lscore},
                {"pool_size", pool.entries.size()},
                {"checkpoint", checkpoint_path}});
    if (save_pool_flag && r == 0) save_pool((out / "pool.bin").string(), pool);
    std::printf("run %d: %zu detections\n", r, dets.size());
  }
  return 0;
}

// ---------------- evaluate ----------------

int cmd_evaluate(const CommonOpts& opts, const std::string& detections_dir) {
  const PipelineConfig cfg = resolve_config(opts);
  const fs::path out = cfg.output_dir.empty() ? fs::path(detections_dir) : fs::path(cfg.output_dir);
  fs::create_directories(out);

  const auto dataset = load_scaled_dataset(cfg);
  std::map<std::string, std::vector<Box>> gts;
  for (const auto& img : dataset)
    if (!img.gt_boxes.empty()) gts[img.image_id] = img.gt_boxes;
  if (gts.empty()) throw std::runtime_error("manifest has no annotations; nothing to evaluate");

  std::vector<fs::path> run_dirs;
  for (const auto& entry : fs::directory_iterator(detections_dir))
    if (entry.is_directory() && entry.path().filename().string().rfind("run_", 0) == 0)
      run_dirs.push_back(entry.path());
  std::sort(run_dirs.begin(), run_dirs.end());
  if (run_dirs.empty()) throw std::runtime_error("no run_* directories under '" + detections_dir + "'");

  for (double thres : cfg.eval.iou_thresholds) {
    std::vector<SweepPoint> runs;
    json jruns = json::array();
    for (const auto& rd : run_dirs) {
      const auto dets = load_detections((rd / "detections.jsonl").string());
      const SweepResult sweep = f1_sweep(dets, gts, thres, cfg.eval.corloc_top1);
      runs.push_back(sweep.best);
      jruns.push_back({{"run", rd.filename().string()},
                       {"best_max_predictions", sweep.best.max_predictions},
                       {"corloc", sweep.best.corloc},
                       {"recall", sweep.best.recall},
                       {"precision", sweep.best.precision},
                       {"f1", sweep.best.f1}});
    }
    const RunAggregate agg = aggregate_runs(runs);

    char tag[32];
    std::snprintf(tag, sizeof(tag), "eval_iou%03d", static_cast<int>(std::lround(thres * 100)));
    json j;
    j["iou_thres"] = thres;
    j["n_runs"] = runs.size();
    j["runs"] = jruns;
    j["mean"] = {{"corloc", agg.mean.corloc},
                 {"recall", agg.mean.recall},
                 {"precision", agg.mean.precision},
                 {"f1", agg.mean.f1}};
    j["std"] = {{"corloc", agg.stddev.corloc},
                {"recall", agg.stddev.recall},
                {"precision", agg.stddev.precision},
                {"f1", agg.stddev.f1}};
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    std::ofstream jf(out / (std::string(tag) + ".json"));
    jf << j.dump(2) << "\n";

    std::string table = "iou_thres = " + std::to_string(thres) + "\n" + report_header() +
                        format_report_row(to_string(cfg.train.modulation),
                                          cfg.discovery.post_objectness, agg);
    std::ofstream tf(out / (std::string(tag) + ".txt"));
    tf << table;
    std::fputs(table.c_str(), stdout);
  }
  return 0;
}

// ---------------- neighbors ----------------

int cmd_neighbors(const CommonOpts& opts, const std::string& pool_path, int n_queries, int k) {
  const PipelineConfig cfg = resolve_config(opts);
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);

  const PatternPool pool = load_pool(pool_path);
  const auto dataset = load_scaled_dataset(cfg);
  std::map<std::string, const ScaledImage*> by_id;
  for (const auto& img : dataset) by_id[img.image_id] = &img;

  // queries: lowest-score pool entries, one per image
  std::vector<const PoolEntry*> sorted;
  for (const auto& e : pool.entries) sorted.push_back(&e);
  const double alpha = pool.mean_lscore;
  auto score = [&](const PoolEntry* e) {
    return po_score(e->lscore, e->hscore_raw, e->bscore_norm, alpha, alpha);
  };
  std::stable_sort(sorted.begin(), sorted.end(),
                   [&](const PoolEntry* a, const PoolEntry* b) { return score(a) < score(b); });
  std::vector<const PoolEntry*> queries;
  std::set<std::string> used_images;
  for (const auto* e : sorted) {
    if (used_images.count(e->spec.image_id)) continue;
    queries.push_back(e);
    used_images.insert(e->spec.image_id);
    if (static_cast<int>(queries.size()) == n_queries) break;
  }

  const int tile = 64, gap = 2;
  ImageU8 sheet((k + 1) * (tile + gap) + gap, static_cast<int>(queries.size()) * (tile + gap) + gap,
                255);
  json jout = json::array();
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    const PoolEntry& q = *queries[qi];
    const auto hits = nearest_neighbors(pool, q, k);
    json jrow;
    jrow["query"] = json::parse(patch_spec_to_json(q.spec));
    jrow["neighbors"] = json::array();

    auto paste = [&](const PatchSpec& spec, int col) {
      const ScaledImage* img = by_id.at(spec.image_id);
      const PixelPatch px = extract(*img, spec);
      ImageU8 small(kPatchSize, kPatchSize);
      std::copy(px.rgb.begin(), px.rgb.end(), small.data.begin());
      const ImageU8 big = resize_bilinear(small, tile, tile);
      const int ox = gap + col * (tile + gap);
      const int oy = gap + static_cast<int>(qi) * (tile + gap);
      for (int y = 0; y < tile; ++y)
        std::copy_n(big.px(0, y), tile * 3, sheet.px(ox, oy + y));
    };
    paste(q.spec, 0);
    for (size_t h = 0; h < hits.size(); ++h) {
      paste(hits[h].entry->spec, static_cast<int>(h) + 1);
      json jn = json::parse(patch_spec_to_json(hits[h].entry->spec));
      jn["distance"] = hits[h].distance;
      jrow["neighbors"].push_back(jn);
    }
    jout.push_back(jrow);
  }
  save_image((out / "neighbors.png").string(), sheet);
  std::ofstream jf(out / "neighbors.json");
  jf << jout.dump(2) << "\n";
  std::printf("neighbors sheet: %s (%zu rows)\n", (out / "neighbors.png").string().c_str(),
              queries.size());
  return 0;
}

// ---------------- render ----------------

int cmd_render(const CommonOpts& opts, const std::string& detections_path, bool no_gt, int max_rank) {
  const PipelineConfig cfg = resolve_config(opts);
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);

  const DatasetManifest manifest = load_manifest(cfg.manifest);
  const auto raw = load_dataset(manifest);
  const auto dets = load_detections(detections_path);
  std::map<std::string, std::vector<Detection>> by_img;
  for (const auto& d : dets) by_img[d.image_id].push_back(d);

  int rendered = 0;
  for (const auto& img : raw) {
    ImageU8 canvas = img.pixels;
    if (!no_gt)
      for (const auto& b : img.gt_boxes)  // ground truth in blue
        draw_rect(canvas, static_cast<int>(b.x), static_cast<int>(b.y), static_cast<int>(b.w),
                  static_cast<int>(b.h), 40, 90, 230);
    if (auto it = by_img.find(img.image_id); it != by_img.end()) {
      for (const auto& d : it->second) {
        if (d.rank > max_rank) continue;
        const Box b = denormalize_box(d.box, d.scale_factor);  // predictions in orange
        draw_rect(canvas, static_cast<int>(b.x), static_cast<int>(b.y), static_cast<int>(b.w),
                  static_cast<int>(b.h), 255, 140, 0);
      }
    }
    save_image((out / (img.image_id + ".png")).string(), canvas);
    ++rendered;
  }
  write_meta(out / "render_meta.json", cfg,
             {{"detections", detections_path}, {"images", rendered}});
  std::printf("rendered %d overlays to %s\n", rendered, out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pattern-space object discovery pipeline"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "normalize a dataset into manifest + annotations");
  std::string p_images, p_ann, p_format = "none", p_name = "dataset", p_out = "prepared";
  bool p_inria = false;
  int p_limit = 0;
  prepare->add_option("--images", p_images, "image directory")->required();
  prepare->add_option("--annotations", p_ann, "annotation dir/file (format-dependent)");
  prepare->add_option("--format", p_format, "pascal-txt|pascal-xml|jsonl|fddb-folds|none");
  prepare->add_option("--name", p_name, "dataset name");
  prepare->add_option("--limit", p_limit, "keep only the first N images");
  prepare->add_flag("--inria-ez", p_inria, "apply the <=5 people, >10K px^2 selection");
  prepare->add_option("--out", p_out, "output directory");

  // train
  auto* train_cmd = app.add_subcommand("train", "fit background model and train the embedding");
  CommonOpts train_opts;
  std::string t_resume;
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--resume", t_resume, "checkpoint to continue from");

  // discover
  auto* discover_cmd = app.add_subcommand("discover", "run object extraction");
  CommonOpts disc_opts;
  std::string d_ckpt, d_bg;
  int d_runs = 1;
  bool d_save_pool = false;
  add_common(discover_cmd, disc_opts);
  discover_cmd->add_option("--checkpoint", d_ckpt, "trained checkpoint")->required();
  discover_cmd->add_option("--bgmodel", d_bg, "background model")->required();
  discover_cmd->add_option("--runs", d_runs, "number of inference runs");
  discover_cmd->add_flag("--save-pool", d_save_pool, "persist the pattern pool of run 0");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score detections against ground truth");
  CommonOpts eval_opts;
  std::string e_dets;
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--detections", e_dets, "directory containing run_*/detections.jsonl")
      ->required();

  // neighbors
  auto* nb_cmd = app.add_subcommand("neighbors", "latent nearest-neighbor contact sheets");
  CommonOpts nb_opts;
  std::string n_pool;
  int n_queries = 5, n_k = 10;
  add_common(nb_cmd, nb_opts);
  nb_cmd->add_option("--pool", n_pool, "pattern pool file (discover --save-pool)")->required();
  nb_cmd->add_option("--queries", n_queries, "number of query rows");
  nb_cmd->add_option("--k", n_k, "neighbors per row");

  // render
  auto* render_cmd = app.add_subcommand("render", "draw detection/ground-truth overlays");
  CommonOpts render_opts;
  std::string r_dets;
  bool r_no_gt = false;
  int r_max_rank = 5;
  add_common(render_cmd, render_opts);
  render_cmd->add_option("--detections", r_dets, "detections jsonl")->required();
  render_cmd->add_flag("--no-gt", r_no_gt, "orange-only overlays");
  render_cmd->add_option("--max-rank", r_max_rank, "draw predictions up to this rank");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed())
      return cmd_prepare(p_images, p_ann, p_format, p_name, p_inria, p_limit, p_out);
    if (train_cmd->parsed()) return cmd_train(train_opts, t_resume);
    if (discover_cmd->parsed()) return cmd_discover(disc_opts, d_ckpt, d_bg, d_runs, d_save_pool);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_opts, e_dets);
    if (nb_cmd->parsed()) return cmd_neighbors(nb_opts, n_pool, n_queries, n_k);
    if (render_cmd->parsed()) return cmd_render(render_opts, r_dets, r_no_gt, r_max_rank);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
