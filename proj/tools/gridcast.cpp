// gridcast command line: dataset generation, training, evaluation,
// prediction, gradient checking and heatmap export, driven by a JSON config
// with flag overrides. Precedence: built-in defaults < config file < flags.
// The effective config is echoed to the output directory before any run.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "gridcast/checkpoint.hpp"
#include "gridcast/eval.hpp"
#include "gridcast/gradcheck.hpp"
#include "gridcast/heatmap.hpp"
#include "gridcast/synth.hpp"
#include "gridcast/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gridcast;

namespace {

// ---------------------------------------------------------------------------
// Run configuration.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";

  // data
  int frame_h = 64, frame_w = 64;
  int num_frames = 600;
  int num_roads = 6, num_blobs = 12;
  double diurnal_period = 96.0;
  double min_speed = 1.0, max_speed = 3.0;
  double blob_sigma = 1.8;
  std::string city = "synthcity";
  double train_frac = 0.7, val_frac = 0.1;
  std::string manifest;  // dataset location for train/eval/predict

  // grid
  int tile_h = 16, tile_w = 16;
  bool no_tiling = false;

  // model
  StackConfig model;

  // train
  TrainConfig train;
  std::string tf_mode = "inverse_sigmoid";
  double tf_k = 200.0;
  double tf_floor = 0.0;
  std::string resume;

  // eval / predict
  double gamma = 0.9;
  int mean_window = 12;
  std::vector<std::uint32_t> points;
  std::string checkpoint;
  std::string split = "test";
  int at = -1;  // predicting point for `predict`; -1 = end of sequence
};

void from_json_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(io_errc::io_failure, "cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error(detail::cat("config parse error in ", path, ": ", e.what()));
  }
  auto get = [](const json& obj, const char* key, auto& field) {
    if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
  };
  get(j, "seed", c.seed);
  get(j, "out", c.out);
  if (j.contains("data")) {
    const json& d = j["data"];
    get(d, "frame_h", c.frame_h);
    get(d, "frame_w", c.frame_w);
    get(d, "num_frames", c.num_frames);
    get(d, "num_roads", c.num_roads);
    get(d, "num_blobs", c.num_blobs);
    get(d, "diurnal_period", c.diurnal_period);
    get(d, "min_speed", c.min_speed);
    get(d, "max_speed", c.max_speed);
    get(d, "blob_sigma", c.blob_sigma);
    get(d, "city", c.city);
    get(d, "train_frac", c.train_frac);
    get(d, "val_frac", c.val_frac);
    get(d, "manifest", c.manifest);
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    get(g, "tile_h", c.tile_h);
    get(g, "tile_w", c.tile_w);
    get(g, "no_tiling", c.no_tiling);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    get(m, "layers", c.model.num_layers);
    get(m, "hidden", c.model.hidden_channels);
    get(m, "kernel", c.model.kernel_size);
    get(m, "in_len", c.model.in_len);
    get(m, "out_len", c.model.out_len);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    std::string opt;
    get(t, "optimizer", opt);
    if (opt == "sgd") c.train.optimizer = TrainConfig::Optimizer::sgd;
    if (opt == "adam") c.train.optimizer = TrainConfig::Optimizer::adam;
    get(t, "lr", c.train.learning_rate);
    get(t, "beta1", c.train.beta1);
    get(t, "beta2", c.train.beta2);
    get(t, "epsilon", c.train.epsilon);
    get(t, "batch_size", c.train.batch_size);
    get(t, "max_steps", c.train.max_steps);
    get(t, "log_every", c.train.log_every);
    get(t, "threads", c.train.threads);
    get(t, "tf_mode", c.tf_mode);
    get(t, "tf_k", c.tf_k);
    get(t, "tf_floor", c.tf_floor);
    get(t, "resume", c.resume);
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    get(e, "gamma", c.gamma);
    get(e, "mean_window", c.mean_window);
    get(e, "points", c.points);
    get(e, "checkpoint", c.checkpoint);
    get(e, "split", c.split);
  }
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["data"] = {{"frame_h", c.frame_h},
               {"frame_w", c.frame_w},
               {"num_frames", c.num_frames},
               {"num_roads", c.num_roads},
               {"num_blobs", c.num_blobs},
               {"diurnal_period", c.diurnal_period},
               {"min_speed", c.min_speed},
               {"max_speed", c.max_speed},
               {"blob_sigma", c.blob_sigma},
               {"city", c.city},
               {"train_frac", c.train_frac},
               {"val_frac", c.val_frac},
               {"manifest", c.manifest}};
  j["grid"] = {{"tile_h", c.tile_h}, {"tile_w", c.tile_w}, {"no_tiling", c.no_tiling}};
  j["model"] = {{"layers", c.model.num_layers},
                {"hidden", c.model.hidden_channels},
                {"kernel", c.model.kernel_size},
                {"in_len", c.model.in_len},
                {"out_len", c.model.out_len}};
  j["train"] = {
      {"optimizer", c.train.optimizer == TrainConfig::Optimizer::adam ? "adam" : "sgd"},
      {"lr", c.train.learning_rate},
      {"beta1", c.train.beta1},
      {"beta2", c.train.beta2},
      {"epsilon", c.train.epsilon},
      {"batch_size", c.train.batch_size},
      {"max_steps", c.train.max_steps},
      {"log_every", c.train.log_every},
      {"threads", c.train.threads},
      {"tf_mode", c.tf_mode},
      {"tf_k", c.tf_k},
      {"tf_floor", c.tf_floor},
      {"resume", c.resume}};
  j["eval"] = {{"gamma", c.gamma},
               {"mean_window", c.mean_window},
               {"points", c.points},
               {"checkpoint", c.checkpoint},
               {"split", c.split}};
  return j;
}

TeacherForcingSchedule schedule_of(const RunConfig& c) {
  TeacherForcingSchedule s;
  if (c.tf_mode == "always")
    s.mode = TeacherForcingSchedule::Mode::always;
  else if (c.tf_mode == "linear")
    s.mode = TeacherForcingSchedule::Mode::linear;
  else
    s.mode = TeacherForcingSchedule::Mode::inverse_sigmoid;
  s.k = c.tf_k;
  s.floor = c.tf_floor;
  return s;
}

// All validation problems collected into one error before anything touches
// the filesystem.
void validate_config(const RunConfig& c, const std::string& command) {
  std::vector<std::string> problems;
  validate(c.model, problems);
  validate(c.train, problems);
  if (c.frame_h < 1 || c.frame_w < 1) problems.push_back("frame dims must be positive");
  if (c.tile_h < 1 || c.tile_w < 1) problems.push_back("tile dims must be positive");
  if (c.train_frac <= 0 || c.train_frac >= 1 || c.val_frac < 0 ||
      c.train_frac + c.val_frac >= 1)
    problems.push_back(
        "train_frac/val_frac must satisfy 0 < train, 0 <= val, train+val < 1");
  if (c.gamma <= 0 || c.gamma > 1) problems.push_back("gamma must be in (0,1]");
  if (c.mean_window < 1) problems.push_back("mean_window must be >= 1");
  if (command == "eval" && c.mean_window > c.model.in_len)
    problems.push_back(detail::cat("mean_window (", c.mean_window,
                                   ") exceeds the in_len history (", c.model.in_len,
                                   ") the baselines receive"));
  if (c.tf_mode != "always" && c.tf_mode != "inverse_sigmoid" && c.tf_mode != "linear")
    problems.push_back("tf_mode must be always | inverse_sigmoid | linear");
  if (c.tf_k <= 0) problems.push_back("tf_k must be > 0");
  if (c.tf_floor < 0 || c.tf_floor > 1) problems.push_back("tf_floor must be in [0,1]");
  if (command == "gen") {
    const int span = c.model.in_len + c.model.out_len;
    if (c.num_frames < span)
      problems.push_back(detail::cat("num_frames (", c.num_frames,
                                     ") is below in_len+out_len (", span,
                                     "); nothing could ever be sampled"));
    else if (static_cast<int>(c.num_frames * c.train_frac) < span)
      problems.push_back(detail::cat("train split of ",
                                     static_cast<int>(c.num_frames * c.train_frac),
                                     " frames is below in_len+out_len (", span, ")"));
  }
  if (!problems.empty()) {
    std::string msg = "invalid config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw config_error(msg);
  }
}

// Exclusive lock on the output directory for the lifetime of a command.
struct OutDirLock {
  fs::path lock_path;
  explicit OutDirLock(const fs::path& dir) {
    fs::create_directories(dir);
    lock_path = dir / ".gridcast.lock";
    // "wx" = create exclusively; fails if another run owns the directory.
    std::FILE* f = std::fopen(lock_path.string().c_str(), "wx");
    if (!f)
      throw io_error(io_errc::io_failure,
                     detail::cat("output directory ", dir.string(),
                                 " is locked by another run (remove ",
                                 lock_path.string(), " if stale)"));
    std::fprintf(f, "%d\n", static_cast<int>(::getpid()));
    std::fclose(f);
  }
  ~OutDirLock() {
    std::error_code ec;
    fs::remove(lock_path, ec);
  }
};

void echo_config(const RunConfig& c, const fs::path& out_dir) {
  std::ofstream out(out_dir / "config.json", std::ios::trunc);
  out << to_json(c).dump(2) << "\n";
}

TileGrid grid_of(const RunConfig& c, int frame_h, int frame_w) {
  if (c.no_tiling) return plan_tiles(frame_h, frame_w, frame_h, frame_w);
  return plan_tiles(frame_h, frame_w, c.tile_h, c.tile_w);
}

FrameSequence load_split(const RunConfig& c, const std::string& split) {
  if (c.manifest.empty())
    throw config_error("no dataset manifest configured (data.manifest or --data)");
  DatasetManifest m = load_manifest(c.manifest);
  const ManifestEntry* e = m.find(split);
  if (!e)
    throw config_error(detail::cat("manifest ", c.manifest, " has no '", split,
                                   "' split"));
  return load_frames(e->path);
}

std::vector<std::uint32_t> pick_points(const RunConfig& c, const FrameSequence& seq) {
  if (!c.points.empty()) return c.points;
  const int lo = c.model.in_len;
  const int hi = static_cast<int>(seq.size()) - c.model.out_len;
  if (hi < lo)
    throw config_error(detail::cat("split too short for evaluation: ", seq.size(),
                                   " frames, need at least ",
                                   c.model.in_len + c.model.out_len));
  const int n = std::min(5, hi - lo + 1);
  std::vector<std::uint32_t> pts;
  for (int i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    pts.push_back(static_cast<std::uint32_t>(lo + f * (hi - lo) + 0.5));
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

int cmd_gen(RunConfig cfg) {
  validate_config(cfg, "gen");
  OutDirLock lock(cfg.out);
  echo_config(cfg, cfg.out);

  SynthConfig sc;
  sc.height = cfg.frame_h;
  sc.width = cfg.frame_w;
  sc.num_frames = cfg.num_frames;
  sc.num_roads = cfg.num_roads;
  sc.num_blobs = cfg.num_blobs;
  sc.diurnal_period = cfg.diurnal_period;
  sc.min_speed = cfg.min_speed;
  sc.max_speed = cfg.max_speed;
  sc.blob_sigma = cfg.blob_sigma;
  sc.seed = cfg.seed;
  sc.city = cfg.city;
  FrameSequence all = synth_generate(sc);

  const auto n = all.size();
  const auto n_train = static_cast<std::size_t>(n * cfg.train_frac);
  const auto n_val = static_cast<std::size_t>(n * cfg.val_frac);
  const auto n_test = n - n_train - n_val;

  const fs::path out(cfg.out);
  DatasetManifest manifest;
  auto dump = [&](const std::string& split, std::size_t from, std::size_t count) {
    if (count == 0) return;
    FrameSequence part = subsequence(all, from, count);
    const std::string name = split + ".trf";
    save_frames(part, (out / name).string());
    manifest.entries.push_back({split, cfg.city, name});
  };
  dump("train", 0, n_train);
  dump("val", n_train, n_val);
  dump("test", n_train + n_val, n_test);
  save_manifest(manifest, (out / "manifest.txt").string());

  std::printf("gen: %zu frames (%dx%d) -> %s  [train %zu | val %zu | test %zu]\n",
              n, cfg.frame_h, cfg.frame_w, cfg.out.c_str(), n_train, n_val, n_test);
  return 0;
}

int cmd_train(RunConfig cfg) {
  validate_config(cfg, "train");
  OutDirLock lock(cfg.out);
  echo_config(cfg, cfg.out);

  FrameSequence data = load_split(cfg, "train");
  TileGrid grid = grid_of(cfg, data.height, data.width);

  CascadeNetwork<float> model =
      cfg.resume.empty() ? CascadeNetwork<float>::init(cfg.model, cfg.seed)
                         : load_checkpoint(cfg.resume);
  if (!cfg.resume.empty()) {
    std::printf("train: resumed parameters from %s\n", cfg.resume.c_str());
    cfg.model = model.cfg;
  }

  const fs::path out(cfg.out);
  std::ofstream loss_csv(out / "loss.csv", std::ios::trunc);
  loss_csv << "step,loss\n";

  TeacherForcingSchedule sched = schedule_of(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res = train(model, data, grid, cfg.train, sched,
                          [&](const LossTraceRow& row) {
                            char buf[64];
                            std::snprintf(buf, sizeof(buf), "%.9g", row.loss);
                            loss_csv << row.step << ',' << buf << '\n';
                            loss_csv.flush();
                            std::printf("step %6d  loss %.6f  p_force %.3f\n",
                                        row.step, row.loss, row.forcing_p);
                            std::fflush(stdout);
                          });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  loss_csv.close();

  save_checkpoint(model, (out / "model.gckp").string());
  std::printf("train: %d steps in %.1f s, final loss %.6f -> %s\n",
              cfg.train.max_steps, secs, res.final_loss,
              (out / "model.gckp").string().c_str());
  return 0;
}

int cmd_eval(RunConfig cfg, bool oracle_stub) {
  validate_config(cfg, "eval");
  OutDirLock lock(cfg.out);
  echo_config(cfg, cfg.out);

  FrameSequence data = load_split(cfg, cfg.split);
  TileGrid grid = grid_of(cfg, data.height, data.width);
  std::vector<std::uint32_t> points = pick_points(cfg, data);

  CascadeNetwork<float> model;
  TilePredictor model_pred;
  if (oracle_stub) {
    // Test hook: replay the evaluation order and answer with the targets.
    auto calls = std::make_shared<std::size_t>(0);
    const int out_len = cfg.model.out_len;
    model_pred = [&data, &grid, &points, calls,
                  out_len](std::span<const Tensor4<float>>, int) {
      const std::size_t idx = (*calls)++;
      const std::uint32_t p = points[idx / grid.tiles()];
      const int tile = static_cast<int>(idx % grid.tiles());
      std::vector<Tensor4<float>> out_frames;
      for (int k = 0; k < out_len; ++k) {
        Tensor4<float> t(1, kFrameChannels, grid.tile_h, grid.tile_w);
        copy_tile_into(t, 0, data.frames[p + k], grid, tile / grid.cols,
                       tile % grid.cols);
        out_frames.push_back(std::move(t));
      }
      return out_frames;
    };
  } else {
    if (cfg.checkpoint.empty())
      throw config_error("eval needs a checkpoint (eval.checkpoint or --checkpoint)");
    model = load_checkpoint(cfg.checkpoint);
    cfg.model = model.cfg;
    model_pred = model_predictor(model);
  }

  struct Entry {
    const char* label;
    TilePredictor pred;
  };
  std::vector<Entry> entries;
  entries.push_back({"model", model_pred});
  entries.push_back({"persistence", persistence_predictor()});
  entries.push_back({"mean12", mean_predictor(cfg.mean_window)});
  entries.push_back({"decay", decay_predictor({cfg.mean_window, cfg.gamma})});

  const fs::path out(cfg.out);
  std::printf("eval: split '%s', %zu points, %d tiles\n", cfg.split.c_str(),
              points.size(), grid.tiles());
  for (auto& e : entries) {
    EvalReport rep =
        evaluate(e.pred, data, grid, cfg.model.in_len, cfg.model.out_len, points);
    save_report(rep, e.label, (out / (std::string(e.label) + ".report.txt")).string());
    std::printf("  %-12s overall mse %.6f", e.label, rep.overall_mse);
    for (int k = 0; k < rep.out_len; ++k)
      std::printf("  t+%d %.6f", k + 1, rep.per_horizon_mse[k]);
    std::printf("\n");
  }
  return 0;
}

int cmd_predict(RunConfig cfg, const std::string& input_trf) {
  validate_config(cfg, "predict");
  OutDirLock lock(cfg.out);
  echo_config(cfg, cfg.out);

  if (cfg.checkpoint.empty())
    throw config_error("predict needs a checkpoint (eval.checkpoint or --checkpoint)");
  CascadeNetwork<float> model = load_checkpoint(cfg.checkpoint);
  cfg.model = model.cfg;

  FrameSequence data =
      input_trf.empty() ? load_split(cfg, cfg.split) : load_frames(input_trf);
  TileGrid grid = grid_of(cfg, data.height, data.width);

  const int point = cfg.at >= 0 ? cfg.at : static_cast<int>(data.size());
  detail::require(point >= cfg.model.in_len && point <= static_cast<int>(data.size()),
                  detail::cat("predict: point ", point, " needs ", cfg.model.in_len,
                              " frames of history within ", data.size(), " frames"));

  // Per-tile closed-loop rollout, then stitch each horizon back together.
  std::vector<std::vector<std::vector<Tensor4<float>>>> tiles(
      cfg.model.out_len, std::vector<std::vector<Tensor4<float>>>(grid.rows));
  for (int k = 0; k < cfg.model.out_len; ++k)
    for (int i = 0; i < grid.rows; ++i) tiles[k][i].resize(grid.cols);

  for (int ti = 0; ti < grid.rows; ++ti)
    for (int tj = 0; tj < grid.cols; ++tj) {
      std::vector<Tensor4<float>> hist;
      for (int j = point - cfg.model.in_len; j < point; ++j) {
        Tensor4<float> t(1, kFrameChannels, grid.tile_h, grid.tile_w);
        copy_tile_into(t, 0, data.frames[j], grid, ti, tj);
        hist.push_back(std::move(t));
      }
      auto preds = predict<float>(model, hist);
      for (int k = 0; k < cfg.model.out_len; ++k)
        tiles[k][ti][tj] = std::move(preds[k]);
    }

  FrameSequence out_seq;
  out_seq.height = data.height;
  out_seq.width = data.width;
  out_seq.stride_minutes = data.stride_minutes;
  out_seq.start_timestamp = data.timestamp(point);
  for (int k = 0; k < cfg.model.out_len; ++k)
    out_seq.frames.push_back(tile_join(tiles[k], grid));

  const std::string out_path = (fs::path(cfg.out) / "predictions.trf").string();
  save_frames(out_seq, out_path);
  std::printf("predict: %d frames from point %d -> %s\n", cfg.model.out_len, point,
              out_path.c_str());
  return 0;
}

int cmd_check_grads(bool corrupt) {
  auto rows = run_grad_checks(corrupt);
  std::printf("%-22s %-5s %-14s %-10s %s\n", "group", "prec", "max_rel_err",
              "tolerance", "status");
  bool all_pass = true;
  for (const auto& r : rows) {
    std::printf("%-22s %-5s %-14.3e %-10.0e %s\n", r.group.c_str(),
                r.precision.c_str(), r.max_rel_err, r.tolerance,
                r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_export_heatmap(RunConfig cfg, const std::string& input_trf,
                       const std::string& ref_trf, const std::string& prefix) {
  OutDirLock lock(cfg.out);

  FrameSequence seq = load_frames(input_trf);
  FrameSequence ref;
  const bool with_ref = !ref_trf.empty();
  if (with_ref) ref = load_frames(ref_trf);

  const std::string full_prefix = (fs::path(cfg.out) / prefix).string();
  auto written = export_heatmaps(seq, full_prefix, with_ref ? &ref : nullptr);
  std::printf("export-heatmap: wrote %zu images under %s\n", written.size(),
              cfg.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridcast: tiled spatiotemporal traffic-frame prediction"};
  app.require_subcommand(1);

  std::string config_path;
  RunConfig cfg;

  // Option values land here; only flags the user actually passed override
  // the config file.
  struct FlagSet {
    std::uint64_t seed = 0;
    std::string out, data_manifest, checkpoint, resume, split, tf_mode;
    int layers = 0, hidden = 0, tile_h = 0, tile_w = 0, in_len = 0, out_len = 0;
    int steps = 0, batch = 0, threads = -1, frames = 0, frame_h = 0, frame_w = 0;
    int log_every = 0, at = -1, mean_window = 0;
    double gamma = 0, lr = 0, diurnal = -1;
    bool no_tiling = false;
  } flags;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", flags.seed, "master RNG seed");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--layers", flags.layers, "memory-cascade layer count");
    cmd->add_option("--hidden", flags.hidden, "hidden channels per layer");
    cmd->add_option("--tile-h", flags.tile_h, "tile height");
    cmd->add_option("--tile-w", flags.tile_w, "tile width");
    cmd->add_option("--in-len", flags.in_len, "input frames per sample");
    cmd->add_option("--out-len", flags.out_len, "predicted frames per sample");
    cmd->add_option("--gamma", flags.gamma, "decay-average gamma");
    cmd->add_flag("--no-tiling", flags.no_tiling,
                  "train/evaluate on whole padded frames");
    cmd->add_option("--data", flags.data_manifest, "dataset manifest path");
    cmd->add_option("--steps", flags.steps, "training steps");
    cmd->add_option("--batch", flags.batch, "batch size");
    cmd->add_option("--lr", flags.lr, "learning rate");
    cmd->add_option("--threads", flags.threads, "worker threads (0 = auto)");
    cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint path");
    cmd->add_option("--split", flags.split, "dataset split to use");
    cmd->add_option("--tf-mode", flags.tf_mode,
                    "teacher forcing: always | inverse_sigmoid | linear");
    cmd->add_option("--log-every", flags.log_every, "loss log interval");
    cmd->add_option("--mean-window", flags.mean_window, "baseline window length");
    return cmd;
  };

  CLI::App* gen = add_common(app.add_subcommand("gen", "generate a synthetic dataset"));
  gen->add_option("--frames", flags.frames, "number of frames");
  gen->add_option("--frame-h", flags.frame_h, "frame height");
  gen->add_option("--frame-w", flags.frame_w, "frame width");
  gen->add_option("--diurnal", flags.diurnal, "day-cycle period in frames (0 = off)");

  CLI::App* train_cmd = add_common(app.add_subcommand("train", "train a model"));
  train_cmd->add_option("--resume", flags.resume, "checkpoint to continue from");

  CLI::App* eval_cmd =
      add_common(app.add_subcommand("eval", "evaluate the model and baselines"));
  bool oracle_stub = false;
  eval_cmd->add_flag("--oracle", oracle_stub, "report a perfect predictor (test hook)")
      ->group("");

  CLI::App* predict_cmd =
      add_common(app.add_subcommand("predict", "closed-loop prediction"));
  std::string input_trf, ref_trf, prefix = "frame";
  predict_cmd->add_option("--input", input_trf,
                          "TRF1 input (default: the configured split)");
  predict_cmd->add_option("--at", flags.at,
                          "predicting point (frame index; default end of sequence)");

  CLI::App* check =
      app.add_subcommand("check-grads", "finite-difference gradient checks");
  bool corrupt = false;
  check->add_flag("--corrupt-backward", corrupt,
                  "deliberately corrupt one gradient (harness test hook)")
      ->group("");

  CLI::App* heat =
      add_common(app.add_subcommand("export-heatmap", "write P5 graymaps per channel"));
  heat->add_option("--input", input_trf, "TRF1 input")->required();
  heat->add_option("--ref", ref_trf, "reference TRF1 for difference images");
  heat->add_option("--prefix", prefix, "output filename prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* sub = app.get_subcommands().front();

    if (!config_path.empty()) from_json_file(cfg, config_path);

    auto passed = [&](const std::string& name) {
      const CLI::Option* opt = sub->get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };
    if (passed("--seed")) cfg.seed = flags.seed;
    if (passed("--out")) cfg.out = flags.out;
    if (passed("--layers")) cfg.model.num_layers = flags.layers;
    if (passed("--hidden")) cfg.model.hidden_channels = flags.hidden;
    if (passed("--tile-h")) cfg.tile_h = flags.tile_h;
    if (passed("--tile-w")) cfg.tile_w = flags.tile_w;
    if (passed("--in-len")) cfg.model.in_len = flags.in_len;
    if (passed("--out-len")) cfg.model.out_len = flags.out_len;
    if (passed("--gamma")) cfg.gamma = flags.gamma;
    if (passed("--no-tiling")) cfg.no_tiling = true;
    if (passed("--data")) cfg.manifest = flags.data_manifest;
    if (passed("--steps")) cfg.train.max_steps = flags.steps;
    if (passed("--batch")) cfg.train.batch_size = flags.batch;
    if (passed("--lr")) cfg.train.learning_rate = flags.lr;
    if (passed("--threads")) cfg.train.threads = flags.threads;
    if (passed("--checkpoint")) cfg.checkpoint = flags.checkpoint;
    if (passed("--split")) cfg.split = flags.split;
    if (passed("--tf-mode")) cfg.tf_mode = flags.tf_mode;
    if (passed("--log-every")) cfg.train.log_every = flags.log_every;
    if (passed("--mean-window")) cfg.mean_window = flags.mean_window;
    if (sub == gen) {
      if (passed("--frames")) cfg.num_frames = flags.frames;
      if (passed("--frame-h")) cfg.frame_h = flags.frame_h;
      if (passed("--frame-w")) cfg.frame_w = flags.frame_w;
      if (passed("--diurnal")) cfg.diurnal_period = flags.diurnal;
    }
    if (sub == train_cmd && passed("--resume")) cfg.resume = flags.resume;
    if (sub == predict_cmd && passed("--at")) cfg.at = flags.at;
    cfg.train.seed = cfg.seed;

    if (sub == gen) return cmd_gen(cfg);
    if (sub == train_cmd) return cmd_train(cfg);
    if (sub == eval_cmd) return cmd_eval(cfg, oracle_stub);
    if (sub == predict_cmd) return cmd_predict(cfg, input_trf);
    if (sub == check) return cmd_check_grads(corrupt);
    if (sub == heat) return cmd_export_heatmap(cfg, input_trf, ref_trf, prefix);
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
