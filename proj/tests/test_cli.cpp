// End-to-end checks of the command-line tool: every subcommand is exercised
// through a real process, file outputs are compared byte for byte where the
// contracts demand it.
#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "gridcast/checkpoint.hpp"
#include "gridcast/data.hpp"
#include "gridcast/eval.hpp"
#include "gridcast/heatmap.hpp"

#ifndef GRIDCAST_CLI_BIN
#error "GRIDCAST_CLI_BIN must point at the gridcast executable"
#endif

using namespace gridcast;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("gridcast_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(GRIDCAST_CLI_BIN) + " " + args + " 2>&1";
  std::FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof(buf), pipe)) out += buf;
  const int status = ::pclose(pipe);
  if (output) *output = out;
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// Small dataset + short training shared by several cases.
struct TrainedFixture {
  TempDir dir;
  std::string manifest;
  std::string checkpoint;

  TrainedFixture() {
    REQUIRE(run_cli("gen --out " + dir.sub("data") +
                    " --seed 5 --frames 40 --frame-h 16 --frame-w 16"
                    " --in-len 6 --out-len 2") == 0);
    manifest = dir.sub("data") + "/manifest.txt";
    REQUIRE(run_cli("train --data " + manifest + " --out " + dir.sub("run") +
                    " --seed 9 --steps 10 --batch 2 --hidden 4 --layers 2"
                    " --in-len 6 --out-len 2 --tile-h 8 --tile-w 8"
                    " --log-every 5 --threads 1") == 0);
    checkpoint = dir.sub("run") + "/model.gckp";
  }
};

}  // namespace

TEST_CASE("cli gen: outputs exist, load back, and are reproducible") {
  TempDir dir;
  const std::string base = "gen --seed 3 --frames 30 --frame-h 12 --frame-w 12";
  REQUIRE(run_cli(base + " --out " + dir.sub("a")) == 0);

  DatasetManifest m = load_manifest(dir.sub("a") + "/manifest.txt");
  REQUIRE(m.find("train") != nullptr);
  REQUIRE(m.find("val") != nullptr);
  REQUIRE(m.find("test") != nullptr);
  FrameSequence train_seq = load_frames(m.find("train")->path);
  FrameSequence test_seq = load_frames(m.find("test")->path);
  REQUIRE(train_seq.size() == 21);  // 0.7 * 30
  REQUIRE(test_seq.size() == static_cast<std::size_t>(30 - 21 - 3));
  REQUIRE(fs::exists(dir.sub("a") + "/config.json"));
  REQUIRE(!fs::exists(dir.sub("a") + "/.gridcast.lock"));  // released

  // Same seed -> byte-identical dataset files.
  REQUIRE(run_cli(base + " --out " + dir.sub("b")) == 0);
  REQUIRE(slurp(dir.sub("a") + "/train.trf") == slurp(dir.sub("b") + "/train.trf"));
  REQUIRE(slurp(dir.sub("a") + "/test.trf") == slurp(dir.sub("b") + "/test.trf"));
}

TEST_CASE("cli gen: refuses a dataset shorter than one sample window") {
  TempDir dir;
  std::string out;
  const int rc = run_cli("gen --out " + dir.sub("x") +
                             " --frames 10 --in-len 12 --out-len 3",
                         &out);
  REQUIRE(rc != 0);
  REQUIRE(out.find("in_len+out_len") != std::string::npos);
}

TEST_CASE("cli: invalid config aggregates all violations in one message") {
  TempDir dir;
  std::string out;
  const int rc = run_cli("train --data nowhere.txt --out " + dir.sub("x") +
                             " --lr -1 --batch 0 --hidden 0",
                         &out);
  REQUIRE(rc != 0);
  REQUIRE(out.find("learning_rate") != std::string::npos);
  REQUIRE(out.find("batch_size") != std::string::npos);
  REQUIRE(out.find("hidden_channels") != std::string::npos);
}

TEST_CASE("cli train: loss log, checkpoint, reproducibility and resume") {
  TrainedFixture fx;

  // Loss CSV: header plus one row per log interval.
  std::string csv = slurp(fx.dir.sub("run") + "/loss.csv");
  REQUIRE(csv.rfind("step,loss\n", 0) == 0);
  REQUIRE(csv.find("\n5,") != std::string::npos);
  REQUIRE(csv.find("\n10,") != std::string::npos);

  // Identical seed and config: byte-identical checkpoint and loss log.
  REQUIRE(run_cli("train --data " + fx.manifest + " --out " + fx.dir.sub("run2") +
                  " --seed 9 --steps 10 --batch 2 --hidden 4 --layers 2"
                  " --in-len 6 --out-len 2 --tile-h 8 --tile-w 8"
                  " --log-every 5 --threads 1") == 0);
  REQUIRE(slurp(fx.checkpoint) == slurp(fx.dir.sub("run2") + "/model.gckp"));
  REQUIRE(slurp(fx.dir.sub("run") + "/loss.csv") ==
          slurp(fx.dir.sub("run2") + "/loss.csv"));

  // Thread count must not affect the numbers.
  REQUIRE(run_cli("train --data " + fx.manifest + " --out " + fx.dir.sub("run2t") +
                  " --seed 9 --steps 10 --batch 2 --hidden 4 --layers 2"
                  " --in-len 6 --out-len 2 --tile-h 8 --tile-w 8"
                  " --log-every 5 --threads 2") == 0);
  REQUIRE(slurp(fx.checkpoint) == slurp(fx.dir.sub("run2t") + "/model.gckp"));

  // Resume restores the exact parameter bytes, then continues.
  std::string out;
  REQUIRE(run_cli("train --data " + fx.manifest + " --out " + fx.dir.sub("run3") +
                      " --resume " + fx.checkpoint +
                      " --steps 3 --batch 2 --in-len 6 --out-len 2"
                      " --tile-h 8 --tile-w 8 --threads 1 --seed 9",
                  &out) == 0);
  REQUIRE(out.find("resumed parameters") != std::string::npos);
  CascadeNetwork<float> resumed = load_checkpoint(fx.dir.sub("run3") + "/model.gckp");
  CascadeNetwork<float> original = load_checkpoint(fx.checkpoint);
  // Training moved the parameters on from the restored bytes.
  bool changed = false;
  visit_network_params(resumed, [&](const std::string&, std::vector<float>& v,
                                    const std::vector<int>&) {
    (void)v;
  });
  std::vector<float> a, b;
  visit_network_params(resumed, [&](const std::string&, std::vector<float>& v,
                                    const std::vector<int>&) {
    a.insert(a.end(), v.begin(), v.end());
  });
  visit_network_params(original, [&](const std::string&, std::vector<float>& v,
                                     const std::vector<int>&) {
    b.insert(b.end(), v.begin(), v.end());
  });
  changed = a != b;
  REQUIRE(changed);
}

TEST_CASE("cli eval: four reports with shared protocol; oracle stub scores zero") {
  TrainedFixture fx;
  REQUIRE(run_cli("eval --data " + fx.manifest + " --out " + fx.dir.sub("eval") +
                  " --checkpoint " + fx.checkpoint + " --mean-window 6" +
                  " --tile-h 8 --tile-w 8 --in-len 6 --out-len 2") == 0);

  auto model_kv = load_report_kv(fx.dir.sub("eval") + "/model.report.txt");
  auto pers_kv = load_report_kv(fx.dir.sub("eval") + "/persistence.report.txt");
  auto mean_kv = load_report_kv(fx.dir.sub("eval") + "/mean12.report.txt");
  auto decay_kv = load_report_kv(fx.dir.sub("eval") + "/decay.report.txt");

  // Identical protocol across predictors.
  REQUIRE(model_kv.at("samples") == pers_kv.at("samples"));
  REQUIRE(model_kv.at("samples") == mean_kv.at("samples"));
  REQUIRE(model_kv.at("samples") == decay_kv.at("samples"));
  REQUIRE(model_kv.at("pixels_total") == decay_kv.at("pixels_total"));

  // The decay report matches a library-level evaluation on the same inputs.
  DatasetManifest m = load_manifest(fx.manifest);
  FrameSequence test_seq = load_frames(m.find("test")->path);
  TileGrid grid = plan_tiles(16, 16, 8, 8);
  // Reconstruct the auto-picked points: 5 evenly spaced over the valid range.
  std::vector<std::uint32_t> points;
  {
    const int lo = 6, hi = static_cast<int>(test_seq.size()) - 2;
    const int n = std::min(5, hi - lo + 1);
    for (int i = 0; i < n; ++i) {
      const double f = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
      points.push_back(static_cast<std::uint32_t>(lo + f * (hi - lo) + 0.5));
    }
  }
  EvalReport lib = evaluate(decay_predictor({6, 0.9}), test_seq, grid, 6, 2, points);
  REQUIRE(std::stod(decay_kv.at("overall_mse")) ==
          Catch::Approx(lib.overall_mse).epsilon(1e-12));

  // Oracle stub produces a zero-MSE model report.
  REQUIRE(run_cli("eval --data " + fx.manifest + " --out " + fx.dir.sub("eval_o") +
                  " --oracle --mean-window 6 --tile-h 8 --tile-w 8"
                  " --in-len 6 --out-len 2") == 0);
  auto oracle_kv = load_report_kv(fx.dir.sub("eval_o") + "/model.report.txt");
  REQUIRE(std::stod(oracle_kv.at("overall_mse")) == 0.0);

  // Missing checkpoint is a config error.
  std::string out;
  REQUIRE(run_cli("eval --data " + fx.manifest + " --out " + fx.dir.sub("eval_x") +
                      " --mean-window 6 --tile-h 8 --tile-w 8 --in-len 6 --out-len 2",
                  &out) != 0);
  REQUIRE(out.find("checkpoint") != std::string::npos);
}

TEST_CASE("cli predict: bounded outputs with continued timestamps") {
  TrainedFixture fx;
  REQUIRE(run_cli("predict --data " + fx.manifest + " --out " + fx.dir.sub("pred") +
                  " --checkpoint " + fx.checkpoint + " --tile-h 8 --tile-w 8") == 0);
  FrameSequence preds = load_frames(fx.dir.sub("pred") + "/predictions.trf");
  REQUIRE(preds.size() == 2);  // checkpoint out_len
  REQUIRE(preds.height == 16);
  REQUIRE(preds.width == 16);
  for (const auto& f : preds.frames)
    for (float v : f.data) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  DatasetManifest m = load_manifest(fx.manifest);
  FrameSequence test_seq = load_frames(m.find("test")->path);
  REQUIRE(preds.start_timestamp == test_seq.timestamp(test_seq.size()));
}

TEST_CASE("cli export-heatmap: images parse back; diff of identical inputs is zero") {
  TrainedFixture fx;
  DatasetManifest m = load_manifest(fx.manifest);
  const std::string test_trf = m.find("test")->path;

  REQUIRE(run_cli("export-heatmap --input " + test_trf + " --ref " + test_trf +
                  " --out " + fx.dir.sub("maps") + " --prefix t") == 0);

  FrameSequence seq = load_frames(test_trf);
  PgmImage img = read_pgm(fx.dir.sub("maps") + "/t_f0_speed.pgm");
  REQUIRE(img.h == seq.height);
  REQUIRE(img.w == seq.width);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      REQUIRE(img.bytes[y * img.w + x] == denormalize_u8(seq.frames[0].at(0, 0, y, x)));

  PgmImage diff = read_pgm(fx.dir.sub("maps") + "/t_f0_volume_diff.pgm");
  for (auto b : diff.bytes) REQUIRE(b == 0);
}

TEST_CASE("cli: constant-full frame exports an all-255 image") {
  TempDir dir;
  FrameSequence seq;
  seq.height = 4;
  seq.width = 4;
  seq.frames.push_back(Tensor4<float>::full(1, 3, 4, 4, 1.0f));
  save_frames(seq, dir.sub("ones.trf"));
  REQUIRE(run_cli("export-heatmap --input " + dir.sub("ones.trf") + " --out " +
                  dir.sub("maps") + " --prefix one") == 0);
  PgmImage img = read_pgm(dir.sub("maps") + "/one_f0_direction.pgm");
  for (auto b : img.bytes) REQUIRE(b == 255);
}

TEST_CASE("cli: output directory lock blocks concurrent runs") {
  TempDir dir;
  fs::create_directories(dir.sub("busy"));
  std::ofstream(dir.sub("busy") + "/.gridcast.lock") << "12345\n";
  std::string out;
  const int rc = run_cli("gen --out " + dir.sub("busy") + " --frames 30", &out);
  REQUIRE(rc != 0);
  REQUIRE(out.find("locked") != std::string::npos);
}

TEST_CASE("cli: config file values apply, flags override them") {
  TempDir dir;
  std::ofstream(dir.sub("cfg.json"))
      << R"({"seed": 11, "data": {"num_frames": 32, "frame_h": 12, "frame_w": 12},)"
      << R"( "model": {"in_len": 6, "out_len": 2}})";
  REQUIRE(run_cli("gen --config " + dir.sub("cfg.json") + " --out " + dir.sub("a")) ==
          0);
  FrameSequence train_seq =
      load_frames(load_manifest(dir.sub("a") + "/manifest.txt").find("train")->path);
  REQUIRE(train_seq.height == 12);
  REQUIRE(train_seq.size() == 22);  // 0.7 * 32

  // Flag wins over the file.
  REQUIRE(run_cli("gen --config " + dir.sub("cfg.json") + " --frames 40 --out " +
                  dir.sub("b")) == 0);
  FrameSequence bigger =
      load_frames(load_manifest(dir.sub("b") + "/manifest.txt").find("train")->path);
  REQUIRE(bigger.size() == 28);  // 0.7 * 40

  // The echoed config records the effective values.
  std::string echoed = slurp(dir.sub("b") + "/config.json");
  REQUIRE(echoed.find("\"num_frames\": 40") != std::string::npos);
}
