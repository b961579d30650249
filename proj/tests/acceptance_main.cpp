// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. The learning-behavior run trains the full model on the
// synthetic dataset and takes most of the runtime.
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "gridcast/checkpoint.hpp"
#include "gridcast/eval.hpp"
#include "gridcast/heatmap.hpp"
#include "gridcast/synth.hpp"
#include "gridcast/train.hpp"
#include "oracles.hpp"

using namespace gridcast;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %-22s %s\n", pass ? "PASS" : "FAIL", name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------

void criterion_gradient_correctness() {
  const double t0 = now_s();
  const std::string cmd = std::string(GRIDCAST_CLI_BIN) + " check-grads > /dev/null";
  const int rc = std::system(cmd.c_str());
  const double secs = now_s() - t0;
  const bool pass = rc == 0 && secs < 60.0;
  report("gradient-correctness", pass,
         fmt("check-grads exit %d in %.1f s (budget 60 s)", rc, secs));
}

void criterion_oracle_equivalences() {
  SeededRng rng(55);
  bool pass = true;
  std::string detail;

  // conv2d vs nested-loop reference.
  double conv_worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor4<float> x = Tensor4<float>::uniform(2, 3, 5, 5, rng);
    ConvKernel<float> k = ConvKernel<float>::init(4, 3, 3, 3, rng);
    Tensor4<float> got = conv2d(x, k);
    Tensor4<float> ref = oracles::conv2d_ref(x, k);
    for (std::size_t i = 0; i < got.size(); ++i)
      conv_worst = std::max(conv_worst,
                            std::abs(double(got.data[i]) - double(ref.data[i])));
  }
  pass = pass && conv_worst < 1e-5;

  // 1x1 ConvLSTM vs per-pixel vector LSTM.
  double lstm_worst = 0.0;
  {
    const int in_ch = 3, d = 4, B = 2, H = 5, W = 5;
    CellParams<float> p = CellParams<float>::init(CellFlavor::convlstm, in_ch, d, 1, rng);
    Tensor4<float> x = Tensor4<float>::uniform(B, in_ch, H, W, rng);
    ConvLstmState<float> st;
    st.h = Tensor4<float>::uniform(B, d, H, W, rng, -0.9, 0.9);
    st.c = Tensor4<float>::uniform(B, d, H, W, rng);
    auto out = convlstm_step(x, st, p);

    VanillaLstmParams<float> vp;
    vp.input_dim = in_ch;
    vp.hidden = d;
    auto to_gate = [&](const GateParams<float>& g) {
      VanillaGate<float> vg;
      vg.w = Mat<float>(d, in_ch);
      vg.u = Mat<float>(d, d);
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < in_ch; ++c) vg.w.at(r, c) = g.input_kernel.at(r, c, 0, 0);
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) vg.u.at(r, c) = g.state_kernel.at(r, c, 0, 0);
      vg.b = g.bias;
      return vg;
    };
    vp.u = to_gate(p.outer.u);
    vp.i = to_gate(p.outer.i);
    vp.f = to_gate(p.outer.f);
    vp.o = to_gate(p.outer.o);
    for (int b = 0; b < B; ++b)
      for (int hh = 0; hh < H; ++hh)
        for (int ww = 0; ww < W; ++ww) {
          std::vector<float> xv(in_ch), hv(d), cv(d);
          for (int c = 0; c < in_ch; ++c) xv[c] = x.at(b, c, hh, ww);
          for (int c = 0; c < d; ++c) hv[c] = st.h.at(b, c, hh, ww);
          for (int c = 0; c < d; ++c) cv[c] = st.c.at(b, c, hh, ww);
          auto ref = vanilla_lstm_step(xv, hv, cv, vp);
          for (int c = 0; c < d; ++c) {
            lstm_worst = std::max(lstm_worst,
                                  std::abs(double(out.state.h.at(b, c, hh, ww)) -
                                           double(ref.h[c])));
            lstm_worst = std::max(lstm_worst,
                                  std::abs(double(out.state.c.at(b, c, hh, ww)) -
                                           double(ref.c[c])));
          }
        }
    pass = pass && lstm_worst < 1e-6;
  }

  // Decay average vs the naive weighted loop, and the gamma=1 mean limit.
  double decay_worst = 0.0, mean_worst = 0.0;
  {
    std::vector<Tensor4<float>> hist;
    for (int i = 0; i < 12; ++i)
      hist.push_back(Tensor4<float>::uniform(1, 3, 6, 6, rng, 0, 1));
    auto got = decay_average_predict<float>(hist, {12, 0.9}, 1);
    auto ref = oracles::decay_average_ref<float>(hist, 12, 0.9);
    for (std::size_t i = 0; i < ref.size(); ++i)
      decay_worst = std::max(decay_worst,
                             std::abs(double(got[0].data[i]) - double(ref.data[i])));
    auto uniform = decay_average_predict<float>(hist, {12, 1.0}, 1);
    auto mean = mean_predict<float>(hist, 12, 1);
    for (std::size_t i = 0; i < mean[0].size(); ++i)
      mean_worst = std::max(mean_worst, std::abs(double(uniform[0].data[i]) -
                                                 double(mean[0].data[i])));
    pass = pass && decay_worst < 1e-7 && mean_worst < 1e-7;
  }

  // Pixel-wise MSE vs the scalar loop.
  double mse_diff = 0.0;
  {
    std::vector<Tensor4<float>> a, b;
    for (int i = 0; i < 3; ++i) {
      a.push_back(Tensor4<float>::uniform(2, 3, 7, 7, rng, 0, 1));
      b.push_back(Tensor4<float>::uniform(2, 3, 7, 7, rng, 0, 1));
    }
    mse_diff = std::abs(pixelwise_mse(a, b) - oracles::mse_ref<float>(a, b));
    pass = pass && mse_diff < 1e-9;
  }

  report("oracle-equivalences", pass,
         fmt("conv %.1e (<1e-5), 1x1-convlstm %.1e (<1e-6), decay %.1e / gamma1 %.1e "
             "(<1e-7), mse %.1e (<1e-9)",
             conv_worst, lstm_worst, decay_worst, mean_worst, mse_diff));
}

void criterion_geometry() {
  bool pass = true;
  TileGrid g = plan_tiles(495, 436, 62, 73);
  pass = pass && g.rows == 8 && g.cols == 6 && g.tiles() == 48 && g.pad_h == 1 &&
         g.pad_w == 2;

  SeededRng rng(66);
  int trials = 0;
  for (; trials < 1000; ++trials) {
    const int fh = 1 + int(rng.below(100));
    const int fw = 1 + int(rng.below(100));
    const int th = 1 + int(rng.below(std::min(40, 2 * fh)));
    const int tw = 1 + int(rng.below(std::min(40, 2 * fw)));
    TileGrid grid = plan_tiles(fh, fw, th, tw);
    Tensor4<float> frame = Tensor4<float>::uniform(1, 3, fh, fw, rng, 0, 1);
    Tensor4<float> joined = tile_join(tile_split(frame, grid), grid);
    if (joined.data != frame.data) {
      pass = false;
      break;
    }
  }
  report("geometry", pass,
         fmt("48 tiles 8x6 pads (%d,%d); %d/1000 split/join round trips bit-exact",
             g.pad_h, g.pad_w, trials));
}

// Learning behavior: the full desk-scale run.
void criterion_learning_behavior() {
  // Dataset: 64x64, 600 frames, diurnal modulation on.
  SynthConfig sc;
  sc.height = 64;
  sc.width = 64;
  sc.num_frames = 600;
  sc.seed = 42;
  FrameSequence all = synth_generate(sc);
  FrameSequence train_seq = subsequence(all, 0, 420);
  FrameSequence test_seq = subsequence(all, 480, 120);

  StackConfig mc;
  mc.num_layers = 2;
  mc.hidden_channels = 16;
  mc.in_len = 12;
  mc.out_len = 3;
  auto model = CascadeNetwork<float>::init(mc, 7);

  TileGrid grid = plan_tiles(64, 64, 16, 16);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.max_steps = 2000;
  tc.log_every = 200;
  tc.seed = 7;
  tc.threads = 2;
  TeacherForcingSchedule sched;  // inverse sigmoid, k=200

  const double t0 = now_s();
  train(model, train_seq, grid, tc, sched, [&](const LossTraceRow& row) {
    std::printf("       train step %5d loss %.6f p %.3f\n", row.step, row.loss,
                row.forcing_p);
    std::fflush(stdout);
  });
  const double train_secs = now_s() - t0;

  std::vector<std::uint32_t> points{12, 38, 64, 90, 117};
  EvalReport model_rep =
      evaluate(model_predictor(model), test_seq, grid, 12, 3, points);
  EvalReport pers_rep =
      evaluate(persistence_predictor(), test_seq, grid, 12, 3, points);
  EvalReport decay_rep =
      evaluate(decay_predictor({12, 0.9}), test_seq, grid, 12, 3, points);

  const bool time_ok = train_secs < 1800.0;
  const bool vs_pers = model_rep.overall_mse <= 0.7 * pers_rep.overall_mse;
  const bool vs_decay = model_rep.overall_mse <= 0.9 * decay_rep.overall_mse;
  report("learning-behavior", time_ok && vs_pers && vs_decay,
         fmt("model %.6f vs persistence %.6f (need <=0.7x: %.6f) vs decay %.6f "
             "(need <=0.9x: %.6f); train %.0f s (budget 1800)",
             model_rep.overall_mse, pers_rep.overall_mse,
             0.7 * pers_rep.overall_mse, decay_rep.overall_mse,
             0.9 * decay_rep.overall_mse, train_secs));

  // Overfit check: one repeated batch (a single 16x16 tile window of the
  // same data distribution) reaches 1e-3 of the initial loss in 500 steps.
  SynthConfig oc = sc;
  oc.num_frames = 15;
  oc.seed = 7;
  FrameSequence obig = synth_generate(oc);
  FrameSequence tile;
  tile.height = 16;
  tile.width = 16;
  for (const auto& f : obig.frames) {
    Tensor4<float> t(1, 3, 16, 16);
    copy_tile_into(t, 0, f, grid, 0, 0);
    tile.frames.push_back(std::move(t));
  }
  auto omodel = CascadeNetwork<float>::init(mc, 1);
  TrainConfig otc;
  otc.learning_rate = 2e-3;
  otc.batch_size = 1;
  otc.max_steps = 500;
  otc.log_every = 1;
  otc.seed = 2;
  otc.threads = 1;
  TeacherForcingSchedule osched;
  osched.mode = TeacherForcingSchedule::Mode::always;
  TileGrid whole = plan_tiles(16, 16, 16, 16);
  double initial = -1.0;
  TrainResult ores = train(omodel, tile, whole, otc, osched,
                           [&](const LossTraceRow& row) {
                             if (initial < 0) initial = row.loss;
                           });
  const double ratio = ores.final_loss / initial;
  report("overfit-check", ratio <= 1e-3,
         fmt("single-batch loss %.3e -> %.3e in 500 steps (ratio %.2e, need <=1e-3)",
             initial, ores.final_loss, ratio));
}

void criterion_attention_contract() {
  StackConfig mc;
  mc.num_layers = 2;
  mc.hidden_channels = 6;
  mc.in_len = 5;
  mc.out_len = 3;
  auto net = CascadeNetwork<float>::init(mc, 12);
  SeededRng rng(13);
  std::vector<Tensor4<float>> frames, targets;
  for (int i = 0; i < 5; ++i)
    frames.push_back(Tensor4<float>::uniform(3, 3, 8, 8, rng, 0, 1));
  for (int i = 0; i < 3; ++i)
    targets.push_back(Tensor4<float>::uniform(3, 3, 8, 8, rng, 0, 1));

  std::vector<char> forced(3, 1);
  auto r = rollout<float>(net, frames, targets, forced, 3, true);
  bool sums_ok = true;
  double worst = 0.0;
  for (const auto& ac : r.cache.attn) {
    for (int b = 0; b < ac.alpha.rows; ++b) {
      double sum = 0.0;
      for (int t = 0; t < ac.alpha.cols; ++t) sum += ac.alpha.at(b, t);
      worst = std::max(worst, std::abs(sum - 1.0));
      sums_ok = sums_ok && std::abs(sum - 1.0) <= 1e-6;
    }
  }

  // Uniform scores (v = 0) must give exactly the mean context.
  AttentionParams<float> ap = AttentionParams<float>::init(6, rng);
  std::fill(ap.v.begin(), ap.v.end(), 0.0f);
  std::vector<Tensor4<float>> enc;
  for (int i = 0; i < 6; ++i)
    enc.push_back(Tensor4<float>::uniform(2, 6, 8, 8, rng, -1, 1));
  Tensor4<float> dstate = Tensor4<float>::uniform(2, 6, 8, 8, rng, -1, 1);
  auto ctx = attention_context<float>(enc, dstate, ap);
  double mean_worst = 0.0;
  for (std::size_t i = 0; i < ctx.context.size(); ++i) {
    double mean = 0.0;
    for (int t = 0; t < 6; ++t) mean += enc[t].data[i];
    mean /= 6.0;
    mean_worst = std::max(mean_worst, std::abs(double(ctx.context.data[i]) - mean));
  }
  const bool mean_ok = mean_worst < 1e-6;
  report("attention-contract", sums_ok && mean_ok,
         fmt("alpha sum deviation %.1e (<=1e-6) over %zu decode steps; uniform "
             "context error %.1e (<1e-6)",
             worst, r.cache.attn.size(), mean_worst));
}

void criterion_batching_contract() {
  SeededRng rng(77);
  FrameSequence seq;
  seq.height = 10;
  seq.width = 10;
  for (int i = 0; i < 20; ++i) {
    Tensor4<float> f(1, 3, 10, 10);
    for (auto& v : f.data) v = normalize_u8(std::uint8_t(rng.below(256)));
    seq.frames.push_back(std::move(f));
  }
  TileGrid grid = plan_tiles(10, 10, 4, 4);
  const int in_len = 3, out_len = 2, batch = 4;
  auto batches = make_batches(seq, grid, in_len, out_len, batch, 3);
  const int windows = 20 - (in_len + out_len) + 1;

  bool pass = true;
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& b : batches) {
    pass = pass && !b.window_starts.empty() &&
           int(b.window_starts.size()) <= batch;
    for (int w : b.window_starts)
      pass = pass && seen.insert({b.tile_row, b.tile_col, w}).second;
  }
  pass = pass && seen.size() == std::size_t(grid.tiles()) * windows;
  report("batching-contract", pass,
         fmt("%zu (tile,window) pairs covered exactly once across %zu "
             "tile-homogeneous batches",
             seen.size(), batches.size()));
}

void criterion_serialization() {
  const fs::path dir =
      fs::temp_directory_path() / ("gridcast_acc_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  bool pass = true;
  std::string detail;

  // TRF1 round trip.
  SeededRng rng(88);
  FrameSequence seq;
  seq.height = 9;
  seq.width = 7;
  seq.start_timestamp = 1234;
  for (int i = 0; i < 5; ++i) {
    Tensor4<float> f(1, 3, 9, 7);
    for (auto& v : f.data) v = normalize_u8(std::uint8_t(rng.below(256)));
    seq.frames.push_back(std::move(f));
  }
  const std::string trf = (dir / "seq.trf").string();
  save_frames(seq, trf);
  FrameSequence back = load_frames(trf);
  const std::string trf2 = (dir / "seq2.trf").string();
  save_frames(back, trf2);
  pass = pass && slurp(trf) == slurp(trf2);

  // Checkpoint round trip.
  StackConfig mc;
  mc.num_layers = 2;
  mc.hidden_channels = 5;
  mc.in_len = 4;
  mc.out_len = 2;
  auto net = CascadeNetwork<float>::init(mc, 3);
  const std::string ck = (dir / "m.gckp").string();
  save_checkpoint(net, ck);
  auto net2 = load_checkpoint(ck);
  const std::string ck2 = (dir / "m2.gckp").string();
  save_checkpoint(net2, ck2);
  pass = pass && slurp(ck) == slurp(ck2);

  // Designated distinct errors for corrupted header / truncated payload.
  int caught = 0;
  {
    std::string bytes = slurp(trf);
    bytes[0] = 'Z';
    std::ofstream((dir / "bad.trf").string(), std::ios::binary) << bytes;
    try {
      load_frames((dir / "bad.trf").string());
    } catch (const io_error& e) {
      if (e.code == io_errc::bad_magic) ++caught;
    }
    bytes = slurp(trf);
    bytes.resize(bytes.size() - 5);
    std::ofstream((dir / "cut.trf").string(), std::ios::binary) << bytes;
    try {
      load_frames((dir / "cut.trf").string());
    } catch (const io_error& e) {
      if (e.code == io_errc::truncated) ++caught;
    }
    bytes = slurp(ck);
    bytes[0] = 'Z';
    std::ofstream((dir / "bad.gckp").string(), std::ios::binary) << bytes;
    try {
      load_checkpoint((dir / "bad.gckp").string());
    } catch (const io_error& e) {
      if (e.code == io_errc::bad_magic) ++caught;
    }
    bytes = slurp(ck);
    bytes.resize(bytes.size() - 5);
    std::ofstream((dir / "cut.gckp").string(), std::ios::binary) << bytes;
    try {
      load_checkpoint((dir / "cut.gckp").string());
    } catch (const io_error& e) {
      if (e.code == io_errc::truncated) ++caught;
    }
  }
  pass = pass && caught == 4;
  fs::remove_all(dir);
  report("serialization", pass,
         fmt("TRF1 + checkpoint byte-identical round trips; %d/4 corruption "
             "errors carried the designated codes",
             caught));
}

void criterion_reproducibility() {
  const fs::path dir =
      fs::temp_directory_path() / ("gridcast_acc_repro_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = GRIDCAST_CLI_BIN;
  auto sh = [&](const std::string& cmd) {
    return std::system((cmd + " > /dev/null 2>&1").c_str());
  };
  bool pass = true;
  pass = pass && sh(cli + " gen --out " + (dir / "data").string() +
                    " --seed 4 --frames 40 --frame-h 16 --frame-w 16"
                    " --in-len 6 --out-len 2") == 0;
  const std::string manifest = (dir / "data" / "manifest.txt").string();
  const std::string common =
      " --data " + manifest +
      " --seed 11 --steps 30 --batch 2 --hidden 4 --layers 2 --in-len 6"
      " --out-len 2 --tile-h 8 --tile-w 8 --log-every 10 --threads 2";
  pass = pass && sh(cli + " train --out " + (dir / "a").string() + common) == 0;
  pass = pass && sh(cli + " train --out " + (dir / "b").string() + common) == 0;
  const bool ck_same =
      slurp((dir / "a" / "model.gckp").string()) ==
      slurp((dir / "b" / "model.gckp").string());
  const bool csv_same = slurp((dir / "a" / "loss.csv").string()) ==
                        slurp((dir / "b" / "loss.csv").string());
  pass = pass && ck_same && csv_same;
  fs::remove_all(dir);
  report("reproducibility", pass,
         fmt("two seeded train runs: checkpoints %s, loss logs %s",
             ck_same ? "byte-identical" : "DIFFER",
             csv_same ? "byte-identical" : "DIFFER"));
}

}  // namespace

int main() {
  std::printf("gridcast acceptance suite\n");
  const double t0 = now_s();
  criterion_gradient_correctness();
  criterion_oracle_equivalences();
  criterion_geometry();
  criterion_attention_contract();
  criterion_batching_contract();
  criterion_serialization();
  criterion_reproducibility();
  criterion_learning_behavior();
  std::printf("%s (%d failure%s, %.0f s total)\n",
              g_failures == 0 ? "ALL CRITERIA PASSED" : "CRITERIA FAILED",
              g_failures, g_failures == 1 ? "" : "s", now_s() - t0);
  return g_failures == 0 ? 0 : 1;
}
