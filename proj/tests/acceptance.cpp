// Acceptance suite. Prints one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 3 7        run selected criteria
//
// Exit status is nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "convlstm/anomaly.hpp"
#include "convlstm/checkpoint.hpp"
#include "convlstm/synth.hpp"
#include "convlstm/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace convlstm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Every parameter drawn at random (peepholes and biases included) so no
// gradient is trivially zero.
CompositeModel random_model(const NetworkConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  auto model = CompositeModel::initialize(cfg, rng);
  auto& ps = model.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (auto& v : ps.value(i).data()) v += rng.uniform(-0.3, 0.3);
  return model;
}

// ---- 1: gradient check ----

Outcome gradient_check() {
  NetworkConfig cfg;
  cfg.frame_side = 16;
  cfg.patch_factor = 2;
  cfg.filter_size = 3;
  cfg.layer_channels = {4, 4};
  cfg.input_len = 3;
  cfg.output_len = 3;
  constexpr double eps = 1e-5;
  // Denominator floor. The central difference carries about
  // 1e-16 * |loss| / eps ~ 1e-11 of rounding noise, which swamps the relative
  // error of gradients smaller than ~1e-7.
  constexpr double floor = 1e-6;

  double worst = 0.0, worst_abs = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    cfg.conditioned = seed != 11;
    auto model = random_model(cfg, seed);
    Rng data(seed * 7 + 1);
    const Tensor input = oracle::random_tensor({3, 1, 16, 16}, data, 0.0, 1.0);
    const Tensor target = oracle::random_tensor({3, 1, 16, 16}, data, 0.0, 1.0);
    const auto analytic = loss_and_gradients(model, input, target).grads;
    auto& ps = model.parameters();
    for (std::size_t p = 0; p < ps.size(); ++p) {
      auto values = ps.value(p).data();
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double orig = values[j];
        values[j] = orig + eps;
        const double up = forward_composite(model, input, target).loss;
        values[j] = orig - eps;
        const double down = forward_composite(model, input, target).loss;
        values[j] = orig;
        const double numeric = (up - down) / (2 * eps);
        const double a = analytic[p][j];
        const double rel =
            std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        worst_abs = std::max(worst_abs, std::abs(a - numeric));
        if (rel > worst) {
          worst = rel;
          worst_name = ps.name(p) + "[" + std::to_string(j) + "]";
        }
        ++checked;
      }
    }
  }
  return {worst < 1e-4, std::to_string(checked) + " parameters over 3 seeds, max relative error " +
                            fmt("%.3g", worst) + " (" + worst_name + "), max absolute error " +
                            fmt("%.3g", worst_abs)};
}

// ---- 2: cell oracle ----

Outcome cell_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cin = 1 + rng.below(3), ch = 1 + rng.below(3);
    const std::size_t side = 3 + rng.below(4), k = 1 + 2 * rng.below(3);
    const auto params = oracle::random_cell(cin, ch, side, k, rng);
    const Tensor x = oracle::random_tensor({cin, side, side}, rng);
    const CellState prev{oracle::random_tensor({ch, side, side}, rng),
                         oracle::random_tensor({ch, side, side}, rng, -2.0, 2.0)};
    const auto got = cell_step(params, x, prev);
    const auto want = oracle::cell_step(params, x, prev);
    worst = std::max({worst, max_abs_diff(got.h, want.h), max_abs_diff(got.c, want.c)});
  }
  return {worst <= 1e-10, "100 random cells, max abs difference " + fmt("%.3g", worst)};
}

// ---- 3: overfit a single clip ----

SceneSpec bouncing_squares(std::size_t side, std::size_t count) {
  SceneSpec spec;
  spec.frame_side = side;
  for (std::size_t i = 0; i < count; ++i) {
    ObjectSpec o;
    o.shape = ShapeKind::square;
    o.size = 4;
    o.speed = 1.0;
    spec.objects.push_back(o);
  }
  return spec;
}

NetworkConfig small_net() {
  NetworkConfig cfg;
  cfg.frame_side = 16;
  cfg.patch_factor = 2;
  cfg.filter_size = 3;
  cfg.layer_channels = {16, 16};
  return cfg;
}

// At lr 1e-4 each RMSProp step moves a weight by about 1e-4, so the loss falls
// faster with more weights feeding the output. Coarser patches keep it cheap.
NetworkConfig overfit_net() {
  NetworkConfig cfg;
  cfg.frame_side = 16;
  cfg.patch_factor = 4;
  cfg.filter_size = 3;
  cfg.layer_channels = {32, 32};
  return cfg;
}

Outcome overfit() {
  const std::vector<VideoClip> clips{generate(bouncing_squares(16, 1), 20, 5)};
  const auto cfg = overfit_net();
  Rng rng(3);
  const auto initial = CompositeModel::initialize(cfg, rng);
  const auto windows = enumerate_windows(clips, cfg);
  const double start = mean_loss(initial, clips, windows);

  TrainConfig tc;
  tc.optimizer = OptimizerKind::rmsprop;
  tc.learning_rate = 1e-4;
  tc.decay = 0.9;
  tc.max_iterations = 2000;
  tc.validation_fraction = 0.0;
  tc.early_stop_patience = 0;
  tc.seed = 3;
  const auto result = train(initial, clips, tc);
  const double end = mean_loss(result.model, clips, windows);
  return {end < 0.01 * start, "combined loss " + fmt("%.4g", start) + " -> " + fmt("%.4g", end) +
                                  " (" + fmt("%.2f", 100 * end / start) + "% of initial, " +
                                  std::to_string(result.iterations_run) + " iterations)"};
}

// ---- 4: composite vs future-only baseline ----

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

double mean_prediction_loss(const CompositeModel& model, const std::vector<VideoClip>& clips) {
  const auto windows = enumerate_windows(clips, model.config());
  const auto& cfg = model.config();
  double s = 0.0;
  for (const auto& w : windows)
    s += forward_composite(model, clips[w.clip].window(w.start, cfg.input_len),
                           clips[w.clip].window(w.start + cfg.input_len, cfg.output_len))
             .prediction_loss;
  return s / static_cast<double>(windows.size());
}

TrainConfig benchmark_training(std::uint64_t seed, std::size_t iterations) {
  TrainConfig tc;
  tc.optimizer = OptimizerKind::rmsprop;
  tc.learning_rate = 1e-3;
  tc.decay = 0.9;
  tc.max_iterations = iterations;
  tc.eval_interval = 100;
  tc.validation_fraction = 0.2;
  tc.seed = seed;
  return tc;
}

Outcome composite_vs_baseline() {
  const auto spec = bouncing_squares(16, 2);
  std::vector<VideoClip> train_set, test_set;
  for (std::uint64_t i = 0; i < 6; ++i) train_set.push_back(generate(spec, 100, 100 + i));
  for (std::uint64_t i = 0; i < 3; ++i) test_set.push_back(generate(spec, 100, 900 + i));

  std::vector<double> composite, baseline;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (bool comp : {true, false}) {
      auto cfg = small_net();
      cfg.composite = comp;
      Rng rng = Rng(seed).split("init");
      const auto init = CompositeModel::initialize(cfg, rng);
      const auto result = train(init, train_set, benchmark_training(seed, 1500));
      (comp ? composite : baseline).push_back(mean_prediction_loss(result.model, test_set));
    }
  }
  const double mc = median3(composite), mb = median3(baseline);
  std::ostringstream d;
  d << "median test prediction MSE composite " << fmt("%.5f", mc) << " vs baseline "
    << fmt("%.5f", mb) << " (composite";
  for (double v : composite) d << " " << fmt("%.5f", v);
  d << "; baseline";
  for (double v : baseline) d << " " << fmt("%.5f", v);
  d << ")";
  return {mc <= mb, d.str()};
}

// ---- 5: persistence oracle ----

Outcome persistence_oracle() {
  Rng rng(55);
  std::size_t plateau_cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<double> f(n);
    const bool plateaus = trial % 2 == 1;
    for (auto& v : f) v = plateaus ? static_cast<double>(rng.below(5)) * 0.25 : rng.uniform();
    if (plateaus) ++plateau_cases;
    const auto got = persistence1d(f);
    const auto want = oracle::persistence(f);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].min_index == want[i].min_index && got[i].max_index == want[i].max_index &&
             std::abs(got[i].persistence() - want[i].persistence()) <= 1e-12;
    if (!same)
      return {false, "mismatch on trial " + std::to_string(trial) + " (length " +
                         std::to_string(n) + ")"};
  }
  return {true, "1000 random series (" + std::to_string(plateau_cases) +
                    " with plateaus) agree with the path oracle"};
}

// ---- 6: regularity invariants ----

Outcome regularity_invariants() {
  Rng rng(66);
  std::size_t failures = 0;
  double worst_ulps = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    // Errors on a fixed-point grid and a 24-bit scale factor keep every
    // product c*e exactly representable.
    const int shift = static_cast<int>(rng.below(40)) - 20;
    std::vector<double> e(n);
    for (auto& v : e) v = std::ldexp(static_cast<double>(1 + rng.below(1u << 24)), -30);
    const double c = std::ldexp(static_cast<double>(1 + rng.below(1u << 24)), shift);

    const auto g = regularity(e);
    const auto lo = std::min_element(e.begin(), e.end());
    const double emin = *lo, emax = *std::max_element(e.begin(), e.end());
    bool ok = g[static_cast<std::size_t>(lo - e.begin())] == 1.0;
    for (double v : g) ok = ok && v >= emin / emax && v <= 1.0;

    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) scaled[i] = c * e[i];
    ok = ok && regularity(scaled) == g;

    // Arbitrary real factors: c*e rounds, so only closeness is possible.
    const double c_any = rng.uniform(1e-3, 1e3);
    for (std::size_t i = 0; i < n; ++i) scaled[i] = c_any * e[i];
    const auto g_any = regularity(scaled);
    for (std::size_t i = 0; i < n; ++i)
      worst_ulps = std::max(worst_ulps, std::abs(g_any[i] - g[i]) / std::ldexp(1.0, -52));

    const auto ones = regularity(std::vector<double>(n, 0.0));
    ok = ok && std::all_of(ones.begin(), ones.end(), [](double v) { return v == 1.0; });
    if (!ok) ++failures;
  }
  return {failures == 0, "500 random series, " + std::to_string(failures) +
                             " failures; arbitrary real scale factors move g by at most " +
                             fmt("%.0f", worst_ulps) + " ulp"};
}

// ---- 7: end-to-end anomaly benchmark ----

Outcome anomaly_benchmark() {
  const auto normal = bouncing_squares(16, 1);
  std::vector<VideoClip> train_set;
  for (std::uint64_t i = 0; i < 10; ++i) train_set.push_back(generate(normal, 200, 7000 + i));

  auto cfg = small_net();
  Rng rng = Rng(77).split("init");
  const auto init = CompositeModel::initialize(cfg, rng);
  const auto result = train(init, train_set, benchmark_training(77, 2000));

  const std::size_t span = cfg.input_len + cfg.output_len;
  std::vector<ClipScores> scores;
  bool ordered = true;
  std::ostringstream d;
  d << "anomalous/normal mean regularity:";
  for (std::uint64_t i = 0; i < 5; ++i) {
    auto spec = normal;
    AnomalySpec a;
    a.kind = AnomalyKind::speed_up;
    a.object = 0;
    a.factor = 3.0;
    a.frames = {120 + 20 * i, 120 + 20 * i + 119};
    spec.anomalies.push_back(a);
    const auto clip = generate(spec, 400, 8000 + i);
    const auto g = regularity(sliding_errors(result.model, clip, ErrorSource::combined));
    const auto gt = ground_truth_windows(clip.ground_truth, span, g.size());

    double sa = 0, sn = 0;
    std::size_t na = 0, nn = 0;
    for (std::size_t w = 0; w < g.size(); ++w) {
      const bool anomalous =
          std::any_of(gt.begin(), gt.end(), [&](const Interval& iv) { return w >= iv.start && w <= iv.end; });
      (anomalous ? sa : sn) += g[w];
      ++(anomalous ? na : nn);
    }
    const double ma = sa / static_cast<double>(na), mn = sn / static_cast<double>(nn);
    ordered = ordered && ma < mn;
    d << " " << fmt("%.3f", ma) << "/" << fmt("%.3f", mn);
    scores.push_back({g, gt});
  }
  const auto rows = threshold_sweep(scores);
  const auto& best = best_f1(rows);
  const bool detected = best.report.recall() == 1.0 && best.report.precision() >= 0.6;
  d << "; best threshold " << fmt("%.2f", best.threshold) << " TP " << best.report.true_positives
    << " FP " << best.report.false_positives << " FN " << best.report.false_negatives
    << " precision " << fmt("%.2f", best.report.precision()) << " recall "
    << fmt("%.2f", best.report.recall());
  return {ordered && detected, d.str()};
}

// ---- 8: evaluation-rule fixtures ----

Outcome evaluation_fixtures() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* what) {
    if (!ok) failed.push_back(what);
  };
  using V = std::vector<std::size_t>;
  {
    const V minima{100}, maxima{};
    const auto r = propose_regions(minima, maxima, 300);
    check(r.size() == 1 && r[0].interval() == Interval{50, 150}, "single minimum");
  }
  {
    const V minima{100, 130}, maxima{115};
    const auto r = propose_regions(minima, maxima, 300);
    check(r.size() == 1 && r[0].interval() == Interval{50, 180}, "maximum between merged minima");
  }
  {
    const V minima{100}, maxima{180};
    const auto r = propose_regions(minima, maxima, 300);
    check(r.size() == 1 && r[0].interval() == Interval{50, 140}, "midpoint trim");
  }
  {
    const std::vector<Interval> gt{{10, 20}, {50, 80}};
    const auto rep = evaluate(gt, gt);
    check(rep.precision() == 1.0 && rep.recall() == 1.0, "exact proposals");
  }
  {
    const std::vector<Interval> gt{{100, 199}}, props{{100, 140}, {150, 199}};
    const auto rep = evaluate(props, gt);
    check(rep.true_positives == 1 && rep.false_positives == 0 && rep.false_negatives == 0,
          "single TP for repeated detections");
  }
  {
    const std::vector<Interval> gt{{80, 99}}, props{{0, 99}};
    const auto rep = evaluate(props, gt);
    check(rep.true_positives == 0 && rep.false_positives == 1 && rep.false_negatives == 1,
          "20% overlap rejected");
  }
  std::string detail = "6 fixtures";
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failed.empty(), detail};
}

// ---- 9: round trips ----

Outcome round_trips() {
  const fs::path dir = fs::temp_directory_path() / ("convlstm_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::vector<std::string> failed;

  auto cfg = small_net();
  Rng rng(9);
  auto model = random_model(cfg, 9);
  model.quantize_to_float();
  save_checkpoint(model, dir / "model.ckpt");
  const auto loaded = load_checkpoint(dir / "model.ckpt");
  if (!(loaded == model) || checkpoint_bytes(loaded) != checkpoint_bytes(model))
    failed.push_back("checkpoint");

  VideoClip clip;
  for (int t = 0; t < 6; ++t) clip.frames.push_back(oracle::random_tensor({1, 16, 16}, rng, 0.0, 1.0));
  clip.ground_truth = {{1, 2}, {4, 5}};
  save_clip(clip, dir / "clip");
  const auto back = load_clip(dir / "clip");
  double worst = 0.0;
  for (std::size_t t = 0; t < clip.length(); ++t)
    worst = std::max(worst, max_abs_diff(clip.frames[t], back.frames[t]));
  if (back.length() != clip.length() || worst > 1.0 / 255.0 || back.ground_truth != clip.ground_truth)
    failed.push_back("clip");

  const std::vector<VideoClip> data{generate(bouncing_squares(16, 1), 30, 4)};
  TrainConfig tc;
  tc.max_iterations = 30;
  tc.eval_interval = 10;
  tc.learning_rate = 1e-3;
  tc.seed = 9;
  Rng a_rng(1), b_rng(1);
  const auto a = train(CompositeModel::initialize(cfg, a_rng), data, tc);
  const auto b = train(CompositeModel::initialize(cfg, b_rng), data, tc);
  bool same = a.history.size() == b.history.size() && a.model == b.model;
  for (std::size_t i = 0; same && i < a.history.size(); ++i)
    same = a.history[i].train_loss == b.history[i].train_loss &&
           a.history[i].val_loss == b.history[i].val_loss;
  if (!same) failed.push_back("training trajectory");

  fs::remove_all(dir);
  std::string detail = "checkpoint bit-exact, clip max error " + fmt("%.4f", worst) +
                       " (bound 1/255), repeated training identical";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient check", gradient_check}},
      {2, {"cell oracle", cell_oracle}},
      {3, {"overfit single clip", overfit}},
      {4, {"composite vs baseline prediction", composite_vs_baseline}},
      {5, {"persistence oracle", persistence_oracle}},
      {6, {"regularity invariants", regularity_invariants}},
      {7, {"synthetic anomaly benchmark", anomaly_benchmark}},
      {8, {"evaluation fixtures", evaluation_fixtures}},
      {9, {"round trips", round_trips}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [id, _] : criteria) selected.push_back(id);

  int failures = 0;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << it->second.first
              << "): " << o.detail << " [" << fmt("%.1f", secs) << " s]" << std::endl;
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
