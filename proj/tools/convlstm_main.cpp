// convlstm: data generation, training, scoring and anomaly evaluation.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 data error,
// 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "convlstm/anomaly.hpp"
#include "convlstm/checkpoint.hpp"
#include "convlstm/errors.hpp"
#include "convlstm/synth.hpp"
#include "convlstm/training.hpp"

namespace fs = std::filesystem;
using namespace convlstm;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string threshold_tag(double t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

// ---- gen-data ----

struct GenArgs {
  std::string spec, out;
  std::size_t length = 0;
  std::uint64_t seed = 0;
};

void run_gen(const GenArgs& a) {
  if (a.length < 1) throw UsageError("--length must be >= 1");
  const auto spec = SceneSpec::from_file(a.spec);
  const auto clip = generate(spec, a.length, a.seed);
  ensure_dir(a.out);
  save_clip(clip, a.out);
  std::cout << "wrote " << clip.length() << " frames (" << clip.side() << "x" << clip.side()
            << ", " << clip.ground_truth.size() << " anomaly intervals) to " << a.out << "\n";
}

// ---- train ----

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::size_t> max_iterations, threads;
  std::optional<std::uint64_t> seed;
};

void run_train(const TrainArgs& a) {
  NetworkConfig net;
  TrainConfig tc;
  for (const auto& [k, v] : read_key_value_file(a.config))
    if (!net.set(k, v) && !tc.set(k, v))
      throw ConfigError(a.config + ": unknown key '" + k + "'");
  if (a.max_iterations) tc.max_iterations = *a.max_iterations;
  if (a.threads) tc.threads = *a.threads;
  if (a.seed) tc.seed = *a.seed;
  net.validate();
  tc.validate();

  const auto clips = load_clips(a.data);
  Rng init_rng = Rng(tc.seed).split("init");
  const auto initial = CompositeModel::initialize(net, init_rng);
  const auto result = train(initial, clips, tc);

  ensure_dir(a.out);
  save_checkpoint(result.model, fs::path(a.out) / "checkpoint.ckpt");
  write_loss_history(fs::path(a.out) / "loss_history.csv", result.history);

  std::optional<double> last_train;
  for (const auto& r : result.history)
    if (r.train_loss) last_train = r.train_loss;
  std::cout << "iterations " << result.iterations_run
            << (result.early_stopped ? " (early stop)" : "") << "\n";
  std::cout << "final train loss " << (last_train ? format_real(*last_train) : "n/a") << "\n";
  std::cout << "best val loss " << format_real(result.best_val_loss) << " at iteration "
            << result.best_iteration << "\n";
}

// ---- score ----

struct ScoreArgs {
  std::string checkpoint, data, out, error_source = "combined";
  std::size_t threads = 1;
};

void run_score(const ScoreArgs& a) {
  const auto model = load_checkpoint(a.checkpoint);
  const auto clip = load_clip(a.data);
  const auto errors = sliding_errors(model, clip, parse_error_source(a.error_source), a.threads);
  const auto g = regularity(errors);
  ensure_dir(a.out);
  write_regularity_csv(fs::path(a.out) / "regularity.csv", errors, g);
  const auto lowest = std::min_element(g.begin(), g.end()) - g.begin();
  std::cout << "scored " << errors.size() << " windows; lowest regularity "
            << format_real(g[static_cast<std::size_t>(lowest)]) << " at window " << lowest << "\n";
}

// ---- detect ----

struct DetectArgs {
  std::string scores, out;
  std::optional<double> threshold;
  bool sweep = false;
  RegionParams params;
};

void run_detect(const DetectArgs& a) {
  if (a.sweep == a.threshold.has_value())
    throw UsageError("detect needs exactly one of --threshold or --sweep");
  const auto rows = read_regularity_csv(a.scores);
  std::vector<double> g;
  for (const auto& r : rows) g.push_back(r.regularity);
  ensure_dir(a.out);
  if (a.threshold) {
    const auto regions = detect(g, *a.threshold, a.params);
    write_intervals(regions, fs::path(a.out) / "detections.txt");
    std::cout << regions.size() << " regions at threshold " << format_real(*a.threshold) << "\n";
    return;
  }
  for (double t : sweep_thresholds()) {
    const auto regions = detect(g, t, a.params);
    write_intervals(regions, fs::path(a.out) / ("detections_" + threshold_tag(t) + ".txt"));
    std::cout << threshold_tag(t) << " " << regions.size() << " regions\n";
  }
}

// ---- eval ----

struct EvalArgs {
  std::string detections, sweep_dir, ground_truth, scores, out;
  double overlap = 0.5;
  std::size_t span = 0;
  std::optional<std::size_t> series_length;
};

std::vector<Interval> eval_ground_truth(const EvalArgs& a) {
  auto gt = read_intervals(a.ground_truth);
  if (a.span == 0) return gt;
  std::size_t length = 0;
  if (a.series_length) length = *a.series_length;
  else if (!a.scores.empty()) length = read_regularity_csv(a.scores).size();
  else throw UsageError("--span needs --series-length or --scores");
  return ground_truth_windows(gt, a.span, length);
}

void run_eval(const EvalArgs& a) {
  if (a.detections.empty() == a.sweep_dir.empty())
    throw UsageError("eval needs exactly one of --detections or --sweep-dir");
  const auto gt = eval_ground_truth(a);
  std::string text;
  if (!a.detections.empty()) {
    const auto report = evaluate(read_intervals(a.detections), gt, a.overlap);
    text = format_report(report);
  } else {
    static const std::regex name(R"(detections_(\d+\.\d+)\.txt)");
    std::vector<SweepRow> rows;
    for (const auto& entry : fs::directory_iterator(a.sweep_dir)) {
      std::smatch m;
      const auto fname = entry.path().filename().string();
      if (!std::regex_match(fname, m, name)) continue;
      rows.push_back({parse_real("threshold", m[1].str()),
                      evaluate(read_intervals(entry.path()), gt, a.overlap)});
    }
    if (rows.empty()) throw DataError("no detections_*.txt files in " + a.sweep_dir);
    std::sort(rows.begin(), rows.end(),
              [](const SweepRow& x, const SweepRow& y) { return x.threshold < y.threshold; });
    const auto& best = best_f1(rows);
    text = "best threshold " + threshold_tag(best.threshold) + "\n" + format_report(best.report) +
           "\n" + format_sweep(rows);
  }
  ensure_dir(a.out);
  write_text(fs::path(a.out) / "report.txt", text);
  std::cout << text;
}

// ---- predict-dump ----

struct DumpArgs {
  std::string checkpoint, data, out;
  std::size_t start = 0;
};

void run_dump(const DumpArgs& a) {
  const auto model = load_checkpoint(a.checkpoint);
  const auto& cfg = model.config();
  const auto clip = load_clip(a.data);
  const std::size_t span = cfg.input_len + cfg.output_len;
  if (a.start + span > clip.length())
    throw DomainError("window [" + std::to_string(a.start) + ", " +
                      std::to_string(a.start + span) + ") exceeds the clip length " +
                      std::to_string(clip.length()));
  const auto input = clip.window(a.start, cfg.input_len);
  const auto future = clip.window(a.start + cfg.input_len, cfg.output_len);
  const auto result = forward_composite(model, input, future);
  ensure_dir(a.out);

  auto name = [](const char* role, std::size_t t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_t%02zu.pgm", role, t);
    return std::string(buf);
  };
  std::size_t written = 0;
  for (std::size_t t = 0; t < span; ++t) {
    write_pgm(clip.frames[a.start + t], fs::path(a.out) / name("truth", t));
    ++written;
  }
  if (cfg.composite)
    for (std::size_t t = 0; t < cfg.input_len; ++t) {
      write_pgm(result.reconstruction.slice(t), fs::path(a.out) / name("recon", t));
      ++written;
    }
  for (std::size_t t = 0; t < cfg.output_len; ++t) {
    write_pgm(result.prediction.slice(t), fs::path(a.out) / name("pred", cfg.input_len + t));
    ++written;
  }
  std::cout << "wrote " << written << " frames to " << a.out << "; window loss "
            << format_real(result.loss) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conv-LSTM video prediction and anomaly detection"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "render a synthetic clip from a scene spec");
  g->add_option("--spec", gen.spec, "scene spec file")->required()->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "output clip directory")->required();
  g->add_option("--length", gen.length, "number of frames")->required();
  g->add_option("--seed", gen.seed, "random seed")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on a clip or a directory of clips");
  t->add_option("--config", tr.config, "network/training config")->required()->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "clip directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--max-iterations", tr.max_iterations, "override max_iterations");
  t->add_option("--seed", tr.seed, "override seed");
  t->add_option("--threads", tr.threads, "override threads");

  ScoreArgs sc;
  auto* s = app.add_subcommand("score", "compute per-window errors and regularity for one clip");
  s->add_option("--checkpoint", sc.checkpoint)->required()->check(CLI::ExistingFile);
  s->add_option("--data", sc.data, "clip directory")->required()->check(CLI::ExistingDirectory);
  s->add_option("--out", sc.out, "output directory")->required();
  s->add_option("--error-source", sc.error_source, "reconstruction, prediction or combined")
      ->check(CLI::IsMember({"reconstruction", "prediction", "combined"}));
  s->add_option("--threads", sc.threads, "worker threads")->check(CLI::PositiveNumber);

  DetectArgs de;
  auto* d = app.add_subcommand("detect", "propose anomalous regions from regularity.csv");
  d->add_option("--scores", de.scores, "regularity.csv")->required()->check(CLI::ExistingFile);
  d->add_option("--out", de.out, "output directory")->required();
  d->add_option("--threshold", de.threshold, "persistence threshold");
  d->add_flag("--sweep", de.sweep, "write detections for thresholds 0.05 ... 1.00");
  d->add_option("--window", de.params.window, "frames before/after each minimum");
  d->add_option("--merge-distance", de.params.merge_distance, "minima closer than this merge");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score detections against ground truth");
  e->add_option("--detections", ev.detections, "detections file")->check(CLI::ExistingFile);
  e->add_option("--sweep-dir", ev.sweep_dir, "directory of detections_<T>.txt files")
      ->check(CLI::ExistingDirectory);
  e->add_option("--ground-truth", ev.ground_truth, "ground truth intervals")->required()->check(CLI::ExistingFile);
  e->add_option("--overlap", ev.overlap, "minimum covered fraction of a proposal");
  e->add_option("--span", ev.span,
                "input_len + output_len; maps frame-level ground truth to window starts (0: no mapping)");
  e->add_option("--series-length", ev.series_length, "number of scored windows");
  e->add_option("--scores", ev.scores, "regularity.csv, used for the series length")->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "output directory")->required();

  DumpArgs du;
  auto* p = app.add_subcommand("predict-dump", "write truth, reconstruction and prediction frames");
  p->add_option("--checkpoint", du.checkpoint)->required()->check(CLI::ExistingFile);
  p->add_option("--data", du.data, "clip directory")->required()->check(CLI::ExistingDirectory);
  p->add_option("--start", du.start, "first input frame")->required();
  p->add_option("--out", du.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*g) run_gen(gen);
    else if (*t) run_train(tr);
    else if (*s) run_score(sc);
    else if (*d) run_detect(de);
    else if (*e) run_eval(ev);
    else if (*p) run_dump(du);
    return 0;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
}
