#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "convlstm/network.hpp"
#include "convlstm/video.hpp"

namespace convlstm {

enum class ErrorSource { reconstruction, prediction, combined };

ErrorSource parse_error_source(const std::string& s);
std::string to_string(ErrorSource s);

// Per-window MSE. Entry i scores the window whose input starts at frame i:
// inputs [i, i+T_in), targets [i+T_in, i+T_in+T_out). The series has
// clip_length - (T_in + T_out) + 1 entries. Windows are independent, so
// `threads` > 1 splits them across workers without changing the result.
std::vector<double> sliding_errors(const CompositeModel& model, const VideoClip& clip,
                                   ErrorSource source, std::size_t threads = 1);

// g_i = 1 - (e_i - min e) / max e, computed per clip. All ones when max e = 0.
std::vector<double> regularity(std::span<const double> errors);

// A minimum and the maximum at which its sublevel component merged into one
// holding a lower minimum. The global minimum pairs with the global maximum.
struct ExtremaPair {
  std::size_t min_index = 0;
  double min_value = 0.0;
  std::size_t max_index = 0;
  double max_value = 0.0;

  double persistence() const { return max_value - min_value; }
  friend bool operator==(const ExtremaPair&, const ExtremaPair&) = default;
};

// 0-dimensional sublevel-set persistence of a sequence. Values are ordered by
// (value, index), so plateaus resolve toward the lower index. Pairs are
// returned sorted by min_index.
std::vector<ExtremaPair> persistence1d(std::span<const double> series);

struct Extrema {
  std::vector<std::size_t> minima;
  std::vector<std::size_t> maxima;
};

// Keeps pairs with persistence >= threshold; the global-minimum pair is always
// kept. Both index lists come back sorted ascending.
Extrema filter_extrema(std::span<const ExtremaPair> pairs, double threshold);

struct AnomalyRegion {
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<std::size_t> minima;

  Interval interval() const { return {start, end}; }
  friend bool operator==(const AnomalyRegion&, const AnomalyRegion&) = default;
};

struct RegionParams {
  std::size_t window = 50;
  std::size_t merge_distance = 50;
};

// Each minimum proposes [t - window, t + window]; minima no further than
// merge_distance apart form one event whose proposals merge. A retained
// maximum flanking an event pulls the near border to the midpoint between it
// and the event's nearest minimum, except when it lies between two minima of
// the same event. Regions come back disjoint, sorted and clamped to
// [0, series_length - 1].
std::vector<AnomalyRegion> propose_regions(std::span<const std::size_t> minima,
                                           std::span<const std::size_t> maxima,
                                           std::size_t series_length, RegionParams params = {});

struct MatchedPair {
  std::size_t proposal = 0;
  std::size_t ground_truth = 0;
};

struct DetectionReport {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::vector<MatchedPair> matches;

  double precision() const;
  double recall() const;
  double f1() const;
};

// A proposal detects a ground-truth interval when |proposal ∩ gt| / |proposal|
// >= overlap. Each ground-truth interval yields at most one true positive.
DetectionReport evaluate(std::span<const Interval> proposals, std::span<const Interval> ground_truth,
                         double overlap = 0.5);

// Sums counts across clips (matches are dropped).
DetectionReport combine(std::span<const DetectionReport> reports);

// Maps frame-level ground truth onto window-start indices: a window starting
// at i covers frames [i, i + span) and is anomalous if it touches an interval.
// Intervals that no window touches are dropped.
std::vector<Interval> ground_truth_windows(std::span<const Interval> frames, std::size_t span,
                                           std::size_t series_length);

std::vector<Interval> detect(std::span<const double> regularity_series, double threshold,
                             RegionParams params = {});

struct ClipScores {
  std::vector<double> regularity;
  std::vector<Interval> ground_truth;  // window-start indices
};

struct SweepRow {
  double threshold = 0.0;
  DetectionReport report;
};

// Thresholds 0.05, 0.10, ..., 1.00.
std::vector<double> sweep_thresholds();
std::vector<SweepRow> threshold_sweep(std::span<const ClipScores> clips, RegionParams params = {},
                                      double overlap = 0.5);
// Highest F1; ties go to the lower threshold.
const SweepRow& best_f1(std::span<const SweepRow> rows);

// ---- files ----

struct RegularityRow {
  std::size_t window_start = 0;
  double error = 0.0;
  double regularity = 0.0;
};

void write_regularity_csv(const std::filesystem::path& path, std::span<const double> errors,
                          std::span<const double> regularity);
std::vector<RegularityRow> read_regularity_csv(const std::filesystem::path& path);

std::string format_report(const DetectionReport& report);
std::string format_sweep(std::span<const SweepRow> rows);

}  // namespace convlstm
