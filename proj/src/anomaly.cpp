#include "convlstm/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "convlstm/errors.hpp"
#include "convlstm/kvfile.hpp"

namespace convlstm {

ErrorSource parse_error_source(const std::string& s) {
  if (s == "reconstruction") return ErrorSource::reconstruction;
  if (s == "prediction") return ErrorSource::prediction;
  if (s == "combined") return ErrorSource::combined;
  throw UsageError("error source must be reconstruction, prediction or combined, got '" + s + "'");
}

std::string to_string(ErrorSource s) {
  switch (s) {
    case ErrorSource::reconstruction: return "reconstruction";
    case ErrorSource::prediction: return "prediction";
    case ErrorSource::combined: return "combined";
  }
  return "?";
}

std::vector<double> sliding_errors(const CompositeModel& model, const VideoClip& clip,
                                   ErrorSource source, std::size_t threads) {
  const auto& cfg = model.config();
  const std::size_t span = cfg.input_len + cfg.output_len;
  if (clip.length() < span)
    throw DomainError("clip of " + std::to_string(clip.length()) + " frames is shorter than one " +
                      std::to_string(span) + "-frame window");
  if (source == ErrorSource::reconstruction && !cfg.composite)
    throw UsageError("the baseline model has no reconstruction output");
  if (clip.side() != cfg.frame_side)
    throw ConfigError("clip frames are " + std::to_string(clip.side()) + " px, model expects " +
                      std::to_string(cfg.frame_side));

  const std::size_t n = clip.length() - span + 1;
  std::vector<double> errors(n);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < n; i += stride) {
      auto r = forward_composite(model, clip.window(i, cfg.input_len),
                                 clip.window(i + cfg.input_len, cfg.output_len));
      switch (source) {
        case ErrorSource::reconstruction: errors[i] = r.reconstruction_loss; break;
        case ErrorSource::prediction: errors[i] = r.prediction_loss; break;
        case ErrorSource::combined: errors[i] = r.loss; break;
      }
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, n);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  for (double e : errors)
    if (!std::isfinite(e)) throw NumericError("non-finite window error");
  return errors;
}

std::vector<double> regularity(std::span<const double> errors) {
  if (errors.empty()) throw UsageError("regularity of an empty error series");
  for (double e : errors)
    if (!(e >= 0.0) || !std::isfinite(e)) throw UsageError("errors must be finite and non-negative");
  const auto [lo, hi] = std::minmax_element(errors.begin(), errors.end());
  const double emin = *lo, emax = *hi;
  std::vector<double> g(errors.size(), 1.0);
  if (emax == 0.0) return g;
  // 1 - (e - min)/max, arranged so that g == min/max at the largest error
  // and g == 1 at the smallest without rounding drift.
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (errors[i] != emin) g[i] = std::min(1.0, ((emax - errors[i]) + emin) / emax);
  return g;
}

std::vector<ExtremaPair> persistence1d(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n == 0) return {};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return series[a] < series[b]; });
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;

  constexpr std::size_t kUnset = SIZE_MAX;
  std::vector<std::size_t> parent(n, kUnset);
  std::vector<std::size_t> oldest_min(n, kUnset);  // valid at component roots
  auto find = [&](std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  };

  std::vector<ExtremaPair> pairs;
  auto pair_of = [&](std::size_t mn, std::size_t mx) {
    return ExtremaPair{mn, series[mn], mx, series[mx]};
  };
  for (std::size_t i : order) {
    const bool left = i > 0 && parent[i - 1] != kUnset;
    const bool right = i + 1 < n && parent[i + 1] != kUnset;
    parent[i] = i;
    if (!left && !right) {
      oldest_min[i] = i;
    } else if (left != right) {
      parent[i] = find(left ? i - 1 : i + 1);
    } else {
      const std::size_t a = find(i - 1), b = find(i + 1);
      const bool a_older = rank[oldest_min[a]] < rank[oldest_min[b]];
      const std::size_t survivor = a_older ? a : b, victim = a_older ? b : a;
      pairs.push_back(pair_of(oldest_min[victim], i));
      parent[victim] = survivor;
      parent[i] = survivor;
    }
  }
  pairs.push_back(pair_of(order.front(), order.back()));
  std::sort(pairs.begin(), pairs.end(),
            [](const ExtremaPair& a, const ExtremaPair& b) { return a.min_index < b.min_index; });
  return pairs;
}

Extrema filter_extrema(std::span<const ExtremaPair> pairs, double threshold) {
  if (!(threshold >= 0.0)) throw UsageError("threshold must be >= 0");
  Extrema out;
  if (pairs.empty()) return out;
  // The global pair has the lowest minimum (lowest index among equals).
  const auto global = std::min_element(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    return a.min_value < b.min_value || (a.min_value == b.min_value && a.min_index < b.min_index);
  });
  for (auto it = pairs.begin(); it != pairs.end(); ++it) {
    if (it != global && it->persistence() < threshold) continue;
    out.minima.push_back(it->min_index);
    out.maxima.push_back(it->max_index);
  }
  std::sort(out.minima.begin(), out.minima.end());
  std::sort(out.maxima.begin(), out.maxima.end());
  out.maxima.erase(std::unique(out.maxima.begin(), out.maxima.end()), out.maxima.end());
  return out;
}

std::vector<AnomalyRegion> propose_regions(std::span<const std::size_t> minima,
                                           std::span<const std::size_t> maxima,
                                           std::size_t series_length, RegionParams params) {
  if (series_length == 0) return {};
  std::vector<std::size_t> mins(minima.begin(), minima.end());
  std::sort(mins.begin(), mins.end());
  mins.erase(std::unique(mins.begin(), mins.end()), mins.end());
  for (auto t : mins)
    if (t >= series_length) throw UsageError("minimum index outside the series");
  for (auto m : maxima)
    if (m >= series_length) throw UsageError("maximum index outside the series");
  const std::size_t last_index = series_length - 1;

  // Events: chains of minima no further than merge_distance apart.
  std::vector<AnomalyRegion> events;
  for (auto t : mins) {
    if (!events.empty() && t - events.back().minima.back() <= params.merge_distance)
      events.back().minima.push_back(t);
    else
      events.push_back({0, 0, {t}});
  }
  for (auto& e : events) {
    const std::size_t first = e.minima.front(), last = e.minima.back();
    e.start = first > params.window ? first - params.window : 0;
    e.end = std::min(last_index, last + params.window);
  }

  for (std::size_t k = 0; k < events.size(); ++k) {
    auto& e = events[k];
    const std::size_t first = e.minima.front(), last = e.minima.back();
    // Maxima strictly inside an event never trim it; flanking maxima must lie
    // between this event and its neighbour.
    const bool has_prev = k > 0, has_next = k + 1 < events.size();
    for (auto m : maxima) {
      if (m > last && (!has_next || m < events[k + 1].minima.front()))
        e.end = std::min(e.end, (m + last) / 2);
      else if (m < first && (!has_prev || m > events[k - 1].minima.back()))
        e.start = std::max(e.start, (m + first) / 2);
    }
  }

  // Flanking windows of neighbouring events can still overlap or touch.
  std::vector<AnomalyRegion> out;
  for (auto& e : events) {
    if (!out.empty() && e.start <= out.back().end + 1) {
      out.back().end = std::max(out.back().end, e.end);
      out.back().minima.insert(out.back().minima.end(), e.minima.begin(), e.minima.end());
    } else {
      out.push_back(std::move(e));
    }
  }
  return out;
}

double DetectionReport::precision() const {
  const auto denom = true_positives + false_positives;
  return denom == 0 ? 1.0 : static_cast<double>(true_positives) / static_cast<double>(denom);
}

double DetectionReport::recall() const {
  const auto denom = true_positives + false_negatives;
  return denom == 0 ? 1.0 : static_cast<double>(true_positives) / static_cast<double>(denom);
}

double DetectionReport::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

DetectionReport evaluate(std::span<const Interval> proposals, std::span<const Interval> ground_truth,
                         double overlap) {
  if (!(overlap > 0.0 && overlap <= 1.0)) throw UsageError("overlap must lie in (0, 1]");
  for (const auto& iv : proposals)
    if (iv.start > iv.end) throw UsageError("proposal with start > end");
  for (const auto& iv : ground_truth)
    if (iv.start > iv.end) throw UsageError("ground-truth interval with start > end");

  DetectionReport report;
  std::vector<bool> gt_hit(ground_truth.size(), false);
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    const auto& prop = proposals[p];
    bool matched = false;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const auto& gt = ground_truth[g];
      const std::size_t lo = std::max(prop.start, gt.start), hi = std::min(prop.end, gt.end);
      if (lo > hi) continue;
      const double frac = static_cast<double>(hi - lo + 1) / static_cast<double>(prop.length());
      if (frac >= overlap) {
        matched = true;
        gt_hit[g] = true;
        report.matches.push_back({p, g});
      }
    }
    if (!matched) ++report.false_positives;
  }
  for (bool hit : gt_hit) {
    if (hit) ++report.true_positives;
    else ++report.false_negatives;
  }
  return report;
}

DetectionReport combine(std::span<const DetectionReport> reports) {
  DetectionReport out;
  for (const auto& r : reports) {
    out.true_positives += r.true_positives;
    out.false_positives += r.false_positives;
    out.false_negatives += r.false_negatives;
  }
  return out;
}

std::vector<Interval> ground_truth_windows(std::span<const Interval> frames, std::size_t span,
                                           std::size_t series_length) {
  if (span == 0) throw UsageError("window span must be >= 1");
  std::vector<Interval> out;
  for (const auto& iv : frames) {
    const std::size_t start = iv.start + 1 > span ? iv.start + 1 - span : 0;
    if (series_length == 0 || start > series_length - 1) continue;
    out.push_back({start, std::min(iv.end, series_length - 1)});
  }
  return normalize_intervals(std::move(out));
}

std::vector<Interval> detect(std::span<const double> regularity_series, double threshold,
                             RegionParams params) {
  auto pairs = persistence1d(regularity_series);
  auto ext = filter_extrema(pairs, threshold);
  std::vector<Interval> out;
  for (const auto& r : propose_regions(ext.minima, ext.maxima, regularity_series.size(), params))
    out.push_back(r.interval());
  return out;
}

std::vector<double> sweep_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 20; ++k) t.push_back(k / 20.0);
  return t;
}

std::vector<SweepRow> threshold_sweep(std::span<const ClipScores> clips, RegionParams params,
                                      double overlap) {
  std::vector<SweepRow> rows;
  for (double t : sweep_thresholds()) {
    std::vector<DetectionReport> per_clip;
    for (const auto& c : clips)
      per_clip.push_back(evaluate(detect(c.regularity, t, params), c.ground_truth, overlap));
    rows.push_back({t, combine(per_clip)});
  }
  return rows;
}

const SweepRow& best_f1(std::span<const SweepRow> rows) {
  if (rows.empty()) throw UsageError("best_f1 of an empty sweep");
  const SweepRow* best = &rows[0];
  for (const auto& r : rows)
    if (r.report.f1() > best->report.f1()) best = &r;
  return *best;
}

// ---- files ----

void write_regularity_csv(const std::filesystem::path& path, std::span<const double> errors,
                          std::span<const double> regularity) {
  if (errors.size() != regularity.size()) throw UsageError("error/regularity length mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "window_start,error,regularity\n";
  for (std::size_t i = 0; i < errors.size(); ++i)
    out << i << ',' << format_real(errors[i]) << ',' << format_real(regularity[i]) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<RegularityRow> read_regularity_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.substr(0, line.find_last_not_of("\r") + 1) !=
                                     "window_start,error,regularity")
    throw DataError(path.string() + ": missing `window_start,error,regularity` header");
  std::vector<RegularityRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    auto c1 = line.find(','), c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
      throw DataError(where + ": expected three comma-separated fields");
    try {
      RegularityRow r{parse_count("window_start", line.substr(0, c1)),
                      parse_real("error", line.substr(c1 + 1, c2 - c1 - 1)),
                      parse_real("regularity", line.substr(c2 + 1))};
      if (r.window_start != rows.size())
        throw DataError(where + ": window_start must count up from 0");
      rows.push_back(r);
    } catch (const ConfigError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (rows.empty()) throw DataError(path.string() + ": no rows");
  return rows;
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

std::string format_report(const DetectionReport& r) {
  std::ostringstream os;
  os << "true_positives " << r.true_positives << '\n'
     << "false_positives " << r.false_positives << '\n'
     << "false_negatives " << r.false_negatives << '\n'
     << "precision " << fixed(r.precision(), 4) << '\n'
     << "recall " << fixed(r.recall(), 4) << '\n';
  return os.str();
}

std::string format_sweep(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "threshold TP FP FN precision recall f1\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    os << fixed(row.threshold, 2) << ' ' << r.true_positives << ' ' << r.false_positives << ' '
       << r.false_negatives << ' ' << fixed(r.precision(), 4) << ' ' << fixed(r.recall(), 4) << ' '
       << fixed(r.f1(), 4) << '\n';
  }
  return os.str();
}

}  // namespace convlstm
