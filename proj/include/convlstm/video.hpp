#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "convlstm/tensor.hpp"

namespace convlstm {

// Closed frame (or window) interval [start, end].
struct Interval {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Sorts and merges overlapping or touching intervals.
std::vector<Interval> normalize_intervals(std::vector<Interval> intervals);

// Grayscale frames [1,S,S] with values in [0,1] plus optional anomaly labels.
struct VideoClip {
  std::vector<Tensor> frames;
  std::vector<Interval> ground_truth;

  std::size_t length() const { return frames.size(); }
  std::size_t side() const { return frames.empty() ? 0 : frames.front().dim(1); }
  // Frames [start, start+count) stacked to [count,1,S,S].
  Tensor window(std::size_t start, std::size_t count) const;
  void validate() const;
};

// ---- PGM frame sequences ----
//
// A clip directory holds frame_000000.pgm, frame_000001.pgm, ... (binary P5,
// maxval 255) and optionally ground_truth.txt with one `start end` pair per
// line (inclusive, 0-indexed frame numbers).

Tensor read_pgm(const std::filesystem::path& path);
// Values are clamped to [0,1] and quantized to 8 bits.
void write_pgm(const Tensor& frame, const std::filesystem::path& path);

std::vector<Interval> read_intervals(const std::filesystem::path& path);
void write_intervals(const std::vector<Interval>& intervals, const std::filesystem::path& path);

VideoClip load_clip(const std::filesystem::path& dir);
// Removes stale frame_*.pgm files in `dir` before writing.
void save_clip(const VideoClip& clip, const std::filesystem::path& dir);

// A data directory is either one clip or a directory of clip subdirectories.
std::vector<VideoClip> load_clips(const std::filesystem::path& dir);

std::string frame_filename(std::size_t index);

// Bilinear resampling (pixel-center aligned) of a [1,H,W] frame to [1,S,S].
Tensor resize_grayscale(const Tensor& frame, std::size_t side);

}  // namespace convlstm
