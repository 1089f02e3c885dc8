#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "convlstm/errors.hpp"
#include "convlstm/video.hpp"

namespace fs = std::filesystem;

namespace convlstm {

std::vector<Interval> normalize_intervals(std::vector<Interval> intervals) {
  for (const auto& iv : intervals)
    if (iv.start > iv.end)
      throw UsageError("interval start " + std::to_string(iv.start) + " > end " +
                       std::to_string(iv.end));
  std::sort(intervals.begin(), intervals.end(),
            [](const Interval& a, const Interval& b) { return a.start < b.start; });
  std::vector<Interval> out;
  for (const auto& iv : intervals) {
    if (!out.empty() && iv.start <= out.back().end + 1)
      out.back().end = std::max(out.back().end, iv.end);
    else
      out.push_back(iv);
  }
  return out;
}

Tensor VideoClip::window(std::size_t start, std::size_t count) const {
  if (count == 0 || start + count > frames.size())
    throw DomainError("window [" + std::to_string(start) + ", " + std::to_string(start + count) +
                      ") exceeds clip of " + std::to_string(frames.size()) + " frames");
  return stack(std::span<const Tensor>(frames).subspan(start, count));
}

void VideoClip::validate() const {
  if (frames.empty()) throw DomainError("clip has no frames");
  const Shape& s = frames.front().shape();
  if (s.size() != 3 || s[0] != 1 || s[1] != s[2])
    throw DataError("frames must be square [1,S,S], got " + shape_string(s));
  for (const auto& f : frames)
    if (f.shape() != s) throw DataError("inconsistent frame sizes in clip");
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    const auto& iv = ground_truth[i];
    if (iv.start > iv.end || iv.end >= frames.size())
      throw DataError("ground-truth interval [" + std::to_string(iv.start) + ", " +
                      std::to_string(iv.end) + "] outside clip of " +
                      std::to_string(frames.size()) + " frames");
    if (i > 0 && iv.start <= ground_truth[i - 1].end)
      throw DataError("ground-truth intervals overlap or are unsorted");
  }
}

// ---- PGM ----

namespace {

// Reads one header token, skipping whitespace and # comments.
std::string pgm_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw DataError(path.string() + ": truncated PGM header");
  return tok;
}

std::size_t pgm_number(std::istream& in, const fs::path& path, const char* what) {
  auto tok = pgm_token(in, path);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit) || tok.size() > 9)
    throw DataError(path.string() + ": malformed PGM " + what + " '" + tok + "'");
  return std::stoul(tok);
}

}  // namespace

Tensor read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (pgm_token(in, path) != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  const std::size_t w = pgm_number(in, path, "width");
  const std::size_t h = pgm_number(in, path, "height");
  const std::size_t maxval = pgm_number(in, path, "maxval");
  if (w == 0 || h == 0) throw DataError(path.string() + ": zero image size");
  if (maxval == 0 || maxval > 65535) throw DataError(path.string() + ": bad maxval");
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * bpp);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw DataError(path.string() + ": truncated pixel data");
  Tensor out({1, h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    const std::size_t v = bpp == 1 ? raw[i] : (std::size_t{raw[2 * i]} << 8) | raw[2 * i + 1];
    if (v > maxval) throw DataError(path.string() + ": pixel exceeds maxval");
    out[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return out;
}

void write_pgm(const Tensor& frame, const fs::path& path) {
  if (frame.rank() != 3 || frame.dim(0) != 1)
    throw UsageError("write_pgm expects a [1,H,W] frame, got " + shape_string(frame.shape()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << frame.dim(2) << " " << frame.dim(1) << "\n255\n";
  std::string raw(frame.size(), '\0');
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double v = std::clamp(frame[i], 0.0, 1.0);
    raw[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<Interval> read_intervals(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Interval> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    long long a = -1, b = -1;
    std::string extra;
    if (!(ls >> a >> b) || (ls >> extra) || a < 0 || b < a)
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected `start end` with 0 <= start <= end");
    out.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b)});
  }
  return out;
}

void write_intervals(const std::vector<Interval>& intervals, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& iv : intervals) out << iv.start << ' ' << iv.end << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::string frame_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu.pgm", index);
  return buf;
}

namespace {

std::map<std::size_t, fs::path> frame_files(const fs::path& dir) {
  static const std::regex pattern(R"(frame_(\d{6,})\.pgm)");
  std::map<std::size_t, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern))
      files.emplace(std::stoull(m[1].str()), entry.path());
  }
  return files;
}

}  // namespace

VideoClip load_clip(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  auto files = frame_files(dir);
  if (files.empty()) throw DataError(dir.string() + ": no frame_NNNNNN.pgm files");
  VideoClip clip;
  std::size_t expected = 0;
  for (const auto& [index, path] : files) {
    if (index != expected)
      throw DataError((dir / frame_filename(expected)).string() + ": missing frame");
    Tensor frame = read_pgm(path);
    if (frame.dim(1) != frame.dim(2))
      throw DataError(path.string() + ": frames must be square, got " + shape_string(frame.shape()));
    if (!clip.frames.empty() && frame.shape() != clip.frames.front().shape())
      throw DataError(path.string() + ": size " + shape_string(frame.shape()) +
                      " differs from first frame " + shape_string(clip.frames.front().shape()));
    clip.frames.push_back(std::move(frame));
    ++expected;
  }
  if (fs::exists(dir / "ground_truth.txt")) {
    auto gt = read_intervals(dir / "ground_truth.txt");
    for (const auto& iv : gt)
      if (iv.end >= clip.length())
        throw DataError((dir / "ground_truth.txt").string() + ": interval ends past frame " +
                        std::to_string(clip.length() - 1));
    clip.ground_truth = normalize_intervals(std::move(gt));
  }
  return clip;
}

void save_clip(const VideoClip& clip, const fs::path& dir) {
  clip.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
  for (const auto& [index, path] : frame_files(dir)) fs::remove(path);
  for (std::size_t i = 0; i < clip.frames.size(); ++i)
    write_pgm(clip.frames[i], dir / frame_filename(i));
  write_intervals(clip.ground_truth, dir / "ground_truth.txt");
}

std::vector<VideoClip> load_clips(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  if (!frame_files(dir).empty()) return {load_clip(dir)};
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw DataError(dir.string() + ": no frames and no clip subdirectories");
  std::vector<VideoClip> clips;
  for (const auto& d : subdirs) clips.push_back(load_clip(d));
  return clips;
}

Tensor resize_grayscale(const Tensor& frame, std::size_t side) {
  if (frame.rank() != 3 || frame.dim(0) != 1)
    throw UsageError("resize_grayscale expects a [1,H,W] frame");
  if (side == 0) throw UsageError("resize_grayscale: target side must be >= 1");
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  Tensor out({1, side, side});
  auto sample = [](std::size_t dst, std::size_t dst_n, std::size_t src_n, std::size_t& i0,
                   std::size_t& i1, double& t) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_n) /
                   static_cast<double>(dst_n) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, src_n - 1);
    t = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < side; ++y) {
    std::size_t y0, y1;
    double ty;
    sample(y, side, h, y0, y1, ty);
    for (std::size_t x = 0; x < side; ++x) {
      std::size_t x0, x1;
      double tx;
      sample(x, side, w, x0, x1, tx);
      const double top = frame.at(0, y0, x0) * (1 - tx) + frame.at(0, y0, x1) * tx;
      const double bot = frame.at(0, y1, x0) * (1 - tx) + frame.at(0, y1, x1) * tx;
      out.at(0, y, x) = std::clamp(top * (1 - ty) + bot * ty, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace convlstm
