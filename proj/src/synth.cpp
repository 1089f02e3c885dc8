#include "convlstm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "convlstm/errors.hpp"
#include "convlstm/rng.hpp"

namespace convlstm {
namespace {

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::square: return "square";
    case ShapeKind::disc: return "disc";
    case ShapeKind::cross: return "cross";
  }
  return "?";
}

ShapeKind parse_shape(const std::string& key, const std::string& v) {
  if (v == "square") return ShapeKind::square;
  if (v == "disc") return ShapeKind::disc;
  if (v == "cross") return ShapeKind::cross;
  throw ConfigError(key + ": unknown shape '" + v + "' (square, disc, cross)");
}

const char* anomaly_name(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::speed_up: return "speed_up";
    case AnomalyKind::wrong_direction: return "wrong_direction";
    case AnomalyKind::intrusion: return "intrusion";
  }
  return "?";
}

AnomalyKind parse_anomaly(const std::string& key, const std::string& v) {
  if (v == "speed_up") return AnomalyKind::speed_up;
  if (v == "wrong_direction") return AnomalyKind::wrong_direction;
  if (v == "intrusion") return AnomalyKind::intrusion;
  throw ConfigError(key + ": unknown anomaly kind '" + v + "'");
}

bool set_object_field(ObjectSpec& o, const std::string& field, const std::string& key,
                      const std::string& v) {
  if (field == "shape") o.shape = parse_shape(key, v);
  else if (field == "size") o.size = parse_count(key, v);
  else if (field == "x") o.x = parse_real(key, v);
  else if (field == "y") o.y = parse_real(key, v);
  else if (field == "vx") o.vx = parse_real(key, v);
  else if (field == "vy") o.vy = parse_real(key, v);
  else if (field == "speed") o.speed = parse_real(key, v);
  else if (field == "intensity") o.intensity = parse_real(key, v);
  else return false;
  return true;
}

void object_key_values(const ObjectSpec& o, const std::string& prefix, KeyValueList& out) {
  out.emplace_back(prefix + "shape", shape_name(o.shape));
  out.emplace_back(prefix + "size", std::to_string(o.size));
  if (o.x) out.emplace_back(prefix + "x", format_real(*o.x));
  if (o.y) out.emplace_back(prefix + "y", format_real(*o.y));
  if (o.vx) out.emplace_back(prefix + "vx", format_real(*o.vx));
  if (o.vy) out.emplace_back(prefix + "vy", format_real(*o.vy));
  out.emplace_back(prefix + "speed", format_real(o.speed));
  out.emplace_back(prefix + "intensity", format_real(o.intensity));
}

void validate_object(const ObjectSpec& o, std::size_t side, const std::string& what) {
  if (o.size == 0) throw ConfigError(what + ": size must be positive");
  if (o.size > side)
    throw ConfigError(what + ": size " + std::to_string(o.size) + " exceeds frame side " +
                      std::to_string(side));
  const double room = static_cast<double>(side - o.size);
  for (auto c : {o.x, o.y})
    if (c && (*c < 0 || *c > room))
      throw ConfigError(what + ": spawn position must lie in [0, " + format_real(room) + "]");
  if (o.vx.has_value() != o.vy.has_value())
    throw ConfigError(what + ": give both vx and vy or neither");
  if (!o.vx && o.speed < 0) throw ConfigError(what + ": speed must be >= 0");
  if (o.intensity < 0 || o.intensity > 1) throw ConfigError(what + ": intensity must be in [0,1]");
}

// Splits "objects.3.size" into (3, "size").
bool split_indexed(const std::string& key, const std::string& prefix, std::size_t& index,
                   std::string& field) {
  if (key.rfind(prefix, 0) != 0) return false;
  auto rest = key.substr(prefix.size());
  auto dot = rest.find('.');
  if (dot == std::string::npos || dot == 0) throw ConfigError("malformed key: " + key);
  index = parse_count(key, rest.substr(0, dot));
  field = rest.substr(dot + 1);
  return true;
}

struct Body {
  ObjectSpec spec;
  double x = 0, y = 0, vx = 0, vy = 0;
  // Frames in which the body exists (intruders only live in their interval).
  std::size_t first = 0, last = SIZE_MAX;
};

Body spawn(const ObjectSpec& o, std::size_t side, Rng rng) {
  Body b;
  b.spec = o;
  const double room = static_cast<double>(side - o.size);
  b.x = o.x ? *o.x : std::floor(rng.uniform(0.0, room + 1.0));
  b.y = o.y ? *o.y : std::floor(rng.uniform(0.0, room + 1.0));
  if (o.vx) {
    b.vx = *o.vx;
    b.vy = *o.vy;
  } else {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    b.vx = o.speed * std::cos(angle);
    b.vy = o.speed * std::sin(angle);
  }
  return b;
}

// Moves one coordinate by `step` and reflects (or wraps) into [0, room].
void advance(double& pos, double& vel, double step, double room, bool bounce) {
  pos += step;
  if (!bounce) {
    const double period = room + 1.0;
    pos = std::fmod(pos, period);
    if (pos < 0) pos += period;
    return;
  }
  if (room <= 0) {
    pos = 0;
    return;
  }
  while (pos < 0 || pos > room) {
    if (pos < 0) pos = -pos;
    else pos = 2.0 * room - pos;
    vel = -vel;
  }
}

// Sub-pixel positions are rendered by bilinear splatting of the shape mask,
// which keeps the total intensity of a shape independent of its position.
void render(const Body& b, std::size_t side, Tensor& frame) {
  const auto s = static_cast<std::ptrdiff_t>(b.spec.size);
  const double fx0 = std::floor(b.x), fy0 = std::floor(b.y);
  const double fx = b.x - fx0, fy = b.y - fy0;
  const auto x0 = static_cast<std::ptrdiff_t>(fx0);
  const auto y0 = static_cast<std::ptrdiff_t>(fy0);
  const double r = static_cast<double>(s) / 2.0;
  const double c = (static_cast<double>(s) - 1.0) / 2.0;
  const std::ptrdiff_t thick = std::max<std::ptrdiff_t>(1, s / 3);
  const std::ptrdiff_t lo = (s - thick) / 2;
  const auto n = static_cast<std::ptrdiff_t>(side);
  const double weights[2][2] = {{(1 - fx) * (1 - fy), fx * (1 - fy)}, {(1 - fx) * fy, fx * fy}};
  for (std::ptrdiff_t dy = 0; dy < s; ++dy) {
    for (std::ptrdiff_t dx = 0; dx < s; ++dx) {
      bool inside = true;
      if (b.spec.shape == ShapeKind::disc) {
        const double ex = static_cast<double>(dx) - c, ey = static_cast<double>(dy) - c;
        inside = ex * ex + ey * ey <= r * r;
      } else if (b.spec.shape == ShapeKind::cross) {
        inside = (dx >= lo && dx < lo + thick) || (dy >= lo && dy < lo + thick);
      }
      if (!inside) continue;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double w = weights[sy][sx];
          if (w == 0.0) continue;
          // Wrapped bodies may straddle the border.
          const std::ptrdiff_t px = ((x0 + dx + sx) % n + n) % n;
          const std::ptrdiff_t py = ((y0 + dy + sy) % n + n) % n;
          double& v = frame.at(0, static_cast<std::size_t>(py), static_cast<std::size_t>(px));
          v = std::min(1.0, v + b.spec.intensity * w);
        }
      }
    }
  }
}

}  // namespace

void SceneSpec::validate() const {
  if (frame_side == 0) throw ConfigError("frame_side must be positive");
  for (std::size_t i = 0; i < objects.size(); ++i)
    validate_object(objects[i], frame_side, "objects." + std::to_string(i));
  for (std::size_t i = 0; i < anomalies.size(); ++i) {
    const auto& a = anomalies[i];
    const auto what = "anomalies." + std::to_string(i);
    if (a.frames.start > a.frames.end) throw ConfigError(what + ": start > end");
    if (a.kind == AnomalyKind::intrusion) {
      validate_object(a.intruder, frame_side, what);
    } else {
      if (a.object >= objects.size())
        throw ConfigError(what + ": object index " + std::to_string(a.object) + " out of range");
      if (a.kind == AnomalyKind::speed_up && a.factor <= 0)
        throw ConfigError(what + ": factor must be positive");
    }
  }
}

SceneSpec SceneSpec::from_key_values(const KeyValueList& kv) {
  SceneSpec spec;
  std::map<std::size_t, ObjectSpec> objects;
  std::map<std::size_t, AnomalySpec> anomalies;
  for (const auto& [key, value] : kv) {
    std::size_t index = 0;
    std::string field;
    if (key == "frame_side") {
      spec.frame_side = parse_count(key, value);
    } else if (key == "bounce") {
      spec.bounce = parse_bool(key, value);
    } else if (split_indexed(key, "objects.", index, field)) {
      if (!set_object_field(objects[index], field, key, value))
        throw ConfigError("unknown scene key: " + key);
    } else if (split_indexed(key, "anomalies.", index, field)) {
      auto& a = anomalies[index];
      if (field == "kind") a.kind = parse_anomaly(key, value);
      else if (field == "object") a.object = parse_count(key, value);
      else if (field == "start") a.frames.start = parse_count(key, value);
      else if (field == "end") a.frames.end = parse_count(key, value);
      else if (field == "factor") a.factor = parse_real(key, value);
      else if (!set_object_field(a.intruder, field, key, value))
        throw ConfigError("unknown scene key: " + key);
    } else {
      throw ConfigError("unknown scene key: " + key);
    }
  }
  for (auto& [i, o] : objects) {
    if (i != spec.objects.size()) throw ConfigError("objects must be numbered 0, 1, 2, ...");
    spec.objects.push_back(o);
  }
  for (auto& [i, a] : anomalies) {
    if (i != spec.anomalies.size()) throw ConfigError("anomalies must be numbered 0, 1, 2, ...");
    spec.anomalies.push_back(a);
  }
  spec.validate();
  return spec;
}

SceneSpec SceneSpec::from_file(const std::filesystem::path& path) {
  return from_key_values(read_key_value_file(path));
}

KeyValueList SceneSpec::to_key_values() const {
  KeyValueList out{{"frame_side", std::to_string(frame_side)},
                   {"bounce", bounce ? "true" : "false"}};
  for (std::size_t i = 0; i < objects.size(); ++i)
    object_key_values(objects[i], "objects." + std::to_string(i) + ".", out);
  for (std::size_t i = 0; i < anomalies.size(); ++i) {
    const auto& a = anomalies[i];
    const auto p = "anomalies." + std::to_string(i) + ".";
    out.emplace_back(p + "kind", anomaly_name(a.kind));
    out.emplace_back(p + "start", std::to_string(a.frames.start));
    out.emplace_back(p + "end", std::to_string(a.frames.end));
    if (a.kind == AnomalyKind::intrusion) {
      object_key_values(a.intruder, p, out);
    } else {
      out.emplace_back(p + "object", std::to_string(a.object));
      if (a.kind == AnomalyKind::speed_up) out.emplace_back(p + "factor", format_real(a.factor));
    }
  }
  return out;
}

VideoClip generate(const SceneSpec& spec, std::size_t length, std::uint64_t seed) {
  spec.validate();
  if (length < 1) throw UsageError("generate: length must be >= 1");
  const Rng root(seed);
  std::vector<Body> bodies;
  for (std::size_t i = 0; i < spec.objects.size(); ++i)
    bodies.push_back(spawn(spec.objects[i], spec.frame_side, root.split("object." + std::to_string(i))));

  VideoClip clip;
  for (std::size_t i = 0; i < spec.anomalies.size(); ++i) {
    const auto& a = spec.anomalies[i];
    if (a.frames.start >= length) continue;
    clip.ground_truth.push_back({a.frames.start, std::min(a.frames.end, length - 1)});
    if (a.kind == AnomalyKind::intrusion) {
      Body b = spawn(a.intruder, spec.frame_side, root.split("intruder." + std::to_string(i)));
      b.first = a.frames.start;
      b.last = a.frames.end;
      bodies.push_back(b);
    }
  }
  clip.ground_truth = normalize_intervals(std::move(clip.ground_truth));

  // Per-frame displacement multiplier for each scripted body.
  auto multiplier = [&](std::size_t body, std::size_t frame) {
    double m = 1.0;
    for (const auto& a : spec.anomalies) {
      if (a.kind == AnomalyKind::intrusion || a.object != body) continue;
      if (frame < a.frames.start || frame > a.frames.end) continue;
      m *= a.kind == AnomalyKind::speed_up ? a.factor : -1.0;
    }
    return m;
  };

  for (std::size_t t = 0; t < length; ++t) {
    Tensor frame({1, spec.frame_side, spec.frame_side});
    for (const auto& b : bodies)
      if (t >= b.first && t <= b.last) render(b, spec.frame_side, frame);
    clip.frames.push_back(std::move(frame));

    // Step to the next frame; the motion into frame t+1 uses frame t+1's state.
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      auto& b = bodies[i];
      if (t + 1 < b.first || t + 1 > b.last) continue;
      if (t + 1 == b.first) continue;  // intruder appears at its spawn point
      const double m = i < spec.objects.size() ? multiplier(i, t + 1) : 1.0;
      const double room = static_cast<double>(spec.frame_side - b.spec.size);
      advance(b.x, b.vx, m * b.vx, room, spec.bounce);
      advance(b.y, b.vy, m * b.vy, room, spec.bounce);
    }
  }
  return clip;
}

}  // namespace convlstm
