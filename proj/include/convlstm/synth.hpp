#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "convlstm/kvfile.hpp"
#include "convlstm/video.hpp"

namespace convlstm {

enum class ShapeKind { square, disc, cross };

struct ObjectSpec {
  ShapeKind shape = ShapeKind::square;
  std::size_t size = 4;
  // Top-left corner; drawn uniformly from the seed when unset.
  std::optional<double> x, y;
  // Pixels per frame; when unset a random heading with magnitude `speed`.
  std::optional<double> vx, vy;
  double speed = 1.0;
  double intensity = 1.0;
};

enum class AnomalyKind {
  speed_up,         // object moves `factor` times faster
  wrong_direction,  // object's motion is reversed
  intrusion,        // an extra object is present
};

struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::speed_up;
  std::size_t object = 0;  // target for speed_up / wrong_direction
  Interval frames;
  double factor = 3.0;
  ObjectSpec intruder;
};

// Bouncing-shapes scene. Objects move linearly and reflect elastically off the
// frame borders (or wrap around when bounce is off); overlapping objects add
// and the result is clamped to [0,1].
struct SceneSpec {
  std::size_t frame_side = 32;
  bool bounce = true;
  std::vector<ObjectSpec> objects;
  std::vector<AnomalySpec> anomalies;

  void validate() const;

  // Flat keys: frame_side, bounce, objects.N.<field>, anomalies.N.<field>.
  static SceneSpec from_key_values(const KeyValueList& kv);
  static SceneSpec from_file(const std::filesystem::path& path);
  KeyValueList to_key_values() const;
};

// Pure in (spec, length, seed). ground_truth lists the anomaly intervals
// clipped to the clip length.
VideoClip generate(const SceneSpec& spec, std::size_t length, std::uint64_t seed);

}  // namespace convlstm
