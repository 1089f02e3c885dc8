#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "convlstm/errors.hpp"
#include "convlstm/synth.hpp"
#include "convlstm/video.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace convlstm;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ObjectSpec placed(double x, double y, double vx, double vy, std::size_t size = 4) {
  ObjectSpec o;
  o.size = size;
  o.x = x;
  o.y = y;
  o.vx = vx;
  o.vy = vy;
  return o;
}

double pixel_sum(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v;
  return s;
}

// Leftmost lit column of a frame.
std::size_t left_column(const Tensor& f) {
  for (std::size_t x = 0; x < f.dim(2); ++x)
    for (std::size_t y = 0; y < f.dim(1); ++y)
      if (f.at(0, y, x) > 0.5) return x;
  return f.dim(2);
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("a still object gives identical frames") {
    SceneSpec spec;
    spec.frame_side = 16;
    spec.objects.push_back(placed(3, 5, 0, 0));
    const auto clip = generate(spec, 10, 1);
    for (const auto& f : clip.frames) CHECK(f == clip.frames.front());
  }

  TEST_CASE("reflection period matches the closed form") {
    // Moving +2 px/frame from column 0 in a 64-wide frame, the object hits
    // column 64 - size after (64 - size) / 2 frames and is back at 0 after
    // 2 * (64 - size) / 2 frames.
    const std::size_t size = 4, side = 64;
    SceneSpec spec;
    spec.frame_side = side;
    spec.objects.push_back(placed(0, 10, 2, 0, size));
    const std::size_t period = 2 * (side - size) / 2;
    const auto clip = generate(spec, period + 5, 1);

    // Independent simulation of the bounce.
    long x = 0, v = 2;
    const long room = static_cast<long>(side - size);
    for (std::size_t t = 0; t <= period + 4; ++t) {
      CHECK(left_column(clip.frames[t]) == static_cast<std::size_t>(x));
      x += v;
      if (x > room) {
        x = 2 * room - x;
        v = -v;
      } else if (x < 0) {
        x = -x;
        v = -v;
      }
    }
    CHECK(left_column(clip.frames[period]) == 0);
    CHECK(clip.frames[period] == clip.frames[0]);
    for (std::size_t t = 1; t < period; ++t) CHECK(left_column(clip.frames[t]) != 0);
  }

  TEST_CASE("mass is conserved away from walls") {
    SceneSpec spec;
    spec.frame_side = 32;
    spec.objects.push_back(placed(4.0, 10.0, 0.7, 0.3, 3));
    spec.objects.push_back(placed(20.0, 20.0, -0.4, -0.6, 4));
    const auto clip = generate(spec, 10, 1);
    const double m0 = pixel_sum(clip.frames[0]);
    for (const auto& f : clip.frames) CHECK(pixel_sum(f) == doctest::Approx(m0).epsilon(1e-12));
  }

  TEST_CASE("generation is pure and pixels stay in [0, 1]") {
    SceneSpec spec;
    spec.frame_side = 16;
    for (int i = 0; i < 3; ++i) {
      ObjectSpec o;
      o.shape = static_cast<ShapeKind>(i);
      o.size = 5;
      o.speed = 1.3;
      spec.objects.push_back(o);
    }
    const auto a = generate(spec, 40, 9), b = generate(spec, 40, 9), c = generate(spec, 40, 10);
    CHECK(a.frames == b.frames);
    CHECK_FALSE(a.frames == c.frames);
    for (const auto& f : a.frames)
      for (double v : f.data()) CHECK((v >= 0.0 && v <= 1.0));
  }

  TEST_CASE("anomaly intervals become the ground truth") {
    SceneSpec spec;
    spec.frame_side = 16;
    ObjectSpec o;
    o.speed = 1;
    spec.objects.push_back(o);
    AnomalySpec fast;
    fast.kind = AnomalyKind::speed_up;
    fast.frames = {5, 9};
    AnomalySpec back;
    back.kind = AnomalyKind::wrong_direction;
    back.frames = {20, 24};
    AnomalySpec intruder;
    intruder.kind = AnomalyKind::intrusion;
    intruder.frames = {30, 34};
    intruder.intruder.shape = ShapeKind::cross;
    intruder.intruder.size = 5;
    spec.anomalies = {fast, back, intruder};
    const auto clip = generate(spec, 40, 3);
    CHECK(clip.ground_truth == std::vector<Interval>{{5, 9}, {20, 24}, {30, 34}});
    // The intruder adds mass only inside its interval.
    CHECK(pixel_sum(clip.frames[32]) > pixel_sum(clip.frames[28]) + 1.0);
    // Intervals past the end are clipped.
    CHECK(generate(spec, 22, 3).ground_truth == std::vector<Interval>{{5, 9}, {20, 21}});
  }

  TEST_CASE("speed-up moves the object further per frame") {
    SceneSpec spec;
    spec.frame_side = 64;
    spec.objects.push_back(placed(0, 0, 1, 0));
    AnomalySpec fast;
    fast.frames = {3, 6};
    fast.factor = 3;
    spec.anomalies.push_back(fast);
    const auto clip = generate(spec, 10, 1);
    CHECK(left_column(clip.frames[2]) == 2);
    CHECK(left_column(clip.frames[3]) == 5);
    CHECK(left_column(clip.frames[6]) == 14);
    CHECK(left_column(clip.frames[7]) == 15);
  }

  TEST_CASE("invalid scenes") {
    SceneSpec spec;
    spec.frame_side = 8;
    ObjectSpec big;
    big.size = 9;
    spec.objects.push_back(big);
    CHECK_THROWS_AS(generate(spec, 5, 1), ConfigError);
    spec.objects[0].size = 3;
    CHECK_THROWS_AS(generate(spec, 0, 1), UsageError);
  }

  TEST_CASE("scene spec key-value round trip") {
    const std::string text =
        "frame_side = 24\nbounce = false\n"
        "objects.0.shape = disc\nobjects.0.size = 5\nobjects.0.x = 2\nobjects.0.y = 3\n"
        "objects.0.vx = 1.5\nobjects.0.vy = -0.5\n"
        "objects.1.shape = cross\nobjects.1.speed = 2\nobjects.1.intensity = 0.5\n"
        "anomalies.0.kind = speed_up\nanomalies.0.object = 1\nanomalies.0.start = 10\n"
        "anomalies.0.end = 19\nanomalies.0.factor = 3\n"
        "anomalies.1.kind = intrusion\nanomalies.1.start = 30\nanomalies.1.end = 35\n"
        "anomalies.1.shape = square\nanomalies.1.size = 6\n";
    const auto spec = SceneSpec::from_key_values(parse_key_values(text, "test"));
    CHECK(spec.frame_side == 24);
    CHECK_FALSE(spec.bounce);
    REQUIRE(spec.objects.size() == 2);
    CHECK(spec.objects[0].shape == ShapeKind::disc);
    CHECK(*spec.objects[0].vx == 1.5);
    CHECK(spec.anomalies[1].intruder.size == 6);
    const auto again = SceneSpec::from_key_values(spec.to_key_values());
    CHECK(generate(again, 40, 2).frames == generate(spec, 40, 2).frames);
    CHECK_THROWS_AS(SceneSpec::from_key_values(parse_key_values("objects.0.colour = red\n", "t")),
                    ConfigError);
  }

  TEST_CASE("the demo scene specs load") {
    for (const char* name : {"demo_scene.txt", "demo_anomaly_scene.txt"}) {
      const auto spec = SceneSpec::from_file(fs::path(CONVLSTM_SOURCE_DIR) / "configs" / name);
      const auto clip = generate(spec, 300, 1);
      clip.validate();
      CHECK(clip.length() == 300);
    }
  }
}

TEST_SUITE("clip io") {
  TEST_CASE("save and load within 8-bit quantization") {
    TempDir dir("convlstm_unit_clip");
    Rng rng(1);
    VideoClip clip;
    for (int t = 0; t < 5; ++t) clip.frames.push_back(oracle::random_tensor({1, 7, 7}, rng, 0, 1));
    clip.ground_truth = {{1, 1}, {3, 4}};
    save_clip(clip, dir.path);
    const auto back = load_clip(dir.path);
    REQUIRE(back.length() == 5);
    for (int t = 0; t < 5; ++t) CHECK(max_abs_diff(back.frames[t], clip.frames[t]) <= 1.0 / 255.0);
    CHECK(back.ground_truth == clip.ground_truth);
  }

  TEST_CASE("hand-written fixture") {
    const auto clip = load_clip(fs::path(CONVLSTM_SOURCE_DIR) / "tests" / "fixtures" / "three_frames");
    REQUIRE(clip.length() == 3);
    CHECK(clip.side() == 2);
    CHECK(clip.frames[0][3] == 1.0);
    CHECK(clip.frames[0][1] == doctest::Approx(64.0 / 255.0));
    CHECK(clip.frames[1][2] == doctest::Approx(30.0 / 255.0));
    CHECK(clip.ground_truth == std::vector<Interval>{{0, 0}, {2, 2}});
  }

  TEST_CASE("empty directory is an error") {
    TempDir dir("convlstm_unit_empty");
    CHECK_THROWS_AS(load_clip(dir.path), DataError);
  }

  TEST_CASE("a missing index names the file") {
    TempDir dir("convlstm_unit_gap");
    Tensor f({1, 2, 2}, 0.5);
    write_pgm(f, dir.path / frame_filename(0));
    write_pgm(f, dir.path / frame_filename(2));
    try {
      load_clip(dir.path);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("frame_000001.pgm") != std::string::npos);
    }
  }

  TEST_CASE("malformed and inconsistent frames") {
    TempDir dir("convlstm_unit_bad");
    {
      std::ofstream out(dir.path / frame_filename(0), std::ios::binary);
      out << "P2\n2 2\n255\n0 0 0 0\n";
    }
    CHECK_THROWS_AS(load_clip(dir.path), DataError);
    write_pgm(Tensor({1, 2, 2}), dir.path / frame_filename(0));
    write_pgm(Tensor({1, 3, 3}), dir.path / frame_filename(1));
    CHECK_THROWS_AS(load_clip(dir.path), DataError);
    {
      std::ofstream out(dir.path / frame_filename(1), std::ios::binary);
      out << "P5\n2 2\n255\n\x01";
    }
    CHECK_THROWS_AS(load_clip(dir.path), DataError);
  }

  TEST_CASE("out-of-range ground truth is rejected") {
    TempDir dir("convlstm_unit_gt");
    write_pgm(Tensor({1, 2, 2}), dir.path / frame_filename(0));
    write_intervals({{0, 3}}, dir.path / "ground_truth.txt");
    CHECK_THROWS_AS(load_clip(dir.path), DataError);
  }

  TEST_CASE("a data directory of clips") {
    TempDir dir("convlstm_unit_many");
    VideoClip a, b;
    a.frames.assign(3, Tensor({1, 4, 4}, 0.2));
    b.frames.assign(4, Tensor({1, 4, 4}, 0.8));
    save_clip(b, dir.path / "b");
    save_clip(a, dir.path / "a");
    const auto clips = load_clips(dir.path);
    REQUIRE(clips.size() == 2);
    CHECK(clips[0].length() == 3);
    CHECK(clips[1].length() == 4);
  }
}

TEST_SUITE("resize") {
  TEST_CASE("same size is the identity") {
    Rng rng(2);
    const Tensor f = oracle::random_tensor({1, 9, 9}, rng, 0, 1);
    CHECK(max_abs_diff(resize_grayscale(f, 9), f) <= 1e-12);
  }

  TEST_CASE("constant frames stay constant") {
    const Tensor f({1, 5, 7}, 0.3);
    for (std::size_t s : {1u, 4u, 13u}) {
      const Tensor r = resize_grayscale(f, s);
      for (double v : r.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-14));
    }
  }

  TEST_CASE("2x2 checkerboard to 3x3 has a 0.5 centre") {
    const Tensor f({1, 2, 2}, std::vector<double>{0, 1, 1, 0});
    const Tensor r = resize_grayscale(f, 3);
    CHECK(r.at(0, 1, 1) == doctest::Approx(0.5).epsilon(1e-15));
    for (double v : r.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
}
