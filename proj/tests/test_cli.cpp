#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "convlstm/anomaly.hpp"
#include "convlstm/checkpoint.hpp"
#include "convlstm/kvfile.hpp"
#include "convlstm/training.hpp"
#include "convlstm/video.hpp"

namespace fs = std::filesystem;
using namespace convlstm;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "convlstm_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(CONVLSTM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

fs::path write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
  return p;
}

const char* kScene =
    "frame_side = 8\n"
    "objects.0.shape = square\nobjects.0.size = 3\nobjects.0.speed = 1\n"
    "anomalies.0.kind = speed_up\nanomalies.0.object = 0\nanomalies.0.start = 14\n"
    "anomalies.0.end = 19\nanomalies.0.factor = 3\n";

const char* kTrain =
    "frame_side = 8\npatch_factor = 2\nfilter_size = 3\nlayer_channels = 2\n"
    "input_len = 3\noutput_len = 3\ncomposite = true\n"
    "learning_rate = 0.001\nbatch_size = 2\nmax_iterations = 4\neval_interval = 2\nseed = 5\n";

struct Workspace {
  Workspace() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
  ~Workspace() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen-data is reproducible and validates its length") {
    Workspace ws;
    const auto spec = write_file(kRoot / "scene.txt", kScene);
    REQUIRE(run("gen-data --spec " + q(spec) + " --out " + q(kRoot / "a") + " --length 30 --seed 4") == 0);
    REQUIRE(run("gen-data --spec " + q(spec) + " --out " + q(kRoot / "b") + " --length 30 --seed 4") == 0);
    for (std::size_t t = 0; t < 30; ++t)
      CHECK(slurp(kRoot / "a" / frame_filename(t)) == slurp(kRoot / "b" / frame_filename(t)));
    CHECK(slurp(kRoot / "a" / "ground_truth.txt") == slurp(kRoot / "b" / "ground_truth.txt"));
    CHECK(load_clip(kRoot / "a").ground_truth == std::vector<Interval>{{14, 19}});
    CHECK(run("gen-data --spec " + q(spec) + " --out " + q(kRoot / "c") + " --length 0 --seed 4") != 0);
    CHECK(run("gen-data --out " + q(kRoot / "c")) != 0);
    CHECK(run("no-such-command") != 0);
  }

  TEST_CASE("full pipeline matches the library") {
    Workspace ws;
    const auto spec = write_file(kRoot / "scene.txt", kScene);
    const auto cfg = write_file(kRoot / "train.txt", kTrain);
    const auto data = kRoot / "clip";
    REQUIRE(run("gen-data --spec " + q(spec) + " --out " + q(data) + " --length 40 --seed 1") == 0);

    // Zero iterations store the initialization.
    REQUIRE(run("train --config " + q(cfg) + " --data " + q(data) + " --out " + q(kRoot / "init") +
                " --max-iterations 0") == 0);
    NetworkConfig net;
    TrainConfig tc;
    for (const auto& [k, v] : read_key_value_file(cfg))
      if (!net.set(k, v)) REQUIRE(tc.set(k, v));
    Rng rng = Rng(tc.seed).split("init");
    save_checkpoint(CompositeModel::initialize(net, rng), kRoot / "expected.ckpt");
    CHECK(slurp(kRoot / "init" / "checkpoint.ckpt") == slurp(kRoot / "expected.ckpt"));

    // Training twice gives identical bytes.
    REQUIRE(run("train --config " + q(cfg) + " --data " + q(data) + " --out " + q(kRoot / "t1")) == 0);
    REQUIRE(run("train --config " + q(cfg) + " --data " + q(data) + " --out " + q(kRoot / "t2")) == 0);
    CHECK(slurp(kRoot / "t1" / "checkpoint.ckpt") == slurp(kRoot / "t2" / "checkpoint.ckpt"));
    CHECK(slurp(kRoot / "t1" / "loss_history.csv") == slurp(kRoot / "t2" / "loss_history.csv"));
    CHECK(slurp(kRoot / "t1" / "loss_history.csv").rfind("iteration,train_loss,val_loss\n", 0) == 0);

    const auto ckpt = kRoot / "t1" / "checkpoint.ckpt";
    REQUIRE(run("score --checkpoint " + q(ckpt) + " --data " + q(data) + " --out " + q(kRoot / "s")) == 0);
    const auto model = load_checkpoint(ckpt);
    const auto clip = load_clip(data);
    const auto errors = sliding_errors(model, clip, ErrorSource::combined);
    const auto rows = read_regularity_csv(kRoot / "s" / "regularity.csv");
    REQUIRE(rows.size() == errors.size());
    std::vector<double> g;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].error == doctest::Approx(errors[i]).epsilon(1e-12));
      g.push_back(rows[i].regularity);
    }

    REQUIRE(run("detect --scores " + q(kRoot / "s" / "regularity.csv") + " --out " + q(kRoot / "d") +
                " --threshold 0.2 --window 5 --merge-distance 5") == 0);
    CHECK(read_intervals(kRoot / "d" / "detections.txt") == detect(g, 0.2, {5, 5}));

    // Ground truth scored against itself.
    const auto gt = kRoot / "gt.txt";
    write_intervals({{3, 8}, {20, 25}}, gt);
    REQUIRE(run("eval --detections " + q(gt) + " --ground-truth " + q(gt) + " --out " + q(kRoot / "e")) == 0);
    const auto report = slurp(kRoot / "e" / "report.txt");
    CHECK(report.find("precision 1.0000") != std::string::npos);
    CHECK(report.find("recall 1.0000") != std::string::npos);

    REQUIRE(run("detect --scores " + q(kRoot / "s" / "regularity.csv") + " --out " + q(kRoot / "sw") +
                " --sweep --window 5 --merge-distance 5") == 0);
    CHECK(fs::exists(kRoot / "sw" / "detections_0.05.txt"));
    CHECK(fs::exists(kRoot / "sw" / "detections_1.00.txt"));
    REQUIRE(run("eval --sweep-dir " + q(kRoot / "sw") + " --ground-truth " + q(data / "ground_truth.txt") +
                " --span 6 --scores " + q(kRoot / "s" / "regularity.csv") + " --out " + q(kRoot / "se")) == 0);
    CHECK(slurp(kRoot / "se" / "report.txt").rfind("best threshold ", 0) == 0);

    // predict-dump: truth for every window frame, reconstruction for inputs, prediction for outputs.
    REQUIRE(run("predict-dump --checkpoint " + q(ckpt) + " --data " + q(data) + " --start 2 --out " +
                q(kRoot / "p")) == 0);
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(kRoot / "p")) files += entry.is_regular_file();
    CHECK(files == 6 + 3 + 3);
    CHECK(fs::exists(kRoot / "p" / "pred_t03.pgm"));
    CHECK(run("predict-dump --checkpoint " + q(ckpt) + " --data " + q(data) + " --start 35 --out " +
              q(kRoot / "p2")) == 2);

    // Broken inputs.
    write_file(kRoot / "bad.csv", "window_start,error,regularity\n0,1\n");
    CHECK(run("detect --scores " + q(kRoot / "bad.csv") + " --out " + q(kRoot / "x") + " --threshold 0.1") == 2);
    const auto bad_cfg = write_file(kRoot / "bad_cfg.txt", std::string(kTrain) + "momentum = 0.9\n");
    CHECK(run("train --config " + q(bad_cfg) + " --data " + q(data) + " --out " + q(kRoot / "x")) == 1);
  }
}
