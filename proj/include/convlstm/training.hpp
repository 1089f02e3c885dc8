#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convlstm/kvfile.hpp"
#include "convlstm/network.hpp"
#include "convlstm/video.hpp"

namespace convlstm {

enum class OptimizerKind { rmsprop, adagrad, adam };

std::string to_string(OptimizerKind k);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::rmsprop;
  double learning_rate = 1e-4;
  double decay = 0.9;  // RMSProp cache decay
  double epsilon = 1e-8;
  std::size_t batch_size = 5;
  // Desk-scale default; full-resolution runs used up to 25,000.
  std::size_t max_iterations = 2000;
  std::size_t eval_interval = 100;
  // Evaluations without improvement before stopping; 0 disables early stopping.
  std::size_t early_stop_patience = 10;
  // Trailing fraction of all windows held out for validation. With 0 the
  // training windows double as the validation set.
  double validation_fraction = 0.2;
  // Global gradient-norm cap; 0 disables clipping.
  double clip_norm = 0.0;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const;
  bool set(const std::string& key, const std::string& value);
  KeyValueList to_key_values() const;
};

// ---- optimizers ----

// cache <- decay*cache + (1-decay)*g^2;  p <- p - lr*g / (sqrt(cache) + eps)
void rmsprop_step(std::span<double> params, std::span<const double> grads, std::span<double> cache,
                  double lr, double decay, double eps);
// accum <- accum + g^2;  p <- p - lr*g / (sqrt(accum) + eps)
void adagrad_step(std::span<double> params, std::span<const double> grads, std::span<double> accum,
                  double lr, double eps);
// Bias-corrected Adam; `step` is the 1-based step count after this update.
void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, std::size_t step, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// Auxiliary tensors shaped like the parameters: the RMSProp cache, the
// Adagrad accumulator, or Adam's first/second moments.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::rmsprop;
  std::vector<Tensor> first;
  std::vector<Tensor> second;  // Adam only
  std::size_t step = 0;
};

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const ParameterSet& params);

  void step(ParameterSet& params, const Gradients& grads);
  const OptimizerState& state() const { return state_; }

 private:
  TrainConfig config_;
  OptimizerState state_;
};

// ---- data ----

struct WindowRef {
  std::size_t clip = 0;
  std::size_t start = 0;
};

// All windows of input_len + output_len consecutive frames, clip by clip.
std::vector<WindowRef> enumerate_windows(std::span<const VideoClip> clips, const NetworkConfig& cfg);

struct BatchResult {
  double loss = 0.0;  // mean over the batch
  Gradients grads;    // mean over the batch
};

// Per-element gradients are computed independently (in parallel when
// threads > 1) and summed in batch order, so the result does not depend on
// the thread count.
BatchResult batch_gradients(const CompositeModel& model, std::span<const VideoClip> clips,
                            std::span<const WindowRef> batch, std::size_t threads = 1);

double mean_loss(const CompositeModel& model, std::span<const VideoClip> clips,
                 std::span<const WindowRef> windows, std::size_t threads = 1);

// Scales grads in place so their global L2 norm is at most max_norm; returns the
// norm before scaling.
double clip_gradients(Gradients& grads, double max_norm);

// ---- loop ----

struct LossRecord {
  std::size_t iteration = 0;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
};

struct TrainResult {
  CompositeModel model;  // best-validation parameters
  std::vector<LossRecord> history;
  double best_val_loss = 0.0;
  std::size_t best_iteration = 0;
  std::size_t iterations_run = 0;
  bool early_stopped = false;
};

// Mini-batches are sampled uniformly (with replacement) from the training
// windows. Validation runs at iteration 0, every eval_interval iterations and
// after the last one; the returned model is the best one seen at those points.
TrainResult train(const CompositeModel& initial, std::span<const VideoClip> clips,
                  const TrainConfig& config);

// `iteration,train_loss,val_loss`; missing values are left empty.
void write_loss_history(const std::filesystem::path& path, std::span<const LossRecord> history);

}  // namespace convlstm
