#include "convlstm/training.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include "convlstm/errors.hpp"
#include "convlstm/rng.hpp"

namespace convlstm {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adagrad: return "adagrad";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(decay > 0 && decay < 1)) throw ConfigError("decay must lie in (0, 1)");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (!(validation_fraction >= 0 && validation_fraction < 1))
    throw ConfigError("validation_fraction must lie in [0, 1)");
  if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "optimizer") {
    if (value == "rmsprop") optimizer = OptimizerKind::rmsprop;
    else if (value == "adagrad") optimizer = OptimizerKind::adagrad;
    else if (value == "adam") optimizer = OptimizerKind::adam;
    else throw ConfigError("optimizer must be rmsprop, adagrad or adam, got '" + value + "'");
  } else if (key == "learning_rate") learning_rate = parse_real(key, value);
  else if (key == "decay") decay = parse_real(key, value);
  else if (key == "epsilon") epsilon = parse_real(key, value);
  else if (key == "batch_size") batch_size = parse_count(key, value);
  else if (key == "max_iterations") max_iterations = parse_count(key, value);
  else if (key == "eval_interval") eval_interval = parse_count(key, value);
  else if (key == "early_stop_patience") early_stop_patience = parse_count(key, value);
  else if (key == "validation_fraction") validation_fraction = parse_real(key, value);
  else if (key == "clip_norm") clip_norm = parse_real(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_count(key, value));
  else if (key == "threads") threads = parse_count(key, value);
  else return false;
  return true;
}

KeyValueList TrainConfig::to_key_values() const {
  return {{"optimizer", to_string(optimizer)},
          {"learning_rate", format_real(learning_rate)},
          {"decay", format_real(decay)},
          {"epsilon", format_real(epsilon)},
          {"batch_size", std::to_string(batch_size)},
          {"max_iterations", std::to_string(max_iterations)},
          {"eval_interval", std::to_string(eval_interval)},
          {"early_stop_patience", std::to_string(early_stop_patience)},
          {"validation_fraction", format_real(validation_fraction)},
          {"clip_norm", format_real(clip_norm)},
          {"seed", std::to_string(seed)},
          {"threads", std::to_string(threads)}};
}

// ---- optimizers ----

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) throw ConfigError("optimizer: parameter/gradient/state sizes differ");
}

}  // namespace

void rmsprop_step(std::span<double> params, std::span<const double> grads, std::span<double> cache,
                  double lr, double decay, double eps) {
  check_sizes(params.size(), grads.size(), cache.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    cache[i] = decay * cache[i] + (1.0 - decay) * g * g;
    params[i] -= lr * g / (std::sqrt(cache[i]) + eps);
  }
}

void adagrad_step(std::span<double> params, std::span<const double> grads, std::span<double> accum,
                  double lr, double eps) {
  check_sizes(params.size(), grads.size(), accum.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    accum[i] += g * g;
    params[i] -= lr * g / (std::sqrt(accum[i]) + eps);
  }
}

void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, std::size_t step, double lr, double beta1, double beta2,
               double eps) {
  check_sizes(params.size(), grads.size(), m.size());
  check_sizes(params.size(), grads.size(), v.size());
  if (step < 1) throw UsageError("adam_step: step count starts at 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

Optimizer::Optimizer(const TrainConfig& config, const ParameterSet& params) : config_(config) {
  config_.validate();
  state_.kind = config.optimizer;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state_.first.emplace_back(params.value(i).shape());
    if (config.optimizer == OptimizerKind::adam) state_.second.emplace_back(params.value(i).shape());
  }
}

void Optimizer::step(ParameterSet& params, const Gradients& grads) {
  if (grads.size() != params.size()) throw ConfigError("optimizer: gradient slot count mismatch");
  ++state_.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.value(i).data();
    auto g = grads[i].data();
    switch (config_.optimizer) {
      case OptimizerKind::rmsprop:
        rmsprop_step(p, g, state_.first[i].data(), config_.learning_rate, config_.decay,
                     config_.epsilon);
        break;
      case OptimizerKind::adagrad:
        adagrad_step(p, g, state_.first[i].data(), config_.learning_rate, config_.epsilon);
        break;
      case OptimizerKind::adam:
        adam_step(p, g, state_.first[i].data(), state_.second[i].data(), state_.step,
                  config_.learning_rate, 0.9, 0.999, config_.epsilon);
        break;
    }
  }
}

// ---- data ----

std::vector<WindowRef> enumerate_windows(std::span<const VideoClip> clips, const NetworkConfig& cfg) {
  const std::size_t span = cfg.input_len + cfg.output_len;
  std::vector<WindowRef> out;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    if (clips[c].side() != cfg.frame_side)
      throw ConfigError("clip " + std::to_string(c) + " has " + std::to_string(clips[c].side()) +
                        " px frames, model expects " + std::to_string(cfg.frame_side));
    for (std::size_t s = 0; s + span <= clips[c].length(); ++s) out.push_back({c, s});
  }
  return out;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(std::max<std::size_t>(threads, 1), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
}

}  // namespace

BatchResult batch_gradients(const CompositeModel& model, std::span<const VideoClip> clips,
                            std::span<const WindowRef> batch, std::size_t threads) {
  if (batch.empty()) throw UsageError("empty mini-batch");
  const auto& cfg = model.config();
  std::vector<LossAndGradients> parts(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const auto& w = batch[i];
    const auto& clip = clips[w.clip];
    parts[i] = loss_and_gradients(model, clip.window(w.start, cfg.input_len),
                                  clip.window(w.start + cfg.input_len, cfg.output_len));
  });
  BatchResult out{0.0, zero_gradients(model.parameters())};
  for (const auto& p : parts) {
    out.loss += p.result.loss;
    accumulate(out.grads, p.grads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& g : out.grads)
    for (auto& v : g.data()) v *= inv;
  return out;
}

double mean_loss(const CompositeModel& model, std::span<const VideoClip> clips,
                 std::span<const WindowRef> windows, std::size_t threads) {
  if (windows.empty()) throw UsageError("mean_loss over no windows");
  const auto& cfg = model.config();
  std::vector<double> losses(windows.size());
  parallel_for(windows.size(), threads, [&](std::size_t i) {
    const auto& w = windows[i];
    const auto& clip = clips[w.clip];
    losses[i] = forward_composite(model, clip.window(w.start, cfg.input_len),
                                  clip.window(w.start + cfg.input_len, cfg.output_len))
                    .loss;
  });
  double s = 0.0;
  for (double l : losses) s += l;
  return s / static_cast<double>(windows.size());
}

double clip_gradients(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (auto& v : g.data()) v *= s;
  }
  return norm;
}

// ---- loop ----

TrainResult train(const CompositeModel& initial, std::span<const VideoClip> clips,
                  const TrainConfig& config) {
  config.validate();
  const auto& net = initial.config();
  const std::size_t span = net.input_len + net.output_len;
  auto windows = enumerate_windows(clips, net);
  if (windows.empty())
    throw DomainError("training data has no clip with at least " + std::to_string(span) +
                      " frames");

  std::size_t n_val = static_cast<std::size_t>(
      std::floor(config.validation_fraction * static_cast<double>(windows.size())));
  if (config.validation_fraction > 0 && n_val == 0 && windows.size() > 1) n_val = 1;
  const std::vector<WindowRef> train_set(windows.begin(), windows.end() - static_cast<std::ptrdiff_t>(n_val));
  const std::vector<WindowRef> val_set =
      n_val > 0 ? std::vector<WindowRef>(windows.end() - static_cast<std::ptrdiff_t>(n_val), windows.end())
                : train_set;

  CompositeModel model = initial;
  Optimizer optimizer(config, model.parameters());
  Rng batch_rng = Rng(config.seed).split("batches");

  TrainResult result{initial, {}, 0.0, 0, 0, false};
  auto evaluate_val = [&](std::size_t iteration) {
    const double v = mean_loss(model, clips, val_set, config.threads);
    if (!std::isfinite(v))
      throw NumericError("validation loss is not finite at iteration " + std::to_string(iteration));
    return v;
  };

  result.best_val_loss = evaluate_val(0);
  result.history.push_back({0, std::nullopt, result.best_val_loss});
  std::size_t stale = 0;

  std::vector<WindowRef> batch(config.batch_size);
  for (std::size_t it = 1; it <= config.max_iterations; ++it) {
    for (auto& w : batch) w = train_set[batch_rng.below(train_set.size())];
    auto br = batch_gradients(model, clips, batch, config.threads);
    if (!std::isfinite(br.loss))
      throw NumericError("training loss is not finite at iteration " + std::to_string(it));
    if (config.clip_norm > 0) clip_gradients(br.grads, config.clip_norm);
    optimizer.step(model.parameters(), br.grads);

    LossRecord rec{it, br.loss, std::nullopt};
    const bool eval_now = it % config.eval_interval == 0 || it == config.max_iterations;
    if (eval_now) {
      const double v = evaluate_val(it);
      rec.val_loss = v;
      if (v < result.best_val_loss) {
        result.best_val_loss = v;
        result.best_iteration = it;
        result.model = model;
        stale = 0;
      } else {
        ++stale;
      }
    }
    result.history.push_back(rec);
    result.iterations_run = it;
    if (eval_now && config.early_stop_patience > 0 && stale >= config.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

void write_loss_history(const std::filesystem::path& path, std::span<const LossRecord> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "iteration,train_loss,val_loss\n";
  for (const auto& r : history) {
    out << r.iteration << ',';
    if (r.train_loss) out << format_real(*r.train_loss);
    out << ',';
    if (r.val_loss) out << format_real(*r.val_loss);
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace convlstm
