#include "convlstm/network.hpp"

#include <array>
#include <cmath>
#include <numeric>

#include "convlstm/errors.hpp"
#include "convlstm/ops.hpp"

namespace convlstm {

std::string to_string(OutputNonlinearity v) {
  return v == OutputNonlinearity::sigmoid ? "sigmoid" : "relu";
}

std::string to_string(Stack s) {
  switch (s) {
    case Stack::encoder: return "encoder";
    case Stack::past: return "past";
    case Stack::future: return "future";
  }
  return "?";
}

// ---- NetworkConfig ----

void NetworkConfig::validate() const {
  if (input_len < 1) throw ConfigError("input_len must be >= 1");
  if (output_len < 1) throw ConfigError("output_len must be >= 1");
  if (patch_factor < 1) throw ConfigError("patch_factor must be >= 1");
  if (frame_side < 1 || frame_side % patch_factor != 0)
    throw ConfigError("frame_side " + std::to_string(frame_side) +
                      " is not divisible by patch_factor " + std::to_string(patch_factor));
  if (filter_size % 2 == 0) throw ConfigError("filter_size must be odd");
  if (layer_channels.empty()) throw ConfigError("at least one layer is required");
  for (auto c : layer_channels)
    if (c == 0) throw ConfigError("layer channel counts must be positive");
}

std::size_t NetworkConfig::total_hidden_channels() const {
  return std::accumulate(layer_channels.begin(), layer_channels.end(), std::size_t{0});
}

KeyValueList NetworkConfig::to_key_values() const {
  std::string channels;
  for (std::size_t i = 0; i < layer_channels.size(); ++i)
    channels += (i ? "," : "") + std::to_string(layer_channels[i]);
  return {
      {"input_len", std::to_string(input_len)},
      {"output_len", std::to_string(output_len)},
      {"frame_side", std::to_string(frame_side)},
      {"patch_factor", std::to_string(patch_factor)},
      {"filter_size", std::to_string(filter_size)},
      {"layer_channels", channels},
      {"conditioned", conditioned ? "true" : "false"},
      {"composite", composite ? "true" : "false"},
      {"output_nonlinearity", to_string(output_nonlinearity)},
  };
}

bool NetworkConfig::set(const std::string& key, const std::string& value) {
  if (key == "input_len") input_len = parse_count(key, value);
  else if (key == "output_len") output_len = parse_count(key, value);
  else if (key == "frame_side") frame_side = parse_count(key, value);
  else if (key == "patch_factor") patch_factor = parse_count(key, value);
  else if (key == "filter_size") filter_size = parse_count(key, value);
  else if (key == "layer_channels") layer_channels = parse_count_list(key, value);
  else if (key == "conditioned") conditioned = parse_bool(key, value);
  else if (key == "composite") composite = parse_bool(key, value);
  else if (key == "output_nonlinearity") {
    if (value == "sigmoid") output_nonlinearity = OutputNonlinearity::sigmoid;
    else if (value == "relu") output_nonlinearity = OutputNonlinearity::relu;
    else throw ConfigError("output_nonlinearity must be sigmoid or relu, got '" + value + "'");
  } else {
    return false;
  }
  return true;
}

NetworkConfig NetworkConfig::from_key_values(const KeyValueList& kv) {
  NetworkConfig cfg;
  for (const auto& [k, v] : kv)
    if (!cfg.set(k, v)) throw ConfigError("unknown network config key: " + k);
  cfg.validate();
  return cfg;
}

// ---- patches ----

Tensor patchify(const Tensor& frame, std::size_t k) {
  if (frame.rank() != 3 || frame.dim(0) != 1 || frame.dim(1) != frame.dim(2))
    throw ConfigError("patchify expects a square [1,S,S] frame, got " +
                      shape_string(frame.shape()));
  const std::size_t s = frame.dim(1);
  if (k == 0 || s % k != 0)
    throw ConfigError("frame side " + std::to_string(s) + " is not divisible by patch factor " +
                      std::to_string(k));
  const std::size_t p = s / k;
  Tensor out({k * k, p, p});
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) out.at(r * k + c, y, x) = frame.at(0, r * p + y, c * p + x);
  return out;
}

Tensor unpatchify(const Tensor& patches, std::size_t k) {
  if (patches.rank() != 3 || patches.dim(0) != k * k || patches.dim(1) != patches.dim(2))
    throw ConfigError("unpatchify expects [k*k,p,p], got " + shape_string(patches.shape()));
  const std::size_t p = patches.dim(1);
  Tensor out({1, k * p, k * p});
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) out.at(0, r * p + y, c * p + x) = patches.at(r * k + c, y, x);
  return out;
}

// ---- cell ----

StateVars cell_step(const CellVars& p, std::optional<Var> x, StateVars prev) {
  const auto& h = prev.h.value();
  const auto& c = prev.c.value();
  if (h.shape() != c.shape())
    throw ConfigError("cell_step: hidden " + shape_string(h.shape()) + " vs cell " +
                      shape_string(c.shape()));
  if (x && (x->value().rank() != 3 || x->value().dim(1) != h.dim(1) ||
            x->value().dim(2) != h.dim(2)))
    throw ConfigError("cell_step: input " + shape_string(x->value().shape()) +
                      " does not match state " + shape_string(h.shape()));

  auto pre = [&](Var wx, Var wh, Var b) {
    Var z = ad::conv2d_same(prev.h, wh, b);
    if (x) z = ad::add(z, ad::conv2d_same(*x, wx));
    return z;
  };
  Var i = ad::sigmoid(ad::add(pre(p.w_xi, p.w_hi, p.b_i), ad::mul(p.w_ci, prev.c)));
  Var f = ad::sigmoid(ad::add(pre(p.w_xf, p.w_hf, p.b_f), ad::mul(p.w_cf, prev.c)));
  Var g = ad::tanh(pre(p.w_xc, p.w_hc, p.b_c));
  Var c_next = ad::add(ad::mul(f, prev.c), ad::mul(i, g));
  Var o = ad::sigmoid(ad::add(pre(p.w_xo, p.w_ho, p.b_o), ad::mul(p.w_co, c_next)));
  Var h_next = ad::mul(o, ad::tanh(c_next));
  return {h_next, c_next};
}

CellVars constant_cell(Tape& t, const ConvLSTMCellParams& p) {
  return {t.constant(p.w_xi), t.constant(p.w_hi), t.constant(p.w_xf), t.constant(p.w_hf),
          t.constant(p.w_xc), t.constant(p.w_hc), t.constant(p.w_xo), t.constant(p.w_ho),
          t.constant(p.w_ci), t.constant(p.w_cf), t.constant(p.w_co), t.constant(p.b_i),
          t.constant(p.b_f),  t.constant(p.b_c),  t.constant(p.b_o)};
}

CellState cell_step(const ConvLSTMCellParams& params, const Tensor& x, const CellState& prev) {
  Tape tape;
  CellVars p = constant_cell(tape, params);
  StateVars s = cell_step(p, tape.constant(x), {tape.constant(prev.h), tape.constant(prev.c)});
  return {s.h.value(), s.c.value()};
}

// ---- model ----

namespace {

constexpr std::array<const char*, 15> kCellFields = {
    "W_XI", "W_HI", "W_XF", "W_HF", "W_XC", "W_HC", "W_XO", "W_HO",
    "W_CI", "W_CF", "W_CO", "b_I",  "b_F",  "b_C",  "b_O"};

std::vector<Stack> stacks_of(const NetworkConfig& cfg) {
  if (cfg.composite) return {Stack::encoder, Stack::past, Stack::future};
  return {Stack::encoder, Stack::future};
}

std::vector<Stack> decoders_of(const NetworkConfig& cfg) {
  if (cfg.composite) return {Stack::past, Stack::future};
  return {Stack::future};
}

Shape field_shape(const NetworkConfig& cfg, std::size_t layer, std::size_t field) {
  const std::size_t hidden = cfg.layer_channels[layer];
  const std::size_t in = cfg.input_channels(layer);
  const std::size_t k = cfg.filter_size;
  const std::size_t p = cfg.patch_side();
  if (field < 8) return {hidden, field % 2 == 0 ? in : hidden, k, k};
  if (field < 11) return {hidden, p, p};
  return {hidden};
}

}  // namespace

std::string CompositeModel::param_name(Stack stack, std::size_t layer, const char* field) {
  return to_string(stack) + "." + std::to_string(layer) + "." + field;
}

std::string CompositeModel::output_name(Stack stack, const char* field) {
  return to_string(stack) + ".out." + field;
}

CompositeModel::CompositeModel(NetworkConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  std::size_t expected = 0;
  for (Stack s : stacks_of(config_)) {
    for (std::size_t l = 0; l < config_.layer_channels.size(); ++l) {
      for (std::size_t f = 0; f < kCellFields.size(); ++f) {
        auto name = param_name(s, l, kCellFields[f]);
        auto shape = field_shape(config_, l, f);
        if (params_.value(params_.index(name)).shape() != shape)
          throw ConfigError("parameter " + name + " has shape " +
                            shape_string(params_.value(params_.index(name)).shape()) +
                            ", expected " + shape_string(shape));
        ++expected;
      }
    }
  }
  for (Stack s : decoders_of(config_)) {
    const Shape w{config_.patch_channels(), config_.total_hidden_channels(), 1, 1};
    if (params_.value(params_.index(output_name(s, "W"))).shape() != w ||
        params_.value(params_.index(output_name(s, "b"))).shape() != Shape{config_.patch_channels()})
      throw ConfigError("output layer of " + to_string(s) + " decoder has the wrong shape");
    expected += 2;
  }
  if (expected != params_.size())
    throw ConfigError("model has " + std::to_string(params_.size()) + " parameters, expected " +
                      std::to_string(expected));
}

CompositeModel CompositeModel::initialize(const NetworkConfig& config, Rng& rng) {
  config.validate();
  ParameterSet params;
  const std::size_t k2 = config.filter_size * config.filter_size;
  for (Stack s : stacks_of(config)) {
    Rng stack_rng = rng.split(to_string(s));
    for (std::size_t l = 0; l < config.layer_channels.size(); ++l) {
      for (std::size_t f = 0; f < kCellFields.size(); ++f) {
        auto shape = field_shape(config, l, f);
        Tensor value(shape);
        if (f < 8) value = ops::xavier_init(shape, shape[1] * k2, shape[0] * k2, stack_rng);
        params.add(param_name(s, l, kCellFields[f]), std::move(value));
      }
    }
  }
  for (Stack s : decoders_of(config)) {
    Rng out_rng = rng.split(to_string(s) + ".out");
    const std::size_t in = config.total_hidden_channels();
    const std::size_t out = config.patch_channels();
    params.add(output_name(s, "W"), ops::xavier_init({out, in, 1, 1}, in, out, out_rng));
    params.add(output_name(s, "b"), Tensor({out}));
  }
  return CompositeModel(config, std::move(params));
}

ConvLSTMCellParams CompositeModel::cell_params(Stack stack, std::size_t layer) const {
  auto get = [&](std::size_t f) { return params_.value(params_.index(param_name(stack, layer, kCellFields[f]))); };
  return {get(0), get(1), get(2),  get(3),  get(4),  get(5),  get(6), get(7),
          get(8), get(9), get(10), get(11), get(12), get(13), get(14)};
}

void CompositeModel::quantize_to_float() {
  for (std::size_t i = 0; i < params_.size(); ++i)
    for (auto& v : params_.value(i).data()) v = static_cast<double>(static_cast<float>(v));
}

// ---- graph construction ----

ModelGraph::ModelGraph(Tape& tape, const CompositeModel& model) : tape_(tape), model_(model) {}

CellVars ModelGraph::cell(Stack stack, std::size_t layer) {
  auto get = [&](std::size_t f) {
    return tape_.parameter(CompositeModel::param_name(stack, layer, kCellFields[f]));
  };
  return {get(0), get(1), get(2),  get(3),  get(4),  get(5),  get(6), get(7),
          get(8), get(9), get(10), get(11), get(12), get(13), get(14)};
}

std::vector<StateVars> ModelGraph::encode(std::span<const Var> frames) {
  const auto& cfg = model_.config();
  if (frames.empty()) throw UsageError("encode: empty input sequence");
  const std::size_t p = cfg.patch_side();
  std::vector<StateVars> state;
  std::vector<CellVars> cells;
  for (std::size_t l = 0; l < cfg.layer_channels.size(); ++l) {
    Var zero = tape_.constant(Tensor({cfg.layer_channels[l], p, p}));
    state.push_back({zero, zero});
    cells.push_back(cell(Stack::encoder, l));
  }
  for (const Var& frame : frames) {
    std::optional<Var> x = frame;
    for (std::size_t l = 0; l < cells.size(); ++l) {
      state[l] = cell_step(cells[l], x, state[l]);
      x = state[l].h;
    }
  }
  return state;
}

std::vector<Var> ModelGraph::decode(Stack stack, std::vector<StateVars> state, bool conditioned,
                                    std::size_t steps) {
  const auto& cfg = model_.config();
  if (steps < 1) throw UsageError("decode: steps must be >= 1");
  if (state.size() != cfg.layer_channels.size())
    throw ConfigError("decode: encoding has " + std::to_string(state.size()) +
                      " layers, decoder has " + std::to_string(cfg.layer_channels.size()));
  std::vector<CellVars> cells;
  for (std::size_t l = 0; l < state.size(); ++l) cells.push_back(cell(stack, l));
  Var w_out = tape_.parameter(CompositeModel::output_name(stack, "W"));
  Var b_out = tape_.parameter(CompositeModel::output_name(stack, "b"));

  std::vector<Var> outputs;
  std::optional<Var> feedback;
  for (std::size_t t = 0; t < steps; ++t) {
    std::optional<Var> x = conditioned ? feedback : std::nullopt;
    std::vector<Var> hidden;
    for (std::size_t l = 0; l < cells.size(); ++l) {
      state[l] = cell_step(cells[l], x, state[l]);
      x = state[l].h;
      hidden.push_back(state[l].h);
    }
    Var z = ad::conv2d_same(ad::concat_channels(hidden), w_out, b_out);
    Var y = cfg.output_nonlinearity == OutputNonlinearity::sigmoid ? ad::sigmoid(z) : ad::relu(z);
    outputs.push_back(y);
    feedback = y;
  }
  return outputs;
}

// ---- value-level API ----

namespace {

void check_sequence(const NetworkConfig& cfg, const Tensor& seq, std::size_t len, const char* what) {
  const Shape expected{len, 1, cfg.frame_side, cfg.frame_side};
  if (seq.shape() != expected)
    throw ConfigError(std::string(what) + " has shape " + shape_string(seq.shape()) +
                      ", expected " + shape_string(expected));
}

std::vector<Var> patch_frames(Tape& tape, const NetworkConfig& cfg, const Tensor& seq) {
  std::vector<Var> out;
  for (std::size_t t = 0; t < seq.dim(0); ++t)
    out.push_back(tape.constant(patchify(seq.slice(t), cfg.patch_factor)));
  return out;
}

Tensor frames_from(const NetworkConfig& cfg, std::span<const Var> outputs, bool reversed) {
  std::vector<Tensor> frames;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const Var& v = reversed ? outputs[outputs.size() - 1 - i] : outputs[i];
    frames.push_back(unpatchify(v.value(), cfg.patch_factor));
  }
  return stack(frames);
}

struct CompositeGraph {
  std::vector<Var> reconstruction;  // emission order (reverse chronological)
  std::vector<Var> prediction;
  Var loss;
  std::optional<Var> reconstruction_loss;
  Var prediction_loss;
};

Var sum_of(std::span<const Var> terms) {
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return acc;
}

CompositeGraph build_composite(Tape& tape, const CompositeModel& model, const Tensor& input_seq,
                               const Tensor& target_future) {
  const auto& cfg = model.config();
  check_sequence(cfg, input_seq, cfg.input_len, "input sequence");
  check_sequence(cfg, target_future, cfg.output_len, "target sequence");
  ModelGraph graph(tape, model);
  auto inputs = patch_frames(tape, cfg, input_seq);
  auto targets = patch_frames(tape, cfg, target_future);
  auto encoding = graph.encode(inputs);

  CompositeGraph out;
  out.prediction = graph.decode(Stack::future, encoding, cfg.conditioned, cfg.output_len);
  std::vector<Var> pred_terms;
  for (std::size_t t = 0; t < cfg.output_len; ++t)
    pred_terms.push_back(ad::mse(out.prediction[t], targets[t]));
  Var pred_sum = sum_of(pred_terms);
  out.prediction_loss = ad::scale(pred_sum, 1.0 / static_cast<double>(cfg.output_len));

  if (!cfg.composite) {
    out.loss = out.prediction_loss;
    return out;
  }
  out.reconstruction = graph.decode(Stack::past, encoding, false, cfg.input_len);
  std::vector<Var> rec_terms;
  for (std::size_t j = 0; j < cfg.input_len; ++j)
    rec_terms.push_back(ad::mse(out.reconstruction[j], inputs[cfg.input_len - 1 - j]));
  Var rec_sum = sum_of(rec_terms);
  out.reconstruction_loss = ad::scale(rec_sum, 1.0 / static_cast<double>(cfg.input_len));
  out.loss = ad::scale(ad::add(rec_sum, pred_sum),
                       1.0 / static_cast<double>(cfg.input_len + cfg.output_len));
  return out;
}

CompositeResult result_of(const NetworkConfig& cfg, const CompositeGraph& g) {
  CompositeResult r;
  if (!g.reconstruction.empty()) r.reconstruction = frames_from(cfg, g.reconstruction, true);
  r.prediction = frames_from(cfg, g.prediction, false);
  r.loss = g.loss.value()[0];
  r.prediction_loss = g.prediction_loss.value()[0];
  if (g.reconstruction_loss) r.reconstruction_loss = g.reconstruction_loss->value()[0];
  return r;
}

}  // namespace

std::vector<CellState> encode(const CompositeModel& model, const Tensor& input_seq) {
  const auto& cfg = model.config();
  if (input_seq.rank() != 4 || input_seq.dim(0) < 1)
    throw UsageError("encode: expected a non-empty [T,1,S,S] sequence");
  check_sequence(cfg, input_seq, input_seq.dim(0), "input sequence");
  Tape tape(&model.parameters());
  ModelGraph graph(tape, model);
  auto state = graph.encode(patch_frames(tape, cfg, input_seq));
  std::vector<CellState> out;
  for (const auto& s : state) out.push_back({s.h.value(), s.c.value()});
  return out;
}

Tensor decode(const CompositeModel& model, std::span<const CellState> encoding, DecodeMode mode,
              std::size_t steps) {
  const auto& cfg = model.config();
  if (mode == DecodeMode::past && !cfg.composite)
    throw UsageError("decode: the baseline model has no past decoder");
  Tape tape(&model.parameters());
  ModelGraph graph(tape, model);
  std::vector<StateVars> state;
  for (const auto& s : encoding) state.push_back({tape.constant(s.h), tape.constant(s.c)});
  const Stack stack = mode == DecodeMode::past ? Stack::past : Stack::future;
  auto outputs = graph.decode(stack, std::move(state), mode == DecodeMode::future_conditioned, steps);
  return frames_from(cfg, outputs, mode == DecodeMode::past);
}

CompositeResult forward_composite(const CompositeModel& model, const Tensor& input_seq,
                                  const Tensor& target_future) {
  Tape tape(&model.parameters());
  auto g = build_composite(tape, model, input_seq, target_future);
  return result_of(model.config(), g);
}

LossAndGradients loss_and_gradients(const CompositeModel& model, const Tensor& input_seq,
                                    const Tensor& target_future) {
  Tape tape(&model.parameters());
  auto g = build_composite(tape, model, input_seq, target_future);
  LossAndGradients out{result_of(model.config(), g), tape.backward(g.loss)};
  return out;
}

}  // namespace convlstm
