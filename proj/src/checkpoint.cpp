#include "convlstm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "convlstm/errors.hpp"

namespace convlstm {
namespace {

constexpr const char* kMagic = "CONVLSTM-CKPT v1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  std::string line() {
    auto nl = bytes_.find('\n', pos_);
    if (nl == std::string::npos) fail("unexpected end of header");
    std::string s = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return s;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(origin_ + ": " + what + " (offset " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
  }

  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const CompositeModel& model) {
  std::string out = std::string(kMagic) + "\n";
  auto kv = model.config().to_key_values();
  out += "config " + std::to_string(kv.size()) + "\n";
  out += format_key_values(kv);
  const auto& params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    const auto& value = params.value(i);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(value.rank()));
    for (auto d : value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : value.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

CompositeModel parse_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.line() != kMagic) r.fail("missing CONVLSTM-CKPT v1 header");
  auto count_line = r.line();
  if (count_line.rfind("config ", 0) != 0) r.fail("expected `config <N>`");
  std::size_t n_kv = 0;
  try {
    n_kv = parse_count("config", count_line.substr(7));
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  std::string kv_text;
  for (std::size_t i = 0; i < n_kv; ++i) kv_text += r.line() + "\n";
  NetworkConfig cfg;
  try {
    cfg = NetworkConfig::from_key_values(parse_key_values(kv_text, origin));
  } catch (const ConfigError& e) {
    r.fail(std::string("bad config preamble: ") + e.what());
  }

  ParameterSet params;
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t t = 0; t < n_tensors; ++t) {
    std::string name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) r.fail("bad rank for tensor " + name);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      if (shape.back() == 0) r.fail("zero dimension in tensor " + name);
    }
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(r.u32()));
    params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  try {
    return CompositeModel(std::move(cfg), std::move(params));
  } catch (const ConfigError& e) {
    throw DataError(origin + ": " + e.what());
  }
}

void save_checkpoint(const CompositeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const auto bytes = checkpoint_bytes(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

CompositeModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path.string());
}

}  // namespace convlstm
