#include "arm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace arm {

namespace {

constexpr char kMagic[8] = {'A', 'R', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <class T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void f64s(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, const std::string& source) : data_(data), source_(source) {}

  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n)
      throw FormatError(source_ + ": truncated checkpoint while reading " + what + " at byte " +
                        std::to_string(pos_));
  }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <class T>
  T uint(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  std::string str(const char* what) { return raw(uint<std::uint32_t>(what), what); }
  void f64s(std::vector<double>& v, const char* what) {
    need(v.size() * 8, what);
    for (auto& x : v) x = f64(what);
  }
  bool at_end() const { return pos_ == data_.size(); }
  FormatError error(const std::string& why) const { return FormatError(source_ + ": " + why); }

 private:
  const std::string& data_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const Checkpoint& ck) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint(kCheckpointVersion);
  w.uint(static_cast<std::uint32_t>(ck.header.size()));
  for (const auto& [k, v] : ck.header) w.str(k), w.str(v);
  w.uint(static_cast<std::uint32_t>(ck.vocab.size()));
  for (const auto& t : ck.vocab.tokens()) w.str(t);
  w.uint(static_cast<std::uint64_t>(ck.store.size()));
  for (const auto& [path, p] : ck.store) {
    w.str(path);
    w.uint(static_cast<std::uint32_t>(p.shape.size()));
    for (auto e : p.shape) w.uint(static_cast<std::uint64_t>(e));
    w.f64s(p.value);
  }
  w.uint(static_cast<std::uint64_t>(ck.store.size()));
  for (const auto& [path, p] : ck.store) {
    w.str(path);
    w.f64s(p.sq_grad_avg);
    w.f64s(p.sq_update_avg);
  }
  w.bytes(kTrailer, sizeof kTrailer);
  return w.take();
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.raw(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic))
    throw r.error("not a checkpoint file (bad magic)");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw r.error("checkpoint format version " + std::to_string(version) + " is not supported (expected version " +
                  std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  const auto n_header = r.uint<std::uint32_t>("header size");
  for (std::uint32_t i = 0; i < n_header; ++i) {
    std::string k = r.str("header key");
    ck.header[k] = r.str("header value");
  }
  const auto n_vocab = r.uint<std::uint32_t>("vocabulary size");
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < n_vocab; ++i) tokens.push_back(r.str("vocabulary token"));
  try {
    ck.vocab = Vocab(std::move(tokens));
  } catch (const ContractError& e) {
    throw r.error(std::string("bad vocabulary: ") + e.what());
  }
  const auto n_params = r.uint<std::uint64_t>("parameter count");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    std::string path = r.str("parameter path");
    const auto rank = r.uint<std::uint32_t>("parameter rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.uint<std::uint64_t>("extent")));
    if (ck.store.contains(path)) throw r.error("duplicate parameter " + path);
    std::size_t n = 1;
    for (auto e : shape) {
      if (e == 0 || n > bytes.size() / e) throw r.error("implausible shape for parameter " + path);
      n *= e;
    }
    r.need(n * 8, "parameter values");
    Parameter& p = ck.store.create(path, shape);
    r.f64s(p.value, "parameter values");
  }
  const auto n_acc = r.uint<std::uint64_t>("accumulator count");
  if (n_acc != n_params) throw r.error("accumulator count does not match parameter count");
  for (std::uint64_t i = 0; i < n_acc; ++i) {
    const std::string path = r.str("accumulator path");
    if (!ck.store.contains(path)) throw r.error("accumulators for unknown parameter " + path);
    Parameter& p = ck.store.at(path);
    r.f64s(p.sq_grad_avg, "accumulator values");
    r.f64s(p.sq_update_avg, "accumulator values");
  }
  if (r.raw(sizeof kTrailer, "trailer") != std::string(kTrailer, sizeof kTrailer)) throw r.error("bad trailer");
  if (!r.at_end()) throw r.error("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const std::string bytes = checkpoint_bytes(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

void restore_parameters(const ParameterStore& loaded, ParameterStore& target) {
  if (loaded.paths() != target.paths()) throw FormatError("checkpoint parameters do not match the model layout");
  for (const auto& [path, p] : loaded)
    if (target.at(path).shape != p.shape)
      throw FormatError("checkpoint parameter " + path + " has shape " + shape_string(p.shape) + ", model expects " +
                        shape_string(target.at(path).shape));
  for (const auto& [path, p] : loaded) {
    Parameter& dst = target.at(path);
    dst.value = p.value;
    dst.sq_grad_avg = p.sq_grad_avg;
    dst.sq_update_avg = p.sq_update_avg;
  }
}

}  // namespace arm
