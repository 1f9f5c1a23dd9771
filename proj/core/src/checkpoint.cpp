#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "macd/errors.hpp"
#include "macd/trainer.hpp"

// Layout (all integers little-endian, see docs/checkpoint_format.md):
//   magic "MACDCKPT" | u32 version | u64 config length | config JSON
//   | u64 step | u64 adam_step | u64 accumulated_batches | u64 tensor count
//   | tensors: u32 name length, name, u64 rows, u64 cols, rows*cols f64
//   | u64 FNV-1a hash of every preceding byte
namespace macd {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'D', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void raw(std::string_view s) { out_.append(s); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void tensor(std::string_view name, const DenseMatrix& m) {
    u32(static_cast<std::uint32_t>(name.size()));
    raw(name);
    u64(m.rows());
    u64(m.cols());
    for (double v : m.values()) f64(v);
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::string_view raw(std::size_t n) {
    if (n > in_.size() - pos_) throw IntegrityError("checkpoint truncated");
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    const std::string_view s = raw(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::string_view s = raw(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  DenseMatrix tensor(std::string_view expected_name) {
    const std::uint32_t len = u32();
    const std::string_view name = raw(len);
    if (name != expected_name)
      throw IntegrityError("checkpoint tensor '" + std::string(name) + "' where '" +
                           std::string(expected_name) + "' was expected");
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (cols != 0 && rows > (in_.size() - pos_) / 8 / cols)
      throw IntegrityError("checkpoint tensor '" + std::string(name) + "' overruns the file");
    DenseMatrix m(rows, cols);
    for (double& v : m.values()) v = f64();
    return m;
  }
  bool at_end() const noexcept { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

template <class Params>
std::vector<std::string> tensor_names(const Params& p) {
  std::vector<std::string> names;
  p.for_each_tensor([&](std::string_view n, const DenseMatrix&) { names.emplace_back(n); });
  return names;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(std::string_view(kMagic, sizeof kMagic));
  w.u32(c.format_version);
  const std::string config = to_json(c.config);
  w.u64(config.size());
  w.raw(config);
  w.u64(c.step);
  w.u64(c.optimizer.adam_step);
  w.u64(c.optimizer.accumulated_batches);

  const std::vector<std::string> student = tensor_names(c.params);
  const std::vector<std::string> teacher = tensor_names(c.teacher.text);
  w.u64(student.size() * 4 + teacher.size());
  c.params.for_each_tensor([&](std::string_view n, const DenseMatrix& m) {
    w.tensor("student." + std::string(n), m);
  });
  c.teacher.text.for_each_tensor([&](std::string_view n, const DenseMatrix& m) {
    w.tensor("teacher." + std::string(n), m);
  });
  const std::pair<const char*, const std::vector<DenseMatrix>*> opt_sections[] = {
      {"adam.m.", &c.optimizer.first_moment},
      {"adam.v.", &c.optimizer.second_moment},
      {"accum.", &c.optimizer.grad_accumulator}};
  for (const auto& [prefix, tensors] : opt_sections) {
    if (tensors->size() != student.size())
      throw InputError("optimizer state does not match the encoder tensors");
    for (std::size_t k = 0; k < student.size(); ++k) w.tensor(prefix + student[k], (*tensors)[k]);
  }
  w.u64(fnv1a(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8) throw IntegrityError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw IntegrityError("not a checkpoint file (bad magic)");
  Reader head(bytes.substr(sizeof kMagic));
  const std::uint32_t version = head.u32();
  if (version != Checkpoint::kFormatVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(Checkpoint::kFormatVersion) + ")");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Reader trailer(bytes.substr(bytes.size() - 8));
  if (trailer.u64() != fnv1a(body)) throw IntegrityError("checkpoint checksum mismatch");

  Reader r(body.substr(sizeof kMagic + 4));
  Checkpoint c;
  c.format_version = version;
  const std::uint64_t config_len = r.u64();
  c.config = train_config_from_json(r.raw(config_len));
  c.step = r.u64();
  c.optimizer.adam_step = r.u64();
  c.optimizer.accumulated_batches = r.u64();
  const std::uint64_t count = r.u64();

  // Shapes come from the file; names must follow the configured layout.
  const EncoderParams layout = init_encoders(c.config.encoder, 0);
  const std::vector<std::string> student = tensor_names(layout);
  const std::vector<std::string> teacher = tensor_names(layout.text);
  if (count != student.size() * 4 + teacher.size())
    throw IntegrityError("checkpoint tensor count does not match its configuration");

  c.params.text.config = c.config.encoder.text;
  c.params.image.config = c.config.encoder.image;
  c.params.for_each_tensor(
      [&](std::string_view n, DenseMatrix& m) { m = r.tensor("student." + std::string(n)); });
  c.teacher.text.config = c.config.encoder.text;
  c.teacher.text.for_each_tensor(
      [&](std::string_view n, DenseMatrix& m) { m = r.tensor("teacher." + std::string(n)); });
  const std::pair<const char*, std::vector<DenseMatrix>*> opt_sections[] = {
      {"adam.m.", &c.optimizer.first_moment},
      {"adam.v.", &c.optimizer.second_moment},
      {"accum.", &c.optimizer.grad_accumulator}};
  for (const auto& [prefix, tensors] : opt_sections)
    for (const std::string& n : student) tensors->push_back(r.tensor(prefix + n));
  if (!r.at_end()) throw IntegrityError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace macd
