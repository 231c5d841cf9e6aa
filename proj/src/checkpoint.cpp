#include "sslab/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "sslab/error.hpp"

namespace sslab {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'L', '1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t x) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(x >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8, "integer");
    std::uint64_t x = 0;
    for (int b = 0; b < 8; ++b) x |= static_cast<std::uint64_t>(bytes_[offset_ + b]) << (8 * b);
    offset_ += 8;
    return x;
  }

  void f64s(std::span<double> out) {
    need(out.size() * 8, "array");
    for (double& d : out) {
      std::uint64_t x = 0;
      for (int b = 0; b < 8; ++b) x |= static_cast<std::uint64_t>(bytes_[offset_ + b]) << (8 * b);
      offset_ += 8;
      d = std::bit_cast<double>(x);
      if (!std::isfinite(d)) fail("non-finite value", offset_ - 8);
    }
  }

  void magic() {
    need(4, "magic");
    if (std::memcmp(bytes_.data(), kMagic, 4) != 0) fail("bad magic", 0);
    offset_ = 4;
  }

  void finish() const {
    if (offset_ != bytes_.size()) fail("trailing bytes", offset_);
  }

  std::size_t offset() const { return offset_; }

  [[noreturn]] static void fail(const std::string& what, std::size_t at) {
    throw Error(ErrorCode::kCorruptCheckpoint,
                "corrupt checkpoint: " + what + " at offset " + std::to_string(at));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - offset_ < n) fail(std::string("truncated ") + what, offset_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const PolicyParams& params, const OptimizerState& opt) {
  if (opt.first_moment.shape != params.shape || opt.second_moment.shape != params.shape)
    throw Error(ErrorCode::kInvalidArgument, "optimizer state shape does not match parameters");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  const ModelShape& s = params.shape;
  for (int field : {s.vocab, s.context, s.embed, s.hidden})
    put_u64(out, static_cast<std::uint64_t>(static_cast<std::int64_t>(field)));
  put_u64(out, opt.step);
  for (const PolicyParams* p : {&params, &opt.first_moment, &opt.second_moment})
    for (auto arr : p->arrays())
      for (double d : arr) put_u64(out, std::bit_cast<std::uint64_t>(d));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic();
  ModelShape shape;
  int* fields[] = {&shape.vocab, &shape.context, &shape.embed, &shape.hidden};
  for (int* f : fields) {
    const std::size_t at = r.offset();
    const auto v = static_cast<std::int64_t>(r.u64());
    if (v < 1 || v > (1 << 20)) Reader::fail("implausible shape field", at);
    *f = static_cast<int>(v);
  }
  const std::uint64_t step = r.u64();
  try {
    shape.validate();
  } catch (const Error&) {
    Reader::fail("invalid shape", 4);
  }
  Checkpoint ck{PolicyParams::zeros(shape), OptimizerState::fresh(shape)};
  ck.optimizer.step = step;
  for (PolicyParams* p : {&ck.params, &ck.optimizer.first_moment, &ck.optimizer.second_moment})
    for (auto arr : p->arrays()) r.f64s(arr);
  r.finish();
  return ck;
}

void save_checkpoint(const PolicyParams& params, const OptimizerState& opt,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, opt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // write-then-rename so a checkpoint file is either complete or absent
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorCode::kIo, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace sslab
