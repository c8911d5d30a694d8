#include "semfuse/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "semfuse/errors.hpp"
#include "semfuse/image_io.hpp"

namespace semfuse {

namespace {

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated in ") + what, pos_);
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const nets::ParameterList& params, std::uint64_t digest) {
  std::vector<unsigned char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, digest);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
    for (double v : t.data()) put_le<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  if (r.str(8, "magic") != std::string(kCheckpointMagic, 8)) throw ParseError("bad checkpoint magic", 0);
  const std::size_t version_at = r.pos();
  if (r.get<std::uint32_t>("version") != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version", version_at);
  }
  Checkpoint ck;
  ck.config_digest = r.get<std::uint64_t>("config digest");
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.get<std::uint32_t>("name length"), "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw ParseError("invalid rank in entry " + e.name, r.pos());
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint64_t>("extent"));
    const std::size_t n = shape_numel(e.shape);
    if (n == 0 || n > (bytes.size() - r.pos()) / sizeof(double)) {
      throw ParseError("entry " + e.name + " extends past end of file", r.pos());
    }
    e.values.reserve(n);
    for (std::size_t k = 0; k < n; ++k) e.values.push_back(r.get<double>("values"));
    ck.entries.push_back(std::move(e));
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint", r.pos());
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const nets::ParameterList& params,
                     std::uint64_t digest) {
  const auto bytes = encode_checkpoint(params, digest);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, const nets::ParameterList& params,
                     std::uint64_t digest) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  const Checkpoint ck = decode_checkpoint(read_file_bytes(path));
  if (ck.config_digest != digest) {
    throw ContractError("checkpoint " + path.string() + " was written for a different network configuration");
  }
  if (ck.entries.size() != params.size()) {
    throw ContractError("checkpoint holds " + std::to_string(ck.entries.size()) + " tensors, network has " +
                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = ck.entries[i];
    Tensor t = params[i].second;
    if (e.name != params[i].first || e.shape != t.shape()) {
      throw ContractError("checkpoint entry " + e.name + " " + shape_str(e.shape) + " does not match " +
                          params[i].first + " " + shape_str(t.shape()));
    }
    std::copy(e.values.begin(), e.values.end(), t.mutable_data().begin());
  }
}

}  // namespace semfuse
