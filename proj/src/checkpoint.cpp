#include "xdistill/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace xdistill {

namespace {

constexpr char kMagic[4] = {'X', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t at = 0;

  void need(size_t n, const std::string& what) {
    check(at + n <= buf.size(), "checkpoint: truncated file while reading " + what);
  }
  uint32_t u32(const std::string& what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[at++])) << (8 * i);
    return v;
  }
  uint64_t u64(const std::string& what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[at++])) << (8 * i);
    return v;
  }
  double f64(const std::string& what) {
    const uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string bytes(size_t n, const std::string& what) {
    need(n, what);
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    check(t.defined(), "checkpoint: undefined tensor '" + name + "'");
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
    for (double v : t.data()) put_f64(out, v);
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    check(f.good(), "checkpoint: cannot open '" + tmp + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    check(f.good(), "checkpoint: write to '" + tmp + "' failed");
  }
  check(std::rename(tmp.c_str(), path.c_str()) == 0,
        "checkpoint: rename to '" + path + "' failed");
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "checkpoint: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  check(r.bytes(4, "magic") == std::string(kMagic, 4),
        "checkpoint: '" + path + "' has wrong magic bytes");
  const uint32_t version = r.u32("version");
  check(version == kVersion, "checkpoint: unsupported format version " +
                                 std::to_string(version));
  const uint64_t count = r.u64("tensor count");

  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32("name length");
    std::string name = r.bytes(name_len, "name");
    const uint32_t rank = r.u32("rank");
    check(rank >= 1 && rank <= 8, "checkpoint: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(r.u64("dims"));
    const int64_t n = numel_of(shape);
    std::vector<double> values(static_cast<size_t>(n));
    for (int64_t v = 0; v < n; ++v) values[static_cast<size_t>(v)] = r.f64("payload");
    tensors.emplace_back(std::move(name), Tensor::from_values(shape, std::move(values)));
  }
  check(r.at == buf.size(), "checkpoint: trailing bytes in '" + path + "'");
  return tensors;
}

}  // namespace xdistill
