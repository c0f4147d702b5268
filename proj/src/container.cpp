#include "gjem/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gjem/errors.hpp"

namespace gjem {
namespace {

constexpr char kMagic[4] = {'G', 'J', 'E', 'M'};
// Refuse absurd sizes before allocating.
constexpr std::uint64_t kMaxNameLength = 1u << 16;
constexpr std::uint64_t kMaxRank = 16;

std::uint64_t fnv1a(std::span<const char> bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

void put_u64(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::span<const char> bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::uint64_t n) {
    need(n, "name");
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > remaining()) {
      throw IoError(std::string("truncated container while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_container(std::span<const Record> records) {
  std::vector<char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kContainerVersion);
  put_u64(out, records.size());
  for (const Record& r : records) {
    put_u64(out, r.name.size());
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u64(out, r.value.rank());
    for (std::size_t e : r.value.shape()) put_u64(out, e);
    for (double v : r.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  put_u64(out, fnv1a(out));
  return out;
}

std::vector<Record> decode_container(std::span<const char> bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 8) throw IoError("container too short to be valid");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("bad magic: not a GJEM container");
  const std::span<const char> body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.subspan(bytes.size() - 8));
  const std::uint64_t stored = tail.u64();

  Reader r(body);
  r.str(sizeof(kMagic));
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) throw IoError("unsupported container version " + std::to_string(version));
  const std::uint64_t count = r.u64();
  std::vector<Record> records;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = r.u64();
    if (name_len > kMaxNameLength) throw IoError("record name length out of range");
    std::string name = r.str(name_len);
    const std::uint64_t rank = r.u64();
    if (rank > kMaxRank) throw IoError("record rank out of range in '" + name + "'");
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& e : shape) {
      e = r.u64();
      if (e == 0 || e > r.remaining()) throw IoError("record extent out of range in '" + name + "'");
      n *= e;
    }
    if (n > r.remaining() / 8) throw IoError("truncated payload in record '" + name + "'");
    std::vector<double> data(n);
    for (double& v : data) v = r.f64();
    records.push_back(Record{std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (r.remaining() != 0) throw IoError("trailing bytes after last record");
  if (fnv1a(body) != stored) throw IoError("container checksum mismatch");
  return records;
}

void write_container(const std::filesystem::path& path, std::span<const Record> records) {
  const std::vector<char> bytes = encode_container(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Record> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_container(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

const Record* try_find_record(std::span<const Record> records, std::string_view name) {
  for (const Record& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const Tensor& find_record(std::span<const Record> records, std::string_view name) {
  const Record* r = try_find_record(records, name);
  if (r == nullptr) throw IoError("missing record '" + std::string(name) + "'");
  return r->value;
}

Record text_record(std::string name, std::string_view text) {
  std::vector<double> data;
  data.reserve(text.size() + 1);
  data.push_back(static_cast<double>(text.size()));
  for (unsigned char c : text) data.push_back(static_cast<double>(c));
  return Record{std::move(name), Tensor::vector(std::move(data))};
}

std::string record_text(const Tensor& value) {
  if (value.rank() != 1 || value[0] != static_cast<double>(value.size() - 1)) {
    throw IoError("malformed text record");
  }
  std::string out;
  out.reserve(value.size() - 1);
  for (std::size_t i = 1; i < value.size(); ++i) {
    const double c = value[i];
    if (!(c >= 0.0 && c <= 255.0) || c != static_cast<double>(static_cast<int>(c))) {
      throw IoError("malformed text record");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace gjem
