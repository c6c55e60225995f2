#include <bit>
#include <cstring>

#include "persurv/error.hpp"
#include "persurv/io.hpp"
#include "persurv/policy.hpp"

namespace persurv {

static_assert(std::endian::native == std::endian::little, "parameter files are written little-endian");

namespace {

constexpr char kMagic[8] = {'P', 'S', 'R', 'V', 'P', 'O', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void tensor(const std::string& name, const Tensor& t) {
    put(static_cast<std::uint16_t>(name.size()));
    bytes(name.data(), name.size());
    put(static_cast<std::int32_t>(t.rows()));
    put(static_cast<std::int32_t>(t.cols()));
    bytes(t.data(), t.size() * sizeof(double));
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& s, std::size_t end) : s_(s), end_(end) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string name() {
    const std::size_t n = get<std::uint16_t>();
    need(n);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  void tensor_into(const std::string& expect_name, Tensor& t) {
    const std::string got = name();
    if (got != expect_name) throw Error(ErrorCode::kCorruptFile, "expected block " + expect_name + ", found " + got);
    const int r = get<std::int32_t>(), c = get<std::int32_t>();
    if (r != t.rows() || c != t.cols()) {
      throw Error(ErrorCode::kFormatVersionMismatch, "block " + got + " has an unexpected shape");
    }
    need(t.size() * sizeof(double));
    std::memcpy(t.data(), s_.data() + pos_, t.size() * sizeof(double));
    pos_ += t.size() * sizeof(double);
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error(ErrorCode::kCorruptFile, "parameter file ends early");
  }
  const std::string& s_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string params_to_bytes(const PolicyParams& p) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put(kVersion);
  const PolicyHyper& h = p.hyper;
  w.put(static_cast<std::int32_t>(h.d_h));
  w.put(static_cast<std::int32_t>(h.heads));
  w.put(static_cast<std::int32_t>(h.layers));
  w.put(static_cast<std::int32_t>(h.d_ff));
  w.put(h.clip);
  w.put(static_cast<std::uint8_t>(h.head_projection));
  w.put(h.bn_momentum);
  w.put(h.bn_eps);
  w.put(static_cast<std::uint32_t>(p.block_names().size()));
  for_each_block(h, [&](const std::string& name, const Tensor& t) { w.tensor(name, t); }, p.w);
  for (std::size_t i = 0; i < p.running.size(); ++i) {
    w.tensor("running" + std::to_string(i) + ".mean", p.running[i].mean);
    w.tensor("running" + std::to_string(i) + ".var", p.running[i].var);
  }
  w.put(crc32_of(w.str()));
  return std::move(w.str());
}

PolicyParams params_from_bytes(const std::string& bytes, const PolicyHyper* expect) {
  if (bytes.size() < sizeof(kMagic) + 8) throw Error(ErrorCode::kCorruptFile, "parameter file too short");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc32_of(std::string_view(bytes.data(), body)) != stored) {
    throw Error(ErrorCode::kCorruptFile, "parameter file checksum mismatch");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kCorruptFile, "not a policy parameter file");
  }
  Reader r(bytes, body);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>();
  const std::uint32_t version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw Error(ErrorCode::kFormatVersionMismatch, "parameter file version " + std::to_string(version));
  }
  PolicyHyper h;
  h.d_h = r.get<std::int32_t>();
  h.heads = r.get<std::int32_t>();
  h.layers = r.get<std::int32_t>();
  h.d_ff = r.get<std::int32_t>();
  h.clip = r.get<double>();
  h.head_projection = r.get<std::uint8_t>() != 0;
  h.bn_momentum = r.get<double>();
  h.bn_eps = r.get<double>();
  if (expect && !(*expect == h)) {
    throw Error(ErrorCode::kFormatVersionMismatch,
                "stored hyperparameters (d_h=" + std::to_string(h.d_h) + ") differ from the expected ones");
  }
  try {
    validate(h);
  } catch (const Error& e) {
    throw Error(ErrorCode::kCorruptFile, e.what());
  }
  PolicyParams p = init_params(0, h);
  const std::uint32_t blocks = r.get<std::uint32_t>();
  if (blocks != p.block_names().size()) throw Error(ErrorCode::kCorruptFile, "block count mismatch");
  for_each_block(h, [&](const std::string& name, Tensor& t) { r.tensor_into(name, t); }, p.w);
  for (std::size_t i = 0; i < p.running.size(); ++i) {
    r.tensor_into("running" + std::to_string(i) + ".mean", p.running[i].mean);
    r.tensor_into("running" + std::to_string(i) + ".var", p.running[i].var);
  }
  if (!r.done()) throw Error(ErrorCode::kCorruptFile, "trailing bytes in parameter file");
  return p;
}

void save_params(const PolicyParams& p, const std::filesystem::path& path) {
  write_file_atomic(path, params_to_bytes(p));
}

PolicyParams load_params(const std::filesystem::path& path, const PolicyHyper* expect) {
  return params_from_bytes(read_file(path), expect);
}

}  // namespace persurv
