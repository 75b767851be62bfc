#include "dittryon/params.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dittryon {

bool in_section(std::string_view name, std::string_view section) {
  return name.size() > section.size() && name.substr(0, section.size()) == section && name[section.size()] == '/';
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get_mut(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::erase_section(std::string_view section) {
  std::erase_if(params_, [&](const auto& kv) { return in_section(kv.first, section); });
}

ParamStore ParamStore::section(std::string_view section) const {
  ParamStore out;
  for (const auto& [name, t] : params_) {
    if (in_section(name, section)) out.set(name, t);
  }
  return out;
}

void ParamStore::merge(const ParamStore& other) {
  for (const auto& [name, t] : other) set(name, t);
}

std::string ParamStore::digest(const std::vector<std::string>& sections) const {
  ParamStore subset;
  if (sections.empty()) {
    subset = *this;
  } else {
    for (const auto& s : sections) subset.merge(section(s));
  }
  return sha256_hex(encode_checkpoint(subset));
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, const std::vector<std::string>& trainable_sections)
    : tape_(&tape), trainable_(trainable_sections) {
  for (const auto& [name, t] : store) {
    const bool train = std::any_of(trainable_sections.begin(), trainable_sections.end(),
                                   [&](const std::string& s) { return in_section(name, s); });
    vars_.emplace(name, tape.leaf(t, train));
  }
}

const Var& BoundParams::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("parameter '" + name + "' is not bound");
  return it->second;
}

std::map<std::string, Tensor> BoundParams::gradients(const GradientMap& grads) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : vars_) {
    if (var.requires_grad()) out.emplace(name, grads[var]);
  }
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::string& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamStore& store) {
  std::string out = "TVTW";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

ParamStore decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != "TVTW") throw CheckpointError("bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name(r.take(len));
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.get<double>();
    store.set(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return store;
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  atomic_write(path, encode_checkpoint(store));
}

ParamStore read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

}  // namespace dittryon
