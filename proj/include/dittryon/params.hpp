#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dittryon/autodiff.hpp"
#include "dittryon/tensor.hpp"

namespace dittryon {

/// Named parameter tensors. Names are "<section>/<path>", e.g.
/// "tryonnet/block0/attn.wq"; the section prefix doubles as the checkpoint
/// section tag.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void set(const std::string& name, Tensor value) { params_.insert_or_assign(name, std::move(value)); }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void erase_section(std::string_view section);

  std::size_t size() const { return params_.size(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

  /// All entries whose name starts with "<section>/".
  ParamStore section(std::string_view section) const;
  void merge(const ParamStore& other);

  /// SHA-256 over names, shapes and raw bytes of the given sections (all if empty).
  std::string digest(const std::vector<std::string>& sections = {}) const;

 private:
  Map params_;
};

bool in_section(std::string_view name, std::string_view section);

/// Parameters recorded as tape leaves for one step.
class BoundParams {
 public:
  /// Leaves in `trainable_sections` are recorded with requires_grad.
  BoundParams(Tape& tape, const ParamStore& store, const std::vector<std::string>& trainable_sections);

  const Var& operator()(const std::string& name) const;
  Tape& tape() const { return *tape_; }

  /// Collects gradients for the trainable leaves, keyed by parameter name.
  std::map<std::string, Tensor> gradients(const GradientMap& grads) const;

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
  std::vector<std::string> trainable_;
};

// Checkpoint file: little-endian "TVTW", u32 version, u32 count, then per
// tensor u32 name length, UTF-8 name, u32 rank, u64 extents, f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ParamStore& store);
ParamStore decode_checkpoint(std::string_view bytes);
void write_checkpoint(const std::filesystem::path& path, const ParamStore& store);
ParamStore read_checkpoint(const std::filesystem::path& path);

/// Writes to "<path>.tmp" then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);

}  // namespace dittryon
