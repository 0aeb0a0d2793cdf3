#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqtts/nn.hpp"

namespace vqtts {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout: 8-byte magic, u32 version, kind string, JSON metadata, then
// a table of named float64 tensors. Integers are little-endian.
struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;

  // Stores every parameter under prefix + name.
  void add_params(const std::string& prefix, const ParameterSet& params);
  // Overwrites every parameter from prefix + name; shapes must match.
  void load_params(const std::string& prefix, ParameterSet& params) const;
  void add_optimizer(const std::string& prefix, const Optimizer& opt, const ParameterSet& params);
  void load_optimizer(const std::string& prefix, Optimizer& opt, const ParameterSet& params) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws CheckpointError on a bad magic, unsupported version, truncation or
// when the stored kind differs from expected_kind (unless it is empty).
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind = "");

}  // namespace vqtts
