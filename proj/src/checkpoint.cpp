#include "vqtts/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace vqtts {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', 'Q', 'T', 'T', 'S', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <class T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}
  template <class T>
  T pod() {
    T v;
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1u << 30)) throw CheckpointError(name_ + ": corrupt string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CheckpointError(name_ + ": truncated checkpoint");
  }

 private:
  std::istream& in_;
  std::string name_;
};

}  // namespace

void Checkpoint::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("checkpoint: duplicate tensor " + name);
  tensors.emplace_back(std::move(name), std::move(value));
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint (" + kind + ") has no tensor " + name);
}

void Checkpoint::add_params(const std::string& prefix, const ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) add(prefix + params[i].name, params[i].value);
}

void Checkpoint::load_params(const std::string& prefix, ParameterSet& params) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = get(prefix + params[i].name);
    if (t.shape() != params[i].value.shape()) {
      throw CheckpointError("checkpoint tensor " + prefix + params[i].name + " has shape " + shape_str(t.shape()) +
                            ", model expects " + shape_str(params[i].value.shape()));
    }
    params[i].value = t;
  }
}

void Checkpoint::add_optimizer(const std::string& prefix, const Optimizer& opt, const ParameterSet& params) {
  meta[prefix + "steps"] = opt.steps();
  const auto& m = opt.first_moments();
  const auto& v = opt.second_moments();
  for (std::size_t i = 0; i < m.size() && i < params.size(); ++i) {
    add(prefix + "m." + params[i].name, m[i]);
    add(prefix + "v." + params[i].name, v[i]);
  }
}

void Checkpoint::load_optimizer(const std::string& prefix, Optimizer& opt, const ParameterSet& params) const {
  const long steps = meta.value(prefix + "steps", 0L);
  std::vector<Tensor> m, v;
  if (contains(prefix + "m." + (params.size() ? params[0].name : std::string()))) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.push_back(get(prefix + "m." + params[i].name));
      v.push_back(get(prefix + "v." + params[i].name));
    }
  }
  opt.restore(steps, std::move(m), std::move(v));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling file first so an interrupted save never leaves a torn checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    Writer w(out);
    out.write(kMagic, sizeof kMagic);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.str(ckpt.kind);
    w.str(ckpt.meta.dump());
    w.pod<std::uint64_t>(ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
      w.str(name);
      w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) w.pod<std::uint64_t>(d);
      out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string name = path.string();
  Reader r(in, name);
  char magic[sizeof kMagic];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError(name + " is not a checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(name + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.kind = r.str();
  if (!expected_kind.empty() && ckpt.kind != expected_kind) {
    throw CheckpointError(name + " holds a " + ckpt.kind + " model, expected " + expected_kind);
  }
  try {
    ckpt.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(name + ": corrupt metadata (" + e.what() + ")");
  }
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string tname = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw CheckpointError(name + ": corrupt tensor rank for " + tname);
    Shape shape(rank);
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    std::vector<double> data(shape_size(shape));
    r.read(reinterpret_cast<char*>(data.data()), data.size() * sizeof(double));
    ckpt.tensors.emplace_back(std::move(tname), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

}  // namespace vqtts
