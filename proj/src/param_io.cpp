// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/param_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace acrs::io {
namespace {

constexpr char kMagic[4] = {'A', 'C', 'R', 'S'};
constexpr std::uint32_t kMaxRank = 8;

static_assert(std::endian::native == std::endian::little, "ACRS I/O assumes a little-endian host");

class Out {
 public:
  explicit Out(const std::string& path) : path_(path), f_(path, std::ios::binary | std::ios::trunc) {
    require(f_.good(), ErrorKind::kIo, "cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) {
    f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    require(f_.good(), ErrorKind::kIo, "write failed on '" + path_ + "'");
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void record(const std::string& name, Dtype dtype, const Shape& shape, const void* payload, std::size_t n) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(dtype));
    u32(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) u32(static_cast<std::uint32_t>(d));
    bytes(payload, n);
  }
  void tensor(const std::string& name, const Tensor& t, Dtype dtype) {
    if (dtype == Dtype::kF64) {
      record(name, dtype, t.shape(), t.data(), static_cast<std::size_t>(t.size()) * 8);
    } else {
      std::vector<float> f(t.values().begin(), t.values().end());
      record(name, dtype, t.shape(), f.data(), f.size() * 4);
    }
  }
  void text(const std::string& name, const std::string& s) {
    record(name, Dtype::kText, {static_cast<int>(s.size())}, s.data(), s.size());
  }

 private:
  std::string path_;
  std::ofstream f_;
};

class In {
 public:
  explicit In(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    require(f_.good(), ErrorKind::kIo, "cannot open '" + path + "'");
  }
  void bytes(void* p, std::size_t n) {
    f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    require(static_cast<std::size_t>(f_.gcount()) == n, ErrorKind::kIo, "'" + path_ + "' is truncated");
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, 4);
    return v;
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream f_;
};

struct Record {
  std::string name;
  Dtype dtype;
  Tensor tensor;
  std::string text;
};

Record read_record(In& in) {
  Record r;
  const std::uint32_t len = in.u32();
  require(len > 0 && len < 4096, ErrorKind::kIo, "corrupt record name length in '" + in.path() + "'");
  r.name.resize(len);
  in.bytes(r.name.data(), len);
  const std::uint32_t code = in.u32();
  require(code <= 2, ErrorKind::kIo, "unknown dtype code " + std::to_string(code) + " for '" + r.name + "'");
  r.dtype = static_cast<Dtype>(code);
  const std::uint32_t rank = in.u32();
  require(rank <= kMaxRank, ErrorKind::kIo, "corrupt rank for '" + r.name + "'");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = in.u32();
    require(d < (1u << 28), ErrorKind::kIo, "corrupt dimension for '" + r.name + "'");
    shape.push_back(static_cast<int>(d));
  }
  const auto n = static_cast<std::size_t>(shape_size(shape));
  if (r.dtype == Dtype::kText) {
    require(rank == 1, ErrorKind::kIo, "text record '" + r.name + "' must have rank 1");
    r.text.resize(n);
    in.bytes(r.text.data(), n);
  } else if (r.dtype == Dtype::kF64) {
    r.tensor = Tensor(shape);
    in.bytes(r.tensor.data(), n * 8);
  } else {
    std::vector<float> f(n);
    in.bytes(f.data(), n * 4);
    r.tensor = Tensor(shape, std::vector<double>(f.begin(), f.end()));
  }
  return r;
}

}  // namespace

void save(const std::string& path, const ModelConfig& cfg, const ParamStore& store, Dtype dtype,
          const std::map<std::string, Tensor>& extra, const std::string& train_state) {
  require(dtype == Dtype::kF32 || dtype == Dtype::kF64, ErrorKind::kConfig, "parameters must be f32 or f64");
  validate_params(store, cfg);
  const nlohmann::json config_json = cfg.to_map();
  const std::size_t count = 1 + store.params().size() + store.buffers().size() + extra.size() +
                            (train_state.empty() ? 0 : 1);
  const std::string tmp = path + ".tmp";
  {
    Out out(tmp);
    out.bytes(kMagic, 4);
    out.u32(kFormatVersion);
    out.u32(static_cast<std::uint32_t>(count));
    out.text("__config__", config_json.dump());
    if (!train_state.empty()) out.text("__train__", train_state);
    for (const auto& [name, t] : store.params()) out.tensor("param/" + name, t, dtype);
    for (const auto& [name, t] : store.buffers()) out.tensor("buffer/" + name, t, dtype);
    for (const auto& [name, t] : extra) out.tensor("extra/" + name, t, Dtype::kF64);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorKind::kIo, "cannot move '" + tmp + "' into place");
}

ParamFile load(const std::string& path, const ModelConfig* expected) {
  In in(path);
  char magic[4];
  in.bytes(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::kIo, "'" + path + "' is not an ACRS file");
  const std::uint32_t version = in.u32();
  require(version == kFormatVersion, ErrorKind::kIo,
          "'" + path + "' has format version " + std::to_string(version) + ", expected " +
              std::to_string(kFormatVersion));
  const std::uint32_t count = in.u32();
  ParamFile pf;
  bool have_config = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r = read_record(in);
    if (i == 0) {
      require(r.name == "__config__" && r.dtype == Dtype::kText, ErrorKind::kIo,
              "'" + path + "' does not start with a config record");
      std::map<std::string, std::string> kv;
      try {
        kv = nlohmann::json::parse(r.text).get<std::map<std::string, std::string>>();
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kIo, "malformed config record in '" + path + "': " + e.what());
      }
      pf.config = ModelConfig::from_map(kv);
      have_config = true;
    } else if (r.name == "__train__") {
      pf.train_state = r.text;
    } else if (r.name.rfind("param/", 0) == 0) {
      pf.store.params()[r.name.substr(6)] = std::move(r.tensor);
    } else if (r.name.rfind("buffer/", 0) == 0) {
      pf.store.buffers()[r.name.substr(7)] = std::move(r.tensor);
    } else if (r.name.rfind("extra/", 0) == 0) {
      pf.extra[r.name.substr(6)] = std::move(r.tensor);
    } else {
      fail(ErrorKind::kIo, "unexpected record '" + r.name + "' in '" + path + "'");
    }
  }
  require(have_config, ErrorKind::kIo, "'" + path + "' holds no records");
  if (expected)
    require(*expected == pf.config, ErrorKind::kShape, "'" + path + "' was written for a different model config");
  validate_params(pf.store, pf.config);
  for (const auto& [name, t] : pf.store.params())
    require(t.all_finite(), ErrorKind::kNumeric, "parameter '" + name + "' in '" + path + "' is not finite");
  return pf;
}

}  // namespace acrs::io
