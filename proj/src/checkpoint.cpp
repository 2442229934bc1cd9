#include "isgan/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <ATen/CPUGeneratorImpl.h>

#include "isgan/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace isgan {
namespace {

constexpr char kMagic[8] = {'I', 'S', 'G', 'A', 'N', 'C', 'K', 'P'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    case torch::kBool: return "bool";
    default: throw RuntimeFault(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  if (name == "bool") return torch::kBool;
  throw DataError("checkpoint: unknown dtype " + name);
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void Checkpoint::save(const fs::path& file) const {
  json header = {{"version", version},       {"stage", stage},
                 {"epoch", epoch},           {"config_hash", config_hash},
                 {"sampler_rng", sampler_rng}, {"metadata", metadata}};
  json blocks_json = json::array();
  std::vector<torch::Tensor> payload;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : blocks) {
    auto c = t.detach().cpu().contiguous();
    const std::uint64_t nbytes = c.numel() * c.element_size();
    blocks_json.push_back({{"name", name},
                           {"dtype", dtype_name(c.scalar_type())},
                           {"shape", c.sizes().vec()},
                           {"offset", offset},
                           {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(c);
  }
  header["blocks"] = blocks_json;
  const std::string text = header.dump();

  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFault("cannot write checkpoint " + file.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, version);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& c : payload) {
      out.write(static_cast<const char*>(c.data_ptr()),
                static_cast<std::streamsize>(c.numel() * c.element_size()));
    }
    if (!out) throw RuntimeFault("short write on checkpoint " + file.string());
  }
  fs::rename(tmp, file);
}

Checkpoint Checkpoint::load(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + file.string());
  }
  Checkpoint ckpt;
  ckpt.version = read_pod<std::uint32_t>(in);
  if (ckpt.version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version) + " in " +
                    file.string());
  }
  const auto header_len = read_pod<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated checkpoint header: " + file.string());
  json header;
  try {
    header = json::parse(text);
    ckpt.stage = header.at("stage").get<int>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.config_hash = header.at("config_hash").get<std::string>();
    ckpt.sampler_rng = header.value("sampler_rng", "");
    ckpt.metadata = header.value("metadata", json::object());
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint header in " + file.string() + ": " + e.what());
  }
  const auto data_start = in.tellg();
  for (const auto& b : header.at("blocks")) {
    const auto shape = b.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(b.at("dtype"))));
    const auto nbytes = b.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size())) {
      throw DataError("checkpoint block size mismatch: " + b.at("name").get<std::string>());
    }
    in.seekg(data_start + static_cast<std::streamoff>(b.at("offset").get<std::uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw DataError("truncated checkpoint block " + b.at("name").get<std::string>());
    ckpt.blocks.emplace(b.at("name").get<std::string>(), t);
  }
  return ckpt;
}

void store_module(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& p : module.named_parameters()) ckpt.blocks[prefix + p.key()] = p.value().detach().clone();
  for (const auto& b : module.named_buffers()) ckpt.blocks[prefix + b.key()] = b.value().detach().clone();
}

void restore_module(const Checkpoint& ckpt, torch::nn::Module& module, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    auto it = ckpt.blocks.find(prefix + name);
    if (it == ckpt.blocks.end()) throw DataError("checkpoint lacks block " + prefix + name);
    if (it->second.sizes() != dst.sizes()) {
      throw DataError("checkpoint block " + prefix + name + " has a different shape");
    }
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters()) copy(p.key(), p.value());
  for (auto& b : module.named_buffers()) copy(b.key(), b.value());
}

void store_torch_rng(Checkpoint& ckpt) {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  ckpt.blocks["rng.torch"] = gen.get_state().clone();
}

void restore_torch_rng(const Checkpoint& ckpt) {
  auto it = ckpt.blocks.find("rng.torch");
  if (it == ckpt.blocks.end()) throw DataError("checkpoint lacks block rng.torch");
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(it->second);
}

}  // namespace isgan
