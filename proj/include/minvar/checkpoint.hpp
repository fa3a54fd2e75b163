#pragma once

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "minvar/pipeline.hpp"

namespace minvar {

inline constexpr char kCheckpointMagic[8] = {'M', 'V', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int omega = 64;
  int dt_in = 1200;
  std::vector<int> mlp_layers = {1, 64, 32, 16, 1};
  std::string config_hash;
  std::string calibration_end;  // ISO date or empty
  std::uint64_t seed = 0;
  int epoch = 0;
};

struct Checkpoint {
  CheckpointMeta meta;
  ModelParams params;

  long long declared_parameter_count() const {
    return bilstm_param_count(meta.omega) + 2753 + 2LL * meta.dt_in;
  }
};

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
  write_bytes(out, &v, sizeof(T));
}

inline void read_bytes(std::ifstream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw std::runtime_error(std::string("checkpoint: truncated file while reading ") + what);
}

template <typename T>
T read_pod(std::ifstream& in, const char* what) {
  T v;
  read_bytes(in, &v, sizeof(T), what);
  return v;
}

}  // namespace detail

/// Container layout: 8-byte magic, u32 version, u64 metadata length, UTF-8
/// JSON metadata, then each named array as (u32 name length, name, u32 rank,
/// u64 dims..., little-endian f64 data), in the canonical parameter order.
inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  detail::write_bytes(out, kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(out, kCheckpointVersion);

  nlohmann::json meta;
  meta["omega"] = ckpt.meta.omega;
  meta["dt_in"] = ckpt.meta.dt_in;
  meta["mlp_layers"] = ckpt.meta.mlp_layers;
  meta["config_hash"] = ckpt.meta.config_hash;
  meta["calibration_end"] = ckpt.meta.calibration_end;
  meta["seed"] = ckpt.meta.seed;
  meta["epoch"] = ckpt.meta.epoch;
  const std::string meta_str = meta.dump();
  detail::write_pod(out, static_cast<std::uint64_t>(meta_str.size()));
  detail::write_bytes(out, meta_str.data(), meta_str.size());

  ModelParams& params = const_cast<ModelParams&>(ckpt.params);
  for (const auto& [name, tensor] : named_parameters(params)) {
    detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    detail::write_bytes(out, name.data(), name.size());
    detail::write_pod(out, static_cast<std::uint32_t>(tensor->rank()));
    for (int d = 0; d < tensor->rank(); ++d)
      detail::write_pod(out, static_cast<std::uint64_t>(tensor->dim(d)));
    detail::write_bytes(out, tensor->data(),
                        sizeof(double) * static_cast<std::size_t>(tensor->size()));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  detail::read_bytes(in, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic bytes (not a checkpoint file)");
  const auto version = detail::read_pod<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(version));
  const auto meta_len = detail::read_pod<std::uint64_t>(in, "metadata length");
  std::string meta_str(meta_len, '\0');
  detail::read_bytes(in, meta_str.data(), meta_len, "metadata");
  nlohmann::json meta = nlohmann::json::parse(meta_str);

  Checkpoint ckpt;
  ckpt.meta.omega = meta.at("omega").get<int>();
  ckpt.meta.dt_in = meta.at("dt_in").get<int>();
  ckpt.meta.mlp_layers = meta.at("mlp_layers").get<std::vector<int>>();
  ckpt.meta.config_hash = meta.at("config_hash").get<std::string>();
  ckpt.meta.calibration_end = meta.at("calibration_end").get<std::string>();
  ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.meta.epoch = meta.at("epoch").get<int>();
  if (ckpt.meta.mlp_layers != std::vector<int>{1, 64, 32, 16, 1})
    throw std::runtime_error("load_checkpoint: unsupported MLP layout");

  Rng dummy(0);
  ckpt.params = init_model(ckpt.meta.dt_in, ckpt.meta.omega, dummy);
  for (const auto& [expected_name, tensor] : named_parameters(ckpt.params)) {
    const auto name_len = detail::read_pod<std::uint32_t>(in, "array name length");
    std::string name(name_len, '\0');
    detail::read_bytes(in, name.data(), name_len, "array name");
    if (name != expected_name)
      throw std::runtime_error("load_checkpoint: expected array '" + expected_name +
                               "', found '" + name + "'");
    const auto rank = detail::read_pod<std::uint32_t>(in, "rank");
    if (static_cast<int>(rank) != tensor->rank())
      throw std::runtime_error("load_checkpoint: rank mismatch for " + name);
    for (int d = 0; d < tensor->rank(); ++d) {
      const auto dim = detail::read_pod<std::uint64_t>(in, "dimension");
      if (static_cast<ad::Tensor::Index>(dim) != tensor->dim(d))
        throw std::runtime_error("load_checkpoint: dimension mismatch for " + name);
    }
    detail::read_bytes(in, tensor->data(),
                       sizeof(double) * static_cast<std::size_t>(tensor->size()), "array data");
  }

  if (ckpt.params.parameter_count() != ckpt.declared_parameter_count())
    throw std::runtime_error("load_checkpoint: parameter count " +
                             std::to_string(ckpt.params.parameter_count()) +
                             " does not match declared " +
                             std::to_string(ckpt.declared_parameter_count()));
  return ckpt;
}

}  // namespace minvar
