#pragma once

#include <algorithm>
#include <filesystem>
#include <string>

#include "moss/autodiff/checkpoint.hpp"
#include "moss/net/model.hpp"

namespace moss::net {

struct LoadedModel {
  ModelConfig config;
  NetworkParameters<float> params;
  nlohmann::json metadata;
};

/// Parameters and running statistics as checkpoint tensors. The model config
/// goes into metadata["model"]; `extra` is merged alongside it.
inline ad::Checkpoint to_checkpoint(const NetworkParameters<float>& p, const ModelConfig& cfg,
                                    const nlohmann::json& extra = nlohmann::json::object()) {
  ad::Checkpoint ckpt;
  ckpt.metadata = extra.is_object() ? extra : nlohmann::json::object();
  ckpt.metadata["model"] = cfg;
  for (const auto& t : p.tensors) ckpt.tensors.push_back({t.name, t.tensor.detach_copy()});
  for (const auto& [name, s] : p.batchnorm) {
    ckpt.tensors.push_back({name + ".running_mean", s.running_mean.detach_copy()});
    ckpt.tensors.push_back({name + ".running_var", s.running_var.detach_copy()});
  }
  return ckpt;
}

/// Rebuilds the network from a checkpoint, checking every name and shape
/// against the layout implied by the embedded config.
inline LoadedModel from_checkpoint(const ad::Checkpoint& ckpt, const std::string& source = "checkpoint") {
  if (!ckpt.metadata.contains("model")) throw DataError("checkpoint has no model config", {source});
  LoadedModel m;
  try {
    m.config = ckpt.metadata.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint model config unreadable: ") + e.what(), {source});
  }
  m.params = init_parameters<float>(m.config, 0);
  auto take = [&](const std::string& name, ad::Tensor<float>& dst) {
    const auto* t = ckpt.find(name);
    if (!t) throw DataError("checkpoint is missing tensor '" + name + "'", {source});
    if (t->shape() != dst.shape())
      throw DataError("checkpoint tensor '" + name + "' has shape " + ad::to_string(t->shape()) + ", expected " +
                          ad::to_string(dst.shape()),
                      {source});
    std::copy(t->values().begin(), t->values().end(), dst.mutable_data().begin());
  };
  for (auto& t : m.params.tensors) take(t.name, t.tensor);
  for (auto& [name, s] : m.params.batchnorm) {
    take(name + ".running_mean", s.running_mean);
    take(name + ".running_var", s.running_var);
  }
  const std::size_t expected = m.params.tensors.size() + 2 * m.params.batchnorm.size();
  if (ckpt.tensors.size() != expected) throw DataError("checkpoint has unexpected extra tensors", {source});
  m.metadata = ckpt.metadata;
  return m;
}

inline void save_model(const std::filesystem::path& path, const NetworkParameters<float>& p, const ModelConfig& cfg,
                       const nlohmann::json& extra = nlohmann::json::object()) {
  ad::save_checkpoint(path, to_checkpoint(p, cfg, extra));
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  return from_checkpoint(ad::load_checkpoint(path), path.string());
}

}  // namespace moss::net
