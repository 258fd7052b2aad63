#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "moss/autodiff/adamw.hpp"
#include "moss/autodiff/conv.hpp"
#include "moss/autodiff/ops.hpp"
#include "moss/net/config.hpp"
#include "moss/random.hpp"

namespace moss::net {

using ad::Shape;
using ad::Tensor;

/// Trainable tensors in creation order plus batchnorm running statistics.
template <typename T>
struct NetworkParameters {
  std::vector<ad::NamedTensor<T>> tensors;
  std::map<std::string, ad::BatchNormStats<T>> batchnorm;

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("network has no parameter '" + name + "'");
    return tensors[it->second].tensor;
  }
  ad::BatchNormStats<T>& stats(const std::string& name) {
    auto it = batchnorm.find(name);
    if (it == batchnorm.end()) throw InvalidInput("network has no batchnorm '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void add(std::string name, Tensor<T> t) {
    if (!index_.emplace(name, tensors.size()).second) throw InvalidInput("duplicate parameter name '" + name + "'");
    t.set_requires_grad();
    tensors.push_back({std::move(name), std::move(t)});
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors) t.tensor.zero_grad();
  }

 private:
  std::map<std::string, std::size_t> index_;
};

/// Shape of one residual block: two 3x3 conv + BN layers, with a 1x1
/// projection on the shortcut when the channel count changes.
struct BlockSpec {
  std::string name;
  int in = 0, out = 0;
};

/// Parameter layout: every block and head in creation order.
struct Layout {
  std::vector<BlockSpec> blocks;
  struct Head {
    std::string name;
    int in = 0, out = 0;
  };
  std::vector<Head> heads;
};

inline std::vector<std::string> enabled_decoders(const ModelConfig& cfg) {
  std::vector<std::string> d{"centerline"};
  if (cfg.decoders.arclength) d.push_back("arclength");
  if (cfg.decoders.importance) d.push_back("importance");
  return d;
}

inline int head_channels(const std::string& decoder) { return decoder == "centerline" ? 3 : 1; }

/// Encoder stage k outputs base * 2^k channels. Decoders mirror it: stage k
/// outputs base * 2^(stages-1-k); pixel shuffle divides channels by four.
inline Layout build_layout(const ModelConfig& cfg) {
  cfg.validate();
  Layout layout;
  int in = 5;
  for (int k = 0; k < cfg.stages; ++k) {
    layout.blocks.push_back({"encoder.stage" + std::to_string(k), in, cfg.channels(k)});
    in = cfg.channels(k);
  }
  const int bottleneck = in;
  for (const auto& d : enabled_decoders(cfg)) {
    int c = bottleneck;
    for (int k = 0; k < cfg.stages; ++k) {
      const int out = cfg.channels(cfg.stages - 1 - k);
      layout.blocks.push_back({d + ".stage" + std::to_string(k), c, out});
      c = out / 4;
    }
    layout.heads.push_back({d + ".head", cfg.base_channels, head_channels(d)});
  }
  return layout;
}

/// He fan-in initialization for every convolution, BN scale 1 and shift 0.
template <typename T = float>
NetworkParameters<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  const auto layout = build_layout(cfg);
  Rng rng(derive_seed(seed, 0x6e6574));
  NetworkParameters<T> p;
  const double gain = std::sqrt(2.0 / (1.0 + 0.01 * 0.01));
  auto he = [&](Shape shape, std::size_t fan_in) {
    const double std = gain / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(ad::numel(shape));
    for (auto& x : v) x = static_cast<T>(std * rng.normal());
    return Tensor<T>(std::move(shape), std::move(v));
  };
  auto bn = [&](const std::string& name, std::size_t c) {
    p.add(name + ".gamma", Tensor<T>::full({c}, T(1)));
    p.add(name + ".beta", Tensor<T>::zeros({c}));
    p.batchnorm[name] = {Tensor<T>::zeros({c}), Tensor<T>::full({c}, T(1))};
  };
  for (const auto& b : layout.blocks) {
    const auto in = static_cast<std::size_t>(b.in), out = static_cast<std::size_t>(b.out);
    p.add(b.name + ".conv1", he({out, in, 3, 3}, in * 9));
    bn(b.name + ".bn1", out);
    p.add(b.name + ".conv2", he({out, out, 3, 3}, out * 9));
    bn(b.name + ".bn2", out);
    if (in != out) {
      p.add(b.name + ".skip.weight", he({out, in}, in));
      p.add(b.name + ".skip.bias", Tensor<T>::zeros({out}));
    }
  }
  for (const auto& h : layout.heads) {
    const auto in = static_cast<std::size_t>(h.in), out = static_cast<std::size_t>(h.out);
    p.add(h.name + ".weight", he({out, in}, in));
    p.add(h.name + ".bias", Tensor<T>::zeros({out}));
  }
  return p;
}

/// Same parameters in another precision (e.g. double for gradient checks).
template <typename To, typename From>
NetworkParameters<To> convert(const NetworkParameters<From>& src) {
  auto copy = [](const Tensor<From>& t) {
    return Tensor<To>(t.shape(), std::vector<To>(t.values().begin(), t.values().end()));
  };
  NetworkParameters<To> dst;
  for (const auto& t : src.tensors) dst.add(t.name, copy(t.tensor));
  for (const auto& [name, s] : src.batchnorm) dst.batchnorm[name] = {copy(s.running_mean), copy(s.running_var)};
  return dst;
}

/// Raw decoder maps, [N,C,S,S] each. Disabled decoders stay undefined.
template <typename T>
struct DecoderOutputs {
  Tensor<T> importance;  // sigmoid, 1 channel
  Tensor<T> centerline;  // meters, 3 channels
  Tensor<T> arclength;   // sigmoid, 1 channel
};

/// Per-sample inputs of the curve fit: P_w [HW], P_c [HW,3], P_s [HW].
template <typename T>
struct PixelPredictions {
  Tensor<T> weights;
  Tensor<T> coords;
  Tensor<T> arclength;
};

namespace detail {

template <typename T>
class Runner {
 public:
  Runner(NetworkParameters<T>& p, bool training) : p_(p) { bn_.training = training; }

  Tensor<T> block(const std::string& name, const Tensor<T>& x) {
    const auto out = p_.at(name + ".conv1").dim(0);
    const auto zero = Tensor<T>::zeros({out});
    auto h = ad::conv2d(x, p_.at(name + ".conv1"), zero, 1, 1);
    h = ad::leaky_relu(norm(name + ".bn1", h));
    h = ad::conv2d(h, p_.at(name + ".conv2"), zero, 1, 1);
    h = norm(name + ".bn2", h);
    const auto shortcut = p_.contains(name + ".skip.weight")
                              ? ad::conv1x1(x, p_.at(name + ".skip.weight"), p_.at(name + ".skip.bias"))
                              : x;
    return ad::leaky_relu(ad::add(h, shortcut));
  }

  Tensor<T> head(const std::string& name, const Tensor<T>& x) {
    return ad::conv1x1(x, p_.at(name + ".weight"), p_.at(name + ".bias"));
  }

 private:
  Tensor<T> norm(const std::string& name, const Tensor<T>& x) {
    return ad::batchnorm(x, p_.at(name + ".gamma"), p_.at(name + ".beta"), p_.stats(name), bn_);
  }

  NetworkParameters<T>& p_;
  ad::BatchNormOptions bn_;
};

}  // namespace detail

/// Encoder: `stages` residual blocks with 2x2 max pooling between consecutive
/// stages. Each decoder: `stages` residual blocks with pixel shuffle between
/// consecutive stages, then a 1x1 head. Training mode uses batch statistics
/// and updates the running ones.
template <typename T>
DecoderOutputs<T> forward(const Tensor<T>& input, NetworkParameters<T>& params, const ModelConfig& cfg,
                          bool training) {
  const auto s = static_cast<std::size_t>(cfg.input_size);
  if (input.rank() != 4 || input.dim(1) != 5 || input.dim(2) != s || input.dim(3) != s)
    throw InvalidInput("forward: expected input [N,5," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                       ad::to_string(input.shape()));
  detail::Runner<T> run(params, training);
  Tensor<T> x = input;
  for (int k = 0; k < cfg.stages; ++k) {
    if (k > 0) x = ad::maxpool2(x);
    x = run.block("encoder.stage" + std::to_string(k), x);
  }
  DecoderOutputs<T> out;
  for (const auto& d : enabled_decoders(cfg)) {
    Tensor<T> y = x;
    for (int k = 0; k < cfg.stages; ++k) {
      if (k > 0) y = ad::pixel_shuffle2(y);
      y = run.block(d + ".stage" + std::to_string(k), y);
    }
    y = run.head(d + ".head", y);
    if (d == "centerline")
      out.centerline = ad::scale(y, static_cast<T>(cfg.coordinate_scale));
    else if (d == "arclength")
      out.arclength = ad::sigmoid(y);
    else
      out.importance = ad::sigmoid(y);
  }
  return out;
}

/// Slices sample `n` into fit inputs. A disabled importance decoder gives
/// uniform weights; a disabled arclength decoder is replaced by the norm of
/// the predicted coordinates scaled to [0,1].
template <typename T>
PixelPredictions<T> pixel_predictions(const DecoderOutputs<T>& out, std::size_t n) {
  PixelPredictions<T> p;
  p.coords = ad::pixel_rows(out.centerline, n);
  const auto pixels = p.coords.dim(0);
  p.weights = out.importance.defined() ? ad::reshape(ad::pixel_rows(out.importance, n), {pixels})
                                       : Tensor<T>::full({pixels}, T(1));
  p.arclength = out.arclength.defined() ? ad::reshape(ad::pixel_rows(out.arclength, n), {pixels})
                                        : ad::normalized_row_norms(p.coords);
  return p;
}

/// Weighted curve fit and M query points ([M,3]) for one sample. The fit runs
/// in double whatever the network precision; gradients flow back through casts.
template <typename T>
std::pair<Tensor<double>, curvefit::CurveParams<double>> fit_curve(const PixelPredictions<T>& p,
                                                                    const ModelConfig& cfg) {
  const auto s = ad::cast<double>(p.arclength);
  const auto w = ad::cast<double>(p.weights);
  const auto c = ad::cast<double>(p.coords);
  const auto design = curvefit::build_design(s, cfg.degree);
  auto curve = curvefit::fit_weighted(design, w, c, cfg.ridge);
  auto points = curvefit::query_curve(curve, static_cast<std::size_t>(cfg.query_points));
  return {std::move(points), std::move(curve)};
}

}  // namespace moss::net
