#pragma once

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "moss/autodiff/adamw.hpp"
#include "moss/bench/metrics.hpp"
#include "moss/data/dataset.hpp"
#include "moss/net/io.hpp"
#include "moss/net/predict.hpp"
#include "moss/render/preprocess.hpp"

namespace moss::train {

namespace fs = std::filesystem;
using ad::Tensor;
using nlohmann::json;

/// beta_j = 1 for j < M and `tip` for j = M.
inline std::vector<double> loss_weights(int M, double tip = 2.0) {
  if (M < 1) throw InvalidInput("loss_weights: M must be positive");
  std::vector<double> beta(static_cast<std::size_t>(M), 1.0);
  beta.back() = tip;
  return beta;
}

/// L = (1/M) sum_j beta_j |p_hat_j - p_j|^2 for predicted [M,3].
inline Tensor<double> shape_loss(const Tensor<double>& predicted, const PointMatrix& truth,
                                 const std::vector<double>& beta) {
  const auto M = static_cast<std::size_t>(truth.rows());
  if (predicted.rank() != 2 || predicted.dim(0) != M || predicted.dim(1) != 3 || beta.size() != M)
    throw InvalidInput("shape_loss: expected predicted [" + std::to_string(M) + ",3] and " + std::to_string(M) +
                       " weights, got " + ad::to_string(predicted.shape()) + " and " + std::to_string(beta.size()));
  std::vector<double> diff(3 * M);
  double sum = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    double sq = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      diff[3 * j + a] = predicted[3 * j + a] - truth(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(a));
      sq += diff[3 * j + a] * diff[3 * j + a];
    }
    sum += beta[j] * sq;
  }
  auto loss = Tensor<double>::scalar(sum / static_cast<double>(M));
  if (ad::Tape* tape = ad::detail::recording_tape(predicted)) {
    loss.set_requires_grad();
    auto ps = predicted.storage(), ls = loss.storage();
    tape->push({predicted.id()}, loss, [ps, ls, diff = std::move(diff), beta, M] {
      if (ls->grad.empty() || !ps->requires_grad) return;
      auto& g = ps->grad_buffer();
      const double up = ls->grad[0];
      for (std::size_t j = 0; j < M; ++j)
        for (std::size_t a = 0; a < 3; ++a) g[3 * j + a] += up * 2.0 * beta[j] * diff[3 * j + a] / static_cast<double>(M);
    });
  }
  return loss;
}

struct TrainConfig {
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  int epochs = 30;
  std::uint64_t seed = 0;
  double tip_weight = 2.0;
  /// Fraction of the training split used (finetuning protocol).
  double train_fraction = 1.0;
  /// Reshuffle the batch order every epoch. Fixed batches keep batchnorm
  /// statistics identical from epoch to epoch.
  bool shuffle = true;
  /// Save a checkpoint every this many epochs (0: only best and last).
  int checkpoint_every = 0;

  void validate() const {
    if (batch_size < 1) throw InvalidInput("train: batch_size must be >= 1");
    if (!(lr > 0)) throw InvalidInput("train: lr must be positive");
    if (!(weight_decay >= 0)) throw InvalidInput("train: weight_decay must be non-negative");
    if (epochs < 0) throw InvalidInput("train: epochs must be >= 0");
    if (!(train_fraction > 0 && train_fraction <= 1)) throw InvalidInput("train: fraction must be in (0, 1]");
    if (checkpoint_every < 0) throw InvalidInput("train: checkpoint_every must be >= 0");
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},   {"lr", c.lr},
           {"weight_decay", c.weight_decay}, {"epochs", c.epochs},
           {"seed", c.seed},                {"tip_weight", c.tip_weight},
           {"train_fraction", c.train_fraction}, {"checkpoint_every", c.checkpoint_every},
           {"shuffle", c.shuffle}};
}

inline void from_json(const json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.tip_weight = j.value("tip_weight", c.tip_weight);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.shuffle = j.value("shuffle", c.shuffle);
  c.validate();
}

/// Preprocessed network inputs and M-point targets held in memory.
struct SampleSet {
  std::vector<std::string> ids;
  std::vector<float> inputs;  // [N,5,S,S]
  std::vector<PointMatrix> targets;
  std::size_t input_size = 0;

  std::size_t size() const { return ids.size(); }
  std::size_t plane() const { return 5 * input_size * input_size; }

  Tensor<float> batch(const std::vector<std::size_t>& rows) const {
    std::vector<float> v(rows.size() * plane());
    for (std::size_t b = 0; b < rows.size(); ++b)
      std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(rows[b] * plane()), plane(),
                  v.begin() + static_cast<std::ptrdiff_t>(b * plane()));
    return Tensor<float>({rows.size(), 5, input_size, input_size}, std::move(v));
  }
};

/// Full-frame ROI downsampled to the model input size.
inline render::Roi default_roi(const render::CameraModel& cam) { return render::Roi::full(cam.width, cam.height); }

inline SampleSet load_samples(const data::Dataset& ds, const std::vector<std::size_t>& indices,
                              const net::ModelConfig& cfg) {
  SampleSet set;
  set.input_size = static_cast<std::size_t>(cfg.input_size);
  set.inputs.resize(indices.size() * set.plane());
  const auto roi = default_roi(ds.manifest().camera);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = indices[k];
    set.ids.push_back(ds.record(i).id);
    render::preprocess_into(ds.image(i), roi, cfg.input_size, set.inputs.data() + k * set.plane());
    set.targets.push_back(ds.targets(i, cfg.query_points, cfg.degree));
  }
  return set;
}

/// Seeded subset of `indices` holding ceil(fraction * n) entries, in original order.
inline std::vector<std::size_t> fraction_subset(std::vector<std::size_t> indices, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw InvalidInput("fraction must be in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(indices.size()) - 1e-9));
  if (keep >= indices.size()) return indices;
  Rng rng(derive_seed(seed, 0x66726163));
  auto shuffled = indices;
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
  shuffled.resize(keep);
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

/// Network predictions (M x 3) for every sample, inference mode.
inline std::vector<PointMatrix> predict_all(const SampleSet& set, const net::NetworkParameters<float>& params,
                                            const net::ModelConfig& cfg, std::size_t batch = 8) {
  std::vector<PointMatrix> out;
  for (std::size_t start = 0; start < set.size(); start += batch) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(set.size(), start + batch); ++i) rows.push_back(i);
    const auto maps = net::infer(set.batch(rows), params, cfg);
    for (std::size_t b = 0; b < rows.size(); ++b)
      out.push_back(net::to_points(net::fit_curve(net::pixel_predictions(maps, b), cfg).first));
  }
  return out;
}

/// Validation/test metrics through the same functions the benchmark uses.
inline bench::ShapeErrorReport evaluate(const SampleSet& set, const net::NetworkParameters<float>& params,
                                        const net::ModelConfig& cfg) {
  return bench::evaluate_predictions(predict_all(set, params, cfg), set.targets, cfg.degree);
}

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mers_mm = 0.0, val_mert_mm = 0.0;
  double wall_time_s = 0.0;
};

struct TrainResult {
  net::NetworkParameters<float> best;  // lowest validation MERS
  int best_epoch = 0;
  double best_val_mers_mm = std::numeric_limits<double>::infinity();
  std::vector<EpochLog> history;
};

inline std::string csv_header() { return "epoch,train_loss,val_mers_mm,val_mert_mm,wall_time_s"; }

inline std::string csv_row(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.9e,%.6f,%.6f,%.3f", e.epoch, e.train_loss, e.val_mers_mm, e.val_mert_mm,
                e.wall_time_s);
  return buf;
}

inline net::NetworkParameters<float> deep_copy(const net::NetworkParameters<float>& p) {
  return net::convert<float>(p);
}

/// Parameter norms for NaN diagnostics.
inline std::string parameter_norms(const net::NetworkParameters<float>& p, std::size_t limit = 6) {
  std::vector<std::pair<double, std::string>> norms;
  for (const auto& t : p.tensors) {
    double s = 0.0;
    for (float v : t.tensor.values()) s += static_cast<double>(v) * v;
    norms.emplace_back(std::sqrt(s), t.name);
  }
  std::sort(norms.begin(), norms.end(), [](auto& a, auto& b) {
    const bool fa = std::isfinite(a.first), fb = std::isfinite(b.first);
    return fa != fb ? !fa : a.first > b.first;
  });
  std::ostringstream os;
  for (std::size_t i = 0; i < std::min(limit, norms.size()); ++i)
    os << (i ? ", " : "") << norms[i].second << "=" << norms[i].first;
  return os.str();
}

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  /// Receives the current parameters after every epoch.
  std::function<void(int, const net::NetworkParameters<float>&)> on_checkpoint;
};

/// Minibatch AdamW on `train`, validation after every epoch. Batch order is
/// a seeded permutation per epoch unless shuffling is off; the last batch may
/// be short.
inline TrainResult train_loop(net::NetworkParameters<float> params, const net::ModelConfig& cfg,
                              const SampleSet& train, const SampleSet& val, const TrainConfig& tc,
                              const TrainHooks& hooks = {}) {
  cfg.validate();
  tc.validate();
  if (train.size() == 0) throw InvalidInput("train: empty training set");
  if (static_cast<int>(train.input_size) != cfg.input_size) throw InvalidInput("train: input size mismatch");
  const auto beta = loss_weights(cfg.query_points, tc.tip_weight);
  ad::AdamW<float> opt({tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay});
  TrainResult result;
  result.best = deep_copy(params);
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(tc.seed, static_cast<std::uint64_t>(epoch)));
    if (tc.shuffle)
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += tc.batch_size) {
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b0 + tc.batch_size)));
      params.zero_grad();
      ad::Tape tape;
      double value = 0.0;
      auto where = [&] {
        return " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1) +
               "; largest parameter norms: " + parameter_norms(params);
      };
      try {
        ad::Tape::Scope scope(tape);
        const auto maps = net::forward(train.batch(rows), params, cfg, true);
        std::vector<Tensor<double>> terms;
        for (std::size_t b = 0; b < rows.size(); ++b) {
          auto points = net::fit_curve(net::pixel_predictions(maps, b), cfg).first;
          terms.push_back(shape_loss(points, train.targets[rows[b]], beta));
        }
        auto loss = ad::scale(ad::add_scalars(terms), 1.0 / static_cast<double>(rows.size()));
        value = loss.item();
        if (!std::isfinite(value)) throw NumericalFailure("non-finite loss" + where());
        tape.backward(loss);
        opt.step(params.tensors);
      } catch (const SingularSystem& e) {
        throw NumericalFailure(std::string(e.what()) + where());
      } catch (const UpdateAborted& e) {
        throw NumericalFailure(std::string(e.what()) + where());
      }
      loss_sum += value;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches);
    if (val.size() > 0) {
      const auto rep = evaluate(val, params, cfg);
      log.val_mers_mm = rep.mers_mm;
      log.val_mert_mm = rep.mert_mm;
    } else {
      log.val_mers_mm = log.val_mert_mm = std::numeric_limits<double>::quiet_NaN();
    }
    log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(log);
    // with no validation split the last epoch counts as best
    if (val.size() == 0 || log.val_mers_mm < result.best_val_mers_mm) {
      result.best_val_mers_mm = log.val_mers_mm;
      result.best_epoch = epoch;
      result.best = deep_copy(params);
    }
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (hooks.on_checkpoint) hooks.on_checkpoint(epoch, params);
  }
  return result;
}

/// A run directory: config.json, metrics.csv, best.ckpt, last.ckpt.
struct RunOutput {
  TrainResult result;
  fs::path best_checkpoint;
};

inline json checkpoint_extra(const TrainResult& r) {
  return json{{"best_epoch", r.best_epoch}, {"val_mers_mm", r.best_val_mers_mm}};
}

inline RunOutput run_training(net::NetworkParameters<float> init, const net::ModelConfig& cfg,
                              const data::Dataset& ds, const TrainConfig& tc, const fs::path& run_dir,
                              const json& extra_config = json::object(),
                              const std::function<void(const std::string&)>& log = {}) {
  cfg.validate();
  tc.validate();
  const auto& cam = ds.manifest().camera;
  if (cam.width % cfg.input_size != 0 || cam.height % cfg.input_size != 0)
    throw InvalidInput("model input_size " + std::to_string(cfg.input_size) + " does not divide the dataset image size " +
                       std::to_string(cam.width) + "x" + std::to_string(cam.height));
  fs::create_directories(run_dir);
  {
    json snapshot = extra_config;
    snapshot["model"] = cfg;
    snapshot["train"] = tc;
    snapshot["dataset"] = {{"manifest", (ds.root() / "manifest.json").string()},
                           {"name", ds.manifest().name},
                           {"seed", ds.manifest().seed},
                           {"count", ds.size()}};
    std::ofstream(run_dir / "config.json") << snapshot.dump(2) << "\n";
  }
  const auto train_idx = fraction_subset(ds.indices(data::Split::train), tc.train_fraction, tc.seed);
  if (log) log("loading " + std::to_string(train_idx.size()) + " training samples");
  const auto train = load_samples(ds, train_idx, cfg);
  const auto val = load_samples(ds, ds.indices(data::Split::val), cfg);

  std::ofstream csv(run_dir / "metrics.csv");
  csv << csv_header() << "\n";
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e) {
    csv << csv_row(e) << "\n" << std::flush;
    if (log) log(csv_row(e));
  };
  hooks.on_checkpoint = [&](int epoch, const net::NetworkParameters<float>& p) {
    if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0)
      net::save_model(run_dir / ("epoch" + std::to_string(epoch) + ".ckpt"), p, cfg, {{"epoch", epoch}});
    if (epoch == tc.epochs) net::save_model(run_dir / "last.ckpt", p, cfg, {{"epoch", epoch}});
  };
  RunOutput out;
  out.result = train_loop(std::move(init), cfg, train, val, tc, hooks);
  out.best_checkpoint = run_dir / "best.ckpt";
  net::save_model(out.best_checkpoint, out.result.best, cfg, checkpoint_extra(out.result));
  return out;
}

/// Continues training a loaded model. The checkpoint's input size must divide
/// the dataset resolution; zero epochs returns the input unchanged.
inline RunOutput finetune(const net::LoadedModel& model, const data::Dataset& ds, const TrainConfig& tc,
                          const fs::path& run_dir, const std::function<void(const std::string&)>& log = {}) {
  const auto& cam = ds.manifest().camera;
  if (cam.width % model.config.input_size != 0 || cam.height % model.config.input_size != 0)
    throw InvalidInput("finetune: checkpoint input_size " + std::to_string(model.config.input_size) +
                       " does not match dataset images " + std::to_string(cam.width) + "x" + std::to_string(cam.height));
  if (tc.epochs == 0) {
    tc.validate();
    fs::create_directories(run_dir);
    RunOutput out;
    out.result.best = deep_copy(model.params);
    out.best_checkpoint = run_dir / "best.ckpt";
    net::save_model(out.best_checkpoint, out.result.best, model.config, model.metadata);
    return out;
  }
  return run_training(deep_copy(model.params), model.config, ds, tc, run_dir, {{"finetune_from", model.metadata}}, log);
}

}  // namespace moss::train
