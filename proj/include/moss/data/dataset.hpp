#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "moss/error.hpp"
#include "moss/points.hpp"
#include "moss/random.hpp"
#include "moss/render/camera.hpp"
#include "moss/render/image.hpp"
#include "moss/render/rasterizer.hpp"
#include "moss/rod/centerline.hpp"
#include "moss/rod/geometry.hpp"
#include "moss/rod/sampling.hpp"
#include "moss/rod/statics.hpp"
#include "moss/sha256.hpp"

namespace moss::data {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class Split { train, val, test };
enum class GenerationMode { free_space, loaded, mixed };

inline std::string to_string(Split s) { return s == Split::train ? "train" : s == Split::val ? "val" : "test"; }
inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidInput("unknown split '" + s + "' (expected train, val or test)");
}

inline std::string to_string(GenerationMode m) {
  return m == GenerationMode::free_space ? "free_space" : m == GenerationMode::loaded ? "loaded" : "mixed";
}
inline GenerationMode generation_mode_from_string(const std::string& s) {
  if (s == "free_space" || s == "free") return GenerationMode::free_space;
  if (s == "loaded") return GenerationMode::loaded;
  if (s == "mixed") return GenerationMode::mixed;
  throw InvalidInput("unknown mode '" + s + "' (expected free, loaded or mixed)");
}

struct SplitRatios {
  double train = 0.60, val = 0.15, test = 0.25;
  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
      throw InvalidInput("split ratios must be non-negative and sum to 1");
  }
};

/// Named camera presets: "default" and "wide".
inline render::CameraModel camera_preset(const std::string& name) {
  if (name == "default") return render::default_camera();
  if (name == "wide") return render::wide_angle_camera();
  throw InvalidInput("unknown camera preset '" + name + "' (expected default or wide)");
}

struct SampleRecord {
  std::string id;
  rod::LoadMode mode = rod::LoadMode::free_space;
  Split split = Split::train;
  std::string rgb, depth, gt;  // relative to the dataset root
  std::string rgb_sha256, depth_sha256, gt_sha256;
  rod::RobotConfiguration configuration;
  int retries = 0;
};

struct Manifest {
  int schema_version = kSchemaVersion;
  std::string name = "moss-sim";
  std::string camera_preset = "default";
  render::CameraModel camera;
  rod::RobotGeometry geometry;
  std::string geometry_digest;
  GenerationMode mode = GenerationMode::mixed;
  std::uint64_t seed = 0;
  SplitRatios ratios;
  int gt_points = rod::kGroundTruthPoints;
  std::vector<SampleRecord> samples;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [&](auto& r) { return r.split == s; }));
  }
};

inline void to_json(json& j, const SampleRecord& r) {
  j = json{{"id", r.id},
           {"mode", rod::to_string(r.mode)},
           {"split", to_string(r.split)},
           {"rgb", r.rgb},
           {"depth", r.depth},
           {"gt", r.gt},
           {"sha256", {{"rgb", r.rgb_sha256}, {"depth", r.depth_sha256}, {"gt", r.gt_sha256}}},
           {"configuration", r.configuration},
           {"retries", r.retries}};
}

inline void from_json(const json& j, SampleRecord& r) {
  j.at("id").get_to(r.id);
  r.mode = rod::load_mode_from_string(j.at("mode").get<std::string>());
  r.split = split_from_string(j.at("split").get<std::string>());
  j.at("rgb").get_to(r.rgb);
  j.at("depth").get_to(r.depth);
  j.at("gt").get_to(r.gt);
  const auto& h = j.at("sha256");
  h.at("rgb").get_to(r.rgb_sha256);
  h.at("depth").get_to(r.depth_sha256);
  h.at("gt").get_to(r.gt_sha256);
  j.at("configuration").get_to(r.configuration);
  r.retries = j.value("retries", 0);
}

inline void to_json(json& j, const Manifest& m) {
  j = json{{"schema_version", m.schema_version},
           {"name", m.name},
           {"camera_preset", m.camera_preset},
           {"camera", m.camera},
           {"geometry", m.geometry},
           {"geometry_digest", m.geometry_digest},
           {"mode", to_string(m.mode)},
           {"seed", m.seed},
           {"count", m.samples.size()},
           {"split_ratios", {{"train", m.ratios.train}, {"val", m.ratios.val}, {"test", m.ratios.test}}},
           {"gt_points", m.gt_points},
           {"image", {{"width", m.camera.width}, {"height", m.camera.height}}},
           {"sampling",
            {{"tension_range_N", {0.0, m.geometry.max_tension}},
             {"tip_force_range_N", {-rod::kTipForceRange, rod::kTipForceRange}},
             {"tip_moment_range_Nm", {-rod::kTipMomentRange, rod::kTipMomentRange}}}},
           {"samples", m.samples}};
}

inline void from_json(const json& j, Manifest& m) {
  j.at("schema_version").get_to(m.schema_version);
  if (m.schema_version != kSchemaVersion)
    throw DataError("unsupported manifest schema version " + std::to_string(m.schema_version));
  j.at("name").get_to(m.name);
  m.camera_preset = j.value("camera_preset", std::string("custom"));
  j.at("camera").get_to(m.camera);
  j.at("geometry").get_to(m.geometry);
  j.at("geometry_digest").get_to(m.geometry_digest);
  m.mode = generation_mode_from_string(j.at("mode").get<std::string>());
  j.at("seed").get_to(m.seed);
  const auto& r = j.at("split_ratios");
  m.ratios = {r.at("train").get<double>(), r.at("val").get<double>(), r.at("test").get<double>()};
  j.at("gt_points").get_to(m.gt_points);
  j.at("samples").get_to(m.samples);
  if (j.at("count").get<std::size_t>() != m.samples.size()) throw DataError("manifest count does not match samples");
}

/// FNV-1a of the id bytes; stable across platforms.
inline std::uint64_t id_hash(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

/// Ranks ids by a seeded hash and cuts the ranking at the split ratios, so
/// realized counts are within one sample of the ratios.
inline std::vector<Split> assign_splits(const std::vector<std::string>& ids, std::uint64_t seed,
                                        const SplitRatios& ratios = {}) {
  ratios.validate();
  const auto n = ids.size();
  std::vector<std::pair<std::uint64_t, std::size_t>> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = {derive_seed(seed, id_hash(ids[i])), i};
  std::sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : ids[a.second] < ids[b.second];
  });
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
  const auto n_val =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n))));
  std::vector<Split> out(n);
  for (std::size_t r = 0; r < n; ++r)
    out[keys[r].second] = r < n_train ? Split::train : r < n_train + n_val ? Split::val : Split::test;
  return out;
}

inline std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", index);
  return buf;
}

inline void write_ground_truth_csv(const fs::path& path, const PointMatrix& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write ground truth", {path.string()});
  char line[96];
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", points(i, 0), points(i, 1), points(i, 2));
    out << line;
  }
  if (!out) throw DataError("failed writing ground truth", {path.string()});
}

inline PointMatrix read_ground_truth_csv(const fs::path& path, std::optional<int> expected_rows = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground truth", {path.string()});
  std::vector<double> v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double x, y, z;
    char extra;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf%c", &x, &y, &z, &extra) != 3)
      throw DataError("malformed ground truth row " + std::to_string(v.size() / 3 + 1), {path.string()});
    v.insert(v.end(), {x, y, z});
  }
  const auto rows = static_cast<Eigen::Index>(v.size() / 3);
  if (expected_rows && rows != *expected_rows)
    throw DataError("ground truth has " + std::to_string(rows) + " rows, expected " + std::to_string(*expected_rows),
                    {path.string()});
  PointMatrix p(rows, 3);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (int a = 0; a < 3; ++a) p(i, a) = v[static_cast<std::size_t>(3 * i + a)];
  return p;
}

/// Dense ground truth resampled at relative arclengths s = j/M, j = 1..M.
inline PointMatrix resample_ground_truth(const PointMatrix& dense, int M, int degree) {
  if (degree < 1) throw InvalidInput("resample_ground_truth: degree must be >= 1");
  if (M < 2 * (degree + 1))
    throw InvalidInput("resample_ground_truth: M = " + std::to_string(M) + " is below 2(n+1) = " +
                       std::to_string(2 * (degree + 1)));
  std::vector<double> s(static_cast<std::size_t>(M));
  for (int j = 1; j <= M; ++j) s[static_cast<std::size_t>(j - 1)] = static_cast<double>(j) / M;
  return rod::resample_uniform(dense, s);
}

/// Everything produced for one configuration.
struct SimulatedSample {
  rod::GroundTruthCenterline centerline;
  render::RenderedFrame frame;
};

inline SimulatedSample simulate(const rod::RobotGeometry& g, const render::CameraModel& cam,
                                const rod::RobotConfiguration& c, const rod::SolverOptions& solver = {}) {
  const auto state = rod::solve_static(g, c, solver);
  return {rod::sample_centerline(state), render::render(state, g, cam)};
}

struct GenerateOptions {
  std::size_t count = 2000;
  GenerationMode mode = GenerationMode::mixed;
  std::string camera = "default";
  std::uint64_t seed = 0;
  std::string name = "moss-sim";
  rod::RobotGeometry geometry;
  SplitRatios ratios;
  rod::SolverOptions solver;
  int max_retries = 5;
  int threads = 1;
};

/// Sample i uses its own stream derive_seed(seed, i), so results do not
/// depend on the thread count. Mixed mode: even indices free space, odd loaded.
inline Manifest generate(const GenerateOptions& opt, const fs::path& root,
                         const std::function<void(const std::string&)>& log = {}) {
  if (opt.count < 1) throw InvalidInput("generate: count must be >= 1");
  if (opt.max_retries < 0) throw InvalidInput("generate: max_retries must be >= 0");
  opt.geometry.validate();
  opt.ratios.validate();
  Manifest m;
  m.name = opt.name;
  m.camera_preset = opt.camera;
  m.camera = camera_preset(opt.camera);
  m.geometry = opt.geometry;
  m.geometry_digest = opt.geometry.digest();
  m.mode = opt.mode;
  m.seed = opt.seed;
  m.ratios = opt.ratios;

  for (const char* sub : {"images", "depth", "gt"}) fs::create_directories(root / sub);
  m.samples.resize(opt.count);
  std::vector<std::string> ids(opt.count);
  for (std::size_t i = 0; i < opt.count; ++i) ids[i] = sample_id(i);
  const auto splits = assign_splits(ids, opt.seed, opt.ratios);

  std::mutex log_mutex;
  auto note = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    log(msg);
  };

  auto make = [&](std::size_t i) {
    SampleRecord r;
    r.id = ids[i];
    r.split = splits[i];
    r.mode = opt.mode == GenerationMode::free_space ? rod::LoadMode::free_space
             : opt.mode == GenerationMode::loaded   ? rod::LoadMode::loaded
             : i % 2 == 0                           ? rod::LoadMode::free_space
                                                    : rod::LoadMode::loaded;
    Rng rng(derive_seed(opt.seed, i));
    std::optional<SimulatedSample> sim;
    for (int attempt = 0; !sim; ++attempt) {
      r.configuration = rod::sample_configuration(rng, r.mode, opt.geometry);
      try {
        sim = simulate(opt.geometry, m.camera, r.configuration, opt.solver);
      } catch (const NonConvergence& e) {
        if (attempt >= opt.max_retries)
          throw NonConvergence("sample " + r.id + ": solver failed after " + std::to_string(attempt + 1) +
                                   " attempts: " + e.what(),
                               e.residual());
        note("sample " + r.id + ": retry " + std::to_string(attempt + 1) + " after: " + e.what());
        r.retries = attempt + 1;
      }
    }
    r.rgb = "images/" + r.id + ".png";
    r.depth = "depth/" + r.id + ".png";
    r.gt = "gt/" + r.id + ".csv";
    render::write_png(root / r.rgb, sim->frame.rgb);
    render::write_png16(root / r.depth, sim->frame.depth_mm());
    write_ground_truth_csv(root / r.gt, sim->centerline.points);
    r.rgb_sha256 = sha256_file(root / r.rgb);
    r.depth_sha256 = sha256_file(root / r.depth);
    r.gt_sha256 = sha256_file(root / r.gt);
    m.samples[i] = std::move(r);
  };

  const auto workers = static_cast<std::size_t>(std::max(1, opt.threads));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(opt.count);
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < opt.count;) {
      try {
        make(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(workers, opt.count); ++t) pool.emplace_back(work);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  {
    std::ofstream cam(root / "camera.json");
    cam << json(m.camera).dump(2) << "\n";
  }
  std::ofstream out(root / "manifest.json");
  out << json(m).dump(2) << "\n";
  if (!out) throw DataError("cannot write manifest", {(root / "manifest.json").string()});
  return m;
}

/// Validated, lazily loading view of a generated dataset.
class Dataset {
 public:
  /// Checks schema, id uniqueness and file presence; with `verify_checksums`
  /// every payload file is hashed. All problems are reported together.
  static Dataset load(const fs::path& manifest_path, bool verify_checksums = true) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest", {manifest_path.string()});
    Dataset d;
    d.root_ = manifest_path.parent_path();
    try {
      d.manifest_ = json::parse(in).get<Manifest>();
    } catch (const json::exception& e) {
      throw DataError(std::string("manifest schema mismatch: ") + e.what(), {manifest_path.string()});
    } catch (const InvalidInput& e) {
      throw DataError(std::string("manifest invalid: ") + e.what(), {manifest_path.string()});
    }
    std::vector<std::string> problems;
    std::vector<std::string> ids;
    for (const auto& r : d.manifest_.samples) {
      ids.push_back(r.id);
      const std::pair<const std::string*, const std::string*> files[] = {
          {&r.rgb, &r.rgb_sha256}, {&r.depth, &r.depth_sha256}, {&r.gt, &r.gt_sha256}};
      for (const auto& [file, sum] : files) {
        const auto p = d.root_ / *file;
        if (!fs::exists(p))
          problems.push_back(r.id + ": missing " + *file);
        else if (verify_checksums && sha256_file(p) != *sum)
          problems.push_back(r.id + ": checksum mismatch " + *file);
      }
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) problems.push_back("duplicate sample ids");
    if (!problems.empty())
      throw DataError("dataset " + manifest_path.string() + " failed validation (" + std::to_string(problems.size()) +
                          " problems)",
                      problems);
    return d;
  }

  const Manifest& manifest() const { return manifest_; }
  const fs::path& root() const { return root_; }
  std::size_t size() const { return manifest_.samples.size(); }
  const SampleRecord& record(std::size_t i) const { return manifest_.samples.at(i); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (manifest_.samples[i].split == s) out.push_back(i);
    return out;
  }

  render::Image image(std::size_t i) const {
    const auto& r = record(i);
    try {
      auto img = render::read_png_rgb(root_ / r.rgb);
      if (img.width != manifest_.camera.width || img.height != manifest_.camera.height)
        throw DataError("image resolution differs from the manifest", {r.rgb});
      return img;
    } catch (const DataError& e) {
      throw DataError("sample " + r.id + ": " + e.what(), {(root_ / r.rgb).string()});
    }
  }

  PointMatrix ground_truth(std::size_t i) const {
    const auto& r = record(i);
    try {
      return read_ground_truth_csv(root_ / r.gt, manifest_.gt_points);
    } catch (const DataError& e) {
      throw DataError("sample " + r.id + ": " + e.what(), {(root_ / r.gt).string()});
    }
  }

  PointMatrix targets(std::size_t i, int M, int degree) const {
    return resample_ground_truth(ground_truth(i), M, degree);
  }

 private:
  fs::path root_;
  Manifest manifest_;
};

}  // namespace moss::data
