#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "moss/bench/ablation.hpp"
#include "moss/bench/metrics.hpp"
#include "moss/bench/report.hpp"
#include "moss/data/dataset.hpp"
#include "moss/net/io.hpp"
#include "moss/net/predict.hpp"
#include "moss/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moss;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kBadArgs = 2, kDataError = 3, kNumerical = 4 };

void info(const std::string& msg) { std::cerr << msg << "\n"; }

fs::path default_run_dir(const std::string& leaf) {
  const char* env = std::getenv("MOSS_RUN_DIR");
  return fs::path(env && *env ? env : "runs") / leaf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write output file", {path.string()});
  out << text;
}

render::Roi parse_roi(const std::string& s, int width, int height) {
  if (s.empty()) return render::Roi::full(width, height);
  render::Roi r;
  char c1, c2, c3;
  std::istringstream is(s);
  if (!(is >> r.x >> c1 >> r.y >> c2 >> r.width >> c3 >> r.height) || c1 != ',' || c2 != ',' || c3 != ',')
    throw InvalidInput("--roi expects x,y,width,height");
  return r;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidInput("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  if (out.empty()) throw InvalidInput("empty integer list");
  return out;
}

json points_json(const PointMatrix& p) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) rows.push_back({p(i, 0), p(i, 1), p(i, 2)});
  return rows;
}

PointMatrix points_from_json(const json& rows) {
  PointMatrix p(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != 3) throw DataError("prediction rows must have 3 coordinates");
    for (int a = 0; a < 3; ++a) p(static_cast<Eigen::Index>(i), a) = rows[i][static_cast<std::size_t>(a)].get<double>();
  }
  return p;
}

void emit_report(const bench::Table& table, const json& machine, const std::string& csv_path,
                 const std::string& json_path) {
  std::cout << table.text();
  if (!csv_path.empty()) write_text(csv_path, table.csv());
  if (!json_path.empty()) write_text(json_path, machine.dump(2) + "\n");
}

struct ModelFlags {
  int input_size = 64;
  int base_channels = 16;
  int degree = 4;
  int query_points = 10;
  bool no_arclength = false;
  bool no_importance = false;

  void add(CLI::App* app) {
    app->add_option("--input-size", input_size, "network input resolution");
    app->add_option("--base-channels", base_channels, "channels of the first encoder stage");
    app->add_option("--degree", degree, "polynomial degree n");
    app->add_option("--points", query_points, "query points M");
    app->add_flag("--no-arclength", no_arclength, "disable the arclength decoder");
    app->add_flag("--no-importance", no_importance, "disable the importance decoder");
  }
  net::ModelConfig config() const {
    net::ModelConfig c;
    c.input_size = input_size;
    c.base_channels = base_channels;
    c.degree = degree;
    c.query_points = query_points;
    c.decoders = {!no_arclength, !no_importance};
    c.validate();
    return c;
  }
};

struct TrainFlags {
  train::TrainConfig tc;
  void add(CLI::App* app) {
    app->add_option("--epochs", tc.epochs, "training epochs");
    app->add_option("--batch-size", tc.batch_size, "minibatch size");
    app->add_option("--lr", tc.lr, "AdamW learning rate");
    app->add_option("--weight-decay", tc.weight_decay, "AdamW weight decay");
    app->add_option("--seed", tc.seed, "seed for init, shuffling and subsets");
    app->add_option("--checkpoint-every", tc.checkpoint_every, "extra checkpoint cadence in epochs");
    app->add_flag("!--no-shuffle", tc.shuffle, "keep the batch order fixed across epochs");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular shape sensing pipeline: simulate, train, evaluate"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (generation)")->check(CLI::PositiveNumber);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a simulated dataset");
  data::GenerateOptions gopt;
  std::string gen_mode = "mixed", gen_out, geometry_path;
  gen->add_option("--count", gopt.count, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--mode", gen_mode, "free, loaded or mixed");
  gen->add_option("--camera", gopt.camera, "camera preset: default or wide");
  gen->add_option("--seed", gopt.seed, "generation seed");
  gen->add_option("--name", gopt.name, "dataset name");
  gen->add_option("--geometry", geometry_path, "robot geometry JSON (partial override)");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* trn = app.add_subcommand("train", "train a model on a dataset");
  std::string train_data, train_out;
  ModelFlags train_model;
  TrainFlags train_flags;
  trn->add_option("--data", train_data, "dataset manifest.json")->required();
  trn->add_option("--out", train_out, "run directory (default $MOSS_RUN_DIR/train)");
  train_model.add(trn);
  train_flags.add(trn);

  // finetune
  auto* fine = app.add_subcommand("finetune", "continue training a checkpoint on another dataset");
  std::string fine_ckpt, fine_data, fine_out;
  TrainFlags fine_flags;
  fine->add_option("--ckpt", fine_ckpt, "starting checkpoint")->required();
  fine->add_option("--data", fine_data, "dataset manifest.json")->required();
  fine->add_option("--out", fine_out, "run directory (default $MOSS_RUN_DIR/finetune)");
  fine->add_option("--fraction", fine_flags.tc.train_fraction, "fraction of the training split");
  fine_flags.add(fine);

  // eval
  auto* evl = app.add_subcommand("eval", "MERS/MERT on a dataset split");
  std::string eval_data, eval_ckpt, eval_predictions, eval_split = "test", eval_csv, eval_json, eval_label;
  bool eval_fps = false;
  int eval_degree = 4;
  evl->add_option("--data", eval_data, "dataset manifest.json")->required();
  auto* eval_ckpt_opt = evl->add_option("--ckpt", eval_ckpt, "model checkpoint");
  evl->add_option("--predictions", eval_predictions, "predictions JSON {\"samples\": {id: [[x,y,z], ...]}}")
      ->excludes(eval_ckpt_opt);
  evl->add_option("--degree", eval_degree, "degree used for the M >= 2(n+1) check with --predictions");
  evl->add_option("--split", eval_split, "train, val or test");
  evl->add_flag("--fps", eval_fps, "also measure end-to-end fps");
  evl->add_option("--csv", eval_csv, "write the table as CSV");
  evl->add_option("--json", eval_json, "write the report as JSON");
  evl->add_option("--label", eval_label, "method name in the table");

  // infer
  auto* inf = app.add_subcommand("infer", "predict the centerline from one image");
  std::string infer_image, infer_ckpt, infer_out, infer_svg, infer_roi, infer_camera;
  inf->add_option("--image", infer_image, "RGB PNG")->required();
  inf->add_option("--ckpt", infer_ckpt, "model checkpoint")->required();
  inf->add_option("--roi", infer_roi, "crop x,y,width,height (default full image)");
  inf->add_option("--out", infer_out, "curve JSON path (default stdout)");
  inf->add_option("--svg", infer_svg, "write an SVG plot of the predicted curve");
  inf->add_option("--camera", infer_camera, "camera JSON; overlays the projected curve on the image in the SVG");

  // bench
  auto* bch = app.add_subcommand("bench", "end-to-end latency with per-stage breakdown");
  std::string bench_data, bench_ckpt, bench_split = "test", bench_json;
  std::size_t bench_frames = 100, bench_warmup = 10;
  std::uint64_t bench_shuffle = 0;
  bch->add_option("--data", bench_data, "dataset manifest.json")->required();
  bch->add_option("--ckpt", bench_ckpt, "model checkpoint")->required();
  bch->add_option("--split", bench_split, "train, val or test");
  bch->add_option("--frames", bench_frames, "timed frames");
  bch->add_option("--warmup", bench_warmup, "untimed warmup frames");
  bch->add_option("--shuffle-seed", bench_shuffle, "permute the frame order with this seed (0 keeps it)");
  bch->add_option("--json", bench_json, "write the report as JSON");

  // ablate
  auto* abl = app.add_subcommand("ablate", "decoder and polynomial-degree ablation tables");
  std::string ablate_data, ablate_out, ablate_degrees = "2,3,4,5";
  bool ablate_no_decoders = false, ablate_no_degrees = false;
  ModelFlags ablate_model;
  TrainFlags ablate_flags;
  std::size_t ablate_frames = 50;
  abl->add_option("--data", ablate_data, "dataset manifest.json")->required();
  abl->add_option("--out", ablate_out, "run directory (default $MOSS_RUN_DIR/ablate)");
  abl->add_option("--degrees", ablate_degrees, "degrees for the degree sweep");
  abl->add_flag("--skip-decoders", ablate_no_decoders, "skip the decoder sweep");
  abl->add_flag("--skip-degrees", ablate_no_degrees, "skip the degree sweep");
  abl->add_option("--fps-frames", ablate_frames, "frames timed per variant");
  ablate_model.add(abl);
  ablate_flags.add(abl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadArgs;
  }

  auto record_command = [&](const fs::path& dir) {
    fs::create_directories(dir);
    json cmd = json::array();
    for (int i = 0; i < argc; ++i) cmd.push_back(argv[i]);
    write_text(dir / "command.json", json{{"argv", cmd}, {"threads", threads}}.dump(2) + "\n");
  };

  try {
    if (*gen) {
      gopt.mode = data::generation_mode_from_string(gen_mode);
      gopt.threads = threads;
      if (!geometry_path.empty()) gopt.geometry = rod::load_geometry(geometry_path);
      const auto m = data::generate(gopt, gen_out, info);
      std::cout << "generated " << m.samples.size() << " samples in " << gen_out << " (train " << m.count(data::Split::train)
                << ", val " << m.count(data::Split::val) << ", test " << m.count(data::Split::test) << ")\n";
      return kOk;
    }

    if (*trn) {
      const fs::path out = train_out.empty() ? default_run_dir("train") : fs::path(train_out);
      record_command(out);
      const auto cfg = train_model.config();
      const auto ds = data::Dataset::load(train_data);
      const auto run = train::run_training(net::init_parameters<float>(cfg, train_flags.tc.seed), cfg, ds,
                                           train_flags.tc, out, {}, info);
      std::cout << "best epoch " << run.result.best_epoch << ", val MERS " << bench::fixed(run.result.best_val_mers_mm)
                << " mm -> " << run.best_checkpoint.string() << "\n";
      return kOk;
    }

    if (*fine) {
      const fs::path out = fine_out.empty() ? default_run_dir("finetune") : fs::path(fine_out);
      record_command(out);
      const auto model = net::load_model(fine_ckpt);
      const auto ds = data::Dataset::load(fine_data);
      const auto run = train::finetune(model, ds, fine_flags.tc, out, info);
      std::cout << "finetuned -> " << run.best_checkpoint.string() << "\n";
      return kOk;
    }

    if (*evl) {
      const auto ds = data::Dataset::load(eval_data);
      const auto split = data::split_from_string(eval_split);
      const auto idx = ds.indices(split);
      if (idx.empty()) throw InvalidInput("split '" + eval_split + "' is empty");
      bench::ShapeErrorReport rep;
      std::string label = eval_label;
      if (!eval_predictions.empty()) {
        std::ifstream in(eval_predictions);
        if (!in) throw DataError("cannot open predictions", {eval_predictions});
        json pj;
        try {
          pj = json::parse(in);
        } catch (const json::exception& e) {
          throw DataError(std::string("malformed predictions: ") + e.what(), {eval_predictions});
        }
        std::vector<PointMatrix> pred, truth;
        for (auto i : idx) {
          const auto& id = ds.record(i).id;
          if (!pj.at("samples").contains(id)) throw DataError("predictions lack sample " + id, {eval_predictions});
          pred.push_back(points_from_json(pj["samples"][id]));
          truth.push_back(ds.targets(i, static_cast<int>(pred.back().rows()), eval_degree));
        }
        rep = bench::evaluate_predictions(pred, truth, eval_degree);
        if (label.empty()) label = fs::path(eval_predictions).stem().string();
      } else {
        if (eval_ckpt.empty()) throw InvalidInput("eval needs --ckpt or --predictions");
        const auto model = net::load_model(eval_ckpt);
        const auto set = train::load_samples(ds, idx, model.config);
        rep = train::evaluate(set, model.params, model.config);
        rep.config_digest = sha256_hex(json(model.config).dump());
        if (eval_fps) {
          std::vector<render::Image> images;
          for (auto i : idx) images.push_back(ds.image(i));
          std::vector<std::size_t> order(images.size());
          std::iota(order.begin(), order.end(), std::size_t{0});
          rep.fps = bench::measure_model_fps(images, train::default_roi(ds.manifest().camera), model.params,
                                             model.config, order)
                        .fps;
        }
        if (label.empty()) label = fs::path(eval_ckpt).stem().string();
      }
      emit_report(bench::results_table({{label, rep}}), json(rep), eval_csv, eval_json);
      return kOk;
    }

    if (*inf) {
      const auto model = net::load_model(infer_ckpt);
      const auto img = render::read_png_rgb(infer_image);
      const auto pred = net::predict_shape(img, parse_roi(infer_roi, img.width, img.height), model.params, model.config);
      const json out{{"image", infer_image},
                     {"degree", pred.curve.degree},
                     {"curve", curvefit::to_json(pred.curve)},
                     {"points", points_json(pred.points)}};
      if (infer_out.empty())
        std::cout << out.dump(2) << "\n";
      else
        write_text(infer_out, out.dump(2) + "\n");
      if (!infer_svg.empty()) {
        if (infer_camera.empty()) {
          write_text(infer_svg, bench::curves_svg(pred.points, pred.points, "predicted centerline"));
        } else {
          std::ifstream cin(infer_camera);
          if (!cin) throw DataError("cannot open camera", {infer_camera});
          const auto cam = json::parse(cin).get<render::CameraModel>();
          std::ostringstream svg;
          svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << img.width << "\" height=\"" << img.height
              << "\">\n<image href=\"" << fs::absolute(infer_image).string() << "\" width=\"" << img.width
              << "\" height=\"" << img.height << "\"/>\n<polyline fill=\"none\" stroke=\"#d33\" stroke-width=\"2\" points=\"";
          bool first = true;
          for (Eigen::Index i = 0; i < pred.points.rows(); ++i)
            if (auto uv = cam.project(pred.points.row(i).transpose())) {
              svg << (first ? "" : " ") << uv->x() << "," << uv->y();
              first = false;
            }
          svg << "\"/>\n</svg>\n";
          write_text(infer_svg, svg.str());
        }
      }
      return kOk;
    }

    if (*bch) {
      const auto model = net::load_model(bench_ckpt);
      const auto ds = data::Dataset::load(bench_data);
      const auto idx = ds.indices(data::split_from_string(bench_split));
      if (idx.empty()) throw InvalidInput("split '" + bench_split + "' is empty");
      std::vector<render::Image> images;
      for (std::size_t k = 0; k < std::min(bench_frames, idx.size()); ++k) images.push_back(ds.image(idx[k]));
      std::vector<std::size_t> order(images.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (bench_shuffle != 0) {
        Rng rng(bench_shuffle);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      }
      const auto rep = bench::measure_model_fps(images, train::default_roi(ds.manifest().camera), model.params,
                                                model.config, order, bench_warmup);
      emit_report(bench::fps_table(rep), json(rep), "", bench_json);
      return kOk;
    }

    if (*abl) {
      const fs::path out = ablate_out.empty() ? default_run_dir("ablate") : fs::path(ablate_out);
      record_command(out);
      const auto base = ablate_model.config();
      const auto degrees = parse_ints(ablate_degrees);
      const auto degree_sweep = bench::degree_variants(base, degrees);
      const auto ds = data::Dataset::load(ablate_data);
      bench::AblationOptions opt;
      opt.train = ablate_flags.tc;
      opt.fps_frames = ablate_frames;
      if (!ablate_no_decoders) {
        const auto rows = bench::run_ablation(ds, base, bench::decoder_variants(base), opt, out / "decoders", info);
        const auto table = bench::decoder_table(rows);
        std::cout << table.text() << "\n";
        write_text(out / "decoders.csv", table.csv());
        write_text(out / "decoders.txt", table.text());
      }
      if (!ablate_no_degrees) {
        const auto rows =
            bench::run_ablation(ds, base, degree_sweep, opt, out / "degrees", info);
        const auto table = bench::degree_table(rows);
        std::cout << table.text() << "\n";
        write_text(out / "degrees.csv", table.csv());
        write_text(out / "degrees.txt", table.text());
      }
      return kOk;
    }
  } catch (const InvalidInput& e) {
    std::cerr << "error[invalid-input]: " << e.what() << "\n";
    return kBadArgs;
  } catch (const DataError& e) {
    std::cerr << "error[data]: " << e.what() << "\n";
    return kDataError;
  } catch (const DegenerateView& e) {
    std::cerr << "error[data]: " << e.what() << "\n";
    return kDataError;
  } catch (const SingularSystem& e) {
    std::cerr << "error[numerical]: " << e.what() << "\n";
    return kNumerical;
  } catch (const NonConvergence& e) {
    std::cerr << "error[numerical]: " << e.what() << "\n";
    return kNumerical;
  } catch (const UpdateAborted& e) {
    std::cerr << "error[numerical]: " << e.what() << "\n";
    return kNumerical;
  } catch (const NumericalFailure& e) {
    std::cerr << "error[numerical]: " << e.what() << "\n";
    return kNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error[data]: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOk;
}
