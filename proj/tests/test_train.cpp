#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "moss/autodiff/grad_check.hpp"
#include "moss/train/trainer.hpp"

using namespace moss;
using namespace moss::train;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("moss_test_train_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

PointMatrix straight(int M = 10) {
  PointMatrix p = PointMatrix::Zero(M, 3);
  for (int j = 0; j < M; ++j) p(j, 2) = 0.25 * (j + 1) / M;
  return p;
}

Tensor<double> as_tensor(const PointMatrix& p) {
  std::vector<double> v;
  for (Eigen::Index j = 0; j < p.rows(); ++j)
    for (int a = 0; a < 3; ++a) v.push_back(p(j, a));
  return Tensor<double>({static_cast<std::size_t>(p.rows()), 3}, std::move(v));
}

net::ModelConfig tiny_model() {
  auto c = net::ModelConfig::toy();
  c.base_channels = 4;
  return c;
}

TrainConfig short_run(int epochs = 2) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = 5;
  return tc;
}

/// Drops the wall-time column.
std::string without_wall_time(const std::string& csv) {
  std::string out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    auto end = csv.find('\n', pos);
    if (end == std::string::npos) end = csv.size();
    const auto line = csv.substr(pos, end - pos);
    out += line.substr(0, line.rfind(',')) + "\n";
    pos = end + 1;
  }
  return out;
}

class SmallDataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto dir = scratch("data");
    data::GenerateOptions opt;
    opt.count = 16;
    opt.seed = 9;
    data::generate(opt, dir);
    ds_ = new data::Dataset(data::Dataset::load(dir / "manifest.json"));
  }
  static void TearDownTestSuite() {
    delete ds_;
    fs::remove_all(fs::temp_directory_path() / ("moss_test_train_" + std::to_string(::getpid())));
  }
  static data::Dataset* ds_;
};
data::Dataset* SmallDataset::ds_ = nullptr;

}  // namespace

TEST(Loss, WeightsPutExtraWeightOnTheTip) {
  const auto b = loss_weights(10);
  ASSERT_EQ(b.size(), 10u);
  EXPECT_EQ(b[0], 1.0);
  EXPECT_EQ(b[8], 1.0);
  EXPECT_EQ(b[9], 2.0);
  EXPECT_THROW(loss_weights(0), InvalidInput);
}

TEST(Loss, WorkedExamples) {
  const auto t = straight();
  EXPECT_EQ(shape_loss(as_tensor(t), t, loss_weights(10)).item(), 0.0);

  PointMatrix uniform = t;
  uniform.col(0).array() += 1e-3;
  EXPECT_NEAR(shape_loss(as_tensor(uniform), t, std::vector<double>(10, 1.0)).item(), 1e-6, 1e-18);

  PointMatrix tip = t;
  tip(9, 1) += 1e-3;
  EXPECT_NEAR(shape_loss(as_tensor(tip), t, loss_weights(10, 2.0)).item(), 2e-7, 1e-18);

  EXPECT_THROW(shape_loss(as_tensor(t), straight(12), loss_weights(12)), InvalidInput);
  EXPECT_THROW(shape_loss(as_tensor(t), t, loss_weights(12)), InvalidInput);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  const auto t = straight();
  std::vector<double> v(30);
  for (auto& x : v) x = 0.1 * rng.normal();
  Tensor<double> p({10, 3}, v);
  const auto beta = loss_weights(10, 2.5);
  EXPECT_LT(ad::grad_check([&] { return shape_loss(p, t, beta); }, {p}), 1e-8);
}

TEST(Loss, EndToEndThroughNetworkAndFit) {
  net::ModelConfig cfg;
  cfg.input_size = 16;
  cfg.base_channels = 2;
  auto p = net::convert<double>(net::init_parameters<float>(cfg, 31));
  for (auto [name, factor] : {std::pair{"arclength.head.weight", 10.0}, std::pair{"importance.head.weight", 5.0}}) {
    auto w = p.at(name);
    for (auto& x : w.mutable_data()) x *= factor;
  }
  Rng rng(32);
  std::vector<double> in(2 * 5 * 16 * 16);
  for (auto& x : in) x = rng.uniform();
  const Tensor<double> input({2, 5, 16, 16}, in);
  const PointMatrix targets[2] = {straight(), straight() * 0.9};
  const auto beta = loss_weights(10);
  auto f = [&] {
    const auto maps = net::forward(input, p, cfg, true);
    std::vector<Tensor<double>> terms;
    for (std::size_t n = 0; n < 2; ++n)
      terms.push_back(shape_loss(net::fit_curve(net::pixel_predictions(maps, n), cfg).first, targets[n], beta));
    return ad::scale(ad::add_scalars(terms), 0.5);
  };
  std::vector<Tensor<double>> leaves;
  for (const auto& name : {"encoder.stage0.conv1", "encoder.stage2.bn1.gamma", "centerline.stage3.conv2",
                           "centerline.head.weight", "arclength.head.bias", "importance.stage1.skip.weight"})
    leaves.push_back(p.at(name));
  ad::GradCheckOptions opt;
  opt.step = 1e-5;
  opt.max_coordinates = 64;
  opt.directions = 4;
  EXPECT_LT(ad::grad_check(f, leaves, opt), 1e-4);
}

TEST(TrainConfigTest, ValidationAndJson) {
  TrainConfig c;
  c.lr = 3e-4;
  c.epochs = 7;
  c.train_fraction = 0.1;
  c.shuffle = false;
  const TrainConfig back = json(c).get<TrainConfig>();
  EXPECT_EQ(json(back).dump(), json(c).dump());
  EXPECT_FALSE(back.shuffle);
  EXPECT_TRUE(json::object().get<TrainConfig>().shuffle);
  c.train_fraction = 0.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
  EXPECT_THROW(json({{"lr", -1.0}}).get<TrainConfig>(), InvalidInput);
}

TEST(FractionSubset, DeterministicSizedAndOrdered) {
  std::vector<std::size_t> idx(120);
  std::iota(idx.begin(), idx.end(), std::size_t{1000});
  const auto a = fraction_subset(idx, 0.1, 4);
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(fraction_subset(idx, 0.1, 4), a);
  EXPECT_NE(fraction_subset(idx, 0.1, 5), a);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  for (auto i : a) EXPECT_TRUE(i >= 1000 && i < 1120);
  EXPECT_EQ(fraction_subset(idx, 1.0, 4), idx);
  EXPECT_EQ(fraction_subset({1, 2, 3}, 0.1, 4).size(), 1u);
  EXPECT_THROW(fraction_subset(idx, 0.0, 4), InvalidInput);
}

TEST_F(SmallDataset, RunDirectoryContents) {
  const auto dir = scratch("run");
  auto tc = short_run(2);
  tc.checkpoint_every = 1;
  const auto cfg = tiny_model();
  const auto out = run_training(net::init_parameters<float>(cfg, 1), cfg, *ds_, tc, dir);
  for (const char* f : {"config.json", "metrics.csv", "best.ckpt", "last.ckpt", "epoch1.ckpt", "epoch2.ckpt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto csv = slurp(dir / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(csv.rfind(csv_header(), 0), 0u);
  ASSERT_EQ(out.result.history.size(), 2u);
  EXPECT_GE(out.result.best_epoch, 1);
  const auto snapshot = json::parse(slurp(dir / "config.json"));
  EXPECT_EQ(snapshot.at("model").get<net::ModelConfig>(), cfg);
  EXPECT_EQ(snapshot.at("train").at("epochs").get<int>(), 2);
  const auto best = net::load_model(dir / "best.ckpt");
  EXPECT_EQ(best.config, cfg);
  EXPECT_EQ(best.metadata.at("best_epoch").get<int>(), out.result.best_epoch);
}

TEST_F(SmallDataset, TwoRunsAreBitIdentical) {
  const auto cfg = tiny_model();
  const auto a = scratch("det_a"), b = scratch("det_b");
  run_training(net::init_parameters<float>(cfg, 1), cfg, *ds_, short_run(2), a);
  run_training(net::init_parameters<float>(cfg, 1), cfg, *ds_, short_run(2), b);
  EXPECT_EQ(without_wall_time(slurp(a / "metrics.csv")), without_wall_time(slurp(b / "metrics.csv")));
  EXPECT_EQ(slurp(a / "best.ckpt"), slurp(b / "best.ckpt"));
  EXPECT_EQ(slurp(a / "last.ckpt"), slurp(b / "last.ckpt"));
}

TEST_F(SmallDataset, ValidationMetricMatchesBenchmarkMetric) {
  const auto cfg = tiny_model();
  const auto train = load_samples(*ds_, ds_->indices(data::Split::train), cfg);
  const auto val = load_samples(*ds_, ds_->indices(data::Split::val), cfg);
  ASSERT_GT(val.size(), 0u);
  net::NetworkParameters<float> after;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](int, const net::NetworkParameters<float>& p) { after = deep_copy(p); };
  const auto r = train_loop(net::init_parameters<float>(cfg, 2), cfg, train, val, short_run(1), hooks);
  ASSERT_EQ(r.history.size(), 1u);
  // score the same parameters from scratch through the benchmark functions
  std::vector<PointMatrix> pred;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto sp = net::predict_shape(ds_->image(ds_->indices(data::Split::val)[i]), default_roi(ds_->manifest().camera),
                                       after, cfg);
    pred.push_back(sp.points);
  }
  const auto rep = bench::evaluate_predictions(pred, val.targets, cfg.degree);
  EXPECT_NEAR(rep.mers_mm, r.history[0].val_mers_mm, 1e-12);
  EXPECT_NEAR(rep.mert_mm, r.history[0].val_mert_mm, 1e-12);
}

TEST_F(SmallDataset, NonFiniteLossReportsEpochAndNorms) {
  const auto cfg = tiny_model();
  auto p = net::init_parameters<float>(cfg, 3);
  auto w = p.at("encoder.stage1.conv1");
  w.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  const auto train = load_samples(*ds_, ds_->indices(data::Split::train), cfg);
  try {
    train_loop(std::move(p), cfg, train, {}, short_run(1));
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("encoder.stage1.conv1="), std::string::npos) << msg;
  }
}

TEST_F(SmallDataset, FinetuneWithZeroEpochsKeepsTheCheckpoint) {
  const auto cfg = tiny_model();
  const auto dir = scratch("ft0");
  net::save_model(dir / "in.ckpt", net::init_parameters<float>(cfg, 4), cfg, {{"note", "x"}});
  auto tc = short_run(0);
  const auto out = finetune(net::load_model(dir / "in.ckpt"), *ds_, tc, dir / "out");
  EXPECT_EQ(slurp(dir / "in.ckpt"), slurp(out.best_checkpoint));
}

TEST_F(SmallDataset, FinetuneUsesAFractionAndRecordsTheSource) {
  const auto cfg = tiny_model();
  const auto dir = scratch("ft1");
  net::save_model(dir / "in.ckpt", net::init_parameters<float>(cfg, 4), cfg);
  auto tc = short_run(1);
  tc.train_fraction = 0.3;
  tc.lr = 1e-4;
  std::vector<std::string> lines;
  finetune(net::load_model(dir / "in.ckpt"), *ds_, tc, dir / "out", [&](const std::string& s) { lines.push_back(s); });
  const auto expected = fraction_subset(ds_->indices(data::Split::train), 0.3, tc.seed).size();
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines[0], "loading " + std::to_string(expected) + " training samples");
  EXPECT_TRUE(json::parse(slurp(dir / "out" / "config.json")).contains("finetune_from"));
}

TEST_F(SmallDataset, MismatchedInputSizeIsRejected) {
  auto cfg = tiny_model();
  cfg.input_size = 48;
  const auto dir = scratch("mismatch");
  EXPECT_THROW(run_training(net::init_parameters<float>(cfg, 1), cfg, *ds_, short_run(1), dir), InvalidInput);
  net::save_model(dir / "m.ckpt", net::init_parameters<float>(cfg, 1), cfg);
  EXPECT_THROW(finetune(net::load_model(dir / "m.ckpt"), *ds_, short_run(1), dir / "out"), InvalidInput);
}
