#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "pal/checkpoint.hpp"
#include "pal/error.hpp"
#include "pal/harness.hpp"

using namespace pal;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pal_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nn::ModelSpec small_spec() {
  nn::ModelSpec s;
  s.id = "small";
  s.height = s.width = 32;
  s.blocks = {nn::ConvBlock{4, 3, 1, 1, true, nn::PoolSpec{}, "relu1"},
              nn::ConvBlock{8, 3, 1, 1, true, nn::PoolSpec{}, "relu2"}};
  return s;
}

harness::Dataset small_set(std::size_t n, const std::string& split, std::uint64_t seed = 0) {
  data::SynthOptions o;
  o.height = o.width = 32;
  o.min_distractors = 1;
  o.max_distractors = 2;
  o.clearance = 6.0;
  harness::Dataset d;
  for (std::size_t i = 0; i < n; ++i) d.samples.push_back(data::synthesize_sample(seed, split, i, o));
  return d;
}

harness::TrainConfig small_config() {
  harness::TrainConfig c;
  c.config_id = "small";
  c.model = small_spec();
  c.epochs = 2;
  c.batch_size = 8;
  return c;
}

bool same_params(const nn::Parameters& a, const nn::Parameters& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a)
    if (*t.buffer() != *b.at(name).buffer()) return false;
  return true;
}

}  // namespace

TEST(Config, JsonRoundTripAndDefaults) {
  harness::TrainConfig c;
  c.config_id = "x";
  c.tap = "relu3";
  c.method = attr::Method::Grad;
  c.strategy = attr::ChannelStrategy::mean();
  c.lambda = 0.25;
  c.seed = 42;
  const harness::TrainConfig back = nlohmann::json(c).get<harness::TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));

  const auto partial = nlohmann::json::parse(R"({"method": "none", "model": "tiny"})").get<harness::TrainConfig>();
  EXPECT_FALSE(partial.method.has_value());
  EXPECT_EQ(partial.model.id, "tiny");
  EXPECT_EQ(partial.batch_size, 16u);
  EXPECT_EQ(partial.lambda, 1.0);
  EXPECT_EQ(harness::TrainConfig{}.tap_layer(), "relu4");
}

TEST(Config, LoadResolvesRelativePaths) {
  const fs::path dir = fresh_dir("config");
  std::ofstream(dir / "c.json") << R"({"train_manifest": "data/train/manifest.json", "epochs": 3})";
  const harness::TrainConfig c = harness::load_config(dir / "c.json");
  EXPECT_EQ(c.train_manifest, dir / "data/train/manifest.json");
  EXPECT_EQ(c.epochs, 3u);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(harness::load_config(dir / "bad.json"), ConfigError);
  std::ofstream(dir / "typed.json") << R"({"epochs": "many"})";
  EXPECT_THROW(harness::load_config(dir / "typed.json"), ConfigError);
  EXPECT_THROW(harness::load_config(dir / "absent.json"), IoError);
}

TEST(Config, Validation) {
  harness::TrainConfig c;
  c.validate();
  c.tap = "conv9";
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.strategy = attr::ChannelStrategy::mean_of_half(32);
  EXPECT_THROW(c.validate(), ConfigError);
  c.method.reset();  // strategy irrelevant for the baseline
  c.validate();
  c = {};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Split, StratifiedDisjointDeterministic) {
  const harness::Dataset d = small_set(140, "train");
  const auto [train, val] = harness::stratified_split(d, 0.1, 3);
  EXPECT_EQ(train.size(), 126u);
  EXPECT_EQ(val.size(), 14u);
  std::vector<std::size_t> per_class(7, 0);
  for (std::size_t i : val) ++per_class[std::size_t(d.samples[i].label)];
  for (std::size_t c : per_class) EXPECT_EQ(c, 2u);
  std::set<std::size_t> all(train.begin(), train.end());
  for (std::size_t i : val) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 140u);
  EXPECT_EQ(harness::stratified_split(d, 0.1, 3), harness::stratified_split(d, 0.1, 3));
  EXPECT_NE(harness::stratified_split(d, 0.1, 3).second, harness::stratified_split(d, 0.1, 4).second);
}

TEST(Train, LambdaZeroMatchesBaselineBitForBit) {
  const harness::Dataset d = small_set(112, "train");
  harness::TrainConfig pal = small_config();
  pal.lambda = 0.0;
  harness::TrainConfig base = small_config();
  base.method.reset();
  const auto a = harness::train(pal, d, nullptr);
  const auto b = harness::train(base, d, nullptr);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].loss.ce, b.steps[i].loss.ce) << i;
  EXPECT_TRUE(same_params(a.best_params, b.best_params));
  EXPECT_EQ(a.val_acc, b.val_acc);
}

TEST(Train, DeterministicCheckpointBytes) {
  const harness::Dataset d = small_set(112, "train");
  const fs::path dir = fresh_dir("determinism");
  harness::TrainOptions o1, o2;
  o1.checkpoint = dir / "a.ckpt";
  o2.checkpoint = dir / "b.ckpt";
  harness::train(small_config(), d, nullptr, o1);
  harness::train(small_config(), d, nullptr, o2);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  harness::TrainConfig other = small_config();
  other.seed = 1;
  harness::TrainOptions o3;
  o3.checkpoint = dir / "c.ckpt";
  harness::train(other, d, nullptr, o3);
  EXPECT_NE(slurp(dir / "a.ckpt"), slurp(dir / "c.ckpt"));
}

TEST(Train, CrossEntropyDropsOnMostSteps) {
  harness::Dataset d;
  for (std::size_t i = 0; i < 1000; ++i) d.samples.push_back(data::synthesize_sample(0, "train", i));
  harness::TrainConfig c;
  c.method.reset();
  harness::TrainOptions o;
  o.track_step_ce = true;
  o.max_steps = 50;
  const auto r = harness::train(c, d, nullptr, o);
  ASSERT_EQ(r.steps.size(), 50u);
  std::size_t dropped = 0;
  for (const auto& s : r.steps) dropped += *s.ce_after < s.loss.ce;
  RecordProperty("ce_drop_fraction", std::to_string(dropped / 50.0));
  EXPECT_GE(dropped, 40u);
}

TEST(Train, MetricsCsvLayout) {
  const harness::Dataset d = small_set(70, "train");
  const harness::Dataset t = small_set(14, "test");
  const fs::path dir = fresh_dir("metrics");
  harness::TrainOptions o;
  o.metrics_csv = dir / "m.csv";
  harness::TrainConfig c = small_config();
  c.epochs = 1;
  const auto r = harness::train(c, d, &t, o);
  std::ifstream in(dir / "m.csv");
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "config_id,seed,step|epoch,ce,pal,total,val_acc,test_acc,attr_prior_corr,wall_s");
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  EXPECT_EQ(lines.size(), r.steps.size() + 2);  // steps, one epoch row, final row
  EXPECT_EQ(lines.front().rfind("small,0,s0,", 0), 0u);
  EXPECT_EQ(lines.back().rfind("small,0,final,", 0), 0u);
  for (const auto& l : lines) EXPECT_EQ(std::count(l.begin(), l.end(), ','), 9);
  ASSERT_TRUE(r.test_acc.has_value());
  ASSERT_TRUE(r.attr_prior_corr.has_value());
}

TEST(Train, NonFiniteInputAbortsWithStep) {
  harness::Dataset d = small_set(70, "train");
  for (auto& s : d.samples) s.image.pixels[5] = std::numeric_limits<double>::infinity();
  harness::TrainConfig c = small_config();
  c.augment = false;
  try {
    harness::train(c, d, nullptr);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Train, ClassCountMismatch) {
  harness::Dataset d = small_set(70, "train");
  d.n_classes = 5;
  EXPECT_THROW(harness::train(small_config(), d, nullptr), ConfigError);
}

TEST(Eval, UntrainedModelIsAtChance) {
  harness::Dataset d;
  for (std::size_t i = 0; i < 700; ++i) d.samples.push_back(data::synthesize_sample(0, "test", i));
  const nn::ModelSpec spec = nn::ModelSpec::toy();
  harness::EvalOptions o;
  o.attribution = false;
  const auto r = harness::evaluate(spec, nn::init_params(spec, 0), d, o);
  EXPECT_NEAR(r.accuracy, 1.0 / 7.0, 0.05);
  for (const auto& row : r.confusion) {
    std::size_t sum = 0;
    for (std::size_t v : row) sum += v;
    EXPECT_EQ(sum, 100u);
  }
}

TEST(Eval, CorrelationAndMismatch) {
  const harness::Dataset d = small_set(14, "test");
  const nn::ModelSpec spec = small_spec();
  const auto r = harness::evaluate(spec, nn::init_params(spec, 0), d);
  EXPECT_GE(r.attr_prior_corr, -1.0);
  EXPECT_LE(r.attr_prior_corr, 1.0);
  EXPECT_TRUE(r.free_half_corr.has_value());
  harness::Dataset wrong = d;
  wrong.n_classes = 6;
  EXPECT_THROW(harness::evaluate(spec, nn::init_params(spec, 0), wrong), ConfigError);
}

TEST(Attribute, ExportsNamedMapsAtTapResolution) {
  const harness::Dataset d = small_set(7, "test");
  const nn::ModelSpec spec = small_spec();
  const auto params = nn::init_params(spec, 0);
  const fs::path dir = fresh_dir("attribute");
  harness::AttributeRequest req;
  req.samples = {0, 3};
  req.layer = "relu2";
  req.out_dir = dir;
  const auto files = harness::export_attributions(spec, params, d, req);
  EXPECT_EQ(files.size(), 6u);
  EXPECT_TRUE(fs::exists(dir / "0_relu2_gradinput_meanofhalf.pgm"));
  EXPECT_TRUE(fs::exists(dir / "0_relu2_gradinput_meanofhalf-free.pgm"));
  EXPECT_TRUE(fs::exists(dir / "3_relu2_prior.pgm"));
  const data::Image img = data::read_pgm(dir / "3_relu2_gradinput_meanofhalf.pgm");
  EXPECT_EQ(img.height, 16u);
  EXPECT_EQ(img.width, 16u);

  req.method = attr::Method::Grad;
  req.strategy = attr::ChannelStrategy::all_channels();
  req.samples = {1};
  EXPECT_EQ(harness::export_attributions(spec, params, d, req).size(), 8u + 1u);
  EXPECT_TRUE(fs::exists(dir / "1_relu2_grad_all-c7.pgm"));
  req.samples = {99};
  EXPECT_THROW(harness::export_attributions(spec, params, d, req), ConfigError);
}

TEST(Gradcheck, AllConfigurationsPassQuickly) {
  const auto start = std::chrono::steady_clock::now();
  const harness::GradcheckReport r = harness::gradcheck();
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.groups.size(), 7u * 6u);
  EXPECT_LT(r.max_error("grad+mean"), 1e-4);
  EXPECT_LT(r.max_error("gradinput+meanofhalf"), 1e-4);
  for (const auto& g : r.groups) EXPECT_GT(g.checked, 0u) << g.config << " " << g.parameter;
  EXPECT_LT(s, 120.0);
}

TEST(Gradcheck, CrossEntropyOnlyIsTight) {
  // With a larger step the rounding term of the central difference shrinks
  // below the truncation term, which is tiny for this loss.
  harness::GradcheckOptions o;
  o.eps = 1e-4;
  EXPECT_LT(harness::gradcheck(o).max_error("ce"), 1e-6);
}

TEST(Gradcheck, EightByEightTwoConvNet) {
  harness::GradcheckOptions o;
  o.model.height = o.model.width = 8;
  o.model.blocks[0].pool.reset();
  o.seed = 5;
  const harness::GradcheckReport r = harness::gradcheck(o);
  EXPECT_TRUE(r.passed());
  for (const auto& g : r.groups) EXPECT_LT(g.max_rel_error, 1e-4) << g.config << " " << g.parameter;
}

TEST(Ablation, RowCountsAndAggregates) {
  const harness::Dataset train = small_set(70, "train");
  const harness::Dataset test = small_set(14, "test");
  harness::AblationOptions o;
  harness::TrainConfig base = small_config();
  base.epochs = 1;
  harness::TrainConfig b = base, gm = base, gis = base;
  b.config_id = "baseline";
  b.method.reset();
  gm.config_id = "grad-mean";
  gm.method = attr::Method::Grad;
  gm.strategy = attr::ChannelStrategy::mean();
  gis.config_id = "gradinput-meanofhalf";
  o.grid = {b, gm, gis};
  o.seeds = {0, 1, 2, 3, 4};
  const auto rows = harness::run_ablation(o, train, test);
  ASSERT_EQ(rows.size(), 18u);
  for (std::size_t g = 0; g < 3; ++g) {
    double sum = 0.0;
    for (std::size_t s = 0; s < 5; ++s) {
      EXPECT_EQ(rows[g * 6 + s].status, "ok");
      sum += *rows[g * 6 + s].test_acc;
    }
    const auto& agg = rows[g * 6 + 5];
    EXPECT_EQ(agg.seed, "aggregate");
    EXPECT_NEAR(*agg.test_acc, sum / 5.0, 1e-12);
    EXPECT_TRUE(agg.test_acc_ci95.has_value());
  }
  std::ostringstream csv;
  harness::write_ablation_csv(csv, rows);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 19);
}

TEST(Ablation, FailedRunsAreRecordedAndGridContinues) {
  const harness::Dataset train = small_set(70, "train");
  const harness::Dataset test = small_set(14, "test");
  harness::AblationOptions o;
  harness::TrainConfig bad = small_config();
  bad.config_id = "bad";
  bad.tap = "relu7";
  harness::TrainConfig good = small_config();
  good.epochs = 1;
  o.grid = {bad, good};
  o.seeds = {0, 1};
  const auto rows = harness::run_ablation(o, train, test);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].status.rfind("error", 0), 0u);
  EXPECT_FALSE(rows[2].test_acc.has_value());
  EXPECT_EQ(rows[3].status, "ok");
  o.seeds = {0};
  EXPECT_THROW(harness::run_ablation(o, train, test), ConfigError);
}

TEST(Ablation, ConfidenceInterval) {
  const auto [m, h] = harness::mean_ci95({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(h, 1.96 * std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
  EXPECT_EQ(harness::mean_ci95({7.0}).second, 0.0);
}

TEST(Train, PalRaisesHeldOutCorrelation) {
  const harness::Dataset d = small_set(280, "train");
  const harness::Dataset held_out = small_set(28, "test");
  harness::TrainConfig c = small_config();
  c.epochs = 3;
  c.lambda = 0.05;
  const nn::ModelSpec spec = c.model;
  const auto before = harness::evaluate(spec, nn::init_params(spec, c.seed), held_out);
  const auto run = harness::train(c, d, nullptr);
  const auto after = harness::evaluate(spec, run.best_params, held_out);
  RecordProperty("corr_before", std::to_string(before.attr_prior_corr));
  RecordProperty("corr_after", std::to_string(after.attr_prior_corr));
  EXPECT_GT(after.attr_prior_corr, before.attr_prior_corr);
  ASSERT_TRUE(after.free_half_corr.has_value());
  EXPECT_GE(after.attr_prior_corr, *after.free_half_corr);
}
