#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pal/checkpoint.hpp"
#include "pal/error.hpp"
#include "pal/harness.hpp"

namespace fs = std::filesystem;
using namespace pal;

namespace {

struct Overrides {
  std::optional<std::string> tap, method, strategy;
  std::optional<double> lambda, lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size;

  void attach(CLI::App* app) {
    app->add_option("--tap", tap, "Layer the loss is applied to");
    app->add_option("--method", method, "grad | gradinput | none");
    app->add_option("--strategy", strategy, "all | mean | meanofhalf | meanofhalf[C1]");
    app->add_option("--lambda", lambda, "Weight of the attribution loss");
    app->add_option("--seed", seed);
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr, "Initial learning rate");
    app->add_option("--batch-size", batch_size);
  }

  void apply(harness::TrainConfig& c) const {
    if (tap) c.tap = *tap;
    if (method) c.method = *method == "none" ? std::nullopt : std::optional(attr::parse_method(*method));
    if (strategy) c.strategy = attr::parse_strategy(*strategy);
    if (lambda) c.lambda = *lambda;
    if (seed) c.seed = *seed;
    if (epochs) c.epochs = *epochs;
    if (lr) c.lr = *lr;
    if (batch_size) c.batch_size = *batch_size;
  }
};

struct EvalFlags {
  std::string tap;
  std::string method = "gradinput";
  std::string strategy = "meanofhalf";
  double sigma = 3.0;

  void attach(CLI::App* app) {
    app->add_option("--tap", tap, "Layer to attribute (default: last tap)");
    app->add_option("--method", method, "grad | gradinput")->capture_default_str();
    app->add_option("--strategy", strategy, "all | mean | meanofhalf | meanofhalf[C1]")->capture_default_str();
    app->add_option("--sigma", sigma, "Prior bandwidth in input pixels")->capture_default_str();
  }

  harness::EvalOptions options() const {
    harness::EvalOptions o;
    o.tap = tap;
    o.method = attr::parse_method(method);
    o.strategy = attr::parse_strategy(strategy);
    o.sigma = sigma;
    return o;
  }
};

std::vector<std::uint64_t> parse_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("not a non-negative integer: '" + item + "'");
    }
  }
  return out;
}

void print_eval(const harness::EvalResult& r, const harness::EvalOptions& o) {
  std::cout << "accuracy " << std::fixed << std::setprecision(4) << r.accuracy << "\n"
            << "attr_prior_corr " << r.attr_prior_corr << " (" << attr::to_string(o.method) << ", "
            << attr::to_string(o.strategy) << ")\n";
  if (r.free_half_corr) std::cout << "free_half_corr " << *r.free_half_corr << "\n";
  std::cout << "confusion [true x predicted]\n";
  for (const auto& row : r.confusion) {
    for (std::size_t v : row) std::cout << std::setw(5) << v;
    std::cout << "\n";
  }
  std::cout << std::defaultfloat;
}

int run(int argc, char** argv) {
  CLI::App app{"Prior-guided attribution training on synthetic keypoint images"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write synthetic train/test splits");
  fs::path gen_out;
  std::uint64_t gen_seed = 0;
  std::size_t n_train = 2000, n_test = 500;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--n-train", n_train)->capture_default_str();
  gen->add_option("--n-test", n_test)->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train one configuration");
  fs::path tr_config, tr_out = "run";
  Overrides tr_over;
  tr->add_option("--config", tr_config, "JSON training config")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Directory for checkpoint and metrics")->capture_default_str();
  tr_over.attach(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "Accuracy and attribution-prior correlation");
  fs::path ev_ckpt, ev_manifest;
  EvalFlags ev_flags;
  ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", ev_manifest)->required()->check(CLI::ExistingFile);
  ev_flags.attach(ev);

  // attribute
  auto* at = app.add_subcommand("attribute", "Export attribution maps as PGM");
  fs::path at_ckpt, at_manifest, at_out = "maps";
  std::string at_samples = "0";
  EvalFlags at_flags;
  at->add_option("--checkpoint", at_ckpt)->required()->check(CLI::ExistingFile);
  at->add_option("--manifest", at_manifest)->required()->check(CLI::ExistingFile);
  at->add_option("--samples", at_samples, "Comma-separated sample indices")->capture_default_str();
  at->add_option("--out", at_out)->capture_default_str();
  at_flags.attach(at);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Analytic vs finite-difference parameter gradients");
  harness::GradcheckOptions gc_opts;
  gc->add_option("--seed", gc_opts.seed)->capture_default_str();
  gc->add_option("--eps", gc_opts.eps)->capture_default_str();
  gc->add_option("--threshold", gc_opts.threshold)->capture_default_str();
  gc->add_option("--lambda", gc_opts.lambda)->capture_default_str();

  // ablation
  auto* ab = app.add_subcommand("ablation", "Train a grid of configurations over several seeds");
  fs::path ab_config, ab_out = "ablation.csv";
  std::string ab_seeds;
  Overrides ab_over;
  EvalFlags ab_flags;
  ab->add_option("--config", ab_config, "JSON with \"base\" and \"configs\"")->required()->check(CLI::ExistingFile);
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds (default: from the config)");
  ab->add_option("--out", ab_out, "CSV path")->capture_default_str();
  ab_over.attach(ab);
  ab->add_option("--eval-method", ab_flags.method)->capture_default_str();
  ab->add_option("--eval-strategy", ab_flags.strategy)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (*gen) {
    const auto train = data::generate_dataset(gen_out / "train", gen_seed, n_train, "train");
    const auto test = data::generate_dataset(gen_out / "test", gen_seed, n_test, "test");
    std::cout << "wrote " << train.entries.size() << " train and " << test.entries.size() << " test samples to "
              << gen_out.string() << "\n";
    return 0;
  }

  if (*tr) {
    harness::TrainConfig config = harness::load_config(tr_config);
    tr_over.apply(config);
    config.validate();
    if (config.train_manifest.empty()) throw ConfigError("config has no train_manifest");
    const harness::Dataset train = harness::load_dataset(config.train_manifest);
    std::optional<harness::Dataset> test;
    if (!config.test_manifest.empty()) test = harness::load_dataset(config.test_manifest);
    fs::create_directories(tr_out);
    {
      std::ofstream resolved(tr_out / "config.json");
      resolved << nlohmann::json(config).dump(2) << "\n";
    }
    harness::TrainOptions options;
    options.log = &std::cerr;
    options.checkpoint = tr_out / "model.ckpt";
    options.metrics_csv = tr_out / "metrics.csv";
    const harness::RunRecord r = harness::train(config, train, test ? &*test : nullptr, options);
    std::cout << "best epoch " << r.best_epoch + 1 << " val_acc " << r.val_acc[r.best_epoch];
    if (r.test_acc) std::cout << " test_acc " << *r.test_acc << " attr_prior_corr " << *r.attr_prior_corr;
    std::cout << " wall_s " << r.wall_s << "\ncheckpoint " << options.checkpoint->string() << "\n";
    return 0;
  }

  if (*ev) {
    const nn::Checkpoint ck = nn::load_checkpoint(ev_ckpt);
    const harness::EvalOptions o = ev_flags.options();
    print_eval(harness::evaluate(ck.spec, ck.params, harness::load_dataset(ev_manifest), o), o);
    return 0;
  }

  if (*at) {
    const nn::Checkpoint ck = nn::load_checkpoint(at_ckpt);
    const harness::EvalOptions o = at_flags.options();
    harness::AttributeRequest req;
    for (std::uint64_t i : parse_list(at_samples)) req.samples.push_back(i);
    req.layer = o.tap;
    req.method = o.method;
    req.strategy = o.strategy;
    req.sigma = o.sigma;
    req.out_dir = at_out;
    for (const fs::path& p : harness::export_attributions(ck.spec, ck.params, harness::load_dataset(at_manifest), req))
      std::cout << p.string() << "\n";
    return 0;
  }

  if (*gc) {
    const harness::GradcheckReport report = harness::gradcheck(gc_opts);
    std::cout << std::left << std::setw(24) << "config" << std::setw(14) << "parameter" << std::setw(10) << "checked"
              << "max_rel_error\n";
    for (const auto& g : report.groups)
      std::cout << std::setw(24) << g.config << std::setw(14) << g.parameter << std::setw(10) << g.checked
                << std::scientific << std::setprecision(3) << g.max_rel_error << std::defaultfloat << "\n";
    std::cout << (report.passed() ? "PASS" : "FAIL") << " threshold " << report.threshold << " in " << report.seconds
              << "s\n";
    return report.passed() ? 0 : 1;
  }

  if (*ab) {
    std::ifstream in(ab_config);
    const nlohmann::json j = nlohmann::json::parse(in);
    harness::TrainConfig base = j.contains("base") ? j["base"].get<harness::TrainConfig>() : harness::TrainConfig{};
    const fs::path dir = ab_config.parent_path();
    if (base.train_manifest.is_relative()) base.train_manifest = dir / base.train_manifest;
    if (base.test_manifest.is_relative()) base.test_manifest = dir / base.test_manifest;
    harness::AblationOptions options;
    for (const auto& entry : j.at("configs")) {
      nlohmann::json merged = base;
      merged.update(entry);
      harness::TrainConfig c = merged.get<harness::TrainConfig>();
      ab_over.apply(c);
      c.validate();
      options.grid.push_back(c);
    }
    options.seeds = !ab_seeds.empty() ? parse_list(ab_seeds) : j.value("seeds", std::vector<std::uint64_t>{0, 1, 2});
    options.eval.method = attr::parse_method(ab_flags.method);
    options.eval.strategy = attr::parse_strategy(ab_flags.strategy);
    options.log = &std::cerr;
    const harness::Dataset train = harness::load_dataset(base.train_manifest);
    const harness::Dataset test = harness::load_dataset(base.test_manifest);
    const auto rows = harness::run_ablation(options, train, test);
    std::ofstream out(ab_out);
    if (!out) throw IoError("cannot write " + ab_out.string());
    harness::write_ablation_csv(out, rows);
    harness::write_ablation_csv(std::cout, rows);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
