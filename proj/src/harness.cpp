#include "pal/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "pal/autograd.hpp"
#include "pal/checkpoint.hpp"
#include "pal/error.hpp"
#include "pal/ops.hpp"
#include "pal/optim.hpp"
#include "pal/tape.hpp"

namespace pal::harness {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string method_name(const std::optional<attr::Method>& m) { return m ? attr::to_string(*m) : "none"; }

std::string fmt(std::optional<double> v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

// Loss of one recorded forward pass: CE alone, or CE + lambda * PAL.
struct StepLoss {
  Tensor ce;
  Tensor pal;
  Tensor total;
};

StepLoss step_loss(const nn::ForwardTrace& trace, std::span<const int> labels, const std::string& tap,
                   const std::optional<attr::Method>& method, const attr::ChannelStrategy& strategy,
                   const Tensor& priors, double lambda, bool create_graph) {
  StepLoss out;
  out.ce = nn::softmax_cross_entropy(trace.logits, labels);
  out.total = out.ce;
  if (method) {
    const attr::AttributionMap a = attr::attribute(trace, tap, *method, create_graph);
    out.pal = loss::pal_loss(attr::reduce_channels(a.values, strategy), priors);
    out.total = loss::total_loss(out.ce, out.pal, lambda);
  }
  return out;
}

Tensor priors_for(const std::vector<const data::Sample*>& samples, const nn::TapShape& tap, double sigma) {
  std::vector<prior::Heatmap> maps;
  maps.reserve(samples.size());
  for (const data::Sample* s : samples)
    maps.push_back(prior::build_prior(s->landmarks, s->image.height, s->image.width, tap.height, tap.width, sigma));
  return prior::stack(maps);
}

std::vector<int> labels_of(const std::vector<const data::Sample*>& samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const data::Sample* s : samples) labels.push_back(s->label);
  return labels;
}

std::vector<std::size_t> epoch_order(const Dataset& set, const std::vector<std::size_t>& indices, Rng rng,
                                     bool balanced) {
  std::vector<std::size_t> order = indices;
  std::shuffle(order.begin(), order.end(), rng.engine());
  if (!balanced) return order;
  // Round-robin over classes so every mini-batch sees the classes evenly.
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i : order) by_class[set.samples[i].label].push_back(i);
  std::vector<std::size_t> out;
  out.reserve(order.size());
  for (std::size_t round = 0; out.size() < order.size(); ++round)
    for (auto& [label, members] : by_class)
      if (round < members.size()) out.push_back(members[round]);
  return out;
}

void csv_row(std::ostream& out, const std::string& config_id, std::uint64_t seed, const std::string& when,
             std::optional<double> ce, std::optional<double> pal, std::optional<double> total,
             std::optional<double> val, std::optional<double> test, std::optional<double> corr, double wall) {
  out << config_id << ',' << seed << ',' << when << ',' << fmt(ce) << ',' << fmt(pal) << ',' << fmt(total) << ','
      << fmt(val) << ',' << fmt(test) << ',' << fmt(corr) << ',' << fmt(wall) << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  model.validate();
  const std::string layer = tap_layer();
  if (!model.has_tap(layer)) throw ConfigError("tap layer '" + layer + "' is not declared by the model");
  if (method) strategy.constrained(model.tap_shape(layer).channels);
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("lambda must be finite and non-negative");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0 || epochs == 0) throw ConfigError("batch size and epochs must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("validation fraction must be in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"config_id", c.config_id},
                     {"model", c.model},
                     {"tap", c.tap},
                     {"method", method_name(c.method)},
                     {"strategy", attr::to_string(c.strategy)},
                     {"lambda", c.lambda},
                     {"sigma", c.sigma},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"total_steps", c.total_steps},
                     {"seed", c.seed},
                     {"train_manifest", c.train_manifest.string()},
                     {"test_manifest", c.test_manifest.string()},
                     {"augment", c.augment},
                     {"balanced_sampler", c.balanced_sampler},
                     {"val_fraction", c.val_fraction}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c.config_id = j.value("config_id", c.config_id);
    if (j.contains("model")) {
      if (j["model"].is_string()) c.model = nn::ModelSpec::preset(j["model"].get<std::string>());
      else c.model = j["model"].get<nn::ModelSpec>();
    }
    c.tap = j.value("tap", c.tap);
    if (j.contains("method")) {
      const std::string m = j["method"].get<std::string>();
      c.method = (m == "none" || m == "None" || m.empty()) ? std::nullopt : std::optional(attr::parse_method(m));
    }
    if (j.contains("strategy")) c.strategy = attr::parse_strategy(j["strategy"].get<std::string>());
    c.lambda = j.value("lambda", c.lambda);
    c.sigma = j.value("sigma", c.sigma);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("train_manifest")) c.train_manifest = j["train_manifest"].get<std::string>();
    if (j.contains("test_manifest")) c.test_manifest = j["test_manifest"].get<std::string>();
    c.augment = j.value("augment", c.augment);
    c.balanced_sampler = j.value("balanced_sampler", c.balanced_sampler);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid training config: ") + e.what());
  }
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  TrainConfig c;
  try {
    c = nlohmann::json::parse(in).get<TrainConfig>();
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  const fs::path base = path.parent_path();
  if (!c.train_manifest.empty() && c.train_manifest.is_relative()) c.train_manifest = base / c.train_manifest;
  if (!c.test_manifest.empty() && c.test_manifest.is_relative()) c.test_manifest = base / c.test_manifest;
  return c;
}

// ---------------------------------------------------------------------------
// Data plumbing

Dataset load_dataset(const fs::path& manifest) {
  const data::DatasetManifest m = data::load_manifest(manifest);
  return {data::load_samples(m), m.n_classes};
}

Tensor to_batch(const std::vector<const data::Sample*>& samples) {
  if (samples.empty()) throw ShapeError("empty batch");
  const std::size_t h = samples.front()->image.height, w = samples.front()->image.width;
  Buffer values;
  values.reserve(samples.size() * h * w);
  for (const data::Sample* s : samples) {
    if (s->image.height != h || s->image.width != w) throw ShapeError("images in a batch differ in size");
    values.insert(values.end(), s->image.pixels.begin(), s->image.pixels.end());
  }
  return Tensor({samples.size(), 1, h, w}, std::move(values));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const Dataset& set,
                                                                               double val_fraction,
                                                                               std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < set.samples.size(); ++i) by_class[set.samples[i].label].push_back(i);
  Rng rng = Rng(seed).split("split");
  std::vector<std::size_t> train, val;
  for (auto& [label, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng.split(static_cast<std::uint64_t>(label)).engine());
    const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(members.size())));
    val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

// ---------------------------------------------------------------------------
// Training

RunRecord train(const TrainConfig& config, const Dataset& train_set, const Dataset* test_set,
                const TrainOptions& options) {
  config.validate();
  const auto start = Clock::now();
  const nn::ModelSpec& spec = config.model;
  if (train_set.n_classes != spec.n_classes) throw ConfigError("class-count mismatch between data and model");
  const std::string tap = config.tap_layer();
  const nn::TapShape tap_shape = spec.tap_shape(tap);

  const auto [train_idx, val_idx] = stratified_split(train_set, config.val_fraction, config.seed);
  if (train_idx.empty()) throw ConfigError("no training samples left after the validation split");
  std::vector<data::Sample> val_samples;
  for (std::size_t i : val_idx) val_samples.push_back(train_set.samples[i]);

  const Rng root(config.seed);
  const Rng batching = root.split("batching");
  const Rng augmenting = root.split("augment");

  nn::Parameters params = nn::init_params(spec, config.seed);
  nn::AdamState adam;
  const std::size_t steps_per_epoch = (train_idx.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = config.total_steps ? config.total_steps : steps_per_epoch * config.epochs;

  std::ofstream metrics;
  if (options.metrics_csv) {
    const bool fresh = !fs::exists(*options.metrics_csv) || fs::file_size(*options.metrics_csv) == 0;
    metrics.open(*options.metrics_csv, std::ios::app);
    if (!metrics) throw IoError("cannot open metrics file " + options.metrics_csv->string());
    if (fresh) metrics << "config_id,seed,step|epoch,ce,pal,total,val_acc,test_acc,attr_prior_corr,wall_s\n";
  }

  RunRecord record;
  record.config_id = config.config_id;
  record.seed = config.seed;
  double best_val = -1.0;
  std::size_t step = 0;
  bool stop = false;

  for (std::size_t epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    const std::vector<std::size_t> order =
        epoch_order(train_set, train_idx, batching.split(epoch), config.balanced_sampler);
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      if (step >= total_steps || (options.max_steps && step >= options.max_steps)) {
        stop = true;
        break;
      }
      const std::size_t last = std::min(order.size(), first + config.batch_size);
      std::vector<data::Sample> batch_samples;
      const Rng step_rng = augmenting.split(step);
      for (std::size_t k = first; k < last; ++k) {
        const data::Sample& s = train_set.samples[order[k]];
        if (config.augment) {
          Rng r = step_rng.split(k - first);
          batch_samples.push_back(data::augment(s, r));
        } else {
          batch_samples.push_back(s);
        }
      }
      std::vector<const data::Sample*> ptrs;
      for (const data::Sample& s : batch_samples) ptrs.push_back(&s);
      const Tensor batch = to_batch(ptrs);
      const std::vector<int> labels = labels_of(ptrs);
      const Tensor priors = config.method ? priors_for(ptrs, tap_shape, config.sigma) : Tensor();

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = nn::poly_decay(config.lr, step, total_steps);
      try {
        Tape tape;
        const nn::ForwardTrace trace = nn::forward(spec, params, batch, &tape);
        const StepLoss l = step_loss(trace, labels, tap, config.method, config.strategy, priors, config.lambda, true);
        rec.loss = loss::total_loss(l.ce.item(), l.pal.defined() ? l.pal.item() : 0.0, config.lambda);
        std::vector<std::string> names;
        std::vector<Tensor> leaves;
        for (const auto& [name, t] : trace.params) {
          names.push_back(name);
          leaves.push_back(t);
        }
        const std::vector<Tensor> grads = backward(l.total, leaves, false);
        std::map<std::string, Tensor> by_name;
        for (std::size_t i = 0; i < names.size(); ++i) by_name.emplace(names[i], grads[i]);
        nn::adam_step(params, by_name, adam, rec.lr);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(step) + " (ce=" +
                           std::to_string(rec.loss.ce) + ", pal=" + std::to_string(rec.loss.pal) +
                           ", total=" + std::to_string(rec.loss.total) + "): " + e.what());
      }
      if (options.track_step_ce) {
        const nn::ForwardTrace after = nn::forward(spec, params, batch);
        rec.ce_after = nn::softmax_cross_entropy(after.logits, labels).item();
      }
      if (metrics.is_open())
        csv_row(metrics, config.config_id, config.seed, "s" + std::to_string(step), rec.loss.ce, rec.loss.pal,
                rec.loss.total, {}, {}, {}, seconds_since(start));
      record.steps.push_back(rec);
      ++step;
    }

    const double val = val_samples.empty() ? 0.0 : accuracy(spec, params, val_samples);
    record.val_acc.push_back(val);
    if (val > best_val) {
      best_val = val;
      record.best_epoch = epoch;
      record.best_params = params;
    }
    if (metrics.is_open())
      csv_row(metrics, config.config_id, config.seed, "e" + std::to_string(epoch), {}, {}, {}, val, {}, {},
              seconds_since(start));
    if (options.log)
      *options.log << "[" << config.config_id << " seed " << config.seed << "] epoch " << epoch + 1 << "/"
                   << config.epochs << " step " << step << " ce " << record.steps.back().loss.ce << " pal "
                   << record.steps.back().loss.pal << " val_acc " << val << " (" << std::fixed
                   << std::setprecision(1) << seconds_since(start) << "s)" << std::defaultfloat
                   << std::setprecision(6) << std::endl;
  }

  if (options.checkpoint) nn::save_checkpoint(*options.checkpoint, spec, record.best_params);
  if (test_set) {
    EvalOptions eo;
    eo.tap = tap;
    eo.method = config.method.value_or(attr::Method::GradInput);
    eo.strategy = config.strategy;
    eo.sigma = config.sigma;
    const EvalResult r = evaluate(spec, record.best_params, *test_set, eo);
    record.test_acc = r.accuracy;
    record.attr_prior_corr = r.attr_prior_corr;
  }
  record.wall_s = seconds_since(start);
  if (metrics.is_open())
    csv_row(metrics, config.config_id, config.seed, "final", {}, {}, {},
            best_val >= 0 ? std::optional(best_val) : std::nullopt, record.test_acc, record.attr_prior_corr,
            record.wall_s);
  return record;
}

// ---------------------------------------------------------------------------
// Evaluation

double accuracy(const nn::ModelSpec& spec, const nn::Parameters& params, const std::vector<data::Sample>& samples,
                std::size_t batch_size) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  GradModeGuard mode(false);
  for (std::size_t first = 0; first < samples.size(); first += batch_size) {
    std::vector<const data::Sample*> ptrs;
    for (std::size_t k = first; k < std::min(samples.size(), first + batch_size); ++k) ptrs.push_back(&samples[k]);
    const std::vector<int> pred = nn::predict(nn::forward(spec, params, to_batch(ptrs)).logits);
    for (std::size_t k = 0; k < ptrs.size(); ++k) correct += pred[k] == ptrs[k]->label;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

EvalResult evaluate(const nn::ModelSpec& spec, const nn::Parameters& params, const Dataset& dataset,
                    const EvalOptions& options) {
  if (dataset.n_classes != spec.n_classes) throw ConfigError("class-count mismatch between data and model");
  nn::check_parameters(spec, params);
  const std::string tap = options.tap.empty() ? spec.last_tap() : options.tap;
  const nn::TapShape tap_shape = spec.tap_shape(tap);
  const bool has_free_half = options.strategy.kind == attr::ChannelStrategy::Kind::MeanOfHalf;
  if (options.attribution) options.strategy.constrained(tap_shape.channels);

  EvalResult result;
  result.confusion.assign(spec.n_classes, std::vector<std::size_t>(spec.n_classes, 0));
  std::size_t correct = 0;
  double corr_sum = 0.0, free_sum = 0.0;
  const std::size_t plane = tap_shape.height * tap_shape.width;

  for (std::size_t first = 0; first < dataset.samples.size(); first += options.batch_size) {
    std::vector<const data::Sample*> ptrs;
    for (std::size_t k = first; k < std::min(dataset.samples.size(), first + options.batch_size); ++k)
      ptrs.push_back(&dataset.samples[k]);
    const Tensor batch = to_batch(ptrs);
    Tape tape;
    const nn::ForwardTrace trace = nn::forward(spec, params, batch, options.attribution ? &tape : nullptr);
    const std::vector<int> pred = nn::predict(trace.logits);
    for (std::size_t k = 0; k < ptrs.size(); ++k) {
      correct += pred[k] == ptrs[k]->label;
      ++result.confusion[static_cast<std::size_t>(ptrs[k]->label)][static_cast<std::size_t>(pred[k])];
    }
    if (!options.attribution) continue;

    const attr::AttributionMap a = attr::attribute(trace, tap, options.method, false);
    const Tensor reduced = attr::reduce_channels(a.values, options.strategy);
    const Tensor free = has_free_half ? attr::free_channels_mean(a.values, options.strategy) : Tensor();
    const std::size_t channels = reduced.dim(1);
    for (std::size_t k = 0; k < ptrs.size(); ++k) {
      const prior::Heatmap p = prior::build_prior(ptrs[k]->landmarks, ptrs[k]->image.height, ptrs[k]->image.width,
                                                  tap_shape.height, tap_shape.width, options.sigma);
      double c = 0.0;
      for (std::size_t ch = 0; ch < channels; ++ch)
        c += loss::pearson(reduced.values().subspan((k * channels + ch) * plane, plane), p.values);
      corr_sum += c / static_cast<double>(channels);
      if (has_free_half) free_sum += loss::pearson(free.values().subspan(k * plane, plane), p.values);
    }
  }
  const auto n = static_cast<double>(dataset.samples.size());
  result.accuracy = static_cast<double>(correct) / n;
  if (options.attribution) {
    result.attr_prior_corr = corr_sum / n;
    if (has_free_half) result.free_half_corr = free_sum / n;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Attribution export

std::vector<fs::path> export_attributions(const nn::ModelSpec& spec, const nn::Parameters& params,
                                          const Dataset& dataset, const AttributeRequest& request) {
  const std::string layer = request.layer.empty() ? spec.last_tap() : request.layer;
  const nn::TapShape tap_shape = spec.tap_shape(layer);
  request.strategy.constrained(tap_shape.channels);
  fs::create_directories(request.out_dir);
  const std::string method = attr::to_string(request.method);
  const std::string strategy = attr::to_string(request.strategy);
  const std::size_t plane = tap_shape.height * tap_shape.width;

  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, std::span<const double> values) {
    const fs::path path = request.out_dir / name;
    data::write_pgm_normalized(path, tap_shape.height, tap_shape.width, values);
    written.push_back(path);
  };
  for (std::size_t index : request.samples) {
    if (index >= dataset.samples.size())
      throw ConfigError("sample index " + std::to_string(index) + " outside the dataset");
    const data::Sample& s = dataset.samples[index];
    Tape tape;
    const nn::ForwardTrace trace = nn::forward(spec, params, to_batch({&s}), &tape);
    const attr::AttributionMap a = attr::attribute(trace, layer, request.method, false);
    const Tensor reduced = attr::reduce_channels(a.values, request.strategy);
    const std::string stem = std::to_string(index) + "_" + layer + "_" + method + "_";
    if (request.strategy.kind == attr::ChannelStrategy::Kind::AllChannels) {
      for (std::size_t c = 0; c < reduced.dim(1); ++c)
        emit(stem + strategy + "-c" + std::to_string(c) + ".pgm", reduced.values().subspan(c * plane, plane));
    } else {
      emit(stem + strategy + ".pgm", reduced.values());
    }
    if (request.strategy.kind == attr::ChannelStrategy::Kind::MeanOfHalf)
      emit(stem + strategy + "-free.pgm", attr::free_channels_mean(a.values, request.strategy).values());
    const prior::Heatmap p = prior::build_prior(s.landmarks, s.image.height, s.image.width, tap_shape.height,
                                                tap_shape.width, request.sigma);
    emit(std::to_string(index) + "_" + layer + "_prior.pgm", p.values);
  }
  return written;
}

// ---------------------------------------------------------------------------
// Gradient check

bool GradcheckReport::passed() const {
  return std::all_of(groups.begin(), groups.end(), [&](const GradcheckGroup& g) { return g.max_rel_error < threshold; });
}

double GradcheckReport::max_error(const std::string& config) const {
  double m = 0.0;
  for (const GradcheckGroup& g : groups)
    if (g.config == config) m = std::max(m, g.max_rel_error);
  return m;
}

GradcheckReport gradcheck(const GradcheckOptions& options) {
  const auto start = Clock::now();
  const nn::ModelSpec& spec = options.model;
  spec.validate();
  const std::string tap = options.tap.empty() ? spec.last_tap() : options.tap;
  const nn::TapShape tap_shape = spec.tap_shape(tap);

  Rng rng = Rng(options.seed).split("gradcheck");
  nn::Parameters params = nn::init_params(spec, options.seed);
  for (auto& [name, t] : params)
    if (name.ends_with(".bias")) {
      Buffer v(t.size());
      for (double& x : v) x = rng.normal(0.0, 0.1);
      t = Tensor(t.shape(), std::move(v));
    }

  std::vector<data::Sample> samples(options.batch);
  for (std::size_t k = 0; k < options.batch; ++k) {
    data::Sample& s = samples[k];
    s.image = {spec.height, spec.width, Buffer(spec.height * spec.width)};
    for (double& v : s.image.pixels) v = rng.uniform(0.0, 1.0);
    for (int p = 0; p < 5; ++p)
      s.landmarks.points.push_back({rng.uniform(0.0, static_cast<double>(spec.width) - 1.0),
                                    rng.uniform(0.0, static_cast<double>(spec.height) - 1.0)});
    s.label = static_cast<int>(rng.below(spec.n_classes));
  }
  std::vector<const data::Sample*> ptrs;
  for (const data::Sample& s : samples) ptrs.push_back(&s);
  const Tensor batch = to_batch(ptrs);
  const std::vector<int> labels = labels_of(ptrs);
  const Tensor priors = priors_for(ptrs, tap_shape, 3.0);

  struct Case {
    std::string name;
    std::optional<attr::Method> method;
    attr::ChannelStrategy strategy;
  };
  std::vector<Case> cases{{"ce", std::nullopt, attr::ChannelStrategy::all_channels()}};
  for (attr::Method m : {attr::Method::Grad, attr::Method::GradInput})
    for (const attr::ChannelStrategy& s :
         {attr::ChannelStrategy::all_channels(), attr::ChannelStrategy::mean(), attr::ChannelStrategy::mean_of_half()})
      cases.push_back({attr::to_string(m) + "+" + attr::to_string(s), m, s});

  GradcheckReport report;
  report.threshold = options.threshold;
  for (const Case& c : cases) {
    std::map<std::string, Tensor> analytic;
    {
      Tape tape;
      const nn::ForwardTrace trace = nn::forward(spec, params, batch, &tape);
      const StepLoss l = step_loss(trace, labels, tap, c.method, c.strategy, priors, options.lambda, true);
      std::vector<Tensor> leaves;
      for (const auto& [name, t] : trace.params) leaves.push_back(t);
      const std::vector<Tensor> grads = backward(l.total, leaves, false);
      std::size_t i = 0;
      for (const auto& [name, t] : trace.params) analytic.emplace(name, grads[i++]);
    }
    for (const auto& [name, value] : params) {
      auto loss_at = [&, pname = name](const Tensor& candidate) {
        nn::Parameters p = params;
        p.at(pname) = candidate;
        Tape tape;
        const nn::ForwardTrace trace = nn::forward(spec, p, batch, &tape);
        return step_loss(trace, labels, tap, c.method, c.strategy, priors, options.lambda, false).total.item();
      };
      const Tensor numeric = finite_diff(loss_at, value, options.eps);
      const auto a = analytic.at(name).values();
      const auto n = numeric.values();
      GradcheckGroup group{c.name, name, 0.0, 0};
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max(std::abs(a[i]), std::abs(n[i]));
        if (scale <= options.min_grad) continue;
        group.max_rel_error = std::max(group.max_rel_error, std::abs(a[i] - n[i]) / scale);
        ++group.checked;
      }
      report.groups.push_back(group);
    }
  }
  report.seconds = seconds_since(start);
  return report;
}

// ---------------------------------------------------------------------------
// Ablation grid

std::pair<double, double> mean_ci95(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(values.size()))};
}

std::vector<AblationRow> run_ablation(const AblationOptions& options, const Dataset& train_set,
                                      const Dataset& test_set) {
  if (options.seeds.size() < 2) throw ConfigError("ablation needs at least two seeds for interval reporting");
  std::vector<AblationRow> rows;
  for (const TrainConfig& base : options.grid) {
    std::vector<double> accs, corrs;
    AblationRow agg;
    agg.config_id = base.config_id;
    agg.seed = "aggregate";
    agg.method = method_name(base.method);
    agg.strategy = base.method ? attr::to_string(base.strategy) : "";
    agg.tap = base.tap_layer();
    agg.lambda = base.lambda;
    for (std::uint64_t seed : options.seeds) {
      AblationRow row = agg;
      row.seed = std::to_string(seed);
      const auto start = Clock::now();
      try {
        TrainConfig c = base;
        c.seed = seed;
        TrainOptions to;
        to.log = options.log;
        const RunRecord run = train(c, train_set, nullptr, to);
        EvalOptions eo = options.eval;
        if (eo.tap.empty()) eo.tap = c.tap_layer();
        const EvalResult r = evaluate(c.model, run.best_params, test_set, eo);
        row.val_acc = run.val_acc.empty() ? std::nullopt : std::optional(run.val_acc[run.best_epoch]);
        row.test_acc = r.accuracy;
        row.attr_prior_corr = r.attr_prior_corr;
        accs.push_back(r.accuracy);
        corrs.push_back(r.attr_prior_corr);
      } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
        std::replace(row.status.begin(), row.status.end(), ',', ';');
        std::replace(row.status.begin(), row.status.end(), '\n', ' ');
      }
      row.wall_s = seconds_since(start);
      agg.wall_s += row.wall_s;
      rows.push_back(row);
    }
    if (!accs.empty()) {
      std::tie(agg.test_acc, agg.test_acc_ci95) = mean_ci95(accs);
      std::tie(agg.attr_prior_corr, agg.attr_prior_corr_ci95) = mean_ci95(corrs);
    }
    if (accs.size() != options.seeds.size())
      agg.status = std::to_string(options.seeds.size() - accs.size()) + " failed runs";
    rows.push_back(agg);
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "config_id,seed,method,strategy,tap,lambda,val_acc,test_acc,test_acc_ci95,attr_prior_corr,"
         "attr_prior_corr_ci95,wall_s,status\n";
  for (const AblationRow& r : rows)
    out << r.config_id << ',' << r.seed << ',' << r.method << ',' << r.strategy << ',' << r.tap << ','
        << fmt(r.lambda) << ',' << fmt(r.val_acc) << ',' << fmt(r.test_acc) << ',' << fmt(r.test_acc_ci95) << ','
        << fmt(r.attr_prior_corr) << ',' << fmt(r.attr_prior_corr_ci95) << ',' << fmt(r.wall_s) << ','
        << r.status << '\n';
}

}  // namespace pal::harness
