#include "mcinet/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <unordered_map>

namespace mcinet {

namespace {

FoldSpec fold_spec(const RunConfig& cfg) { return FoldSpec(cfg.data.num_classes, cfg.data.num_folds); }

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

void require_finite(double value, const char* term, Index step, Index index) {
  if (!std::isfinite(value)) {
    throw NumericError("non-finite " + std::string(term) + " (" + std::to_string(value) + ") at step " +
                       std::to_string(step) + ", episode " + std::to_string(index));
  }
}

constexpr std::uint64_t kPeriodicEvalStream = 0xe7a1;

}  // namespace

void sgd_momentum_step(ParameterStore<float>& params, std::vector<Tensor<float>>& buffers,
                       const std::vector<std::pair<std::string, Tensor<float>>>& grads, double lr,
                       double momentum) {
  auto& entries = params.entries();
  if (buffers.size() != entries.size()) throw ShapeError("sgd: one momentum buffer per parameter required");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < entries.size(); ++i) index.emplace(entries[i].name, i);
  const float mu = static_cast<float>(momentum);
  const float step = static_cast<float>(lr);
  for (const auto& [name, g] : grads) {
    const auto it = index.find(name);
    if (it == index.end()) throw ValidationError("sgd: gradient for unknown parameter " + name);
    auto& p = entries[it->second];
    if (!p.trainable) continue;
    auto& b = buffers[it->second];
    if (g.shape() != p.value.shape() || b.shape() != p.value.shape()) throw ShapeError("sgd: shape mismatch for " + name);
    b.data() = mu * b.data() + g.data();
    p.value.data() -= step * b.data();
  }
}

Checkpoint initial_checkpoint(const RunConfig& cfg) {
  cfg.validate();
  Checkpoint ckpt;
  ckpt.config = cfg;
  MciNet<float> net(cfg.model, cfg.train.seed);
  ckpt.params = net.parameters();
  for (const auto& e : ckpt.params.entries()) ckpt.momentum.emplace_back(e.value.shape());
  return ckpt;
}

template <typename Scalar>
Loss<Scalar> episode_loss(const MciNet<Scalar>& net, Binding<Scalar>& bind, const Episode& ep, double lambda) {
  if (ep.size() != net.config().backbone.input_size) {
    throw ShapeError("episode size " + std::to_string(ep.size()) + " does not match model input " +
                     std::to_string(net.config().backbone.input_size));
  }
  const auto t = to_tensors<Scalar>(ep);
  return total_loss(net.forward(bind, t), t.query_mask, lambda);
}

Episode fixed_training_episode(const RunConfig& cfg) {
  return sample_train_episode(fold_spec(cfg), cfg.train.fold, cfg.train.k, cfg.train.seed, 0, 0,
                              cfg.model.backbone.input_size);
}

void train_steps(Checkpoint& ckpt, Index until_step, const TrainHooks& hooks) {
  const RunConfig& cfg = ckpt.config;
  cfg.validate();
  const Index until = until_step < 0 ? cfg.train.steps : until_step;
  const FoldSpec folds = fold_spec(cfg);
  const double lambda = cfg.train.resolved_lambda();
  const Index size = cfg.model.backbone.input_size;
  MciNet<float> net(cfg.model, ckpt.params);
  if (ckpt.momentum.size() != net.parameters().size()) throw FormatError("checkpoint momentum does not match parameters");

  std::optional<Episode> fixed;
  if (cfg.train.fixed_episode) fixed = fixed_training_episode(cfg);
  std::optional<std::vector<Episode>> eval_suite;

  while (ckpt.step < until) {
    // Identical episodes give identical gradients, so a fixed-episode step uses one.
    const Index batch = fixed ? 1 : cfg.train.batch_size;
    std::vector<std::pair<std::string, Tensor<float>>> grads;
    MetricRecord rec;
    rec.step = ckpt.step + 1;
    for (Index b = 0; b < batch; ++b) {
      const Episode ep = fixed ? *fixed
                               : sample_train_episode(folds, cfg.train.fold, cfg.train.k, cfg.train.seed,
                                                      static_cast<std::uint64_t>(ckpt.step), static_cast<std::uint64_t>(b),
                                                      size);
      Binding<float> bind(net.parameters());
      const auto loss = episode_loss(net, bind, ep, lambda);
      const auto parts = loss.breakdown();
      require_finite(parts.large_bce, "large_bce", rec.step, b);
      require_finite(parts.small_bce, "small_bce", rec.step, b);
      require_finite(parts.total, "total loss", rec.step, b);
      backward(loss.total);
      auto g = bind.gradients();
      if (grads.empty()) {
        grads = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) grads[i].second.data() += g[i].second.data();
      }
      rec.total += parts.total;
      rec.large_bce += parts.large_bce;
      rec.small_bce += parts.small_bce;
    }
    const float inv = 1.0f / static_cast<float>(batch);
    for (auto& [name, g] : grads) {
      g.data() *= inv;
      if (!g.all_finite()) throw NumericError("non-finite gradient for " + name + " at step " + std::to_string(rec.step));
    }
    rec.total /= static_cast<double>(batch);
    rec.large_bce /= static_cast<double>(batch);
    rec.small_bce /= static_cast<double>(batch);

    sgd_momentum_step(net.parameters(), ckpt.momentum, grads, cfg.train.lr, cfg.train.momentum);
    ckpt.step = rec.step;

    if (cfg.train.eval_every > 0 && ckpt.step % cfg.train.eval_every == 0) {
      if (!eval_suite) {
        eval_suite = sample_eval_suite(folds, cfg.train.fold, cfg.train.eval_episodes, cfg.train.k,
                                       derive_seed({cfg.train.seed, kPeriodicEvalStream}), size);
      }
      rec.eval_miou = evaluate_suite(*eval_suite, folds.test_classes(cfg.train.fold), model_predictor(net)).miou;
    }
    ckpt.params = net.parameters();
    ckpt.history.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
  }
  ckpt.params = net.parameters();
}

Predictor model_predictor(const MciNet<float>& net) {
  return [&net](const Episode& ep) {
    Binding<float> bind(net.parameters(), false);
    const auto logits = net.forward(bind, to_tensors<float>(ep));
    return threshold_logits(logits.large.value());
  };
}

EvalReport evaluate_suite(const std::vector<Episode>& suite, const std::vector<int>& classes,
                          const Predictor& predict) {
  MetricAccumulator acc(classes);
  for (const auto& ep : suite) acc.add(ep.class_id, predict(ep), ep.query.mask);
  return acc.report();
}

EvalResult evaluate(const Checkpoint& ckpt, int fold, Index k, Index n_episodes, std::uint64_t seed,
                    const Predictor& override_predictor) {
  const RunConfig& cfg = ckpt.config;
  const FoldSpec folds = fold_spec(cfg);
  if (n_episodes < 1) throw ValidationError("evaluation needs at least one episode");
  const auto suite = sample_eval_suite(folds, fold, n_episodes, k, seed, cfg.model.backbone.input_size);
  MciNet<float> net(cfg.model, ckpt.params);
  const Predictor predict = override_predictor ? override_predictor : model_predictor(net);

  EvalResult r;
  r.report = evaluate_suite(suite, folds.test_classes(fold), predict);
  r.config_hash = config_hash(cfg);
  r.seed = seed;
  r.manifest_hash = suite_checksum(suite);
  r.fold = fold;
  r.k = k;
  r.fold_mismatch = fold != cfg.train.fold;
  return r;
}

nlohmann::json results_json(const EvalResult& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [c, iou] : r.report.per_class_iou) per_class[std::to_string(c)] = iou;
  return {{"config_hash", hex(r.config_hash)},
          {"per_class_iou", per_class},
          {"miou", r.report.miou},
          {"fb_iou", r.report.fb_iou},
          {"seed", r.seed},
          {"episode_manifest_hash", hex(r.manifest_hash)},
          {"fold", r.fold},
          {"k", r.k},
          {"episodes", r.report.episodes}};
}

std::string results_table(const EvalResult& r) {
  std::ostringstream ss;
  ss << "fold " << r.fold << "  k " << r.k << "  episodes " << r.report.episodes << "  seed " << r.seed << "\n";
  ss << std::fixed << std::setprecision(4);
  ss << "class             IoU\n";
  for (const auto& [c, iou] : r.report.per_class_iou) {
    ss << std::setw(2) << c << " " << std::left << std::setw(12) << family_name(c) << std::right << "  " << iou << "\n";
  }
  ss << "mIoU              " << r.report.miou << "\n";
  ss << "FB-IoU            " << r.report.fb_iou << "\n";
  return ss.str();
}

void write_results(const std::filesystem::path& dir, const EvalResult& r) {
  std::filesystem::create_directories(dir);
  std::ofstream json_out(dir / "results.json");
  json_out << results_json(r).dump(2) << "\n";
  std::ofstream table_out(dir / "results.txt");
  table_out << results_table(r);
  if (!json_out || !table_out) throw FormatError("failed writing results to " + dir.string());
}

Image overlay_image(const Image& image, const Mask& mask) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != mask.rows() || image.dim(2) != mask.cols()) {
    throw ShapeError("overlay: image and mask sizes differ");
  }
  static constexpr float kRed[3] = {1.0f, 0.0f, 0.0f};
  const Index plane = mask.size();
  Image out(image.shape());
  for (Index ch = 0; ch < 3; ++ch) {
    for (Index p = 0; p < plane; ++p) {
      const float m = mask.data()[p] ? 1.0f : 0.0f;
      out[ch * plane + p] = 0.5f * image[ch * plane + p] + 0.5f * kRed[ch] * m;
    }
  }
  return out;
}

PredictFiles predict(const Checkpoint& ckpt, const Episode& ep, const std::filesystem::path& dir) {
  const Index size = ckpt.config.model.backbone.input_size;
  if (ep.size() != size) {
    throw ShapeError("episode resolution " + std::to_string(ep.size()) + " does not match checkpoint input " +
                     std::to_string(size));
  }
  MciNet<float> net(ckpt.config.model, ckpt.params);
  const Mask pred = model_predictor(net)(ep);
  std::filesystem::create_directories(dir);
  PredictFiles files{dir / "prediction.pbm", dir / "ground_truth.pbm", dir / "overlay.ppm"};
  write_pbm(files.prediction, pred);
  write_pbm(files.ground_truth, ep.query.mask);
  write_ppm(files.overlay, overlay_image(ep.query.image, pred));
  return files;
}

bool GradcheckReport::passed() const { return offenders().empty(); }

std::vector<std::string> GradcheckReport::offenders() const {
  std::vector<std::string> out;
  for (const auto& g : groups) {
    if (!g.passed) out.push_back(g.group);
  }
  return out;
}

namespace {

// A sample whose one-sided slopes disagree by more than this straddles a
// ReLU boundary inside [p - h, p + h] and is replaced by another entry.
constexpr double kKinkAbsolute = 1e-5;
constexpr double kKinkRelative = 1e-3;

Episode gradcheck_episode(const ModelConfig& cfg, std::uint64_t seed, Index k) {
  return generate_episode(static_cast<int>(seed % kNumShapeFamilies), k, seed, cfg.backbone.input_size);
}

}  // namespace

std::vector<std::pair<std::string, Tensor<double>>> loss_gradients(const ModelConfig& cfg, std::uint64_t seed,
                                                                   double lambda, Index k) {
  MciNet<double> net(cfg, seed);
  const Episode ep = gradcheck_episode(cfg, seed, k);
  Binding<double> bind(net.parameters());
  backward(episode_loss(net, bind, ep, lambda).total);
  return bind.gradients();
}

GradcheckReport gradcheck(const ModelConfig& model_cfg, const GradcheckOptions& opts) {
  ModelConfig cfg = model_cfg;
  if (opts.freeze_backbone) cfg.backbone.freeze = true;
  MciNet<double> net(cfg, opts.seed);
  const Episode ep = gradcheck_episode(cfg, opts.seed, opts.k);

  Binding<double> bind(net.parameters());
  backward(episode_loss(net, bind, ep, opts.lambda).total);
  std::unordered_map<std::string, Tensor<double>> analytic;
  for (auto& [name, g] : bind.gradients()) analytic.emplace(name, std::move(g));

  auto loss_at = [&]() {
    Binding<double> b(net.parameters(), false);
    return episode_loss(net, b, ep, opts.lambda).total.value().item();
  };

  struct Accum {
    std::vector<double> a, n;
    Index rejected = 0;
  };
  std::map<std::string, Accum> by_group;
  std::vector<std::string> group_order;
  Rng rng(derive_seed({opts.seed, 0x9c}));
  for (auto& e : net.parameters().entries()) {
    if (!e.trainable) continue;
    const std::string group = parameter_group(e.name);
    if (!by_group.count(group)) group_order.push_back(group);
    auto& acc = by_group[group];
    const Tensor<double>& g = analytic.at(e.name);
    const Index count = std::min(opts.samples, e.value.size());
    std::vector<Index> tried;
    Index accepted = 0;
    while (accepted < count && static_cast<Index>(tried.size()) < std::min(e.value.size(), 4 * count + 8)) {
      const Index i = rng.integer(0, static_cast<int>(e.value.size()) - 1);
      if (std::find(tried.begin(), tried.end(), i) != tried.end()) continue;
      tried.push_back(i);
      double& p = net.parameters().value(e.name)[i];
      const double saved = p;
      const double centre = loss_at();
      p = saved + opts.step;
      const double plus = loss_at();
      p = saved - opts.step;
      const double minus = loss_at();
      p = saved;
      const double central = (plus - minus) / (2 * opts.step);
      const double slope_gap = std::abs((plus - centre) - (centre - minus)) / opts.step;
      if (slope_gap > kKinkAbsolute + kKinkRelative * std::abs(central)) {
        ++acc.rejected;
        continue;
      }
      acc.a.push_back(g[i]);
      acc.n.push_back(central);
      ++accepted;
    }
  }

  GradcheckReport report;
  report.tolerance = opts.tolerance;
  for (const auto& group : group_order) {
    const auto& acc = by_group[group];
    const Eigen::Map<const Eigen::VectorXd> a(acc.a.data(), static_cast<Index>(acc.a.size()));
    const Eigen::Map<const Eigen::VectorXd> n(acc.n.data(), static_cast<Index>(acc.n.size()));
    GroupCheck c;
    c.group = group;
    c.entries = a.size();
    c.analytic_norm = a.norm();
    const double scale = std::max(a.norm(), n.norm());
    c.relative_error = scale > 0 ? (a - n).norm() / scale : 0.0;
    c.rejected = acc.rejected;
    c.passed = c.relative_error <= opts.tolerance && c.entries > c.rejected;
    report.groups.push_back(c);
  }
  return report;
}

std::vector<AblationFlags> ablation_grid() {
  return {{false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
          {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true}};
}

RunConfig apply_ablation(RunConfig cfg, const AblationFlags& flags) {
  cfg.model.mcfm.enabled = flags.mcfm;
  cfg.model.mlim.adjacent = flags.mlim_adjacent;
  cfg.model.msmp.feedback = flags.msmp_feedback;
  return cfg;
}

double AblationRow::mean() const {
  if (miou.empty()) return 0;
  double s = 0;
  for (double v : miou) s += v;
  return s / static_cast<double>(miou.size());
}

double AblationRow::stddev() const {
  if (miou.size() < 2) return 0;
  const double m = mean();
  double s = 0;
  for (double v : miou) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(miou.size() - 1));
}

std::vector<AblationRow> ablate(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                const AblationHooks& hooks) {
  if (seeds.size() < 3) throw ConfigError("ablation needs at least 3 seeds");
  std::vector<AblationRow> rows;
  for (const auto& flags : ablation_grid()) {
    AblationRow row{flags, {}};
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const auto t0 = std::chrono::steady_clock::now();
      RunConfig run = apply_ablation(cfg, flags);
      run.train.seed = seeds[s];
      const Checkpoint ckpt = train(run);
      // Every row of a given seed is scored on the same evaluation suite.
      row.miou.push_back(evaluate(ckpt, run.train.fold, run.eval.k, run.eval.episodes, seeds[s]).report.miou);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (hooks.on_run) hooks.on_run(row, s, seconds);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream ss;
  const std::size_t n = rows.empty() ? 0 : rows.front().miou.size();
  ss << "MCFM  MLIM  MSMP  mIoU % (mean +- sd over " << n << " seeds)\n";
  ss << std::fixed << std::setprecision(2);
  auto mark = [](bool on) { return on ? " x    " : " -    "; };
  for (const auto& r : rows) {
    ss << mark(r.flags.mcfm) << mark(r.flags.mlim_adjacent) << mark(r.flags.msmp_feedback) << 100.0 * r.mean()
       << " +- " << 100.0 * r.stddev() << "\n";
  }
  return ss.str();
}

template Loss<float> episode_loss<float>(const MciNet<float>&, Binding<float>&, const Episode&, double);
template Loss<double> episode_loss<double>(const MciNet<double>&, Binding<double>&, const Episode&, double);

}  // namespace mcinet
