#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mcinet/train.hpp"

namespace {

using namespace mcinet;

constexpr int kExitConfig = 2;
constexpr int kExitVerification = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> fold;
  std::optional<Index> k;
  std::string out = "out";
};

struct AblationOptions {
  std::optional<bool> mcfm, mlim_adjacent, msmp_feedback;
  std::optional<std::string> low_level_source, skip_support, aggregate;
};

void add_common(CLI::App* app, CommonOptions& o, bool with_config = true) {
  if (with_config) app->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "random seed");
  app->add_option("--fold", o.fold, "held-out fold")->check(CLI::Range(0, 3));
  app->add_option("--k", o.k, "support shots")->check(CLI::IsMember({1, 5}));
  app->add_option("--out", o.out, "output directory");
}

void add_ablation(CLI::App* app, AblationOptions& o) {
  app->add_flag("--mcfm,!--no-mcfm", o.mcfm, "multi-content fusion on the query");
  app->add_flag("--mlim-adjacent,!--no-mlim-adjacent", o.mlim_adjacent, "adjacent-scale correlation pairing");
  app->add_flag("--msmp-feedback,!--no-msmp-feedback", o.msmp_feedback, "small-to-large decoder feedback");
  app->add_option("--low-level-source", o.low_level_source, "branch | backbone_block1 | backbone_block2 | none");
  app->add_option("--skip-support", o.skip_support, "foreground | whole_image");
  app->add_option("--aggregate", o.aggregate, "softmax | raw");
}

RunConfig resolve_config(const CommonOptions& c, const AblationOptions& a) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  nlohmann::json j = to_json(cfg);
  if (c.seed) j["train"]["seed"] = *c.seed;
  if (c.fold) j["train"]["fold"] = *c.fold;
  if (c.k) {
    j["train"]["k"] = *c.k;
    j["eval"]["k"] = *c.k;
  }
  if (a.mcfm) j["model"]["mcfm"]["enabled"] = *a.mcfm;
  if (a.mlim_adjacent) j["model"]["mlim"]["adjacent"] = *a.mlim_adjacent;
  if (a.msmp_feedback) j["model"]["msmp"]["feedback"] = *a.msmp_feedback;
  if (a.low_level_source) j["model"]["mcfm"]["low_level_source"] = *a.low_level_source;
  if (a.skip_support) j["model"]["msmp"]["skip_support"] = *a.skip_support;
  if (a.aggregate) j["model"]["mlim"]["aggregate"] = *a.aggregate;
  return run_config_from_json(j);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& history) {
  std::ofstream out(path);
  out << "step,total,large_bce,small_bce,eval_miou\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step), r.total,
                  r.large_bce, r.small_bce, r.eval_miou);
    out << line;
  }
}

int run_train(const CommonOptions& c, const AblationOptions& a, const std::string& resume,
              std::optional<Index> steps, std::optional<double> lr, std::optional<double> lambda,
              Index log_every) {
  Checkpoint ckpt;
  if (!resume.empty()) {
    ckpt = load_checkpoint(resume);
    if (steps) ckpt.config.train.steps = *steps;
  } else {
    RunConfig cfg = resolve_config(c, a);
    if (steps) cfg.train.steps = *steps;
    if (lr) cfg.train.lr = *lr;
    if (lambda) cfg.train.lambda = *lambda;
    cfg.validate();
    ckpt = initial_checkpoint(cfg);
  }
  const std::filesystem::path out = c.out;
  std::filesystem::create_directories(out);
  std::ofstream(out / "config.json") << to_json(ckpt.config).dump(2) << "\n";
  const auto t0 = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.on_step = [&](const MetricRecord& r) {
    if (log_every > 0 && (r.step % log_every == 0 || r.step == ckpt.config.train.steps || !std::isnan(r.eval_miou))) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %5lld  total %.5f  large %.5f  small %.5f", static_cast<long long>(r.step), r.total,
                  r.large_bce, r.small_bce);
      if (!std::isnan(r.eval_miou)) std::printf("  eval mIoU %.4f", r.eval_miou);
      std::printf("  [%.1fs]\n", secs);
      std::fflush(stdout);
    }
  };
  train_steps(ckpt, -1, hooks);
  save_checkpoint(out / "checkpoint.bin", ckpt);
  write_metrics_csv(out / "metrics.csv", ckpt.history);
  std::printf("saved %s (step %lld, lambda %.3g)\n", (out / "checkpoint.bin").c_str(),
              static_cast<long long>(ckpt.step), ckpt.config.train.resolved_lambda());
  return 0;
}

int run_eval(const CommonOptions& c, const std::string& checkpoint, std::optional<Index> episodes) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const int fold = c.fold.value_or(ckpt.config.train.fold);
  const Index k = c.k.value_or(ckpt.config.eval.k);
  const Index n = episodes.value_or(ckpt.config.eval.episodes);
  const std::uint64_t seed = c.seed.value_or(ckpt.config.train.seed);
  const EvalResult r = evaluate(ckpt, fold, k, n, seed);
  if (r.fold_mismatch) {
    std::fprintf(stderr, "warning: evaluating fold %d but the model was trained with fold %d held out\n", fold,
                 ckpt.config.train.fold);
  }
  write_results(c.out, r);
  std::cout << results_table(r);
  return 0;
}

int run_predict(const CommonOptions& c, const std::string& checkpoint, std::optional<int> class_id,
                const std::string& manifest, std::size_t index) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  Episode ep;
  if (!manifest.empty()) {
    const auto episodes = import_episodes(manifest);
    if (index >= episodes.size()) throw ValidationError("episode index out of range");
    ep = episodes[index];
  } else {
    const FoldSpec folds(ckpt.config.data.num_classes, ckpt.config.data.num_folds);
    const int fold = c.fold.value_or(ckpt.config.train.fold);
    const int cls = class_id.value_or(folds.test_classes(fold).front());
    ep = generate_episode(cls, c.k.value_or(1), c.seed.value_or(0), ckpt.config.model.backbone.input_size, folds);
  }
  const auto files = predict(ckpt, ep, c.out);
  std::printf("class %d (%s)\n  %s\n  %s\n  %s\n", ep.class_id, family_name(ep.class_id).c_str(),
              files.prediction.c_str(), files.ground_truth.c_str(), files.overlay.c_str());
  return 0;
}

int run_gradcheck(const CommonOptions& c, GradcheckOptions opts) {
  const ModelConfig model = c.config.empty() ? tiny_model_config() : load_run_config(c.config).model;
  if (c.seed) opts.seed = *c.seed;
  if (c.k) opts.k = *c.k;
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport report = gradcheck(model, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%-20s %8s %9s %12s  %s\n", "group", "entries", "rejected", "rel. error", "status");
  for (const auto& g : report.groups) {
    std::printf("%-20s %8lld %9lld %12.3e  %s\n", g.group.c_str(), static_cast<long long>(g.entries),
                static_cast<long long>(g.rejected), g.relative_error, g.passed ? "ok" : "FAIL");
  }
  std::printf("tolerance %.1e, step %.1e, %.2fs\n", opts.tolerance, opts.step, secs);
  if (!report.passed()) {
    std::string list;
    for (const auto& name : report.offenders()) list += (list.empty() ? "" : ", ") + name;
    throw VerificationError("gradient check failed for: " + list);
  }
  std::printf("all %zu groups passed\n", report.groups.size());
  return 0;
}

int run_ablate(const CommonOptions& c, const std::vector<std::uint64_t>& seeds) {
  const RunConfig cfg = resolve_config(c, {});
  const auto grid = ablation_grid();
  AblationHooks hooks;
  hooks.on_run = [&](const AblationRow& row, std::size_t s, double secs) {
    std::printf("mcfm %d  mlim_adjacent %d  msmp_feedback %d  seed %llu  mIoU %.4f  [%.1fs]\n", row.flags.mcfm,
                row.flags.mlim_adjacent, row.flags.msmp_feedback, static_cast<unsigned long long>(seeds[s]),
                row.miou.back(), secs);
    std::fflush(stdout);
  };
  const auto rows = ablate(cfg, seeds, hooks);
  const std::string table = ablation_table(rows);
  std::cout << table;
  std::filesystem::create_directories(c.out);
  std::ofstream(std::filesystem::path(c.out) / "ablation.txt") << table;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"mcfm", r.flags.mcfm},
                 {"mlim_adjacent", r.flags.mlim_adjacent},
                 {"msmp_feedback", r.flags.msmp_feedback},
                 {"miou", r.miou},
                 {"mean", r.mean()},
                 {"sd", r.stddev()}});
  }
  std::ofstream(std::filesystem::path(c.out) / "ablation.json") << nlohmann::json{{"seeds", seeds}, {"rows", j}}.dump(2)
                                                                 << "\n";
  return 0;
}

int run_gen_data(const CommonOptions& c, Index episodes, const std::string& split) {
  const RunConfig cfg = resolve_config(c, {});
  const FoldSpec folds(cfg.data.num_classes, cfg.data.num_folds);
  const Index size = cfg.model.backbone.input_size;
  std::vector<Episode> eps;
  if (split == "eval") {
    eps = sample_eval_suite(folds, cfg.train.fold, episodes, cfg.train.k, cfg.train.seed, size);
  } else {
    for (Index i = 0; i < episodes; ++i) {
      eps.push_back(sample_train_episode(folds, cfg.train.fold, cfg.train.k, cfg.train.seed, 0,
                                         static_cast<std::uint64_t>(i), size));
    }
  }
  const auto manifest = export_episodes(c.out, eps);
  std::printf("wrote %zu episodes, manifest %s, checksum %016llx\n", eps.size(), manifest.c_str(),
              static_cast<unsigned long long>(suite_checksum(eps)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot segmentation on synthetic shape episodes"};
  app.require_subcommand(1);

  CommonOptions train_c, eval_c, predict_c, grad_c, ablate_c, gen_c;
  AblationOptions train_a;

  auto* train = app.add_subcommand("train", "episodic training; writes checkpoint.bin and metrics.csv");
  add_common(train, train_c);
  add_ablation(train, train_a);
  std::string resume;
  std::optional<Index> steps;
  std::optional<double> lr, lambda;
  Index log_every = 10;
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--steps", steps, "total training steps");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--lambda", lambda, "weight of the small-scale loss");
  train->add_option("--log-every", log_every, "steps between log lines (0: quiet)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on held-out classes");
  add_common(eval, eval_c, false);
  std::string eval_ckpt;
  std::optional<Index> eval_episodes;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", eval_episodes, "number of evaluation episodes");

  auto* pred = app.add_subcommand("predict", "write predicted mask, ground truth and overlay for one episode");
  add_common(pred, predict_c, false);
  std::string pred_ckpt, pred_manifest;
  std::optional<int> pred_class;
  std::size_t pred_index = 0;
  pred->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  pred->add_option("--class", pred_class, "class of the generated episode");
  pred->add_option("--manifest", pred_manifest, "use an exported episode instead")->check(CLI::ExistingFile);
  pred->add_option("--index", pred_index, "episode index within --manifest");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification (tiny model, double)");
  add_common(grad, grad_c);
  GradcheckOptions gopts;
  grad->add_option("--tolerance", gopts.tolerance, "maximum relative error per group");
  grad->add_option("--step", gopts.step, "finite-difference step");
  grad->add_option("--samples", gopts.samples, "entries sampled per parameter tensor");
  grad->add_option("--lambda", gopts.lambda, "small-scale loss weight");
  grad->add_flag("--freeze-backbone", gopts.freeze_backbone, "exclude backbone parameters");

  auto* abl = app.add_subcommand("ablate", "train and evaluate the eight module on/off combinations");
  add_common(abl, ablate_c);
  std::vector<std::uint64_t> seeds{0, 1, 2};
  abl->add_option("--seeds", seeds, "seeds (at least 3)")->delimiter(',');

  auto* gen = app.add_subcommand("gen-data", "export episodes as PPM/PBM files plus a manifest");
  add_common(gen, gen_c);
  Index gen_episodes = 10;
  std::string split = "eval";
  gen->add_option("--episodes", gen_episodes, "number of episodes");
  gen->add_option("--split", split, "eval (held-out classes) or train")->check(CLI::IsMember({"eval", "train"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return run_train(train_c, train_a, resume, steps, lr, lambda, log_every);
    if (*eval) return run_eval(eval_c, eval_ckpt, eval_episodes);
    if (*pred) return run_predict(predict_c, pred_ckpt, pred_class, pred_manifest, pred_index);
    if (*grad) return run_gradcheck(grad_c, gopts);
    if (*abl) return run_ablate(ablate_c, seeds);
    if (*gen) return run_gen_data(gen_c, gen_episodes, split);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const VerificationError& e) {
    std::fprintf(stderr, "verification failed: %s\n", e.what());
    return kExitVerification;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
