// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Arguments select a subset (e.g. "A1 A6").

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcinet/train.hpp"
#include "support.hpp"

using namespace mcinet;
using testing::max_abs_diff;
using testing::TD;
using testing::VD;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(MCINET_SOURCE_DIR) / "configs";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Linear<double> random_linear(Index out, Index in, Rng& rng) {
  return {VD::constant(oracle::random_tensor({out, in, 1, 1}, rng)), VD::constant(oracle::random_tensor({out}, rng))};
}

EpisodeTensors<double> random_episode(Index size, Index k, Rng& rng) {
  EpisodeTensors<double> ep{oracle::random_tensor({k, 3, size, size}, rng, 0, 1), TD({k, 1, size, size}),
                            oracle::random_tensor({1, 3, size, size}, rng, 0, 1), TD({1, 1, size, size})};
  for (Index i = 0; i < ep.support_masks.size(); ++i) ep.support_masks[i] = rng.uniform() < 0.3;
  for (Index i = 0; i < ep.query_mask.size(); ++i) ep.query_mask[i] = rng.uniform() < 0.3;
  return ep;
}

// A randomized small model: scale count, depths, widths, heads and flags vary.
ModelConfig random_model(Rng& rng) {
  ModelConfig c = tiny_model_config();
  c.backbone.input_size = 16 * (1 + static_cast<Index>(rng.uniform() * 2));
  c.backbone.layers_per_scale = {1 + static_cast<Index>(rng.uniform() * 2), 1 + static_cast<Index>(rng.uniform() * 2),
                                 1 + static_cast<Index>(rng.uniform() * 2)};
  c.mlim.heads = 1 + static_cast<Index>(rng.uniform() * 3);
  c.mlim.adjacent = rng.uniform() < 0.5;
  c.mcfm.enabled = rng.uniform() < 0.7;
  c.msmp.feedback = rng.uniform() < 0.5;
  c.msmp.skip_support = rng.uniform() < 0.8 ? SkipSupport::foreground : SkipSupport::whole_image;
  c.msmp.aspp_rates = rng.uniform() < 0.5 ? std::vector<Index>{1, 6, 12, 18} : std::vector<Index>{1, 2};
  return c;
}

// ---------------------------------------------------------------------------

Outcome a1_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = load_run_config((kConfigs / "overfit.json").string());
  const Checkpoint ckpt = train(cfg);
  const Episode ep = fixed_training_episode(cfg);
  const Mask pred = model_predictor(MciNet<float>(cfg.model, ckpt.params))(ep);
  const double iou = foreground_counts(pred, ep.query.mask).iou();
  const double secs = seconds_since(t0);
  return {iou >= 0.90 && secs <= 300.0 && cfg.train.steps <= 300,
          "steps " + std::to_string(cfg.train.steps) + ", lr " + fmt("%g", cfg.train.lr) + ", mIoU " +
              fmt("%.4f", iou) + " (>= 0.90), " + fmt("%.1f", secs) + "s (<= 300s)"};
}

Outcome a2_gradcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport report = gradcheck(tiny_model_config());
  const double secs = seconds_since(t0);
  double worst = 0;
  std::set<std::string> families;
  for (const auto& g : report.groups) {
    worst = std::max(worst, g.relative_error);
    families.insert(g.group.substr(0, g.group.find('.')));
  }
  const bool covered = families.count("backbone") && families.count("mcfm") && families.count("mlim") &&
                       families.count("msmp");
  std::string detail = std::to_string(report.groups.size()) + " groups, worst relative error " + fmt("%.2e", worst) +
                       " (<= 1e-3), " + fmt("%.1f", secs) + "s (<= 120s)";
  for (const auto& o : report.offenders()) detail += ", failed: " + o;
  return {report.passed() && covered && secs <= 120.0, detail};
}

Outcome a3_oracles() {
  constexpr int kCases = 60;
  constexpr double kTol = 1e-5;
  Rng rng(2024);
  auto side = [&] { return 1 + static_cast<Index>(rng.uniform() * 4); };
  double worst[4] = {0, 0, 0, 0};

  for (int t = 0; t < kCases; ++t) {
    const Index heads = 1 + static_cast<Index>(rng.uniform() * 3), c = 1 + static_cast<Index>(rng.uniform() * 4);
    const Index dh = 1 + static_cast<Index>(rng.uniform() * 3);
    const Index h = side(), w = side();
    const TD fs = oracle::random_tensor({1, c, h, w}, rng), fq = oracle::random_tensor({1, c, h, w}, rng);
    const auto proj = random_linear(heads * dh, c, rng);
    const auto got = multihead_correlation(VD::constant(fs), VD::constant(fq), proj, heads).data.value();
    worst[0] = std::max(worst[0],
                        max_abs_diff(got, oracle::correlation(fs, fq, proj.weight.value(), proj.bias.value(), heads)));
  }

  for (int t = 0; t < kCases; ++t) {
    const Index hq = side(), wq = side(), hs = side(), ws = side();
    Index cin = 1 + static_cast<Index>(rng.uniform() * 3);
    const TD vol = oracle::random_tensor({hq * wq, cin, hs, ws}, rng);
    const Index depth = 1 + static_cast<Index>(rng.uniform() * 3);
    const Index k = rng.uniform() < 0.5 ? 1 : 3;
    std::vector<RefinerStage<double>> stages;
    std::vector<oracle::Stage> ostages;
    for (Index s = 0; s < depth; ++s) {
      const Index out = 1 + static_cast<Index>(rng.uniform() * 3);
      oracle::Stage st{oracle::random_tensor({out, cin, k, k}, rng), oracle::random_tensor({out}, rng),
                       oracle::random_tensor({out, out, k, k}, rng), oracle::random_tensor({out}, rng)};
      stages.push_back({VD::constant(st.ws), VD::constant(st.bs), VD::constant(st.wq), VD::constant(st.bq)});
      ostages.push_back(st);
      cin = out;
    }
    const auto got = refine_correlation(CorrelationVolume<double>{VD::constant(vol), {hq, wq}, {hs, ws}}, stages);
    worst[1] = std::max(worst[1], max_abs_diff(got.data.value(), oracle::refine(vol, hq, wq, ostages)));
  }

  for (int t = 0; t < kCases; ++t) {
    const Index hq = side(), wq = side(), hs = side(), ws = side(), c = 1 + static_cast<Index>(rng.uniform() * 3);
    const TD vol = oracle::random_tensor({hq * wq, c, hs, ws}, rng, -4, 4);
    const TD mask = oracle::random_tensor({1, 1, hs, ws}, rng, 0, 1);
    const auto got = mask_aggregate(CorrelationVolume<double>{VD::constant(vol), {hq, wq}, {hs, ws}}, mask).value();
    worst[2] = std::max(worst[2], max_abs_diff(got, oracle::aggregate(vol, mask, hq, wq, true)));
  }

  for (int t = 0; t < kCases; ++t) {
    const Index h = side(), w = side(), c1 = 1 + static_cast<Index>(rng.uniform() * 4);
    const Index c2 = 1 + static_cast<Index>(rng.uniform() * 4), d = 1 + static_cast<Index>(rng.uniform() * 3);
    const TD q = oracle::random_tensor({1, c1, h, w}, rng), kv = oracle::random_tensor({1, c2, h, w}, rng);
    const auto pq = random_linear(d, c1, rng), pk = random_linear(d, c2, rng), pv = random_linear(c1, c2, rng);
    const auto got = cross_attention(VD::constant(q), VD::constant(kv), pq, pk, pv, d);
    const auto want = oracle::attention(q, kv, pq.weight.value(), pq.bias.value(), pk.weight.value(),
                                        pk.bias.value(), pv.weight.value(), pv.bias.value(), d);
    worst[3] = std::max({worst[3], max_abs_diff(got.output.value(), want.output),
                         max_abs_diff(got.attention.value().reshaped({h * w, h * w}), want.attention)});
  }

  const bool pass = *std::max_element(worst, worst + 4) <= kTol;
  return {pass, std::to_string(kCases) + " cases each; max |diff| correlation " + fmt("%.1e", worst[0]) +
                    ", refine " + fmt("%.1e", worst[1]) + ", aggregate " + fmt("%.1e", worst[2]) + ", attention " +
                    fmt("%.1e", worst[3]) + " (<= 1e-5)"};
}

Outcome a4_invariants() {
  constexpr int kConfigs = 25;
  Rng rng(77);
  double row_sum_err = 0, ev_min = 1, ev_max = 0, residual_err = 0, skip_max = 0;
  int size_failures = 0;

  for (int t = 0; t < kConfigs; ++t) {
    const ModelConfig cfg = random_model(rng);
    MciNet<double> net(cfg, static_cast<std::uint64_t>(t));
    Binding<double> bind(net.parameters(), false);
    const Index k = 1 + static_cast<Index>(rng.uniform() * 3);
    const auto ep = random_episode(cfg.backbone.input_size, k, rng);

    const auto pq = extract_pyramid(net.backbone(), bind, ep.query_image);
    const auto ps = extract_pyramid(net.backbone(), bind, ep.support_images);
    const Index last = cfg.backbone.num_scales;
    if (cfg.mcfm.active()) {
    const auto kv = encode_low_level(bind, "mcfm.s" + std::to_string(last) + ".enc", ep.query_image,
                                     pq.scale(last).extent);
    const auto attn = cross_attention(pq.scale(last).last(), kv, bind_linear(bind, "mcfm.s3.l1.q"),
                                      bind_linear(bind, "mcfm.s3.l1.k"), bind_linear(bind, "mcfm.s3.l1.v"), cfg.mcfm.d);
    const TD& a = attn.attention.value();
    const Index p = a.dim(a.rank() - 1), rows = a.size() / p;
    for (Index r = 0; r < rows; ++r) row_sum_err = std::max(row_sum_err, std::abs(a.data().segment(r * p, p).sum() - 1.0));

    const Index cq = pq.scale(last).last().dim(1);
    const Linear<double> zero_v{VD::constant(TD({cq, kv.dim(1), 1, 1})), VD::constant(TD({cq}))};
    const auto ident = cross_attention(pq.scale(last).last(), kv, bind_linear(bind, "mcfm.s3.l1.q"),
                                       bind_linear(bind, "mcfm.s3.l1.k"), zero_v, cfg.mcfm.d);
    residual_err = std::max(residual_err, max_abs_diff(ident.output.value(), pq.scale(last).last().value()));
    }

    const auto fused = net.mcfm().apply(bind, pq, ep.query_image);
    const auto ev = net.mlim().forward(bind, ps, fused, ep.support_masks);
    for (const auto* e : {&ev.last, &ev.penultimate}) {
      ev_min = std::min(ev_min, e->value().data().minCoeff());
      ev_max = std::max(ev_max, e->value().data().maxCoeff());
    }

    const auto skips = build_skips(ps, pq, TD(ep.support_masks.shape()), SkipSupport::foreground);
    for (const auto& s : skips.support) skip_max = std::max(skip_max, s.value().data().cwiseAbs().maxCoeff());

    const auto logits = net.forward(bind, ep);
    const Index s = cfg.backbone.input_size;
    if (logits.large.shape() != Shape{1, 1, s, s} || logits.small.shape() != Shape{1, 1, s / 4, s / 4}) ++size_failures;
  }

  const bool pass = row_sum_err <= 1e-6 && ev_min >= 0.0 && ev_max <= 1.0 && residual_err == 0.0 &&
                    skip_max == 0.0 && size_failures == 0;
  return {pass, std::to_string(kConfigs) + " random configs; attention row-sum err " + fmt("%.1e", row_sum_err) +
                    ", evidence in [" + fmt("%.3f", ev_min) + ", " + fmt("%.3f", ev_max) + "], zero-V residual err " +
                    fmt("%.1e", residual_err) + ", zero-mask skip max " + fmt("%.1e", skip_max) +
                    ", size mismatches " + std::to_string(size_failures)};
}

Outcome a5_kshot() {
  Rng rng(5);
  double merge_err = 0, dup_err = 0;
  for (int t = 0; t < 10; ++t) {
    const ModelConfig cfg = random_model(rng);
    MciNet<double> net(cfg, static_cast<std::uint64_t>(t) + 100);
    Binding<double> bind(net.parameters(), false);
    const auto ep = random_episode(cfg.backbone.input_size, 1, rng);
    const auto ps = extract_pyramid(net.backbone(), bind, ep.support_images);
    const auto pq = extract_pyramid(net.backbone(), bind, ep.query_image);

    // 1-shot path without the merge step.
    for (Index scale = cfg.backbone.num_scales - 1; scale <= cfg.backbone.num_scales; ++scale) {
      const auto vol = net.mlim().stacked_correlation(bind, ps, pq, 0, scale);
      const auto refined = refine_correlation(vol, net.mlim().refiner(bind, scale));
      const auto direct = mask_aggregate(refined, downsample_mask(ep.support_masks, ps.scale(scale).extent));
      const auto merged = net.mlim().evidence_at(bind, ps, pq, ep.support_masks, scale);
      merge_err = std::max(merge_err, max_abs_diff(direct.value(), merged.value()));
    }

    EpisodeTensors<double> dup = ep;
    dup.support_images = concat<double>({VD::constant(ep.support_images), VD::constant(ep.support_images)}, 0).value();
    dup.support_masks = concat<double>({VD::constant(ep.support_masks), VD::constant(ep.support_masks)}, 0).value();
    const auto one = net.forward(bind, ep), two = net.forward(bind, dup);
    dup_err = std::max({dup_err, max_abs_diff(one.large.value(), two.large.value()),
                        max_abs_diff(one.small.value(), two.small.value())});
    const auto ps2 = extract_pyramid(net.backbone(), bind, dup.support_images);
    const auto e1 = net.mlim().forward(bind, ps, pq, ep.support_masks);
    const auto e2 = net.mlim().forward(bind, ps2, pq, dup.support_masks);
    dup_err = std::max({dup_err, max_abs_diff(e1.last.value(), e2.last.value()),
                        max_abs_diff(e1.penultimate.value(), e2.penultimate.value())});
  }
  return {merge_err <= 1e-6 && dup_err <= 1e-6, "K=1 merge vs direct " + fmt("%.1e", merge_err) +
                                                    ", duplicated K=2 vs K=1 " + fmt("%.1e", dup_err) + " (<= 1e-6)"};
}

Outcome a6_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = load_run_config((kConfigs / "ablation.json").string());
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  AblationHooks hooks;
  hooks.on_run = [&](const AblationRow& row, std::size_t s, double secs) {
    std::fprintf(stderr, "  ablation mcfm=%d adjacent=%d feedback=%d seed=%zu miou=%.4f (%.1fs, total %.0fs)\n",
                 row.flags.mcfm, row.flags.mlim_adjacent, row.flags.msmp_feedback, s, row.miou.back(), secs,
                 seconds_since(t0));
  };
  const auto rows = ablate(cfg, seeds, hooks);
  const double secs = seconds_since(t0);
  std::printf("%s", ablation_table(rows).c_str());
  const auto& base = rows.front();
  const auto& full = rows.back();
  const bool structure = rows.size() == 8 && !base.flags.mcfm && !base.flags.mlim_adjacent &&
                         !base.flags.msmp_feedback && full.flags.mcfm && full.flags.mlim_adjacent &&
                         full.flags.msmp_feedback;
  return {structure && full.mean() >= base.mean() && secs <= 1800.0,
          "full " + fmt("%.4f", full.mean()) + " vs baseline " + fmt("%.4f", base.mean()) + " mean mIoU over " +
              std::to_string(seeds.size()) + " seeds (full >= baseline), 8 rows, " + fmt("%.0f", secs) +
              "s (<= 1800s)"};
}

Outcome a7_loss_algebra() {
  Rng rng(7);
  bool exact = true;
  for (int t = 0; t < 50; ++t) {
    const Index s = 4 * (1 + static_cast<Index>(rng.uniform() * 4));
    MaskLogits<double> logits{VD::constant(oracle::random_tensor({1, 1, s / 4, s / 4}, rng, -5, 5)),
                              VD::constant(oracle::random_tensor({1, 1, s, s}, rng, -5, 5))};
    TD mask({1, 1, s, s});
    for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.4;
    const double lambda = t % 3 == 0 ? 0.0 : rng.uniform(0, 2);
    const auto b = total_loss(logits, mask, lambda).breakdown();
    exact = exact && b.total == b.large_bce + lambda * b.small_bce;
  }
  const double ln2 = bce(VD::constant(TD({1, 1, 1, 1})), TD({1, 1, 1, 1}, 1.0)).value().item();
  Mask top(2, 2), left(2, 2);
  top << 1, 1, 0, 0;
  left << 1, 0, 1, 0;
  const double third = miou({top}, {left}, {0}, {0, 1, 2, 3});
  const bool pass = exact && std::abs(ln2 - std::log(2.0)) <= 1e-9 && third == 1.0 / 3.0;
  return {pass, std::string("total == large + lambda*small ") + (exact ? "exact" : "NOT exact") +
                    " over 50 cases, bce(0,1) - ln2 = " + fmt("%.1e", ln2 - std::log(2.0)) + ", miou case " +
                    fmt("%.17g", third)};
}

Outcome a8_protocol() {
  const FoldSpec folds;
  std::size_t train_seen = 0, leaks = 0;
  for (int f = 0; f < folds.num_folds(); ++f) {
    const auto suite = sample_eval_suite(folds, f, 200, 1, 0, 16);
    std::set<std::uint64_t> eval_sums;
    std::set<int> eval_classes;
    for (const auto& ep : suite) {
      eval_sums.insert(episode_checksum(ep));
      eval_classes.insert(ep.class_id);
    }
    for (std::uint64_t step = 0; step < 100; ++step) {
      for (std::uint64_t i = 0; i < 4; ++i) {
        const auto ep = sample_train_episode(folds, f, 1, 0, step, i, 16);
        ++train_seen;
        leaks += eval_classes.count(ep.class_id) + eval_sums.count(episode_checksum(ep));
      }
    }
  }

  RunConfig cfg = load_run_config((kConfigs / "tiny.json").string());
  cfg.train.steps = 4;
  const Checkpoint straight = train(cfg);
  Checkpoint half = initial_checkpoint(cfg);
  train_steps(half, 2);
  const auto dir = std::filesystem::temp_directory_path() / "mcinet_acceptance";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "half.bin", half);
  const std::string first = serialize_checkpoint(half);
  Checkpoint resumed = load_checkpoint(dir / "half.bin");
  const bool bit_exact = serialize_checkpoint(resumed) == first;
  bool params_equal = true;
  for (std::size_t i = 0; i < half.params.size(); ++i) {
    params_equal = params_equal && resumed.params.entries()[i].value.data() == half.params.entries()[i].value.data();
  }
  train_steps(resumed);
  const bool resume_ok = resumed.history.back().total == straight.history.back().total &&
                         serialize_checkpoint(resumed) == serialize_checkpoint(straight);
  return {leaks == 0 && bit_exact && params_equal && resume_ok,
          std::to_string(train_seen) + " training episodes over 4 folds, " + std::to_string(leaks) +
              " overlaps with evaluation; round-trip " + (bit_exact && params_equal ? "bit-exact" : "MISMATCH") +
              "; resume " + (resume_ok ? "consistent" : "INCONSISTENT")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", a1_overfit},   {"A2", a2_gradcheck}, {"A3", a3_oracles},      {"A4", a4_invariants},
      {"A5", a5_kshot},     {"A6", a6_ablation},  {"A7", a7_loss_algebra}, {"A8", a8_protocol}};
  std::set<std::string> selected(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", id.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
