#include <doctest.h>
#include <set>
#include <algorithm>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mcinet/train.hpp"
#include "support.hpp"

using namespace mcinet;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.model = tiny_model_config();
  c.train.steps = 3;
  c.train.batch_size = 2;
  c.train.lr = 0.01;
  c.eval.episodes = 6;
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mcinet_harness_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("optimizer") {
  TEST_CASE("sgd with momentum follows the two-line recurrence") {
    ParameterStore<float> p;
    p.add("a", Tensor<float>({2}, 1.0f));
    p.add("frozen", Tensor<float>({1}, 5.0f), false);
    std::vector<Tensor<float>> buf{Tensor<float>({2}), Tensor<float>({1})};
    Tensor<float> g({2});
    g.data() << 0.5f, -1.0f;
    sgd_momentum_step(p, buf, {{"a", g}}, 0.1, 0.9);
    CHECK(p.value("a")[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    sgd_momentum_step(p, buf, {{"a", g}}, 0.1, 0.9);
    // b = 0.9 * 0.5 + 0.5 = 0.95
    CHECK(p.value("a")[0] == doctest::Approx(1.0 - 0.05 - 0.095));
    CHECK(p.value("a")[1] == doctest::Approx(1.0 + 0.1 + 0.19));
    CHECK(p.value("frozen")[0] == 5.0f);
    CHECK_THROWS_AS(sgd_momentum_step(p, buf, {{"nope", g}}, 0.1, 0.9), ValidationError);
  }
}

TEST_SUITE("training") {
  TEST_CASE("seeded runs are reproducible and log every step") {
    const RunConfig cfg = tiny_run();
    std::vector<double> seen;
    const auto a = train(cfg, {[&](const MetricRecord& r) { seen.push_back(r.total); }});
    const auto b = train(cfg);
    REQUIRE(a.history.size() == 3);
    CHECK(seen.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(a.history[i].total == b.history[i].total);
      CHECK(a.history[i].step == static_cast<Index>(i + 1));
      CHECK(a.history[i].total == doctest::Approx(a.history[i].large_bce + 0.6 * a.history[i].small_bce).epsilon(1e-6));
    }
    CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  }

  TEST_CASE("lambda is echoed into the loss breakdown") {
    const RunConfig cfg = tiny_run();
    MciNet<double> net(cfg.model, 0);
    Binding<double> bind(net.parameters(), false);
    const auto ep = generate_episode(2, 1, 0, 16);
    CHECK(episode_loss(net, bind, ep, 0.6).breakdown().lambda == doctest::Approx(0.6));
    CHECK_THROWS_AS(episode_loss(net, bind, generate_episode(2, 1, 0, 32), 0.6), ShapeError);
  }

  TEST_CASE("periodic evaluation fills eval_miou") {
    RunConfig cfg = tiny_run();
    cfg.train.eval_every = 2;
    cfg.train.eval_episodes = 4;
    const auto ck = train(cfg);
    CHECK(std::isnan(ck.history[0].eval_miou));
    CHECK(ck.history[1].eval_miou >= 0.0);
    CHECK(ck.history[1].eval_miou <= 1.0);
  }

  TEST_CASE("diverging training names the offending loss term") {
    RunConfig cfg = tiny_run();
    cfg.train.lr = 1e30;
    cfg.train.steps = 5;
    CHECK_THROWS_WITH_AS(train(cfg), doctest::Contains("non-finite"), NumericError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save, load and save again are byte-identical") {
    const auto dir = scratch_dir("ckpt");
    const auto ck = train(tiny_run());
    save_checkpoint(dir / "a.bin", ck);
    const auto loaded = load_checkpoint(dir / "a.bin");
    save_checkpoint(dir / "b.bin", loaded);
    CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
    CHECK_FALSE(std::filesystem::exists(dir / "a.bin.tmp"));
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      CHECK(loaded.params.entries()[i].value.data() == ck.params.entries()[i].value.data());
      CHECK(loaded.momentum[i].data() == ck.momentum[i].data());
    }
    CHECK(loaded.step == ck.step);
    CHECK(config_hash(loaded.config) == config_hash(ck.config));
  }

  TEST_CASE("resuming reproduces an uninterrupted run") {
    RunConfig cfg = tiny_run();
    cfg.train.steps = 4;
    const auto straight = train(cfg);
    Checkpoint half = initial_checkpoint(cfg);
    train_steps(half, 2);
    Checkpoint resumed = deserialize_checkpoint(serialize_checkpoint(half));
    train_steps(resumed);
    CHECK(resumed.history.back().total == straight.history.back().total);
    CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(straight));
  }

  TEST_CASE("corrupt or foreign files are rejected") {
    std::string bytes = serialize_checkpoint(initial_checkpoint(tiny_run()));
    std::string wrong_version = bytes;
    wrong_version[8] = static_cast<char>(kCheckpointVersion + 1);
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(wrong_version), doctest::Contains("version"), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), FormatError);
  }
}

TEST_SUITE("evaluation") {
  TEST_CASE("an oracle predictor scores perfectly") {
    const auto ck = initial_checkpoint(tiny_run());
    const auto r = evaluate(ck, 0, 1, 12, 3, [](const Episode& ep) { return ep.query.mask; });
    CHECK(r.report.miou == 1.0);
    CHECK(r.report.fb_iou == 1.0);
    CHECK(r.report.episodes == 12);
    CHECK_FALSE(r.fold_mismatch);
    CHECK(evaluate(ck, 2, 1, 4, 3, [](const Episode& ep) { return ep.query.mask; }).fold_mismatch);
  }

  TEST_CASE("evaluation is deterministic and runs 5-shot on a 1-shot model") {
    const auto ck = initial_checkpoint(tiny_run());
    const auto a = evaluate(ck, 0, 1, 6, 9), b = evaluate(ck, 0, 1, 6, 9);
    CHECK(a.report.miou == b.report.miou);
    CHECK(a.manifest_hash == b.manifest_hash);
    const auto five = evaluate(ck, 0, 5, 4, 9);
    CHECK(five.k == 5);
    CHECK(five.report.miou >= 0.0);
    CHECK(five.report.miou <= 1.0);
  }

  TEST_CASE("untrained models stay near chance") {
    for (std::uint64_t seed : {0, 1, 2}) {
      RunConfig cfg;
      cfg.train.seed = seed;
      const auto r = evaluate(initial_checkpoint(cfg), 0, 1, 30, seed);
      CHECK(r.report.miou >= 0.0);
      CHECK(r.report.miou <= 0.35);
    }
  }

  TEST_CASE("results files carry the run identity") {
    const auto dir = scratch_dir("results");
    const auto r = evaluate(initial_checkpoint(tiny_run()), 1, 1, 5, 4);
    write_results(dir, r);
    const auto j = nlohmann::json::parse(slurp(dir / "results.json"));
    CHECK(j.at("fold") == 1);
    CHECK(j.at("seed") == 4);
    CHECK(j.at("episodes") == 5);
    CHECK(j.at("miou").get<double>() == r.report.miou);
    CHECK(j.at("per_class_iou").size() == r.report.per_class_iou.size());
    CHECK(slurp(dir / "results.txt").find("mIoU") != std::string::npos);
  }
}

TEST_SUITE("prediction") {
  TEST_CASE("overlay blends half image and half red") {
    Image img({3, 1, 2}, 0.4f);
    Mask m(1, 2);
    m << 1, 0;
    const Image o = overlay_image(img, m);
    CHECK(o[0] == doctest::Approx(0.7f));  // red, masked
    CHECK(o[1] == doctest::Approx(0.2f));  // red, unmasked
    CHECK(o[2] == doctest::Approx(0.2f));  // green, masked
    CHECK(o[4] == doctest::Approx(0.2f));  // blue, masked
    CHECK_THROWS_AS(overlay_image(img, Mask(2, 2)), ShapeError);
  }

  TEST_CASE("predict writes readable files and checks the resolution") {
    const auto dir = scratch_dir("predict");
    const auto ck = initial_checkpoint(tiny_run());
    const auto ep = generate_episode(1, 1, 5, 16);
    const auto files = predict(ck, ep, dir);
    CHECK((read_pbm(files.ground_truth) == ep.query.mask).all());
    const Mask pred = read_pbm(files.prediction);
    CHECK((pred == model_predictor(MciNet<float>(ck.config.model, ck.params))(ep)).all());
    CHECK((read_ppm(files.overlay).data() - overlay_image(ep.query.image, pred).data()).cwiseAbs().maxCoeff() <= 0.5f / 255 + 1e-6f);
    CHECK_THROWS_AS(predict(ck, generate_episode(1, 1, 5, 32), dir), ShapeError);
  }
}

TEST_SUITE("verification") {
  TEST_CASE("gradcheck passes on the tiny model and freezing drops backbone groups") {
    const auto report = gradcheck(tiny_model_config());
    CHECK(report.passed());
    bool has_backbone = false;
    for (const auto& g : report.groups) has_backbone = has_backbone || g.group.rfind("backbone", 0) == 0;
    CHECK(has_backbone);
    GradcheckOptions frozen;
    frozen.freeze_backbone = true;
    for (const auto& g : gradcheck(tiny_model_config(), frozen).groups) CHECK(g.group.rfind("backbone", 0) != 0);
    GradcheckOptions strict;
    strict.tolerance = 1e-14;
    CHECK_FALSE(gradcheck(tiny_model_config(), strict).passed());
  }

  TEST_CASE("loss gradients are deterministic") {
    const auto a = loss_gradients(tiny_model_config(), 4, 0.6, 1), b = loss_gradients(tiny_model_config(), 4, 0.6, 1);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second.data() == b[i].second.data());
  }
}

TEST_SUITE("ablation") {
  TEST_CASE("grid has eight distinct rows from baseline to full") {
    const auto grid = ablation_grid();
    REQUIRE(grid.size() == 8);
    std::set<int> codes;
    for (const auto& f : grid) codes.insert(f.mcfm * 4 + f.mlim_adjacent * 2 + f.msmp_feedback);
    CHECK(codes.size() == 8);
    CHECK(!grid.front().mcfm);
    CHECK(!grid.front().mlim_adjacent);
    CHECK(!grid.front().msmp_feedback);
    CHECK((grid.back().mcfm && grid.back().mlim_adjacent && grid.back().msmp_feedback));
    const auto base = apply_ablation(RunConfig{}, grid.front());
    CHECK_FALSE(base.model.mcfm.enabled);
    CHECK_FALSE(base.model.mlim.adjacent);
    CHECK_FALSE(base.model.msmp.feedback);
  }

  TEST_CASE("row statistics") {
    AblationRow r{{}, {0.2, 0.4, 0.6}};
    CHECK(r.mean() == doctest::Approx(0.4));
    CHECK(r.stddev() == doctest::Approx(0.2));
  }

  TEST_CASE("tiny ablation emits the eight-row table") {
    RunConfig cfg = tiny_run();
    cfg.train.steps = 1;
    cfg.train.batch_size = 1;
    cfg.eval.episodes = 2;
    CHECK_THROWS_AS(ablate(cfg, {0, 1}), ConfigError);
    const auto rows = ablate(cfg, {0, 1, 2});
    REQUIRE(rows.size() == 8);
    for (const auto& r : rows) CHECK(r.miou.size() == 3);
    const std::string table = ablation_table(rows);
    CHECK(std::count(table.begin(), table.end(), '\n') >= 9);
    CHECK(table.find("MCFM") != std::string::npos);
  }
}
