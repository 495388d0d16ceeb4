#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "avgan/checkpoint.hpp"
#include "avgan/config.hpp"
#include "avgan/error.hpp"
#include "avgan/ops.hpp"
#include "avgan/training.hpp"

#include "json.hpp"

using namespace avgan;

namespace {

// Small networks on 128 x 128 patches: a 2 x 2 attention grid, 32 px regions.
TrainConfig tiny_config(const std::filesystem::path& root = {}) {
  TrainConfig c;
  c.lowres_size = 32;
  c.region_size = 32;
  c.n_regions = 2;
  c.qkv_hidden_channels = 4;
  c.qkv_channels = 4;
  c.g_base_channels = 4;
  c.g_res_blocks = 1;
  c.d_base_channels = 4;
  c.d_layers_low = 2;
  c.d_layers_high = 2;
  c.nce_samples = 16;
  c.nce_proj_dim = 8;
  c.max_steps = 3;
  c.checkpoint_every = 2;
  if (!root.empty()) {
    c.data_dir = (root / "data").string();
    c.out_dir = (root / "run").string();
  }
  return c;
}

void write_tiny_dataset(const std::filesystem::path& root, int count = 4, int test_count = 2) {
  data::SynthOptions o;
  o.data_dir = root / "data";
  o.count = count;
  o.test_count = test_count;
  o.size = 128;
  o.seed = 5;
  data::write_synthetic_dataset(o);
}

std::vector<TrainingPair> random_batch(Rng& rng, int n = 1) {
  std::vector<TrainingPair> b;
  for (int i = 0; i < n; ++i) {
    b.push_back({testing::random_tensor(rng, {3, 128, 128}, 0, 1), testing::random_tensor(rng, {3, 128, 128}, 0, 1)});
  }
  return b;
}

std::vector<std::vector<double>> snapshot(const ModelBundle& m) {
  std::vector<std::vector<double>> out;
  for (const auto& [_, t] : m.named_parameters()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

int csv_rows(const std::filesystem::path& p) {
  const std::string s = testing::read_file(p);
  return static_cast<int>(std::count(s.begin(), s.end(), '\n')) - 1;
}

}  // namespace

TEST_CASE("model bundle parameter bookkeeping") {
  Rng rng(1);
  const TrainConfig c = tiny_config();
  ModelBundle m(c, rng);
  std::set<const void*> g, d, all;
  for (const Tensor& t : m.generator_side_parameters()) g.insert(t.id());
  for (const Tensor& t : m.discriminator_parameters()) d.insert(t.id());
  for (const auto& [_, t] : m.named_parameters()) all.insert(t.id());
  for (const void* id : g) CHECK(d.count(id) == 0);
  CHECK(g.size() + d.size() == all.size());
  CHECK(m.generator_side_parameters().size() == g.size());

  std::set<std::string> names;
  for (const auto& [n, _] : m.named_parameters()) names.insert(n);
  CHECK(names.size() == m.named_parameters().size());
  CHECK(names.count("g1/g1.stem.weight") == 1);
  CHECK(names.count("g2/g2.stem.weight") == 1);

  TrainConfig shared = c;
  shared.shared_generators = true;
  Rng rng2(1);
  ModelBundle ms(shared, rng2);
  CHECK(ms.generators().shared());
  CHECK(ms.named_parameters().size() < m.named_parameters().size());
}

TEST_CASE("optimizers never share a parameter and update only their own side") {
  Trainer t(tiny_config());
  std::set<const void*> g, d;
  for (const Tensor& p : t.generator_optimizer().params()) g.insert(p.id());
  for (const Tensor& p : t.discriminator_optimizer().params()) d.insert(p.id());
  for (const void* id : g) CHECK(d.count(id) == 0);
  CHECK(g.size() == t.generator_optimizer().params().size());

  Rng rng(2);
  const auto before_d = t.models().discriminators().parameters();
  std::vector<std::vector<double>> dvals;
  for (const Tensor& p : before_d) dvals.emplace_back(p.data().begin(), p.data().end());
  t.set_discriminators_frozen(true);
  t.train_step(random_batch(rng));
  for (std::size_t i = 0; i < before_d.size(); ++i) CHECK(std::ranges::equal(before_d[i].data(), dvals[i]));
  CHECK(t.discriminator_optimizer().steps_taken() == 0);
  CHECK(t.generator_optimizer().steps_taken() == 1);
}

TEST_CASE("a discriminator pinned at one leaves an adversarial-only generator at rest") {
  TrainConfig c = tiny_config();
  c.weights = {1.0, 0.0, 0.0, 0.0, 0.0};
  Trainer t(c);
  // Zero logit weights and unit bias: every logit is exactly one.
  for (const PatchDiscriminator* d : {&t.models().discriminators().d1(), &t.models().discriminators().d2()}) {
    for (auto [name, p] : d->params().entries()) {
      if (name.find(".logits.") == std::string::npos) continue;
      std::ranges::fill(p.mutable_data(), name.ends_with(".bias") ? 1.0 : 0.0);
    }
  }
  t.set_discriminators_frozen(true);
  const auto before = snapshot(t.models());
  Rng rng(3);
  const StepMetrics m = t.train_step(random_batch(rng));
  CHECK(m.terms.adv == 0.0);
  CHECK(m.total == 0.0);
  double worst = 0.0;
  for (const Tensor& p : t.generator_optimizer().params())
    for (double gv : p.grad()) worst = std::max(worst, std::abs(gv));
  CHECK(worst <= 1e-12);
  const auto after = snapshot(t.models());
  CHECK(before == after);
}

TEST_CASE("train steps report every term and are deterministic") {
  Rng data_rng(4);
  std::vector<std::vector<TrainingPair>> batches;
  for (int i = 0; i < 10; ++i) batches.push_back(random_batch(data_rng));
  Trainer a(tiny_config());
  Trainer b(tiny_config());
  for (int i = 0; i < 10; ++i) {
    const StepMetrics ma = a.train_step(batches[i]);
    const StepMetrics mb = b.train_step(batches[i]);
    REQUIRE(metrics_csv_row(ma) == metrics_csv_row(mb));
    CHECK(ma.step == i + 1);
    CHECK(ma.regions.size() == 2);
    for (double v : {ma.terms.adv, ma.terms.idt, ma.terms.nce_x, ma.terms.nce_y, ma.terms.h, ma.terms.v, ma.d_loss}) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
    }
    CHECK(ma.total == doctest::Approx(losses::total_loss(ma.terms, tiny_config().weights)).epsilon(1e-12));
  }
  CHECK(snapshot(a.models()) == snapshot(b.models()));

  TrainConfig other = tiny_config();
  other.seed = 1;
  Trainer c(other);
  CHECK(metrics_csv_row(c.train_step(batches[0])) != metrics_csv_row(Trainer(tiny_config()).train_step(batches[0])));
}

TEST_CASE("batches accumulate and fixed regions sit on their anchors") {
  TrainConfig c = tiny_config();
  c.batch_size = 2;
  c.region_mode = "fixed";
  Trainer t(c);
  Rng rng(5);
  const StepMetrics m = t.train_step(random_batch(rng, 2));
  CHECK(std::isfinite(m.total));
  CHECK(m.regions == regions::fixed_regions(2, 32, {128, 128}));
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  Trainer t(tiny_config());
  Rng rng(6);
  auto batch = random_batch(rng);
  batch[0].x.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  batch[0].y.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    t.train_step(batch);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
  CHECK_THROWS_AS(t.train_step(std::vector<TrainingPair>{}), InvalidInput);
}

TEST_CASE("checkpoint archive round trip") {
  testing::TempDir dir("archive");
  Archive a;
  a.header["step"] = 7;
  a.blobs.emplace_back("x", std::vector<double>{1.5, -2.0, 1e-300});
  a.blobs.emplace_back("empty", std::vector<double>{});
  save_archive(dir / "a.ckpt", a);
  const Archive b = load_archive(dir / "a.ckpt");
  CHECK(b.header["step"] == 7);
  CHECK(b.blob("x") == a.blobs[0].second);
  CHECK(b.blob("empty").empty());
  CHECK_THROWS_AS(b.blob("nope"), IoError);
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));

  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_archive(dir / "bad.ckpt"), IoError);
  const std::string good = testing::read_file(dir / "a.ckpt");
  std::ofstream(dir / "short.ckpt", std::ios::binary) << good.substr(0, good.size() - 4);
  CHECK_THROWS_AS(load_archive(dir / "short.ckpt"), IoError);
  CHECK_THROWS_AS(load_archive(dir / "missing.ckpt"), IoError);
}

TEST_CASE("restoring a trainer reproduces the next step bitwise") {
  testing::TempDir dir("ckpt");
  Rng rng(7);
  std::vector<std::vector<TrainingPair>> batches;
  for (int i = 0; i < 3; ++i) batches.push_back(random_batch(rng));

  Trainer a(tiny_config());
  a.train_step(batches[0]);
  a.save_checkpoint(dir / "s1.ckpt");
  const StepMetrics a2 = a.train_step(batches[1]);
  const StepMetrics a3 = a.train_step(batches[2]);

  TrainConfig other_seed = tiny_config();
  other_seed.seed = 99;
  Trainer b(other_seed);
  b.load_checkpoint(dir / "s1.ckpt");
  CHECK(b.step() == 1);
  CHECK(metrics_csv_row(b.train_step(batches[1])) == metrics_csv_row(a2));
  CHECK(metrics_csv_row(b.train_step(batches[2])) == metrics_csv_row(a3));
  CHECK(snapshot(a.models()) == snapshot(b.models()));

  TrainConfig different = tiny_config();
  different.g_base_channels = 6;
  Trainer c(different);
  CHECK_THROWS_AS(c.load_checkpoint(dir / "s1.ckpt"), InvalidInput);
  CHECK(checkpoint_config(dir / "s1.ckpt").g_base_channels == 4);
}

TEST_CASE("train writes logs and checkpoints and resumes exactly") {
  testing::TempDir dir("train");
  write_tiny_dataset(dir.path());
  TrainConfig c = tiny_config(dir.path());

  SUBCASE("zero steps leaves only the initial checkpoint") {
    c.max_steps = 0;
    const TrainResult r = train(c);
    CHECK(r.final_step == 0);
    CHECK(std::filesystem::exists(latest_checkpoint_path(c.out_dir)));
    CHECK(csv_rows(dir / "run/metrics.csv") == 0);
    CHECK(load_archive(r.checkpoint).header["step"] == 0);
  }

  SUBCASE("row counts, headers and resume") {
    c.max_steps = 4;
    int seen = 0;
    const TrainResult full = train(c, {false, [&](const StepMetrics&) { ++seen; }});
    CHECK(seen == 4);
    CHECK(full.final_step == 4);
    CHECK(csv_rows(dir / "run/metrics.csv") == 4);
    CHECK(csv_rows(dir / "run/timing.csv") == 4);
    const std::string reference = testing::read_file(dir / "run/metrics.csv");
    CHECK(reference.rfind(metrics_csv_header(), 0) == 0);
    CHECK(testing::read_file(dir / "run/config.txt") == canonical_text(c));

    // A run that stops between checkpoint multiples still saves its last step.
    std::filesystem::remove_all(dir / "run");
    c.max_steps = 3;
    train(c);
    CHECK(load_archive(latest_checkpoint_path(c.out_dir)).header["step"] == 3);

    std::filesystem::remove_all(dir / "run");
    c.max_steps = 2;
    train(c);
    c.max_steps = 4;
    const TrainResult resumed = train(c, {true, {}});
    CHECK(resumed.steps.size() == 2);
    CHECK(resumed.steps.front().step == 3);
    CHECK(testing::read_file(dir / "run/metrics.csv") == reference);
    CHECK(csv_rows(dir / "run/timing.csv") == 4);

    // Resuming with a stale log tail drops the rows after the checkpoint.
    c.max_steps = 2;
    std::filesystem::remove_all(dir / "run");
    train(c);
    std::ofstream(dir / "run/metrics.csv", std::ios::app) << "3,1,1,1,1,1,1,1,1\n";
    c.max_steps = 4;
    train(c, {true, {}});
    CHECK(testing::read_file(dir / "run/metrics.csv") == reference);
  }

  SUBCASE("missing data is an error") {
    c.data_dir = (dir / "nowhere").string();
    CHECK_THROWS_AS(train(c), IoError);
  }
}

TEST_CASE("translate a directory") {
  testing::TempDir dir("translate");
  write_tiny_dataset(dir.path(), 2, 3);
  TrainConfig c = tiny_config(dir.path());
  c.max_steps = 1;
  const TrainResult r = train(c);
  const auto in = dir / "data/he/test";

  const TranslateResult a = translate_directory(r.checkpoint, in, dir / "out_a");
  const TranslateResult b = translate_directory(r.checkpoint, in, dir / "out_b");
  REQUIRE(a.files.size() == 3);
  CHECK(a.files == std::vector<std::string>{"he_00000.png", "he_00001.png", "he_00002.png"});
  for (const auto& f : a.files) {
    CHECK(testing::read_file(dir / ("out_a/" + f)) == testing::read_file(dir / ("out_b/" + f)));
    const auto img = data::read_png(dir / ("out_a/" + f));
    CHECK(img.height == 128);
    CHECK(img.width == 128);
  }
  const auto regions = nlohmann::json::parse(testing::read_file(dir / "out_a/regions.json"));
  CHECK(regions.size() == 3);
  CHECK(regions["he_00001.png"]["size"] == 32);
  CHECK(regions["he_00001.png"]["coords"].size() == 2);
  CHECK(regions["he_00001.png"]["coords"][0][0] == a.regions[1][0].row);

  const TranslateResult fixed = translate_directory(r.checkpoint, in, dir / "out_f", {{"region_mode", "fixed"}, {"n_regions", "1"}});
  CHECK(fixed.regions[0] == regions::fixed_regions(1, 32, {128, 128}));

  std::filesystem::create_directories(dir / "empty");
  const TranslateResult none = translate_directory(r.checkpoint, dir / "empty", dir / "out_e");
  CHECK(none.files.empty());
  CHECK(std::filesystem::is_directory(dir / "out_e"));

  CHECK_THROWS_AS(translate_directory(r.checkpoint, in, dir / "out_x", {{"g_base_channels", "8"}}), InvalidInput);
}

TEST_CASE("translation pastes G2 output over the upsampled G1 output") {
  Rng rng(8);
  const TrainConfig c = tiny_config();
  ModelBundle m(c, rng);
  const Tensor img = testing::random_tensor(rng, {3, 128, 128}, 0, 1);
  regions::RegionSet set;
  const Tensor out = m.translate(img, &set);
  REQUIRE(set.coords.size() == 2);
  const Tensor g1_up = resize_bilinear(m.generators().g1_forward(resize_bilinear(img, 32, 32)), 128, 128);
  const Tensor last = m.generators().g2_forward(crop(img, set.coords[1].row, set.coords[1].col, 32, 32));
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) CHECK(out.at(1, set.coords[1].row + y, set.coords[1].col + x) == last.at(1, y, x));
  // A pixel outside both regions keeps the G1 value.
  for (int y = 0; y < 128; y += 9) {
    for (int x = 0; x < 128; x += 7) {
      bool inside = false;
      for (const auto& rc : set.coords) inside = inside || (y >= rc.row && y < rc.row + 32 && x >= rc.col && x < rc.col + 32);
      if (!inside) CHECK(out.at(0, y, x) == g1_up.at(0, y, x));
    }
  }
}
