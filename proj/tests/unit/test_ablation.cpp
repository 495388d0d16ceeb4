#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "avgan/ablation.hpp"
#include "avgan/data.hpp"
#include "avgan/error.hpp"

using namespace avgan;

TEST_CASE("preset grids") {
  const AblationSpec all = ablation_preset("tables3-6");
  CHECK(all.cells.size() == 17);
  CHECK(all.steps_per_cell == 50);
  const AblationSpec t46 = ablation_preset("tables4+6");
  REQUIRE(t46.cells.size() == 9);
  int attention64 = 0, fixed64 = 0, attention128 = 0;
  for (const auto& c : t46.cells) {
    CHECK(c.target == "mt");
    CHECK_FALSE(c.shared_generators);
    if (c.region_size == 64 && c.region_mode == "attention") ++attention64;
    if (c.region_size == 64 && c.region_mode == "fixed") ++fixed64;
    if (c.region_size == 128 && c.region_mode == "attention") ++attention128;
  }
  CHECK(attention64 == 3);
  CHECK(fixed64 == 3);
  CHECK(attention128 == 3);
  CHECK(ablation_preset("table3").cells.size() == 4);
  CHECK(ablation_preset("table4").cells.size() == 6);
  CHECK(ablation_preset("table5").cells.size() == 6);
  CHECK(ablation_preset("table6").cells.size() == 6);
  CHECK(ablation_preset("table4", {1, 2}).cells.size() == 12);
  CHECK_THROWS_AS(ablation_preset("table9"), InvalidInput);
  CHECK_THROWS_AS(ablation_preset("table4", {}), InvalidInput);

  std::set<std::string> names;
  for (const auto& c : all.cells) {
    CHECK_NOTHROW(c.validate());
    names.insert(c.name());
  }
  CHECK(names.size() == all.cells.size());
  for (const auto& p : ablation_preset_names()) CHECK_NOTHROW(ablation_preset(p));
}

TEST_CASE("cells map onto configs") {
  AblationCell cell;
  cell.target = "pas";
  cell.region_mode = "fixed";
  cell.n_regions = 3;
  cell.region_size = 128;
  cell.seed = 4;
  CHECK(cell.name() == "pas_fixed_n3_s128_unshared_seed4");
  const TrainConfig c = cell.apply(TrainConfig{});
  CHECK(c.target_domain == "pas");
  CHECK(c.region_mode == "fixed");
  CHECK(c.n_regions == 3);
  CHECK(c.region_size == 128);
  CHECK(c.seed == 4u);

  AblationCell a, f;
  a.region_mode = "attention";
  f.region_mode = "fixed";
  CHECK(config_hash(a.apply(TrainConfig{})) != config_hash(f.apply(TrainConfig{})));

  AblationCell off = cell;
  off.n_regions = 4;
  CHECK_THROWS_AS(off.validate(), InvalidInput);
  off = cell;
  off.region_size = 96;
  CHECK_THROWS_AS(off.validate(), InvalidInput);
}

TEST_CASE("a one-cell grid writes a header and one populated row") {
  testing::TempDir dir("ablate");
  data::SynthOptions o;
  o.data_dir = dir / "data";
  o.count = 3;
  o.test_count = 2;
  o.size = 128;
  data::write_synthetic_dataset(o);

  TrainConfig base;
  base.data_dir = (dir / "data").string();
  base.lowres_size = 32;
  base.qkv_hidden_channels = 4;
  base.qkv_channels = 4;
  base.g_base_channels = 4;
  base.g_res_blocks = 1;
  base.d_base_channels = 4;
  base.d_layers_low = 2;
  base.nce_samples = 16;
  base.nce_proj_dim = 8;

  AblationSpec spec;
  spec.steps_per_cell = 1;
  spec.cells.push_back(AblationCell{});
  AblationCell broken;
  broken.target = "pas";  // not synthesised
  spec.cells.push_back(broken);

  int rows_seen = 0;
  AblationOptions opts;
  opts.on_row = [&](const AblationRow&) { ++rows_seen; };
  const auto rows = run_ablation(base, spec, dir / "out", opts);
  REQUIRE(rows.size() == 2);
  CHECK(rows_seen == 2);
  CHECK(rows[0].ok);
  CHECK(rows[0].report.n_samples == 2);
  CHECK(rows[0].report.extractor == "toy-conv64");
  TrainConfig expected = AblationCell{}.apply(base);
  expected.max_steps = 1;
  CHECK(rows[0].report.config_hash == config_hash(expected));
  CHECK(std::filesystem::exists(rows[0].regions_file));
  CHECK_FALSE(rows[1].ok);
  CHECK_FALSE(rows[1].error.empty());

  const std::string csv = testing::read_file(dir / "out/ablation.csv");
  CHECK(csv.rfind(ablation_csv_header(), 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find("mt_attention_n1_s64_unshared_seed0,mt,attention,1,64,false,0,ok,,") != std::string::npos);
  CHECK(csv.find("pas_attention_n1_s64_unshared_seed0,pas,attention,1,64,false,0,error,") != std::string::npos);
  const std::string header = ablation_csv_header();
  CHECK(std::count(header.begin(), header.end(), ',') == 15);
}
