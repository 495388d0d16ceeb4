#include "avgan/ablation.hpp"

#include <fstream>

#include "avgan/data.hpp"
#include "avgan/error.hpp"
#include "avgan/training.hpp"

namespace avgan {
namespace {

std::vector<Tensor> load_tensors(const std::filesystem::path& dir) {
  std::vector<Tensor> out;
  for (const data::NamedImage& img : data::load_directory(dir)) out.push_back(data::to_tensor(img.image));
  return out;
}

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

void add_cells(std::vector<AblationCell>& cells, const std::string& target, const std::string& mode, int size,
               bool shared, std::initializer_list<int> counts) {
  for (int n : counts) {
    AblationCell c;
    c.target = target;
    c.region_mode = mode;
    c.region_size = size;
    c.shared_generators = shared;
    c.n_regions = n;
    cells.push_back(c);
  }
}

}  // namespace

std::string AblationCell::name() const {
  return target + "_" + region_mode + "_n" + std::to_string(n_regions) + "_s" + std::to_string(region_size) +
         (shared_generators ? "_shared" : "_unshared") + "_seed" + std::to_string(seed);
}

void AblationCell::validate() const {
  if (n_regions < 1 || n_regions > 3) throw InvalidInput("ablation: n_regions must be 1, 2 or 3");
  if (region_size != 64 && region_size != 128) throw InvalidInput("ablation: region_size must be 64 or 128");
  if (region_mode != "attention" && region_mode != "fixed") throw InvalidInput("ablation: region_mode must be attention or fixed");
  if (target.empty()) throw InvalidInput("ablation: empty target domain");
}

TrainConfig AblationCell::apply(const TrainConfig& base) const {
  TrainConfig c = base;
  c.target_domain = target;
  c.region_mode = region_mode;
  c.n_regions = n_regions;
  c.region_size = region_size;
  c.shared_generators = shared_generators;
  c.seed = seed;
  return c;
}

AblationSpec ablation_preset(const std::string& preset, const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationCell> base;
  const bool all = preset == "tables3-6";
  if (all || preset == "tables4+6" || preset == "table4" || preset == "table6") {
    if (preset != "table6") {
      add_cells(base, "mt", "attention", 64, false, {1, 2, 3});
      add_cells(base, "mt", "fixed", 64, false, {1, 2, 3});
    } else {
      add_cells(base, "mt", "attention", 64, false, {1, 2, 3});
    }
    if (preset != "table4") add_cells(base, "mt", "attention", 128, false, {1, 2, 3});
  }
  if (all || preset == "table3") {
    if (preset == "table3") add_cells(base, "mt", "attention", 64, false, {2});
    add_cells(base, "mt", "attention", 64, true, {2});
  }
  if (all || preset == "table5") {
    add_cells(base, "pas", "attention", 64, false, {1, 2, 3});
    add_cells(base, "pas", "fixed", 64, false, {1, 2, 3});
  }
  if (all || preset == "table3") {
    if (preset == "table3") add_cells(base, "pas", "attention", 64, false, {1});
    add_cells(base, "pas", "attention", 64, true, {1});
  }
  if (base.empty()) throw InvalidInput("unknown ablation preset '" + preset + "'");
  if (seeds.empty()) throw InvalidInput("ablation needs at least one seed");
  AblationSpec spec;
  for (std::uint64_t s : seeds) {
    for (AblationCell c : base) {
      c.seed = s;
      spec.cells.push_back(c);
    }
  }
  return spec;
}

std::vector<std::string> ablation_preset_names() {
  return {"tables3-6", "tables4+6", "table3", "table4", "table5", "table6"};
}

std::string ablation_csv_header() {
  return "cell,target,region_mode,n_regions,region_size,shared_generators,seed,status,error," +
         metrics::MetricReport::csv_header() + ",regions_file\n";
}

std::string ablation_csv_row(const AblationRow& r) {
  const AblationCell& c = r.cell;
  std::string row = c.name() + "," + c.target + "," + c.region_mode + "," + std::to_string(c.n_regions) + "," +
                    std::to_string(c.region_size) + "," + (c.shared_generators ? "true" : "false") + "," +
                    std::to_string(c.seed) + "," + (r.ok ? "ok" : "error") + "," + csv_safe(r.error) + ",";
  row += r.report.csv_row();
  row += "," + csv_safe(r.regions_file.string()) + "\n";
  return row;
}

metrics::MetricReport evaluate_directories(const std::filesystem::path& source_dir,
                                           const std::filesystem::path& translated_dir,
                                           const std::filesystem::path& target_dir, const std::string& extractor) {
  const auto sources = load_tensors(source_dir);
  const auto translated = load_tensors(translated_dir);
  const auto targets = load_tensors(target_dir);
  const auto fx = metrics::make_extractor(extractor);
  return metrics::evaluate_sets(sources, translated, targets, *fx);
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const AblationSpec& spec,
                                      const std::filesystem::path& out_dir, const AblationOptions& options) {
  if (spec.steps_per_cell < 0) throw InvalidInput("ablation: steps per cell must be >= 0");
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path csv_path = out_dir / "ablation.csv";
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  csv << ablation_csv_header() << std::flush;

  std::vector<AblationRow> rows;
  for (const AblationCell& cell : spec.cells) {
    AblationRow row;
    row.cell = cell;
    try {
      cell.validate();
      TrainConfig cfg = cell.apply(base);
      cfg.max_steps = spec.steps_per_cell;
      const std::filesystem::path cell_dir = out_dir / "cells" / cell.name();
      cfg.out_dir = cell_dir.string();
      row.report.config_hash = config_hash(cfg);
      TrainOptions topts;
      if (options.on_step) topts.on_step = [&](const StepMetrics& m) { options.on_step(cell, m.step); };
      const TrainResult trained = train(cfg, topts);

      const std::filesystem::path data_dir(cfg.data_dir);
      const std::filesystem::path source_test = data_dir / cfg.source_domain / "test";
      const std::filesystem::path target_test = data_dir / cfg.target_domain / "test";
      const std::filesystem::path translated = cell_dir / "translated";
      translate_directory(trained.checkpoint, source_test, translated);
      const std::string hash = row.report.config_hash;
      row.report = evaluate_directories(source_test, translated, target_test, options.extractor);
      row.report.config_hash = hash;
      row.regions_file = translated / "regions.json";
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    csv << ablation_csv_row(row) << std::flush;
    if (options.on_row) options.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace avgan
