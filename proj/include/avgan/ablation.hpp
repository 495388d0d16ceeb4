#pragma once

// Ablation grid runner: one train -> translate -> evaluate pass per cell,
// one CSV row per cell. A failing cell becomes an error row and the grid
// continues.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "avgan/config.hpp"
#include "avgan/metrics.hpp"

namespace avgan {

struct AblationCell {
  std::string target = "mt";
  std::string region_mode = "attention";
  int n_regions = 1;
  int region_size = 64;
  bool shared_generators = false;
  std::uint64_t seed = 0;

  std::string name() const;
  /// Values must lie on the grid: n in 1..3, size 64 or 128, mode attention|fixed.
  void validate() const;
  TrainConfig apply(const TrainConfig& base) const;
};

struct AblationSpec {
  std::vector<AblationCell> cells;
  int steps_per_cell = 50;
};

/// Presets: "tables3-6" (every distinct cell of the shared/unshared,
/// attention/fixed and region-size comparisons on both targets), "tables4+6"
/// (the MT attention/fixed and size grid), "table3", "table4", "table5",
/// "table6". Each cell is replicated once per seed.
AblationSpec ablation_preset(const std::string& preset, const std::vector<std::uint64_t>& seeds = {0});
std::vector<std::string> ablation_preset_names();

struct AblationRow {
  AblationCell cell;
  bool ok = false;
  std::string error;
  metrics::MetricReport report;
  std::filesystem::path regions_file;
};

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);

struct AblationOptions {
  std::string extractor = "toy";
  std::function<void(const AblationRow&)> on_row;
  std::function<void(const AblationCell&, int step)> on_step;
};

/// Cells run sequentially under <out_dir>/cells/<name>; rows go to
/// <out_dir>/ablation.csv as they finish.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const AblationSpec& spec,
                                      const std::filesystem::path& out_dir, const AblationOptions& options = {});

/// FID and KID of translated_dir against target_dir; CSS pairs source_dir and
/// translated_dir by sorted file name.
metrics::MetricReport evaluate_directories(const std::filesystem::path& source_dir,
                                           const std::filesystem::path& translated_dir,
                                           const std::filesystem::path& target_dir, const std::string& extractor);

}  // namespace avgan
