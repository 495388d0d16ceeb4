#pragma once

// Flat key=value run configuration shared by every command.
//
// File syntax: one `key = value` per line, `#` starts a comment, blank lines
// are ignored, unknown keys are rejected. Later assignments win, so CLI
// overrides are applied after the file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "avgan/color_space.hpp"
#include "avgan/losses.hpp"

namespace avgan {

struct TrainConfig {
  std::uint64_t seed = 0;
  int max_steps = 200;
  int checkpoint_every = 50;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 1;

  int lowres_size = 128;

  // key region selection
  int n_regions = 2;
  int region_size = 64;
  double theta = 0.5;
  int attention_pool = 4;
  std::string region_mode = "attention";  // attention | fixed
  int qkv_hidden_channels = 8;
  int qkv_channels = 8;

  // generators / discriminators
  int g_base_channels = 8;
  int g_res_blocks = 4;
  bool shared_generators = false;
  int d_base_channels = 8;
  int d_layers_low = 3;
  int d_layers_high = 2;

  losses::LossWeights weights;
  int nce_samples = 256;
  double nce_temperature = 0.07;
  int nce_proj_dim = 64;
  std::string stain_matrix = "ruifrok-johnston";

  std::string source_domain = "he";
  std::string target_domain = "mt";
  std::string data_dir = "data";
  std::string out_dir = "runs/default";

  /// Throws InvalidInput naming the offending key.
  void validate() const;
  color::StainMatrix stains() const;
};

/// Every recognised key, in canonical (sorted) order.
std::vector<std::string> config_keys();

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& config, const std::string& key);

/// Parses `key = value` lines into an ordered list of assignments.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& origin);

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});
void apply_overrides(TrainConfig& config, const std::vector<std::pair<std::string, std::string>>& overrides);

/// All keys, sorted, one `key=value` per line.
std::string canonical_text(const TrainConfig& config);
/// Hash of the experiment definition: every key except paths and checkpoint cadence.
std::string config_hash(const TrainConfig& config);
/// Hash of the keys that determine parameter shapes and wiring.
std::string architecture_hash(const TrainConfig& config);

}  // namespace avgan
