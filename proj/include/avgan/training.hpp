#pragma once

// Training loop, checkpointing and inference.
//
// One training step, per batch element:
//   x_low = resize(x), y_low = resize(y)
//   key regions a_i are chosen on the full-resolution x
//   fake = G1(x_low), idt = G1(y_low), G2(a_i) for every region
// then one discriminator update (D1 on y_low vs fake, D2 on random target
// crops vs G2 outputs) followed by one generator update on the weighted total.
// Generator-side parameters (G1, G2, the NCE heads and the Q/K/V encoders)
// and discriminator parameters belong to separate optimizers.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avgan/config.hpp"
#include "avgan/data.hpp"
#include "avgan/discriminators.hpp"
#include "avgan/generators.hpp"
#include "avgan/losses.hpp"
#include "avgan/nn.hpp"
#include "avgan/region_selection.hpp"

namespace avgan {

struct StepMetrics {
  int step = 0;
  losses::LossValues terms;
  double total = 0.0;
  double d_loss = 0.0;
  std::vector<regions::RegionCoord> regions;  // of the first batch element
};

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

class ModelBundle {
 public:
  /// Initialises every network from `rng` in a fixed order.
  ModelBundle(const TrainConfig& config, Rng& rng);

  regions::RegionSet select_regions(const Tensor& image) const;

  /// Inference composition: G1 on the resized patch, upsampled back to the
  /// input size, with each key region replaced by its G2 translation.
  Tensor translate(const Tensor& image, regions::RegionSet* regions_out = nullptr) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> generator_side_parameters() const;
  std::vector<Tensor> discriminator_parameters() const;

  const TrainConfig& config() const { return config_; }
  const regions::QKVEmbedder& embedder() const { return embedder_; }
  const VarifocalGenerators& generators() const { return generators_; }
  const DiscriminatorPair& discriminators() const { return discriminators_; }
  const losses::PatchProjector& projector() const { return projector_; }

 private:
  TrainConfig config_;
  regions::QKVEmbedder embedder_;
  VarifocalGenerators generators_;
  DiscriminatorPair discriminators_;
  losses::PatchProjector projector_;
};

struct TrainingPair {
  Tensor x;  // source domain, 3 x S x S
  Tensor y;  // target domain
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  /// Draws batch_size pairs from the loader with the trainer's RNG.
  StepMetrics train_step(const data::UnpairedLoader& loader);
  StepMetrics train_step(const std::vector<TrainingPair>& batch);

  /// Skips discriminator updates (used to probe the generator in isolation).
  void set_discriminators_frozen(bool frozen) { d_frozen_ = frozen; }

  int step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  ModelBundle& models() { return *models_; }
  const ModelBundle& models() const { return *models_; }
  Adam& generator_optimizer() { return *g_opt_; }
  Adam& discriminator_optimizer() { return *d_opt_; }
  Rng& rng() { return rng_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer moments, step and RNG state. Throws if the
  /// checkpoint's architecture differs from this trainer's config.
  void load_checkpoint(const std::filesystem::path& path);

 private:
  TrainConfig config_;
  Rng rng_;
  std::unique_ptr<ModelBundle> models_;
  std::unique_ptr<Adam> g_opt_;
  std::unique_ptr<Adam> d_opt_;
  int step_ = 0;
  bool d_frozen_ = false;
};

/// Reads the config embedded in a checkpoint.
TrainConfig checkpoint_config(const std::filesystem::path& path);

struct TrainOptions {
  bool resume = false;
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  int final_step = 0;
  std::filesystem::path checkpoint;
  std::vector<StepMetrics> steps;  // steps run by this call
};

/// Runs max_steps steps writing <out_dir>/{config.txt, metrics.csv,
/// timing.csv, latest.ckpt}. With resume, continues from latest.ckpt and
/// drops metric rows after its step.
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

std::filesystem::path latest_checkpoint_path(const std::filesystem::path& out_dir);

struct TranslateResult {
  std::vector<std::string> files;
  std::vector<std::vector<regions::RegionCoord>> regions;
};

/// Translates every PNG of input_dir into output_dir (same file names) and
/// writes output_dir/regions.json. `overrides` may change non-architecture
/// keys such as n_regions or region_mode.
TranslateResult translate_directory(const std::filesystem::path& checkpoint, const std::filesystem::path& input_dir,
                                    const std::filesystem::path& output_dir,
                                    const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace avgan
