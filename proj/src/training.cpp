#include "avgan/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "avgan/checkpoint.hpp"
#include "avgan/error.hpp"
#include "avgan/ops.hpp"

namespace avgan {
namespace {

using losses::AdversarialRole;

regions::EmbedderConfig embedder_config(const TrainConfig& c) {
  return {c.qkv_hidden_channels, c.qkv_channels, c.attention_pool};
}

GeneratorConfig generator_config(const TrainConfig& c) {
  GeneratorConfig g;
  g.base_channels = c.g_base_channels;
  g.n_residual_blocks = c.g_res_blocks;
  g.shared_weights = c.shared_generators;
  return g;
}

AdamConfig adam_config(const TrainConfig& c) {
  AdamConfig a;
  a.lr = c.lr;
  a.beta1 = c.beta1;
  a.beta2 = c.beta2;
  return a;
}

Tensor resize_to(const Tensor& x, int side) { return resize_bilinear(x, side, side); }

std::string format_terms(const StepMetrics& m) {
  std::ostringstream s;
  s << "adv=" << m.terms.adv << " idt=" << m.terms.idt << " nce_x=" << m.terms.nce_x << " nce_y=" << m.terms.nce_y
    << " h=" << m.terms.h << " v=" << m.terms.v << " total=" << m.total << " d=" << m.d_loss;
  return s.str();
}

bool all_finite(const StepMetrics& m) {
  for (double v : {m.terms.adv, m.terms.idt, m.terms.nce_x, m.terms.nce_y, m.terms.h, m.terms.v, m.total, m.d_loss}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// Everything an element of the batch contributes to both updates.
struct ForwardPass {
  Tensor x_low;
  Tensor y_low;
  ResnetGenerator::Output fake;
  ResnetGenerator::Output idt;
  regions::RegionSet regions;
  std::vector<Tensor> g2_out;
  std::vector<Tensor> real_crops;
};

}  // namespace

std::string metrics_csv_header() { return "step,total,adv,idt,nce_x,nce_y,h,v,d_loss\n"; }

std::string metrics_csv_row(const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e\n", m.step, m.total, m.terms.adv,
                m.terms.idt, m.terms.nce_x, m.terms.nce_y, m.terms.h, m.terms.v, m.d_loss);
  return buf;
}

ModelBundle::ModelBundle(const TrainConfig& config, Rng& rng)
    : config_(config),
      embedder_(embedder_config(config), rng),
      generators_(generator_config(config), config.lowres_size, config.region_size, rng),
      discriminators_({config.d_base_channels, config.d_layers_low}, {config.d_base_channels, config.d_layers_high},
                      config.lowres_size, config.region_size, rng),
      projector_(generators_.g1().feature_channels(), config.nce_proj_dim, rng) {}

regions::RegionSet ModelBundle::select_regions(const Tensor& image) const {
  if (config_.region_mode == "fixed") return regions::make_fixed_region_set(image, config_.n_regions, config_.region_size);
  return regions::select_key_regions(embedder_, image, config_.n_regions, config_.region_size, config_.theta);
}

Tensor ModelBundle::translate(const Tensor& image, regions::RegionSet* regions_out) const {
  NoGradGuard no_grad;
  const int h = image.dim(1);
  const int w = image.dim(2);
  const Tensor low = generators_.g1_forward(resize_to(image, config_.lowres_size));
  Tensor out = resize_bilinear(low, h, w);
  const regions::RegionSet set = select_regions(image);
  std::vector<double> pixels(out.data().begin(), out.data().end());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < set.coords.size(); ++i) {
    const Tensor g2 = generators_.g2_forward(set.regions[i]);
    const auto src = g2.data();
    const int s = set.size;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          pixels[c * hw + static_cast<std::size_t>(set.coords[i].row + y) * w + set.coords[i].col + x] =
              src[(static_cast<std::size_t>(c) * s + y) * s + x];
        }
      }
    }
  }
  if (regions_out != nullptr) *regions_out = set;
  return Tensor(Shape{3, h, w}, std::move(pixels));
}

std::vector<std::pair<std::string, Tensor>> ModelBundle::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto append = [&](const ParamStore& s, const std::string& prefix) {
    for (const auto& [n, t] : s.entries()) out.emplace_back(prefix + n, t);
  };
  append(embedder_.query_params(), "");
  append(embedder_.key_params(), "");
  append(embedder_.value_params(), "");
  append(generators_.g1().params(), "g1/");
  if (!generators_.shared()) append(generators_.g2().params(), "g2/");
  append(discriminators_.d1().params(), "");
  append(discriminators_.d2().params(), "");
  append(projector_.params(), "");
  return out;
}

std::vector<Tensor> ModelBundle::generator_side_parameters() const {
  std::vector<Tensor> out = generators_.parameters();
  for (const Tensor& t : projector_.params().tensors()) out.push_back(t);
  for (const Tensor& t : embedder_.parameters()) out.push_back(t);
  return out;
}

std::vector<Tensor> ModelBundle::discriminator_parameters() const { return discriminators_.parameters(); }

Trainer::Trainer(const TrainConfig& config) : config_(config), rng_(config.seed) {
  config_.validate();
  models_ = std::make_unique<ModelBundle>(config_, rng_);
  g_opt_ = std::make_unique<Adam>(models_->generator_side_parameters(), adam_config(config_));
  d_opt_ = std::make_unique<Adam>(models_->discriminator_parameters(), adam_config(config_));
}

StepMetrics Trainer::train_step(const data::UnpairedLoader& loader) {
  std::vector<TrainingPair> batch;
  for (int b = 0; b < config_.batch_size; ++b) {
    data::UnpairedLoader::Pair p = loader.next(rng_);
    batch.push_back({p.x, p.y});
  }
  return train_step(batch);
}

StepMetrics Trainer::train_step(const std::vector<TrainingPair>& batch) {
  if (batch.empty()) throw InvalidInput("train_step needs at least one pair");
  const ModelBundle& m = *models_;
  const VarifocalGenerators& gens = m.generators();
  const DiscriminatorPair& discs = m.discriminators();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const int rs = config_.region_size;

  StepMetrics metrics;
  metrics.step = step_ + 1;

  std::vector<ForwardPass> passes;
  passes.reserve(batch.size());
  for (const TrainingPair& pair : batch) {
    if (pair.x.rank() != 3 || pair.y.rank() != 3 || pair.x.dim(0) != 3 || pair.y.dim(0) != 3) {
      throw InvalidInput("training images must be 3 x H x W");
    }
    if (pair.y.dim(1) < rs || pair.y.dim(2) < rs) throw InvalidInput("target image smaller than region_size");
    ForwardPass f;
    f.x_low = resize_to(pair.x, config_.lowres_size);
    f.y_low = resize_to(pair.y, config_.lowres_size);
    f.regions = m.select_regions(pair.x);
    f.fake = gens.g1_forward_with_features(f.x_low);
    f.idt = gens.g1_forward_with_features(f.y_low);
    for (const Tensor& a : f.regions.regions) f.g2_out.push_back(gens.g2_forward(a));
    for (std::size_t i = 0; i < f.regions.regions.size(); ++i) {
      const int top = static_cast<int>(uniform_index(rng_, static_cast<std::size_t>(pair.y.dim(1) - rs + 1)));
      const int left = static_cast<int>(uniform_index(rng_, static_cast<std::size_t>(pair.y.dim(2) - rs + 1)));
      f.real_crops.push_back(crop(pair.y, top, left, rs, rs));
    }
    passes.push_back(std::move(f));
  }
  metrics.regions = passes.front().regions.coords;

  // Discriminator update on detached generator outputs.
  d_opt_->zero_grad();
  for (const ForwardPass& f : passes) {
    Tensor loss = losses::adversarial_loss(discs.d_forward(f.fake.image.detach(), Resolution::low),
                                           discs.d_forward(f.y_low, Resolution::low), AdversarialRole::discriminator);
    const double n = static_cast<double>(f.g2_out.size());
    for (std::size_t i = 0; i < f.g2_out.size(); ++i) {
      loss = add(loss, scale(losses::adversarial_loss(discs.d_forward(f.g2_out[i].detach(), Resolution::high),
                                                      discs.d_forward(f.real_crops[i], Resolution::high),
                                                      AdversarialRole::discriminator),
                             1.0 / n));
    }
    metrics.d_loss += loss.item() * inv_batch;
    if (!std::isfinite(loss.item())) {
      throw NumericalError("non-finite discriminator loss at step " + std::to_string(metrics.step) + ": d=" +
                           std::to_string(loss.item()));
    }
    if (!d_frozen_) scale(loss, inv_batch).backward();
  }
  if (!d_frozen_) d_opt_->step();

  // Generator update against the refreshed discriminators.
  g_opt_->zero_grad();
  const color::StainMatrix stains = config_.stains();
  const losses::PatchNceConfig nce{config_.nce_samples, config_.nce_temperature, config_.nce_proj_dim};
  std::vector<Tensor> totals;
  for (const ForwardPass& f : passes) {
    const double n = static_cast<double>(f.g2_out.size());
    losses::LossTerms t;
    t.adv = losses::adversarial_loss(discs.d_forward(f.fake.image, Resolution::low), Tensor(), AdversarialRole::generator);
    for (const Tensor& g2 : f.g2_out) {
      t.adv = add(t.adv, scale(losses::adversarial_loss(discs.d_forward(g2, Resolution::high), Tensor(),
                                                        AdversarialRole::generator),
                               1.0 / n));
    }
    t.idt = losses::identity_loss(f.idt.image, f.y_low);
    t.nce_x = losses::patch_nce_loss(f.fake.features, gens.g1().encode(f.fake.image), m.projector(), nce, rng_);
    t.nce_y = losses::patch_nce_loss(f.idt.features, gens.g1().encode(f.idt.image), m.projector(), nce, rng_);
    std::vector<Tensor> h_terms{losses::h_channel_loss(f.x_low, f.fake.image, stains)};
    for (std::size_t i = 0; i < f.g2_out.size(); ++i) {
      h_terms.push_back(losses::h_channel_loss(f.regions.regions[i], f.g2_out[i], stains));
    }
    t.h = mean(stack_scalars(h_terms));
    t.v = losses::varifocal_loss(f.fake.image, f.regions,
                                 {batch.front().x.dim(1), batch.front().x.dim(2)}, f.g2_out);
    const Tensor total = losses::total_loss(t, config_.weights);

    metrics.terms.adv += t.adv.item() * inv_batch;
    metrics.terms.idt += t.idt.item() * inv_batch;
    metrics.terms.nce_x += t.nce_x.item() * inv_batch;
    metrics.terms.nce_y += t.nce_y.item() * inv_batch;
    metrics.terms.h += t.h.item() * inv_batch;
    metrics.terms.v += t.v.item() * inv_batch;
    metrics.total += total.item() * inv_batch;
    totals.push_back(total);
  }
  if (!all_finite(metrics)) {
    throw NumericalError("non-finite loss at step " + std::to_string(metrics.step) + ": " + format_terms(metrics));
  }
  for (const Tensor& total : totals) scale(total, inv_batch).backward();
  g_opt_->step();
  ++step_;
  return metrics;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  Archive a;
  a.header["format"] = "avgan-checkpoint";
  a.header["step"] = step_;
  a.header["config"] = canonical_text(config_);
  a.header["architecture_hash"] = architecture_hash(config_);
  std::ostringstream rng_state;
  rng_state << rng_;
  a.header["rng"] = rng_state.str();
  a.header["g_opt_steps"] = g_opt_->steps_taken();
  a.header["d_opt_steps"] = d_opt_->steps_taken();
  for (const auto& [name, t] : models_->named_parameters()) {
    a.blobs.emplace_back("param/" + name, std::vector<double>(t.data().begin(), t.data().end()));
  }
  for (auto [label, opt] : {std::pair{"adam_g", g_opt_.get()}, std::pair{"adam_d", d_opt_.get()}}) {
    for (std::size_t i = 0; i < opt->params().size(); ++i) {
      a.blobs.emplace_back(std::string(label) + "/m/" + std::to_string(i), opt->first_moments()[i]);
      a.blobs.emplace_back(std::string(label) + "/v/" + std::to_string(i), opt->second_moments()[i]);
    }
  }
  save_archive(path, a);
}

namespace {

TrainConfig config_from_header(const Archive& a) {
  TrainConfig c;
  const std::string text = a.header.at("config").get<std::string>();
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    try {
      set_config_value(c, key, line.substr(eq + 1));
    } catch (const InvalidInput&) {
      // Keys from a newer build are ignored; the architecture hash guards shapes.
    }
  }
  return c;
}

}  // namespace

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const Archive a = load_archive(path);
  const TrainConfig saved = config_from_header(a);
  if (architecture_hash(saved) != architecture_hash(config_)) {
    throw InvalidInput("checkpoint/config mismatch: " + path.string() + " was written with a different architecture");
  }
  for (auto& [name, t] : models_->named_parameters()) {
    const std::vector<double>& v = a.blob("param/" + name);
    if (v.size() != t.numel()) throw InvalidInput("checkpoint/config mismatch: parameter " + name + " has a different size");
    std::copy(v.begin(), v.end(), t.mutable_data().begin());
  }
  for (auto [label, opt] : {std::pair{"adam_g", g_opt_.get()}, std::pair{"adam_d", d_opt_.get()}}) {
    for (std::size_t i = 0; i < opt->params().size(); ++i) {
      opt->first_moments()[i] = a.blob(std::string(label) + "/m/" + std::to_string(i));
      opt->second_moments()[i] = a.blob(std::string(label) + "/v/" + std::to_string(i));
    }
  }
  g_opt_->set_steps_taken(a.header.at("g_opt_steps").get<std::int64_t>());
  d_opt_->set_steps_taken(a.header.at("d_opt_steps").get<std::int64_t>());
  std::istringstream rng_state(a.header.at("rng").get<std::string>());
  rng_state >> rng_;
  step_ = a.header.at("step").get<int>();
}

TrainConfig checkpoint_config(const std::filesystem::path& path) { return config_from_header(load_archive(path)); }

std::filesystem::path latest_checkpoint_path(const std::filesystem::path& out_dir) { return out_dir / "latest.ckpt"; }

namespace {

// Keeps the header and every row whose step is <= last_step.
void truncate_csv(const std::filesystem::path& path, const std::string& header, int last_step) {
  std::string kept = header;
  std::ifstream in(path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoi(line.substr(0, line.find(','))) <= last_step) kept += line + "\n";
  }
  in.close();
  std::ofstream(path, std::ios::binary | std::ios::trunc) << kept;
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const std::filesystem::path out(config.out_dir);
  std::filesystem::create_directories(out);
  const std::filesystem::path data_dir(config.data_dir);
  const data::UnpairedLoader loader(data_dir / config.source_domain / "train", data_dir / config.target_domain / "train");

  Trainer trainer(config);
  const std::filesystem::path ckpt = latest_checkpoint_path(out);
  const std::filesystem::path metrics_path = out / "metrics.csv";
  const std::filesystem::path timing_path = out / "timing.csv";
  const std::string timing_header = "step,seconds\n";
  if (options.resume && std::filesystem::exists(ckpt)) {
    trainer.load_checkpoint(ckpt);
    truncate_csv(metrics_path, metrics_csv_header(), trainer.step());
    truncate_csv(timing_path, timing_header, trainer.step());
  } else {
    std::ofstream(metrics_path, std::ios::binary | std::ios::trunc) << metrics_csv_header();
    std::ofstream(timing_path, std::ios::binary | std::ios::trunc) << timing_header;
    trainer.save_checkpoint(ckpt);
  }
  std::ofstream(out / "config.txt", std::ios::binary | std::ios::trunc) << canonical_text(config);

  TrainResult result;
  std::ofstream metrics_out(metrics_path, std::ios::binary | std::ios::app);
  std::ofstream timing_out(timing_path, std::ios::binary | std::ios::app);
  bool saved = true;
  while (trainer.step() < config.max_steps) {
    const auto t0 = std::chrono::steady_clock::now();
    const StepMetrics m = trainer.train_step(loader);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics_out << metrics_csv_row(m) << std::flush;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d,%.6f\n", m.step, secs);
    timing_out << buf << std::flush;
    result.steps.push_back(m);
    if (options.on_step) options.on_step(m);
    saved = false;
    if (config.checkpoint_every > 0 && m.step % config.checkpoint_every == 0) {
      trainer.save_checkpoint(ckpt);
      saved = true;
    }
  }
  if (!saved) trainer.save_checkpoint(ckpt);
  result.final_step = trainer.step();
  result.checkpoint = ckpt;
  return result;
}

TranslateResult translate_directory(const std::filesystem::path& checkpoint, const std::filesystem::path& input_dir,
                                    const std::filesystem::path& output_dir,
                                    const std::vector<std::pair<std::string, std::string>>& overrides) {
  TrainConfig config = checkpoint_config(checkpoint);
  const std::string arch = architecture_hash(config);
  apply_overrides(config, overrides);
  if (architecture_hash(config) != arch) {
    throw InvalidInput("checkpoint/config mismatch: overrides change the network architecture");
  }
  Trainer trainer(config);
  trainer.load_checkpoint(checkpoint);
  const std::vector<data::NamedImage> inputs = data::load_directory(input_dir, true);
  std::filesystem::create_directories(output_dir);

  TranslateResult result;
  nlohmann::ordered_json regions_json = nlohmann::ordered_json::object();
  for (const data::NamedImage& in : inputs) {
    regions::RegionSet set;
    const Tensor out = trainer.models().translate(data::to_tensor(in.image), &set);
    data::write_png(output_dir / in.name, data::from_tensor(out));
    nlohmann::ordered_json coords = nlohmann::ordered_json::array();
    for (const auto& c : set.coords) coords.push_back({c.row, c.col});
    regions_json[in.name] = {{"size", set.size}, {"coords", coords}};
    result.files.push_back(in.name);
    result.regions.push_back(set.coords);
  }
  std::ofstream(output_dir / "regions.json", std::ios::binary | std::ios::trunc) << regions_json.dump(2) << "\n";
  return result;
}

}  // namespace avgan
