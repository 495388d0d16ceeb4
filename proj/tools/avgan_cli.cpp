// avgan: dataset synthesis, training, translation, evaluation, ablation and tiling.
//
// Failures print one line to stderr of the form
//   error kind=<invalid_input|io|numerical|usage|internal> msg=<text>
// and exit nonzero.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "avgan/ablation.hpp"
#include "avgan/config.hpp"
#include "avgan/data.hpp"
#include "avgan/error.hpp"
#include "avgan/metrics.hpp"
#include "avgan/training.hpp"

namespace {

using namespace avgan;
using Overrides = std::vector<std::pair<std::string, std::string>>;

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "error kind=" << kind << " msg=" << one_line(msg) << "\n";
  return code;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Flags shared by train and ablate, applied on top of --config.
struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;
  std::optional<int> max_steps;
  std::optional<int> n_regions;
  std::optional<int> region_size;
  std::optional<std::string> region_mode;
  std::optional<std::string> shared_generators;
  std::optional<double> theta;
  std::vector<std::string> sets;

  void add_to(CLI::App* app, bool with_steps) {
    app->add_option("--config", config, "Flat key=value config file");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--data-dir", data_dir, "Dataset root (contains <domain>/train, <domain>/test)");
    app->add_option("--out-dir", out_dir, "Output directory");
    if (with_steps) app->add_option("--max-steps", max_steps, "Training steps");
    app->add_option("--n-regions", n_regions, "Number of key regions");
    app->add_option("--region-size", region_size, "Key region side in pixels");
    app->add_option("--region-mode", region_mode, "attention or fixed")->check(CLI::IsMember({"attention", "fixed"}));
    app->add_option("--shared-generators", shared_generators, "true or false")->check(CLI::IsMember({"true", "false"}));
    app->add_option("--theta", theta, "Gate threshold");
    app->add_option("--set", sets, "Extra key=value override (repeatable)");
  }

  Overrides overrides() const {
    Overrides o;
    if (seed) o.emplace_back("seed", std::to_string(*seed));
    if (data_dir) o.emplace_back("data_dir", *data_dir);
    if (out_dir) o.emplace_back("out_dir", *out_dir);
    if (max_steps) o.emplace_back("max_steps", std::to_string(*max_steps));
    if (n_regions) o.emplace_back("n_regions", std::to_string(*n_regions));
    if (region_size) o.emplace_back("region_size", std::to_string(*region_size));
    if (region_mode) o.emplace_back("region_mode", *region_mode);
    if (shared_generators) o.emplace_back("shared_generators", *shared_generators);
    if (theta) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", *theta);
      o.emplace_back("theta", buf);
    }
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got '" + s + "'");
      o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return o;
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!config.empty()) c = load_config_file(config);
    apply_overrides(c, overrides());
    c.validate();
    return c;
  }
};

int cmd_synth(const data::SynthOptions& o) {
  const std::string hash = data::write_synthetic_dataset(o);
  std::cout << "manifest " << (o.data_dir / "manifest.json").string() << " hash=" << hash << "\n";
  return 0;
}

int cmd_train(const RunFlags& flags, bool resume, bool quiet) {
  const TrainConfig cfg = flags.resolve();
  TrainOptions opts;
  opts.resume = resume;
  if (!quiet) {
    opts.on_step = [&](const StepMetrics& m) {
      if (m.step == 1 || m.step % 10 == 0 || m.step == cfg.max_steps) {
        std::fprintf(stderr, "step %d total=%.4f adv=%.4f idt=%.4f nce=%.4f h=%.4f v=%.4f d=%.4f\n", m.step, m.total,
                     m.terms.adv, m.terms.idt, m.terms.nce_x + m.terms.nce_y, m.terms.h, m.terms.v, m.d_loss);
      }
    };
  }
  const TrainResult r = train(cfg, opts);
  std::cout << "checkpoint " << r.checkpoint.string() << " step=" << r.final_step << "\n";
  return 0;
}

int cmd_translate(const std::string& checkpoint, const std::string& input, const std::string& output,
                  const std::string& config_path, const Overrides& extra) {
  Overrides o;
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    for (auto& kv : parse_key_values(ss.str(), config_path)) {
      if (kv.first != "data_dir" && kv.first != "out_dir") o.push_back(kv);
    }
  }
  o.insert(o.end(), extra.begin(), extra.end());
  const TranslateResult r = translate_directory(checkpoint, input, output, o);
  std::cout << "translated " << r.files.size() << " images into " << output << "\n";
  return 0;
}

int cmd_evaluate(const std::string& fake_dir, const std::string& real_dir, const std::string& source_dir,
                 const std::string& extractor, const std::string& json_out, const std::string& csv_out,
                 const std::string& config_path) {
  // Without a source set, CSS pairs the translated images with the reference set.
  const std::string sources = source_dir.empty() ? real_dir : source_dir;
  metrics::MetricReport r = evaluate_directories(sources, fake_dir, real_dir, extractor);
  if (!config_path.empty()) r.config_hash = config_hash(load_config_file(config_path));
  const std::string json = r.to_json();
  if (!json_out.empty()) {
    std::filesystem::path p(json_out);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary | std::ios::trunc) << json;
  }
  if (!csv_out.empty()) {
    const bool fresh = !std::filesystem::exists(csv_out);
    std::ofstream out(csv_out, std::ios::binary | std::ios::app);
    if (fresh) out << metrics::MetricReport::csv_header() << "\n";
    out << r.csv_row() << "\n";
  }
  std::cout << json;
  return 0;
}

int cmd_ablate(const RunFlags& flags, const std::string& preset, int steps, const std::string& seeds,
               const std::string& extractor, bool quiet) {
  TrainConfig base = flags.resolve();
  std::vector<std::uint64_t> seed_list;
  if (seeds.empty()) {
    seed_list.push_back(base.seed);
  } else {
    for (const std::string& s : split_list(seeds)) seed_list.push_back(std::stoull(s));
  }
  AblationSpec spec = ablation_preset(preset, seed_list);
  spec.steps_per_cell = steps;
  AblationOptions opts;
  opts.extractor = extractor;
  int failed = 0;
  opts.on_row = [&](const AblationRow& row) {
    if (!row.ok) ++failed;
    if (!quiet) {
      std::fprintf(stderr, "cell %s %s fid=%.3f kid_x100=%.3f css=%.3f %s\n", row.cell.name().c_str(),
                   row.ok ? "ok" : "error", row.report.fid, row.report.kid_x100, row.report.css, row.error.c_str());
    }
  };
  const std::filesystem::path out(base.out_dir);
  const auto rows = run_ablation(base, spec, out, opts);
  std::cout << "ablation " << (out / "ablation.csv").string() << " cells=" << rows.size() << " failed=" << failed << "\n";
  return 0;
}

int cmd_tile(const std::string& input, const std::string& output_dir, int patch, int stride) {
  const data::Image8 img = data::read_png(input);
  const data::TilingSpec spec{patch, stride};
  const auto tiles = data::tile_image(img, spec);
  std::filesystem::create_directories(output_dir);
  const std::string stem = std::filesystem::path(input).stem().string();
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    data::write_png(std::filesystem::path(output_dir) / data::image_filename(stem, static_cast<int>(i)), tiles[i].image);
  }
  std::cout << "tiles " << tiles.size() << " (" << data::tile_count(img.height, spec) << " x "
            << data::tile_count(img.width, spec) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based varifocal GAN for unpaired stain translation"};
  app.require_subcommand(1);

  data::SynthOptions synth;
  std::string synth_targets = "mt";
  std::string synth_dir = "data";
  auto* s = app.add_subcommand("synth", "Write a synthetic two-domain dataset");
  s->add_option("--data-dir", synth_dir, "Dataset root");
  s->add_option("--count", synth.count, "Training images per domain")->check(CLI::NonNegativeNumber);
  s->add_option("--test-count", synth.test_count, "Test images per domain (default count/4)");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--size", synth.size, "Image side in pixels");
  s->add_option("--source", synth.source, "Source style (he, mt, pas)");
  s->add_option("--targets", synth_targets, "Comma-separated target styles");

  RunFlags train_flags;
  bool resume = false;
  bool quiet = false;
  auto* t = app.add_subcommand("train", "Train a model");
  train_flags.add_to(t, true);
  t->add_flag("--resume", resume, "Continue from <out-dir>/latest.ckpt");
  t->add_flag("--quiet", quiet, "No progress output");

  std::string ckpt, input_dir, output_dir, translate_config;
  std::optional<int> tr_n;
  std::optional<std::string> tr_mode;
  std::optional<double> tr_theta;
  auto* tr = app.add_subcommand("translate", "Translate a directory of patches");
  tr->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  tr->add_option("--input-dir", input_dir, "Directory of source PNGs")->required();
  tr->add_option("--output-dir", output_dir, "Output directory")->required();
  tr->add_option("--config", translate_config, "Config file; must agree with the checkpoint's architecture");
  tr->add_option("--n-regions", tr_n, "Number of key regions");
  tr->add_option("--region-mode", tr_mode, "attention or fixed")->check(CLI::IsMember({"attention", "fixed"}));
  tr->add_option("--theta", tr_theta, "Gate threshold");

  std::string fake_dir, real_dir, source_dir, json_out, csv_out, eval_config;
  std::string extractor = "toy";
  auto* ev = app.add_subcommand("evaluate", "FID, KID and CSS of a translated set");
  ev->add_option("--fake-dir", fake_dir, "Translated images")->required();
  ev->add_option("--real-dir", real_dir, "Target-domain reference images")->required();
  ev->add_option("--source-dir", source_dir, "Source images paired with the translations (for CSS)");
  ev->add_option("--extractor", extractor, "Feature extractor");
  ev->add_option("--out", json_out, "Write the report as JSON");
  ev->add_option("--csv", csv_out, "Append the report as a CSV row");
  ev->add_option("--config", eval_config, "Config whose hash is recorded in the report");

  RunFlags ablate_flags;
  std::string preset = "tables3-6";
  std::string seeds;
  int steps = 50;
  bool ablate_quiet = false;
  auto* ab = app.add_subcommand("ablate", "Run an ablation grid");
  ablate_flags.add_to(ab, false);
  ab->add_option("--preset", preset, "Grid preset")->check(CLI::IsMember(ablation_preset_names()));
  ab->add_option("--steps", steps, "Training steps per cell");
  ab->add_option("--seeds", seeds, "Comma-separated replicate seeds (default: --seed)");
  ab->add_option("--extractor", extractor, "Feature extractor");
  ab->add_flag("--quiet", ablate_quiet, "No progress output");

  std::string tile_input, tile_out;
  int patch = 512, stride = 64;
  auto* ti = app.add_subcommand("tile", "Cut an image into overlapping patches");
  ti->add_option("--input", tile_input, "Input PNG")->required();
  ti->add_option("--output-dir", tile_out, "Output directory")->required();
  ti->add_option("--patch-size", patch, "Patch side");
  ti->add_option("--stride", stride, "Stride");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (s->parsed()) {
      synth.data_dir = synth_dir;
      synth.targets = split_list(synth_targets);
      return cmd_synth(synth);
    }
    if (t->parsed()) return cmd_train(train_flags, resume, quiet);
    if (tr->parsed()) {
      Overrides o;
      if (tr_n) o.emplace_back("n_regions", std::to_string(*tr_n));
      if (tr_mode) o.emplace_back("region_mode", *tr_mode);
      if (tr_theta) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", *tr_theta);
        o.emplace_back("theta", buf);
      }
      return cmd_translate(ckpt, input_dir, output_dir, translate_config, o);
    }
    if (ev->parsed()) return cmd_evaluate(fake_dir, real_dir, source_dir, extractor, json_out, csv_out, eval_config);
    if (ab->parsed()) return cmd_ablate(ablate_flags, preset, steps, seeds, extractor, ablate_quiet);
    if (ti->parsed()) return cmd_tile(tile_input, tile_out, patch, stride);
  } catch (const InvalidInput& e) {
    return fail("invalid_input", e.what(), 2);
  } catch (const IoError& e) {
    return fail("io", e.what(), 3);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), 4);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return fail("usage", "no subcommand", 2);
}
