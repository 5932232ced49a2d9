#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "qotr/checkpoint.hpp"
#include "qotr/config.hpp"
#include "qotr/errors.hpp"
#include "qotr/gradsuite.hpp"
#include "qotr/image_io.hpp"
#include "qotr/outpaint.hpp"
#include "qotr/synth.hpp"
#include "qotr/trainer.hpp"

namespace fs = std::filesystem;
using namespace qotr;

namespace {

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::vector<std::string>& sets, const std::string& resume, bool quiet) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config(config_path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!data.empty()) cfg.data_dir = data;
  if (!out.empty()) cfg.out_dir = out;
  cfg.validate();

  Dataset ds = Dataset::load(cfg.data_dir, cfg.grid);
  const std::size_t n_images = ds.size();
  std::unique_ptr<Trainer> trainer;
  if (!resume.empty()) {
    Restored r = restore_checkpoint(load_checkpoint(resume));
    if (!(r.cfg.grid == cfg.grid)) throw ConfigError("resume checkpoint grid differs from config");
    trainer = std::make_unique<Trainer>(cfg, std::move(ds), std::move(r.state));
  } else {
    trainer = std::make_unique<Trainer>(cfg, std::move(ds));
  }

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream f(fs::path(cfg.out_dir) / "config.toml");
    f << to_toml(cfg);
  }
  const fs::path ckpt = fs::path(cfg.out_dir) / "checkpoint.qotr";
  std::fprintf(stderr, "training %llu steps (%zu per epoch, %zu images)\n",
               static_cast<unsigned long long>(trainer->total_steps()), trainer->steps_per_epoch(), n_images);
  trainer->run(
      [&](const StepLosses& l) {
        if (!quiet) std::printf("%s\n", format_telemetry(l).c_str());
        std::fflush(stdout);
      },
      [&](std::size_t epoch) {
        save_checkpoint(make_checkpoint(trainer->state(), cfg), ckpt);
        std::fprintf(stderr, "epoch %zu: saved %s\n", epoch, ckpt.c_str());
      });
  return 0;
}

int cmd_outpaint(const std::string& ckpt_path, const std::string& input, const std::string& output, std::size_t steps,
                 std::uint64_t seed) {
  Restored r = restore_checkpoint(load_checkpoint(ckpt_path));
  const Tensor<float> img = to_tensor<float>(read_png(input));
  OutpaintResult res = outpaint(img, r.state.gen, r.cfg.grid, r.cfg.model.noise, steps, seed);
  write_png(to_image(res.image), output);
  std::printf("wrote %s (%zux%zu, %.4gx the input area)\n", output.c_str(), res.image.dim(2), res.image.dim(1),
              res.area_ratio());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, std::uint64_t seed) {
  Restored r = restore_checkpoint(load_checkpoint(ckpt_path));
  const Dataset ds = Dataset::load(data, r.cfg.grid);
  const double p = evaluate_psnr(r.state.gen, r.cfg, ds, seed);
  std::printf("mean PSNR over %zu images: %.4f dB\n", ds.size(), p);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  bool ok = true;
  run_grad_suite(seed, [&](const GradSuiteEntry& e) {
    ok = ok && e.passed();
    std::printf("%-16s %s  max_rel=%.3e  tol=%.0e  n=%zu  %.2fs%s\n", e.name.c_str(), e.passed() ? "PASS" : "FAIL",
                e.result.max_rel_error, e.tolerance, e.result.checked, e.seconds,
                e.passed() ? "" : ("  worst=" + e.result.worst).c_str());
    std::fflush(stdout);
  });
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient checks FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-based image outpainting: training, inference and verification"};
  app.require_subcommand(1);

  std::string config_path, data, out, resume;
  std::vector<std::string> sets;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "TOML config file")->check(CLI::ExistingFile);
  train->add_option("--data", data, "Directory of training PNGs (overrides data_dir)");
  train->add_option("--out", out, "Output directory (overrides out_dir)");
  train->add_option("--set", sets, "Override a config key, key=value (repeatable)");
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_flag("--quiet", quiet, "Suppress per-step telemetry");

  std::string ckpt, input, output;
  std::size_t steps = 1;
  std::uint64_t seed = 0;
  auto* op = app.add_subcommand("outpaint", "Extrapolate an image on all sides");
  op->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  op->add_option("--input", input)->required()->check(CLI::ExistingFile);
  op->add_option("--output", output)->required();
  op->add_option("--steps", steps, "Outpainting rounds")->check(CLI::PositiveNumber);
  op->add_option("--seed", seed, "Noise seed");

  std::string eval_ckpt, eval_data;
  std::uint64_t eval_seed = 0;
  auto* ev = app.add_subcommand("eval", "Mean PSNR of reconstructions over a directory");
  ev->add_option("--ckpt", eval_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--seed", eval_seed, "Noise seed");

  std::string synth_out;
  std::size_t count = 0, size = 0;
  std::uint64_t synth_seed = 0;
  auto* sy = app.add_subcommand("synth-data", "Write a procedural image corpus");
  sy->add_option("--out", synth_out)->required();
  sy->add_option("--count", count)->required()->check(CLI::PositiveNumber);
  sy->add_option("--size", size)->required()->check(CLI::Range(8, 4096));
  sy->add_option("--seed", synth_seed);

  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--seed", gc_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, data, out, sets, resume, quiet);
    if (*op) return cmd_outpaint(ckpt, input, output, steps, seed);
    if (*ev) return cmd_eval(eval_ckpt, eval_data, eval_seed);
    if (*sy) {
      const auto paths = write_synth_corpus(synth_out, count, size, synth_seed);
      std::printf("wrote %zu images to %s\n", paths.size(), synth_out.c_str());
      return 0;
    }
    if (*gc) return cmd_gradcheck(gc_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
