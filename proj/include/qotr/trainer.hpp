#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "qotr/adam.hpp"
#include "qotr/checkpoint.hpp"
#include "qotr/config.hpp"
#include "qotr/discriminator.hpp"
#include "qotr/features.hpp"
#include "qotr/generator.hpp"
#include "qotr/image_io.hpp"

namespace qotr {

struct TrainState {
  GeneratorParams<float> gen;
  DiscriminatorParams<float> disc;
  AdamState g_opt;
  AdamState d_opt;
  std::uint64_t step = 0;

  static TrainState init(const TrainConfig& cfg);
};

std::vector<AdamSlot> generator_slots(GeneratorParams<float>& p);
std::vector<AdamSlot> discriminator_slots(DiscriminatorParams<float>& p);

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg);

struct Restored {
  TrainConfig cfg;
  TrainState state;
  bool inference_only = false;  // optimizer moments were absent
};

// Rebuilds config and state from a checkpoint. Unknown or mis-shaped
// tensors and missing model tensors are CheckpointErrors; missing optimizer
// state only warns (on stderr) and sets inference_only.
Restored restore_checkpoint(const Checkpoint& ckpt);

// Ground-truth canvases, each [3, H+2M, W+2M] in [-1, 1].
struct Dataset {
  std::vector<Tensor<float>> images;

  static Dataset from_images(const std::vector<Image8>& imgs, const GridSpec& grid);
  static Dataset load(const std::filesystem::path& dir, const GridSpec& grid);
  std::size_t size() const { return images.size(); }
};

struct StepLosses {
  std::uint64_t step = 0;  // 1-based
  double adv_d = 0;
  double adv_g = 0;
  double rec = 0;
  double perc = 0;
  double total = 0;
  bool warmup = false;
};

// "step,L_adv_D,L_adv_G,L_rec,L_perc,L_total"
std::string format_telemetry(const StepLosses& s);

// Instrumentation for the warm-up contract.
struct TrainCounters {
  std::uint64_t perceptual_evals = 0;
  std::uint64_t adversarial_evals = 0;
  std::uint64_t d_updates = 0;
  std::uint64_t g_updates = 0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, Dataset data);
  Trainer(TrainConfig cfg, Dataset data, TrainState state);

  std::size_t steps_per_epoch() const;
  std::uint64_t total_steps() const;
  bool done() const { return state_.step >= total_steps(); }
  bool in_warmup(std::uint64_t step) const;

  StepLosses step();
  // Runs to total_steps(). on_epoch gets the 1-based epoch just finished.
  void run(const std::function<void(const StepLosses&)>& on_step,
           const std::function<void(std::size_t epoch)>& on_epoch = {});

  const TrainConfig& config() const { return cfg_; }
  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  const TrainCounters& counters() const { return counters_; }

 private:
  std::vector<std::size_t> batch_indices(std::uint64_t step) const;

  TrainConfig cfg_;
  Dataset data_;
  TrainState state_;
  OverlapMap omap_;
  FeatureExtractor<float> phi_;
  TrainCounters counters_;
};

// Generates every image of the set from its center crop and returns the mean
// full-canvas PSNR against the ground truth.
double evaluate_psnr(const GeneratorParams<float>& gen, const TrainConfig& cfg, const Dataset& data,
                     std::uint64_t seed);

}  // namespace qotr
