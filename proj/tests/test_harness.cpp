#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "qotr/adam.hpp"
#include "qotr/checkpoint.hpp"
#include "qotr/config.hpp"
#include "qotr/errors.hpp"
#include "qotr/image_io.hpp"
#include "qotr/metrics.hpp"
#include "qotr/outpaint.hpp"
#include "qotr/synth.hpp"
#include "qotr/trainer.hpp"

using namespace qotr;
using Tf = Tensor<float>;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.grid = GridSpec{16, 16, 8, 8, 4};
  c.model.dim = 8;
  c.model.encoder_layers = 1;
  c.model.decoder_layers = 1;
  c.model.n_heads = 2;
  c.model.qem_blocks = 1;
  c.model.noise.noise_dim = 4;
  c.disc = DiscriminatorConfig{1, 4, 1};
  c.batch_size = 2;
  c.epochs = 3;
  c.warmup_epochs = 2;
  c.seed = 11;
  return c;
}

Dataset tiny_data(std::size_t n = 4) { return Dataset::from_images(synth_corpus(n, 32, 5), tiny_config().grid); }

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("qotr_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Adam, ZeroGradientWithoutDecayLeavesParams) {
  Tf p({3}, std::vector<float>{1, -2, 3});
  const Tf before = p;
  std::vector<AdamSlot> slots{{"p", &p}};
  AdamState st = AdamState::zeros(slots);
  AdamConfig cfg;
  cfg.weight_decay = 0;
  adam_step(slots, {nullptr}, st, cfg);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tf p({2}, std::vector<float>{0.5f, 0.5f});
  Tf g({2}, std::vector<float>{3.0f, -0.01f});
  std::vector<AdamSlot> slots{{"p", &p}};
  AdamState st = AdamState::zeros(slots);
  AdamConfig cfg;
  cfg.weight_decay = 0;
  cfg.lr = 1e-2;
  adam_step(slots, {&g}, st, cfg);
  // m_hat / sqrt(v_hat) = sign(g) on the first step.
  EXPECT_NEAR(p[0], 0.49f, 1e-6);
  EXPECT_NEAR(p[1], 0.51f, 1e-5);
}

TEST(Adam, DecoupledDecayShrinks) {
  Tf p({1}, std::vector<float>{2.0f});
  std::vector<AdamSlot> slots{{"p", &p}};
  AdamState st = AdamState::zeros(slots);
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  adam_step(slots, {nullptr}, st, cfg);
  EXPECT_FLOAT_EQ(p[0], 2.0f * (1 - 0.05f));
}

TEST(Adam, NonFiniteGradientNamesParameterAndChangesNothing) {
  Tf a({2}, 1.0f), b({2}, 1.0f);
  Tf ga({2}, 0.5f), gb({2}, 0.0f);
  gb[1] = std::numeric_limits<float>::quiet_NaN();
  std::vector<AdamSlot> slots{{"enc.a", &a}, {"dec.b", &b}};
  AdamState st = AdamState::zeros(slots);
  try {
    adam_step(slots, {&ga, &gb}, st, AdamConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("dec.b"), std::string::npos);
  }
  EXPECT_EQ(a, Tf({2}, 1.0f));
  EXPECT_EQ(st.t, 0u);
}

TEST(Adam, ConfigValidation) {
  AdamConfig c;
  c.lr = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AdamConfig{};
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, ByteLayout) {
  Checkpoint c;
  c.tensors.push_back({"ab", Tf({2}, std::vector<float>{1.0f, -2.0f})});
  c.config_text = "x";
  const std::string b = checkpoint_bytes(c);
  // magic 4 + version 4 + count 4 + (2 + 2 + 1 + 8 + 1 + 8) + 4 + 1
  ASSERT_EQ(b.size(), 4u + 4 + 4 + 22 + 4 + 1);
  EXPECT_EQ(b.substr(0, 4), "QOTR");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 2u);
  EXPECT_EQ(b.substr(14, 2), "ab");
  EXPECT_EQ(static_cast<unsigned char>(b[16]), 1u);   // rank
  EXPECT_EQ(static_cast<unsigned char>(b[17]), 2u);   // dim 0
  EXPECT_EQ(static_cast<unsigned char>(b[25]), 0u);   // dtype f32
  EXPECT_EQ(b.substr(26, 4), std::string("\x00\x00\x80\x3f", 4));
  EXPECT_EQ(b.back(), 'x');
}

TEST(Checkpoint, RoundTripAndErrors) {
  Checkpoint c;
  c.tensors.push_back({"w", Tf({2, 3}, 0.25f)});
  c.tensors.push_back({"s", Tf({}, 7.0f)});
  c.config_text = "seed = 3\n";
  const std::string b = checkpoint_bytes(c);
  std::istringstream in(b);
  Checkpoint r = read_checkpoint(in);
  ASSERT_EQ(r.tensors.size(), 2u);
  EXPECT_EQ(*r.find("w"), c.tensors[0].value);
  EXPECT_EQ(r.find("nope"), nullptr);
  EXPECT_EQ(r.config_text, c.config_text);
  EXPECT_EQ(checkpoint_bytes(r), b);

  std::string bad = b;
  bad[0] = 'X';
  std::istringstream in_bad(bad);
  EXPECT_THROW(read_checkpoint(in_bad), CheckpointError);
  std::istringstream in_short(b.substr(0, b.size() - 3));
  EXPECT_THROW(read_checkpoint(in_short), CheckpointError);
  std::string ver = b;
  ver[4] = 9;
  std::istringstream in_ver(ver);
  EXPECT_THROW(read_checkpoint(in_ver), CheckpointError);
}

TEST(Checkpoint, TrainStateRoundTripIsByteIdentical) {
  const TrainConfig cfg = tiny_config();
  TrainState st = TrainState::init(cfg);
  st.step = 17;
  const Checkpoint c = make_checkpoint(st, cfg);
  const Restored r = restore_checkpoint(c);
  EXPECT_FALSE(r.inference_only);
  EXPECT_EQ(r.state.step, 17u);
  EXPECT_EQ(r.cfg.grid, cfg.grid);
  EXPECT_EQ(checkpoint_bytes(make_checkpoint(r.state, r.cfg)), checkpoint_bytes(c));

  const auto dir = temp_dir("ckpt");
  save_checkpoint(c, dir / "a.qotr");
  EXPECT_EQ(checkpoint_bytes(load_checkpoint(dir / "a.qotr")), checkpoint_bytes(c));
}

TEST(Checkpoint, UnknownTensorAndInferenceOnly) {
  const TrainConfig cfg = tiny_config();
  Checkpoint c = make_checkpoint(TrainState::init(cfg), cfg);
  Checkpoint extra = c;
  extra.tensors.push_back({"gen.bogus", Tf({1})});
  EXPECT_THROW(restore_checkpoint(extra), CheckpointError);

  Checkpoint missing_model = c;
  missing_model.tensors.erase(missing_model.tensors.begin());
  EXPECT_THROW(restore_checkpoint(missing_model), CheckpointError);

  Checkpoint model_only;
  model_only.config_text = c.config_text;
  for (const auto& t : c.tensors)
    if (t.name.rfind("opt.", 0) != 0) model_only.tensors.push_back(t);
  EXPECT_TRUE(restore_checkpoint(model_only).inference_only);
}

TEST(Config, RoundTripAndOverrides) {
  TrainConfig c = tiny_config();
  c.adam.lr = 3.5e-4;
  c.model.noise.distribution = NoiseDistribution::kUniform;
  c.data_dir = "some dir";
  c.diffaug = false;
  const TrainConfig r = parse_config(to_toml(c));
  EXPECT_EQ(to_toml(r), to_toml(c));
  EXPECT_EQ(r.adam.lr, 3.5e-4);
  EXPECT_EQ(r.data_dir, "some dir");
  set_config_value(c, "batch_size", "7");
  EXPECT_EQ(c.batch_size, 7u);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("nonsense_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[table]\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_NO_THROW(parse_config("P = 7\n"));
  EXPECT_THROW(parse_config("P = 7\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("batch_size = abc\n"), ConfigError);
  auto kv = parse_flat_toml("# c\na = 1  # trailing\nb = \"x # y\"\n");
  EXPECT_EQ(kv.at("a"), "1");
}

TEST(Metrics, Psnr) {
  Image8 a{2, 2, std::vector<std::uint8_t>(12, 100)};
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  Image8 b = a;
  for (auto& v : b.rgb) v = 101;
  EXPECT_NEAR(psnr(a, b), 48.1308, 1e-3);
  EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
  Image8 c = a;
  for (auto& v : c.rgb) v = 102;  // MSE x4
  EXPECT_NEAR(psnr(a, b) - psnr(a, c), 10 * std::log10(4.0), 1e-9);
  Image8 black{1, 1, {0, 0, 0}}, white{1, 1, {255, 255, 255}};
  EXPECT_NEAR(psnr(black, white), 0.0, 1e-12);
  EXPECT_NEAR(psnr(Tf({3, 1, 1}, -1.0f), Tf({3, 1, 1}, 1.0f)), 0.0, 1e-12);
  EXPECT_THROW(psnr(a, black), DimensionError);
}

TEST(ImageIo, PngRoundTripAndConversions) {
  Image8 img = synth_image(3, 20, 1);
  const auto dir = temp_dir("png");
  write_png(img, dir / "x.png");
  EXPECT_EQ(read_png(dir / "x.png"), img);
  EXPECT_EQ(to_image(to_tensor<float>(img)), img);
  EXPECT_EQ(list_pngs(dir).size(), 1u);
  Tf t = to_tensor<float>(img);
  EXPECT_EQ(resize_bilinear(t, 20, 20), t);
  Tf flat({3, 4, 4}, 0.3f);
  const Tf up = resize_bilinear(flat, 7, 9);
  EXPECT_EQ(up.shape(), (Shape{3, 7, 9}));
  for (float v : up.data()) EXPECT_FLOAT_EQ(v, 0.3f);
  EXPECT_EQ(hflip(hflip(t)), t);
}

TEST(Synth, DeterministicAndSized) {
  auto a = synth_corpus(6, 24, 9), b = synth_corpus(6, 24, 9), c = synth_corpus(6, 24, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& im : a) {
    EXPECT_EQ(im.height, 24u);
    EXPECT_EQ(im.rgb.size(), 24u * 24 * 3);
  }
  EXPECT_EQ(synth_image(2, 24, 9), a[2]);
  EXPECT_EQ(synth_family(5), SynthFamily::kStripes);
}

TEST(Telemetry, Format) {
  StepLosses s;
  s.step = 12;
  s.adv_d = 1.5;
  s.rec = 0.25;
  s.total = 3;
  EXPECT_EQ(format_telemetry(s), "12,1.5,0,0.25,0,3");
}

TEST(Trainer, WarmupTouchesOnlyTheGenerator) {
  TrainConfig cfg = tiny_config();
  Trainer t(cfg, tiny_data());
  EXPECT_EQ(t.steps_per_epoch(), 2u);
  EXPECT_EQ(t.total_steps(), 6u);
  const Checkpoint before = make_checkpoint(t.state(), cfg);
  for (int i = 0; i < 4; ++i) {
    StepLosses l = t.step();
    EXPECT_TRUE(l.warmup);
    EXPECT_EQ(l.adv_d, 0.0);
    EXPECT_EQ(l.perc, 0.0);
  }
  EXPECT_EQ(t.counters().perceptual_evals, 0u);
  EXPECT_EQ(t.counters().adversarial_evals, 0u);
  EXPECT_EQ(t.counters().d_updates, 0u);
  EXPECT_EQ(t.counters().g_updates, 4u);
  const Checkpoint after = make_checkpoint(t.state(), cfg);
  std::size_t gen_changed = 0;
  for (const auto& nt : before.tensors) {
    const Tf* now = after.find(nt.name);
    ASSERT_NE(now, nullptr);
    if (nt.name.rfind("disc.", 0) == 0 || nt.name.rfind("opt.d.", 0) == 0) {
      EXPECT_EQ(*now, nt.value) << nt.name;
    } else if (nt.name.rfind("gen.", 0) == 0 && !(*now == nt.value)) {
      ++gen_changed;
    }
  }
  EXPECT_GT(gen_changed, 0u);
  StepLosses gan = t.step();
  EXPECT_FALSE(gan.warmup);
  EXPECT_GT(t.counters().d_updates, 0u);
  EXPECT_GT(t.counters().perceptual_evals, 0u);
}

TEST(Trainer, MaxStepsCapsRun) {
  TrainConfig cfg = tiny_config();
  cfg.max_steps = 3;
  Trainer t(cfg, tiny_data());
  std::size_t n = 0;
  t.run([&](const StepLosses& l) { EXPECT_EQ(l.step, ++n); });
  EXPECT_EQ(n, 3u);
  EXPECT_TRUE(t.done());
}

TEST(Trainer, DatasetSizeMismatch) {
  EXPECT_THROW(Dataset::from_images(synth_corpus(2, 30, 1), tiny_config().grid), ConfigError);
}

TEST(Outpaint, AreaRatiosOnToyGrid) {
  const TrainConfig cfg = tiny_config();
  auto gen = GeneratorParams<float>::init(cfg.model, cfg.grid, 1);
  Tf img = to_tensor<float>(synth_image(0, 16, 2));
  // canvas 32 / input 16 per step.
  for (std::size_t steps : {1, 2, 3}) {
    OutpaintResult r = outpaint(img, gen, cfg.grid, cfg.model.noise, steps, 4);
    EXPECT_EQ(r.image.shape(), (Shape{3, 32, 32}));
    EXPECT_NEAR(r.area_ratio(), std::pow(4.0, static_cast<double>(steps)), 1e-9);
  }
  EXPECT_THROW(outpaint(img, gen, cfg.grid, cfg.model.noise, 0, 4), ConfigError);
  // One step at native size keeps the input verbatim in the center.
  const OutpaintResult one = outpaint(img, gen, cfg.grid, cfg.model.noise, 1, 4);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) EXPECT_EQ(one.image.at(ch, y + 8, x + 8), img.at(ch, y, x));
}

TEST(Trainer, IdenticalSeedsGiveIdenticalCheckpoints) {
  TrainConfig cfg = tiny_config();
  cfg.warmup_epochs = 1;
  auto once = [&] {
    Trainer t(cfg, tiny_data());
    std::string log;
    t.run([&](const StepLosses& l) { log += format_telemetry(l) + "\n"; });
    return log + checkpoint_bytes(make_checkpoint(t.state(), cfg));
  };
  EXPECT_EQ(once(), once());
}
