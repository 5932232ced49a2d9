#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qotr/checkpoint.hpp"
#include "qotr/decoder.hpp"
#include "qotr/discriminator.hpp"
#include "qotr/encoder.hpp"
#include "qotr/generator.hpp"
#include "qotr/geometry.hpp"
#include "qotr/gradsuite.hpp"
#include "qotr/image_io.hpp"
#include "qotr/losses.hpp"
#include "qotr/ops.hpp"
#include "qotr/outpaint.hpp"
#include "qotr/psm.hpp"
#include "qotr/synth.hpp"
#include "qotr/trainer.hpp"

using namespace qotr;
using Td = Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Td randn(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Td t(std::move(s));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// 1 -------------------------------------------------------------------------

Outcome geometry() {
  const GridSpec full{128, 128, 32, 16, 8};
  const TokenCounts tc = token_counts(full);
  bool ok = tc.L == 64 && tc.R == 80 && ring_index(full).size() == 80;
  const std::vector<GridSpec> sweep = {{128, 128, 32, 16, 8}, {64, 64, 16, 8, 4}, {32, 32, 16, 16, 0},
                                       {8, 8, 4, 4, 2},       {16, 24, 8, 8, 3},  {24, 16, 4, 4, 1},
                                       {64, 32, 16, 16, 8},   {48, 48, 24, 8, 0}, {8, 16, 8, 8, 7}};
  std::size_t agree = 0;
  for (const GridSpec& s : sweep) {
    std::size_t inner = 0, outer = 0;
    for (std::size_t y = 0; y < s.H + 2 * s.M; y += s.P)
      for (std::size_t x = 0; x < s.W + 2 * s.M; x += s.P) {
        const bool in = y >= s.M && y < s.M + s.H && x >= s.M && x < s.M + s.W;
        (in ? inner : outer) += 1;
      }
    const TokenCounts c = token_counts(s);
    if (c.L == inner && c.R == outer && ring_index(s).size() == outer) ++agree;
  }
  ok = ok && agree == sweep.size();
  return {ok, "L=" + std::to_string(tc.L) + " R=" + std::to_string(tc.R) + ", sweep " + std::to_string(agree) +
                  "/" + std::to_string(sweep.size())};
}

// 2 -------------------------------------------------------------------------

Outcome gradients() {
  const auto entries = run_grad_suite(1);
  bool ok = !entries.empty();
  double worst_prim = 0, worst_comp = 0;
  std::string failed;
  for (const auto& e : entries) {
    if (!e.passed()) {
      ok = false;
      failed += " " + e.name;
    }
    double& w = e.tolerance == kPrimitiveGradTol ? worst_prim : worst_comp;
    w = std::max(w, e.result.max_rel_error);
  }
  std::string d = std::to_string(entries.size()) + " checks, worst primitive " + fmt("%.2e", worst_prim) +
                  ", worst composite " + fmt("%.2e", worst_comp);
  if (!failed.empty()) d += ", failed:" + failed;
  return {ok, d};
}

// 3 -------------------------------------------------------------------------

Td psm_oracle(const Td& x, const Td& patches, const GridSpec& s) {
  const std::size_t Hc = s.canvas_h(), Wc = s.canvas_w(), E = s.P + 2 * s.o;
  Td acc({3, Hc, Wc}), cnt({Hc, Wc});
  std::size_t k = 0;
  for (std::size_t r = 0; r < Hc / s.P; ++r)
    for (std::size_t c = 0; c < Wc / s.P; ++c) {
      if (r * s.P >= s.M && r * s.P < s.M + s.H && c * s.P >= s.M && c * s.P < s.M + s.W) continue;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < E; ++i)
          for (std::size_t j = 0; j < E; ++j) {
            const long y = static_cast<long>(r * s.P + i) - static_cast<long>(s.o);
            const long xx = static_cast<long>(c * s.P + j) - static_cast<long>(s.o);
            if (y < 0 || xx < 0 || y >= static_cast<long>(Hc) || xx >= static_cast<long>(Wc)) continue;
            acc.at(ch, y, xx) += patches.at(k, (ch * E + i) * E + j);
            if (ch == 0) cnt.at(y, xx) += 1;
          }
      ++k;
    }
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < Hc; ++y)
      for (std::size_t xx = 0; xx < Wc; ++xx) {
        const bool in = y >= s.M && y < s.M + s.H && xx >= s.M && xx < s.M + s.W;
        acc.at(ch, y, xx) = in ? x.at(ch, y - s.M, xx - s.M) : acc.at(ch, y, xx) / cnt.at(y, xx);
      }
  return acc;
}

Outcome psm() {
  const std::pair<std::size_t, std::size_t> po[] = {{8, 0}, {8, 2}, {16, 8}};
  std::mt19937_64 rng(3);
  double worst = 0;
  bool center_exact = true;
  for (int i = 0; i < 50; ++i) {
    const auto [P, o] = po[i % 3];
    GridSpec s{P * (2 + rng() % 3), P * (2 + rng() % 3), P * (1 + rng() % 2), P, o};
    Td x = randn({3, s.H, s.W}, rng);
    Td patches = randn({token_counts(s).R, s.patch_width()}, rng);
    Graph<double> g;
    const Td got = assemble(g.constant(x), g.constant(patches), s, OverlapMap(s)).value();
    worst = std::max(worst, max_abs_diff(got, psm_oracle(x, patches, s)));
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < s.H; ++y)
        for (std::size_t xx = 0; xx < s.W; ++xx) center_exact &= got.at(ch, y + s.M, xx + s.M) == x.at(ch, y, xx);
  }
  return {worst <= 1e-6 && center_exact,
          "50 instances, max |diff| " + fmt("%.2e", worst) + (center_exact ? ", center exact" : ", center CHANGED")};
}

// 4 -------------------------------------------------------------------------

Outcome deformable() {
  std::mt19937_64 rng(4);
  double zero_err = 0;
  bool shift_exact = true;
  const std::size_t C = 3, O = 4, H = 9, W = 11;
  for (int trial = 0; trial < 10; ++trial) {
    Td x = randn({C, H, W}, rng), w = randn({O, C, 3, 3}, rng), b = randn({O}, rng);
    Graph<double> g;
    const Td d = deformable_conv2d(g.constant(x), g.constant(Td({18, H, W})), g.constant(w), g.constant(b)).value();
    const Td c = conv2d(x.reshaped({1, C, H, W}), w, b, 1, 1).reshaped({O, H, W});
    zero_err = std::max(zero_err, max_abs_diff(d, c));

    // Every tap moves by (dy, dx); equivalent to sampling x shifted by it.
    const long dy = static_cast<long>(rng() % 3) - 1, dx = trial % 2 ? 1 : -1;
    Td off({18, H, W});
    for (std::size_t t = 0; t < 9; ++t)
      for (std::size_t i = 0; i < H * W; ++i) {
        off[2 * t * H * W + i] = static_cast<double>(dy);
        off[(2 * t + 1) * H * W + i] = static_cast<double>(dx);
      }
    Graph<double> g2;
    const Td ds = deformable_conv2d(g2.constant(x), g2.constant(off), g2.constant(w), g2.constant(b)).value();
    Td shifted({1, C, H, W});
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(xx) + dx;
          if (sy >= 0 && sx >= 0 && sy < static_cast<long>(H) && sx < static_cast<long>(W))
            shifted.at(0, ch, y, xx) = x.at(ch, sy, sx);
        }
    const Td ref = conv2d(shifted, w, b, 1, 1);
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 2; y + 2 < H; ++y)
        for (std::size_t xx = 2; xx + 2 < W; ++xx) shift_exact &= ds.at(o, y, xx) == ref.at(0, o, y, xx);
  }
  return {zero_err <= 1e-5 && shift_exact,
          "zero-offset max |diff| " + fmt("%.2e", zero_err) + (shift_exact ? ", integer shift exact" : ", shift MISMATCH")};
}

// 5 -------------------------------------------------------------------------

Outcome attention_rows() {
  double worst = 0;
  std::size_t maps = 0;
  const GridSpec grid{};
  ModelConfig mc;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto gen = GeneratorParams<double>::init(mc, grid, seed);
    std::mt19937_64 rng(seed);
    Td img = randn({3, grid.H, grid.W}, rng);
    Graph<double> g;
    g.set_attention_observer([&](const Td& probs) {
      const std::size_t cols = probs.shape().back();
      for (std::size_t r = 0; r < probs.numel() / cols; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += probs[r * cols + c];
        worst = std::max(worst, std::abs(s - 1.0));
      }
      ++maps;
    });
    generate(g, img, gen, grid, OverlapMap(grid), mc.noise, rng);
  }
  // encoder: layers x heads; decoder: layers x (self + cross) x heads
  const std::size_t expect = 20 * (mc.encoder_layers + 2 * mc.decoder_layers) * mc.n_heads;
  return {maps == expect && worst <= 1e-6,
          std::to_string(maps) + " attention maps, max |row sum - 1| " + fmt("%.2e", worst)};
}

// 6 -------------------------------------------------------------------------

Outcome spectral() {
  std::mt19937_64 rng(6);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    Td w = randn({8, 8}, rng);
    Td u = randn({8}, rng);
    double n = 0;
    for (double v : u.data()) n += v * v;
    for (auto& v : u.data()) v /= std::sqrt(n);
    Eigen::MatrixXd m(8, 8);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) m(r, c) = w.at(r, c);
    const double exact = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
    worst = std::max(worst, std::abs(spectral_normalize(w, u, 50).sigma - exact) / exact);
  }
  return {worst <= 0.01, "50 matrices, max relative error " + fmt("%.2e", worst)};
}

// 7 -------------------------------------------------------------------------

Outcome hinge() {
  Graph<double> g;
  auto map = [&](double v) { return g.constant(Td({1, 1, 4, 4}, v)); };
  const double d_opt = d_hinge_loss<double>({map(-1)}, {map(1)}).value()[0];
  const double d_zero = d_hinge_loss<double>({map(0)}, {map(0)}).value()[0];
  bool gen_ok = true;
  for (double c : {-3.0, -1.0, -0.5, 0.0, 0.25, 2.0}) gen_ok &= g_adv_loss<double>({map(c)}).value()[0] == -c;
  return {d_opt == 0.0 && d_zero == 2.0 && gen_ok,
          fmt("L_D(-1,+1)=%g, L_D(0,0)=%g", d_opt, d_zero) + (gen_ok ? ", L_G(c)=-c" : ", L_G(c) != -c")};
}

// 8 -------------------------------------------------------------------------

Outcome loss_weighting() {
  Graph<double> g;
  auto one = [&] { return g.constant(Td({1}, 1.0)); };
  const double v = total_g_loss(one(), one(), one(), LossWeights{5.0, 10.0}).value()[0];
  return {v == 16.0, fmt("total_g_loss(1,1,1) = %g", v)};
}

// Shared training setup -----------------------------------------------------

TrainConfig toy_train_config() {
  TrainConfig c;
  c.grid = GridSpec{64, 64, 16, 8, 4};
  c.model.dim = 64;
  c.model.encoder_layers = 4;
  c.model.decoder_layers = 2;
  c.model.n_heads = 4;
  c.batch_size = 4;
  c.epochs = 1000;
  c.warmup_epochs = 10;
  c.max_steps = 2000;
  c.adam.lr = 5e-4;
  c.hflip = false;
  c.threads = 1;
  c.seed = 7;
  return c;
}

Dataset toy_corpus() { return Dataset::from_images(synth_corpus(8, 96, 3), GridSpec{64, 64, 16, 8, 4}); }

// 9 -------------------------------------------------------------------------

Outcome warmup() {
  TrainConfig cfg = toy_train_config();
  cfg.epochs = 2;
  cfg.warmup_epochs = 2;
  cfg.max_steps = 0;
  Trainer t(cfg, toy_corpus());
  auto disc_bytes = [&] {
    Checkpoint c;
    std::as_const(t).state().disc.visit("", ConstParamVisitor<float>([&](const std::string& n, const Tensor<float>& v) {
      c.tensors.push_back({n, v});
    }));
    std::as_const(t).state().disc.visit_state("u.", ConstParamVisitor<float>([&](const std::string& n, const Tensor<float>& v) {
      c.tensors.push_back({n, v});
    }));
    return checkpoint_bytes(c);
  };
  const std::string before = disc_bytes();
  t.run([](const StepLosses&) {});
  const bool same = disc_bytes() == before;
  const TrainCounters& k = t.counters();
  const bool quiet = k.adversarial_evals == 0 && k.perceptual_evals == 0 && k.d_updates == 0;
  return {same && quiet && k.g_updates == t.total_steps(),
          std::to_string(t.total_steps()) + " warm-up steps, D " + (same ? "bit-identical" : "CHANGED") +
              ", adv/perc evals " + std::to_string(k.adversarial_evals) + "/" + std::to_string(k.perceptual_evals)};
}

// 10 ------------------------------------------------------------------------

Outcome overfit() {
  const TrainConfig cfg = toy_train_config();
  Dataset data = toy_corpus();
  Trainer t(cfg, data);
  double early = 0, late = 0;
  std::size_t n_early = 0, n_late = 0;
  t.run([&](const StepLosses& l) {
    if (l.step >= 50 && l.step <= 100) early += l.rec, ++n_early;
    if (l.step >= 1950 && l.step <= 2000) late += l.rec, ++n_late;
  });
  early /= std::max<std::size_t>(n_early, 1);
  late /= std::max<std::size_t>(n_late, 1);
  const double ratio = late / early;
  const double db = evaluate_psnr(t.state().gen, cfg, data, cfg.seed);
  return {t.total_steps() == 2000 && ratio < 0.10 && db > 20.0,
          fmt("rec %.1f -> %.1f (ratio %.3f, need < 0.10)", early, late, ratio) + fmt(", PSNR %.2f dB (need > 20)", db)};
}

// 11 ------------------------------------------------------------------------

Outcome determinism() {
  TrainConfig cfg = toy_train_config();
  cfg.max_steps = 200;
  auto once = [&] {
    Trainer t(cfg, toy_corpus());
    t.run([](const StepLosses&) {});
    return checkpoint_bytes(make_checkpoint(t.state(), cfg));
  };
  const std::string a = once(), b = once();
  return {a == b, std::to_string(a.size()) + " checkpoint bytes, " + (a == b ? "identical" : "DIFFERENT")};
}

// 12 ------------------------------------------------------------------------

Outcome multistep() {
  const GridSpec full{128, 128, 32, 16, 8};
  ModelConfig mc;
  mc.dim = 16;
  mc.encoder_layers = 1;
  mc.decoder_layers = 1;
  mc.n_heads = 2;
  mc.qem_blocks = 1;
  const auto gen = GeneratorParams<float>::init(mc, full, 12);
  const Tensor<float> img = to_tensor<float>(synth_image(1, 128, 12));
  const double expect[] = {2.25, 5.0625, 11.390625};
  bool ok = true;
  std::string d;
  for (std::size_t steps = 1; steps <= 3; ++steps) {
    const OutpaintResult r = outpaint(img, gen, full, mc.noise, steps, 5);
    ok &= std::abs(r.area_ratio() - expect[steps - 1]) < 0.01 && r.image.dim(1) == 192 && r.image.dim(2) == 192;
    d += (steps > 1 ? ", " : "") + fmt("%.4gx", r.area_ratio());
  }
  return {ok, "area ratios " + d};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"geometry", geometry},          {"gradient suite", gradients},
      {"psm oracle", psm},             {"deformable degeneracy", deformable},
      {"attention rows", attention_rows}, {"spectral norm", spectral},
      {"hinge fixed points", hinge},   {"loss weighting", loss_weighting},
      {"warm-up contract", warmup},    {"overfit smoke", overfit},
      {"determinism", determinism},    {"multi-step geometry", multistep},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2zu %-22s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
