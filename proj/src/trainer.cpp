#include "qotr/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <iostream>
#include <memory>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_set>

#include "qotr/augment.hpp"
#include "qotr/errors.hpp"
#include "qotr/losses.hpp"
#include "qotr/metrics.hpp"
#include "qotr/ops.hpp"
#include "qotr/psm.hpp"

namespace qotr {
namespace {

constexpr std::uint64_t kDiscSeedSalt = 0xd15c;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first
// exception in index order.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, n);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// grads[k] = (1/B) sum_b graph_b.grad(slot_k), summed in batch order.
std::vector<Tensor<float>> mean_grads(const std::vector<AdamSlot>& slots,
                                      const std::vector<std::unique_ptr<Graph<float>>>& graphs) {
  std::vector<Tensor<float>> out;
  out.reserve(slots.size());
  const float inv = 1.0f / static_cast<float>(graphs.size());
  for (const auto& slot : slots) {
    Tensor<float> acc(slot.param->shape(), 0.0f);
    for (const auto& g : graphs) {
      if (const Tensor<float>* gr = g->grad(*slot.param)) {
        for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += (*gr)[i];
      }
    }
    for (auto& v : acc.data()) v *= inv;
    out.push_back(std::move(acc));
  }
  return out;
}

std::vector<const Tensor<float>*> pointers(const std::vector<Tensor<float>>& v) {
  std::vector<const Tensor<float>*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

void freeze_all(Graph<float>& g, const DiscriminatorParams<float>& d) {
  d.visit("", ConstParamVisitor<float>([&](const std::string&, const Tensor<float>& t) { g.freeze(t); }));
}

}  // namespace

TrainState TrainState::init(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.gen = GeneratorParams<float>::init(cfg.model, cfg.grid, cfg.seed);
  s.disc = DiscriminatorParams<float>::init(cfg.disc, cfg.seed ^ kDiscSeedSalt);
  s.g_opt = AdamState::zeros(generator_slots(s.gen));
  s.d_opt = AdamState::zeros(discriminator_slots(s.disc));
  return s;
}

std::vector<AdamSlot> generator_slots(GeneratorParams<float>& p) {
  std::vector<AdamSlot> out;
  p.visit("gen.", ParamVisitor<float>([&](const std::string& n, Tensor<float>& t) { out.push_back({n, &t}); }));
  return out;
}

std::vector<AdamSlot> discriminator_slots(DiscriminatorParams<float>& p) {
  std::vector<AdamSlot> out;
  p.visit("disc.", ParamVisitor<float>([&](const std::string& n, Tensor<float>& t) { out.push_back({n, &t}); }));
  return out;
}

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg) {
  Checkpoint ck;
  auto add = [&](const std::string& n, const Tensor<float>& t) { ck.tensors.push_back({n, t}); };
  std::vector<std::string> gnames, dnames;
  state.gen.visit("gen.", ConstParamVisitor<float>([&](const std::string& n, const Tensor<float>& t) {
    gnames.push_back(n);
    add(n, t);
  }));
  state.disc.visit("disc.", ConstParamVisitor<float>([&](const std::string& n, const Tensor<float>& t) {
    dnames.push_back(n);
    add(n, t);
  }));
  state.disc.visit_state("disc.", ConstParamVisitor<float>(add));
  auto add_opt = [&](const std::string& tag, const std::vector<std::string>& names, const AdamState& st) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      add("opt." + tag + ".m." + names[i], st.m[i]);
      add("opt." + tag + ".v." + names[i], st.v[i]);
    }
    add("opt." + tag + ".t", Tensor<float>::scalar(static_cast<float>(st.t)));
  };
  add_opt("g", gnames, state.g_opt);
  add_opt("d", dnames, state.d_opt);
  add("train.step", Tensor<float>::scalar(static_cast<float>(state.step)));
  ck.config_text = to_toml(cfg);
  return ck;
}

Restored restore_checkpoint(const Checkpoint& ckpt) {
  Restored r;
  try {
    r.cfg = parse_config(ckpt.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad config snapshot: ") + e.what());
  }
  r.state = TrainState::init(r.cfg);
  std::unordered_map<std::string, Tensor<float>*> model, opt;
  auto gs = generator_slots(r.state.gen);
  auto ds = discriminator_slots(r.state.disc);
  for (auto& sl : gs) model[sl.name] = sl.param;
  for (auto& sl : ds) model[sl.name] = sl.param;
  r.state.disc.visit_state("disc.", ParamVisitor<float>([&](const std::string& n, Tensor<float>& t) { model[n] = &t; }));
  for (std::size_t i = 0; i < gs.size(); ++i) {
    opt["opt.g.m." + gs[i].name] = &r.state.g_opt.m[i];
    opt["opt.g.v." + gs[i].name] = &r.state.g_opt.v[i];
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    opt["opt.d.m." + ds[i].name] = &r.state.d_opt.m[i];
    opt["opt.d.v." + ds[i].name] = &r.state.d_opt.v[i];
  }
  Tensor<float> g_t = Tensor<float>::scalar(0), d_t = Tensor<float>::scalar(0), step = Tensor<float>::scalar(0);
  opt["opt.g.t"] = &g_t;
  opt["opt.d.t"] = &d_t;

  std::unordered_set<std::string> seen;
  std::size_t opt_found = 0;
  for (const auto& nt : ckpt.tensors) {
    if (!seen.insert(nt.name).second) throw CheckpointError("duplicate tensor " + nt.name);
    Tensor<float>* dst = nullptr;
    if (auto it = model.find(nt.name); it != model.end()) {
      dst = it->second;
    } else if (auto jt = opt.find(nt.name); jt != opt.end()) {
      dst = jt->second;
      ++opt_found;
    } else if (nt.name == "train.step") {
      dst = &step;
    } else {
      throw CheckpointError("unknown tensor name '" + nt.name + "'");
    }
    if (dst->shape() != nt.value.shape()) {
      throw CheckpointError("tensor '" + nt.name + "' has shape " + shape_str(nt.value.shape()) + ", expected " +
                            shape_str(dst->shape()));
    }
    *dst = nt.value;
  }
  for (const auto& [name, _] : model)
    if (!seen.count(name)) throw CheckpointError("missing tensor '" + name + "'");
  if (opt_found != opt.size()) {
    r.inference_only = true;
    std::cerr << "warning: checkpoint has no complete optimizer state; loaded for inference only\n";
    r.state.g_opt = AdamState::zeros(gs);
    r.state.d_opt = AdamState::zeros(ds);
  } else {
    r.state.g_opt.t = static_cast<std::uint64_t>(g_t.item());
    r.state.d_opt.t = static_cast<std::uint64_t>(d_t.item());
  }
  r.state.step = static_cast<std::uint64_t>(step.item());
  return r;
}

Dataset Dataset::from_images(const std::vector<Image8>& imgs, const GridSpec& grid) {
  if (imgs.empty()) throw ConfigError("dataset is empty");
  Dataset d;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    if (imgs[i].height != grid.canvas_h() || imgs[i].width != grid.canvas_w()) {
      throw ConfigError("image " + std::to_string(i) + " is " + std::to_string(imgs[i].width) + "x" +
                        std::to_string(imgs[i].height) + ", grid expects " + std::to_string(grid.canvas_w()) +
                        "x" + std::to_string(grid.canvas_h()));
    }
    d.images.push_back(to_tensor<float>(imgs[i]));
  }
  return d;
}

Dataset Dataset::load(const std::filesystem::path& dir, const GridSpec& grid) {
  std::vector<Image8> imgs;
  for (const auto& p : list_pngs(dir)) {
    Image8 img = read_png(p);
    if (img.height != grid.canvas_h() || img.width != grid.canvas_w()) {
      throw ConfigError(p.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        ", grid expects " + std::to_string(grid.canvas_w()) + "x" + std::to_string(grid.canvas_h()));
    }
    imgs.push_back(std::move(img));
  }
  if (imgs.empty()) throw ConfigError("no PNG images in " + dir.string());
  return from_images(imgs, grid);
}

std::string format_telemetry(const StepLosses& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.6g,%.6g,%.6g,%.6g,%.6g", static_cast<unsigned long long>(s.step), s.adv_d,
                s.adv_g, s.rec, s.perc, s.total);
  return buf;
}

Trainer::Trainer(TrainConfig cfg, Dataset data) : Trainer(cfg, std::move(data), TrainState::init(cfg)) {}

Trainer::Trainer(TrainConfig cfg, Dataset data, TrainState state)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      state_(std::move(state)),
      omap_(cfg_.grid),
      phi_(cfg_.feature_seed) {
  cfg_.validate();
  if (data_.size() == 0) throw ConfigError("dataset is empty");
  for (const auto& img : data_.images) {
    if (img.shape() != Shape{3, cfg_.grid.canvas_h(), cfg_.grid.canvas_w()}) {
      throw ConfigError("dataset image " + shape_str(img.shape()) + " does not match the grid canvas");
    }
  }
  // Fail early if the discriminator cannot see the canvas.
  const std::size_t side = std::min(cfg_.grid.canvas_h(), cfg_.grid.canvas_w()) >> (cfg_.disc.n_scales - 1);
  if (side < state_.disc.receptive_field()) {
    throw ConfigError("canvas too small for the discriminator: coarsest side " + std::to_string(side) +
                      " < receptive field " + std::to_string(state_.disc.receptive_field()) +
                      " (reduce d_layers or d_scales)");
  }
}

std::size_t Trainer::steps_per_epoch() const { return (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }

std::uint64_t Trainer::total_steps() const {
  const std::uint64_t full = static_cast<std::uint64_t>(cfg_.epochs) * steps_per_epoch();
  return cfg_.max_steps ? std::min<std::uint64_t>(full, cfg_.max_steps) : full;
}

bool Trainer::in_warmup(std::uint64_t step) const { return step / steps_per_epoch() < cfg_.warmup_epochs; }

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
  const std::uint64_t epoch = step / steps_per_epoch();
  const std::size_t b = static_cast<std::size_t>(step % steps_per_epoch());
  std::vector<std::size_t> perm(data_.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = stream(cfg_.seed, epoch, 0x5eed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t lo = b * cfg_.batch_size;
  const std::size_t hi = std::min(perm.size(), lo + cfg_.batch_size);
  return {perm.begin() + static_cast<long>(lo), perm.begin() + static_cast<long>(hi)};
}

StepLosses Trainer::step() {
  const std::uint64_t s = state_.step;
  const bool warm = in_warmup(s);
  const auto idx = batch_indices(s);
  const std::size_t B = idx.size();
  const GridSpec& grid = cfg_.grid;

  std::vector<std::unique_ptr<Graph<float>>> graphs(B);
  std::vector<GeneratorOutput<float>> outs(B);
  std::vector<Tensor<float>> truth(B);
  std::vector<AugmentDraw> draws(B);
  std::vector<double> rec(B), adv_g(B), perc(B), total(B), adv_d(B);

  // Generator forward and reconstruction loss.
  parallel_for(B, cfg_.threads, [&](std::size_t i) {
    auto rng = stream(cfg_.seed, s, i + 1);
    Tensor<float> y = data_.images[idx[i]];
    if (cfg_.hflip && (rng() & 1)) y = hflip(y);
    draws[i] = draw_augment(grid.canvas_h(), grid.canvas_w(), cfg_.augment, rng);
    graphs[i] = std::make_unique<Graph<float>>();
    outs[i] = generate(*graphs[i], center_crop(y, grid), state_.gen, grid, omap_, cfg_.model.noise, rng);
    truth[i] = std::move(y);
  });

  StepLosses out;
  out.step = s + 1;
  out.warmup = warm;

  if (!warm) {
    // Discriminator step on detached fakes.
    update_spectral_state(state_.disc, 1);
    std::vector<std::unique_ptr<Graph<float>>> dgraphs(B);
    parallel_for(B, cfg_.threads, [&](std::size_t i) {
      dgraphs[i] = std::make_unique<Graph<float>>();
      Graph<float>& g = *dgraphs[i];
      Var<float> fake = g.constant(outs[i].canvas.value());
      Var<float> real = g.constant(truth[i]);
      if (cfg_.diffaug) {
        fake = apply_augment(fake, draws[i]);
        real = apply_augment(real, draws[i]);
      }
      Var<float> loss = d_hinge_loss(d_forward(fake, state_.disc), d_forward(real, state_.disc));
      adv_d[i] = loss.value().item();
      g.backward(loss);
    });
    counters_.adversarial_evals += 2 * B;
    const auto slots = discriminator_slots(state_.disc);
    const auto grads = mean_grads(slots, dgraphs);
    adam_step(slots, pointers(grads), state_.d_opt, cfg_.adam);
    counters_.d_updates += 1;
  }

  // Generator losses and backward.
  parallel_for(B, cfg_.threads, [&](std::size_t i) {
    Graph<float>& g = *graphs[i];
    Var<float> r = rec_loss(outs[i].patches, disassemble_targets(truth[i], grid));
    rec[i] = r.value().item();
    Var<float> loss;
    if (warm) {
      loss = scale(r, static_cast<float>(cfg_.loss.lambda_rec));
    } else {
      freeze_all(g, state_.disc);
      Var<float> fake = outs[i].canvas;
      if (cfg_.diffaug) fake = apply_augment(fake, draws[i]);
      Var<float> adv = g_adv_loss(d_forward(fake, state_.disc));
      Var<float> p = perceptual_loss(outs[i].canvas, g.constant(truth[i]), phi_);
      adv_g[i] = adv.value().item();
      perc[i] = p.value().item();
      loss = total_g_loss(adv, r, p, cfg_.loss);
    }
    total[i] = loss.value().item();
    g.backward(loss);
  });
  if (!warm) {
    counters_.adversarial_evals += B;
    counters_.perceptual_evals += B;
  }
  const auto slots = generator_slots(state_.gen);
  const auto grads = mean_grads(slots, graphs);
  adam_step(slots, pointers(grads), state_.g_opt, cfg_.adam);
  counters_.g_updates += 1;

  auto avg = [B](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / B; };
  out.rec = avg(rec);
  out.total = avg(total);
  if (!warm) {
    out.adv_d = avg(adv_d);
    out.adv_g = avg(adv_g);
    out.perc = avg(perc);
  }
  state_.step = s + 1;
  return out;
}

void Trainer::run(const std::function<void(const StepLosses&)>& on_step,
                  const std::function<void(std::size_t)>& on_epoch) {
  while (!done()) {
    const StepLosses l = step();
    if (on_step) on_step(l);
    if (on_epoch && (state_.step % steps_per_epoch() == 0 || done())) {
      on_epoch(static_cast<std::size_t>((state_.step + steps_per_epoch() - 1) / steps_per_epoch()));
    }
  }
}

double evaluate_psnr(const GeneratorParams<float>& gen, const TrainConfig& cfg, const Dataset& data,
                     std::uint64_t seed) {
  const OverlapMap omap(cfg.grid);
  double acc = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Graph<float> g;
    auto rng = stream(seed, i, 0xe7a1);
    auto out = generate(g, center_crop(data.images[i], cfg.grid), gen, cfg.grid, omap, cfg.model.noise, rng);
    acc += psnr(out.canvas.value(), data.images[i]);
  }
  return acc / static_cast<double>(data.size());
}

}  // namespace qotr
