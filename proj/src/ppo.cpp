#include "semi/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "semi/rng.hpp"

namespace semi {

void PpoConfig::validate() const {
  if (horizon < 1 || num_envs < 1) throw std::invalid_argument("ppo: horizon and num_envs must be >= 1");
  if (!(discount > 0.0 && discount <= 1.0)) throw std::invalid_argument("ppo: discount must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw std::invalid_argument("ppo: gae_lambda must be in [0, 1]");
  }
  if (!(clip > 0.0)) throw std::invalid_argument("ppo: clip must be > 0");
  if (minibatches < 1) throw std::invalid_argument("ppo: minibatches must be >= 1");
  if (!(lr > 0.0) || !(max_grad_norm > 0.0)) {
    throw std::invalid_argument("ppo: lr and max_grad_norm must be > 0");
  }
  if (!std::isfinite(entropy_coef) || !std::isfinite(value_coef) || entropy_coef < 0.0 ||
      value_coef < 0.0) {
    throw std::invalid_argument("ppo: loss coefficients must be finite and >= 0");
  }
}

RolloutBuffer::RolloutBuffer(std::size_t horizon_, std::size_t num_envs_)
    : horizon(horizon_), num_envs(num_envs_), steps(horizon_ * num_envs_),
      bootstrap_values(num_envs_, 0.0) {}

VecEnv::VecEnv(std::vector<std::unique_ptr<Env>> envs, std::uint64_t seed)
    : envs_(std::move(envs)), seed_(seed) {
  if (envs_.empty()) throw std::invalid_argument("VecEnv: no env instances");
  const std::size_t n = envs_.size();
  running_.resize(n);
  episode_counter_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    rngs_.push_back(derive_rng(seed_, 0xac70 + i));
    current_.push_back(envs_[i]->reset(episode_seed(i)));
  }
}

VecEnv VecEnv::make(const std::string& preset, const EnvConfig& cfg, std::size_t count,
                    std::uint64_t seed) {
  // every instance shares one world (same tones); episodes differ by seed
  const std::uint64_t env_seed = mix_seed(seed, 0xe7);
  std::vector<std::unique_ptr<Env>> envs;
  for (std::size_t i = 0; i < count; ++i) envs.push_back(make_env(preset, cfg, env_seed));
  return VecEnv(std::move(envs), seed);
}

std::uint64_t VecEnv::episode_seed(std::size_t i) {
  return mix_seed(seed_, (static_cast<std::uint64_t>(i) << 40) ^ episode_counter_[i]++);
}

VecEnv::Stepped VecEnv::step(std::size_t i, const Action& action) {
  Stepped out;
  out.result = envs_[i]->step(action);
  auto& log = running_[i];
  log.interacted = log.interacted || out.result.info.interaction;
  log.succeeded = log.succeeded || out.result.info.success;
  log.extrinsic_return += out.result.reward;
  ++log.length;
  if (out.result.done) {
    finished_.push_back(log);
    log = EpisodeLog{};
    current_[i] = envs_[i]->reset(episode_seed(i));
    out.reset = true;
  } else {
    current_[i] = out.result.obs;
  }
  return out;
}

std::string to_string(RaTimestep t) { return t == RaTimestep::next ? "next" : "current"; }

RaTimestep ra_timestep_from_string(const std::string& s) {
  if (s == "next") return RaTimestep::next;
  if (s == "current") return RaTimestep::current;
  throw std::invalid_argument("ra_timestep must be 'next' or 'current', got '" + s + "'");
}

namespace {

Action random_action(const ActionSpace& space, std::mt19937_64& rng, double& log_prob) {
  Action a;
  if (space.kind == ActionKind::discrete) {
    a.index = std::uniform_int_distribution<std::size_t>(0, space.size - 1)(rng);
    log_prob = -std::log(static_cast<double>(space.size));
  } else {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    a.vector.resize(space.size);
    for (auto& x : a.vector) x = u(rng);
    log_prob = -static_cast<double>(space.size) * std::log(2.0);
  }
  return a;
}

double normed(RunningNorm& norm, double x, bool enabled) {
  return enabled ? norm.normalize(x) : x;
}

void score(RewardModels& m, Transition& tr, const FeatureBank& current,
           const FeatureBank& next, const ActionSpace& space) {
  const RewardSpec& spec = m.spec;
  const bool norm = spec.normalize;
  if (spec.has(IntrinsicComponent::semi_p)) {
    const auto rp = perceptual_incongruity(next, m.pool.features(), m.temperature, m.warmup);
    if (rp) {
      tr.r_p_ready = true;
      tr.raw.r_p = *rp;
      tr.normalized.r_p = normed(m.norms.p, *rp, norm);
    }
  }
  if (spec.has(IntrinsicComponent::semi_a)) {
    const FeatureBank& fb = m.ra_timestep == RaTimestep::next ? next : current;
    tr.raw.r_a = action_incongruity(m.target.net, fb);
    tr.normalized.r_a = normed(m.norms.a, tr.raw.r_a, norm);
  }
  const bool forward = spec.has(IntrinsicComponent::curiosity) ||
                       spec.has(IntrinsicComponent::disagreement);
  if (forward) {
    const std::size_t M = current.size();
    const auto z = fuse(current, DropoutMask::full(M));
    const auto a = encode_action(space, tr.action);
    if (spec.has(IntrinsicComponent::curiosity)) {
      const auto z_next = fuse(next, DropoutMask::full(M));
      tr.raw.r_curio = curiosity_reward(*m.curiosity, z, a, z_next);
      tr.normalized.r_curio = normed(m.norms.curio, tr.raw.r_curio, norm);
    }
    if (spec.has(IntrinsicComponent::disagreement)) {
      tr.raw.r_disag = disagreement_reward(m.ensemble, z, a);
      tr.normalized.r_disag = normed(m.norms.disag, tr.raw.r_disag, norm);
    }
  }
  if (spec.has(IntrinsicComponent::rnd)) {
    tr.raw.r_rnd = rnd_reward(*m.rnd, tr.next_obs);
    tr.normalized.r_rnd = normed(m.norms.rnd, tr.raw.r_rnd, norm);
  }
  tr.normalized.r_ext = tr.raw.r_ext;

  std::vector<double> parts;
  if (spec.has(IntrinsicComponent::semi_p) || spec.has(IntrinsicComponent::semi_a)) {
    parts.push_back(combine_intrinsic(tr.normalized.r_p, tr.normalized.r_a, spec.gamma_weight));
  }
  if (spec.has(IntrinsicComponent::curiosity)) parts.push_back(tr.normalized.r_curio);
  if (spec.has(IntrinsicComponent::disagreement)) parts.push_back(tr.normalized.r_disag);
  if (spec.has(IntrinsicComponent::rnd)) parts.push_back(tr.normalized.r_rnd);
  tr.reward = total_reward(sum_intrinsics(parts), tr.raw.r_ext, spec.beta_weight);
}

}  // namespace

RolloutBuffer collect_rollout(VecEnv& envs, const PolicyNet& policy, RewardModels& models,
                              std::size_t horizon, bool random_policy) {
  if (horizon < 1) throw std::invalid_argument("collect_rollout: horizon must be >= 1");
  const std::size_t V = envs.size();
  const EnvSpec& spec = envs.spec();
  const std::size_t M = spec.modality_widths.size();
  const DropoutMask full = DropoutMask::full(M);
  RolloutBuffer buf(horizon, V);

  std::vector<FeatureBank> feats(V);
  for (std::size_t i = 0; i < V; ++i) feats[i] = models.bank.encode(envs.current(i));

  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t i = 0; i < V; ++i) {
      Transition& tr = buf.at(i, t);
      tr.env_index = i;
      tr.step = t;
      tr.obs = envs.current(i);
      auto& rng = envs.rng(i);
      tr.mask = sample_mask(rng, M);
      tr.z = fuse(feats[i], tr.mask);
      tr.z_full = fuse(feats[i], full);
      if (random_policy) {
        tr.action = random_action(spec.action_space, rng, tr.log_prob);
      } else {
        const ActResult r = act(policy, feats[i], tr.mask, rng);
        tr.action = r.action;
        tr.log_prob = r.log_prob;
        tr.value = r.value;
      }

      VecEnv::Stepped stepped;
      try {
        stepped = envs.step(i, tr.action);
      } catch (const std::exception& e) {
        throw std::runtime_error("env fault at rollout step " + std::to_string(t) + ", instance " +
                                 std::to_string(i) + ": " + e.what());
      }
      tr.next_obs = std::move(stepped.result.obs);
      tr.done = stepped.result.done;
      tr.info = stepped.result.info;
      tr.raw.r_ext = stepped.result.reward;

      FeatureBank next = models.bank.encode(tr.next_obs);
      score(models, tr, feats[i], next, spec.action_space);
      models.pool.push(tr.next_obs, next);
      feats[i] = stepped.reset ? models.bank.encode(envs.current(i)) : std::move(next);
    }
    models.target.tick(V);
  }

  for (std::size_t i = 0; i < V; ++i) {
    buf.bootstrap_values[i] = random_policy ? 0.0 : policy.forward(fuse(feats[i], full)).value;
  }
  return buf;
}

std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const std::uint8_t> dones, double bootstrap,
                                   double discount, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw std::invalid_argument("gae_advantages: length mismatch");
  }
  std::vector<double> adv(n, 0.0);
  double next_adv = 0.0;
  double next_value = bootstrap;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + discount * next_value * live - values[k];
    adv[k] = delta + discount * lambda * live * next_adv;
    next_adv = adv[k];
    next_value = values[k];
  }
  return adv;
}

void compute_gae(RolloutBuffer& buffer, double discount, double lambda) {
  const std::size_t T = buffer.horizon;
  std::vector<double> r(T), v(T);
  std::vector<std::uint8_t> d(T);
  for (std::size_t e = 0; e < buffer.num_envs; ++e) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto& tr = buffer.at(e, t);
      r[t] = tr.reward;
      v[t] = tr.value;
      d[t] = tr.done ? 1 : 0;
    }
    const auto adv = gae_advantages(r, v, d, buffer.bootstrap_values[e], discount, lambda);
    for (std::size_t t = 0; t < T; ++t) {
      auto& tr = buffer.at(e, t);
      tr.advantage = adv[t];
      tr.ret = adv[t] + tr.value;
    }
  }
}

void normalize_advantages(std::span<double> adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  const double div = sd > 1e-8 ? sd : 1.0;
  for (double& a : adv) a = (a - mean) / div;
}

PpoBatch make_batch(const RolloutBuffer& buffer, std::span<const std::size_t> indices,
                    std::span<const double> advantages, const ActionSpace& space) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t B = indices.size();
  const std::size_t D = buffer.steps[indices[0]].z.size();
  PpoBatch b;
  b.z = Tensor({B, D}, 0.0);
  b.z_full = Tensor({B, D}, 0.0);
  if (space.kind == ActionKind::continuous) b.continuous_actions = Tensor({B, space.size}, 0.0);
  for (std::size_t r = 0; r < B; ++r) {
    const auto& tr = buffer.steps[indices[r]];
    std::copy(tr.z.begin(), tr.z.end(), b.z.data().data() + r * D);
    std::copy(tr.z_full.begin(), tr.z_full.end(), b.z_full.data().data() + r * D);
    if (space.kind == ActionKind::discrete) {
      b.discrete_actions.push_back(tr.action.index);
    } else {
      std::copy(tr.action.vector.begin(), tr.action.vector.end(),
                b.continuous_actions.data().data() + r * space.size);
    }
    b.old_log_probs.push_back(tr.log_prob);
    b.advantages.push_back(advantages[indices[r]]);
    b.returns.push_back(tr.ret);
  }
  return b;
}

LossFn ppo_loss(const PolicyNet& arch, PpoBatch batch, double clip, PpoLossWeights weights,
                std::shared_ptr<PpoTerms> terms) {
  return [arch, batch = std::move(batch), clip, weights, terms](Graph& g,
                                                               std::span<const Var> leaves) {
    const std::size_t B = batch.size();
    const auto& space = arch.action_space();
    const Var z = g.constant(batch.z);
    const Var z_full = g.constant(batch.z_full);
    const auto heads = arch.apply(g, leaves, z, z_full);
    Var logp{}, entropy{};
    if (space.kind == ActionKind::discrete) {
      const Var lsm = g.log_softmax_rows(heads.actor);
      std::vector<std::size_t> idx(B);
      for (std::size_t r = 0; r < B; ++r) idx[r] = r * space.size + batch.discrete_actions[r];
      logp = g.gather(lsm, std::move(idx));
      entropy = g.scale(g.mean(g.sum_rows(g.mul(g.exp(lsm), lsm))), -1.0);
    } else {
      const double d = static_cast<double>(space.size);
      const double log_2pi = std::log(2.0 * std::numbers::pi);
      const Var ls = g.broadcast_row(heads.log_std, B);
      const Var u = g.mul(g.sub(g.constant(batch.continuous_actions), heads.actor),
                          g.exp(g.scale(ls, -1.0)));
      logp = g.add_scalar(g.sum_rows(g.sub(g.scale(g.square(u), -0.5), ls)), -0.5 * d * log_2pi);
      entropy = g.add_scalar(g.sum(heads.log_std), 0.5 * d * (1.0 + log_2pi));
    }
    const Var ratio = g.exp(g.sub(logp, g.constant(Tensor({B}, batch.old_log_probs))));
    const Var adv = g.constant(Tensor({B}, batch.advantages));
    const Var surrogate =
        g.minimum(g.mul(ratio, adv), g.mul(g.clamp(ratio, 1.0 - clip, 1.0 + clip), adv));
    const Var policy_loss = g.scale(g.mean(surrogate), -1.0);
    const Var value_loss = g.mean(g.square(g.sub(heads.value, g.constant(Tensor({B}, batch.returns)))));
    const Var loss = g.sub(g.add(g.scale(policy_loss, weights.policy), g.scale(value_loss, weights.value)),
                           g.scale(entropy, weights.entropy));

    if (terms) {
      terms->policy_loss = g.scalar(policy_loss);
      terms->value_loss = g.scalar(value_loss);
      terms->entropy = g.scalar(entropy);
      const Tensor& rv = g.value(ratio);
      std::size_t clipped = 0;
      double kl = 0.0, dev = 0.0;
      for (std::size_t r = 0; r < B; ++r) {
        const double x = rv[r];
        if (std::abs(x - 1.0) > clip) ++clipped;
        kl += (x - 1.0) - std::log(x);
        dev = std::max(dev, std::abs(x - 1.0));
      }
      terms->clip_fraction = static_cast<double>(clipped) / static_cast<double>(B);
      terms->approx_kl = kl / static_cast<double>(B);
      terms->max_ratio_deviation = dev;
    }
    return loss;
  };
}

PpoReport ppo_update(PolicyNet& policy, AdamState& opt, const RolloutBuffer& buffer,
                     const PpoConfig& cfg, std::mt19937_64& rng) {
  PpoReport report;
  const std::size_t N = buffer.size();
  if (cfg.epochs == 0 || N == 0) return report;
  std::vector<double> adv(N);
  for (std::size_t k = 0; k < N; ++k) adv[k] = buffer.steps[k].advantage;
  normalize_advantages(adv);

  auto params = policy.tensors();
  const std::size_t chunks = std::min(cfg.minibatches, N);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  const PpoLossWeights weights{1.0, cfg.value_coef, cfg.entropy_coef};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t lo = c * N / chunks, hi = (c + 1) * N / chunks;
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      auto terms = std::make_shared<PpoTerms>();
      auto vg = value_and_grad(
          ppo_loss(policy, make_batch(buffer, idx, adv, policy.action_space()), cfg.clip, weights, terms),
          params);
      report.grad_norm += clip_grad_norm(vg.grad, cfg.max_grad_norm);
      adam_step(params, vg.grad, opt);
      policy.assign(params);
      if (report.updates == 0) report.first_ratio_deviation = terms->max_ratio_deviation;
      report.policy_loss += terms->policy_loss;
      report.value_loss += terms->value_loss;
      report.entropy += terms->entropy;
      report.clip_fraction += terms->clip_fraction;
      report.approx_kl += terms->approx_kl;
      ++report.updates;
    }
  }
  const double u = static_cast<double>(report.updates);
  report.policy_loss /= u;
  report.value_loss /= u;
  report.entropy /= u;
  report.clip_fraction /= u;
  report.approx_kl /= u;
  report.grad_norm /= u;
  return report;
}

void TrainConfig::validate() const {
  reward.validate();
  ppo.validate();
  alignment.temperature.validate();
  if (alignment.pool_capacity < 1) throw std::invalid_argument("alignment.pool_capacity must be >= 1");
  if (alignment.warmup > alignment.pool_capacity) {
    throw std::invalid_argument("alignment.warmup must not exceed alignment.pool_capacity");
  }
  if (alignment.warmup < 1) throw std::invalid_argument("alignment.warmup must be >= 1");
  if (alignment.minibatch < 2) throw std::invalid_argument("alignment.minibatch must be >= 2");
  if (!(alignment.lr > 0.0) || !(baselines.lr > 0.0)) throw std::invalid_argument("learning rates must be > 0");
  if (baselines.minibatch < 1) throw std::invalid_argument("baselines.minibatch must be >= 1");
  if (reward.has(IntrinsicComponent::disagreement) && baselines.ensemble_size < 2) {
    throw std::invalid_argument("baselines.ensemble_size must be >= 2 for disagreement");
  }
  if (copy_period < 1) throw std::invalid_argument("copy_period must be >= 1");
  if (metric_window < 1) throw std::invalid_argument("metric_window must be >= 1");
  if (alignment.encoder.feature_width < 1 || alignment.encoder.hidden_width < 1) throw std::invalid_argument("encoder widths must be >= 1");
  if (policy.hidden_width < 1 || policy.hidden_layers < 1) {
    throw std::invalid_argument("policy hidden width and layers must be >= 1");
  }
  const auto& names = env_preset_names();
  if (std::find(names.begin(), names.end(), env_preset) == names.end()) {
    throw std::invalid_argument("unknown env preset '" + env_preset + "'");
  }
}

namespace {

TrainConfig validated(TrainConfig cfg) {
  cfg.validate();
  return cfg;
}

template <class T>
std::optional<double> mean_of(const std::vector<T>& xs) {
  if (xs.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_(validated(std::move(cfg))),
      envs_(VecEnv::make(cfg_.env_preset, cfg_.env, cfg_.ppo.num_envs, cfg_.seed)),
      update_rng_(derive_rng(cfg_.seed, 0x0bd7)) {
  const EnvSpec& spec = envs_.spec();
  auto init = derive_rng(cfg_.seed, 0x1417);
  models_.spec = cfg_.reward;
  models_.bank = EncoderBank(spec.modality_widths, cfg_.alignment.encoder, init);
  models_.pool = EncodedPool(cfg_.alignment.pool_capacity);
  models_.temperature = cfg_.alignment.temperature;
  models_.warmup = cfg_.alignment.warmup;
  models_.ra_timestep = cfg_.ra_timestep;
  const std::size_t D = models_.bank.feature_width();
  policy_ = PolicyNet(D, spec.action_space, cfg_.policy, init);
  models_.target.copy_period = cfg_.copy_period;
  sync_target(policy_, models_.target);

  const auto& b = cfg_.baselines;
  const std::size_t aw = spec.action_space.encoded_width();
  if (cfg_.reward.has(IntrinsicComponent::curiosity)) {
    models_.curiosity = ForwardModel::make(D, aw, b.hidden_width, init);
    curio_opt_ = AdamState::fresh(models_.curiosity->params.size(), b.lr);
  }
  if (cfg_.reward.has(IntrinsicComponent::disagreement)) {
    for (std::size_t e = 0; e < b.ensemble_size; ++e) {
      models_.ensemble.push_back(ForwardModel::make(D, aw, b.hidden_width, init));
      ensemble_opts_.push_back(AdamState::fresh(models_.ensemble.back().params.size(), b.lr));
    }
  }
  if (cfg_.reward.has(IntrinsicComponent::rnd)) {
    std::size_t in = 0;
    for (auto w : spec.modality_widths) in += w;
    models_.rnd = RndPair::make(in, b.hidden_width, b.rnd_embed_width, init);
    rnd_opt_ = AdamState::fresh(models_.rnd->predictor.size(), b.lr);
  }
  policy_opt_ = AdamState::fresh(policy_.parameter_count(), cfg_.ppo.lr);
  align_opt_ = AdamState::fresh(models_.bank.parameter_count(), cfg_.alignment.lr);
}

PhaseMetrics Trainer::window_metrics() const {
  PhaseMetrics m;
  m.phase = phase_;
  m.step = steps_;
  const auto& eps = envs_.episodes();
  m.episodes = eps.size();
  if (!eps.empty()) {
    const std::size_t n = std::min(cfg_.metric_window, eps.size());
    const std::span<const EpisodeLog> window(eps.data() +eps.size() - n, n);
    double ret = 0.0;
    for (const auto& e : window) ret += e.extrinsic_return;
    m.episodic_reward = ret / static_cast<double>(n);
    m.interaction_rate = interaction_rate(window);
    m.success_rate = success_rate(window);
  }
  return m;
}

PhaseMetrics Trainer::initial_metrics() const { return window_metrics(); }

double Trainer::train_alignment_epoch(const RolloutBuffer& buf) {
  const std::size_t n = buf.size();
  const auto order = shuffled(n, update_rng_);
  const std::size_t mb = cfg_.alignment.minibatch;
  double total = 0.0;
  std::size_t batches = 0;
  std::vector<MultiObs> batch;
  for (std::size_t lo = 0; lo < n; lo += mb) {
    const std::size_t hi = std::min(n, lo + mb);
    if (hi - lo < 2) break;
    batch.clear();
    for (std::size_t k = lo; k < hi; ++k) batch.push_back(buf.steps[order[k]].next_obs);
    total += train_alignment(models_.bank, batch, models_.temperature, align_opt_);
    ++batches;
  }
  return batches ? total / static_cast<double>(batches) : 0.0;
}

void Trainer::train_baselines(const RolloutBuffer& buf, PhaseMetrics& m) {
  const std::size_t n = buf.size();
  const std::size_t mb = cfg_.baselines.minibatch;
  const auto& space = envs_.spec().action_space;
  const bool forward = models_.curiosity.has_value() || !models_.ensemble.empty();
  if (forward) {
    // rebuilt in the freshly trained feature space the next rollout scores in
    const std::size_t D = models_.bank.feature_width();
    const std::size_t in = D + space.encoded_width();
    const std::size_t M = models_.bank.modalities();
    Tensor inputs({n, in}, 0.0), targets({n, D}, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& tr = buf.steps[k];
      const auto z = fuse(models_.bank.encode(tr.obs), DropoutMask::full(M));
      const auto a = encode_action(space, tr.action);
      const auto zn = fuse(models_.bank.encode(tr.next_obs), DropoutMask::full(M));
      std::copy(z.begin(), z.end(), inputs.data().data() + k * in);
      std::copy(a.begin(), a.end(), inputs.data().data() + k * in + D);
      std::copy(zn.begin(), zn.end(), targets.data().data() + k * D);
    }
    const auto order = shuffled(n, update_rng_);
    double curio = 0.0, disag = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n; lo += mb) {
      const std::size_t hi = std::min(n, lo + mb);
      Tensor x({hi - lo, in}, 0.0), y({hi - lo, D}, 0.0);
      for (std::size_t k = lo; k < hi; ++k) {
        std::copy_n(inputs.data().data() + order[k] * in, in, x.data().data() + (k - lo) * in);
        std::copy_n(targets.data().data() + order[k] * D, D, y.data().data() + (k - lo) * D);
      }
      if (models_.curiosity) curio += train_forward_model(*models_.curiosity, x, y, curio_opt_);
      for (std::size_t e = 0; e < models_.ensemble.size(); ++e) {
        disag += train_forward_model(models_.ensemble[e], x, y, ensemble_opts_[e]);
      }
      ++batches;
    }
    if (models_.curiosity) m.curiosity_loss = curio / static_cast<double>(batches);
    if (!models_.ensemble.empty()) m.disagreement_loss = disag / static_cast<double>(batches);
  }
  if (models_.rnd) {
    const auto order = shuffled(n, update_rng_);
    const std::size_t in = models_.rnd->spec.input_width();
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n; lo += mb) {
      const std::size_t hi = std::min(n, lo + mb);
      Tensor x({hi - lo, in}, 0.0);
      for (std::size_t k = lo; k < hi; ++k) {
        const auto v = concat_streams(buf.steps[order[k]].next_obs);
        std::copy(v.begin(), v.end(), x.data().data() + (k - lo) * in);
      }
      total += train_rnd(*models_.rnd, x, rnd_opt_);
      ++batches;
    }
    m.rnd_loss = total / static_cast<double>(batches);
  }
}

PhaseMetrics Trainer::run_phase() {
  if (finished()) throw std::logic_error("Trainer::run_phase: step budget exhausted");
  const std::size_t V = envs_.size();
  const std::size_t remaining = cfg_.total_steps - steps_;
  const std::size_t horizon = std::min(cfg_.ppo.horizon, (remaining + V - 1) / V);
  ++phase_;
  last_ = collect_rollout(envs_, policy_, models_, horizon, cfg_.random_policy);
  steps_ += horizon * V;

  std::vector<double> rp, ra, rc, rd, rr, re, R;
  for (const auto& tr : last_.steps) {
    if (tr.r_p_ready) rp.push_back(tr.raw.r_p);
    ra.push_back(tr.raw.r_a);
    rc.push_back(tr.raw.r_curio);
    rd.push_back(tr.raw.r_disag);
    rr.push_back(tr.raw.r_rnd);
    re.push_back(tr.raw.r_ext);
    R.push_back(tr.reward);
  }

  PhaseMetrics m;
  const auto& spec = cfg_.reward;
  std::optional<double> align_loss;
  if (!cfg_.random_policy) {
    align_loss = train_alignment_epoch(last_);
    train_baselines(last_, m);
    compute_gae(last_, cfg_.ppo.discount, cfg_.ppo.gae_lambda);
    m.ppo = ppo_update(policy_, policy_opt_, last_, cfg_.ppo, update_rng_);
    if (models_.target.due()) {
      sync_target(policy_, models_.target);
      m.target_synced = true;
    }
    models_.pool.refresh(models_.bank);
  }

  const PhaseMetrics w = window_metrics();
  m.phase = w.phase;
  m.step = w.step;
  m.episodes = w.episodes;
  m.episodic_reward = w.episodic_reward;
  m.interaction_rate = w.interaction_rate;
  m.success_rate = w.success_rate;
  m.alignment_loss = align_loss;
  if (spec.has(IntrinsicComponent::semi_p)) m.r_p_mean = mean_of(rp);
  if (spec.has(IntrinsicComponent::semi_a)) m.r_a_mean = mean_of(ra);
  if (spec.has(IntrinsicComponent::curiosity)) m.r_curio_mean = mean_of(rc);
  if (spec.has(IntrinsicComponent::disagreement)) m.r_disag_mean = mean_of(rd);
  if (spec.has(IntrinsicComponent::rnd)) m.r_rnd_mean = mean_of(rr);
  m.r_ext_mean = mean_of(re);
  m.reward_mean = mean_of(R);
  return m;
}

namespace {

void put_policy(Checkpoint& c, const std::string& prefix, const PolicyNet& p) {
  const auto ts = p.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) c.add(prefix + "." + std::to_string(k), ts[k]);
}

PolicyNet get_policy(const Checkpoint& c, const std::string& prefix, const PolicyNet& shape) {
  auto ts = shape.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) ts[k] = c.get(prefix + "." + std::to_string(k));
  PolicyNet p = shape;
  p.assign(ts);
  return p;
}

std::size_t meta_size(const Checkpoint& c, const std::string& key) {
  const auto& v = c.meta(key);
  std::size_t pos = 0;
  const unsigned long long x = std::stoull(v, &pos);
  if (pos != v.size()) throw std::runtime_error("checkpoint meta '" + key + "' is not an integer");
  return static_cast<std::size_t>(x);
}

double meta_double(const Checkpoint& c, const std::string& key) {
  const auto& v = c.meta(key);
  std::size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::runtime_error("checkpoint meta '" + key + "' is not a number");
  return x;
}

std::string join_widths(const std::vector<std::size_t>& ws) {
  std::string s;
  for (std::size_t i = 0; i < ws.size(); ++i) s += (i ? "," : "") + std::to_string(ws[i]);
  return s;
}

std::vector<std::size_t> split_widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(',', start);
    out.push_back(std::stoull(s.substr(start, end - start)));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  const EnvSpec& spec = envs_.spec();
  c.set_meta("env", cfg_.env_preset);
  c.set_meta("seed", std::to_string(cfg_.seed));
  c.set_meta("steps", std::to_string(steps_));
  c.set_meta("phase", std::to_string(phase_));
  c.set_meta("modality_widths", join_widths(spec.modality_widths));
  c.set_meta("action_kind", spec.action_space.kind == ActionKind::discrete ? "discrete" : "continuous");
  c.set_meta("action_size", std::to_string(spec.action_space.size));
  c.set_meta("encoder.feature_width", std::to_string(cfg_.alignment.encoder.feature_width));
  c.set_meta("encoder.hidden_width", std::to_string(cfg_.alignment.encoder.hidden_width));
  c.set_meta("encoder.hidden_layers", std::to_string(cfg_.alignment.encoder.hidden_layers));
  c.set_meta("policy.hidden_width", std::to_string(cfg_.policy.hidden_width));
  c.set_meta("policy.hidden_layers", std::to_string(cfg_.policy.hidden_layers));
  c.set_meta("policy.activation", to_string(cfg_.policy.activation));
  c.set_meta("temperature", fmt_double(models_.temperature.temperature));
  c.set_meta("literal_denominator", models_.temperature.literal_denominator ? "true" : "false");
  c.set_meta("warmup", std::to_string(models_.warmup));
  c.set_meta("pool_capacity", std::to_string(models_.pool.pool().capacity()));
  c.set_meta("pool_size", std::to_string(models_.pool.pool().size()));
  c.set_meta("ra_timestep", to_string(models_.ra_timestep));
  c.set_meta("copy_period", std::to_string(models_.target.copy_period));
  c.set_meta("steps_since_sync", std::to_string(models_.target.steps_since_sync));

  for (std::size_t i = 0; i < models_.bank.modalities(); ++i) {
    c.add_mlp("alignment." + std::to_string(i), models_.bank.spec(i), models_.bank.params(i));
  }
  put_policy(c, "policy", policy_);
  put_policy(c, "target", models_.target.net);

  const auto& pool = models_.pool.pool();
  if (pool.size() > 0) {
    for (std::size_t m = 0; m < spec.modality_widths.size(); ++m) {
      const std::size_t w = spec.modality_widths[m];
      Tensor t({pool.size(), w}, 0.0);
      for (std::size_t r = 0; r < pool.size(); ++r) {
        const auto& s = pool.at(r).streams[m];
        std::copy(s.begin(), s.end(), t.data().data() + r * w);
      }
      c.add("pool.obs." + std::to_string(m), std::move(t));
    }
    Tensor ts({pool.size()}, 0.0);
    for (std::size_t r = 0; r < pool.size(); ++r) ts[r] = static_cast<double>(pool.at(r).timestep);
    c.add("pool.timestep", std::move(ts));
  }

  if (models_.curiosity) c.add_mlp("curiosity", models_.curiosity->spec, models_.curiosity->params);
  for (std::size_t e = 0; e < models_.ensemble.size(); ++e) {
    c.add_mlp("ensemble." + std::to_string(e), models_.ensemble[e].spec, models_.ensemble[e].params);
  }
  if (models_.rnd) {
    c.add_mlp("rnd.target", models_.rnd->spec, models_.rnd->target);
    c.add_mlp("rnd.predictor", models_.rnd->spec, models_.rnd->predictor);
  }
  return c;
}

ReplayModels replay_models_from(const Checkpoint& c) {
  ReplayModels r;
  const auto widths = split_widths(c.meta("modality_widths"));
  EncoderConfig enc;
  enc.feature_width = meta_size(c, "encoder.feature_width");
  enc.hidden_width = meta_size(c, "encoder.hidden_width");
  enc.hidden_layers = meta_size(c, "encoder.hidden_layers");
  r.bank = EncoderBank::zeros(widths, enc);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto section = "alignment." + std::to_string(i);
    r.bank.params(i) = c.get_mlp(section, r.bank.spec(i));
  }

  ActionSpace space;
  space.kind = c.meta("action_kind") == "discrete" ? ActionKind::discrete : ActionKind::continuous;
  space.size = meta_size(c, "action_size");
  PolicyConfig pc;
  pc.hidden_width = meta_size(c, "policy.hidden_width");
  pc.hidden_layers = meta_size(c, "policy.hidden_layers");
  pc.activation = activation_from_string(c.meta("policy.activation"));
  const PolicyNet shape = PolicyNet::zeros(enc.feature_width, space, pc);
  r.target.net = get_policy(c, "target", shape);
  r.target.copy_period = meta_size(c, "copy_period");
  r.target.steps_since_sync = meta_size(c, "steps_since_sync");

  r.temperature.temperature = meta_double(c, "temperature");
  r.temperature.literal_denominator = c.meta("literal_denominator") == "true";
  r.temperature.validate();
  r.warmup = meta_size(c, "warmup");
  r.ra_timestep = ra_timestep_from_string(c.meta("ra_timestep"));

  r.pool = EncodedPool(meta_size(c, "pool_capacity"));
  const std::size_t n = meta_size(c, "pool_size");
  if (n > 0) {
    const Tensor& ts = c.get("pool.timestep");
    for (std::size_t row = 0; row < n; ++row) {
      MultiObs o;
      o.timestep = static_cast<std::int64_t>(ts[row]);
      for (std::size_t m = 0; m < widths.size(); ++m) {
        const Tensor& t = c.get("pool.obs." + std::to_string(m));
        if (t.rows() != n || t.cols() != widths[m]) {
          throw std::runtime_error("checkpoint pool tensor " + std::to_string(m) + " has shape " +
                                   t.shape_string());
        }
        o.streams.emplace_back(t.data().data() + row * widths[m], t.data().data() + (row + 1) * widths[m]);
      }
      FeatureBank f = r.bank.encode(o);
      r.pool.push(std::move(o), std::move(f));
    }
  }
  return r;
}

}  // namespace semi
