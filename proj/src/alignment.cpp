#include "semi/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace semi {

namespace {

constexpr double kNormFloor = 1e-12;

double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const auto half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

MlpSpec encoder_spec(std::size_t in, const EncoderConfig& cfg) {
  MlpSpec spec;
  spec.widths.push_back(in);
  for (std::size_t i = 0; i < cfg.hidden_layers; ++i) spec.widths.push_back(cfg.hidden_width);
  spec.widths.push_back(cfg.feature_width);
  spec.activation = Activation::relu;
  spec.validate();
  return spec;
}

}  // namespace

std::vector<std::size_t> MultiObs::widths() const {
  std::vector<std::size_t> w;
  for (const auto& s : streams) w.push_back(s.size());
  return w;
}

void TemperatureConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature must be positive, got " + std::to_string(temperature));
  }
}

EncoderBank::EncoderBank(std::span<const std::size_t> input_widths, const EncoderConfig& cfg,
                         std::mt19937_64& rng) {
  for (auto w : input_widths) {
    specs_.push_back(encoder_spec(w, cfg));
    params_.push_back(ParameterSet::glorot(specs_.back(), rng));
  }
}

EncoderBank EncoderBank::zeros(std::span<const std::size_t> input_widths, const EncoderConfig& cfg) {
  EncoderBank bank;
  for (auto w : input_widths) {
    bank.specs_.push_back(encoder_spec(w, cfg));
    bank.params_.push_back(ParameterSet::zeros(bank.specs_.back()));
  }
  return bank;
}

std::vector<std::size_t> EncoderBank::input_widths() const {
  std::vector<std::size_t> w;
  for (const auto& s : specs_) w.push_back(s.input_width());
  return w;
}

std::vector<Tensor> EncoderBank::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) {
    auto ts = p.tensors();
    out.insert(out.end(), std::make_move_iterator(ts.begin()), std::make_move_iterator(ts.end()));
  }
  return out;
}

void EncoderBank::assign(std::span<const Tensor> tensors) {
  std::size_t offset = 0;
  for (auto& p : params_) {
    const std::size_t n = p.layers().size() * 2;
    if (offset + n > tensors.size()) throw std::invalid_argument("EncoderBank::assign: too few tensors");
    p.assign(tensors.subspan(offset, n));
    offset += n;
  }
  if (offset != tensors.size()) throw std::invalid_argument("EncoderBank::assign: too many tensors");
}

std::size_t EncoderBank::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void EncoderBank::check(const MultiObs& obs) const {
  if (obs.modalities() != modalities()) {
    throw std::invalid_argument("observation has " + std::to_string(obs.modalities()) +
                                " modalities, encoder bank expects " +
                                std::to_string(modalities()));
  }
  for (std::size_t i = 0; i < modalities(); ++i) {
    if (obs.streams[i].size() != specs_[i].input_width()) {
      throw std::invalid_argument("modality " + std::to_string(i) + " has width " +
                                  std::to_string(obs.streams[i].size()) + ", encoder expects " +
                                  std::to_string(specs_[i].input_width()));
    }
  }
}

FeatureBank EncoderBank::encode(const MultiObs& obs) const {
  check(obs);
  FeatureBank out;
  out.reserve(modalities());
  for (std::size_t i = 0; i < modalities(); ++i) {
    out.push_back(mlp_forward(params_[i], specs_[i], obs.streams[i]));
  }
  return out;
}

std::vector<Tensor> EncoderBank::encode_batch(std::span<const MultiObs> batch) const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < modalities(); ++i) {
    std::vector<double> x;
    x.reserve(batch.size() * specs_[i].input_width());
    for (const auto& obs : batch) {
      check(obs);
      x.insert(x.end(), obs.streams[i].begin(), obs.streams[i].end());
    }
    out.push_back(mlp_forward(params_[i], specs_[i],
                              Tensor({batch.size(), specs_[i].input_width()}, std::move(x))));
  }
  return out;
}

NegativePool::NegativePool(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("negative pool capacity must be positive");
}

void NegativePool::push(MultiObs obs) {
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back(std::move(obs));
}

void EncodedPool::push(MultiObs obs, FeatureBank features) {
  if (features_.size() == pool_.capacity()) features_.pop_front();
  features_.push_back(std::move(features));
  pool_.push(std::move(obs));
}

void EncodedPool::refresh(const EncoderBank& bank) {
  for (std::size_t i = 0; i < pool_.size(); ++i) features_[i] = bank.encode(pool_.at(i));
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_sim: widths differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kNormFloor || nb < kNormFloor) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

double contrastive_loss(std::span<const double> anchor, std::span<const double> positive,
                        std::span<const std::vector<double>> negatives,
                        const TemperatureConfig& cfg) {
  cfg.validate();
  if (negatives.empty()) throw std::invalid_argument("contrastive_loss: empty negative set");
  std::vector<double> logits;
  logits.reserve(negatives.size() + 2);
  const double pos = cosine_sim(anchor, positive) / cfg.temperature;
  logits.push_back(pos);
  for (const auto& n : negatives) logits.push_back(cosine_sim(anchor, n) / cfg.temperature);
  if (cfg.literal_denominator) logits.push_back(cosine_sim(anchor, anchor) / cfg.temperature);
  const double mx = *std::max_element(logits.begin(), logits.end());
  for (auto& l : logits) l = std::exp(l - mx);
  const double lse = mx + std::log(pairwise_sum(logits));
  return lse - pos;
}

std::optional<double> perceptual_incongruity(const FeatureBank& features,
                                             const std::deque<FeatureBank>& pool_features,
                                             const TemperatureConfig& cfg, std::size_t warmup) {
  if (pool_features.size() < std::max<std::size_t>(warmup, 1)) return std::nullopt;
  std::vector<std::vector<double>> negatives;
  std::size_t m = features.size();
  negatives.reserve(pool_features.size() * m);
  for (const auto& entry : pool_features) {
    if (entry.size() != m) throw std::invalid_argument("pool entry modality count mismatch");
    for (const auto& f : entry) negatives.push_back(f);
  }
  std::vector<double> terms;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      terms.push_back(contrastive_loss(features[i], features[j], negatives, cfg));
  return pairwise_sum(terms);
}

std::optional<double> perceptual_incongruity(const EncoderBank& bank, const MultiObs& obs,
                                             const NegativePool& pool,
                                             const TemperatureConfig& cfg, std::size_t warmup) {
  if (pool.size() < std::max<std::size_t>(warmup, 1)) return std::nullopt;
  std::deque<FeatureBank> pool_features;
  for (const auto& e : pool.entries()) pool_features.push_back(bank.encode(e));
  return perceptual_incongruity(bank.encode(obs), pool_features, cfg, warmup);
}

LossFn alignment_loss(const EncoderBank& bank, std::span<const MultiObs> batch,
                      const TemperatureConfig& cfg) {
  cfg.validate();
  const std::size_t n = batch.size();
  const std::size_t m = bank.modalities();
  if (n < 2) throw std::invalid_argument("alignment loss needs at least 2 observations per batch");
  if (m < 2) throw std::invalid_argument("alignment loss needs at least 2 modalities");
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> x;
    x.reserve(n * bank.spec(i).input_width());
    for (const auto& obs : batch) {
      if (obs.modalities() != m || obs.streams[i].size() != bank.spec(i).input_width()) {
        throw std::invalid_argument("alignment batch observation does not match encoder widths");
      }
      x.insert(x.end(), obs.streams[i].begin(), obs.streams[i].end());
    }
    inputs.push_back(Tensor({n, bank.spec(i).input_width()}, std::move(x)));
  }
  // stacked row index of stream (k, i) is i * n + k
  const std::size_t rows = n * m;
  std::vector<std::uint8_t> exclude;
  if (!cfg.literal_denominator) {
    exclude.assign(rows * rows, 0);
    for (std::size_t r = 0; r < rows; ++r) exclude[r * rows + r] = 1;
  }
  std::vector<std::size_t> picks;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) picks.push_back((i * n + k) * rows + (j * n + k));

  std::vector<MlpSpec> specs;
  std::vector<std::size_t> layer_counts;
  for (std::size_t i = 0; i < m; ++i) {
    specs.push_back(bank.spec(i));
    layer_counts.push_back(bank.params(i).layers().size() * 2);
  }
  const double inv_t = 1.0 / cfg.temperature;
  return [inputs = std::move(inputs), exclude = std::move(exclude), picks = std::move(picks),
          specs = std::move(specs), layer_counts = std::move(layer_counts),
          inv_t](Graph& g, std::span<const Var> leaves) {
    std::vector<Var> feats;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      auto vars = bind_mlp(leaves.subspan(offset, layer_counts[i]));
      offset += layer_counts[i];
      feats.push_back(mlp_apply(g, vars, specs[i], g.constant(inputs[i])));
    }
    Var stacked = g.concat_rows(feats);
    Var logits = g.scale(g.cosine(stacked, stacked), inv_t);
    Var logp = g.log_softmax_rows(logits, exclude);
    return g.scale(g.mean(g.gather(logp, picks)), -1.0);
  };
}

double train_alignment(EncoderBank& bank, std::span<const MultiObs> batch,
                       const TemperatureConfig& cfg, AdamState& opt) {
  const auto loss = alignment_loss(bank, batch, cfg);
  auto params = bank.tensors();
  const auto vg = value_and_grad(loss, params);
  adam_step(params, vg.grad, opt);
  bank.assign(params);
  return vg.value;
}

}  // namespace semi
