#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "semi/mlp.hpp"
#include "semi/optim.hpp"

namespace semi {

// One flat vector per modality.
struct MultiObs {
  std::vector<std::vector<double>> streams;
  std::int64_t timestep = 0;

  std::size_t modalities() const { return streams.size(); }
  std::vector<std::size_t> widths() const;

  friend bool operator==(const MultiObs&, const MultiObs&) = default;
};

// Encoder outputs f_1..f_M, each of the shared feature width.
using FeatureBank = std::vector<std::vector<double>>;

struct TemperatureConfig {
  double temperature = 0.1;
  // Keep the anchor's similarity with itself in the softmax normalizer.
  bool literal_denominator = false;

  void validate() const;
};

struct EncoderConfig {
  std::size_t feature_width = 32;
  std::size_t hidden_width = 64;
  std::size_t hidden_layers = 2;
};

// Per-modality encoders f_i, no weight sharing across modalities.
class EncoderBank {
 public:
  EncoderBank() = default;
  EncoderBank(std::span<const std::size_t> input_widths, const EncoderConfig& cfg,
              std::mt19937_64& rng);
  static EncoderBank zeros(std::span<const std::size_t> input_widths, const EncoderConfig& cfg);

  std::size_t modalities() const { return specs_.size(); }
  std::size_t feature_width() const { return specs_.front().output_width(); }
  std::vector<std::size_t> input_widths() const;
  const MlpSpec& spec(std::size_t i) const { return specs_[i]; }
  const ParameterSet& params(std::size_t i) const { return params_[i]; }
  ParameterSet& params(std::size_t i) { return params_[i]; }

  std::vector<Tensor> tensors() const;
  void assign(std::span<const Tensor> tensors);
  std::size_t parameter_count() const;

  FeatureBank encode(const MultiObs& obs) const;
  // batch encode: one [N x D] matrix per modality
  std::vector<Tensor> encode_batch(std::span<const MultiObs> batch) const;

  friend bool operator==(const EncoderBank&, const EncoderBank&) = default;

 private:
  void check(const MultiObs& obs) const;

  std::vector<MlpSpec> specs_;
  std::vector<ParameterSet> params_;
};

// FIFO ring of past observations supplying reward-side negatives.
class NegativePool {
 public:
  explicit NegativePool(std::size_t capacity = 256);

  void push(MultiObs obs);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool ready(std::size_t warmup) const { return entries_.size() >= warmup; }
  // oldest first
  const MultiObs& at(std::size_t i) const { return entries_[i]; }
  const std::deque<MultiObs>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<MultiObs> entries_;
};

// A NegativePool with features cached for a frozen encoder bank.
class EncodedPool {
 public:
  explicit EncodedPool(std::size_t capacity = 256) : pool_(capacity) {}

  void push(MultiObs obs, FeatureBank features);
  void refresh(const EncoderBank& bank);
  const NegativePool& pool() const { return pool_; }
  const std::deque<FeatureBank>& features() const { return features_; }

 private:
  NegativePool pool_;
  std::deque<FeatureBank> features_;
};

double cosine_sim(std::span<const double> a, std::span<const double> b);

// -log softmax score of the positive against the positive plus negatives.
double contrastive_loss(std::span<const double> anchor, std::span<const double> positive,
                        std::span<const std::vector<double>> negatives,
                        const TemperatureConfig& cfg);

// Sum over modality pairs i<j of the contrastive loss with anchor f_i and
// positive f_j; negatives are every stream of every pool entry. Returns
// nullopt while the pool holds fewer than `warmup` entries.
std::optional<double> perceptual_incongruity(const EncoderBank& bank, const MultiObs& obs,
                                             const NegativePool& pool,
                                             const TemperatureConfig& cfg, std::size_t warmup);
std::optional<double> perceptual_incongruity(const FeatureBank& features,
                                             const std::deque<FeatureBank>& pool_features,
                                             const TemperatureConfig& cfg, std::size_t warmup);

// Mean in-batch contrastive loss over every observation and modality pair,
// as a function of the bank's tensors (in EncoderBank::tensors() order).
LossFn alignment_loss(const EncoderBank& bank, std::span<const MultiObs> batch,
                      const TemperatureConfig& cfg);

// One Adam step on alignment_loss; returns the pre-step loss.
double train_alignment(EncoderBank& bank, std::span<const MultiObs> batch,
                       const TemperatureConfig& cfg, AdamState& opt);

}  // namespace semi
