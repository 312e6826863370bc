#pragma once

#include <memory>
#include <string>
#include <vector>

#include "macow/config.hpp"
#include "macow/flow_layers.hpp"
#include "macow/masked_conv.hpp"

namespace macow {

/// One entry of the layer plan the builders emit.
struct PlanEntry {
  enum class Op { kSqueeze, kStep, kSplit };
  Op op;
  std::size_t level;
  std::size_t height;    // spatial extent at this point
  std::size_t width;
  std::size_t channels;  // channels entering the entry
  std::size_t emitted;   // split only

  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

/// Original layout: every level is one block followed by a half split (none
/// after the last level).
std::vector<PlanEntry> build_original_plan(const ModelConfig& cfg);

/// Fine-grained layout with factor m: each block is followed by a split of 1/m
/// of the level's channels, except the last block of the last level.
std::vector<PlanEntry> build_fine_grained_plan(const ModelConfig& cfg, std::size_t m);

std::vector<PlanEntry> build_plan(const ModelConfig& cfg);

/// Latents in emission order: one per split, then the final one.
template <typename T>
struct LatentBundle {
  std::vector<Tensor<T>> z;
  std::size_t dims_per_item() const;
};

template <typename T>
struct LayerTrace {
  std::string name;
  LayerKind kind;
  Tensor<T> logdet;  // [n,1,1,1]
};

template <typename T>
struct EncodeResult {
  std::vector<ad::Var<T>> z;
  ad::Var<T> logdet;          // [n,1,1,1]
  ad::Var<T> latent_log_prob;  // split priors plus final prior, [n,1,1,1]
};

/// Multi-scale flow assembled from a ModelConfig.
///
/// encode/decode operate in the flow's own coordinates. log_prob and sample
/// work on data in [0, 2^n_bits) and apply the fixed map v = y / 2^n_bits - 0.5
/// (and its log-Jacobian) around the flow.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, Rng& init_rng);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<PlanEntry>& plan() const { return plan_; }

  EncodeResult<T> encode(ad::Tape<T>& tape, const ad::Var<T>& x, std::vector<LayerTrace<T>>* trace = nullptr);
  /// Convenience: encode without gradients.
  std::pair<LatentBundle<T>, Tensor<T>> encode(const Tensor<T>& x);
  Tensor<T> decode(const LatentBundle<T>& zs) const;

  /// log p(y) in nats per item for y in data coordinates.
  ad::Var<T> log_prob(ad::Tape<T>& tape, const ad::Var<T>& y);
  Tensor<T> log_prob(const Tensor<T>& y);

  /// Draws every latent with its standard deviation scaled by temperature and
  /// decodes; result in data coordinates.
  Tensor<T> sample(std::size_t n, double temperature, Rng& rng) const;

  std::vector<NamedParameter<T>> parameters();
  std::vector<NamedFlag> flags();
  std::size_t parameter_count();
  void randomize(Rng& rng, double scale);

  /// Leaf layers in forward order with their full names.
  std::size_t leaf_count() const { return leaves_.size(); }
  FlowLayer<T>& leaf(std::size_t i) { return *leaves_[i].layer; }
  const std::string& leaf_name(std::size_t i) const { return leaves_[i].name; }

  Shape input_shape(std::size_t n) const { return Shape{n, cfg_.height, cfg_.width, cfg_.channels}; }
  /// Offset applied by log_prob for the fixed data map, per item.
  double data_log_jacobian() const;
  /// Data -> flow coordinates and back.
  Tensor<T> to_flow(const Tensor<T>& y) const;
  Tensor<T> from_flow(const Tensor<T>& v) const;

 private:
  struct Leaf {
    std::string name;
    FlowLayer<T>* layer = nullptr;
  };
  struct Stage {
    std::string name;
    std::unique_ptr<FlowLayer<T>> layer;  // null for a split
    std::unique_ptr<SplitPrior<T>> split;
    std::size_t leaf_begin = 0;  // [leaf_begin, leaf_end) in leaves_
    std::size_t leaf_end = 0;
  };

  void add_leaves(FlowLayer<T>& layer, const std::string& prefix);

  ModelConfig cfg_;
  std::vector<PlanEntry> plan_;
  std::vector<Stage> stages_;
  std::vector<Leaf> leaves_;
  std::unique_ptr<GaussianPrior<T>> prior_;
  Shape final_shape_;  // n = 1
};

/// Builds one step: T units of ActNorm + two masked flows, then ActNorm, 1x1
/// convolution and coupling.
template <typename T>
std::unique_ptr<Sequential<T>> make_step(std::size_t channels, const ModelConfig& cfg, Rng& rng);

}  // namespace macow
