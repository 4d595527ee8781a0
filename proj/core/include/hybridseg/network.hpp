#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "hybridseg/layers.hpp"
#include "hybridseg/plane.hpp"

namespace hybridseg {

struct NetConfig {
  /// Encoder stage widths; stage l (0-based) runs at 1/2^(l+1) of the input resolution.
  std::vector<int> stage_widths{16, 32, 64, 128};
  bool ablate_fd = false;
  bool ablate_spm = false;
  /// false builds the single encoder-decoder used by the baselines (no background branch).
  bool aux_branch = true;
  /// Disentangle and prompt only the deepest stage instead of every skip level.
  bool bottleneck_only = false;
  /// Stop gradients from the segmentation loss reaching the background decoder through the prompt.
  bool detach_uncertainty = false;
  std::uint64_t init_seed = 0;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const NetConfig& cfg);

/// Width configuration matching a 34-layer residual encoder.
NetConfig full_scale_net_config();

template <typename T>
struct ParameterSet {
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<T> values;
  };
  std::vector<Entry> entries;

  std::size_t add(std::string name, std::vector<int> shape);
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t scalar_count() const;
};

template <typename T>
using Gradients = std::vector<std::vector<T>>;

struct ModelOutput {
  RealMap seg_logits;
  /// Empty for single-decoder networks.
  RealMap bg_logits;
  /// 1 - sigmoid(bg_logits); empty for single-decoder networks.
  RealMap uncertainty;

  bool has_aux() const { return !bg_logits.empty(); }
};

template <typename T>
using Stages = std::vector<Tensor<T>>;

template <typename T>
struct DisentangledFeatures {
  Stages<T> lesion_related;
  Stages<T> other;
};

template <typename T>
struct EncoderCache {
  struct Stage {
    ConvCache<T> down, res1, res2;
    Tensor<T> a, r1, y;
  };
  std::vector<Stage> stages;
};

template <typename T>
struct DecoderCache {
  struct Level {
    ConvCache<T> conv_a, conv_b;
    Tensor<T> a, b;
    int upsampled_channels = 0;
  };
  std::vector<Level> levels;
  ConvCache<T> head, out;
  Tensor<T> head_out;
};

template <typename T>
struct ForwardCache {
  EncoderCache<T> encoder;
  std::vector<ConvCache<T>> proj_lesion, proj_other;
  Stages<T> lesion_related;
  Stages<T> resized_uncertainty;
  DecoderCache<T> background, segmentation;
  Tensor<T> uncertainty;
  int height = 0;
  int width = 0;
};

/// Shared encoder, feature disentanglement, background decoder, spatial prompting and
/// segmentation decoder. Forward passes are const and may run concurrently.
template <typename T>
class Network {
 public:
  explicit Network(NetConfig cfg);

  const NetConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  Gradients<T> zero_gradients() const;

  int depth() const { return static_cast<int>(cfg_.stage_widths.size()); }
  /// Whether stage l is split into lesion-related / other streams.
  bool disentangles_stage(int l) const;
  /// Whether stage l of the lesion-related stream is gated by the uncertainty map.
  bool prompts_stage(int l) const;

  Stages<T> encode(const Tensor<T>& image, EncoderCache<T>* cache = nullptr) const;
  DisentangledFeatures<T> disentangle(const Stages<T>& feats, ForwardCache<T>* cache = nullptr) const;
  Tensor<T> decode_background(const Stages<T>& other, DecoderCache<T>* cache = nullptr) const;
  Tensor<T> decode_segmentation(const Stages<T>& lesion, DecoderCache<T>* cache = nullptr) const;
  static Tensor<T> uncertainty_from_background(const Tensor<T>& bg_logits);
  Stages<T> prompt(const Stages<T>& lesion, const Tensor<T>& uncertainty, Stages<T>* resized = nullptr) const;

  ModelOutput forward(const GrayImage& image) const;
  ModelOutput forward(const GrayImage& image, ForwardCache<T>& cache) const;

  /// Accumulates parameter gradients of a scalar loss given its gradients w.r.t. the output logits.
  /// bg_grad may be null (no loss on the background branch).
  void backward(const ForwardCache<T>& cache, const RealMap& seg_grad, const RealMap* bg_grad,
                Gradients<T>& grads) const;

 private:
  struct Layer {
    ConvShape shape;
    std::size_t weight = 0;
    std::size_t bias = 0;
  };
  struct EncoderStage {
    Layer down, res1, res2;
  };
  struct Decoder {
    std::vector<std::pair<Layer, Layer>> levels;  // indexed by skip stage
    Layer head, out;
  };

  Layer make_layer(const std::string& name, ConvShape shape, double init_std, std::mt19937_64& rng);
  Decoder make_decoder(const std::string& name, std::mt19937_64& rng);

  Tensor<T> run(const Layer& layer, const Tensor<T>& x, ConvCache<T>* cache) const;
  Tensor<T> back(const Layer& layer, const ConvCache<T>& cache, const Tensor<T>& grad, Gradients<T>& grads,
                 bool need_input_grad = true) const;
  Tensor<T> decode(const Decoder& dec, const Stages<T>& stages, DecoderCache<T>* cache) const;
  Stages<T> decode_backward(const Decoder& dec, const DecoderCache<T>& cache, const Tensor<T>& grad,
                            Gradients<T>& grads) const;
  void encode_backward(const EncoderCache<T>& cache, Stages<T> grads_in, Gradients<T>& grads) const;

  NetConfig cfg_;
  ParameterSet<T> params_;
  std::vector<EncoderStage> encoder_;
  std::vector<Layer> proj_lesion_, proj_other_;
  Decoder dec_bg_, dec_seg_;
};

template <typename T>
Tensor<T> to_tensor(const GrayImage& image);
template <typename T>
RealMap to_real_map(const Tensor<T>& t);

}  // namespace hybridseg
