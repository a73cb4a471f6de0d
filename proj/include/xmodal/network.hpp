#ifndef XMODAL_NETWORK_HPP_
#define XMODAL_NETWORK_HPP_

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "xmodal/ops.hpp"
#include "xmodal/optim.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Modality : std::uint8_t { kRgb = 0, kIr = 1 };

std::string_view modality_name(Modality m);
// Accepts "rgb" / "ir"; throws ConfigError otherwise.
Modality parse_modality(std::string_view name);

/// Structure of the two-stream network. Level 1 features live at the
/// spatial size of the modality-specific output F; level 2 is downsampled
/// by `level2_stride`.
struct MTMFEConfig {
  std::size_t image_channels = 3;
  std::size_t image_height = 24;
  std::size_t image_width = 12;
  // Three conv->ReLU stages per modality.
  std::array<std::size_t, 3> backbone_channels{8, 16, 16};
  std::array<std::size_t, 3> backbone_strides{1, 2, 1};
  std::size_t appearance1_channels = 16;
  std::size_t appearance2_channels = 16;
  std::size_t depth = 4;            // channels per PT3D group
  std::size_t relation_groups = 2;  // output groups of every 3D block
  std::size_t level2_stride = 2;
  std::size_t num_parts = 6;
  std::size_t num_identities = 20;
  std::size_t embed_dim = 16;
  // Start the IR stem from a copy of the RGB stem's initial draw instead of
  // an independent one; the stems still train separately.
  bool tied_stem_init = false;

  // Ablation structure. relation_only drops the appearance stream and feeds
  // the part heads with projected relation features alone.
  bool use_relation = true;
  bool relation_only = false;
  bool use_multi_level = true;

  void validate() const;

  Shape image_shape() const { return {image_channels, image_height, image_width}; }
  // [C,H,W] of the modality-specific output F.
  Shape specific_shape() const;
  Shape level_spatial(int level) const;  // {H,W} of level 1 or 2
  std::size_t relation_channels() const { return relation_groups * depth; }
  std::size_t shared_channels(int level) const;
  // Levels that feed part heads, in order.
  std::vector<int> active_levels() const;
};

struct ConvParams {
  Tensor weight;
  Tensor bias;
};

// Two stacked 3x3x3 convolutions, ReLU after each.
struct Relation3dBlock {
  ConvParams first;
  ConvParams second;
};

struct LinearParams {
  Tensor weight;
  Tensor bias;
};

struct PartHead {
  LinearParams embed;     // GAP(band) -> embedding
  LinearParams classify;  // embedding -> identity logits
};

/// All learnable tensors. Unused blocks (per the ablation switches) stay
/// undefined and are not listed by named().
struct NetworkParams {
  std::array<std::vector<ConvParams>, 2> specific;  // indexed by Modality
  ConvParams appearance1;
  ConvParams appearance2;
  Relation3dBlock relation_specific;  // over PT3D(F)
  Relation3dBlock relation_shared;    // over PT3D(F_a1)
  Relation3dBlock relation_level2;    // over F_I1
  std::vector<PartHead> heads;        // [level_slot * num_parts + part]

  // Weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases zero.
  static NetworkParams initialize(const MTMFEConfig& config,
                                  std::uint64_t seed);

  std::vector<NamedParameter> named() const;
};

/// Per-batch outputs. Tensors carry a leading batch axis.
struct FeatureBundle {
  Tensor specific;            // F
  Tensor appearance1;         // F_a1
  Tensor appearance2;         // F_a2
  Tensor relation1_specific;  // F_I11
  Tensor relation1_shared;    // F_I12
  Tensor relation1;           // F_I1
  Tensor relation2;           // F_I2
  Tensor shared1;             // F_s1
  Tensor shared2;             // F_s2
  std::vector<int> levels;
  std::size_t num_parts = 0;
  std::vector<Tensor> parts;   // [level_slot * num_parts + k], each [B,E]
  std::vector<Tensor> logits;  // same indexing, each [B,N_id]

  const Tensor& part(std::size_t level_slot, std::size_t k) const {
    return parts.at(level_slot * num_parts + k);
  }
};

/// [C,H,W] -> [C/D,D,H,W] (or batched [B,C,H,W] -> [B,C/D,D,H,W]);
/// channel c lands at group c / D, depth c % D.
Tensor pt3d(const Tensor& x, std::size_t depth);
/// Inverse of pt3d: [G,D,H,W] -> [G*D,H,W] (or the batched form).
Tensor pt2d(const Tensor& y);

/// Row bands [begin, end) covering `height`; the first height % parts bands
/// take one extra row.
std::vector<std::pair<std::size_t, std::size_t>> part_bands(
    std::size_t height, std::size_t num_parts);

Tensor forward_specific(const Tensor& images, Modality modality,
                        const NetworkParams& params,
                        const MTMFEConfig& config);

struct PartOutputs {
  std::vector<Tensor> parts;
  std::vector<Tensor> logits;
};

PartOutputs part_heads(const Tensor& shared1, const Tensor& shared2,
                       const NetworkParams& params, const MTMFEConfig& config);

/// Shared stream from F through the part heads.
FeatureBundle forward_shared(const Tensor& specific,
                             const NetworkParams& params,
                             const MTMFEConfig& config);

class Network {
 public:
  Network(MTMFEConfig config, std::uint64_t seed);
  Network(MTMFEConfig config, NetworkParams params);

  const MTMFEConfig& config() const { return config_; }
  NetworkParams& params() { return params_; }
  const NetworkParams& params() const { return params_; }

  /// Runs both stems and the shared stream; batch rows are the RGB images
  /// followed by the IR images. Either input may be undefined.
  FeatureBundle forward(const Tensor& rgb_images, const Tensor& ir_images) const;

  /// Inference descriptor: every part embedding l2-normalized, concatenated.
  /// images [B,C,H,W] -> [B, levels * parts * embed_dim]. No graph recorded.
  Tensor descriptors(const Tensor& images, Modality modality) const;

  std::size_t descriptor_dim() const;

 private:
  MTMFEConfig config_;
  NetworkParams params_;
};

}  // namespace xmodal

#endif  // XMODAL_NETWORK_HPP_
