#include "xmodal/network.hpp"

#include <cmath>
#include <random>
#include <string>

namespace xmodal {

std::string_view modality_name(Modality m) {
  return m == Modality::kRgb ? "rgb" : "ir";
}

Modality parse_modality(std::string_view name) {
  if (name == "rgb" || name == "RGB") return Modality::kRgb;
  if (name == "ir" || name == "IR") return Modality::kIr;
  throw ConfigError("unknown modality '" + std::string(name) + "'");
}

namespace {

std::size_t conv_out(std::size_t extent, std::size_t stride) {
  // 3x3 kernel, padding 1.
  return (extent - 1) / stride + 1;
}

}  // namespace

Shape MTMFEConfig::specific_shape() const {
  std::size_t h = image_height, w = image_width;
  for (std::size_t s : backbone_strides) {
    h = conv_out(h, s);
    w = conv_out(w, s);
  }
  return {backbone_channels[2], h, w};
}

Shape MTMFEConfig::level_spatial(int level) const {
  Shape f = specific_shape();
  if (level == 1) return {f[1], f[2]};
  return {conv_out(f[1], level2_stride), conv_out(f[2], level2_stride)};
}

std::size_t MTMFEConfig::shared_channels(int level) const {
  const std::size_t appearance =
      level == 1 ? appearance1_channels : appearance2_channels;
  if (!use_relation) return appearance;
  if (relation_only) return relation_channels();
  return appearance + relation_channels();
}

std::vector<int> MTMFEConfig::active_levels() const {
  if (use_multi_level) return {1, 2};
  return {2};
}

void MTMFEConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(image_channels > 0 && image_height > 0 && image_width > 0,
          "image shape must be positive");
  for (std::size_t i = 0; i < 3; ++i) {
    require(backbone_channels[i] > 0, "backbone channels must be positive");
    require(backbone_strides[i] > 0, "backbone strides must be positive");
  }
  require(appearance1_channels > 0 && appearance2_channels > 0,
          "appearance channels must be positive");
  require(level2_stride > 0, "level2_stride must be positive");
  require(num_parts > 0, "num_parts must be positive");
  require(num_identities >= 2, "num_identities must be >= 2");
  require(embed_dim > 0, "embed_dim must be positive");
  require(!relation_only || use_relation, "relation_only requires use_relation");
  if (use_relation) {
    require(depth > 0 && relation_groups > 0, "depth and relation_groups must be positive");
    require(backbone_channels[2] % depth == 0,
            "channel count of F (" + std::to_string(backbone_channels[2]) +
                ") not divisible by depth " + std::to_string(depth));
    if (!relation_only) {
      require(appearance1_channels % depth == 0,
              "channel count of F_a1 (" + std::to_string(appearance1_channels) +
                  ") not divisible by depth " + std::to_string(depth));
    }
  }
  for (int level : active_levels()) {
    Shape hw = level_spatial(level);
    require(hw[0] >= num_parts,
            "level " + std::to_string(level) + " height " +
                std::to_string(hw[0]) + " is smaller than num_parts " +
                std::to_string(num_parts));
  }
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

ConvParams make_conv(Shape weight_shape, std::mt19937_64& rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < weight_shape.size(); ++i) fan_in *= weight_shape[i];
  const std::size_t out = weight_shape[0];
  ConvParams p;
  p.weight = uniform_tensor(std::move(weight_shape),
                            std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
  p.bias = Tensor::zeros({out}, true);
  return p;
}

LinearParams make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  ConvParams c = make_conv({out, in}, rng);
  return {c.weight, c.bias};
}

Relation3dBlock make_block(std::size_t in_groups, std::size_t out_groups,
                           std::mt19937_64& rng) {
  return {make_conv({out_groups, in_groups, 3, 3, 3}, rng),
          make_conv({out_groups, out_groups, 3, 3, 3}, rng)};
}

Tensor conv_relu(const Tensor& x, const ConvParams& p, std::size_t stride) {
  return relu(conv2d(x, p.weight, p.bias, stride, 1));
}

Tensor relation_block(const Tensor& x, const Relation3dBlock& block,
                      Triple first_stride) {
  Tensor h = relu(conv3d(x, block.first.weight, block.first.bias, first_stride,
                         {1, 1, 1}));
  return relu(conv3d(h, block.second.weight, block.second.bias, {1, 1, 1},
                     {1, 1, 1}));
}

void push_conv(std::vector<NamedParameter>& out, const std::string& prefix,
               ParamGroup group, const ConvParams& p) {
  if (!p.weight.defined()) return;
  out.push_back({prefix + ".weight", group, p.weight});
  out.push_back({prefix + ".bias", group, p.bias});
}

}  // namespace

NetworkParams NetworkParams::initialize(const MTMFEConfig& config,
                                        std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  NetworkParams p;
  for (auto& stream : p.specific) {
    std::size_t in = config.image_channels;
    for (std::size_t s = 0; s < 3; ++s) {
      stream.push_back(make_conv({config.backbone_channels[s], in, 3, 3}, rng));
      in = config.backbone_channels[s];
    }
  }
  if (config.tied_stem_init) {
    // Both stems start from one draw, the way two branches cloned from a
    // single pretrained backbone would.
    for (std::size_t s = 0; s < 3; ++s) {
      p.specific[1][s] = {p.specific[0][s].weight.clone(), p.specific[0][s].bias.clone()};
    }
  }
  const std::size_t c_f = config.backbone_channels[2];
  if (!config.relation_only) {
    p.appearance1 = make_conv({config.appearance1_channels, c_f, 3, 3}, rng);
    p.appearance2 = make_conv(
        {config.appearance2_channels, config.appearance1_channels, 3, 3}, rng);
  }
  if (config.use_relation) {
    const std::size_t g = config.relation_groups;
    p.relation_specific = make_block(c_f / config.depth, g, rng);
    if (!config.relation_only) {
      p.relation_shared =
          make_block(config.appearance1_channels / config.depth, g, rng);
    }
    p.relation_level2 = make_block(g, g, rng);
  }
  for (int level : config.active_levels()) {
    const std::size_t channels = config.shared_channels(level);
    for (std::size_t k = 0; k < config.num_parts; ++k) {
      PartHead head;
      head.embed = make_linear(channels, config.embed_dim, rng);
      head.classify = make_linear(config.embed_dim, config.num_identities, rng);
      p.heads.push_back(std::move(head));
    }
  }
  return p;
}

std::vector<NamedParameter> NetworkParams::named() const {
  std::vector<NamedParameter> out;
  for (std::size_t m = 0; m < 2; ++m) {
    const std::string stem = m == 0 ? "rgb" : "ir";
    for (std::size_t s = 0; s < specific[m].size(); ++s) {
      push_conv(out, stem + ".stage" + std::to_string(s),
                ParamGroup::kModalitySpecific, specific[m][s]);
    }
  }
  push_conv(out, "shared.appearance1", ParamGroup::kShared, appearance1);
  push_conv(out, "shared.appearance2", ParamGroup::kShared, appearance2);
  const std::pair<const char*, const Relation3dBlock*> blocks[] = {
      {"shared.relation_specific", &relation_specific},
      {"shared.relation_shared", &relation_shared},
      {"shared.relation_level2", &relation_level2}};
  for (const auto& [name, block] : blocks) {
    push_conv(out, std::string(name) + ".conv0", ParamGroup::kShared, block->first);
    push_conv(out, std::string(name) + ".conv1", ParamGroup::kShared, block->second);
  }
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const std::string prefix = "head" + std::to_string(i);
    push_conv(out, prefix + ".embed", ParamGroup::kShared,
              {heads[i].embed.weight, heads[i].embed.bias});
    push_conv(out, prefix + ".classify", ParamGroup::kShared,
              {heads[i].classify.weight, heads[i].classify.bias});
  }
  return out;
}

Tensor pt3d(const Tensor& x, std::size_t depth) {
  const Shape& s = x.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw ShapeError("pt3d: expected [C,H,W] or [B,C,H,W], got " + shape_str(s));
  }
  const std::size_t c_axis = s.size() - 3;
  const std::size_t c = s[c_axis];
  if (depth == 0 || c % depth != 0) {
    throw ConfigError("pt3d: channel count " + std::to_string(c) +
                      " not divisible by depth " + std::to_string(depth));
  }
  Shape out(s.begin(), s.begin() + c_axis);
  out.push_back(c / depth);
  out.push_back(depth);
  out.insert(out.end(), s.end() - 2, s.end());
  return reshape(x, std::move(out));
}

Tensor pt2d(const Tensor& y) {
  const Shape& s = y.shape();
  if (s.size() != 4 && s.size() != 5) {
    throw ShapeError("pt2d: expected [G,D,H,W] or [B,G,D,H,W], got " + shape_str(s));
  }
  const std::size_t g_axis = s.size() - 4;
  Shape out(s.begin(), s.begin() + g_axis);
  out.push_back(s[g_axis] * s[g_axis + 1]);
  out.insert(out.end(), s.end() - 2, s.end());
  return reshape(y, std::move(out));
}

std::vector<std::pair<std::size_t, std::size_t>> part_bands(
    std::size_t height, std::size_t num_parts) {
  if (num_parts == 0 || height < num_parts) {
    throw ConfigError("cannot split height " + std::to_string(height) +
                      " into " + std::to_string(num_parts) + " parts");
  }
  std::vector<std::pair<std::size_t, std::size_t>> bands;
  const std::size_t base = height / num_parts;
  const std::size_t extra = height % num_parts;
  std::size_t row = 0;
  for (std::size_t k = 0; k < num_parts; ++k) {
    const std::size_t rows = base + (k < extra ? 1 : 0);
    bands.emplace_back(row, row + rows);
    row += rows;
  }
  return bands;
}

Tensor forward_specific(const Tensor& images, Modality modality,
                        const NetworkParams& params,
                        const MTMFEConfig& config) {
  const auto m = static_cast<std::size_t>(modality);
  if (m > 1) throw ConfigError("unknown modality tag");
  const Shape& s = images.shape();
  const Shape expected = config.image_shape();
  if (s.size() < 3 || !std::equal(expected.begin(), expected.end(), s.end() - 3) ||
      s.size() > 4) {
    throw ShapeError("forward_specific: image shape " + shape_str(s) +
                     " does not match configured " + shape_str(expected));
  }
  Tensor h = images;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    h = conv_relu(h, params.specific[m].at(stage), config.backbone_strides[stage]);
  }
  return h;
}

PartOutputs part_heads(const Tensor& shared1, const Tensor& shared2,
                       const NetworkParams& params, const MTMFEConfig& config) {
  PartOutputs out;
  const auto levels = config.active_levels();
  for (std::size_t slot = 0; slot < levels.size(); ++slot) {
    const Tensor& fmap = levels[slot] == 1 ? shared1 : shared2;
    if (!fmap.defined()) {
      throw ConfigError("part_heads: level " + std::to_string(levels[slot]) +
                        " feature map missing");
    }
    const std::size_t h_axis = fmap.rank() - 2;
    const auto bands = part_bands(fmap.dim(h_axis), config.num_parts);
    for (std::size_t k = 0; k < bands.size(); ++k) {
      const PartHead& head = params.heads.at(slot * config.num_parts + k);
      Tensor pooled = global_avg_pool(
          slice(fmap, h_axis, bands[k].first, bands[k].second));
      Tensor embedding =
          fully_connected(pooled, head.embed.weight, head.embed.bias);
      out.logits.push_back(
          fully_connected(embedding, head.classify.weight, head.classify.bias));
      out.parts.push_back(std::move(embedding));
    }
  }
  return out;
}

FeatureBundle forward_shared(const Tensor& specific,
                             const NetworkParams& params,
                             const MTMFEConfig& config) {
  Shape expected = config.specific_shape();
  Tensor f = specific;
  if (f.rank() == 3) {
    Shape batched{1};
    batched.insert(batched.end(), f.shape().begin(), f.shape().end());
    f = reshape(f, std::move(batched));
  }
  if (f.rank() != 4 || !std::equal(expected.begin(), expected.end(), f.shape().begin() + 1)) {
    throw ShapeError("forward_shared: F shape " + shape_str(specific.shape()) +
                     " does not match configured " + shape_str(expected));
  }
  FeatureBundle b;
  b.specific = f;
  if (!config.relation_only) {
    b.appearance1 = conv_relu(f, params.appearance1, 1);
    b.appearance2 = conv_relu(b.appearance1, params.appearance2, config.level2_stride);
  }
  if (config.use_relation) {
    b.relation1_specific =
        relation_block(pt3d(f, config.depth), params.relation_specific, {1, 1, 1});
    if (config.relation_only) {
      b.relation1 = b.relation1_specific;
    } else {
      b.relation1_shared = relation_block(pt3d(b.appearance1, config.depth),
                                          params.relation_shared, {1, 1, 1});
      b.relation1 = add(b.relation1_specific, b.relation1_shared);
    }
    const std::size_t s2 = config.level2_stride;
    b.relation2 = relation_block(b.relation1, params.relation_level2, {1, s2, s2});
    if (config.relation_only) {
      b.shared1 = pt2d(b.relation1);
      b.shared2 = pt2d(b.relation2);
    } else {
      const Tensor level1[] = {b.appearance1, pt2d(b.relation1)};
      const Tensor level2[] = {b.appearance2, pt2d(b.relation2)};
      try {
        b.shared1 = concat(level1, 1);
        b.shared2 = concat(level2, 1);
      } catch (const ShapeError& e) {
        throw ConfigError(std::string("forward_shared: appearance and relation "
                                      "features are not concat-compatible: ") +
                          e.what());
      }
    }
  } else {
    b.shared1 = b.appearance1;
    b.shared2 = b.appearance2;
  }
  b.levels = config.active_levels();
  b.num_parts = config.num_parts;
  PartOutputs heads = part_heads(b.shared1, b.shared2, params, config);
  b.parts = std::move(heads.parts);
  b.logits = std::move(heads.logits);
  return b;
}

Network::Network(MTMFEConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      params_(NetworkParams::initialize(config_, seed)) {}

Network::Network(MTMFEConfig config, NetworkParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

FeatureBundle Network::forward(const Tensor& rgb_images,
                               const Tensor& ir_images) const {
  std::vector<Tensor> streams;
  if (rgb_images.defined()) {
    streams.push_back(forward_specific(rgb_images, Modality::kRgb, params_, config_));
  }
  if (ir_images.defined()) {
    streams.push_back(forward_specific(ir_images, Modality::kIr, params_, config_));
  }
  if (streams.empty()) throw ShapeError("Network::forward: no input images");
  Tensor f = streams.size() == 1 ? streams[0] : concat(streams, 0);
  return forward_shared(f, params_, config_);
}

Tensor Network::descriptors(const Tensor& images, Modality modality) const {
  NoGradGuard no_grad;
  FeatureBundle b = forward_shared(
      forward_specific(images, modality, params_, config_), params_, config_);
  std::vector<Tensor> normalized;
  normalized.reserve(b.parts.size());
  for (const auto& p : b.parts) normalized.push_back(l2_normalize(p));
  return concat(normalized, 1);
}

std::size_t Network::descriptor_dim() const {
  return config_.active_levels().size() * config_.num_parts * config_.embed_dim;
}

}  // namespace xmodal
