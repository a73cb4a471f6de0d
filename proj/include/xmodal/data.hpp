#ifndef XMODAL_DATA_HPP_
#define XMODAL_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "xmodal/network.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// Synthetic two-modality identity dataset. Each identity owns one latent
/// code shared by both modalities; an image is
///   A_m * (basis * latent + nuisance_basis * u) + b_m + noise
/// with a fixed per-modality channel map A_m and shift b_m (identity and
/// zero for RGB) and a per-image nuisance code u.
struct SynthDatasetSpec {
  std::size_t num_identities = 20;
  std::size_t images_per_identity = 8;  // per modality
  std::size_t channels = 3;
  std::size_t height = 24;
  std::size_t width = 12;
  std::size_t latent_dim = 8;
  std::size_t nuisance_dim = 4;
  double nuisance_scale = 0.5;
  double modality_gap = 0.8;  // 0 makes IR identical to RGB
  double noise_sigma = 0.1;
  std::uint64_t seed = 7;         // latents, bases, modality maps
  std::uint64_t sample_seed = 1;  // per-image nuisance codes and noise

  void validate() const;
  Shape image_shape() const { return {channels, height, width}; }
  std::size_t image_size() const { return channels * height * width; }
};

struct Image {
  std::uint32_t id = 0;
  Modality modality = Modality::kRgb;
  std::vector<float> pixels;  // [C,H,W] row-major
};

struct Dataset {
  SynthDatasetSpec spec;
  std::vector<Image> images;

  // by_identity()[id][modality] -> indices into images.
  std::vector<std::array<std::vector<std::size_t>, 2>> by_identity() const;
  // [n,C,H,W] tensor of the listed images.
  Tensor stack(std::span<const std::size_t> indices) const;
};

Dataset generate_dataset(const SynthDatasetSpec& spec);

/// Noise- and nuisance-free rendering of an identity in a modality.
std::vector<double> identity_template(const SynthDatasetSpec& spec,
                                      std::size_t identity, Modality modality);

/// Latent code of an identity (standard normal draws from spec.seed).
std::vector<double> identity_latent(const SynthDatasetSpec& spec,
                                    std::size_t identity);

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

/// 2*N*K images: rows [0, N*K) are RGB, rows [N*K, 2*N*K) are IR. Within a
/// modality, images are grouped by identity in selection order.
struct Batch {
  Tensor rgb;  // [N*K,C,H,W]
  Tensor ir;   // [N*K,C,H,W]
  std::vector<std::size_t> ids;
  std::vector<Modality> modalities;
  std::vector<std::size_t> image_indices;
  std::size_t size() const { return ids.size(); }
};

/// N identities uniformly without replacement, then K images per modality
/// per identity uniformly without replacement. Each image is mirrored
/// horizontally with probability flip_probability.
Batch sample_batch(const Dataset& dataset, std::size_t n_ids, std::size_t k,
                   std::mt19937_64& rng, double flip_probability = 0.0);

/// Horizontal mirror (last axis) with probability p.
Tensor augment_flip(const Tensor& image, double p, std::mt19937_64& rng);

}  // namespace xmodal

#endif  // XMODAL_DATA_HPP_
