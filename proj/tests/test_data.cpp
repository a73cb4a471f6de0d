#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "xmodal/data.hpp"

using namespace xmodal;
namespace fs = std::filesystem;

namespace {

SynthDatasetSpec small_spec() {
  SynthDatasetSpec s;
  s.num_identities = 10;
  s.images_per_identity = 6;
  s.height = 12;
  s.width = 6;
  return s;
}

double pixel_dist(std::span<const float> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::size_t nearest_template(const Image& img, const SynthDatasetSpec& spec,
                             const std::vector<std::array<std::vector<double>, 2>>& templates) {
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    const double d = pixel_dist(img.pixels, templates[id][static_cast<std::size_t>(img.modality)]);
    if (d < best_d) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

std::vector<std::array<std::vector<double>, 2>> all_templates(const SynthDatasetSpec& spec) {
  std::vector<std::array<std::vector<double>, 2>> t(spec.num_identities);
  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    t[id][0] = identity_template(spec, id, Modality::kRgb);
    t[id][1] = identity_template(spec, id, Modality::kIr);
  }
  return t;
}

}  // namespace

TEST(Dataset, LayoutAndCounts) {
  const auto spec = small_spec();
  const Dataset d = generate_dataset(spec);
  EXPECT_EQ(d.images.size(), 10u * 6 * 2);
  const auto index = d.by_identity();
  ASSERT_EQ(index.size(), 10u);
  for (const auto& per_id : index) {
    EXPECT_EQ(per_id[0].size(), 6u);
    EXPECT_EQ(per_id[1].size(), 6u);
  }
  for (const auto& img : d.images) EXPECT_EQ(img.pixels.size(), spec.image_size());
}

TEST(Dataset, SameSeedIsBitwiseIdentical) {
  const Dataset a = generate_dataset(small_spec());
  const Dataset b = generate_dataset(small_spec());
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].id, b.images[i].id);
    EXPECT_EQ(a.images[i].modality, b.images[i].modality);
    ASSERT_EQ(a.images[i].pixels, b.images[i].pixels);
  }
  auto spec = small_spec();
  spec.sample_seed = 99;
  const Dataset c = generate_dataset(spec);
  EXPECT_NE(a.images[0].pixels, c.images[0].pixels);
}

TEST(Dataset, NoiselessImagesOfAnIdentityAreIdentical) {
  auto spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.nuisance_scale = 0.0;
  const Dataset d = generate_dataset(spec);
  for (const auto& per_id : d.by_identity())
    for (const auto& pool : per_id)
      for (std::size_t j : pool) EXPECT_EQ(d.images[j].pixels, d.images[pool[0]].pixels);
}

TEST(Dataset, ZeroModalityGapMakesModalitiesMatch) {
  auto spec = small_spec();
  spec.modality_gap = 0.0;
  for (std::size_t id = 0; id < 3; ++id) {
    EXPECT_EQ(identity_template(spec, id, Modality::kRgb), identity_template(spec, id, Modality::kIr));
  }
  spec.modality_gap = 0.8;
  EXPECT_NE(identity_template(spec, 0, Modality::kRgb), identity_template(spec, 0, Modality::kIr));
}

TEST(Dataset, CleanImagesClassifyToTheirTemplate) {
  auto spec = small_spec();
  spec.num_identities = 20;
  spec.noise_sigma = 0.0;
  spec.nuisance_scale = 0.0;
  const auto templates = all_templates(spec);
  const Dataset d = generate_dataset(spec);
  for (const auto& img : d.images) EXPECT_EQ(nearest_template(img, spec, templates), img.id);
  // Distinct identities own distinct latent codes.
  for (std::size_t a = 0; a < spec.num_identities; ++a)
    for (std::size_t b = a + 1; b < spec.num_identities; ++b)
      EXPECT_NE(identity_latent(spec, a), identity_latent(spec, b));
}

TEST(Dataset, DefaultNoiseKeepsIdentitiesSeparable) {
  SynthDatasetSpec spec;
  const auto templates = all_templates(spec);
  const Dataset d = generate_dataset(spec);
  std::size_t correct = 0;
  for (const auto& img : d.images) correct += nearest_template(img, spec, templates) == img.id;
  EXPECT_GE(static_cast<double>(correct) / d.images.size(), 0.99);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const Dataset d = generate_dataset(small_spec());
  const fs::path path = fs::temp_directory_path() / "xmodal_test_roundtrip.xmds";
  save_dataset(path, d);
  const Dataset back = load_dataset(path);
  fs::remove(path);
  EXPECT_EQ(back.spec.num_identities, d.spec.num_identities);
  EXPECT_EQ(back.spec.seed, d.spec.seed);
  EXPECT_EQ(back.spec.modality_gap, d.spec.modality_gap);
  ASSERT_EQ(back.images.size(), d.images.size());
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    EXPECT_EQ(back.images[i].id, d.images[i].id);
    EXPECT_EQ(back.images[i].modality, d.images[i].modality);
    ASSERT_EQ(back.images[i].pixels, d.images[i].pixels);
  }
}

TEST(Dataset, LoadRejectsForeignFiles) {
  const fs::path path = fs::temp_directory_path() / "xmodal_test_foreign.xmds";
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a dataset";
  }
  EXPECT_THROW(load_dataset(path), std::runtime_error);
  fs::remove(path);
  EXPECT_THROW(load_dataset(path), std::runtime_error);
}

TEST(Dataset, StackShapesImages) {
  const Dataset d = generate_dataset(small_spec());
  const std::vector<std::size_t> idx{3, 0};
  Tensor t = d.stack(idx);
  EXPECT_EQ(t.shape(), (Shape{2, 3, 12, 6}));
  EXPECT_EQ(t.at(0), static_cast<double>(d.images[3].pixels[0]));
}

TEST(Sampler, BatchInvariantsOverManyDraws) {
  SynthDatasetSpec spec;  // 20 identities, 8 images per modality
  const Dataset d = generate_dataset(spec);
  std::mt19937_64 rng(5);
  std::vector<std::size_t> counts(20, 0);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    const Batch b = sample_batch(d, 8, 4, rng);
    ASSERT_EQ(b.size(), 64u);
    ASSERT_EQ(b.rgb.dim(0), 32u);
    ASSERT_EQ(b.ir.dim(0), 32u);
    std::map<std::size_t, std::array<int, 2>> per_id;
    std::set<std::size_t> images;
    for (std::size_t i = 0; i < 64; ++i) {
      per_id[b.ids[i]][static_cast<std::size_t>(b.modalities[i])]++;
      ASSERT_EQ(b.modalities[i], i < 32 ? Modality::kRgb : Modality::kIr);
      const Image& img = d.images[b.image_indices[i]];
      ASSERT_EQ(img.id, b.ids[i]);
      ASSERT_EQ(img.modality, b.modalities[i]);
      images.insert(b.image_indices[i]);
    }
    ASSERT_EQ(per_id.size(), 8u);
    ASSERT_EQ(images.size(), 64u);
    for (const auto& [id, c] : per_id) {
      ASSERT_EQ(c[0], 4);
      ASSERT_EQ(c[1], 4);
      counts[id]++;
    }
  }
  // Each identity is chosen with probability 8/20 per batch.
  const double p = 8.0 / 20.0;
  const double mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (std::size_t id = 0; id < 20; ++id) EXPECT_LE(std::abs(counts[id] - mean), 3 * sigma) << id;
}

TEST(Sampler, AllIdentitiesAppearOnce) {
  const Dataset d = generate_dataset(small_spec());
  std::mt19937_64 rng(6);
  const Batch b = sample_batch(d, 10, 2, rng);
  std::map<std::size_t, int> seen;
  for (std::size_t id : b.ids) seen[id]++;
  EXPECT_EQ(seen.size(), 10u);
  for (const auto& [id, c] : seen) EXPECT_EQ(c, 4);
}

TEST(Sampler, DeficientIdentityIsNamed) {
  Dataset d = generate_dataset(small_spec());
  // Drop all but one IR image of identity 4.
  std::vector<Image> kept;
  int ir_of_4 = 0;
  for (const auto& img : d.images) {
    if (img.id == 4 && img.modality == Modality::kIr && ir_of_4++ > 0) continue;
    kept.push_back(img);
  }
  d.images = kept;
  std::mt19937_64 rng(7);
  try {
    sample_batch(d, 8, 2, rng);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("identity 4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(sample_batch(d, 11, 1, rng), ConfigError);
}

TEST(Sampler, DistinctRngStatesGiveDifferentBatches) {
  const Dataset d = generate_dataset(small_spec());
  std::mt19937_64 r1(1), r2(2), r1b(1);
  const Batch a = sample_batch(d, 4, 2, r1);
  const Batch b = sample_batch(d, 4, 2, r2);
  const Batch c = sample_batch(d, 4, 2, r1b);
  EXPECT_NE(a.image_indices, b.image_indices);
  EXPECT_EQ(a.image_indices, c.image_indices);
}

TEST(Flip, Properties) {
  std::mt19937_64 rng(8);
  Tensor img = Tensor::from_data({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor same = augment_flip(img, 0.0, rng);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(same.at(i), img.at(i));
  Tensor once = augment_flip(img, 1.0, rng);
  const std::vector<double> mirrored{3, 2, 1, 6, 5, 4};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(once.at(i), mirrored[i]);
  Tensor twice = augment_flip(once, 1.0, rng);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(twice.at(i), img.at(i));
}

TEST(Flip, SamplerFlipsRows) {
  const Dataset d = generate_dataset(small_spec());
  std::mt19937_64 rng(9);
  const Batch b = sample_batch(d, 2, 2, rng, 1.0);
  const auto& src = d.images[b.image_indices[0]].pixels;
  EXPECT_EQ(b.rgb.at(0), static_cast<double>(src[5]));
  EXPECT_EQ(b.rgb.at(5), static_cast<double>(src[0]));
}
