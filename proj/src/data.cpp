#include "xmodal/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace xmodal {

static_assert(std::endian::native == std::endian::little,
              "binary containers are written in host order");

void SynthDatasetSpec::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("dataset spec: " + what);
  };
  require(num_identities >= 2, "need >= 2 identities");
  require(images_per_identity >= 1, "need >= 1 image per identity and modality");
  require(channels > 0 && height > 0 && width > 0, "image shape must be positive");
  require(latent_dim > 0, "latent_dim must be positive");
  require(nuisance_scale >= 0.0 && noise_sigma >= 0.0 && modality_gap >= 0.0,
          "scales must be >= 0");
}

namespace {

constexpr std::size_t kGridRows = 6;
constexpr std::size_t kGridCols = 3;

// Fixed generative structure derived from spec.seed.
struct Renderer {
  const SynthDatasetSpec& spec;
  std::size_t grid_rows, grid_cols;
  std::vector<double> basis;           // [L][C*gr*gc]
  std::vector<double> nuisance_basis;  // [U][C*gr*gc]
  std::vector<double> ir_map;          // [C][C]
  std::vector<double> ir_shift;        // [C]
  std::vector<double> latents;         // [I][L]

  explicit Renderer(const SynthDatasetSpec& s)
      : spec(s),
        grid_rows(std::min(kGridRows, s.height)),
        grid_cols(std::min(kGridCols, s.width)) {
    s.validate();
    std::mt19937_64 rng(s.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t cell = s.channels * grid_rows * grid_cols;
    const double basis_scale = 1.0 / std::sqrt(static_cast<double>(s.latent_dim));
    basis.resize(s.latent_dim * cell);
    for (double& v : basis) v = normal(rng) * basis_scale;
    nuisance_basis.resize(s.nuisance_dim * cell);
    const double nuisance_norm =
        s.nuisance_dim ? 1.0 / std::sqrt(static_cast<double>(s.nuisance_dim)) : 0.0;
    for (double& v : nuisance_basis) v = normal(rng) * nuisance_norm;
    const std::size_t c = s.channels;
    ir_map.assign(c * c, 0.0);
    const double mix_scale = 1.0 / std::sqrt(static_cast<double>(c));
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double random_entry = normal(rng) * mix_scale;
        ir_map[i * c + j] = (i == j ? 1.0 - s.modality_gap : 0.0) +
                            s.modality_gap * random_entry;
      }
    }
    ir_shift.resize(c);
    for (double& v : ir_shift) v = s.modality_gap * normal(rng);
    latents.resize(s.num_identities * s.latent_dim);
    for (double& v : latents) v = normal(rng);
  }

  std::size_t cell_size() const { return spec.channels * grid_rows * grid_cols; }

  // Coarse grid values for an identity plus optional nuisance code.
  std::vector<double> coarse(std::size_t identity,
                             std::span<const double> nuisance) const {
    const std::size_t cell = cell_size();
    std::vector<double> g(cell, 0.0);
    const double* z = latents.data() + identity * spec.latent_dim;
    for (std::size_t l = 0; l < spec.latent_dim; ++l) {
      const double* b = basis.data() + l * cell;
      for (std::size_t i = 0; i < cell; ++i) g[i] += z[l] * b[i];
    }
    for (std::size_t u = 0; u < nuisance.size(); ++u) {
      const double* b = nuisance_basis.data() + u * cell;
      for (std::size_t i = 0; i < cell; ++i) g[i] += nuisance[u] * b[i];
    }
    return g;
  }

  // Nearest-neighbour upsampling of the grid, then the modality map.
  std::vector<double> render(const std::vector<double>& grid,
                             Modality modality) const {
    const std::size_t c = spec.channels, h = spec.height, w = spec.width;
    std::vector<double> img(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t gy = y * grid_rows / h;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t gx = x * grid_cols / w;
          img[(ch * h + y) * w + x] = grid[(ch * grid_rows + gy) * grid_cols + gx];
        }
      }
    }
    if (modality == Modality::kRgb) return img;
    std::vector<double> out(img.size());
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t p = 0; p < plane; ++p) {
        double acc = ir_shift[i];
        for (std::size_t j = 0; j < c; ++j) acc += ir_map[i * c + j] * img[j * plane + p];
        out[i * plane + p] = acc;
      }
    }
    return out;
  }
};

}  // namespace

std::vector<std::array<std::vector<std::size_t>, 2>> Dataset::by_identity() const {
  std::vector<std::array<std::vector<std::size_t>, 2>> index(spec.num_identities);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.id >= spec.num_identities) {
      throw ConfigError("image " + std::to_string(i) + " has identity " +
                        std::to_string(img.id) + " outside the dataset");
    }
    index[img.id][static_cast<std::size_t>(img.modality)].push_back(i);
  }
  return index;
}

Tensor Dataset::stack(std::span<const std::size_t> indices) const {
  const std::size_t size = spec.image_size();
  std::vector<double> data(indices.size() * size);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& px = images.at(indices[r]).pixels;
    std::copy(px.begin(), px.end(), data.begin() + r * size);
  }
  Shape shape{indices.size(), spec.channels, spec.height, spec.width};
  return Tensor::from_data(std::move(shape), std::move(data));
}

Dataset generate_dataset(const SynthDatasetSpec& spec) {
  Renderer renderer(spec);
  std::mt19937_64 rng(spec.sample_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.spec = spec;
  ds.images.reserve(spec.num_identities * spec.images_per_identity * 2);
  std::vector<double> nuisance(spec.nuisance_dim);
  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    for (Modality m : {Modality::kRgb, Modality::kIr}) {
      for (std::size_t k = 0; k < spec.images_per_identity; ++k) {
        for (double& u : nuisance) u = normal(rng) * spec.nuisance_scale;
        auto pixels = renderer.render(renderer.coarse(id, nuisance), m);
        Image img;
        img.id = static_cast<std::uint32_t>(id);
        img.modality = m;
        img.pixels.resize(pixels.size());
        for (std::size_t i = 0; i < pixels.size(); ++i) {
          const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * normal(rng) : 0.0;
          img.pixels[i] = static_cast<float>(pixels[i] + noise);
        }
        ds.images.push_back(std::move(img));
      }
    }
  }
  return ds;
}

std::vector<double> identity_template(const SynthDatasetSpec& spec,
                                      std::size_t identity, Modality modality) {
  Renderer renderer(spec);
  if (identity >= spec.num_identities) throw ConfigError("identity out of range");
  return renderer.render(renderer.coarse(identity, {}), modality);
}

std::vector<double> identity_latent(const SynthDatasetSpec& spec,
                                    std::size_t identity) {
  Renderer renderer(spec);
  if (identity >= spec.num_identities) throw ConfigError("identity out of range");
  auto first = renderer.latents.begin() + identity * spec.latent_dim;
  return {first, first + spec.latent_dim};
}

namespace {

constexpr char kDatasetMagic[4] = {'X', 'M', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("dataset file truncated");
  return value;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto& s = dataset.spec;
  os.write(kDatasetMagic, 4);
  put<std::uint32_t>(os, kDatasetVersion);
  for (std::uint64_t v : {std::uint64_t(s.num_identities), std::uint64_t(s.images_per_identity),
                          std::uint64_t(s.channels), std::uint64_t(s.height),
                          std::uint64_t(s.width), std::uint64_t(s.latent_dim),
                          std::uint64_t(s.nuisance_dim), s.seed, s.sample_seed}) {
    put<std::uint64_t>(os, v);
  }
  for (double v : {s.nuisance_scale, s.modality_gap, s.noise_sigma}) put<double>(os, v);
  put<std::uint64_t>(os, dataset.images.size());
  for (const auto& img : dataset.images) {
    if (img.pixels.size() != s.image_size()) {
      throw std::runtime_error("image pixel count does not match spec");
    }
    put<std::uint32_t>(os, img.id);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(img.modality));
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw std::runtime_error(path.string() + " is not a dataset container");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kDatasetVersion) {
    throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  auto& s = ds.spec;
  s.num_identities = get<std::uint64_t>(is);
  s.images_per_identity = get<std::uint64_t>(is);
  s.channels = get<std::uint64_t>(is);
  s.height = get<std::uint64_t>(is);
  s.width = get<std::uint64_t>(is);
  s.latent_dim = get<std::uint64_t>(is);
  s.nuisance_dim = get<std::uint64_t>(is);
  s.seed = get<std::uint64_t>(is);
  s.sample_seed = get<std::uint64_t>(is);
  s.nuisance_scale = get<double>(is);
  s.modality_gap = get<double>(is);
  s.noise_sigma = get<double>(is);
  s.validate();
  const auto count = get<std::uint64_t>(is);
  ds.images.resize(count);
  for (auto& img : ds.images) {
    img.id = get<std::uint32_t>(is);
    const auto m = get<std::uint8_t>(is);
    if (m > 1) throw std::runtime_error("invalid modality byte in dataset");
    img.modality = static_cast<Modality>(m);
    img.pixels.resize(s.image_size());
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
    if (!is) throw std::runtime_error("dataset file truncated");
  }
  return ds;
}

namespace {

void flip_rows(std::span<double> data, std::size_t width) {
  for (std::size_t r = 0; r + width <= data.size(); r += width) {
    std::reverse(data.begin() + r, data.begin() + r + width);
  }
}

bool draw_flip(double p, std::mt19937_64& rng) {
  if (p <= 0.0) return false;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < p;
}

// k distinct values from [0, n), uniformly, by partial Fisher-Yates.
std::vector<std::size_t> choose(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

Tensor augment_flip(const Tensor& image, double p, std::mt19937_64& rng) {
  Tensor out = image.detach();
  if (draw_flip(p, rng)) flip_rows(out.mutable_data(), image.shape().back());
  return out;
}

Batch sample_batch(const Dataset& dataset, std::size_t n_ids, std::size_t k,
                   std::mt19937_64& rng, double flip_probability) {
  if (n_ids == 0 || k == 0) throw ConfigError("sample_batch: N and K must be positive");
  const auto index = dataset.by_identity();
  if (index.size() < n_ids) {
    throw ConfigError("sample_batch: dataset has " + std::to_string(index.size()) +
                      " identities, fewer than N=" + std::to_string(n_ids));
  }
  for (std::size_t id = 0; id < index.size(); ++id) {
    for (std::size_t m = 0; m < 2; ++m) {
      if (index[id][m].size() < k) {
        throw ConfigError("sample_batch: identity " + std::to_string(id) + " has " +
                          std::to_string(index[id][m].size()) + " " +
                          std::string(modality_name(static_cast<Modality>(m))) +
                          " images, fewer than K=" + std::to_string(k));
      }
    }
  }
  const auto chosen_ids = choose(index.size(), n_ids, rng);
  Batch batch;
  std::array<std::vector<std::size_t>, 2> picked;
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t id : chosen_ids) {
      const auto& pool = index[id][m];
      for (std::size_t j : choose(pool.size(), k, rng)) picked[m].push_back(pool[j]);
    }
  }
  const std::size_t width = dataset.spec.width;
  const std::size_t size = dataset.spec.image_size();
  for (std::size_t m = 0; m < 2; ++m) {
    Tensor t = dataset.stack(picked[m]);
    auto data = t.mutable_data();
    for (std::size_t r = 0; r < picked[m].size(); ++r) {
      if (draw_flip(flip_probability, rng)) flip_rows(data.subspan(r * size, size), width);
      batch.ids.push_back(dataset.images[picked[m][r]].id);
      batch.modalities.push_back(static_cast<Modality>(m));
      batch.image_indices.push_back(picked[m][r]);
    }
    (m == 0 ? batch.rgb : batch.ir) = t;
  }
  return batch;
}

}  // namespace xmodal
