#include "xmodal/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string_view>
#include <vector>

namespace xmodal {

MTMFEConfig RunConfig::resolved_model() const {
  MTMFEConfig m = model;
  m.image_channels = data.channels;
  m.image_height = data.height;
  m.image_width = data.width;
  m.num_identities = data.num_identities;
  m.use_relation = ablation.use_relation;
  m.relation_only = ablation.relation_only;
  m.use_multi_level = ablation.use_multi_level;
  if (!ablation.use_parts) m.num_parts = 1;
  return m;
}

SynthDatasetSpec RunConfig::eval_spec() const {
  SynthDatasetSpec s = data;
  s.sample_seed = eval_sample_seed;
  s.images_per_identity = eval_images_per_identity;
  return s;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.mode = eval_mode;
  o.shots = eval_shots;
  o.redraws = eval_redraws;
  o.direction = eval_direction;
  o.seed = seed;
  o.threads = eval_threads_from_env();
  return o;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  data.validate();
  loss.validate();
  resolved_model().validate();
  require(optim.lr_specific > 0.0, "optim.lr_specific must be > 0");
  require(optim.lr_shared > 0.0, "optim.lr_shared must be > 0");
  require(optim.momentum >= 0.0, "optim.momentum must be >= 0");
  require(optim.weight_decay >= 0.0, "optim.weight_decay must be >= 0");
  require(optim.decay_factor > 0.0, "optim.decay_factor must be > 0");
  require(n_ids >= 2, "train.n_ids must be >= 2");
  require(k >= 2, "train.k must be >= 2 (intra-modality positives)");
  require(n_ids <= data.num_identities, "train.n_ids exceeds data.num_identities");
  require(k <= data.images_per_identity, "train.k exceeds data.images_per_identity");
  require(epochs >= 0, "train.epochs must be >= 0");
  require(id_warmup_epochs >= 0, "train.id_warmup_epochs must be >= 0");
  require(batches_per_epoch >= 1, "train.batches_per_epoch must be >= 1");
  require(flip_probability >= 0.0 && flip_probability <= 1.0,
          "train.flip_probability must lie in [0,1]");
  require(eval_redraws >= 1, "eval.redraws must be >= 1");
  require(eval_shots >= 1, "eval.shots must be >= 1");
  require(eval_images_per_identity >= 1, "data.eval_images_per_identity must be >= 1");
  require(ablation.relation_only ? ablation.use_relation : true,
          "ablation.relation_only requires ablation.use_relation");
  require(ablation_seeds >= 1, "ablation.seeds must be >= 1");
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ConfigError("invalid value '" + value + "' for config key '" + key + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Ref>
Field number(std::string key, Ref ref) {
  Field f;
  f.key = key;
  f.set = [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(key, v); };
  f.get = [ref](const RunConfig& c) {
    const T value = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) {
      return format_double(value);
    } else {
      return std::to_string(value);
    }
  };
  return f;
}

template <typename Ref>
Field boolean(std::string key, Ref ref) {
  Field f;
  f.key = key;
  f.set = [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); };
  f.get = [ref](const RunConfig& c) {
    return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false");
  };
  return f;
}

template <typename Ref>
Field triple(std::string key, Ref ref) {
  Field f;
  f.key = key;
  f.set = [key, ref](RunConfig& c, const std::string& v) {
    std::array<std::size_t, 3> out{};
    std::stringstream ss(v);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
      if (i >= 3) bad_value(key, v);
      out[i++] = parse_number<std::size_t>(key, trim(item));
    }
    if (i != 3) bad_value(key, v);
    ref(c) = out;
  };
  f.get = [ref](const RunConfig& c) {
    const auto& a = ref(const_cast<RunConfig&>(c));
    return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
  };
  return f;
}

template <typename Parse, typename Name, typename Ref>
Field enumeration(std::string key, Parse parse, Name name, Ref ref) {
  Field f;
  f.key = key;
  f.set = [key, parse, ref](RunConfig& c, const std::string& v) {
    try {
      ref(c) = parse(v);
    } catch (const ConfigError&) {
      bad_value(key, v);
    }
  };
  f.get = [name, ref](const RunConfig& c) {
    return std::string(name(ref(const_cast<RunConfig&>(c))));
  };
  return f;
}

const std::vector<Field>& fields() {
  using C = RunConfig;
  static const std::vector<Field> table = {
      number<std::uint64_t>("seed", [](C& c) -> auto& { return c.seed; }),
      number<std::size_t>("data.num_identities", [](C& c) -> auto& { return c.data.num_identities; }),
      number<std::size_t>("data.images_per_identity", [](C& c) -> auto& { return c.data.images_per_identity; }),
      number<std::size_t>("data.channels", [](C& c) -> auto& { return c.data.channels; }),
      number<std::size_t>("data.height", [](C& c) -> auto& { return c.data.height; }),
      number<std::size_t>("data.width", [](C& c) -> auto& { return c.data.width; }),
      number<std::size_t>("data.latent_dim", [](C& c) -> auto& { return c.data.latent_dim; }),
      number<std::size_t>("data.nuisance_dim", [](C& c) -> auto& { return c.data.nuisance_dim; }),
      number<double>("data.nuisance_scale", [](C& c) -> auto& { return c.data.nuisance_scale; }),
      number<double>("data.modality_gap", [](C& c) -> auto& { return c.data.modality_gap; }),
      number<double>("data.noise_sigma", [](C& c) -> auto& { return c.data.noise_sigma; }),
      number<std::uint64_t>("data.seed", [](C& c) -> auto& { return c.data.seed; }),
      number<std::uint64_t>("data.sample_seed", [](C& c) -> auto& { return c.data.sample_seed; }),
      number<std::uint64_t>("data.eval_sample_seed", [](C& c) -> auto& { return c.eval_sample_seed; }),
      number<std::size_t>("data.eval_images_per_identity", [](C& c) -> auto& { return c.eval_images_per_identity; }),
      triple("model.backbone_channels", [](C& c) -> auto& { return c.model.backbone_channels; }),
      triple("model.backbone_strides", [](C& c) -> auto& { return c.model.backbone_strides; }),
      number<std::size_t>("model.appearance1_channels", [](C& c) -> auto& { return c.model.appearance1_channels; }),
      number<std::size_t>("model.appearance2_channels", [](C& c) -> auto& { return c.model.appearance2_channels; }),
      number<std::size_t>("model.depth", [](C& c) -> auto& { return c.model.depth; }),
      number<std::size_t>("model.relation_groups", [](C& c) -> auto& { return c.model.relation_groups; }),
      number<std::size_t>("model.level2_stride", [](C& c) -> auto& { return c.model.level2_stride; }),
      number<std::size_t>("model.num_parts", [](C& c) -> auto& { return c.model.num_parts; }),
      number<std::size_t>("model.embed_dim", [](C& c) -> auto& { return c.model.embed_dim; }),
      boolean("model.tied_stem_init", [](C& c) -> auto& { return c.model.tied_stem_init; }),
      number<double>("loss.rho1", [](C& c) -> auto& { return c.loss.rho1; }),
      number<double>("loss.rho2", [](C& c) -> auto& { return c.loss.rho2; }),
      number<double>("loss.rho3", [](C& c) -> auto& { return c.loss.rho3; }),
      boolean("loss.normalize_inputs", [](C& c) -> auto& { return c.loss.normalize_inputs; }),
      number<double>("optim.lr_specific", [](C& c) -> auto& { return c.optim.lr_specific; }),
      number<double>("optim.lr_shared", [](C& c) -> auto& { return c.optim.lr_shared; }),
      number<double>("optim.momentum", [](C& c) -> auto& { return c.optim.momentum; }),
      number<double>("optim.weight_decay", [](C& c) -> auto& { return c.optim.weight_decay; }),
      number<double>("optim.decay_factor", [](C& c) -> auto& { return c.optim.decay_factor; }),
      number<int>("optim.decay_every_epochs", [](C& c) -> auto& { return c.optim.decay_every_epochs; }),
      number<std::size_t>("train.n_ids", [](C& c) -> auto& { return c.n_ids; }),
      number<std::size_t>("train.k", [](C& c) -> auto& { return c.k; }),
      number<int>("train.epochs", [](C& c) -> auto& { return c.epochs; }),
      number<std::size_t>("train.batches_per_epoch", [](C& c) -> auto& { return c.batches_per_epoch; }),
      number<double>("train.flip_probability", [](C& c) -> auto& { return c.flip_probability; }),
      number<int>("train.id_warmup_epochs", [](C& c) -> auto& { return c.id_warmup_epochs; }),
      boolean("ablation.use_relation", [](C& c) -> auto& { return c.ablation.use_relation; }),
      boolean("ablation.relation_only", [](C& c) -> auto& { return c.ablation.relation_only; }),
      boolean("ablation.use_multi_level", [](C& c) -> auto& { return c.ablation.use_multi_level; }),
      boolean("ablation.use_parts", [](C& c) -> auto& { return c.ablation.use_parts; }),
      enumeration("ablation.loss", parse_metric_loss, metric_loss_name,
                  [](C& c) -> auto& { return c.ablation.loss; }),
      number<std::size_t>("ablation.seeds", [](C& c) -> auto& { return c.ablation_seeds; }),
      Field{"ablation.rows",
            [](C& c, const std::string& v) { c.ablation_rows = v; },
            [](const C& c) { return c.ablation_rows; }},
      enumeration("eval.mode", parse_eval_mode, eval_mode_name,
                  [](C& c) -> auto& { return c.eval_mode; }),
      enumeration("eval.direction", parse_direction, direction_name,
                  [](C& c) -> auto& { return c.eval_direction; }),
      number<std::size_t>("eval.shots", [](C& c) -> auto& { return c.eval_shots; }),
      number<std::size_t>("eval.redraws", [](C& c) -> auto& { return c.eval_redraws; }),
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(std::istream& is, RunConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        " is not of the form key = value");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    bool matched = false;
    for (const auto& f : fields()) {
      if (f.key == key) {
        f.set(base, value);
        matched = true;
        break;
      }
    }
    if (!matched) throw ConfigError("unknown config key '" + key + "'");
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  return parse_run_config(is);
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace xmodal
