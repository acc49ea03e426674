#include "cpabaug/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>

#include "cpabaug/errors.hpp"

namespace cpabaug {

using ojson = nlohmann::ordered_json;

void PipelineConfig::validate() const {
  tessellation.validate();
  integration.validate();
  if (patch_size < 8) throw ValidationError("patch.S must be at least 8");
  if (min_area < 1) throw ValidationError("patch.min_area must be positive");
  if (k < 1) throw ValidationError("patch.K must be positive");
  if (label < 1 || label > 255) throw ValidationError("patch.label must lie in [1, 255]");
  train.validate();
  if (latent_dim < 1) throw ValidationError("train.latent_dim must be positive");
  blend.validate();
  copy_paste.validate();
  synth.validate();
  if (jobs < 1) throw ValidationError("jobs must be at least 1");
}

ojson to_json(const PipelineConfig& c) {
  ojson j;
  j["tessellation"] = {{"nx", c.tessellation.nx}, {"ny", c.tessellation.ny}};
  j["integration"] = {{"n_steps", c.integration.n_steps}, {"t_final", c.integration.t_final}};
  j["patch"] = {{"S", c.patch_size}, {"min_area", c.min_area}, {"K", c.k}, {"label", c.label}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch", c.train.batch_size},
                {"lr", c.train.learning_rate},
                {"beta", c.train.beta},
                {"lambda_reg", c.train.lambda_reg},
                {"patience", c.train.patience},
                {"seed", c.train.seed},
                {"preset", preset_name(c.preset)},
                {"latent_dim", c.latent_dim},
                {"val_fraction", c.train.val_fraction}};
  j["blend"] = {{"rings", c.blend.rings}, {"decay", c.blend.decay}};
  j["copy_paste"] = {{"probability", c.copy_paste.probability},
                     {"flip_prob", c.copy_paste.flip_prob},
                     {"rotation_deg", c.copy_paste.rotation_deg},
                     {"scale_min", c.copy_paste.scale_min},
                     {"scale_max", c.copy_paste.scale_max},
                     {"max_attempts", c.copy_paste.max_attempts},
                     {"avoid_overlap", c.copy_paste.avoid_overlap}};
  j["augment"] = {{"seed", c.augment_seed}};
  j["synth"] = to_json(c.synth);
  j["paths"] = {{"corpus", c.paths.corpus},
                {"pairset", c.paths.pairset},
                {"model", c.paths.model},
                {"history", c.paths.history},
                {"out", c.paths.out}};
  j["jobs"] = c.jobs;
  return j;
}

namespace {

// Reads keys of one JSON object and rejects any it did not ask for.
class Section {
 public:
  Section(const ojson& doc, std::string where) : where_(std::move(where)) {
    if (!doc.is_object()) throw SchemaError(where_ + " must be an object");
    doc_ = &doc;
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : doc_->items()) {
      if (!seen_.count(key)) throw SchemaError(where_ + ": unknown key '" + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!doc_->contains(key)) return;
    const ojson& v = doc_->at(key);
    const bool ok = [&] {
      if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
      else if constexpr (std::is_integral_v<T>) return v.is_number_integer() && (std::is_signed_v<T> || v >= 0);
      else if constexpr (std::is_floating_point_v<T>) return v.is_number();
      else return v.is_string();
    }();
    if (!ok) throw SchemaError(where_ + "." + key + ": wrong type (" + v.dump() + ")");
    out = v.get<T>();
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const ojson empty = ojson::object();
    return Section(doc_->contains(key) ? doc_->at(key) : empty, where_ + "." + key);
  }

 private:
  const ojson* doc_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

PipelineConfig config_from_json(const ojson& doc, const std::string& where) {
  PipelineConfig c;
  {
    Section root(doc, where);
    {
      Section s = root.sub("tessellation");
      s.get("nx", c.tessellation.nx);
      s.get("ny", c.tessellation.ny);
    }
    {
      Section s = root.sub("integration");
      s.get("n_steps", c.integration.n_steps);
      s.get("t_final", c.integration.t_final);
    }
    {
      Section s = root.sub("patch");
      s.get("S", c.patch_size);
      s.get("min_area", c.min_area);
      s.get("K", c.k);
      s.get("label", c.label);
    }
    {
      Section s = root.sub("train");
      s.get("epochs", c.train.epochs);
      s.get("batch", c.train.batch_size);
      s.get("lr", c.train.learning_rate);
      s.get("beta", c.train.beta);
      s.get("lambda_reg", c.train.lambda_reg);
      s.get("patience", c.train.patience);
      s.get("seed", c.train.seed);
      std::string preset = preset_name(c.preset);
      s.get("preset", preset);
      try {
        c.preset = parse_preset(preset);
      } catch (const ValidationError& e) {
        throw SchemaError(where + ".train.preset: " + e.what());
      }
      s.get("latent_dim", c.latent_dim);
      s.get("val_fraction", c.train.val_fraction);
    }
    {
      Section s = root.sub("blend");
      s.get("rings", c.blend.rings);
      s.get("decay", c.blend.decay);
    }
    {
      Section s = root.sub("copy_paste");
      s.get("probability", c.copy_paste.probability);
      s.get("flip_prob", c.copy_paste.flip_prob);
      s.get("rotation_deg", c.copy_paste.rotation_deg);
      s.get("scale_min", c.copy_paste.scale_min);
      s.get("scale_max", c.copy_paste.scale_max);
      s.get("max_attempts", c.copy_paste.max_attempts);
      s.get("avoid_overlap", c.copy_paste.avoid_overlap);
    }
    {
      Section s = root.sub("augment");
      s.get("seed", c.augment_seed);
    }
    {
      Section s = root.sub("synth");
      s.get("n_images", c.synth.n_images);
      s.get("width", c.synth.width);
      s.get("height", c.synth.height);
      s.get("blobs_min", c.synth.blobs_min);
      s.get("blobs_max", c.synth.blobs_max);
      s.get("harmonics", c.synth.harmonics);
      s.get("radius_min", c.synth.radius_min);
      s.get("radius_max", c.synth.radius_max);
      s.get("amplitude", c.synth.amplitude);
      s.get("background", c.synth.background);
      s.get("background_noise", c.synth.background_noise);
      s.get("blob_intensity_min", c.synth.blob_intensity_min);
      s.get("blob_intensity_max", c.synth.blob_intensity_max);
      s.get("texture_amplitude", c.synth.texture_amplitude);
      s.get("texture_period_min", c.synth.texture_period_min);
      s.get("texture_period_max", c.synth.texture_period_max);
      s.get("seed", c.synth.seed);
    }
    {
      Section s = root.sub("paths");
      s.get("corpus", c.paths.corpus);
      s.get("pairset", c.paths.pairset);
      s.get("model", c.paths.model);
      s.get("history", c.paths.history);
      s.get("out", c.paths.out);
    }
    root.get("jobs", c.jobs);
  }
  c.train.threads = c.jobs;
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  ojson doc;
  try {
    doc = ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  return config_from_json(doc, path.string());
}

void apply_seed_env(PipelineConfig& cfg) {
  const char* v = std::getenv(kSeedEnv);
  if (!v || !*v) return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long seed = std::strtoull(v, &end, 10);
  if (errno != 0 || *end != '\0' || v[0] == '-')
    throw ValidationError(std::string(kSeedEnv) + " must be a non-negative integer, got '" + v + "'");
  cfg.train.seed = seed;
  cfg.synth.seed = seed;
  cfg.augment_seed = seed;
}

void set_config_value(ojson& doc, const std::string& dotted_key, const std::string& text) {
  const ojson defaults = to_json(PipelineConfig{});
  std::string pointer = "/" + dotted_key;
  for (char& ch : pointer) {
    if (ch == '.') ch = '/';
  }
  const ojson::json_pointer ptr(pointer);
  if (!defaults.contains(ptr) || defaults.at(ptr).is_object())
    throw ValidationError("unknown config key '" + dotted_key + "'");
  const ojson& ref = defaults.at(ptr);
  ojson value;
  try {
    if (ref.is_string()) {
      value = text;
    } else {
      value = ojson::parse(text);
    }
  } catch (const nlohmann::json::parse_error&) {
    throw ValidationError("bad value '" + text + "' for " + dotted_key);
  }
  if (ref.is_number_float() && value.is_number()) value = value.get<double>();
  if (ref.is_boolean() != value.is_boolean() || ref.is_number() != value.is_number())
    throw ValidationError("bad value '" + text + "' for " + dotted_key);
  doc[ptr] = value;
}

namespace {

void collect(const ojson& j, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      collect(value, name, out);
    } else {
      out.push_back(name);
    }
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  collect(to_json(PipelineConfig{}), "", out);
  return out;
}

}  // namespace cpabaug
