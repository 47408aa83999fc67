#include "sfm/config.hpp"

#include <set>

#include "sfm/io.hpp"

namespace sfm {

using json = nlohmann::json;

std::string to_string(DataSource source) {
  switch (source) {
    case DataSource::kToy: return "toy";
    case DataSource::kFeatures: return "features";
    case DataSource::kFile: return "file";
  }
  return "toy";
}

DataSource parse_data_source(const std::string& text) {
  if (text == "toy") return DataSource::kToy;
  if (text == "features") return DataSource::kFeatures;
  if (text == "file") return DataSource::kFile;
  throw ValidationError("unknown data source '" + text + "' (toy, features, file)");
}

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config section '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config key '" + path_ + "." + key + "': " + e.what());
    }
  }

  template <class T, class Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string text;
    bool present = j_.contains(key);
    get(key, text);
    if (present) out = parse(text);
  }

  void get_path(const std::string& key, std::filesystem::path& out) {
    std::string text = out.string();
    get(key, text);
    out = text;
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError("unknown config key '" + path_ + "." + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_augment(const json& j, const std::string& path, AugmentParams& a) {
  Section s(j, path);
  s.get("brightness", a.brightness);
  s.get("saturation", a.saturation);
  s.get("contrast", a.contrast);
  s.get("translate", a.translate_crop);
  s.get("cutout", a.cutout);
  s.get("flip", a.flip);
  s.get("brightness_magnitude", a.brightness_mag);
  s.get("saturation_magnitude", a.saturation_mag);
  s.get("contrast_magnitude", a.contrast_mag);
  s.get("translate_magnitude", a.translate_mag);
  s.get("cutout_magnitude", a.cutout_mag);
  s.finish();
}

json augment_json(const AugmentParams& a) {
  return {{"brightness", a.brightness},
          {"saturation", a.saturation},
          {"contrast", a.contrast},
          {"translate", a.translate_crop},
          {"cutout", a.cutout},
          {"flip", a.flip},
          {"brightness_magnitude", a.brightness_mag},
          {"saturation_magnitude", a.saturation_mag},
          {"contrast_magnitude", a.contrast_mag},
          {"translate_magnitude", a.translate_mag},
          {"cutout_magnitude", a.cutout_mag}};
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section root(j, "config");
  root.get("seed", c.seed);
  root.get_path("output_dir", c.output_dir);

  if (const json* e = root.child("encoder")) {
    Section s(*e, "encoder");
    s.get("distill", c.encoder.distill);
    s.get("eval", c.encoder.eval);
    s.get("weight_seed", c.encoder.weight_seed);
    s.finish();
  }
  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    s.get_enum("source", c.data.source, parse_data_source);
    s.get("num_classes", c.data.toy.num_classes);
    s.get("per_class", c.data.toy.per_class);
    s.get("resolution", c.data.toy.resolution);
    s.get("noise_std", c.data.toy.noise_std);
    s.get("hue_confusion", c.data.toy.hue_confusion);
    s.get("validation_per_class", c.data.validation_per_class);
    s.get("feature_spread", c.data.feature_spread);
    s.get_path("train_path", c.data.train_path);
    s.get_path("validation_path", c.data.validation_path);
    s.get("stats_batch_size", c.data.stats_batch_size);
    s.finish();
  }
  if (const json* d = root.child("distill")) {
    Section s(*d, "distill");
    DistillConfig& x = c.distill;
    s.get_enum("method", x.method, parse_distill_method);
    s.get_enum("w_mode", x.lgm_w_mode, parse_head_mode);
    s.get_enum("aggregation", x.aggregation, parse_aggregation);
    s.get("iterations", x.iterations);
    s.get("level_interval", x.level_interval);
    s.get("learning_rate", x.learning_rate);
    s.get("adam_beta1", x.adam_beta1);
    s.get("adam_beta2", x.adam_beta2);
    s.get("adam_epsilon", x.adam_epsilon);
    s.get("augmentations_per_batch", x.augmentations_per_batch);
    s.get("real_batch_per_class", x.real_batch_per_class);
    s.get("head_sigma", x.head_sigma);
    s.get("base_resolution", x.base_resolution);
    s.get("init_std", x.init_std);
    s.get("plateau_window", x.plateau_window);
    s.get("plateau_tolerance", x.plateau_tolerance);
    if (const json* a = s.child("augment")) read_augment(*a, s.path("augment"), x.augment);
    s.finish();
  }
  if (const json* e = root.child("eval")) {
    Section s(*e, "eval");
    EvalConfig& x = c.eval;
    s.get_enum("strategy", x.strategy, parse_eval_strategy);
    s.get("inherit_initial_parameters", x.inherit_initial_parameters);
    s.get("soft_label_alpha", x.soft_label_alpha);
    s.get("iterations", x.iterations);
    s.get("probe_lr", x.probe_lr);
    s.get("projector_lr", x.projector_lr);
    s.get("golden_iterations", x.golden_iterations);
    s.get("golden_lr", x.golden_lr);
    if (e->contains("st_classifier_iterations") && !(*e)["st_classifier_iterations"].is_null()) {
      std::size_t v = 0;
      s.get("st_classifier_iterations", v);
      x.st_classifier_iterations = v;
    } else {
      s.child("st_classifier_iterations");
    }
    s.get("train_augmentation", x.train_augmentation);
    if (const json* a = s.child("augment")) read_augment(*a, s.path("augment"), x.augment);
    s.finish();
  }
  if (const json* b = root.child("baseline")) {
    Section s(*b, "baseline");
    s.get_enum("method", c.baseline.method, parse_baseline_method);
    s.finish();
  }
  if (const json* t = root.child("theory")) {
    Section s(*t, "theory");
    s.get("num_classes", c.theory.num_classes);
    s.get("feature_dim", c.theory.feature_dim);
    s.get("sigma_w", c.theory.sigma_w);
    s.get("trials", c.theory.trials);
    s.finish();
  }
  if (const json* v = root.child("viz")) {
    Section s(*v, "viz");
    s.get("k_classes", c.viz.k_classes);
    s.finish();
  }
  root.finish();
  c.propagate_seed();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError("cannot parse config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir.string();
  j["encoder"] = {{"distill", encoder.distill}, {"eval", encoder.eval}, {"weight_seed", encoder.weight_seed}};
  j["data"] = {{"source", to_string(data.source)},
               {"num_classes", data.toy.num_classes},
               {"per_class", data.toy.per_class},
               {"resolution", data.toy.resolution},
               {"noise_std", data.toy.noise_std},
               {"hue_confusion", data.toy.hue_confusion},
               {"validation_per_class", data.validation_per_class},
               {"feature_spread", data.feature_spread},
               {"train_path", data.train_path.string()},
               {"validation_path", data.validation_path.string()},
               {"stats_batch_size", data.stats_batch_size}};
  j["distill"] = {{"method", sfm::to_string(distill.method)},
                  {"w_mode", sfm::to_string(distill.lgm_w_mode)},
                  {"aggregation", sfm::to_string(distill.aggregation)},
                  {"iterations", distill.iterations},
                  {"level_interval", distill.level_interval},
                  {"learning_rate", distill.learning_rate},
                  {"adam_beta1", distill.adam_beta1},
                  {"adam_beta2", distill.adam_beta2},
                  {"adam_epsilon", distill.adam_epsilon},
                  {"augmentations_per_batch", distill.augmentations_per_batch},
                  {"real_batch_per_class", distill.real_batch_per_class},
                  {"head_sigma", distill.head_sigma},
                  {"base_resolution", distill.base_resolution},
                  {"init_std", distill.init_std},
                  {"plateau_window", distill.plateau_window},
                  {"plateau_tolerance", distill.plateau_tolerance},
                  {"augment", augment_json(distill.augment)}};
  j["eval"] = {{"strategy", sfm::to_string(eval.strategy)},
               {"inherit_initial_parameters", eval.inherit_initial_parameters},
               {"soft_label_alpha", eval.soft_label_alpha},
               {"iterations", eval.iterations},
               {"probe_lr", eval.probe_lr},
               {"projector_lr", eval.projector_lr},
               {"golden_iterations", eval.golden_iterations},
               {"golden_lr", eval.golden_lr},
               {"st_classifier_iterations",
                eval.st_classifier_iterations ? json(*eval.st_classifier_iterations) : json(nullptr)},
               {"train_augmentation", eval.train_augmentation},
               {"augment", augment_json(eval.augment)}};
  j["baseline"] = {{"method", sfm::to_string(baseline.method)}};
  j["theory"] = {{"num_classes", theory.num_classes},
                 {"feature_dim", theory.feature_dim},
                 {"sigma_w", theory.sigma_w},
                 {"trials", theory.trials}};
  j["viz"] = {{"k_classes", viz.k_classes}};
  return j;
}

void RunConfig::propagate_seed() {
  data.toy.seed = seed;
  distill.seed = seed;
  eval.seed = seed;
  theory.seed = seed;
}

void RunConfig::validate() const {
  if (encoder.distill.empty()) throw ValidationError("encoder.distill must name an encoder");
  if (data.toy.num_classes < 2) throw ValidationError("data.num_classes must be at least 2");
  if (data.toy.per_class < 1) throw ValidationError("data.per_class must be at least 1");
  if (data.validation_per_class < 1) throw ValidationError("data.validation_per_class must be at least 1");
  if (data.stats_batch_size < 1) throw ValidationError("data.stats_batch_size must be at least 1");
  if (data.source == DataSource::kFile && (data.train_path.empty() || data.validation_path.empty())) {
    throw ValidationError("data.source = file needs data.train_path and data.validation_path");
  }
  if (viz.k_classes < 1) throw ValidationError("viz.k_classes must be at least 1");
  distill.validate();
  eval.validate();
  theory.validate();
}

namespace {

std::uint64_t hash_json(const json& j) { return Fingerprint().add(j.dump()).value(); }

}  // namespace

std::uint64_t RunConfig::fingerprint() const {
  json j = to_json();
  j.erase("output_dir");
  return hash_json(j);
}

std::uint64_t RunConfig::stage_fingerprint(const std::string& stage) const {
  const json full = to_json();
  json j = {{"seed", seed},
            {"encoder", {{"distill", encoder.distill}, {"weight_seed", encoder.weight_seed}}},
            {"data", full["data"]}};
  if (stage == "stats") return hash_json(j);
  if (stage == "golden") {
    j["golden"] = {{"iterations", eval.golden_iterations}, {"lr", eval.golden_lr}};
    return hash_json(j);
  }
  if (stage == "distill") {
    j["distill"] = full["distill"];
    return hash_json(j);
  }
  throw ValidationError("unknown stage '" + stage + "'");
}

}  // namespace sfm
