#include "disperse/config.hpp"

#include <fstream>
#include <stdexcept>

namespace disperse::config {

namespace {

using nlohmann::json;

[[noreturn]] void field_error(const std::string& section,
                              const std::string& key, const std::string& why) {
  throw std::invalid_argument("config field '" + section + "." + key +
                              "': " + why);
}

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) field_error(name_, "", "must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      field_error(name_, key, "wrong type");
    }
  }

  void known_keys(std::initializer_list<const char*> keys) const {
    for (const auto& [k, _] : j_.items()) {
      bool ok = false;
      for (const char* known : keys) ok = ok || k == known;
      if (!ok) field_error(name_, k, "unknown field");
    }
  }

  const json& raw() const { return j_; }

 private:
  const json& j_;
  std::string name_;
};

eval::GalleryMode parse_mode(const std::string& s) {
  if (s == "base") return eval::GalleryMode::kBase;
  if (s == "extended") return eval::GalleryMode::kExtended;
  field_error("eval", "mode", "must be 'base' or 'extended'");
}

model::LrSchedule parse_schedule(const std::string& s) {
  if (s == "constant") return model::LrSchedule::kConstant;
  if (s == "linear-decay") return model::LrSchedule::kLinearDecay;
  field_error("train", "lr_schedule", "must be 'constant' or 'linear-decay'");
}

}  // namespace

unlearn::UnlearnConfig parse_unlearn(const json& j,
                                     const unlearn::UnlearnConfig& base) {
  unlearn::UnlearnConfig u = base;
  Section s(j, "unlearn");
  s.known_keys({"method", "lr", "iterations", "batch", "identities_per_batch",
                "momentum", "weight_decay", "m_disp", "lambda_retain",
                "epsilon_fgsm", "lip_noise_std", "lip_n", "salun_fraction",
                "salun_loss", "tau", "seed", "head_freeze", "augment_flip"});
  if (j.contains("method")) {
    std::string name;
    s.get("method", name);
    const auto m = unlearn::parse_method(name);
    if (!m) {
      std::string valid;
      for (auto mm : {unlearn::Method::kDispersion,
                      unlearn::Method::kHardDispersion,
                      unlearn::Method::kRandomLabeling,
                      unlearn::Method::kGradientAscent,
                      unlearn::Method::kBoundaryShrink,
                      unlearn::Method::kLipschitz,
                      unlearn::Method::kContrastive})
        valid += (valid.empty() ? "" : ", ") + unlearn::method_name(mm);
      field_error("unlearn", "method", "unknown method (valid: " + valid + ")");
    }
    u.method = *m;
  }
  s.get("lr", u.lr);
  s.get("iterations", u.iterations);
  s.get("batch", u.batch);
  s.get("identities_per_batch", u.identities_per_batch);
  s.get("momentum", u.momentum);
  s.get("weight_decay", u.weight_decay);
  s.get("m_disp", u.m_disp);
  s.get("lambda_retain", u.lambda_retain);
  s.get("epsilon_fgsm", u.epsilon_fgsm);
  s.get("lip_noise_std", u.lip_noise_std);
  s.get("lip_n", u.lip_n);
  s.get("salun_fraction", u.salun_fraction);
  if (j.contains("salun_loss")) {
    std::string name;
    s.get("salun_loss", name);
    const auto sl = unlearn::parse_saliency(name);
    if (!sl)
      field_error("unlearn", "salun_loss",
                  "must be one of cosface-ga, lipschitz, emb-norm");
    u.salun_loss = *sl;
  }
  s.get("tau", u.tau);
  s.get("seed", u.seed);
  s.get("head_freeze", u.head_freeze);
  s.get("augment_flip", u.augment_flip);
  if (u.salun_fraction < 0.0 || u.salun_fraction > 1.0)
    field_error("unlearn", "salun_fraction", "must be in [0, 1]");
  return u;
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object())
    throw std::invalid_argument("config root must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (k != "data" && k != "encoder" && k != "train" && k != "unlearn" &&
        k != "eval" && k != "output_dir" && k != "max_sweep_runs")
      throw std::invalid_argument("config field '" + k + "': unknown section");
  }

  ExperimentConfig c;
  if (j.contains("data")) {
    Section s(j.at("data"), "data");
    s.known_keys({"num_identities", "per_identity", "input_dim",
                  "prototype_dim", "noise_std", "seed", "n_forget",
                  "train_frac", "distractor_multiplier",
                  "duplicate_fraction"});
    s.get("num_identities", c.data.num_identities);
    s.get("per_identity", c.data.per_identity);
    s.get("input_dim", c.data.input_dim);
    s.get("prototype_dim", c.data.prototype_dim);
    s.get("noise_std", c.data.noise_std);
    s.get("seed", c.data.seed);
    s.get("n_forget", c.data.n_forget);
    s.get("train_frac", c.data.train_frac);
    s.get("distractor_multiplier", c.data.distractor_multiplier);
    s.get("duplicate_fraction", c.data.duplicate_fraction);
  }
  if (j.contains("encoder")) {
    Section s(j.at("encoder"), "encoder");
    s.known_keys({"embed_dim", "hidden", "scale_s", "margin_m"});
    s.get("embed_dim", c.encoder.embed_dim);
    s.get("hidden", c.encoder.hidden);
    s.get("scale_s", c.encoder.scale_s);
    s.get("margin_m", c.encoder.margin_m);
  }
  if (j.contains("train")) {
    Section s(j.at("train"), "train");
    s.known_keys({"lr", "momentum", "weight_decay", "batch", "epochs", "seed",
                  "lr_schedule", "augment_flip"});
    s.get("lr", c.train.lr);
    s.get("momentum", c.train.momentum);
    s.get("weight_decay", c.train.weight_decay);
    s.get("batch", c.train.batch);
    s.get("epochs", c.train.epochs);
    s.get("seed", c.train.seed);
    s.get("augment_flip", c.train.augment_flip);
    if (j.at("train").contains("lr_schedule")) {
      std::string sched;
      s.get("lr_schedule", sched);
      c.train.lr_schedule = parse_schedule(sched);
    }
  }
  if (j.contains("unlearn")) {
    c.unlearn_raw = j.at("unlearn");
    // Grid cells are validated at expansion; here we parse treating single
    // values only, skipping any list-valued field.
    json scalars = json::object();
    for (const auto& [k, v] : c.unlearn_raw.items())
      if (!v.is_array()) scalars[k] = v;
    c.unlearn = parse_unlearn(scalars, unlearn::UnlearnConfig{});
  }
  if (j.contains("eval")) {
    Section s(j.at("eval"), "eval");
    s.known_keys({"mode", "base_distractors", "extra_distractors", "seeds"});
    if (j.at("eval").contains("mode")) {
      std::string mode;
      s.get("mode", mode);
      c.eval.mode = parse_mode(mode);
    }
    s.get("base_distractors", c.eval.base_distractors);
    s.get("extra_distractors", c.eval.extra_distractors);
    s.get("seeds", c.eval.seeds);
    if (c.eval.seeds.empty())
      field_error("eval", "seeds", "must list at least one seed");
  }
  if (j.contains("output_dir")) {
    if (!j.at("output_dir").is_string())
      throw std::invalid_argument("config field 'output_dir': wrong type");
    c.output_dir = j.at("output_dir").get<std::string>();
  }
  if (j.contains("max_sweep_runs"))
    c.max_sweep_runs = j.at("max_sweep_runs").get<std::size_t>();
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + path + ": " +
                                e.what());
  }
  return parse_config(j);
}

nlohmann::json unlearn_to_json(const unlearn::UnlearnConfig& u) {
  return json{{"method", unlearn::method_name(u.method)},
              {"lr", u.lr},
              {"iterations", u.iterations},
              {"batch", u.batch},
              {"identities_per_batch", u.identities_per_batch},
              {"momentum", u.momentum},
              {"weight_decay", u.weight_decay},
              {"m_disp", u.m_disp},
              {"lambda_retain", u.lambda_retain},
              {"epsilon_fgsm", u.epsilon_fgsm},
              {"lip_noise_std", u.lip_noise_std},
              {"lip_n", u.lip_n},
              {"salun_fraction", u.salun_fraction},
              {"salun_loss", unlearn::saliency_name(u.salun_loss)},
              {"tau", u.tau},
              {"seed", u.seed},
              {"head_freeze", u.head_freeze},
              {"augment_flip", u.augment_flip}};
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  json j;
  j["data"] = {{"num_identities", c.data.num_identities},
               {"per_identity", c.data.per_identity},
               {"input_dim", c.data.input_dim},
               {"prototype_dim", c.data.prototype_dim},
               {"noise_std", c.data.noise_std},
               {"seed", c.data.seed},
               {"n_forget", c.data.n_forget},
               {"train_frac", c.data.train_frac},
               {"distractor_multiplier", c.data.distractor_multiplier},
               {"duplicate_fraction", c.data.duplicate_fraction}};
  j["encoder"] = {{"embed_dim", c.encoder.embed_dim},
                  {"hidden", c.encoder.hidden},
                  {"scale_s", c.encoder.scale_s},
                  {"margin_m", c.encoder.margin_m}};
  j["train"] = {
      {"lr", c.train.lr},
      {"momentum", c.train.momentum},
      {"weight_decay", c.train.weight_decay},
      {"batch", c.train.batch},
      {"epochs", c.train.epochs},
      {"seed", c.train.seed},
      {"lr_schedule", c.train.lr_schedule == model::LrSchedule::kConstant
                          ? "constant"
                          : "linear-decay"},
      {"augment_flip", c.train.augment_flip}};
  j["unlearn"] = c.unlearn_raw.is_null() ? unlearn_to_json(c.unlearn)
                                         : c.unlearn_raw;
  j["eval"] = {{"mode", c.eval.mode == eval::GalleryMode::kBase ? "base"
                                                                : "extended"},
               {"base_distractors", c.eval.base_distractors},
               {"extra_distractors", c.eval.extra_distractors},
               {"seeds", c.eval.seeds}};
  j["output_dir"] = c.output_dir;
  j["max_sweep_runs"] = c.max_sweep_runs;
  return j;
}

std::uint64_t config_hash(const nlohmann::json& canonical) {
  const std::string dump = canonical.dump();
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  return config_hash(config_to_json(c));
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::vector<unlearn::UnlearnConfig> expand_sweep_grid(
    const json& unlearn_section, const unlearn::UnlearnConfig& base,
    std::size_t max_runs) {
  if (!unlearn_section.is_object())
    throw std::invalid_argument("sweep: unlearn section must be an object");

  // Normalize every field to a list, then take the cross product in key order.
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  for (const auto& [k, v] : unlearn_section.items()) {
    std::vector<json> values;
    if (v.is_array()) {
      if (v.empty())
        throw std::invalid_argument("sweep: field '" + k + "' has no values");
      for (const auto& x : v) values.push_back(x);
    } else {
      values.push_back(v);
    }
    axes.emplace_back(k, std::move(values));
  }

  std::size_t cells = 1;
  for (const auto& [_, values] : axes) {
    cells *= values.size();
    if (cells > max_runs)
      throw std::invalid_argument(
          "sweep: grid expands to more than max_sweep_runs (" +
          std::to_string(max_runs) + ") cells");
  }

  std::vector<unlearn::UnlearnConfig> out;
  std::vector<std::size_t> pick(axes.size(), 0);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    json j = json::object();
    std::size_t rem = cell;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const auto& [key, values] = axes[a];
      j[key] = values[rem % values.size()];
      rem /= values.size();
    }
    out.push_back(parse_unlearn(j, base));
  }
  return out;
}

}  // namespace disperse::config
