#include "tme/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tme::cfg {

using nlohmann::json;

std::string to_string(MissingPolicy p) {
  return p == MissingPolicy::native ? "native" : "median-impute";
}

MissingPolicy policy_from_string(const std::string& s) {
  if (s == "native") return MissingPolicy::native;
  if (s == "median-impute") return MissingPolicy::median_impute;
  throw EngineError("unknown missing policy '" + s + "'");
}

namespace {

void expect_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw EngineError("config section '" + where + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw EngineError("unknown key '" + key + "' in " + where);
}

// Accepts "x" or ["x", "y"]; rejects duplicates so grids stay well defined.
std::vector<std::string> str_list(const json& v, const std::string& where) {
  std::vector<std::string> out;
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_string()) throw EngineError("entries of '" + where + "' must be strings");
      out.push_back(e.get<std::string>());
    }
  } else {
    throw EngineError("'" + where + "' must be a string or an array of strings");
  }
  if (out.empty()) throw EngineError("'" + where + "' must not be empty");
  std::set<std::string> seen;
  for (const auto& s : out)
    if (!seen.insert(s).second) throw EngineError("duplicate entry '" + s + "' in " + where);
  return out;
}

long int_field(const json& j, const std::string& key, const std::string& where, long fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer())
    throw EngineError("'" + key + "' in " + where + " must be an integer");
  return j.at(key).get<long>();
}

double num_field(const json& j, const std::string& key, const std::string& where,
                 double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw EngineError("'" + key + "' in " + where + " must be a number");
  return j.at(key).get<double>();
}

DatasetRef parse_dataset(const json& j, std::size_t index) {
  const std::string where = "datasets[" + std::to_string(index) + "]";
  expect_keys(j, where, {"name", "manifest", "synthetic"});
  DatasetRef ref;
  if (!j.contains("name") || !j.at("name").is_string() || j.at("name").get<std::string>().empty())
    throw EngineError(where + " needs a non-empty 'name'");
  ref.name = j.at("name").get<std::string>();
  const bool has_manifest = j.contains("manifest");
  const bool has_synth = j.contains("synthetic");
  if (has_manifest == has_synth)
    throw EngineError(where + " needs exactly one of 'manifest' or 'synthetic'");
  if (has_manifest) {
    if (!j.at("manifest").is_string()) throw EngineError(where + ".manifest must be a string");
    ref.manifest = j.at("manifest").get<std::string>();
    if (ref.manifest.empty()) throw EngineError(where + ".manifest must not be empty");
    return ref;
  }
  const json& s = j.at("synthetic");
  const std::string swhere = where + ".synthetic";
  expect_keys(s, swhere,
              {"samples", "features", "classes", "image_side", "seed", "mnar_column",
               "mnar_fraction"});
  SyntheticRef sr;
  sr.spec.n = int_field(s, "samples", swhere, sr.spec.n);
  sr.spec.d = int_field(s, "features", swhere, sr.spec.d);
  sr.spec.classes = static_cast<int>(int_field(s, "classes", swhere, sr.spec.classes));
  sr.spec.side = static_cast<int>(int_field(s, "image_side", swhere, sr.spec.side));
  sr.spec.seed = static_cast<uint64_t>(int_field(s, "seed", swhere, 0));
  sr.spec.validate();
  sr.mnar_column = int_field(s, "mnar_column", swhere, -1);
  sr.mnar_fraction = num_field(s, "mnar_fraction", swhere, 0.0);
  if (sr.mnar_column >= sr.spec.d)
    throw EngineError(swhere + ".mnar_column out of range for " + std::to_string(sr.spec.d) +
                      " features");
  if (sr.mnar_fraction < 0.0 || sr.mnar_fraction > 1.0)
    throw EngineError(swhere + ".mnar_fraction must lie in [0,1]");
  ref.synthetic = sr;
  return ref;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw EngineError(std::string("config is not valid JSON: ") + e.what());
  }
  expect_keys(j, "config",
              {"version", "out", "seeds", "datasets", "tabular", "image", "fusion", "mode",
               "missing_policy", "baselines", "mask", "train", "pfn_weights", "k",
               "strict_probe"});

  if (!j.contains("version") || !j.at("version").is_number_integer())
    throw EngineError("config needs an integer 'version'");
  if (j.at("version").get<long>() != 1)
    throw EngineError("unsupported config version " + j.at("version").dump() +
                      " (this build reads version 1)");

  ExperimentConfig cfg;
  cfg.text = json_text;

  if (j.contains("out")) {
    if (!j.at("out").is_string() || j.at("out").get<std::string>().empty())
      throw EngineError("'out' must be a non-empty string");
    cfg.out = j.at("out").get<std::string>();
  }

  if (j.contains("seeds")) {
    if (!j.at("seeds").is_array() || j.at("seeds").empty())
      throw EngineError("'seeds' must be a non-empty array of integers");
    cfg.seeds.clear();
    std::set<uint64_t> seen;
    for (const auto& e : j.at("seeds")) {
      if (!e.is_number_integer() || e.get<long>() < 0)
        throw EngineError("'seeds' entries must be non-negative integers");
      const auto s = e.get<uint64_t>();
      if (!seen.insert(s).second)
        throw EngineError("duplicate seed " + std::to_string(s) + " in 'seeds'");
      cfg.seeds.push_back(s);
    }
  }

  if (!j.contains("datasets") || !j.at("datasets").is_array() || j.at("datasets").empty())
    throw EngineError("'datasets' must be a non-empty array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < j.at("datasets").size(); ++i) {
    auto ref = parse_dataset(j.at("datasets")[i], i);
    if (!names.insert(ref.name).second)
      throw EngineError("duplicate dataset name '" + ref.name + "'");
    cfg.datasets.push_back(std::move(ref));
  }

  if (j.contains("tabular")) {
    cfg.tabular.clear();
    for (const auto& s : str_list(j.at("tabular"), "tabular"))
      cfg.tabular.push_back(model::tabular_from_string(s));
  }

  if (j.contains("image")) {
    const json& im = j.at("image");
    expect_keys(im, "image", {"backbone", "dim", "weights"});
    if (im.contains("backbone")) {
      if (!im.at("backbone").is_string()) throw EngineError("'backbone' in image must be a string");
      cfg.image.backbone = enc::backbone_from_string(im.at("backbone").get<std::string>());
    }
    cfg.image.d_i = int_field(im, "dim", "image", cfg.image.d_i);
    if (cfg.image.d_i < 1) throw EngineError("'dim' in image must be positive");
    if (im.contains("weights")) {
      if (!im.at("weights").is_string()) throw EngineError("'weights' in image must be a string");
      cfg.image.weights = im.at("weights").get<std::string>();
    }
  }

  if (j.contains("fusion")) {
    cfg.fusions.clear();
    for (const auto& s : str_list(j.at("fusion"), "fusion"))
      cfg.fusions.push_back(fusion::strategy_from_string(s));
  }

  if (j.contains("mode")) {
    cfg.modes.clear();
    for (const auto& s : str_list(j.at("mode"), "mode"))
      cfg.modes.push_back(enc::mode_from_string(s));
  }

  if (j.contains("missing_policy")) {
    cfg.policies.clear();
    for (const auto& s : str_list(j.at("missing_policy"), "missing_policy"))
      cfg.policies.push_back(policy_from_string(s));
  }

  if (j.contains("baselines")) {
    if (!j.at("baselines").is_array())
      throw EngineError("'baselines' must be an array (possibly empty)");
    std::set<std::string> seen;
    for (const auto& e : j.at("baselines")) {
      if (!e.is_string()) throw EngineError("'baselines' entries must be strings");
      const auto s = e.get<std::string>();
      if (!seen.insert(s).second) throw EngineError("duplicate baseline '" + s + "'");
      auto b = model::branches_from_string(s);
      if (b == model::Branches::both)
        throw EngineError("'baselines' lists unimodal ablations only");
      cfg.baselines.push_back(b);
    }
  }

  if (j.contains("mask")) {
    const json& m = j.at("mask");
    expect_keys(m, "mask", {"ratios", "scope", "seed"});
    if (m.contains("ratios")) {
      if (!m.at("ratios").is_array()) throw EngineError("'ratios' in mask must be an array");
      for (const auto& e : m.at("ratios")) {
        if (!e.is_number()) throw EngineError("'ratios' entries must be numbers");
        const double r = e.get<double>();
        if (r < 0.0 || r > 1.0) throw EngineError("mask ratios must lie in [0,1]");
        cfg.mask.ratios.push_back(r);
      }
    }
    if (m.contains("scope")) {
      if (!m.at("scope").is_string()) throw EngineError("'scope' in mask must be a string");
      cfg.mask.scope = exp::scope_from_string(m.at("scope").get<std::string>());
    }
    cfg.mask.seed = static_cast<uint64_t>(int_field(m, "seed", "mask", 0));
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    expect_keys(t, "train",
                {"epochs", "batch", "lr0", "decay", "decay_every", "patience", "weight_decay"});
    cfg.train.epochs = int_field(t, "epochs", "train", cfg.train.epochs);
    cfg.train.batch = int_field(t, "batch", "train", cfg.train.batch);
    cfg.train.lr0 = num_field(t, "lr0", "train", cfg.train.lr0);
    cfg.train.decay = num_field(t, "decay", "train", cfg.train.decay);
    cfg.train.decay_every = int_field(t, "decay_every", "train", cfg.train.decay_every);
    cfg.train.patience = int_field(t, "patience", "train", cfg.train.patience);
    cfg.train.weight_decay = num_field(t, "weight_decay", "train", cfg.train.weight_decay);
    cfg.train.validate();
  }

  if (j.contains("pfn_weights")) {
    if (!j.at("pfn_weights").is_string()) throw EngineError("'pfn_weights' must be a string");
    cfg.pfn_weights = j.at("pfn_weights").get<std::string>();
  }

  cfg.k = int_field(j, "k", "config", cfg.k);
  if (cfg.k < 1) throw EngineError("'k' must be positive");

  if (j.contains("strict_probe")) {
    if (!j.at("strict_probe").is_boolean()) throw EngineError("'strict_probe' must be a boolean");
    cfg.strict_probe = j.at("strict_probe").get<bool>();
  }

  // The mlp branch rejects missing cells, so it can only run imputed.
  const bool has_mlp =
      std::find(cfg.tabular.begin(), cfg.tabular.end(), model::TabularBranch::mlp) !=
      cfg.tabular.end();
  const bool has_impute =
      std::find(cfg.policies.begin(), cfg.policies.end(), MissingPolicy::median_impute) !=
      cfg.policies.end();
  if (has_mlp && !has_impute)
    throw EngineError("mlp tabular encoder requires the median-impute missing policy");

  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EngineError("cannot read config: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

}  // namespace tme::cfg
