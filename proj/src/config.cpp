#include "sar/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "sar/error.hpp"
#include "sar/manifest.hpp"

namespace sar {

namespace {

using nlohmann::json;

enum class Kind { Number, Integer, Unsigned, String, Boolean, StringList };

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Number: return "number";
    case Kind::Integer: return "integer";
    case Kind::Unsigned: return "unsigned integer";
    case Kind::String: return "string";
    case Kind::Boolean: return "boolean";
    case Kind::StringList: return "string list";
  }
  return "?";
}

struct Field {
  std::string key;
  Kind kind;
  std::string help;
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
};

template <class Get, class Set>
Field field(std::string key, Kind kind, std::string help, Get get, Set set) {
  return {std::move(key), kind, std::move(help), std::move(get), std::move(set)};
}

#define SAR_INT(KEY, EXPR, HELP)                                                   \
  field(KEY, Kind::Integer, HELP, [](const TrainConfig& c) { return json(c.EXPR); }, \
        [](TrainConfig& c, const json& j) { c.EXPR = j.get<int>(); })
#define SAR_NUM(KEY, EXPR, HELP)                                                   \
  field(KEY, Kind::Number, HELP, [](const TrainConfig& c) { return json(c.EXPR); }, \
        [](TrainConfig& c, const json& j) { c.EXPR = j.get<double>(); })

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      SAR_NUM("lambda", lambda, "weight of the auxiliary loss"),
      SAR_INT("epochs", epochs, "training epochs"),
      SAR_INT("batchSize", batch_size, "samples per optimizer step"),
      SAR_NUM("lr", lr, "initial learning rate"),
      SAR_NUM("minLr", min_lr, "learning rate at the final step (cosine schedule)"),
      SAR_NUM("weightDecay", weight_decay, "decoupled weight decay on weight matrices"),
      SAR_NUM("beta1", beta1, "Adam first-moment decay"),
      SAR_NUM("beta2", beta2, "Adam second-moment decay"),
      SAR_NUM("adamEps", adam_eps, "Adam denominator epsilon"),
      field("seed", Kind::Unsigned, "master random seed",
            [](const TrainConfig& c) { return json(c.seed); },
            [](TrainConfig& c, const json& j) { c.seed = j.get<std::uint64_t>(); }),
      field("auxLoss", Kind::String, "none | spatial_entropy | total_variation",
            [](const TrainConfig& c) { return json(std::string(to_string(c.aux_loss))); },
            [](TrainConfig& c, const json& j) {
              c.aux_loss = parse_aux_loss(j.get<std::string>());
            }),
      field("precision", Kind::String, "float32 | float64",
            [](const TrainConfig& c) { return json(std::string(to_string(c.precision))); },
            [](TrainConfig& c, const json& j) {
              c.precision = parse_precision(j.get<std::string>());
            }),
      SAR_INT("testSamples", test_samples, "size of the held-out set"),
      SAR_INT("evalEvery", eval_every, "epochs between test evaluations (0: last only)"),
      SAR_INT("checkpointEvery", checkpoint_every, "epochs between checkpoints (0: last only)"),
      SAR_NUM("jaccardFraction", jaccard_fraction, "attention mass kept for Jaccard scoring"),

      SAR_INT("model.imageSize", model.image_size, "image side in pixels"),
      SAR_INT("model.patchSize", model.patch_size, "patch side in pixels"),
      SAR_INT("model.channels", model.channels, "input channels"),
      SAR_INT("model.embedDim", model.embed_dim, "token width d"),
      SAR_INT("model.heads", model.heads, "attention heads per block"),
      SAR_INT("model.blocks", model.blocks, "transformer blocks"),
      SAR_NUM("model.mlpRatio", model.mlp_ratio, "MLP hidden width / d"),
      SAR_INT("model.numClasses", model.num_classes, "classifier outputs"),
      field("model.lastBlock", Kind::String,
            "A (standard) | B (no MSA skip) | C (no MSA skip, no LN) | D (no skips)",
            [](const TrainConfig& c) { return json(std::string(to_string(c.model.last_block))); },
            [](TrainConfig& c, const json& j) {
              c.model.last_block = parse_block_variant(j.get<std::string>());
            }),

      field("dataset.classes", Kind::StringList, "shape classes: rectangle, ellipse, cross, triangle",
            [](const TrainConfig& c) {
              json a = json::array();
              for (auto k : c.dataset.classes) a.push_back(std::string(to_string(k)));
              return a;
            },
            [](TrainConfig& c, const json& j) {
              c.dataset.classes.clear();
              for (const auto& s : j) c.dataset.classes.push_back(parse_shape_kind(s.get<std::string>()));
            }),
      SAR_INT("dataset.samples", dataset.samples, "training images"),
      SAR_INT("dataset.minShapes", dataset.min_shapes, "fewest shapes per image"),
      SAR_INT("dataset.maxShapes", dataset.max_shapes, "most shapes per image"),
      SAR_INT("dataset.minSize", dataset.min_size, "smallest shape side in pixels"),
      SAR_INT("dataset.maxSize", dataset.max_size, "largest shape side in pixels"),
      SAR_NUM("dataset.noise", dataset.noise, "std of Gaussian pixel noise"),

      SAR_NUM("loss.epsilon", loss.epsilon, "mass added per support cell"),
      field("loss.detachMean", Kind::Boolean, "treat the threshold mean as a constant",
            [](const TrainConfig& c) { return json(c.loss.detach_mean); },
            [](TrainConfig& c, const json& j) { c.loss.detach_mean = j.get<bool>(); }),
  };
  return f;
}

#undef SAR_INT
#undef SAR_NUM

bool kind_matches(Kind k, const json& j) {
  switch (k) {
    case Kind::Number: return j.is_number();
    case Kind::Integer: return j.is_number_integer();
    case Kind::Unsigned: return j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0);
    case Kind::String: return j.is_string();
    case Kind::Boolean: return j.is_boolean();
    case Kind::StringList:
      if (!j.is_array()) return false;
      for (const auto& e : j) {
        if (!e.is_string()) return false;
      }
      return true;
  }
  return false;
}

json::json_pointer pointer(const std::string& dotted) {
  std::string p;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) p += "/" + part;
  return json::json_pointer(p);
}

// Flatten an object into dotted leaf keys; arrays count as leaves.
void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, *it);
    }
  }
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigParse, what + ": " + e.what());
  }
}

TrainConfig from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::SchemaViolation, "config must be a JSON object");
  std::vector<std::pair<std::string, json>> leaves;
  flatten(doc, "", leaves);
  TrainConfig cfg;
  for (const auto& [key, value] : leaves) {
    const auto& fs = fields();
    const auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return f.key == key; });
    if (it == fs.end()) throw Error(ErrorCode::SchemaViolation, "unknown config key '" + key + "'");
    if (!kind_matches(it->kind, value)) {
      throw Error(ErrorCode::SchemaViolation, "config key '" + key + "' expects a " +
                                                  kind_name(it->kind) + ", got " + value.dump());
    }
    try {
      it->set(cfg, value);
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaViolation, "config key '" + key + "': " + e.what());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, "config key '" + key + "': " + e.what());
    }
  }
  // The dataset renders at the model's resolution.
  cfg.dataset.image_size = cfg.model.image_size;
  cfg.dataset.patch_size = cfg.model.patch_size;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::SchemaViolation, e.what());
  }
  return cfg;
}

}  // namespace

const std::vector<SchemaEntry>& config_schema() {
  static const std::vector<SchemaEntry> s = [] {
    std::vector<SchemaEntry> out;
    for (const auto& f : fields()) out.push_back({f.key, kind_name(f.kind), f.help});
    return out;
  }();
  return s;
}

std::string config_to_json(const TrainConfig& cfg, int indent) {
  json j = json::object();
  for (const auto& f : fields()) j[pointer(f.key)] = f.get(cfg);
  return j.dump(indent);
}

TrainConfig config_from_json(std::string_view text) { return from_json(parse_json(text, "config")); }

std::string apply_overrides(std::string_view json_text, std::span<const std::string> overrides) {
  json doc = parse_json(json_text, "config");
  if (!doc.is_object()) throw Error(ErrorCode::SchemaViolation, "config must be a JSON object");
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::Usage, "override '" + o + "' is not of the form key=value");
    }
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    const auto& fs = fields();
    if (std::none_of(fs.begin(), fs.end(), [&](const Field& f) { return f.key == key; })) {
      throw Error(ErrorCode::SchemaViolation, "unknown config key '" + key + "'");
    }
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    try {
      doc[pointer(key)] = value;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, "cannot set '" + key + "': " + e.what());
    }
  }
  return doc.dump();
}

TrainConfig load_config(const std::optional<std::filesystem::path>& path,
                        std::span<const std::string> overrides) {
  std::string text = "{}";
  if (path) {
    std::ifstream in(*path);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open config " + path->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
    parse_json(text, "config " + path->string());
  }
  return config_from_json(apply_overrides(text, overrides));
}

std::string config_hash(const TrainConfig& cfg) { return sha1_hex(config_to_json(cfg, -1)); }

}  // namespace sar
