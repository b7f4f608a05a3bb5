#include "lstmt/run_config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "lstmt/errors.hpp"

namespace lstmt {
namespace {

using json = nlohmann::json;

std::string to_string(LengthNorm n) { return n == LengthNorm::none ? "none" : "by_length"; }
std::string to_string(FusionRule f) { return f == FusionRule::log_mean ? "log_mean" : "prob_mean"; }

LengthNorm parse_length_norm(const std::string& s) {
  if (s == "none") return LengthNorm::none;
  if (s == "by_length") return LengthNorm::by_length;
  throw ConfigError("unknown length_norm \"" + s + "\" (expected none or by_length)");
}

FusionRule parse_fusion(const std::string& s) {
  if (s == "log_mean") return FusionRule::log_mean;
  if (s == "prob_mean") return FusionRule::prob_mean;
  throw ConfigError("unknown fusion \"" + s + "\" (expected log_mean or prob_mean)");
}

struct Field {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> put;
};

std::size_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) throw ConfigError(key + " must be a number");
  return v.get<double>();
}

std::string as_text(const std::string& key, const json& v) {
  if (!v.is_string()) throw ConfigError(key + " must be a string");
  return v.get<std::string>();
}

bool as_flag(const std::string& key, const json& v) {
  if (!v.is_boolean()) throw ConfigError(key + " must be true or false");
  return v.get<bool>();
}

#define COUNT_FIELD(name, member)                                                   \
  {                                                                                 \
    name, {                                                                         \
      [](const RunConfig& c) { return json(c.member); },                            \
          [](RunConfig& c, const json& v) { c.member = as_count(name, v); }         \
    }                                                                               \
  }
#define REAL_FIELD(name, member)                                                    \
  {                                                                                 \
    name, {                                                                         \
      [](const RunConfig& c) { return json(c.member); },                            \
          [](RunConfig& c, const json& v) { c.member = as_real(name, v); }          \
    }                                                                               \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      COUNT_FIELD("d_v", model.d_v),
      COUNT_FIELD("d_h", model.d_h),
      COUNT_FIELD("d_a", model.d_a),
      COUNT_FIELD("d_e", model.d_e),
      COUNT_FIELD("max_caption_len", model.max_caption_len),
      COUNT_FIELD("min_count", min_count),
      REAL_FIELD("learning_rate", train.learning_rate),
      {"optimizer",
       {[](const RunConfig& c) { return json(to_string(c.train.optimizer)); },
        [](RunConfig& c, const json& v) { c.train.optimizer = parse_optimizer(as_text("optimizer", v)); }}},
      REAL_FIELD("beta1", train.beta1),
      REAL_FIELD("beta2", train.beta2),
      REAL_FIELD("epsilon", train.epsilon),
      COUNT_FIELD("batch_size", train.batch_size),
      COUNT_FIELD("epochs", train.epochs),
      REAL_FIELD("grad_clip_norm", train.grad_clip_norm),
      {"seed",
       {[](const RunConfig& c) { return json(c.train.seed); },
        [](RunConfig& c, const json& v) {
          if (!v.is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
          c.train.seed = v.get<std::uint64_t>();
        }}},
      {"scst_enabled",
       {[](const RunConfig& c) { return json(c.train.scst_enabled); },
        [](RunConfig& c, const json& v) { c.train.scst_enabled = as_flag("scst_enabled", v); }}},
      {"scst_reward",
       {[](const RunConfig& c) { return json(to_string(c.train.scst_reward)); },
        [](RunConfig& c, const json& v) { c.train.scst_reward = parse_reward(as_text("scst_reward", v)); }}},
      COUNT_FIELD("scst_epochs", train.scst_epochs),
      REAL_FIELD("scst_learning_rate", train.scst_learning_rate),
      COUNT_FIELD("beam_width", decode.beam_width),
      COUNT_FIELD("max_len", decode.max_len),
      {"length_norm",
       {[](const RunConfig& c) { return json(to_string(c.decode.length_norm)); },
        [](RunConfig& c, const json& v) { c.decode.length_norm = parse_length_norm(as_text("length_norm", v)); }}},
      {"fusion",
       {[](const RunConfig& c) { return json(to_string(c.decode.fusion)); },
        [](RunConfig& c, const json& v) { c.decode.fusion = parse_fusion(as_text("fusion", v)); }}},
  };
  return table;
}

#undef COUNT_FIELD
#undef REAL_FIELD

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key \"" + key + "\"");
}

}  // namespace

RunConfig::RunConfig() { model.d_v = 0; }

void RunConfig::merge(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) field(key).put(*this, value);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  field(key).put(*this, v);
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got \"" + assignment + "\"");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  merge(j);
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [name, f] : fields()) j[name] = f.get(*this);
  return j;
}

}  // namespace lstmt
