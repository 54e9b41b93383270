#pragma once

// JSON configuration for `synth` and `train`. Every key is optional and
// falls back to the struct default; unknown keys and wrongly typed values
// are rejected so that typos do not silently change an experiment.

#include <set>

#include "fagg/trainer.hpp"
#include "json.hpp"

namespace fagg {

namespace detail {

using Json = nlohmann::json;

inline void reject_unknown(const Json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw Error(ErrorCode::InvalidArgument, std::string(what) + " config: unknown key '" + key + "'");
}

template <class T>
void read_key(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be a number");
    out = v.get<T>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned())
      throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be a nonnegative integer");
    out = v.get<T>();
  } else {
    if (!v.is_string()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be a string");
    out = v.get<T>();
  }
}

inline Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace detail

inline SynthConfig parse_synth_config(std::string_view text) {
  const auto j = detail::parse_json(text);
  detail::reject_unknown(j,
                         {"dim", "num_identities", "sets_per_identity", "frames_min", "frames_max",
                          "intra_class_sigma", "degrade_fraction", "corrupt_dims_fraction",
                          "corrupt_noise_sigma", "rng_seed"},
                         "synth");
  SynthConfig c;
  detail::read_key(j, "dim", c.dim);
  detail::read_key(j, "num_identities", c.num_identities);
  detail::read_key(j, "sets_per_identity", c.sets_per_identity);
  detail::read_key(j, "frames_min", c.frames_min);
  detail::read_key(j, "frames_max", c.frames_max);
  detail::read_key(j, "intra_class_sigma", c.intra_class_sigma);
  detail::read_key(j, "degrade_fraction", c.degrade_fraction);
  detail::read_key(j, "corrupt_dims_fraction", c.corrupt_dims_fraction);
  detail::read_key(j, "corrupt_noise_sigma", c.corrupt_noise_sigma);
  detail::read_key(j, "rng_seed", c.rng_seed);
  validate(c);
  return c;
}

inline TrainConfig parse_train_config(std::string_view text) {
  const auto j = detail::parse_json(text);
  detail::reject_unknown(j,
                         {"learning_rate", "batch_size", "epochs", "frames_min", "frames_max", "rng_seed",
                          "mode", "margin_m", "scale_s", "momentum", "init_hidden_gain", "init_hidden_bias"},
                         "train");
  TrainConfig c;
  detail::read_key(j, "learning_rate", c.learning_rate);
  detail::read_key(j, "batch_size", c.batch_size);
  detail::read_key(j, "epochs", c.epochs);
  detail::read_key(j, "frames_min", c.frames_min);
  detail::read_key(j, "frames_max", c.frames_max);
  detail::read_key(j, "rng_seed", c.rng_seed);
  std::string mode = to_string(c.mode);
  detail::read_key(j, "mode", mode);
  c.mode = parse_attention_mode(mode);
  detail::read_key(j, "margin_m", c.margin_m);
  detail::read_key(j, "scale_s", c.scale_s);
  detail::read_key(j, "momentum", c.momentum);
  detail::read_key(j, "init_hidden_gain", c.init_hidden_gain);
  detail::read_key(j, "init_hidden_bias", c.init_hidden_bias);
  validate(c);
  return c;
}

}  // namespace fagg
