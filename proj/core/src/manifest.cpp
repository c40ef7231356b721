// SPDX-License-Identifier: Apache-2.0
#include "cutie/manifest.hpp"

#include <nlohmann/json.hpp>

#include "cutie/errors.hpp"
#include "cutie/layers.hpp"
#include "cutie/object_memory.hpp"
#include "cutie/preprocess.hpp"
#include "cutie/version.hpp"

namespace cutie {

using nlohmann::json;

RunManifest::RunManifest() : engine_version(kEngineVersion) {}

RunManifest::RunManifest(ModelConfig m, InferenceConfig i)
    : model(m), inference(i), engine_version(kEngineVersion) {}

std::string RunManifest::to_json() const {
  json j;
  j["engine_version"] = engine_version;
  j["weights"] = weights;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["model"] = {
      {"channels", model.channels},
      {"key_channels", model.key_channels},
      {"num_blocks", model.num_blocks},
      {"num_queries", model.num_queries},
      {"num_heads", model.num_heads},
      {"ffn_hidden", model.ffn_hidden},
      {"decoder_channels", model.decoder_channels},
      {"stem_channels", model.stem_channels},
      {"encoder_channels", model.encoder_channels},
  };
  j["inference"] = {
      {"mem_interval", inference.mem_interval},
      {"t_max", inference.t_max},
      {"top_k", inference.top_k},
      {"max_short_edge", inference.max_short_edge},
  };
  j["conventions"] = {
      {"resize_policy", "shorter edge to min(max_short_edge, original); dims rounded up to multiples of 16"},
      {"interpolation", "bilinear, half-pixel centers (align_corners=false)"},
      {"output_resize", "probabilities resized to original size before argmax"},
      {"argmax_tie_break", "lowest object id"},
      {"image_mean", kImageMean},
      {"image_std", kImageStd},
      {"probability_clamp", kProbabilityClamp},
      {"object_memory_eps", kObjectMemoryEps},
      {"layer_norm_eps", kLayerNormEps},
      {"weight_dtype", "f32"},
  };
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string &text) {
  try {
    const json j = json::parse(text);
    RunManifest m;
    m.engine_version = j.at("engine_version").get<std::string>();
    m.weights = j.at("weights").get<std::string>();
    if (!j.at("seed").is_null()) {
      m.seed = j.at("seed").get<std::uint64_t>();
    }
    const json &mo = j.at("model");
    mo.at("channels").get_to(m.model.channels);
    mo.at("key_channels").get_to(m.model.key_channels);
    mo.at("num_blocks").get_to(m.model.num_blocks);
    mo.at("num_queries").get_to(m.model.num_queries);
    mo.at("num_heads").get_to(m.model.num_heads);
    mo.at("ffn_hidden").get_to(m.model.ffn_hidden);
    mo.at("decoder_channels").get_to(m.model.decoder_channels);
    mo.at("stem_channels").get_to(m.model.stem_channels);
    mo.at("encoder_channels").get_to(m.model.encoder_channels);
    const json &in = j.at("inference");
    in.at("mem_interval").get_to(m.inference.mem_interval);
    in.at("t_max").get_to(m.inference.t_max);
    in.at("top_k").get_to(m.inference.top_k);
    in.at("max_short_edge").get_to(m.inference.max_short_edge);
    return m;
  } catch (const json::exception &e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
}

} // namespace cutie
