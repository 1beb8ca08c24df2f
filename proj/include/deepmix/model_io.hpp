#pragma once

// Model file layout (version 1):
//
//   deepmix-model 1\n
//   kind <dbn|cae|mlp>\n
//   layers <count>\n
//   layer <i> <in> <out> <attr>=<value>\n        one line per layer
//   meta <key>=<value>\n                         zero or more, sorted by key
//   payload f32le <float count>\n
//   end\n
//   <float count * 4 bytes>
//
// Per-layer blocks, in layer order, each row-major little-endian float32:
//   dbn: weights (out x in), hidden_bias (out), visible_bias (in);  attr visible=<kind>
//   cae: weights (out x in), hidden_bias (out), visible_bias (in);  attr alpha=<value>
//   mlp: weights (out x in), bias (out);  attr role=<hidden|output>
// The payload must be exactly as long as the header declares.

#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "deepmix/cae.hpp"
#include "deepmix/dbn.hpp"
#include "deepmix/eval.hpp"

namespace deepmix {

using AnyModel = std::variant<Dbn, StackedCae, Mlp>;
using ModelMeta = std::map<std::string, std::string>;

struct ModelFile {
  AnyModel model;
  ModelMeta meta;
};

std::string serialize_model(const AnyModel& model, const ModelMeta& meta = {});
ModelFile deserialize_model(const std::string& bytes);

void save_model(const std::filesystem::path& path, const AnyModel& model,
                const ModelMeta& meta = {});
ModelFile load_model(const std::filesystem::path& path);

}  // namespace deepmix
