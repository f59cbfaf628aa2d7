#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mimea/trainer.hpp"

namespace mimea {

// Flat dotted-key view of a config file: `[otma]` + `epsilon = 0.02` parses
// to {"otma.epsilon": "0.02"}. Keys before any section header are bare.
using ConfigMap = std::map<std::string, std::string>;

// Parses `key = value` lines with `[section]` headers, `#` comments and
// blank lines. ConfigError carries the offending line number.
ConfigMap parse_config_text(const std::string& text);

// DataError when the file cannot be read; parse errors as above.
ConfigMap load_config_file(const std::string& path);

// Overwrites the matching fields of cfg. ConfigError on unknown keys or
// unparseable values; range checking stays with TrainConfig::validate.
void apply_config(TrainConfig& cfg, const ConfigMap& values);

// Every setting in a fixed section and key order with canonical number
// formatting, so equal configs serialize to equal bytes. Parsing the result
// back reproduces the config exactly.
std::string canonical_config_string(const TrainConfig& cfg);

// FNV-1a over the canonical string; stamped into checkpoints and manifests.
std::uint64_t config_hash(const TrainConfig& cfg);

// The hyperparameters the reference setup uses at full scale; desk-scale
// defaults stay in TrainConfig itself.
void apply_paper_defaults(TrainConfig& cfg);

}  // namespace mimea
