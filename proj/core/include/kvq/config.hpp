#pragma once

#include <string>
#include <string_view>

#include "kvq/cache.hpp"

namespace kvq {

// Applies one "field = value" assignment; unknown field names and
// malformed values raise config errors.
void apply_config_kv(QuantConfig& config, const std::string& key, const std::string& value);

// Flat key-value document: one "field = value" per line, '#' comments,
// blank lines ignored. Field names are exactly the QuantConfig fields.
// The parsed config is validated before returning.
QuantConfig parse_config_text(std::string_view text);
QuantConfig parse_config_file(const std::string& path);

// Canonical text form; parse_config_text(config_to_text(c)) == c.
std::string config_to_text(const QuantConfig& config);

}  // namespace kvq
