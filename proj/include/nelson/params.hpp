#pragma once

#include <map>
#include <string>

#include "nelson/common.hpp"

namespace nelson {

// Physical model parameters. Momentum units are fixed by kappa (default 1);
// everything downstream (grids, cutoffs, packets) lives in these units.
struct ModelParams {
  double lambda = 0.1;     // coupling constant, >= 0
  double alpha_bar = 0.5;  // infrared exponent, in (0, 1/2]
  double kappa = 1.0;      // UV cutoff radius
  double eps0 = 0.1;       // shoulder fraction of the UV cutoff, in (0, 1)
  double p_max = 1.0 / 6;  // electron momentum ball radius, <= 1/6
  double gamma = 5.0;      // cutoff-schedule exponent, > 4
  double gamma0 = 5.0;     // maximal schedule exponent, >= gamma

  // Outer radius of the envelope support; the smoothed cutoff vanishes at
  // kappa but the envelope must cover the whole shoulder.
  double kappa_star() const { return kappa / (1.0 - eps0); }

  void validate() const;
};

// Parses a flat key=value file. '#' starts a comment, blank lines are
// ignored, whitespace around keys and values is trimmed. Duplicate keys keep
// the last occurrence.
std::map<std::string, std::string> parse_key_value_file(const std::string& path);

std::map<std::string, std::string> parse_key_value_text(const std::string& text);

// Builds ModelParams from a parsed config, applying defaults for absent keys.
// Recognized keys: lambda, alpha_bar, kappa, eps0, p_max, gamma, gamma0.
// Unknown keys are left for the caller (run configs carry more).
ModelParams params_from_config(const std::map<std::string, std::string>& kv);

// Canonical hash of a config: keys sorted, values normalized, FNV-1a.
std::uint64_t config_hash(const std::map<std::string, std::string>& kv);

double parse_double(const std::string& key, const std::string& value);
long parse_long(const std::string& key, const std::string& value);

}  // namespace nelson
