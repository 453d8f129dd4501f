#include "nelson/params.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace nelson {

void ModelParams::validate() const {
  if (!(lambda >= 0.0)) throw validation_error("lambda must be >= 0");
  if (!(alpha_bar > 0.0 && alpha_bar <= 0.5))
    throw validation_error("alpha_bar must lie in (0, 1/2]");
  if (!(kappa > 0.0)) throw validation_error("kappa must be > 0");
  if (!(eps0 > 0.0 && eps0 < 1.0)) throw validation_error("eps0 must lie in (0, 1)");
  if (!(p_max > 0.0 && p_max <= 1.0 / 6 + 1e-15))
    throw validation_error("p_max must lie in (0, 1/6]");
  if (!(gamma > 4.0)) throw validation_error("gamma must be > 4");
  if (!(gamma0 >= gamma)) throw validation_error("gamma0 must be >= gamma");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

std::map<std::string, std::string> parse_key_value_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw validation_error("config line " + std::to_string(lineno) +
                             ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw validation_error("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = val;
  }
  return kv;
}

std::map<std::string, std::string> parse_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_key_value_text(buf.str());
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw validation_error("key '" + key + "': cannot parse '" + value + "' as a number");
  }
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw validation_error("key '" + key + "': cannot parse '" + value + "' as an integer");
  }
}

ModelParams params_from_config(const std::map<std::string, std::string>& kv) {
  ModelParams p;
  auto get = [&kv](const char* key, double& out) {
    auto it = kv.find(key);
    if (it != kv.end()) out = parse_double(key, it->second);
  };
  get("lambda", p.lambda);
  get("alpha_bar", p.alpha_bar);
  get("kappa", p.kappa);
  get("eps0", p.eps0);
  get("p_max", p.p_max);
  get("gamma", p.gamma);
  get("gamma0", p.gamma0);
  p.validate();
  return p;
}

std::uint64_t config_hash(const std::map<std::string, std::string>& kv) {
  // std::map iterates in key order already, which fixes the digest.
  std::string canon;
  for (const auto& [k, v] : kv) {
    canon += k;
    canon += '=';
    canon += v;
    canon += '\n';
  }
  return fnv1a(canon);
}

}  // namespace nelson
