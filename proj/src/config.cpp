#include "mimea/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mimea/errors.hpp"

namespace mimea {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void bad_line(int line, const std::string& what) {
  throw ConfigError("config: line " + std::to_string(line) + ": " + what);
}

long long to_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long out = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("config: key '" + key + "' needs an integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("config: key '" + key + "' needs a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: key '" + key + "' needs true or false, got '" + v + "'");
}

void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

void emit(std::string& out, const char* key, const std::string& v) {
  out += key;
  out += " = ";
  out += v;
  out += "\n";
}

void emit(std::string& out, const char* key, double v) {
  out += key;
  out += " = ";
  append_number(out, v);
  out += "\n";
}

void emit(std::string& out, const char* key, long long v) { emit(out, key, std::to_string(v)); }

void emit(std::string& out, const char* key, bool v) {
  emit(out, key, std::string(v ? "true" : "false"));
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) bad_line(lineno, "malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) bad_line(lineno, "empty section name");
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) bad_line(lineno, "expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) bad_line(lineno, "empty key");
    if (value.empty()) bad_line(lineno, "empty value for key '" + key + "'");
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("config: cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_config(TrainConfig& cfg, const ConfigMap& values) {
  for (const auto& [key, v] : values) {
    if (key == "train.dim") cfg.dim = static_cast<int>(to_int(key, v));
    else if (key == "train.heads") cfg.heads = static_cast<int>(to_int(key, v));
    else if (key == "train.epochs") cfg.epochs = static_cast<int>(to_int(key, v));
    else if (key == "train.batch_size") cfg.batch_size = static_cast<int>(to_int(key, v));
    else if (key == "train.seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "train.iterative") cfg.iterative = to_bool(key, v);
    else if (key == "train.probation_period") cfg.probation_period = static_cast<int>(to_int(key, v));
    else if (key == "train.probation_span") cfg.probation_span = static_cast<int>(to_int(key, v));
    else if (key == "train.patience") cfg.patience = static_cast<int>(to_int(key, v));
    else if (key == "train.attr_edges") cfg.attr_edges = to_bool(key, v);
    else if (key == "train.tau") cfg.tau = to_double(key, v);
    else if (key == "train.gamma") cfg.gamma = to_double(key, v);
    else if (key == "train.modalities") cfg.modalities = parse_modalities(v);
    else if (key == "optim.kind") cfg.optim.kind = parse_optim(v);
    else if (key == "optim.lr") cfg.optim.lr = to_double(key, v);
    else if (key == "optim.beta1") cfg.optim.beta1 = to_double(key, v);
    else if (key == "optim.beta2") cfg.optim.beta2 = to_double(key, v);
    else if (key == "optim.eps") cfg.optim.eps = to_double(key, v);
    else if (key == "optim.weight_decay") cfg.optim.weight_decay = to_double(key, v);
    else if (key == "pmf.lambda") cfg.pmf.lambda = to_double(key, v);
    else if (key == "pmf.distribution") cfg.pmf.distribution = parse_distribution(v);
    else if (key == "pmf.pivot") cfg.pmf.pivot = parse_pivot(v);
    else if (key == "pmf.detach_weights") cfg.pmf.detach_weights = to_bool(key, v);
    else if (key == "pmf.kl_agg") cfg.pmf.kl_agg = parse_kl_agg(v);
    else if (key == "otma.epsilon") cfg.otma.epsilon = to_double(key, v);
    else if (key == "otma.max_iters") cfg.otma.max_iters = static_cast<int>(to_int(key, v));
    else if (key == "otma.tol") cfg.otma.tol = to_double(key, v);
    else if (key == "otma.consume") cfg.otma.consume = parse_consume(v);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
}

std::string canonical_config_string(const TrainConfig& cfg) {
  std::string out;
  out += "[train]\n";
  emit(out, "dim", static_cast<long long>(cfg.dim));
  emit(out, "heads", static_cast<long long>(cfg.heads));
  emit(out, "epochs", static_cast<long long>(cfg.epochs));
  emit(out, "batch_size", static_cast<long long>(cfg.batch_size));
  emit(out, "seed", static_cast<long long>(cfg.seed));
  emit(out, "iterative", cfg.iterative);
  emit(out, "probation_period", static_cast<long long>(cfg.probation_period));
  emit(out, "probation_span", static_cast<long long>(cfg.probation_span));
  emit(out, "patience", static_cast<long long>(cfg.patience));
  emit(out, "attr_edges", cfg.attr_edges);
  emit(out, "tau", cfg.tau);
  emit(out, "gamma", cfg.gamma);
  emit(out, "modalities", to_string(cfg.modalities));
  out += "[optim]\n";
  emit(out, "kind", to_string(cfg.optim.kind));
  emit(out, "lr", cfg.optim.lr);
  emit(out, "beta1", cfg.optim.beta1);
  emit(out, "beta2", cfg.optim.beta2);
  emit(out, "eps", cfg.optim.eps);
  emit(out, "weight_decay", cfg.optim.weight_decay);
  out += "[pmf]\n";
  emit(out, "lambda", cfg.pmf.lambda);
  emit(out, "distribution", to_string(cfg.pmf.distribution));
  emit(out, "pivot", to_string(cfg.pmf.pivot));
  emit(out, "detach_weights", cfg.pmf.detach_weights);
  emit(out, "kl_agg", to_string(cfg.pmf.kl_agg));
  out += "[otma]\n";
  emit(out, "epsilon", cfg.otma.epsilon);
  emit(out, "max_iters", static_cast<long long>(cfg.otma.max_iters));
  emit(out, "tol", cfg.otma.tol);
  emit(out, "consume", to_string(cfg.otma.consume));
  return out;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  const std::string s = canonical_config_string(cfg);
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void apply_paper_defaults(TrainConfig& cfg) {
  cfg.dim = 400;
  cfg.epochs = 1000;
  cfg.batch_size = 512;
  cfg.optim.lr = 5e-4;
  cfg.tau = 0.1;
  cfg.gamma = 0.8;
  cfg.pmf.lambda = 0.1;
  cfg.otma.consume = OtConsume::kReplace;
}

}  // namespace mimea
