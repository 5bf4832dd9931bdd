#include "pcdepth/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace pcdepth {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return i;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  if (!v.empty() && v[0] == '-') throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  const unsigned long long i = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return i;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define INT_FIELD(name, expr)                                                                  \
  Field {                                                                                      \
    name, [](const RunConfig& c) { return std::to_string(c.expr); },                          \
        [](RunConfig& c, const std::string& v) { c.expr = static_cast<int>(to_int(name, v)); } \
  }
#define DOUBLE_FIELD(name, expr)                                                \
  Field {                                                                       \
    name, [](const RunConfig& c) { return fmt_double(c.expr); },               \
        [](RunConfig& c, const std::string& v) { c.expr = to_double(name, v); } \
  }
#define STRING_FIELD(name, expr)                                   \
  Field {                                                          \
    name, [](const RunConfig& c) { return c.expr; },              \
        [](RunConfig& c, const std::string& v) { c.expr = v; }     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT_FIELD("time_bins", model.time_bins),
      INT_FIELD("image_channels", model.image_channels),
      Field{"widths",
            [](const RunConfig& c) {
              return std::to_string(c.model.widths[0]) + "," + std::to_string(c.model.widths[1]) + "," +
                     std::to_string(c.model.widths[2]);
            },
            [](RunConfig& c, const std::string& v) {
              std::stringstream ss(v);
              std::string part;
              std::vector<std::string> parts;
              while (std::getline(ss, part, ',')) parts.push_back(trim(part));
              if (parts.size() != 3) throw ConfigError("widths: expected three comma-separated integers");
              for (int i = 0; i < 3; ++i) c.model.widths[static_cast<std::size_t>(i)] = static_cast<int>(to_int("widths", parts[static_cast<std::size_t>(i)]));
            }},
      INT_FIELD("feature_channels", model.feature_channels),
      INT_FIELD("token_count", model.token_count),
      INT_FIELD("token_dim", model.token_dim),
      INT_FIELD("heads", model.heads),
      INT_FIELD("discretize_iters", model.discretize_iters),
      INT_FIELD("refine_iters", model.refine_iters),
      INT_FIELD("hidden_channels", model.hidden_channels),
      INT_FIELD("gru_layers", model.gru_layers),
      INT_FIELD("prediction_scale", model.prediction_scale),
      DOUBLE_FIELD("initial_depth", model.initial_depth),
      Field{"fusion", [](const RunConfig& c) { return to_string(c.model.fusion); },
            [](RunConfig& c, const std::string& v) { c.model.fusion = parse_fusion_style(v); }},
      Field{"score_granularity", [](const RunConfig& c) { return to_string(c.model.score_granularity); },
            [](RunConfig& c, const std::string& v) { c.model.score_granularity = parse_score_granularity(v); }},
      Field{"model_seed", [](const RunConfig& c) { return std::to_string(c.model.seed); },
            [](RunConfig& c, const std::string& v) { c.model.seed = to_u64("model_seed", v); }},
      DOUBLE_FIELD("d_min", priors.d_min),
      DOUBLE_FIELD("d_max", priors.d_max),
      DOUBLE_FIELD("alpha", loss.alpha),
      DOUBLE_FIELD("lambda", loss.lambda),
      DOUBLE_FIELD("gamma", loss.gamma),
      DOUBLE_FIELD("lr", optim.lr),
      INT_FIELD("steps", optim.steps),
      INT_FIELD("batch", optim.batch),
      DOUBLE_FIELD("weight_decay", optim.weight_decay),
      DOUBLE_FIELD("beta1", optim.beta1),
      DOUBLE_FIELD("beta2", optim.beta2),
      DOUBLE_FIELD("eps", optim.eps),
      DOUBLE_FIELD("pct_start", optim.pct_start),
      DOUBLE_FIELD("div_factor", optim.div_factor),
      DOUBLE_FIELD("final_div_factor", optim.final_div_factor),
      DOUBLE_FIELD("grad_clip", optim.grad_clip),
      INT_FIELD("checkpoint_every", optim.checkpoint_every),
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
      STRING_FIELD("train_manifest", train_manifest),
      STRING_FIELD("eval_manifest", eval_manifest),
      STRING_FIELD("output_dir", output_dir),
      Field{"max_eval_depth",
            [](const RunConfig& c) { return c.max_eval_depth ? fmt_double(*c.max_eval_depth) : std::string("none"); },
            [](RunConfig& c, const std::string& v) {
              if (v == "none" || v.empty()) {
                c.max_eval_depth.reset();
              } else {
                c.max_eval_depth = to_double("max_eval_depth", v);
              }
            }},
  };
  return table;
}

#undef INT_FIELD
#undef DOUBLE_FIELD
#undef STRING_FIELD

}  // namespace

void RunConfig::sync() { loss.stages = model.refine_iters; }

void RunConfig::validate() const {
  model.validate();
  priors.validate();
  loss.validate();
  if (loss.stages != model.refine_iters) throw std::invalid_argument("loss stages must equal refine_iters");
  if (!(optim.lr > 0)) throw std::invalid_argument("lr must be positive");
  if (optim.steps < 0) throw std::invalid_argument("steps must be nonnegative");
  if (optim.batch < 1) throw std::invalid_argument("batch must be at least 1");
  if (!(optim.weight_decay >= 0)) throw std::invalid_argument("weight_decay must be nonnegative");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(optim.eps > 0)) throw std::invalid_argument("eps must be positive");
  if (!(optim.pct_start > 0 && optim.pct_start < 1)) throw std::invalid_argument("pct_start must lie in (0, 1)");
  if (!(optim.div_factor >= 1) || !(optim.final_div_factor >= 1))
    throw std::invalid_argument("div factors must be at least 1");
  if (!(optim.grad_clip >= 0)) throw std::invalid_argument("grad_clip must be nonnegative");
  if (optim.checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be nonnegative");
  if (max_eval_depth && !(*max_eval_depth > 0)) throw std::invalid_argument("max_eval_depth must be positive");
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "default") {
    // Full-size module defaults.
  } else if (name == "tiny") {
    c.model.widths = {16, 24, 32};
    c.model.feature_channels = 24;
    c.model.token_count = 8;
    c.model.token_dim = 32;
    c.model.hidden_channels = 32;
    c.model.initial_depth = 0.96;  // about 17 m with the default priors
    c.optim.lr = 3e-3;
    c.optim.steps = 2000;
    c.optim.batch = 8;
    c.optim.grad_clip = 0;
  } else if (name == "micro") {
    c.model.widths = {8, 8, 8};
    c.model.feature_channels = 8;
    c.model.token_count = 4;
    c.model.token_dim = 8;
    c.model.discretize_iters = 2;
    c.model.refine_iters = 2;
    c.model.hidden_channels = 8;
    c.optim.steps = 10;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected default, tiny or micro)");
  }
  c.sync();
  return c;
}

std::string serialize(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      try {
        f.set(cfg, trim(value));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(key + ": " + e.what());
      }
      cfg.sync();
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not of the form key=value");
    apply_override(cfg, trim(a.substr(0, eq)), a.substr(eq + 1));
  }
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  RunConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_override(cfg, trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.sync();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

}  // namespace pcdepth
