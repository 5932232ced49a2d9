#include "qotr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "qotr/errors.hpp"

namespace qotr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& raw) {
  const std::string v = unquote(raw);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + raw + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& raw) {
  const std::string v = unquote(raw);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + raw + "'");
  }
}

bool to_bool(const std::string& key, const std::string& raw) {
  const std::string v = unquote(raw);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

// Shortest text that parses back to the same double.
std::string fmt_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define UINT_FIELD(name, member)                                                                  \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_uint(name, v)); }, \
        [](const TrainConfig& c) { return std::to_string(c.member); }}
#define REAL_FIELD(name, member)                                                      \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = to_real(name, v); }, \
        [](const TrainConfig& c) { return fmt_real(c.member); }}
#define BOOL_FIELD(name, member)                                                      \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = to_bool(name, v); }, \
        [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }}
#define STRING_FIELD(name, member)                                                   \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = unquote(v); },   \
        [](const TrainConfig& c) { return "\"" + c.member + "\""; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      UINT_FIELD("H", grid.H),
      UINT_FIELD("W", grid.W),
      UINT_FIELD("M", grid.M),
      UINT_FIELD("P", grid.P),
      UINT_FIELD("o", grid.o),
      UINT_FIELD("dim", model.dim),
      UINT_FIELD("encoder_layers", model.encoder_layers),
      UINT_FIELD("decoder_layers", model.decoder_layers),
      UINT_FIELD("n_heads", model.n_heads),
      UINT_FIELD("qem_blocks", model.qem_blocks),
      UINT_FIELD("noise_dim", model.noise.noise_dim),
      Field{"noise_distribution",
            [](TrainConfig& c, const std::string& v) {
              try {
                c.model.noise.distribution = parse_noise_distribution(unquote(v));
              } catch (const std::exception&) {
                throw ConfigError("noise_distribution: expected \"normal\" or \"uniform\", got " + v);
              }
            },
            [](const TrainConfig& c) { return "\"" + to_string(c.model.noise.distribution) + "\""; }},
      UINT_FIELD("d_scales", disc.n_scales),
      UINT_FIELD("d_channels", disc.channels),
      UINT_FIELD("d_layers", disc.layers),
      REAL_FIELD("lr", adam.lr),
      REAL_FIELD("beta1", adam.beta1),
      REAL_FIELD("beta2", adam.beta2),
      REAL_FIELD("adam_eps", adam.eps),
      REAL_FIELD("weight_decay", adam.weight_decay),
      REAL_FIELD("lambda_rec", loss.lambda_rec),
      REAL_FIELD("lambda_perceptual", loss.lambda_perceptual),
      BOOL_FIELD("diffaug", diffaug),
      REAL_FIELD("aug_brightness", augment.brightness),
      REAL_FIELD("aug_translate", augment.translate_frac),
      REAL_FIELD("aug_cutout", augment.cutout_frac),
      BOOL_FIELD("hflip", hflip),
      UINT_FIELD("batch_size", batch_size),
      UINT_FIELD("epochs", epochs),
      UINT_FIELD("warmup_epochs", warmup_epochs),
      UINT_FIELD("max_steps", max_steps),
      UINT_FIELD("seed", seed),
      UINT_FIELD("feature_seed", feature_seed),
      UINT_FIELD("threads", threads),
      STRING_FIELD("data_dir", data_dir),
      STRING_FIELD("out_dir", out_dir),
  };
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  grid.validate();
  if (model.dim == 0) throw ConfigError("dim must be >= 1");
  if (model.n_heads == 0 || model.dim % model.n_heads != 0) {
    throw ConfigError("n_heads must divide dim (" + std::to_string(model.dim) + ")");
  }
  if (model.encoder_layers == 0) throw ConfigError("encoder_layers must be >= 1");
  if (model.decoder_layers == 0) throw ConfigError("decoder_layers must be >= 1");
  if (model.noise.noise_dim == 0) throw ConfigError("noise_dim must be >= 1");
  if (disc.n_scales == 0) throw ConfigError("d_scales must be >= 1");
  if (disc.layers == 0) throw ConfigError("d_layers must be >= 1");
  if (disc.channels == 0) throw ConfigError("d_channels must be >= 1");
  adam.validate();
  loss.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (warmup_epochs > epochs) throw ConfigError("warmup_epochs must not exceed epochs");
  if (threads == 0) throw ConfigError("threads must be >= 1");
  if (augment.brightness < 0 || augment.translate_frac < 0 || augment.translate_frac >= 1 ||
      augment.cutout_frac < 0 || augment.cutout_frac > 1) {
    throw ConfigError("augmentation magnitudes out of range");
  }
}

std::map<std::string, std::string> parse_flat_toml(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Strip comments outside quotes.
    bool quoted = false;
    char q = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == q) quoted = false;
      } else if (c == '"' || c == '\'') {
        quoted = true;
        q = c;
      } else if (c == '#') {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') throw ConfigError("line " + std::to_string(lineno) + ": tables are not supported");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = unquote(trim(line.substr(0, eq)));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    }
    if (out.count(key)) throw ConfigError("duplicate key " + key);
    out[key] = value;
  }
  return out;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  for (const auto& [k, v] : parse_flat_toml(text)) set_config_value(cfg, k, v);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_toml(const TrainConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace qotr
