#include "instantft/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace instantft {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse_int(std::string_view key, std::string_view v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ConfigError("'" + std::string(key) + "' expects a number, got '" + s + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Variant ExperimentConfig::variant() const { return dataset == "svhn" ? Variant::kSvhn : Variant::kMnist; }

StrategyConfig ExperimentConfig::strategy(Method method, std::uint64_t run_seed) const {
  StrategyConfig s;
  s.method = method;
  s.rank = rank;
  s.lr = lr;
  s.epochs = epochs;
  s.batch = batch;
  s.seed = run_seed;
  s.threads = threads;
  s.eval_every_epoch = eval_every_epoch;
  if (method == Method::kInstantFt) {
    s.cache_mode = cache_mode;
    s.arithmetic = arithmetic;
  }
  return s;
}

void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value) {
  const std::string_view v = trim(value);
  if (key == "dataset") {
    if (v != "mnist" && v != "fmnist" && v != "svhn") throw ConfigError("dataset must be mnist, fmnist or svhn");
    c.dataset = std::string(v);
  } else if (key == "data_root") {
    c.data_root = std::string(v);
  } else if (key == "checkpoint") {
    c.checkpoint = std::string(v);
  } else if (key == "methods" || key == "method") {
    c.methods.clear();
    for (auto item : split_list(v)) c.methods.push_back(parse_method(item));
  } else if (key == "angles" || key == "angle") {
    c.angles.clear();
    for (auto item : split_list(v)) c.angles.push_back(parse_double(key, item));
  } else if (key == "samples") {
    c.samples = parse_int<Index>(key, v);
  } else if (key == "eval_samples") {
    c.eval_samples = parse_int<Index>(key, v);
  } else if (key == "rank") {
    c.rank = parse_int<Index>(key, v);
  } else if (key == "lr") {
    c.lr = parse_double(key, v);
  } else if (key == "epochs") {
    c.epochs = parse_int<int>(key, v);
  } else if (key == "batch") {
    c.batch = parse_int<Index>(key, v);
  } else if (key == "seed") {
    c.seed = parse_int<std::uint64_t>(key, v);
  } else if (key == "seeds") {
    c.seeds = parse_int<int>(key, v);
  } else if (key == "cache_mode") {
    c.cache_mode = parse_cache_mode(v);
  } else if (key == "arithmetic") {
    c.arithmetic = parse_arithmetic(v);
  } else if (key == "threads") {
    c.threads = parse_int<int>(key, v);
  } else if (key == "out") {
    c.out = std::string(v);
  } else if (key == "eval_every_epoch") {
    c.eval_every_epoch = parse_bool(key, v);
  } else if (key == "pretrain_epochs") {
    c.pretrain_epochs = parse_int<int>(key, v);
  } else if (key == "pretrain_lr") {
    c.pretrain_lr = parse_double(key, v);
  } else if (key == "pretrain_batch") {
    c.pretrain_batch = parse_int<Index>(key, v);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

ExperimentConfig parse_config(std::string_view text, const std::string& origin) {
  ExperimentConfig c;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string_view l = line;
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(c, trim(l.substr(0, eq)), l.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

void validate(const ExperimentConfig& c) {
  if (c.methods.empty()) throw ConfigError("methods must list at least one method");
  if (c.angles.empty()) throw ConfigError("angles must list at least one angle");
  for (double a : c.angles) {
    if (std::find(std::begin(kRotationAngles), std::end(kRotationAngles), a) == std::end(kRotationAngles)) {
      throw ConfigError("angle " + fmt_double(a) + " is not one of 0, 15, ..., 90");
    }
  }
  if (c.samples <= 0) throw ConfigError("samples must be positive");
  if (c.eval_samples < 0) throw ConfigError("eval_samples must be >= 0");
  if (c.seeds <= 0) throw ConfigError("seeds must be positive");
  if (c.pretrain_epochs < 0 || c.pretrain_batch <= 0 || !(c.pretrain_lr >= 0.0)) {
    throw ConfigError("pretraining settings out of range");
  }
  const bool has_instant = std::find(c.methods.begin(), c.methods.end(), Method::kInstantFt) != c.methods.end();
  if (!has_instant && c.arithmetic == Arithmetic::kFixed) {
    throw ConfigError("arithmetic = fixed requires the instantft method");
  }
  if (!has_instant && c.cache_mode != CacheMode::kOff && c.methods.size() == 1) {
    throw ConfigError("cache_mode = " + std::string(to_string(c.cache_mode)) + " is invalid for " +
                      std::string(to_string(c.methods.front())) + "; use cache_mode = off");
  }
  for (Method m : c.methods) validate(c.strategy(m, c.seed));
}

std::string render_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "dataset = " << c.dataset << '\n';
  os << "data_root = " << c.data_root << '\n';
  os << "checkpoint = " << c.checkpoint << '\n';
  os << "methods = ";
  for (std::size_t i = 0; i < c.methods.size(); ++i) os << (i ? "," : "") << to_string(c.methods[i]);
  os << "\nangles = ";
  for (std::size_t i = 0; i < c.angles.size(); ++i) os << (i ? "," : "") << fmt_double(c.angles[i]);
  os << "\nsamples = " << c.samples << '\n';
  os << "eval_samples = " << c.eval_samples << '\n';
  os << "rank = " << c.rank << '\n';
  os << "lr = " << fmt_double(c.lr) << '\n';
  os << "epochs = " << c.epochs << '\n';
  os << "batch = " << c.batch << '\n';
  os << "seed = " << c.seed << '\n';
  os << "seeds = " << c.seeds << '\n';
  os << "cache_mode = " << to_string(c.cache_mode) << '\n';
  os << "arithmetic = " << to_string(c.arithmetic) << '\n';
  os << "threads = " << c.threads << '\n';
  os << "out = " << c.out << '\n';
  os << "eval_every_epoch = " << (c.eval_every_epoch ? "true" : "false") << '\n';
  os << "pretrain_epochs = " << c.pretrain_epochs << '\n';
  os << "pretrain_lr = " << fmt_double(c.pretrain_lr) << '\n';
  os << "pretrain_batch = " << c.pretrain_batch << '\n';
  return os.str();
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return render_config(a) == render_config(b); }

}  // namespace instantft
