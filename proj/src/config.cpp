#include "prl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace prl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError(key, "cannot parse '" + text + "'");
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

template <typename T>
Schedule<T> parse_schedule(const std::string& key, const std::string& text) {
  Schedule<T> out;
  for (const auto& entry : split(text, ',')) {
    const auto colon = entry.find(':');
    if (colon == std::string::npos) throw ConfigError(key, "expected ITERATION:VALUE entries, got '" + entry + "'");
    out.emplace_back(parse_number<std::uint32_t>(key, trim(entry.substr(0, colon))),
                     parse_number<T>(key, trim(entry.substr(colon + 1))));
  }
  try {
    validate_schedule(out, key);
  } catch (const ValidationError& e) {
    throw ConfigError(key, e.what());
  }
  return out;
}

template <typename T>
std::string format_schedule(const Schedule<T>& schedule) {
  std::string out;
  for (const auto& [it, v] : schedule) {
    if (!out.empty()) out += ',';
    out += std::to_string(it) + ':';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v);
    } else {
      out += std::to_string(v);
    }
  }
  return out;
}

// Layer syntax: CHANNELSxKERNELsSTRIDEpPADDING with an optional trailing r
// for a residual connection, e.g. 8x3s2p1 or 32x3s1p1r.
ConvLayerSpec parse_layer(const std::string& key, std::string text) {
  ConvLayerSpec spec;
  if (!text.empty() && text.back() == 'r') {
    spec.residual = true;
    text.pop_back();
  }
  const auto x = text.find('x'), s = text.find('s'), p = text.find('p');
  if (x == std::string::npos || s == std::string::npos || p == std::string::npos || !(x < s && s < p)) {
    throw ConfigError(key, "expected layers like 8x3s2p1[r], got '" + text + "'");
  }
  spec.channels = parse_number<std::size_t>(key, text.substr(0, x));
  spec.kernel = parse_number<std::size_t>(key, text.substr(x + 1, s - x - 1));
  spec.stride = parse_number<std::size_t>(key, text.substr(s + 1, p - s - 1));
  spec.padding = parse_number<std::size_t>(key, text.substr(p + 1));
  return spec;
}

std::string format_layers(const std::vector<ConvLayerSpec>& layers) {
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += ',';
    out += std::to_string(l.channels) + 'x' + std::to_string(l.kernel) + 's' + std::to_string(l.stride) + 'p' +
           std::to_string(l.padding) + (l.residual ? "r" : "");
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T ExperimentConfig::*member) {
  return {key, [key, member](ExperimentConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

template <typename T, typename Owner>
Field nested_field(std::string key, Owner ExperimentConfig::*owner, T Owner::*member) {
  return {key,
          [key, owner, member](ExperimentConfig& c, const std::string& v) { (c.*owner).*member = parse_number<T>(key, v); },
          [owner, member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double((c.*owner).*member);
            } else {
              return std::to_string((c.*owner).*member);
            }
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"games",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.games = split(v, ',');
                   for (const auto& g : c.games) {
                     const auto names = environment_names();
                     if (std::find(names.begin(), names.end(), g) == names.end()) {
                       throw ConfigError("games", "unknown game '" + g + "'");
                     }
                   }
                 },
                 [](const ExperimentConfig& c) {
                   std::string out;
                   for (const auto& g : c.games) out += (out.empty() ? "" : ",") + g;
                   return out;
                 }});
    f.push_back(number_field("iterations", &ExperimentConfig::iterations));
    f.push_back(number_field("initial_cases_per_game", &ExperimentConfig::initial_cases_per_game));
    f.push_back(number_field("cases_per_game_per_iter", &ExperimentConfig::cases_per_game_per_iter));
    f.push_back({"k_schedule",
                 [](ExperimentConfig& c, const std::string& v) { c.k_schedule = parse_schedule<std::size_t>("k_schedule", v); },
                 [](const ExperimentConfig& c) { return format_schedule(c.k_schedule); }});
    f.push_back({"lr_schedule",
                 [](ExperimentConfig& c, const std::string& v) { c.lr_schedule = parse_schedule<double>("lr_schedule", v); },
                 [](const ExperimentConfig& c) { return format_schedule(c.lr_schedule); }});
    f.push_back(number_field("updates_per_iteration", &ExperimentConfig::updates_per_iteration));
    f.push_back(number_field("halve_lr_after", &ExperimentConfig::halve_lr_after));
    f.push_back(number_field("batch_size", &ExperimentConfig::batch_size));
    f.push_back(number_field("weight_multiplier", &ExperimentConfig::weight_multiplier));
    f.push_back(number_field("weight_period", &ExperimentConfig::weight_period));
    f.push_back(number_field("noop_max", &ExperimentConfig::noop_max));
    f.push_back({"auto_fire", [](ExperimentConfig& c, const std::string& v) { c.auto_fire = parse_bool("auto_fire", v); },
                 [](const ExperimentConfig& c) { return std::string(c.auto_fire ? "true" : "false"); }});
    f.push_back(number_field("eval_episodes", &ExperimentConfig::eval_episodes));
    f.push_back(number_field("workers", &ExperimentConfig::workers));
    f.push_back(number_field("seed", &ExperimentConfig::seed));
    f.push_back(nested_field("max_episode_steps", &ExperimentConfig::env, &EnvOptions::max_steps));
    f.push_back({"preprocess",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "identity") {
                     c.env.preprocess = Preprocess::identity;
                   } else if (v == "max2") {
                     c.env.preprocess = Preprocess::max2;
                   } else {
                     throw ConfigError("preprocess", "expected identity or max2, got '" + v + "'");
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.env.preprocess == Preprocess::max2 ? "max2" : "identity");
                 }});
    f.push_back(nested_field("frame_stack", &ExperimentConfig::model, &ModelConfig::frame_stack));
    f.push_back(nested_field("frame_height", &ExperimentConfig::model, &ModelConfig::frame_height));
    f.push_back(nested_field("frame_width", &ExperimentConfig::model, &ModelConfig::frame_width));
    f.push_back(nested_field("latent_dim", &ExperimentConfig::model, &ModelConfig::latent_dim));
    f.push_back(nested_field("hidden_dim", &ExperimentConfig::model, &ModelConfig::hidden_dim));
    f.push_back(nested_field("unroll", &ExperimentConfig::model, &ModelConfig::unroll));
    f.push_back({"perception",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.model.perception.clear();
                   for (const auto& layer : split(v, ',')) c.model.perception.push_back(parse_layer("perception", layer));
                 },
                 [](const ExperimentConfig& c) { return format_layers(c.model.perception); }});
    f.push_back(nested_field("beta1", &ExperimentConfig::optimizer, &OptimizerConfig::beta1));
    f.push_back(nested_field("beta2", &ExperimentConfig::optimizer, &OptimizerConfig::beta2));
    f.push_back(nested_field("epsilon", &ExperimentConfig::optimizer, &OptimizerConfig::epsilon));
    f.push_back(nested_field("weight_decay", &ExperimentConfig::optimizer, &OptimizerConfig::weight_decay));
    f.push_back(nested_field("grad_clip", &ExperimentConfig::optimizer, &OptimizerConfig::grad_clip));
    return f;
  }();
  return table;
}

constexpr std::string_view kSurvivalPrefix = "survival.";

}  // namespace

ExperimentConfig preset_config(const std::string& name) {
  if (name == "desk") return ExperimentConfig::desk();
  if (name == "paper-scale") return ExperimentConfig::paper_scale();
  throw ConfigError("preset", "unknown preset '" + name + "' (expected desk or paper-scale)");
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  ExperimentConfig config = std::move(base);
  std::set<std::string> seen;
  std::map<std::string, std::string> survival;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n), "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(key, "given more than once");
    if (key == "preset") {
      if (seen.size() != 1) throw ConfigError(key, "must be the first entry");
      config = preset_config(value);
      continue;
    }
    if (key.starts_with(kSurvivalPrefix)) {
      survival[key.substr(kSurvivalPrefix.size())] = value;
      continue;
    }
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(key, "unknown key");
    it->set(config, value);
  }
  // Survival entries are checked once the game list is final.
  for (const auto& [game, value] : survival) {
    const std::string key = std::string(kSurvivalPrefix) + game;
    if (std::find(config.games.begin(), config.games.end(), game) == config.games.end()) {
      throw ConfigError(key, "unknown key (game not listed in games)");
    }
    config.survival_schedule[game] = parse_schedule<double>(key, value);
  }
  try {
    config.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ConfigError("config", e.what());
  }
  return config;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  for (const auto& game : config.games) {
    auto it = config.survival_schedule.find(game);
    out += std::string(kSurvivalPrefix) + game + " = " +
           (it == config.survival_schedule.end() ? std::string("1:1") : format_schedule(it->second)) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  out.push_back(std::string(kSurvivalPrefix) + "<game>");
  return out;
}

}  // namespace prl
