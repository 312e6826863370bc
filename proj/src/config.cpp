#include "macow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace macow {

std::string_view to_string(MultiScale m) { return m == MultiScale::kOriginal ? "original" : "fine_grained"; }
std::string_view to_string(DequantMode m) { return m == DequantMode::kUniform ? "unif" : "var"; }
std::string_view to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

namespace {

std::string_view coupling_name(CouplingMode m) { return m == CouplingMode::kAffine ? "affine" : "additive"; }

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  fail(ErrorCode::kConfig, fmt::format("config key '{}': cannot parse '{}' as {}", key, value, expected));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

CouplingMode parse_coupling(const std::string& key, const std::string& v) {
  if (v == "affine") return CouplingMode::kAffine;
  if (v == "additive") return CouplingMode::kAdditive;
  bad_value(key, v, "affine|additive");
}

}  // namespace

std::vector<std::vector<std::size_t>> parse_depths(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kConfig, fmt::format("depths '{}' is not a nested list such as [[2,2],2]", text));
  }
  require(j.is_array() && !j.empty(), ErrorCode::kConfig, "depths must be a non-empty list");
  std::vector<std::vector<std::size_t>> out;
  auto count = [&text](const nlohmann::json& v) {
    require(v.is_number_unsigned() && v.get<std::uint64_t>() >= 1, ErrorCode::kConfig,
            fmt::format("depths '{}': every entry must be a positive integer", text));
    return static_cast<std::size_t>(v.get<std::uint64_t>());
  };
  for (const auto& level : j) {
    if (level.is_array()) {
      require(!level.empty(), ErrorCode::kConfig, "depths: empty level");
      std::vector<std::size_t> blocks;
      for (const auto& b : level) blocks.push_back(count(b));
      out.push_back(std::move(blocks));
    } else {
      out.push_back({count(level)});
    }
  }
  return out;
}

std::string format_depths(const std::vector<std::vector<std::size_t>>& depths) {
  std::string s = "[";
  for (std::size_t l = 0; l < depths.size(); ++l) {
    if (l) s += ",";
    if (depths[l].size() == 1) {
      s += std::to_string(depths[l][0]);
      continue;
    }
    s += "[";
    for (std::size_t b = 0; b < depths[l].size(); ++b) s += (b ? "," : "") + std::to_string(depths[l][b]);
    s += "]";
  }
  return s + "]";
}

void ModelConfig::validate() const {
  require(channels >= 1 && height >= 1 && width >= 1, ErrorCode::kConfig, "image extents must be positive");
  require(n_bits >= 1 && n_bits <= 8, ErrorCode::kConfig, "n_bits must be in [1, 8]");
  require(!depths.empty(), ErrorCode::kConfig, "at least one level is required");
  require(hidden_channels >= 1, ErrorCode::kConfig, "hidden_channels must be positive");
  require(kernel_h >= 2 && kernel_w >= 1, ErrorCode::kConfig, "kernel must be at least 2x1");
  require(dequant_units >= 1 && dequant_hidden >= 1 && dequant_context >= 1, ErrorCode::kConfig,
          "dequantizer sizes must be positive");
  const std::size_t m = split_factor();
  std::size_t h = height, w = width, c = channels;
  for (std::size_t l = 0; l < depths.size(); ++l) {
    require(h % 2 == 0 && w % 2 == 0, ErrorCode::kConfig,
            fmt::format("level {} squeezes a {}x{} input; extents must be even", l, h, w));
    h /= 2;
    w /= 2;
    c *= 4;
    const bool last = l + 1 == depths.size();
    if (!last || multiscale == MultiScale::kOriginal) {
      require(depths[l].size() == m / 2, ErrorCode::kConfig,
              fmt::format("level {} has {} blocks; the {} layout needs {}", l, depths[l].size(), to_string(multiscale),
                          m / 2));
    }
    const std::size_t splits = last ? depths[l].size() - 1 : depths[l].size();
    require(c % m == 0, ErrorCode::kConfig,
            fmt::format("level {}: {} channels cannot be split into 1/{} parts", l, c, m));
    const std::size_t removed = splits * (c / m);
    require(removed < c, ErrorCode::kConfig, fmt::format("level {} splits out every channel", l));
    c -= removed;
    require(c >= 2, ErrorCode::kConfig, fmt::format("level {} keeps fewer than 2 channels", l));
  }
}

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  require(learning_rate > 0, ErrorCode::kConfig, "learning_rate must be positive");
  require(decay_rate > 0 && decay_rate <= 1, ErrorCode::kConfig, "decay_rate must be in (0, 1]");
  require(clip_norm > 0, ErrorCode::kConfig, "clip_norm must be positive");
  require(eval_samples >= 1, ErrorCode::kConfig, "eval_samples must be >= 1");
  require(temperature >= 0, ErrorCode::kConfig, "temperature must be non-negative");
}

namespace {

// Applies one key; false when the key is unknown.
bool apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  ModelConfig& m = cfg.model;
  TrainConfig& t = cfg.train;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size = [](std::size_t& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = parse_uint(k, v); };
  };
  const std::map<std::string, Setter> setters{
      {"height", size(m.height)},
      {"width", size(m.width)},
      {"channels", size(m.channels)},
      {"n_bits", [&m](auto& k, auto& v) { m.n_bits = static_cast<unsigned>(parse_uint(k, v)); }},
      {"depths", [&m](auto&, auto& v) { m.depths = parse_depths(v); }},
      {"multiscale",
       [&m](auto& k, auto& v) {
         if (v == "original") m.multiscale = MultiScale::kOriginal;
         else if (v == "fine_grained") m.multiscale = MultiScale::kFineGrained;
         else bad_value(k, v, "original|fine_grained");
       }},
      {"coupling", [&m](auto& k, auto& v) { m.coupling = parse_coupling(k, v); }},
      {"hidden_channels", size(m.hidden_channels)},
      {"kernel_h", size(m.kernel_h)},
      {"kernel_w", size(m.kernel_w)},
      {"units_per_step", size(m.units_per_step)},
      {"dequant",
       [&m](auto& k, auto& v) {
         if (v == "unif") m.dequant = DequantMode::kUniform;
         else if (v == "var") m.dequant = DequantMode::kVariational;
         else bad_value(k, v, "unif|var");
       }},
      {"dequant_units", size(m.dequant_units)},
      {"dequant_hidden", size(m.dequant_hidden)},
      {"dequant_context", size(m.dequant_context)},
      {"dequant_coupling", [&m](auto& k, auto& v) { m.dequant_coupling = parse_coupling(k, v); }},
      {"batch_size", size(t.batch_size)},
      {"steps", size(t.steps)},
      {"learning_rate", [&t](auto& k, auto& v) { t.learning_rate = parse_double(k, v); }},
      {"warmup_steps", size(t.warmup_steps)},
      {"decay_rate", [&t](auto& k, auto& v) { t.decay_rate = parse_double(k, v); }},
      {"clip_norm", [&t](auto& k, auto& v) { t.clip_norm = parse_double(k, v); }},
      {"seed", [&t](auto& k, auto& v) { t.seed = parse_uint(k, v); }},
      {"checkpoint_interval", size(t.checkpoint_interval)},
      {"eval_samples", size(t.eval_samples)},
      {"temperature", [&t](auto& k, auto& v) { t.temperature = parse_double(k, v); }},
      {"precision",
       [&t](auto& k, auto& v) {
         if (v == "f32") t.precision = Precision::kF32;
         else if (v == "f64") t.precision = Precision::kF64;
         else bad_value(k, v, "f32|f64");
       }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) return false;
  it->second(key, value);
  return true;
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  require(!value.empty(), ErrorCode::kConfig, fmt::format("empty value for '{}'", key));
  require(apply_setting(cfg, key, value), ErrorCode::kConfig, fmt::format("unknown config key '{}'", key));
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kConfig, fmt::format("config line {}: expected 'key = value'", lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (auto prev = seen.find(key); prev != seen.end())
      fail(ErrorCode::kConfig, fmt::format("config line {}: key '{}' already set on line {}", lineno, key, prev->second));
    seen[key] = lineno;
    require(!value.empty(), ErrorCode::kConfig, fmt::format("config line {}: empty value for '{}'", lineno, key));
    require(apply_setting(cfg, key, value), ErrorCode::kConfig,
            fmt::format("config line {}: unknown key '{}'", lineno, key));
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, fmt::format("cannot open config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string model_config_text(const ModelConfig& m) {
  std::string s;
  auto add = [&s](std::string_view k, const auto& v) { s += fmt::format("{} = {}\n", k, v); };
  add("height", m.height);
  add("width", m.width);
  add("channels", m.channels);
  add("n_bits", m.n_bits);
  add("depths", format_depths(m.depths));
  add("multiscale", to_string(m.multiscale));
  add("coupling", coupling_name(m.coupling));
  add("hidden_channels", m.hidden_channels);
  add("kernel_h", m.kernel_h);
  add("kernel_w", m.kernel_w);
  add("units_per_step", m.units_per_step);
  add("dequant", to_string(m.dequant));
  add("dequant_units", m.dequant_units);
  add("dequant_hidden", m.dequant_hidden);
  add("dequant_context", m.dequant_context);
  add("dequant_coupling", coupling_name(m.dequant_coupling));
  return s;
}

std::string config_text(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::string s = model_config_text(cfg.model);
  auto add = [&s](std::string_view k, const auto& v) { s += fmt::format("{} = {}\n", k, v); };
  add("batch_size", t.batch_size);
  add("steps", t.steps);
  add("learning_rate", fmt::format("{:.17g}", t.learning_rate));
  add("warmup_steps", t.warmup_steps);
  add("decay_rate", fmt::format("{:.17g}", t.decay_rate));
  add("clip_norm", fmt::format("{:.17g}", t.clip_norm));
  add("seed", t.seed);
  add("checkpoint_interval", t.checkpoint_interval);
  add("eval_samples", t.eval_samples);
  add("temperature", fmt::format("{:.17g}", t.temperature));
  add("precision", to_string(t.precision));
  return s;
}

std::string config_value(const RunConfig& cfg, const std::string& key) {
  std::istringstream in(config_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && trim(line.substr(0, eq)) == key) return trim(line.substr(eq + 1));
  }
  fail(ErrorCode::kConfig, fmt::format("unknown config key '{}'", key));
}

}  // namespace macow
