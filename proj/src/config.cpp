#include "tfm/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "tfm/errors.hpp"
#include "tfm/rng.hpp"

namespace tfm {

namespace {

struct Field {
  std::string name;
  bool architecture;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename V>
V parse_value(const std::string& key, const std::string& text);

template <>
std::size_t parse_value(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
    const auto v = std::stoull(text, &used);
    if (used == text.size()) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + text + "'");
}

template <>
double parse_value(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
}

template <>
bool parse_value(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

template <>
AttentionKernel parse_value(const std::string&, const std::string& text) {
  return parse_kernel(text);
}

std::string format(std::size_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(AttentionKernel k) { return kernel_name(k); }
std::string format(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename V>
Field field(const std::string& name, bool architecture, V RunConfig::*member) {
  return {name, architecture,
          [name, member](RunConfig& c, const std::string& t) { c.*member = parse_value<V>(name, t); },
          [member](const RunConfig& c) { return format(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      field("topics", true, &RunConfig::topics),
      field("covisible", false, &RunConfig::covisible),
      field("tau", false, &RunConfig::tau),
      field("samples", false, &RunConfig::samples),
      field("negatives", false, &RunConfig::negatives),
      field("patch", false, &RunConfig::patch),
      field("width1", true, &RunConfig::width1),
      field("width2", true, &RunConfig::width2),
      field("width3", true, &RunConfig::width3),
      field("width4", true, &RunConfig::width4),
      field("topic_depth", true, &RunConfig::topic_depth),
      field("heads", true, &RunConfig::heads),
      field("topic_kernel", false, &RunConfig::topic_kernel),
      field("coarse_kernel", false, &RunConfig::coarse_kernel),
      field("fine_kernel", false, &RunConfig::fine_kernel),
      field("temperature", false, &RunConfig::temperature),
      field("positional_encoding", false, &RunConfig::positional_encoding),
      field("mutual_nearest", false, &RunConfig::mutual_nearest),
      field("hard_argmax", false, &RunConfig::hard_argmax),
      field("seed", false, &RunConfig::seed),
      field("steps", false, &RunConfig::steps),
      field("batch", false, &RunConfig::batch),
      field("learning_rate", false, &RunConfig::learning_rate),
      field("grad_clip", false, &RunConfig::grad_clip),
      field("fine_matches", false, &RunConfig::fine_matches),
      field("log_every", false, &RunConfig::log_every),
      field("checkpoint_every", false, &RunConfig::checkpoint_every),
      field("image_size", false, &RunConfig::image_size),
      field("perspective", false, &RunConfig::perspective),
      field("jitter", false, &RunConfig::jitter),
      field("topk", false, &RunConfig::topk),
      field("ransac_threshold", false, &RunConfig::ransac_threshold),
      field("ransac_confidence", false, &RunConfig::ransac_confidence),
      field("ransac_iterations", false, &RunConfig::ransac_iterations),
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.name == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  find_field(key).set(*this, value);
}

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.push_back(f.name);
  return k;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& f : fields()) s += f.name + " = " + f.get(*this) + "\n";
  return s;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
  if (topics < 1) fail("topics must be at least 1");
  if (covisible < 1 || covisible > topics) fail("covisible must lie in [1, topics]");
  if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0, 1)");
  if (samples < 1) fail("samples must be at least 1");
  if (negatives < 1) fail("negatives must be at least 1");
  if (patch % 2 == 0 || patch < 3) fail("patch must be odd and at least 3");
  if (width1 >= width3) fail("width1 (fine) must be below width3 (coarse)");
  if (heads < 1 || width3 % heads || width1 % heads) fail("heads must divide width1 and width3");
  if (width3 % 4) fail("width3 must be a multiple of 4 for the positional encoding");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (batch < 1) fail("batch must be at least 1");
  if (learning_rate < 0.0) fail("learning_rate must be non-negative");
  if (image_size < 64 || image_size % 8) fail("image_size must be a multiple of 8 and at least 64");
  if (!(ransac_confidence > 0.0 && ransac_confidence < 1.0)) fail("ransac_confidence must lie in (0, 1)");
  if (topk < 1) fail("topk must be at least 1");
}

std::uint64_t RunConfig::architecture_hash() const {
  std::string s;
  for (const auto& f : fields())
    if (f.architecture) s += f.name + "=" + f.get(*this) + ";";
  return fnv1a(s.data(), s.size());
}

SynthConfig RunConfig::synth() const { return {image_size, perspective, jitter}; }

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace tfm
