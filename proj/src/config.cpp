#include "corrnet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace corrnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: invalid value '" + text + "' for key " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: invalid boolean '" + text + "' for key " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw ConfigError("config: empty list for key " + key);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CORRNET_KEY_INT(field)                                                                     \
  Key{#field, [](RunConfig& c, const std::string& v) { c.field = parse_number<decltype(c.field)>(#field, v); }, \
      [](const RunConfig& c) { return std::to_string(c.field); }}
#define CORRNET_KEY_DOUBLE(field)                                                                \
  Key{#field, [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(#field, v); }, \
      [](const RunConfig& c) { return format_double(c.field); }}
#define CORRNET_KEY_LIST(field)                                                                           \
  Key{#field,                                                                                             \
      [](RunConfig& c, const std::string& v) {                                                            \
        c.field = parse_list<typename decltype(c.field)::value_type>(#field, v);                          \
      },                                                                                                  \
      [](const RunConfig& c) { return format_list(c.field); }}
#define CORRNET_KEY_STRING(field) \
  Key{#field, [](RunConfig& c, const std::string& v) { c.field = v; }, [](const RunConfig& c) { return c.field; }}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table{
      CORRNET_KEY_STRING(data_dir),
      CORRNET_KEY_INT(seed),
      CORRNET_KEY_INT(epochs),
      CORRNET_KEY_INT(batch_size),
      CORRNET_KEY_DOUBLE(learning_rate),
      CORRNET_KEY_DOUBLE(weight_decay),
      CORRNET_KEY_DOUBLE(clip_norm),
      CORRNET_KEY_DOUBLE(stop_dev_wer),
      CORRNET_KEY_INT(max_train_samples),
      CORRNET_KEY_DOUBLE(flops_frames),
      CORRNET_KEY_STRING(resume),
      CORRNET_KEY_INT(frame_size),
      CORRNET_KEY_LIST(stage_channels),
      Key{"st_stages", [](RunConfig& c, const std::string& v) { c.st_stages = parse_bool("st_stages", v); },
          [](const RunConfig& c) { return std::string(c.st_stages ? "true" : "false"); }},
      CORRNET_KEY_LIST(st_after),
      CORRNET_KEY_LIST(windows),
      CORRNET_KEY_INT(reduction),
      CORRNET_KEY_INT(spatial_scales),
      CORRNET_KEY_INT(temporal_scales),
      CORRNET_KEY_INT(temporal_branches),
      CORRNET_KEY_INT(temporal_kernel),
      CORRNET_KEY_INT(head_channels),
      CORRNET_KEY_INT(hidden),
      CORRNET_KEY_INT(rnn_layers),
  };
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError("config: " + where + ": expected key=value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: " + where + ": empty key");
    if (!out.emplace(key, value).second) throw ConfigError("config: " + where + ": duplicate key " + key);
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  return parse_key_values(is, path.string());
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  const auto& table = key_table();
  for (const auto& [key, value] : kv) {
    auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == key; });
    if (it == table.end()) throw ConfigError("config: unknown key " + key);
    it->set(c, value);
  }
  if (c.epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (!(c.learning_rate > 0)) throw ConfigError("config: learning_rate must be > 0");
  if (c.max_train_samples < 0) throw ConfigError("config: max_train_samples must be >= 0");
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) { return from_map(read_key_values(path)); }

std::string RunConfig::to_string() const {
  std::string out;
  for (const auto& k : key_table()) out += k.name + "=" + k.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

ModelConfig RunConfig::model(int vocab_size) const {
  ModelConfig m;
  m.frame_size = frame_size;
  m.stage_channels = stage_channels;
  m.st_stages = st_stages;
  m.st_after = st_after;
  m.windows = windows;
  m.vocab_size = vocab_size;
  m.head_channels = head_channels;
  m.hidden = hidden;
  m.rnn_layers = rnn_layers;
  m.identification.reduction = reduction;
  m.identification.spatial_scales = spatial_scales;
  m.identification.temporal_scales = temporal_scales;
  m.temporal.reduction = reduction;
  m.temporal.branches = temporal_branches;
  m.temporal.kernel = temporal_kernel;
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return m;
}

}  // namespace corrnet
