#include "edcnn/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace edcnn {

namespace {

std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value, got \"" + std::string(line) + "\"");
      }
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
      if (cfg.entries_.count(key)) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key \"" + key + "\" (first on line " +
                          std::to_string(cfg.entries_[key].line) + ")");
      }
      cfg.entries_[key] = Entry{value, line_no};
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::fail(const std::string& key, const std::string& msg) const {
  const auto it = entries_.find(key);
  const std::string where = it == entries_.end() ? source_ : source_ + ":" + std::to_string(it->second.line);
  throw ConfigError(where + ": key \"" + key + "\": " + msg);
}

std::optional<std::string> KeyValueConfig::get_string(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second.value;
}

std::optional<double> KeyValueConfig::get_double(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || ptr != s->data() + s->size()) fail(key, "expected a number, got \"" + *s + "\"");
  return v;
}

std::optional<std::int64_t> KeyValueConfig::get_int(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || ptr != s->data() + s->size()) fail(key, "expected an integer, got \"" + *s + "\"");
  return v;
}

std::optional<std::uint64_t> KeyValueConfig::get_u64(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || ptr != s->data() + s->size()) fail(key, "expected an unsigned integer, got \"" + *s + "\"");
  return v;
}

std::optional<bool> KeyValueConfig::get_bool(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  if (*s == "true" || *s == "1") return true;
  if (*s == "false" || *s == "0") return false;
  fail(key, "expected true or false, got \"" + *s + "\"");
}

void KeyValueConfig::check_known(const std::set<std::string>& known) const {
  for (const auto& [key, entry] : entries_) {
    if (!known.count(key)) {
      throw ConfigError(source_ + ":" + std::to_string(entry.line) + ": unknown key \"" + key + "\"");
    }
  }
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  auto& e = entries_[key];
  e.value = value;
}

}  // namespace edcnn
