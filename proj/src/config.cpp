#include "branchsim/config.hpp"

#include "branchsim/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace branchsim {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream stream(s);
  while (std::getline(stream, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
  bool used = false;
};

class Document {
 public:
  Document(const std::string& text, const std::string& origin, std::vector<std::string>& errors)
      : origin_(origin), errors_(&errors) {
    std::istringstream stream(text);
    std::string raw;
    int number = 0;
    std::string section;
    while (std::getline(stream, raw)) {
      ++number;
      const std::size_t hash = raw.find('#');
      if (hash != std::string::npos) raw.erase(hash);
      const std::string line = trim(raw);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          error(number, "malformed section header '" + line + "'");
          continue;
        }
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) error(number, "empty section name");
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        error(number, "expected 'key = value', got '" + line + "'");
        continue;
      }
      Entry entry;
      entry.section = section;
      entry.key = trim(line.substr(0, eq));
      entry.value = trim(line.substr(eq + 1));
      entry.line = number;
      if (entry.key.empty()) {
        error(number, "empty key");
        continue;
      }
      if (section.empty()) {
        error(number, "key '" + entry.key + "' appears before any [section]");
        continue;
      }
      for (const Entry& seen : entries_) {
        if (seen.section == entry.section && seen.key == entry.key) {
          error(number, "duplicate key '" + entry.key + "' in [" + entry.section + "] (first at line " +
                            std::to_string(seen.line) + ")");
        }
      }
      entries_.push_back(entry);
    }
  }

  const Entry* find(const std::string& section, const std::string& key) {
    for (Entry& entry : entries_) {
      if (entry.section == section && entry.key == key) {
        entry.used = true;
        return &entry;
      }
    }
    return nullptr;
  }

  bool has_section(const std::string& section) const {
    for (const Entry& entry : entries_) {
      if (entry.section == section) return true;
    }
    return false;
  }

  std::vector<std::string> sections_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const Entry& entry : entries_) {
      if (entry.section.rfind(prefix, 0) == 0 &&
          std::find(out.begin(), out.end(), entry.section) == out.end()) {
        out.push_back(entry.section);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  void report_unused() {
    for (const Entry& entry : entries_) {
      if (!entry.used) {
        error(entry.line, "unknown key '" + entry.key + "' in [" + entry.section + "]");
      }
    }
  }

  void error(int line, const std::string& message) {
    errors_->push_back(origin_ + ":" + std::to_string(line) + ": " + message);
  }
  void error(const std::string& message) { errors_->push_back(origin_ + ": " + message); }

  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::vector<std::string>* errors_;
  std::vector<Entry> entries_;
};

bool parse_double_value(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool parse_int_value(const std::string& s, long long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

bool parse_bool_value(const std::string& s, bool& out) {
  const std::string v = lower(s);
  if (v == "true" || v == "yes" || v == "on" || v == "1") {
    out = true;
    return true;
  }
  if (v == "false" || v == "no" || v == "off" || v == "0") {
    out = false;
    return true;
  }
  return false;
}

bool identifier_like(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
  for (char c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  }
  return true;
}

// Typed readers: each reports its own error and leaves the default in place
// on failure.
class Reader {
 public:
  explicit Reader(Document& doc) : doc_(doc) {}

  bool get_double(const std::string& section, const std::string& key, double& out) {
    const Entry* entry = doc_.find(section, key);
    if (!entry) return false;
    if (!parse_double_value(entry->value, out)) {
      doc_.error(entry->line, key + ": expected a number, got '" + entry->value + "'");
    }
    return true;
  }

  bool get_int(const std::string& section, const std::string& key, long long min_value,
               long long& out) {
    const Entry* entry = doc_.find(section, key);
    if (!entry) return false;
    long long v = 0;
    if (!parse_int_value(entry->value, v)) {
      doc_.error(entry->line, key + ": expected an integer, got '" + entry->value + "'");
    } else if (v < min_value) {
      doc_.error(entry->line, key + ": must be at least " + std::to_string(min_value));
    } else {
      out = v;
    }
    return true;
  }

  bool get_bool(const std::string& section, const std::string& key, bool& out) {
    const Entry* entry = doc_.find(section, key);
    if (!entry) return false;
    if (!parse_bool_value(entry->value, out)) {
      doc_.error(entry->line, key + ": expected true/false, got '" + entry->value + "'");
    }
    return true;
  }

  bool get_string(const std::string& section, const std::string& key, std::string& out) {
    const Entry* entry = doc_.find(section, key);
    if (!entry) return false;
    out = entry->value;
    return true;
  }

  bool get_expr(const std::string& section, const std::string& key, std::string& out) {
    const Entry* entry = doc_.find(section, key);
    if (!entry) return false;
    try {
      Expr::parse(entry->value);
      out = entry->value;
    } catch (const ExprError& e) {
      doc_.error(entry->line, key + ": " + e.what());
    }
    return true;
  }

  bool get_vector(const std::string& section, const std::string& key, Eigen::VectorXd& out) {
    const Entry* entry = doc_.find(section, key);
    if (!entry) return false;
    const std::vector<std::string> parts = split(entry->value, ',');
    Eigen::VectorXd v(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      double d = 0.0;
      if (!parse_double_value(parts[i], d)) {
        doc_.error(entry->line, key + ": entry " + std::to_string(i + 1) + " ('" + parts[i] +
                                     "') is not a number");
        return true;
      }
      v[i] = d;
    }
    out = v;
    return true;
  }

  bool get_matrix(const std::string& section, const std::string& key, Eigen::MatrixXd& out) {
    const Entry* entry = doc_.find(section, key);
    if (!entry) return false;
    const std::vector<std::string> rows = split(entry->value, ';');
    std::vector<Eigen::VectorXd> parsed;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::vector<std::string> parts = split(rows[r], ',');
      Eigen::VectorXd v(parts.size());
      for (std::size_t i = 0; i < parts.size(); ++i) {
        double d = 0.0;
        if (!parse_double_value(parts[i], d)) {
          doc_.error(entry->line, key + ": row " + std::to_string(r + 1) + " entry " +
                                       std::to_string(i + 1) + " is not a number");
          return true;
        }
        v[i] = d;
      }
      if (!parsed.empty() && v.size() != parsed.front().size()) {
        doc_.error(entry->line, key + ": row " + std::to_string(r + 1) + " has " +
                                     std::to_string(v.size()) + " entries, expected " +
                                     std::to_string(parsed.front().size()));
        return true;
      }
      parsed.push_back(v);
    }
    if (parsed.empty()) {
      doc_.error(entry->line, key + ": empty matrix");
      return true;
    }
    Eigen::MatrixXd m(parsed.size(), parsed.front().size());
    for (std::size_t r = 0; r < parsed.size(); ++r) m.row(r) = parsed[r];
    out = m;
    return true;
  }

  Document& doc() { return doc_; }

 private:
  Document& doc_;
};

void parse_model_section(Reader& reader, Document& doc, ExperimentConfig& config) {
  std::string kind;
  if (!reader.get_string("model", "kind", kind)) {
    doc.error("[model] kind is required (yule | finite_type | house_of_cards)");
    return;
  }
  config.kind = lower(kind);

  long long kappa = config.kappa;
  if (reader.get_int("model", "kappa", 1, kappa)) config.kappa = static_cast<int>(kappa);
  reader.get_expr("model", "V", config.v_source);

  if (config.kind == "yule") {
    reader.get_double("model", "b", config.b);
    return;
  }

  if (config.kind == "house_of_cards") {
    if (!reader.get_expr("model", "alpha", config.alpha_source)) {
      doc.error("[model] alpha is required for house_of_cards");
    }
    std::string realization;
    if (reader.get_string("model", "realization", realization)) {
      config.realization = lower(realization);
      if (config.realization != "pure_death" && config.realization != "binary" &&
          config.realization != "custom") {
        doc.error("[model] realization must be pure_death, binary, or custom (got '" +
                  realization + "')");
      }
    }
    reader.get_double("model", "r_scale", config.r_scale);
    const bool has_rate = reader.get_expr("model", "rate", config.rate_source);
    const Entry* offspring_entry = doc.find("model", "offspring");
    if (offspring_entry) {
      for (const std::string& source : split(offspring_entry->value, ';')) {
        try {
          Expr::parse(source);
          config.offspring_sources.push_back(source);
        } catch (const ExprError& e) {
          doc.error(offspring_entry->line, std::string("offspring: ") + e.what());
        }
      }
    }
    if (config.realization == "custom" && (!has_rate || !offspring_entry)) {
      doc.error("[model] custom realization needs both rate and offspring");
    }
    return;
  }

  if (config.kind == "finite_type") {
    long long types = 0;
    if (reader.get_int("model", "types", 1, types)) {
      config.types = static_cast<int>(types);
    } else {
      doc.error("[model] types is required for finite_type");
    }
    const std::vector<std::string> sections = doc.sections_with_prefix("model.channel");
    if (sections.empty()) {
      doc.error("at least one [model.channel.N] section is required for finite_type");
    }
    for (const std::string& section : sections) {
      ChannelConfig channel;
      if (!reader.get_vector(section, "rates", channel.rates)) {
        doc.error("[" + section + "] rates is required");
      }
      if (!reader.get_matrix(section, "offspring", channel.offspring)) {
        doc.error("[" + section + "] offspring is required");
      }
      reader.get_matrix(section, "kernel", channel.kernel);
      config.channels.push_back(std::move(channel));
    }
    return;
  }

  doc.error("[model] unknown kind '" + kind + "'");
}

void parse_simulation_section(Reader& reader, Document& doc, ExperimentConfig& config) {
  reader.get_double("simulation", "x0", config.x0);

  Eigen::VectorXd grid;
  if (reader.get_vector("simulation", "grid", grid)) {
    config.grid.assign(grid.data(), grid.data() + grid.size());
    for (std::size_t i = 0; i < config.grid.size(); ++i) {
      if (!(config.grid[i] > 0.0) || (i > 0 && config.grid[i] <= config.grid[i - 1])) {
        doc.error("[simulation] grid must be strictly increasing and positive");
        break;
      }
    }
  } else {
    doc.error("[simulation] grid is required");
  }

  reader.get_double("simulation", "extension", config.extension);
  if (config.extension < 0.0) doc.error("[simulation] extension must be nonnegative");

  long long replicas = 0;
  if (reader.get_int("simulation", "replicas", 1, replicas)) {
    config.replicas = static_cast<int>(replicas);
  } else {
    doc.error("[simulation] replicas is required");
  }

  long long cap = 0;
  if (reader.get_int("simulation", "cap", 1, cap)) config.cap = static_cast<std::size_t>(cap);

  long long seed = 0;
  const Entry* seed_entry = reader.doc().find("simulation", "seed");
  if (!seed_entry) {
    doc.error("[simulation] seed required");
  } else if (!parse_int_value(seed_entry->value, seed) || seed < 0) {
    doc.error(seed_entry->line, "seed: expected a nonnegative integer, got '" +
                                    seed_entry->value + "'");
  } else {
    config.seed = static_cast<std::uint64_t>(seed);
  }

  long long threads = 1;
  if (reader.get_int("simulation", "threads", 1, threads)) {
    config.threads = static_cast<int>(threads);
  }
}

void parse_analysis_section(Reader& reader, Document& doc, ExperimentConfig& config) {
  const Entry* functions = reader.doc().find("analysis", "functions");
  if (functions) {
    for (const std::string& item : split(functions->value, ';')) {
      if (item.empty()) continue;
      const std::size_t colon = item.find(':');
      if (colon == std::string::npos) {
        doc.error(functions->line, "functions: expected 'name: expression', got '" + item + "'");
        continue;
      }
      const std::string name = trim(item.substr(0, colon));
      const std::string source = trim(item.substr(colon + 1));
      if (!identifier_like(name)) {
        doc.error(functions->line, "functions: '" + name + "' is not a valid name");
        continue;
      }
      if (name == "h" || name == "one") {
        doc.error(functions->line, "functions: the name '" + name +
                                       "' is reserved for the auto-registered functions");
        continue;
      }
      bool duplicate = false;
      for (const auto& [existing, unused] : config.functions) {
        if (existing == name) duplicate = true;
      }
      if (duplicate) {
        doc.error(functions->line, "functions: duplicate name '" + name + "'");
        continue;
      }
      try {
        Expr::parse(source);
        config.functions.emplace_back(name, source);
      } catch (const ExprError& e) {
        doc.error(functions->line, "functions: " + name + ": " + e.what());
      }
    }
  }

  reader.get_bool("analysis", "distance", config.run_distance);
  reader.get_bool("analysis", "rate_fit", config.run_rate_fit);
  reader.get_bool("analysis", "moment_growth", config.run_moment_growth);

  std::string regime;
  if (reader.get_string("analysis", "regime", regime)) {
    config.regime_override = lower(regime);
    if (config.regime_override != "auto" && config.regime_override != "small" &&
        config.regime_override != "critical" && config.regime_override != "large") {
      doc.error("[analysis] regime must be auto, small, critical, or large");
    }
  }

  long long quad_points = config.quad_points;
  if (reader.get_int("analysis", "quad_points", 8, quad_points)) {
    config.quad_points = static_cast<int>(quad_points);
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error([&violations] {
        std::string message = "config error (" + std::to_string(violations.size()) + " problem" +
                              (violations.size() == 1 ? "" : "s") + "):";
        for (const std::string& v : violations) message += "\n  - " + v;
        return message;
      }()),
      violations_(std::move(violations)) {}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  std::vector<std::string> errors;
  Document doc(text, origin, errors);
  Reader reader(doc);
  ExperimentConfig config;

  if (!doc.has_section("model")) doc.error("missing [model] section");
  if (!doc.has_section("simulation")) doc.error("missing [simulation] section");
  if (doc.has_section("model")) parse_model_section(reader, doc, config);
  if (doc.has_section("simulation")) parse_simulation_section(reader, doc, config);
  parse_analysis_section(reader, doc, config);
  reader.get_bool("output", "dump_trajectories", config.dump_trajectories);

  doc.report_unused();
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return config;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path + ": cannot open file"});
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path);
}

Model build_model(const ExperimentConfig& config) {
  Model model;
  if (config.kind == "yule") {
    model = make_yule(config.b);
  } else if (config.kind == "finite_type") {
    std::vector<FiniteChannel> channels;
    for (const ChannelConfig& channel : config.channels) {
      FiniteChannel fc;
      fc.rates = channel.rates;
      fc.offspring = channel.offspring;
      fc.kernel = channel.kernel.size() > 0
                      ? channel.kernel
                      : Eigen::MatrixXd::Identity(config.types, config.types);
      channels.push_back(std::move(fc));
    }
    model = make_finite_type(channels, config.types);
  } else if (config.kind == "house_of_cards") {
    const Expr alpha = Expr::parse(config.alpha_source);
    if (config.realization == "pure_death") {
      model = make_house_of_cards(hoc_pure_death(alpha));
    } else if (config.realization == "binary") {
      model = make_house_of_cards(hoc_binary(alpha, config.r_scale));
    } else {
      HouseOfCardsParams params;
      params.alpha = alpha;
      params.rate = Expr::parse(config.rate_source);
      for (const std::string& source : config.offspring_sources) {
        params.offspring.push_back(Expr::parse(source));
      }
      model = make_house_of_cards(params);
    }
  } else {
    throw ConfigError({"unknown model kind '" + config.kind + "'"});
  }

  if (!config.v_source.empty() || config.kappa != model.moment_order) {
    if (!config.v_source.empty()) model.V = Expr::parse(config.v_source);
    model.moment_order = config.kappa;
    validate_model(model);
  }
  return model;
}

}  // namespace branchsim
