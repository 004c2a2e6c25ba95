#include "sparse_lab/errors.hpp"
#include "sparse_lab/experiments.hpp"

#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>

namespace sparse_lab {

namespace {

const std::map<std::string, std::map<std::string, double>>& default_thresholds() {
  static const std::map<std::string, std::map<std::string, double>> table = {
      {"z-clt", {{"std_min", 0.93}, {"std_max", 1.07}, {"ks_p_min", 0.01}, {"ks_trend_sigmas", 2.0}}},
      {"edge", {{"corr_min", 0.7}, {"std_ratio_min", 0.8}, {"std_ratio_max", 1.5}, {"sym_ks_p_min", 0.01}}},
      {"bulk", {{"corr_min", 0.85}, {"slope_sigmas", 3.0}}},
      {"rescale", {{"ratio_min", 0.0}, {"ratio_max", 0.5}}},
      {"joint", {{"corr_min", 0.85}}},
      {"rigidity",
       {{"count_prefactor", 10.0}, {"edge_prefactor", 10.0}, {"epsilon0", 0.05}, {"edge_quantile", 0.99}}},
      {"p-small", {{"bound_prefactor", 5.0}, {"trend_sigmas", 2.0}, {"spread_ratio_min", 3.0}}},
  };
  return table;
}

[[noreturn]] void fail(const toml::node* node, const std::string& field, const std::string& what) {
  std::string where;
  if (node != nullptr && node->source().begin.line > 0) {
    where = "line " + std::to_string(node->source().begin.line) + ", ";
  }
  throw ConfigError("config: " + where + "field '" + field + "': " + what);
}

double as_double(const toml::node& node, const std::string& field) {
  if (auto v = node.value<double>()) return *v;
  fail(&node, field, "expected a number");
}

std::int64_t as_int(const toml::node& node, const std::string& field) {
  if (!node.is_integer()) fail(&node, field, "expected an integer");
  return node.as_integer()->get();
}

std::string as_string(const toml::node& node, const std::string& field) {
  if (!node.is_string()) fail(&node, field, "expected a string");
  return node.as_string()->get();
}

const toml::array& as_array(const toml::node& node, const std::string& field) {
  if (!node.is_array()) fail(&node, field, "expected an array");
  return *node.as_array();
}

const toml::table* subtable(const toml::table& root, const std::string& name, bool required) {
  const toml::node* node = root.get(name);
  if (node == nullptr) {
    if (required) throw ConfigError("config: missing table [" + name + "]");
    return nullptr;
  }
  if (!node->is_table()) fail(node, name, "expected a table");
  return node->as_table();
}

void reject_unknown(const toml::table& table, const std::string& prefix, std::initializer_list<const char*> known) {
  for (const auto& [key, node] : table) {
    const std::string k(key.str());
    if (std::none_of(known.begin(), known.end(), [&](const char* s) { return k == s; })) {
      fail(&node, prefix + k, "unknown key");
    }
  }
}

IndexExpr index_from_node(const toml::node& node, const std::string& field) {
  if (node.is_integer()) return IndexExpr{0, 1, node.as_integer()->get()};
  if (node.is_string()) {
    try {
      return parse_index(node.as_string()->get());
    } catch (const ConfigError& e) {
      fail(&node, field, e.what());
    }
  }
  fail(&node, field, "expected an integer or an index expression such as \"N/4\"");
}

std::vector<IndexExpr> index_list(const toml::node& node, const std::string& field) {
  std::vector<IndexExpr> out;
  for (const auto& item : as_array(node, field)) out.push_back(index_from_node(item, field));
  return out;
}

std::string format_double(double v) {
  // Shortest text that round-trips.
  for (int precision = 1; precision <= 17; ++precision) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    if (std::stod(os.str()) == v) {
      std::string s = os.str();
      if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
      return s;
    }
  }
  return std::to_string(v);
}

}  // namespace

std::int64_t IndexExpr::resolve(std::int64_t n) const { return offset + num * n / den; }

std::string IndexExpr::to_string() const {
  if (num == 0) return std::to_string(offset);
  std::string s;
  if (num != 1) s += std::to_string(num);
  s += "N";
  if (den != 1) s += "/" + std::to_string(den);
  if (offset > 0) s += "+" + std::to_string(offset);
  if (offset < 0) s += std::to_string(offset);
  return s;
}

IndexExpr parse_index(const std::string& text) {
  static const std::regex plain(R"(^\s*(-?\d+)\s*$)");
  static const std::regex expr(R"(^\s*(\d+)?\s*\*?\s*N\s*(?:/\s*(\d+))?\s*(?:([+-])\s*(\d+))?\s*$)");
  std::smatch m;
  if (std::regex_match(text, m, plain)) return IndexExpr{0, 1, std::stoll(m[1].str())};
  if (std::regex_match(text, m, expr)) {
    IndexExpr e;
    e.num = m[1].matched ? std::stoll(m[1].str()) : 1;
    e.den = m[2].matched ? std::stoll(m[2].str()) : 1;
    if (e.den == 0) throw ConfigError("index expression '" + text + "': division by zero");
    if (m[3].matched) e.offset = (m[3].str() == "-" ? -1 : 1) * std::stoll(m[4].str());
    return e;
  }
  throw ConfigError("cannot parse index expression '" + text + "'");
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"z-clt", "edge", "bulk", "rescale", "joint", "rigidity", "p-small"};
  return names;
}

double threshold(const ExperimentConfig& config, const std::string& name, double scale) {
  if (auto it = config.thresholds.find(name); it != config.thresholds.end()) return it->second * scale;
  const auto& table = default_thresholds();
  if (auto e = table.find(config.experiment); e != table.end()) {
    if (auto it = e->second.find(name); it != e->second.end()) return it->second * scale;
  }
  throw ConfigError("no threshold '" + name + "' for experiment '" + config.experiment + "'");
}

ExperimentConfig parse_config(const std::string& toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw ConfigError("config: line " + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
  }
  reject_unknown(root, "", {"experiment", "model", "run", "probes", "thresholds"});

  ExperimentConfig cfg;
  const toml::node* exp = root.get("experiment");
  if (exp == nullptr) throw ConfigError("config: missing key 'experiment'");
  cfg.experiment = as_string(*exp, "experiment");
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), cfg.experiment) == names.end()) {
    fail(exp, "experiment", "unknown experiment '" + cfg.experiment + "'");
  }

  const toml::table& model = *subtable(root, "model", true);
  reject_unknown(model, "model.", {"kind", "N", "p", "beta", "q", "loops", "kappas"});
  const toml::node* kind = model.get("kind");
  if (kind == nullptr) throw ConfigError("config: missing key 'model.kind'");
  const std::string kind_name = as_string(*kind, "model.kind");
  if (kind_name == "er") {
    cfg.model.kind = EnsembleKind::erdos_renyi;
  } else if (kind_name == "rademacher") {
    cfg.model.kind = EnsembleKind::sparse_rademacher;
  } else if (kind_name == "custom") {
    cfg.model.kind = EnsembleKind::custom;
  } else {
    fail(kind, "model.kind", "expected er, rademacher or custom");
  }
  const toml::node* n = model.get("N");
  if (n == nullptr) throw ConfigError("config: missing key 'model.N'");
  cfg.model.N = as_int(*n, "model.N");
  if (cfg.model.N < 2) fail(n, "model.N", "must be at least 2");
  int sparsity_keys = 0;
  if (const auto* v = model.get("p")) cfg.model.p = as_double(*v, "model.p"), ++sparsity_keys;
  if (const auto* v = model.get("beta")) cfg.model.beta = as_double(*v, "model.beta"), ++sparsity_keys;
  if (const auto* v = model.get("q")) cfg.model.q = as_double(*v, "model.q"), ++sparsity_keys;
  if (sparsity_keys != 1) throw ConfigError("config: [model] needs exactly one of p, beta, q");
  if (cfg.model.p && cfg.model.kind != EnsembleKind::erdos_renyi) {
    fail(model.get("p"), "model.p", "only valid for kind = \"er\"");
  }
  if (cfg.model.q && cfg.model.kind != EnsembleKind::sparse_rademacher) {
    fail(model.get("q"), "model.q", "only valid for kind = \"rademacher\"");
  }
  if (cfg.model.kind == EnsembleKind::custom && !cfg.model.beta) {
    throw ConfigError("config: custom models need model.beta");
  }
  if (const auto* v = model.get("loops")) {
    if (!v->is_boolean()) fail(v, "model.loops", "expected a boolean");
    cfg.model.loops = v->as_boolean()->get();
  }
  if (const auto* v = model.get("kappas")) {
    for (const auto& item : as_array(*v, "model.kappas")) cfg.model.kappas.push_back(as_double(item, "model.kappas"));
  }
  if (cfg.model.kind == EnsembleKind::custom && cfg.model.kappas.empty()) {
    throw ConfigError("config: custom models need model.kappas");
  }

  const toml::table& run = *subtable(root, "run", true);
  reject_unknown(run, "run.", {"M", "master_seed", "workers"});
  const toml::node* M = run.get("M");
  if (M == nullptr) throw ConfigError("config: missing key 'run.M'");
  cfg.M = as_int(*M, "run.M");
  if (cfg.M < 1) fail(M, "run.M", "must be positive");
  const toml::node* seed = run.get("master_seed");
  if (seed == nullptr) throw ConfigError("config: missing key 'run.master_seed'");
  const std::int64_t s = as_int(*seed, "run.master_seed");
  if (s < 0) fail(seed, "run.master_seed", "must be nonnegative");
  cfg.master_seed = static_cast<std::uint64_t>(s);
  if (const auto* v = run.get("workers")) {
    cfg.workers = static_cast<int>(as_int(*v, "run.workers"));
    if (cfg.workers < 1) fail(v, "run.workers", "must be positive");
  }

  if (const toml::table* probes = subtable(root, "probes", false)) {
    reject_unknown(*probes, "probes.",
                   {"indices", "centre_indices", "z", "intervals", "N_ladder", "edge", "polynomial", "domain_c"});
    if (const auto* v = probes->get("indices")) cfg.indices = index_list(*v, "probes.indices");
    if (const auto* v = probes->get("centre_indices")) cfg.centre_indices = index_list(*v, "probes.centre_indices");
    if (const auto* v = probes->get("z")) {
      for (const auto& item : as_array(*v, "probes.z")) {
        const auto& pair = as_array(item, "probes.z");
        if (pair.size() != 2) fail(&item, "probes.z", "expected [re, im]");
        cfg.z_probes.emplace_back(as_double(pair[0], "probes.z"), as_double(pair[1], "probes.z"));
      }
    }
    if (const auto* v = probes->get("intervals")) {
      for (const auto& item : as_array(*v, "probes.intervals")) {
        const auto& pair = as_array(item, "probes.intervals");
        if (pair.size() != 2) fail(&item, "probes.intervals", "expected [lo, hi]");
        const double lo = as_double(pair[0], "probes.intervals");
        const double hi = as_double(pair[1], "probes.intervals");
        if (!(lo < hi)) fail(&item, "probes.intervals", "expected lo < hi");
        cfg.intervals.emplace_back(lo, hi);
      }
    }
    if (const auto* v = probes->get("N_ladder")) {
      for (const auto& item : as_array(*v, "probes.N_ladder")) {
        const auto value = as_int(item, "probes.N_ladder");
        if (value < 2) fail(&item, "probes.N_ladder", "entries must be at least 2");
        cfg.N_ladder.push_back(value);
      }
    }
    if (const auto* v = probes->get("edge")) {
      if (!v->is_boolean()) fail(v, "probes.edge", "expected a boolean");
      cfg.edge = v->as_boolean()->get();
    }
    if (const auto* v = probes->get("polynomial")) {
      cfg.polynomial = as_string(*v, "probes.polynomial");
      if (cfg.polynomial != "built" && cfg.polynomial != "quadratic") {
        fail(v, "probes.polynomial", "expected \"built\" or \"quadratic\"");
      }
    }
    if (const auto* v = probes->get("domain_c")) {
      cfg.domain_c = as_double(*v, "probes.domain_c");
      if (!(cfg.domain_c > 0.0 && cfg.domain_c < 1.0)) fail(v, "probes.domain_c", "must lie in (0, 1)");
    }
  }

  if (const toml::table* th = subtable(root, "thresholds", false)) {
    const auto& defaults = default_thresholds().at(cfg.experiment);
    for (const auto& [key, node] : *th) {
      const std::string k(key.str());
      if (!defaults.contains(k)) fail(&node, "thresholds." + k, "unknown threshold for '" + cfg.experiment + "'");
      cfg.thresholds[k] = as_double(node, "thresholds." + k);
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  std::ostringstream out;
  out << "experiment = \"" << config.experiment << "\"\n\n[model]\n";
  const char* kind = config.model.kind == EnsembleKind::erdos_renyi        ? "er"
                     : config.model.kind == EnsembleKind::sparse_rademacher ? "rademacher"
                                                                            : "custom";
  out << "kind = \"" << kind << "\"\n";
  out << "N = " << config.model.N << "\n";
  if (config.model.p) out << "p = " << format_double(*config.model.p) << "\n";
  if (config.model.beta) out << "beta = " << format_double(*config.model.beta) << "\n";
  if (config.model.q) out << "q = " << format_double(*config.model.q) << "\n";
  out << "loops = " << (config.model.loops ? "true" : "false") << "\n";
  if (!config.model.kappas.empty()) {
    out << "kappas = [";
    for (std::size_t i = 0; i < config.model.kappas.size(); ++i) {
      out << (i ? ", " : "") << format_double(config.model.kappas[i]);
    }
    out << "]\n";
  }
  out << "\n[run]\nM = " << config.M << "\nmaster_seed = " << config.master_seed << "\nworkers = " << config.workers
      << "\n\n[probes]\n";
  auto write_indices = [&](const char* key, const std::vector<IndexExpr>& list) {
    out << key << " = [";
    for (std::size_t i = 0; i < list.size(); ++i) {
      out << (i ? ", " : "");
      if (list[i].num == 0) {
        out << list[i].offset;
      } else {
        out << '"' << list[i].to_string() << '"';
      }
    }
    out << "]\n";
  };
  write_indices("indices", config.indices);
  write_indices("centre_indices", config.centre_indices);
  out << "z = [";
  for (std::size_t i = 0; i < config.z_probes.size(); ++i) {
    out << (i ? ", " : "") << "[" << format_double(config.z_probes[i].real()) << ", "
        << format_double(config.z_probes[i].imag()) << "]";
  }
  out << "]\nintervals = [";
  for (std::size_t i = 0; i < config.intervals.size(); ++i) {
    out << (i ? ", " : "") << "[" << format_double(config.intervals[i].first) << ", "
        << format_double(config.intervals[i].second) << "]";
  }
  out << "]\nN_ladder = [";
  for (std::size_t i = 0; i < config.N_ladder.size(); ++i) out << (i ? ", " : "") << config.N_ladder[i];
  out << "]\nedge = " << (config.edge ? "true" : "false") << "\npolynomial = \"" << config.polynomial
      << "\"\ndomain_c = " << format_double(config.domain_c) << "\n";
  if (!config.thresholds.empty()) {
    out << "\n[thresholds]\n";
    for (const auto& [k, v] : config.thresholds) out << k << " = " << format_double(v) << "\n";
  }
  return out.str();
}

}  // namespace sparse_lab
