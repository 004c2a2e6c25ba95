#include "sparse_lab/digest.hpp"
#include "sparse_lab/errors.hpp"
#include "sparse_lab/experiments.hpp"
#include "sparse_lab/formalcalc.hpp"
#include "sparse_lab/scmeasure.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace sparse_lab;

namespace {

constexpr int kExitError = 1;
constexpr int kExitGates = 2;
constexpr int kExitBranch = 3;
constexpr int kExitUsage = 64;

/// Error mapped to the usage exit code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Digest declared by an output file: "# digest: ..." first line of a CSV or
/// the "digest" field of a JSON object.
std::optional<std::string> declared_digest(const fs::path& path) {
  if (path.extension() == ".csv") {
    std::ifstream in(path);
    std::string line;
    if (std::getline(in, line) && line.rfind("# digest: ", 0) == 0) return line.substr(10);
    return std::nullopt;
  }
  if (path.extension() == ".json") {
    try {
      const auto j = nlohmann::json::parse(read_text(path));
      if (j.is_object() && j.contains("digest") && j["digest"].is_string()) return j["digest"].get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
  }
  return std::nullopt;
}

/// Refuses to mix outputs of different digests in one directory.
void check_directory_digest(const fs::path& dir, const std::string& digest) {
  if (!fs::exists(dir)) return;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto found = declared_digest(entry.path());
    if (found && *found != digest) {
      throw UsageError(entry.path().string() + " carries digest " + *found + ", this run has " + digest +
                       "; use a separate --out-dir");
    }
  }
}

void write_manifest(const fs::path& dir, const std::string& digest, std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  nlohmann::json m = {{"digest", digest},
                      {"master_seed", seed},
                      {"version", SPARSE_LAB_VERSION},
                      {"timestamp", utc_timestamp()},
                      {"outputs", outputs}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

struct ModelFlags {
  std::string config;
  std::string model;
  std::int64_t N = 0;
  std::vector<std::string> p;
  std::optional<double> beta;
  std::optional<double> q;
  std::string kappas;
};

std::vector<double> parse_kappas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--kappas: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--kappas: empty list");
  return out;
}

ModelSpec model_from_flags(const ModelFlags& f) {
  if (!f.config.empty()) return load_config(f.config).model;
  ModelSpec spec;
  if (f.model.empty()) throw UsageError("build-p0 needs --config or --model");
  spec.kind = parse_ensemble_kind(f.model);
  if (spec.kind == EnsembleKind::custom) {
    // A free cumulant list needs no sampling law; N and beta only set q.
    spec.N = f.N > 0 ? f.N : 1000;
    spec.beta = f.beta ? *f.beta : 0.25;
    if (f.kappas.empty()) throw UsageError("--model custom needs --kappas");
    spec.kappas = parse_kappas(f.kappas);
    return spec;
  }
  if (f.N < 2) throw UsageError("--N is required");
  spec.N = f.N;
  int given = 0;
  if (!f.p.empty()) {
    ++given;
    if (spec.kind != EnsembleKind::erdos_renyi) throw UsageError("--p is only valid for --model er");
    if (f.p[0] == "auto-beta") {
      if (f.p.size() != 2) throw UsageError("--p auto-beta needs a value");
      spec.beta = std::stod(f.p[1]);
    } else {
      if (f.p.size() != 1) throw UsageError("--p takes one value or 'auto-beta b'");
      spec.p = std::stod(f.p[0]);
    }
  }
  if (f.beta) ++given, spec.beta = *f.beta;
  if (f.q) ++given, spec.q = *f.q;
  if (given != 1) throw UsageError("give exactly one of --p, --beta, --q");
  return spec;
}

std::string coefficient_table(const SelfConsistentPolynomial& p, const CumulantModel& model, const std::string& digest) {
  std::ostringstream out;
  char buf[160];
  out << "# digest: " << digest << "\n";
  out << "# P0(z, x) = 1 + z x + sum_l a_l q^(-2(l-1)) x^(2l)\n";
  std::snprintf(buf, sizeof buf, "# kind = %s, N = %lld, beta = %.17g, q = %.17g, degree = %d\n",
                std::string(to_string(model.kind())).c_str(), static_cast<long long>(model.N()), model.beta(),
                model.q(), p.degree);
  out << buf;
  out << "l,power,a_l,coefficient\n";
  for (std::size_t l = 1; l <= p.a.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", l, 2 * l, p.a[l - 1], p.x_coefficient(static_cast<int>(2 * l)));
    out << buf;
  }
  return out.str();
}

int cmd_build_p0(const ModelFlags& flags, const fs::path& out_dir) {
  const auto spec = model_from_flags(flags);
  const auto model = make_model(spec);
  const auto poly = build_P0(model);
  auto j = to_json(poly);
  j["model"] = model.descriptor();
  const std::string digest = sha256_hex(model.descriptor().dump());
  j["digest"] = digest;
  check_directory_digest(out_dir, digest);
  fs::create_directories(out_dir);
  write_text(out_dir / "p0.json", j.dump(2) + "\n");
  const auto table = coefficient_table(poly, model, digest);
  write_text(out_dir / "p0.csv", table);
  std::cout << table;
  return 0;
}

int cmd_solve_measure(const fs::path& p0_path, double z_shift, std::int64_t n_quantiles, const fs::path& out_dir) {
  const std::string text = read_text(p0_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(p0_path.string() + ": " + e.what());
  }
  const auto poly = polynomial_from_json(j);
  if (!(std::abs(z_shift) <= 0.5)) throw UsageError("--Z must satisfy |Z| <= 0.5");
  if (n_quantiles <= 0) {
    n_quantiles = j.contains("model") && j["model"].contains("N") ? j["model"]["N"].get<std::int64_t>() : 1000;
  }
  char zbuf[40];
  std::snprintf(zbuf, sizeof zbuf, "%.17g", z_shift);
  const std::string digest = sha256_hex(text + "\nZ=" + zbuf + "\nN=" + std::to_string(n_quantiles));
  check_directory_digest(out_dir, digest);

  const SpectralMeasure measure(poly, z_shift);
  const double L0 = find_edge(poly, 0.0);
  const auto table = quantiles(measure, n_quantiles);
  fs::create_directories(out_dir);
  char buf[200];
  std::snprintf(buf, sizeof buf, "# digest: %s\n# L = %.6f\n# L0 = %.6f\n# Z = %.17g\n# mass = %.17g\n", digest.c_str(),
                measure.edge_L(), L0, z_shift, measure.mass());
  {
    std::ofstream out(out_dir / "measure.csv", std::ios::binary);
    out << buf;
    write_measure_csv(measure, out);
  }
  {
    std::ofstream out(out_dir / "quantiles.csv", std::ios::binary);
    out << buf;
    write_quantiles_csv(table, out);
  }
  write_manifest(out_dir, digest, 0, {"measure.csv", "quantiles.csv"});
  std::printf("L = %.6f\nL0 = %.6f\n", measure.edge_L(), L0);
  return 0;
}

struct ExperimentFlags {
  std::string name;
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  std::string out_dir = ".";
  double gate_scale = 1.0;
};

int cmd_experiment(const ExperimentFlags& f) {
  auto cfg = load_config(f.config);
  if (cfg.experiment != f.name) {
    throw UsageError("config '" + f.config + "' describes experiment '" + cfg.experiment + "', not '" + f.name + "'");
  }
  if (f.seed) cfg.master_seed = *f.seed;
  for (const auto& w : validate_config(cfg)) std::cerr << "warning: " << w << "\n";
  const std::string stored = serialize_config(cfg);
  const std::string digest = sha256_hex(stored);
  const fs::path dir(f.out_dir);
  check_directory_digest(dir, digest);

  RunOptions opt;
  opt.workers = f.workers;
  opt.gate_scale = f.gate_scale;
  const auto stats = run_experiment(cfg, opt);
  write_outputs(stats, dir, digest);
  write_text(dir / "config.toml", "# digest: " + digest + "\n" + stored);
  write_manifest(dir, digest, cfg.master_seed, {"config.toml", "records.csv", "stats.json", "plotdata.csv"});
  for (const auto& w : stats.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& g : stats.gates) {
    std::printf("%-40s %s  value = %.6g\n", g.name.c_str(), g.pass ? "pass" : "FAIL", g.value);
  }
  if (!stats.passed()) {
    std::cerr << "failing gates:";
    for (const auto& name : stats.failed_gates()) std::cerr << " " << name;
    std::cerr << "\n";
    return kExitGates;
  }
  return 0;
}

int cmd_validate_config(const std::string& path) {
  const auto cfg = load_config(path);
  for (const auto& w : validate_config(cfg)) std::cerr << "warning: " << w << "\n";
  const std::string stored = serialize_config(cfg);
  std::cout << "# digest: " << sha256_hex(stored) << "\n" << stored;
  return 0;
}

int cmd_golden_update(const fs::path& dir) {
  fs::create_directories(dir);
  constexpr std::int64_t kN = 2000;
  for (const char* kind : {"er", "rademacher"}) {
    for (double beta : {0.1, 0.2, 0.25}) {
      const auto model = std::string(kind) == "er"
                             ? make_er_model(kN, er_p_for_beta(kN, beta))
                             : make_rademacher_model(kN, std::pow(static_cast<double>(kN), beta));
      const auto poly = build_P0(model);
      nlohmann::json j = to_json(poly);
      j["N"] = kN;
      j["kind"] = kind;
      char name[64];
      std::snprintf(name, sizeof name, "p0_%s_beta%.2f.json", kind, beta);
      write_text(dir / name, j.dump(2) + "\n");
      std::cout << "wrote " << (dir / name).string() << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse random matrix laboratory"};
  app.require_subcommand(1);

  ModelFlags model_flags;
  std::string build_out = ".";
  auto* build = app.add_subcommand("build-p0", "Build the self-consistent polynomial P0 and write p0.json");
  build->add_option("--config", model_flags.config, "Experiment config (TOML); its [model] is used");
  build->add_option("--model", model_flags.model, "er, rademacher or custom");
  build->add_option("--N", model_flags.N, "Matrix dimension");
  build->add_option("--p", model_flags.p, "Edge probability, or 'auto-beta b' for p = N^(2b-1)")->expected(1, 2);
  build->add_option("--beta", model_flags.beta, "Sparsity exponent, q = N^beta");
  build->add_option("--q", model_flags.q, "Sparsity parameter (rademacher)");
  build->add_option("--kappas", model_flags.kappas, "Custom cumulants kappa_2,kappa_3,...");
  build->add_option("--out-dir", build_out, "Output directory");

  std::string p0_path;
  double z_shift = 0.0;
  std::int64_t n_quantiles = 0;
  std::string measure_out = ".";
  auto* solve = app.add_subcommand("solve-measure", "Solve for the spectral measure of P0 + Z x^2");
  solve->add_option("p0", p0_path, "p0.json from build-p0")->required();
  solve->add_option("--Z", z_shift, "Shift Z, |Z| <= 0.5");
  solve->add_option("--N", n_quantiles, "Number of quantiles (default: the model N in p0.json)");
  solve->add_option("--out-dir", measure_out, "Output directory");

  ExperimentFlags exp_flags;
  std::uint64_t seed = 0;
  auto* exp = app.add_subcommand("experiment", "Run a Monte Carlo experiment");
  exp->add_option("name", exp_flags.name, "z-clt, edge, bulk, rescale, joint, rigidity or p-small")
      ->required()
      ->check(CLI::IsMember(experiment_names()));
  exp->add_option("--config", exp_flags.config, "Experiment config (TOML)")->required();
  auto* seed_opt = exp->add_option("--seed", seed, "Override run.master_seed");
  exp->add_option("--workers", exp_flags.workers, "Worker threads (overrides run.workers)")
      ->check(CLI::PositiveNumber);
  exp->add_option("--out-dir", exp_flags.out_dir, "Output directory");
  exp->add_option("--gate-scale", exp_flags.gate_scale, "Multiply every threshold (exploratory runs)");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate-config", "Parse and check a config, print its canonical form");
  validate->add_option("--config", validate_path, "Experiment config (TOML)")->required();

  std::string golden_dir = "tests/golden";
  auto* golden = app.add_subcommand("golden-update", "Regenerate the P0 golden fixtures");
  golden->add_option("--out-dir", golden_dir, "Fixture directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*build) return cmd_build_p0(model_flags, build_out);
    if (*solve) return cmd_solve_measure(p0_path, z_shift, n_quantiles, measure_out);
    if (*exp) {
      if (*seed_opt) exp_flags.seed = seed;
      return cmd_experiment(exp_flags);
    }
    if (*validate) return cmd_validate_config(validate_path);
    if (*golden) return cmd_golden_update(golden_dir);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContinuationError& e) {
    std::cerr << "branch failure: " << e.what() << "\n";
    return kExitBranch;
  } catch (const ShapeError& e) {
    std::cerr << "branch failure: " << e.what() << "\n";
    return kExitBranch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
