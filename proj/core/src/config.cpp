#include "fedem/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedem/errors.hpp"
#include "fedem/gmm.hpp"
#include "fedem/harness.hpp"
#include "fedem/missem.hpp"
#include "fedem/vrfedem.hpp"

namespace fedem {

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::FedEm: return "fedem";
    case Algorithm::FedEmPP: return "fedem-pp";
    case Algorithm::VrFedEm: return "vr-fedem";
    case Algorithm::Naive: return "naive";
    case Algorithm::ExactEm: return "exact-em";
    case Algorithm::MissEm: return "missem";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// raw section -> key -> value storage with strict consumption tracking
class Raw {
 public:
  std::vector<std::string> errors;

  void insert(const std::string& section, const std::string& key,
              const std::string& value, int line) {
    const std::string path = section.empty() ? key : section + "." + key;
    if (entries_[section].count(key)) {
      errors.push_back("duplicate key '" + path + "' (line " +
                       std::to_string(line) + ")");
      return;
    }
    entries_[section][key] = value;
  }

  bool has(const std::string& section, const std::string& key) const {
    auto it = entries_.find(section);
    return it != entries_.end() && it->second.count(key) > 0;
  }

  std::string take(const std::string& section, const std::string& key,
                   const std::string& fallback) {
    consumed_.insert(section + "\n" + key);
    auto it = entries_.find(section);
    if (it == entries_.end()) return fallback;
    auto jt = it->second.find(key);
    return jt == it->second.end() ? fallback : jt->second;
  }

  void report_unknown() {
    for (const auto& [section, kv] : entries_) {
      for (const auto& [key, value] : kv) {
        if (!consumed_.count(section + "\n" + key)) {
          errors.push_back("unknown key '" +
                           (section.empty() ? key : section + "." + key) + "'");
        }
      }
    }
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> entries_;
  std::set<std::string> consumed_;
};

class Fields {
 public:
  Fields(Raw& raw, std::string section)
      : raw_(raw), section_(std::move(section)) {}

  std::string str(const std::string& key, const std::string& fallback) {
    return raw_.take(section_, key, fallback);
  }

  double number(const std::string& key, double fallback) {
    const std::string v = raw_.take(section_, key, "");
    if (v.empty()) return fallback;
    try {
      size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      fail(key, "expected a number, got '" + v + "'");
      return fallback;
    }
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const std::string v = raw_.take(section_, key, "");
    if (v.empty()) return fallback;
    try {
      size_t pos = 0;
      const std::int64_t x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      fail(key, "expected an integer, got '" + v + "'");
      return fallback;
    }
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
    const std::string v = raw_.take(section_, key, "");
    if (v.empty()) return fallback;
    try {
      size_t pos = 0;
      const std::uint64_t x = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      fail(key, "expected an unsigned integer, got '" + v + "'");
      return fallback;
    }
  }

  bool boolean(const std::string& key, bool fallback) {
    const std::string v = raw_.take(section_, key, "");
    if (v.empty()) return fallback;
    if (v == "true") return true;
    if (v == "false") return false;
    fail(key, "expected true|false, got '" + v + "'");
    return fallback;
  }

  Eigen::VectorXd vector(const std::string& key) {
    const std::string v = raw_.take(section_, key, "");
    if (v.empty()) return {};
    std::vector<double> vals;
    std::stringstream ss(v);
    double x;
    while (ss >> x) vals.push_back(x);
    if (!ss.eof()) {
      fail(key, "expected space-separated numbers, got '" + v + "'");
      return {};
    }
    return Eigen::Map<Eigen::VectorXd>(vals.data(),
                                       static_cast<int>(vals.size()));
  }

  Eigen::MatrixXd matrix(const std::string& key) {
    const std::string v = raw_.take(section_, key, "");
    if (v.empty()) return {};
    std::vector<std::vector<double>> rows;
    std::stringstream rs(v);
    std::string row_text;
    while (std::getline(rs, row_text, ';')) {
      std::vector<double> row;
      std::stringstream ss(row_text);
      double x;
      while (ss >> x) row.push_back(x);
      rows.push_back(std::move(row));
    }
    if (rows.empty()) return {};
    Eigen::MatrixXd m(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) {
        fail(key, "rows have inconsistent lengths");
        return {};
      }
      for (size_t j = 0; j < rows[i].size(); ++j)
        m(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    }
    return m;
  }

  std::vector<int> int_list(const std::string& key) {
    const std::string v = raw_.take(section_, key, "");
    std::vector<int> vals;
    if (v.empty()) return vals;
    std::stringstream ss(v);
    int x;
    while (ss >> x) vals.push_back(x);
    if (!ss.eof()) fail(key, "expected space-separated integers, got '" + v + "'");
    return vals;
  }

  void fail(const std::string& key, const std::string& message) {
    raw_.errors.push_back(
        "'" + (section_.empty() ? key : section_ + "." + key) + "': " + message);
  }

 private:
  Raw& raw_;
  std::string section_;
};

// keys that are well formed but meaningless for the chosen model kind or
// algorithm are rejected rather than silently ignored
template <class Raw>
void check_applicability(Raw& raw, const ExperimentConfig& c,
                         std::vector<std::string>& errors) {
  using Set = std::set<std::string>;
  static const std::vector<std::string> model_keys = {
      "components", "dim",     "workers",           "total",
      "split",      "weights", "means",             "sigma",
      "sigma-mode", "path",    "data-seed",         "rows",
      "cols",       "rank",    "observed-fraction", "noise-sd",
      "servers"};
  static const std::map<std::string, Set> model_allowed = {
      {"gmm-synthetic",
       {"components", "dim", "workers", "total", "split", "weights", "means",
        "sigma", "sigma-mode", "data-seed"}},
      {"gmm-file", {"components", "dim", "path", "sigma", "sigma-mode"}},
      {"missem-synthetic",
       {"rows", "cols", "rank", "servers", "observed-fraction", "noise-sd",
        "data-seed"}},
      {"missem-file", {"path"}},
  };
  const auto model_it = model_allowed.find(c.model.kind);
  if (model_it == model_allowed.end()) {
    errors.push_back("'model.kind': unknown kind '" + c.model.kind + "'");
  } else {
    for (const auto& key : model_keys) {
      if (raw.has("model", key) && !model_it->second.count(key))
        errors.push_back("'model." + key + "' does not apply to kind " +
                         c.model.kind);
    }
  }

  static const std::map<std::string, Set> quant_allowed = {
      {"identity", {}},
      {"dithering", {"levels", "r"}},
      {"block-p", {"p", "block", "blocks"}},
  };
  const auto quant_it = quant_allowed.find(c.quantizer.kind);
  if (quant_it != quant_allowed.end()) {
    for (const char* key : {"levels", "r", "p", "block", "blocks"}) {
      if (raw.has("quantizer", key) && !quant_it->second.count(key))
        errors.push_back(std::string("'quantizer.") + key +
                         "' does not apply to kind " + c.quantizer.kind);
    }
  }
  if (c.algorithm == Algorithm::ExactEm) {
    for (const char* key : {"kind", "levels", "r", "p", "block", "blocks"}) {
      if (raw.has("quantizer", key)) {
        errors.push_back(
            "'[quantizer]' does not apply to algorithm exact-em");
        break;
      }
    }
  }

  const Set run_common = {"gamma", "alpha", "diag-every"};
  Set run_allowed = run_common;
  switch (c.algorithm) {
    case Algorithm::FedEm:
    case Algorithm::FedEmPP:
      run_allowed.insert({"p", "batch", "k-max", "epochs", "v-init",
                          "memory-gap-every", "theory-check"});
      break;
    case Algorithm::Naive:
      run_allowed.insert({"p", "batch", "k-max", "epochs"});
      break;
    case Algorithm::VrFedEm:
      run_allowed.insert({"p", "batch", "k-out", "k-in", "epochs",
                          "memory-gap-every", "theory-check"});
      break;
    case Algorithm::ExactEm:
      run_allowed = {"k-max", "epochs", "diag-every"};
      break;
    case Algorithm::MissEm:
      run_allowed.insert({"p", "batch", "k-max", "epochs", "rank"});
      break;
  }
  for (const char* key :
       {"gamma", "alpha", "p", "batch", "k-max", "epochs", "k-out", "k-in",
        "v-init", "diag-every", "memory-gap-every", "rank", "theory-check"}) {
    if (raw.has("run", key) && !run_allowed.count(key))
      errors.push_back(std::string("'run.") + key +
                       "' does not apply to algorithm " +
                       algorithm_name(c.algorithm));
  }
}

std::optional<Algorithm> parse_algorithm(const std::string& name) {
  if (name == "fedem") return Algorithm::FedEm;
  if (name == "fedem-pp") return Algorithm::FedEmPP;
  if (name == "vr-fedem") return Algorithm::VrFedEm;
  if (name == "naive") return Algorithm::Naive;
  if (name == "exact-em") return Algorithm::ExactEm;
  if (name == "missem") return Algorithm::MissEm;
  return std::nullopt;
}

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  try {
    size_t pos = 0;
    (void)std::stod(s, &pos);
    return pos == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

void cross_validate(const ExperimentConfig& c, std::vector<std::string>& errors) {
  const bool missem = c.algorithm == Algorithm::MissEm;
  const bool vr = c.algorithm == Algorithm::VrFedEm;

  if (missem) {
    if (c.model.kind != "missem-synthetic" && c.model.kind != "missem-file")
      errors.push_back("algorithm=missem requires model.kind missem-*");
  } else if (c.model.kind != "gmm-synthetic" && c.model.kind != "gmm-file") {
    errors.push_back("algorithm=" + algorithm_name(c.algorithm) +
                     " requires model.kind gmm-*");
  }

  if (vr && c.run.participation != 1.0)
    errors.push_back("'run.p': partial participation (p=" +
                     std::to_string(c.run.participation) +
                     ") is not supported with 'algorithm' = vr-fedem");
  if (c.algorithm == Algorithm::FedEm && c.run.participation != 1.0)
    errors.push_back("'run.p': algorithm=fedem runs full participation; use "
                     "fedem-pp for p < 1");
  if (c.algorithm == Algorithm::FedEmPP &&
      (c.run.participation <= 0.0 || c.run.participation >= 1.0))
    errors.push_back("'run.p': fedem-pp needs p in (0, 1)");
  if (missem && c.run.participation != 1.0)
    errors.push_back("'run.p': missem runs full participation");
  if (c.run.participation <= 0.0 || c.run.participation > 1.0)
    errors.push_back("'run.p': must lie in (0, 1]");

  if (c.run.gamma_text != "auto-theorem" && !is_number(c.run.gamma_text))
    errors.push_back("'run.gamma': expected a number or auto-theorem");
  if (c.run.alpha_text != "auto" && !is_number(c.run.alpha_text))
    errors.push_back("'run.alpha': expected a number or auto");
  if (is_number(c.run.gamma_text) && std::stod(c.run.gamma_text) <= 0.0)
    errors.push_back("'run.gamma': must be > 0");
  if (is_number(c.run.alpha_text) && std::stod(c.run.alpha_text) <= 0.0)
    errors.push_back("'run.alpha': must be > 0");

  if (c.run.gamma_text == "auto-theorem") {
    if (c.constants.v_min <= 0.0)
      errors.push_back("'constants.v-min': required (> 0) for gamma=auto-theorem");
    if (c.constants.grad_lipschitz <= 0.0)
      errors.push_back(
          "'constants.grad-lipschitz': required (> 0) for gamma=auto-theorem");
    const auto& fl = c.constants.field_lipschitz_text;
    if (fl != "estimate" && !(is_number(fl) && std::stod(fl) > 0.0))
      errors.push_back(
          "'constants.field-lipschitz': number > 0 or 'estimate' required for "
          "gamma=auto-theorem");
    if (vr && c.constants.v_max <= 0.0)
      errors.push_back("'constants.v-max': required (> 0) for vr-fedem with "
                       "gamma=auto-theorem");
  }

  if (vr) {
    if (c.run.k_out < 1) errors.push_back("'run.k-out': must be >= 1");
    if (c.run.k_in < 0) errors.push_back("'run.k-in': must be >= 0");
  } else if (c.run.k_max < 0 && c.run.epochs <= 0.0) {
    errors.push_back("'run.k-max' or 'run.epochs': one of them is required");
  }
  if (c.run.k_max >= 0 && c.run.epochs > 0.0)
    errors.push_back("'run.k-max' and 'run.epochs' are mutually exclusive");
  if (c.run.batch < 1 && !vr)
    errors.push_back("'run.batch': must be >= 1");
  if (c.run.v_init != "mean-field" && c.run.v_init != "zeros")
    errors.push_back("'run.v-init': expected mean-field or zeros");

  if (c.quantizer.kind != "identity" && c.quantizer.kind != "dithering" &&
      c.quantizer.kind != "block-p")
    errors.push_back("'quantizer.kind': expected identity|dithering|block-p");
  if (c.quantizer.kind == "dithering") {
    if (c.quantizer.levels < 1)
      errors.push_back("'quantizer.levels': must be >= 1");
    if (c.quantizer.r < 1.0) errors.push_back("'quantizer.r': must be >= 1");
  }
  if (c.quantizer.kind == "block-p") {
    if (c.quantizer.p != 1 && c.quantizer.p != 2)
      errors.push_back("'quantizer.p': must be 1 or 2");
    if (c.quantizer.block <= 0 && c.quantizer.blocks.empty())
      errors.push_back("'quantizer.block' or 'quantizer.blocks': required");
  }

  // model section
  if (c.model.kind == "gmm-synthetic") {
    if (c.model.workers < 1) errors.push_back("'model.workers': must be >= 1");
    if (c.model.total < 1) errors.push_back("'model.total': must be >= 1");
    if (c.model.workers >= 1 && c.model.total >= 1 &&
        c.model.total % c.model.workers != 0)
      errors.push_back("'model.total': must be divisible by model.workers");
    if (c.model.split != "iid" && c.model.split != "sorted")
      errors.push_back("'model.split': expected iid or sorted");
    if (c.model.weights.size() > 0 &&
        c.model.weights.size() != c.model.components)
      errors.push_back("'model.weights': length must equal model.components");
    if (c.model.means.size() > 0 &&
        (c.model.means.rows() != c.model.components ||
         c.model.means.cols() != c.model.dim))
      errors.push_back("'model.means': expected components x dim entries");
    if (c.model.sigma.size() > 0 && (c.model.sigma.rows() != c.model.dim ||
                                     c.model.sigma.cols() != c.model.dim))
      errors.push_back("'model.sigma': expected dim x dim entries");
  }
  if ((c.model.kind == "gmm-file" || c.model.kind == "missem-file") &&
      c.model.path.empty())
    errors.push_back("'model.path': required for file-backed models");
  if (c.model.kind == "missem-synthetic") {
    if (c.model.rows < 2 || c.model.cols < 2)
      errors.push_back("'model.rows'/'model.cols': must be >= 2");
    if (c.model.servers < 1) errors.push_back("'model.servers': must be >= 1");
    if (c.model.observed_fraction <= 0.0 || c.model.observed_fraction > 1.0)
      errors.push_back("'model.observed-fraction': must lie in (0, 1]");
  }
  if (c.model.sigma_mode != "fixed" && c.model.sigma_mode != "estimated")
    errors.push_back("'model.sigma-mode': expected fixed or estimated");
  if (missem && c.run.rank < 1) errors.push_back("'run.rank': must be >= 1");
}

}  // namespace

QuantizerSpec QuantizerSection::build(int dim) const {
  if (kind == "identity") return QuantizerSpec::identity();
  if (kind == "dithering") return QuantizerSpec::dithering(r, levels);
  if (!blocks.empty()) return QuantizerSpec::block(p, blocks);
  return QuantizerSpec::uniform_blocks(p, block, dim);
}

ParseResult parse_config(const std::string& text) {
  Raw raw;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  static const std::set<std::string> known_sections = {"model", "quantizer",
                                                       "run", "constants"};
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        raw.errors.push_back("malformed section header (line " +
                             std::to_string(line_no) + ")");
        continue;
      }
      section = trim(t.substr(1, t.size() - 2));
      if (!known_sections.count(section))
        raw.errors.push_back("unknown section '[" + section + "]' (line " +
                             std::to_string(line_no) + ")");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      raw.errors.push_back("expected key = value (line " +
                           std::to_string(line_no) + ")");
      continue;
    }
    raw.insert(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), line_no);
  }

  ExperimentConfig c;
  {
    Fields top(raw, "");
    const std::string algo = top.str("algorithm", "");
    if (auto parsed = parse_algorithm(algo)) {
      c.algorithm = *parsed;
    } else {
      top.fail("algorithm",
               algo.empty()
                   ? "required: fedem|fedem-pp|vr-fedem|naive|exact-em|missem"
                   : "unknown algorithm '" + algo + "'");
    }
    c.seed = top.unsigned_int("seed", 0);
    c.workers_parallel = top.boolean("workers-parallel", false);
  }
  {
    Fields f(raw, "model");
    c.model.kind = f.str("kind", "gmm-synthetic");
    c.model.components = static_cast<int>(f.integer("components", 2));
    c.model.dim = static_cast<int>(f.integer("dim", 2));
    c.model.workers = static_cast<int>(f.integer("workers", 0));
    c.model.total = static_cast<int>(f.integer("total", 0));
    c.model.split = f.str("split", "iid");
    c.model.weights = f.vector("weights");
    c.model.means = f.matrix("means");
    c.model.sigma = f.matrix("sigma");
    c.model.sigma_mode = f.str("sigma-mode", "fixed");
    c.model.path = f.str("path", "");
    c.model.data_seed = f.unsigned_int("data-seed", 0);
    c.model.rows = static_cast<int>(f.integer("rows", 0));
    c.model.cols = static_cast<int>(f.integer("cols", 0));
    c.model.truth_rank = static_cast<int>(f.integer("rank", 2));
    c.model.servers = static_cast<int>(f.integer("servers", 0));
    c.model.observed_fraction = f.number("observed-fraction", 0.3);
    c.model.noise_sd = f.number("noise-sd", 0.1);
  }
  {
    Fields f(raw, "quantizer");
    c.quantizer.kind = f.str("kind", "identity");
    c.quantizer.levels = static_cast<int>(f.integer("levels", 1));
    c.quantizer.r = f.number("r", 2.0);
    c.quantizer.p = static_cast<int>(f.integer("p", 2));
    c.quantizer.block = static_cast<int>(f.integer("block", 0));
    c.quantizer.blocks = f.int_list("blocks");
  }
  {
    Fields f(raw, "run");
    c.run.gamma_text = f.str("gamma", "1e-2");
    c.run.alpha_text = f.str("alpha", "0.5");
    c.run.participation = f.number("p", 1.0);
    c.run.batch = static_cast<int>(f.integer("batch", 1));
    c.run.k_max = f.integer("k-max", -1);
    c.run.epochs = f.number("epochs", -1.0);
    c.run.k_out = static_cast<int>(f.integer("k-out", 1));
    c.run.k_in = static_cast<int>(f.integer("k-in", 0));
    c.run.v_init = f.str("v-init", "mean-field");
    c.run.diag_every = static_cast<int>(f.integer("diag-every", 1));
    c.run.memory_gap_every = static_cast<int>(f.integer("memory-gap-every", 10));
    c.run.rank = static_cast<int>(f.integer("rank", 2));
    c.run.theory_check = f.boolean("theory-check", false);
  }
  {
    Fields f(raw, "constants");
    c.constants.v_min = f.number("v-min", -1.0);
    c.constants.v_max = f.number("v-max", -1.0);
    c.constants.grad_lipschitz = f.number("grad-lipschitz", -1.0);
    c.constants.field_lipschitz_text = f.str("field-lipschitz", "");
    c.constants.sigma2 = f.number("sigma2", 0.0);
    c.constants.probes = static_cast<int>(f.integer("probes", 100));
    c.constants.probe_radius = f.number("probe-radius", 0.5);
  }
  raw.report_unknown();
  check_applicability(raw, c, raw.errors);
  cross_validate(c, raw.errors);

  ParseResult result;
  result.errors = std::move(raw.errors);
  if (result.errors.empty()) result.config = std::move(c);
  return result;
}

ParseResult parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) {
    ParseResult r;
    r.errors.push_back("cannot open config file '" + path + "'");
    return r;
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void render_vector(std::ostringstream& out, const char* key,
                   const Eigen::VectorXd& v) {
  if (v.size() == 0) return;
  out << key << " =";
  for (int i = 0; i < v.size(); ++i) out << ' ' << fmt(v[i]);
  out << '\n';
}

void render_matrix(std::ostringstream& out, const char* key,
                   const Eigen::MatrixXd& m) {
  if (m.size() == 0) return;
  out << key << " =";
  for (int i = 0; i < m.rows(); ++i) {
    if (i) out << " ;";
    for (int j = 0; j < m.cols(); ++j) out << ' ' << fmt(m(i, j));
  }
  out << '\n';
}

}  // namespace

std::string render_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "algorithm = " << algorithm_name(c.algorithm) << '\n';
  out << "seed = " << c.seed << '\n';
  out << "workers-parallel = " << (c.workers_parallel ? "true" : "false")
      << "\n\n";

  out << "[model]\n";
  out << "kind = " << c.model.kind << '\n';
  if (c.model.kind == "gmm-synthetic" || c.model.kind == "gmm-file") {
    out << "components = " << c.model.components << '\n';
    out << "dim = " << c.model.dim << '\n';
    if (c.model.kind == "gmm-synthetic") {
      out << "workers = " << c.model.workers << '\n';
      out << "total = " << c.model.total << '\n';
      out << "split = " << c.model.split << '\n';
      render_vector(out, "weights", c.model.weights);
      render_matrix(out, "means", c.model.means);
      if (c.model.data_seed) out << "data-seed = " << c.model.data_seed << '\n';
    } else {
      out << "path = " << c.model.path << '\n';
    }
    render_matrix(out, "sigma", c.model.sigma);
    out << "sigma-mode = " << c.model.sigma_mode << '\n';
  } else if (c.model.kind == "missem-synthetic") {
    out << "rows = " << c.model.rows << '\n';
    out << "cols = " << c.model.cols << '\n';
    out << "rank = " << c.model.truth_rank << '\n';
    out << "servers = " << c.model.servers << '\n';
    out << "observed-fraction = " << fmt(c.model.observed_fraction) << '\n';
    out << "noise-sd = " << fmt(c.model.noise_sd) << '\n';
  } else {
    out << "path = " << c.model.path << '\n';
  }

  if (c.algorithm != Algorithm::ExactEm) {  // exact EM never compresses
    out << "\n[quantizer]\n";
    out << "kind = " << c.quantizer.kind << '\n';
    if (c.quantizer.kind == "dithering") {
      out << "levels = " << c.quantizer.levels << '\n';
      out << "r = " << fmt(c.quantizer.r) << '\n';
    } else if (c.quantizer.kind == "block-p") {
      out << "p = " << c.quantizer.p << '\n';
      if (!c.quantizer.blocks.empty()) {
        out << "blocks =";
        for (int b : c.quantizer.blocks) out << ' ' << b;
        out << '\n';
      } else {
        out << "block = " << c.quantizer.block << '\n';
      }
    }
  }

  // only the keys that apply to the algorithm, so the output re-parses
  const bool fed_family = c.algorithm == Algorithm::FedEm ||
                          c.algorithm == Algorithm::FedEmPP ||
                          c.algorithm == Algorithm::Naive;
  const bool vr = c.algorithm == Algorithm::VrFedEm;
  const bool missem_algo = c.algorithm == Algorithm::MissEm;
  out << "\n[run]\n";
  if (c.algorithm != Algorithm::ExactEm) {
    out << "gamma = " << c.run.gamma_text << '\n';
    out << "alpha = " << c.run.alpha_text << '\n';
  }
  if (fed_family || vr || missem_algo)
    out << "p = " << fmt(c.run.participation) << '\n';
  if (c.algorithm != Algorithm::ExactEm)
    out << "batch = " << c.run.batch << '\n';
  if (vr) {
    out << "k-in = " << c.run.k_in << '\n';
    if (c.run.epochs > 0.0)
      out << "epochs = " << fmt(c.run.epochs) << '\n';
    else
      out << "k-out = " << c.run.k_out << '\n';
  } else if (c.run.k_max >= 0) {
    out << "k-max = " << c.run.k_max << '\n';
  } else {
    out << "epochs = " << fmt(c.run.epochs) << '\n';
  }
  if (c.algorithm == Algorithm::FedEm || c.algorithm == Algorithm::FedEmPP)
    out << "v-init = " << c.run.v_init << '\n';
  out << "diag-every = " << c.run.diag_every << '\n';
  if (c.algorithm == Algorithm::FedEm || c.algorithm == Algorithm::FedEmPP ||
      vr)
    out << "memory-gap-every = " << c.run.memory_gap_every << '\n';
  if (missem_algo) out << "rank = " << c.run.rank << '\n';
  if (c.algorithm == Algorithm::FedEm || c.algorithm == Algorithm::FedEmPP ||
      vr)
    out << "theory-check = " << (c.run.theory_check ? "true" : "false")
        << '\n';

  const auto& k = c.constants;
  if (k.v_min > 0 || k.v_max > 0 || k.grad_lipschitz > 0 ||
      !k.field_lipschitz_text.empty() || k.sigma2 > 0) {
    out << "\n[constants]\n";
    if (k.v_min > 0) out << "v-min = " << fmt(k.v_min) << '\n';
    if (k.v_max > 0) out << "v-max = " << fmt(k.v_max) << '\n';
    if (k.grad_lipschitz > 0)
      out << "grad-lipschitz = " << fmt(k.grad_lipschitz) << '\n';
    if (!k.field_lipschitz_text.empty())
      out << "field-lipschitz = " << k.field_lipschitz_text << '\n';
    if (k.sigma2 > 0) out << "sigma2 = " << fmt(k.sigma2) << '\n';
    if (k.probes != 100) out << "probes = " << k.probes << '\n';
    if (k.probe_radius != 0.5)
      out << "probe-radius = " << fmt(k.probe_radius) << '\n';
  }
  return out.str();
}

namespace {

GmmTheta synthetic_truth(const ModelSection& m) {
  GmmTheta truth;
  truth.weights =
      m.weights.size() > 0
          ? m.weights
          : Eigen::VectorXd::Constant(m.components, 1.0 / m.components);
  truth.means.resize(m.dim, m.components);
  if (m.means.size() > 0) {
    truth.means = m.means.transpose();
  } else {
    truth.means.setZero();
    for (int l = 0; l < m.components; ++l)
      truth.means(0, l) = 2.0 * l - (m.components - 1);
  }
  truth.sigma = m.sigma.size() > 0
                    ? m.sigma
                    : Eigen::MatrixXd::Identity(m.dim, m.dim);
  return truth;
}

std::unique_ptr<GmmModel> build_gmm(const ExperimentConfig& c) {
  GmmOptions options;
  options.fixed_sigma = c.model.sigma_mode == "fixed";
  if (options.fixed_sigma) {
    options.sigma = c.model.sigma.size() > 0
                        ? c.model.sigma
                        : Eigen::MatrixXd::Identity(c.model.dim, c.model.dim);
  }
  if (c.model.kind == "gmm-file") {
    int workers = 0;
    Eigen::MatrixXd points = load_shards_csv(c.model.path, &workers);
    if (options.fixed_sigma && options.sigma.rows() != points.cols())
      options.sigma = Eigen::MatrixXd::Identity(points.cols(), points.cols());
    return std::make_unique<GmmModel>(std::move(points), workers,
                                      c.model.components, options);
  }
  const GmmTheta truth = synthetic_truth(c.model);
  const std::uint64_t data_seed =
      c.model.data_seed ? c.model.data_seed : hash_combine(c.seed, 0x9d);
  const auto data = generate_synthetic(
      truth, c.model.total, c.model.workers,
      c.model.split == "sorted" ? SplitMode::SortedHeterogeneous
                                : SplitMode::Iid,
      data_seed);
  return std::make_unique<GmmModel>(data.points, c.model.workers,
                                    c.model.components, options);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ExperimentResult result;
  result.trace_path = (fs::path(out_dir) / "trace.csv").string();
  result.manifest_path = (fs::path(out_dir) / "manifest.cfg").string();

  ExperimentConfig resolved = config;
  std::vector<RoundTrace> sink;

  const bool missem = config.algorithm == Algorithm::MissEm;
  std::unique_ptr<GmmModel> gmm;
  MissemData missem_data;
  Eigen::MatrixXd missem_truth;
  int q = 0;
  std::int64_t total_examples = 0;

  if (missem) {
    if (config.model.kind == "missem-synthetic") {
      auto synth = generate_missem_synthetic(
          config.model.rows, config.model.cols, config.model.truth_rank,
          config.model.servers, config.model.observed_fraction,
          config.model.noise_sd,
          config.model.data_seed ? config.model.data_seed
                                 : hash_combine(config.seed, 0x9d));
      missem_data = std::move(synth.data);
      missem_truth = std::move(synth.truth);
    } else {
      missem_data = MissemData::load_csv(config.model.path);
    }
    q = missem_data.rows * missem_data.cols;
    total_examples = missem_data.observed_count();
  } else {
    gmm = build_gmm(config);
    q = gmm->statistic_dim();
    total_examples = static_cast<std::int64_t>(gmm->worker_count()) *
                     gmm->examples_per_worker();
  }

  const QuantizerSpec quantizer = config.quantizer.build(q);
  quantizer.validate(q);
  result.variance_bound = quantizer.variance_bound(q);

  result.resolved_alpha = config.run.alpha_text == "auto"
                              ? 1.0 / (1.0 + result.variance_bound)
                              : std::stod(config.run.alpha_text);

  if (config.run.gamma_text == "auto-theorem") {
    double field_l;
    if (config.constants.field_lipschitz_text == "estimate") {
      if (missem)
        throw std::invalid_argument(
            "constants.field-lipschitz=estimate is not available for missem");
      Rng init_rng = stream_for(config.seed, 0, 0, StreamPurpose::Init);
      const Statistic base = gmm->initial_statistic(init_rng);
      field_l = estimate_constants(*gmm, base, config.constants.probes,
                                   config.constants.probe_radius, config.seed)
                    .field_lipschitz;
    } else {
      field_l = std::stod(config.constants.field_lipschitz_text);
    }
    const int n = missem ? missem_data.servers() : gmm->worker_count();
    if (config.algorithm == Algorithm::VrFedEm) {
      result.resolved_gamma = vr_step_size(
          config.constants.v_min, config.constants.v_max,
          config.constants.grad_lipschitz, field_l, n, result.variance_bound);
    } else {
      result.resolved_gamma = max_step_size(
          config.constants.v_min, config.constants.grad_lipschitz, field_l, n,
          result.variance_bound, config.run.participation);
      if (config.constants.sigma2 > 0.0) {
        // horizon-tuned refinement when the oracle noise level is supplied
        const std::int64_t horizon =
            config.run.k_max >= 0 ? config.run.k_max : 1;
        result.resolved_gamma = tuned_step_size(
            1.0, n, horizon, config.constants.grad_lipschitz,
            result.variance_bound, config.constants.sigma2,
            result.resolved_gamma);
      }
    }
    resolved.run.gamma_text = fmt(result.resolved_gamma);
    resolved.constants.field_lipschitz_text = fmt(field_l);
  } else {
    result.resolved_gamma = std::stod(config.run.gamma_text);
  }
  resolved.run.alpha_text = fmt(result.resolved_alpha);

  // horizon resolution: epochs -> rounds
  std::int64_t k_max = config.run.k_max;
  int k_out = config.run.k_out;
  if (config.run.epochs > 0.0) {
    const double budget = config.run.epochs * static_cast<double>(total_examples);
    switch (config.algorithm) {
      case Algorithm::ExactEm:
        k_max = static_cast<std::int64_t>(std::ceil(config.run.epochs));
        break;
      case Algorithm::VrFedEm: {
        const int n = gmm->worker_count();
        const int m = gmm->examples_per_worker();
        const int b = VrConfig{.inner_rounds = config.run.k_in,
                               .batch = config.run.batch}
                          .resolved_batch(result.variance_bound);
        const double outer_cost =
            static_cast<double>(n) * m +
            2.0 * n * b * static_cast<double>(config.run.k_in);
        k_out = std::max(1, static_cast<int>(std::llround(budget / outer_cost)));
        break;
      }
      case Algorithm::MissEm: {
        const double per_round = static_cast<double>(missem_data.servers()) *
                                 config.run.batch;
        k_max = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::llround(budget / per_round)));
        break;
      }
      default: {
        const double per_round = config.run.participation *
                                 static_cast<double>(gmm->worker_count()) *
                                 config.run.batch;
        k_max = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::llround(budget / per_round)));
        break;
      }
    }
  }
  result.resolved_k_max =
      config.algorithm == Algorithm::VrFedEm ? k_out : k_max;
  if (config.algorithm == Algorithm::VrFedEm) {
    resolved.run.k_out = k_out;
  } else {
    resolved.run.k_max = k_max;
  }
  resolved.run.epochs = -1.0;

  {
    std::ofstream mf(result.manifest_path, std::ios::binary);
    mf << render_config(resolved);
  }

  // dispatch
  std::vector<RoundTrace> trace;
  try {
    switch (config.algorithm) {
      case Algorithm::FedEm:
      case Algorithm::FedEmPP:
      case Algorithm::Naive: {
        FedEmConfig fc;
        fc.gamma = result.resolved_gamma;
        fc.alpha = result.resolved_alpha;
        fc.participation = config.run.participation;
        fc.batch = config.run.batch;
        fc.rounds = k_max;
        fc.memory_init = config.run.v_init == "zeros" ? MemoryInit::Zeros
                                                      : MemoryInit::MeanField;
        fc.seed = config.seed;
        fc.diag_every = config.run.diag_every;
        fc.memory_gap_every = config.run.memory_gap_every;
        fc.workers_parallel = config.workers_parallel;
        fc.enforce_theory_alpha = config.run.theory_check;
        if (config.algorithm == Algorithm::Naive) {
          trace = run_naive_baseline(*gmm, quantizer, fc, nullptr, &sink).trace;
        } else {
          trace = run_fedem(*gmm, quantizer, fc, nullptr,
                            algorithm_name(config.algorithm).c_str(), &sink)
                      .trace;
        }
        break;
      }
      case Algorithm::ExactEm:
        trace = run_exact_em(*gmm, k_max, config.seed, nullptr,
                             config.run.diag_every, &sink)
                    .trace;
        break;
      case Algorithm::VrFedEm: {
        VrConfig vc;
        vc.outer_rounds = k_out;
        vc.inner_rounds = config.run.k_in;
        vc.batch = config.run.batch;
        vc.gamma = result.resolved_gamma;
        vc.alpha = result.resolved_alpha;
        vc.seed = config.seed;
        vc.diag_every = config.run.diag_every;
        vc.memory_gap_every = config.run.memory_gap_every;
        vc.workers_parallel = config.workers_parallel;
        vc.enforce_theory_alpha = config.run.theory_check;
        trace = run_vrfedem(*gmm, quantizer, vc, nullptr, nullptr, &sink).trace;
        break;
      }
      case Algorithm::MissEm: {
        MissemConfig mc;
        mc.rank = config.run.rank;
        mc.gamma = result.resolved_gamma;
        mc.alpha = result.resolved_alpha;
        mc.batch = config.run.batch;
        mc.rounds = k_max;
        mc.seed = config.seed;
        mc.diag_every = config.run.diag_every;
        const auto run = run_missem(missem_data, mc, quantizer, &sink);
        trace = run.trace;
        write_imputed_csv((fs::path(out_dir) / "imputed.csv").string(),
                          run.imputed);
        write_trends_csv((fs::path(out_dir) / "trends.csv").string(),
                         run.column_totals, run.column_missing);
        if (missem_truth.size() > 0) {
          result.missem_relative_error =
              (run.theta.matrix() - missem_truth).norm() / missem_truth.norm();
        }
        break;
      }
    }
  } catch (const std::exception& e) {
    result.truncated = true;
    result.error = e.what();
    write_trace_csv(result.trace_path, sink, /*truncated=*/true);
    return result;
  }

  write_trace_csv(result.trace_path, trace);
  try {
    result.summary = uniform_k_summary(trace);
  } catch (const std::exception&) {
    result.summary = std::numeric_limits<double>::quiet_NaN();
  }
  result.trace = std::move(trace);
  return result;
}

}  // namespace fedem
