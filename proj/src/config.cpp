#include "qda/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "qda/errors.hpp"

namespace qda {

const char* method_name(Method m) {
  switch (m) {
    case Method::fourdvar: return "fourdvar";
    case Method::pf: return "pf";
    case Method::qaoa: return "qaoa";
    case Method::qmcmc: return "qmcmc";
    case Method::qvpf: return "qvpf";
  }
  return "?";
}

TwinConfig ExperimentConfig::twin() const {
  TwinConfig c;
  c.model = model;
  c.window = window;
  c.obs_every = obs_every;
  c.truth_mean = truth_mean;
  c.truth_cov = truth_cov;
  c.background_cov = background_cov;
  const int d = static_cast<int>(truth_mean.size());
  c.obs_op = observed.empty() ? identity_operator(d) : selector_operator(d, observed);
  c.obs_cov = obs_cov;
  c.process_cov = process_cov;
  c.perturb_background = perturb_background;
  c.add_obs_noise = add_obs_noise;
  return c;
}

std::string text_position(const std::string& text, std::size_t offset) {
  int line = 1, column = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return std::to_string(line) + ":" + std::to_string(column);
}

namespace {

// Walks already-validated JSON text and records the line each value starts on.
class LineIndexer {
 public:
  explicit LineIndexer(const std::string& text) : text_(text) {}

  std::map<std::string, int> run() {
    value("");
    return std::move(lines_);
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  std::string string_token() {
    std::string out;
    ++pos_;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) {
        ++pos_;
        const char c = text_[pos_];
        out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
      } else {
        out += text_[pos_];
      }
      ++pos_;
    }
    ++pos_;
    return out;
  }

  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }

  void value(const std::string& pointer) {
    skip_space();
    if (pos_ >= text_.size()) return;
    lines_[pointer] = line_;
    const char c = text_[pos_];
    if (c == '{') {
      ++pos_;
      skip_space();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        if (text_[pos_] == ',') {
          ++pos_;
          skip_space();
          continue;
        }
        const std::string key = string_token();
        skip_space();
        ++pos_;  // ':'
        value(pointer + "/" + escape(key));
        skip_space();
      }
      ++pos_;
    } else if (c == '[') {
      ++pos_;
      skip_space();
      int i = 0;
      while (pos_ < text_.size() && text_[pos_] != ']') {
        if (text_[pos_] == ',') {
          ++pos_;
          skip_space();
          continue;
        }
        value(pointer + "/" + std::to_string(i++));
        skip_space();
      }
      ++pos_;
    } else if (c == '"') {
      string_token();
    } else {
      while (pos_ < text_.size() && !std::strchr(",]} \t\r\n", text_[pos_])) ++pos_;
    }
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::map<std::string, int> lines_;
};

std::string dotted(const std::string& pointer) {
  if (pointer.empty()) return "(root)";
  std::string out;
  std::size_t start = 1;
  while (start <= pointer.size()) {
    std::size_t end = pointer.find('/', start);
    if (end == std::string::npos) end = pointer.size();
    const std::string part = pointer.substr(start, end - start);
    const bool index = !part.empty() && std::all_of(part.begin(), part.end(), [](char c) { return std::isdigit(c); });
    if (index) out += "[" + part + "]";
    else out += (out.empty() ? "" : ".") + part;
    start = end + 1;
  }
  return out;
}

// Typed access into the document that records violations instead of throwing.
class Reader {
 public:
  explicit Reader(std::map<std::string, int> lines) : lines_(std::move(lines)) {}

  void fail(const std::string& pointer, const std::string& message) {
    std::string p = pointer;
    while (!lines_.count(p) && !p.empty()) p = p.substr(0, p.rfind('/'));
    const auto it = lines_.find(p);
    const std::string where = it == lines_.end() ? "" : "line " + std::to_string(it->second) + ": ";
    errors.push_back(where + dotted(pointer) + ": " + message);
  }

  void allow_only(const Json& obj, const std::string& pointer, std::initializer_list<const char*> keys) {
    for (const auto& [key, value] : obj.items()) {
      bool known = false;
      for (const char* k : keys) known = known || key == k;
      if (!known) fail(pointer + "/" + key, "unknown field");
    }
  }

  const Json* member(const Json& obj, const std::string& pointer, const char* key, bool required) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) fail(pointer, std::string("missing required field '") + key + "'");
      return nullptr;
    }
    return &*it;
  }

  const Json* object(const Json& obj, const std::string& pointer, const char* key, bool required) {
    const Json* v = member(obj, pointer, key, required);
    if (v && !v->is_object()) {
      fail(pointer + "/" + key, "must be an object");
      return nullptr;
    }
    return v;
  }

  template <class T>
  void number(const Json& obj, const std::string& pointer, const char* key, T& out, bool required,
              double min = -HUGE_VAL, double max = HUGE_VAL, bool open_min = false) {
    const Json* v = member(obj, pointer, key, required);
    if (!v) return;
    const std::string p = pointer + "/" + key;
    if (!v->is_number()) return fail(p, "must be a number");
    if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_integer()) return fail(p, "must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v->is_number_unsigned()) {
          out = v->get<T>();
          return;
        }
        if (v->get<std::int64_t>() < 0) return fail(p, "must be non-negative");
      }
    }
    const double x = v->get<double>();
    if (!std::isfinite(x)) return fail(p, "must be finite");
    if (open_min ? !(x > min) : !(x >= min)) return fail(p, std::string("must be ") + (open_min ? "> " : ">= ") + fmt(min));
    if (x > max) return fail(p, "must be <= " + fmt(max));
    out = v->get<T>();
  }

  void boolean(const Json& obj, const std::string& pointer, const char* key, bool& out) {
    const Json* v = member(obj, pointer, key, false);
    if (!v) return;
    if (!v->is_boolean()) return fail(pointer + "/" + key, "must be true or false");
    out = v->get<bool>();
  }

  // Index of the value within `choices`, or -1.
  int choice(const Json& obj, const std::string& pointer, const char* key, std::initializer_list<const char*> choices,
             bool required) {
    const Json* v = member(obj, pointer, key, required);
    if (!v) return -1;
    std::string allowed;
    int i = 0;
    for (const char* c : choices) {
      if (v->is_string() && v->get<std::string>() == c) return i;
      allowed += (i++ ? ", " : "") + std::string(c);
    }
    fail(pointer + "/" + key, "must be one of: " + allowed);
    return -1;
  }

  std::optional<Eigen::VectorXd> vector(const Json& v, const std::string& pointer) {
    if (!v.is_array() || v.empty()) {
      fail(pointer, "must be a non-empty array of numbers");
      return std::nullopt;
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    bool ok = true;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || !std::isfinite(v[i].get<double>())) {
        fail(pointer + "/" + std::to_string(i), "must be a finite number");
        ok = false;
      } else {
        out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
      }
    }
    return ok ? std::optional(out) : std::nullopt;
  }

  std::optional<Eigen::MatrixXd> matrix(const Json& v, const std::string& pointer) {
    if (!v.is_array() || v.empty() || !v[0].is_array()) {
      fail(pointer, "must be a non-empty array of rows");
      return std::nullopt;
    }
    const std::size_t cols = v[0].size();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    bool ok = true;
    for (std::size_t r = 0; r < v.size(); ++r) {
      const std::string rp = pointer + "/" + std::to_string(r);
      const auto row = vector(v[r], rp);
      if (!row) {
        ok = false;
      } else if (static_cast<std::size_t>(row->size()) != cols) {
        fail(rp, "row length " + std::to_string(row->size()) + " differs from " + std::to_string(cols));
        ok = false;
      } else {
        out.row(static_cast<Eigen::Index>(r)) = row->transpose();
      }
    }
    return ok ? std::optional(out) : std::nullopt;
  }

  // 0 for no noise, a positive variance, a list of variances or a full matrix.
  std::optional<Covariance> covariance(const Json& obj, const std::string& pointer, const char* key, int dim,
                                       bool required) {
    const Json* v = member(obj, pointer, key, required);
    if (!v || dim <= 0) return std::nullopt;
    const std::string p = pointer + "/" + key;
    try {
      if (v->is_number()) {
        const double s = v->get<double>();
        if (!std::isfinite(s) || s < 0) {
          fail(p, "variance must be finite and >= 0");
          return std::nullopt;
        }
        return s == 0.0 ? Covariance::zero(dim) : Covariance::scaled_identity(dim, s);
      }
      if (v->is_array() && !v->empty() && v->at(0).is_array()) {
        const auto m = matrix(*v, p);
        if (!m) return std::nullopt;
        if (m->rows() != dim || m->cols() != dim) {
          fail(p, "must be " + std::to_string(dim) + "x" + std::to_string(dim));
          return std::nullopt;
        }
        if (m->isZero(0.0)) return Covariance::zero(dim);
        return Covariance::from_matrix(*m);
      }
      const auto diag = vector(*v, p);
      if (!diag) return std::nullopt;
      if (diag->size() != dim) {
        fail(p, "must have " + std::to_string(dim) + " variances");
        return std::nullopt;
      }
      if (diag->isZero(0.0)) return Covariance::zero(dim);
      if ((diag->array() <= 0.0).any()) {
        fail(p, "variances must all be > 0 (or all 0 for no noise)");
        return std::nullopt;
      }
      return Covariance::diagonal(*diag);
    } catch (const std::exception& e) {
      fail(p, e.what());
      return std::nullopt;
    }
  }

  static std::string fmt(double x) {
    std::ostringstream s;
    s << x;
    return s.str();
  }

  std::vector<std::string> errors;

 private:
  std::map<std::string, int> lines_;
};

void read_model(Reader& r, const Json& obj, const std::string& p, DynamicsModel& model) {
  r.allow_only(obj, p, {"kind", "matrix", "dt", "substeps", "sigma", "rho", "beta"});
  const int kind = r.choice(obj, p, "kind", {"linear", "lorenz63"}, true);
  if (kind == 0) {
    model.kind = DynamicsModel::Kind::linear;
    if (const Json* m = r.member(obj, p, "matrix", true)) {
      if (const auto mat = r.matrix(*m, p + "/matrix")) {
        if (mat->rows() != mat->cols()) r.fail(p + "/matrix", "must be square");
        else model.matrix = *mat;
      }
    }
  } else if (kind == 1) {
    model = lorenz63_model(0.01, 1);
    r.number(obj, p, "dt", model.dt, false, 0.0, HUGE_VAL, true);
    r.number(obj, p, "substeps", model.substeps, false, 1);
    r.number(obj, p, "sigma", model.sigma, false);
    r.number(obj, p, "rho", model.rho, false);
    r.number(obj, p, "beta", model.beta, false);
  }
}

void read_experiment(Reader& r, const Json& obj, const std::string& p, ExperimentConfig& e) {
  r.allow_only(obj, p,
               {"model", "window", "obs_every", "observe", "truth_mean", "truth_cov", "background_cov", "obs_cov",
                "process_cov", "perturb_background", "add_obs_noise"});
  if (const Json* m = r.object(obj, p, "model", true)) read_model(r, *m, p + "/model", e.model);
  r.number(obj, p, "window", e.window, true, 1);
  r.number(obj, p, "obs_every", e.obs_every, false, 1);
  r.boolean(obj, p, "perturb_background", e.perturb_background);
  r.boolean(obj, p, "add_obs_noise", e.add_obs_noise);

  int dim = 0;
  if (const Json* v = r.member(obj, p, "truth_mean", true)) {
    if (const auto x = r.vector(*v, p + "/truth_mean")) {
      e.truth_mean = *x;
      dim = static_cast<int>(x->size());
      const bool model_known = e.model.kind == DynamicsModel::Kind::lorenz63 || e.model.matrix.size() > 0;
      if (model_known && e.model.dim() != dim)
        r.fail(p + "/truth_mean", "length " + std::to_string(dim) + " does not match model dimension " +
                                      std::to_string(e.model.dim()));
    }
  }
  if (const Json* v = r.member(obj, p, "observe", false)) {
    if (!v->is_array() || v->empty()) {
      r.fail(p + "/observe", "must be a non-empty array of coordinate indices");
    } else {
      for (std::size_t i = 0; i < v->size(); ++i) {
        const Json& c = (*v)[i];
        if (!c.is_number_integer() || c.get<int>() < 0 || (dim > 0 && c.get<int>() >= dim))
          r.fail(p + "/observe/" + std::to_string(i), "must be a coordinate index in [0, " + std::to_string(dim) + ")");
        else
          e.observed.push_back(c.get<int>());
      }
    }
  }
  const int obs_dim = e.observed.empty() ? dim : static_cast<int>(e.observed.size());
  if (auto c = r.covariance(obj, p, "truth_cov", dim, false)) e.truth_cov = *c;
  else if (dim > 0) e.truth_cov = Covariance::zero(dim);
  if (auto c = r.covariance(obj, p, "background_cov", dim, true)) e.background_cov = *c;
  if (auto c = r.covariance(obj, p, "obs_cov", obs_dim, true)) e.obs_cov = *c;
  if (auto c = r.covariance(obj, p, "process_cov", dim, false)) e.process_cov = *c;
  else if (dim > 0) e.process_cov = Covariance::zero(dim);
}

void read_encoding(Reader& r, const Json& obj, const std::string& p, int dim, std::optional<EncodingScheme>& out) {
  r.allow_only(obj, p, {"bits_per_dim", "lower", "upper"});
  int bits = 0;
  r.number(obj, p, "bits_per_dim", bits, true, 1);
  std::optional<Eigen::VectorXd> lower, upper;
  if (const Json* v = r.member(obj, p, "lower", true)) lower = r.vector(*v, p + "/lower");
  if (const Json* v = r.member(obj, p, "upper", true)) upper = r.vector(*v, p + "/upper");
  if (!lower || !upper || bits < 1) return;
  if (dim > 0 && lower->size() != dim) return r.fail(p + "/lower", "must have " + std::to_string(dim) + " entries");
  try {
    out = make_scheme(bits, *lower, *upper);
  } catch (const std::exception& e) {
    r.fail(p, e.what());
  }
}

void read_pf(Reader& r, const Json& obj, const std::string& p, PfSettings& s) {
  r.allow_only(obj, p, {"particles", "resampler", "threshold", "qvr_layers", "qvr_iterations", "qvr_threshold",
                        "reverse_kl"});
  r.number(obj, p, "particles", s.particles, false, 2, 1 << 24);
  const int kind = r.choice(obj, p, "resampler", {"systematic", "quantum", "qvr"}, false);
  if (kind >= 0) s.resampler = static_cast<pf::Resampler>(kind);
  r.number(obj, p, "threshold", s.threshold, false, 0.0, 1.0);
  r.number(obj, p, "qvr_layers", s.qvr.layers, false, 1);
  r.number(obj, p, "qvr_iterations", s.qvr.max_iterations, false, 1);
  r.number(obj, p, "qvr_threshold", s.qvr.threshold, false, 0.0, HUGE_VAL, true);
  r.boolean(obj, p, "reverse_kl", s.qvr.reverse_kl);
}

void read_qaoa(Reader& r, const Json& obj, const std::string& p, QaoaSettings& s) {
  r.allow_only(obj, p, {"depth", "max_iterations", "gradient_tolerance", "natural", "learning_rate", "ridge",
                        "gradient", "shots"});
  r.number(obj, p, "depth", s.depth, false, 1, 64);
  r.number(obj, p, "max_iterations", s.optimizer.max_iterations, false, 1);
  r.number(obj, p, "gradient_tolerance", s.optimizer.gradient_tolerance, false, 0.0, HUGE_VAL, true);
  r.boolean(obj, p, "natural", s.optimizer.natural);
  r.number(obj, p, "learning_rate", s.optimizer.learning_rate, false, 0.0, HUGE_VAL, true);
  r.number(obj, p, "ridge", s.optimizer.ridge, false, 0.0);
  const int g = r.choice(obj, p, "gradient", {"parameter_shift", "adjoint"}, false);
  if (g >= 0) s.optimizer.gradient = static_cast<qaoa::GradientMethod>(g);
  r.number(obj, p, "shots", s.optimizer.shots, false, 1);
}

void read_qmcmc(Reader& r, const Json& obj, const std::string& p, QmcmcSettings& s) {
  r.allow_only(obj, p, {"steps", "burn_in", "kernel", "flip_count", "step", "epsilon_shots"});
  r.number(obj, p, "steps", s.steps, false, 1);
  r.number(obj, p, "burn_in", s.burn_in, false, 0);
  const int k = r.choice(obj, p, "kernel", {"uniform_global", "bitflip"}, false);
  if (k >= 0) s.kernel.kind = static_cast<mcmc::ProposalKernel::Kind>(k);
  r.number(obj, p, "flip_count", s.kernel.flip_count, false, 1);
  const int step = r.choice(obj, p, "step", {"classical", "quantum", "quantum_corrected"}, false);
  if (step >= 0) s.kind = static_cast<mcmc::StepKind>(step);
  r.number(obj, p, "epsilon_shots", s.epsilon_shots, false, 0);
  if (s.steps <= s.burn_in) r.fail(p + "/burn_in", "must be smaller than steps");
}

void read_qvpf(Reader& r, const Json& obj, const std::string& p, QvpfSettings& s) {
  r.allow_only(obj, p, {"particles", "cycle_length", "refine_steps", "adaptive_box", "box_sigmas"});
  r.number(obj, p, "particles", s.particles, false, 2, 1 << 24);
  r.number(obj, p, "cycle_length", s.cycle_length, false, 1);
  r.number(obj, p, "refine_steps", s.refine_steps, false, 0);
  r.boolean(obj, p, "adaptive_box", s.adaptive_box);
  r.number(obj, p, "box_sigmas", s.box_sigmas, false, 0.0, HUGE_VAL, true);
}

PipelineConfig read_config(const Json& doc, Reader& r, const std::string& base = "", bool seed_required = true) {
  PipelineConfig c;
  c.source = doc;
  if (!doc.is_object()) {
    r.fail(base, "top level must be an object");
    return c;
  }
  r.allow_only(doc, base, {"experiment", "encoding", "method", "seed", "out", "fourdvar", "pf", "qaoa", "qmcmc", "qvpf"});
  if (const Json* e = r.object(doc, base, "experiment", true)) read_experiment(r, *e, base + "/experiment", c.experiment);
  const int dim = static_cast<int>(c.experiment.truth_mean.size());
  if (const Json* e = r.object(doc, base, "encoding", false)) read_encoding(r, *e, base + "/encoding", dim, c.encoding);
  const int m = r.choice(doc, base, "method", {"fourdvar", "pf", "qaoa", "qmcmc", "qvpf"}, true);
  if (m >= 0) c.method = static_cast<Method>(m);
  r.number(doc, base, "seed", c.seed, seed_required, 0);
  if (const Json* o = r.member(doc, base, "out", false)) {
    if (!o->is_string() || o->get<std::string>().empty()) r.fail(base + "/out", "must be a non-empty path string");
    else c.out = o->get<std::string>();
  }
  if (const Json* s = r.object(doc, base, "fourdvar", false)) {
    r.allow_only(*s, base + "/fourdvar", {"max_iterations", "gradient_tolerance"});
    r.number(*s, base + "/fourdvar", "max_iterations", c.fourdvar.max_iterations, false, 1);
    r.number(*s, base + "/fourdvar", "gradient_tolerance", c.fourdvar.gradient_tolerance, false, 0.0, HUGE_VAL, true);
  }
  if (const Json* s = r.object(doc, base, "pf", false)) read_pf(r, *s, base + "/pf", c.pf);
  if (const Json* s = r.object(doc, base, "qaoa", false)) read_qaoa(r, *s, base + "/qaoa", c.qaoa);
  if (const Json* s = r.object(doc, base, "qmcmc", false)) read_qmcmc(r, *s, base + "/qmcmc", c.qmcmc);
  if (const Json* s = r.object(doc, base, "qvpf", false)) read_qvpf(r, *s, base + "/qvpf", c.qvpf);

  const bool quantum_grid = m >= 0 && (c.method == Method::qaoa || c.method == Method::qmcmc || c.method == Method::qvpf);
  if (quantum_grid && !doc.contains("encoding")) r.fail(base, "missing required field 'encoding' for this method");
  if (quantum_grid && c.encoding && c.encoding->total_qubits() > 16)
    r.fail(base + "/encoding/bits_per_dim", "dimension x bits_per_dim must be <= 16 for pipeline runs");
  if (m >= 0 && c.method == Method::fourdvar && c.experiment.background_cov.is_zero())
    r.fail(base + "/experiment/background_cov", "fourdvar needs a nonzero background covariance");
  return c;
}

}  // namespace

std::map<std::string, int> index_lines(const std::string& text) { return LineIndexer(text).run(); }

namespace {

Json parse_document(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError({"line " + text_position(text, e.byte > 0 ? e.byte - 1 : 0) + ": malformed JSON: " + e.what()});
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError({path + ": cannot open config file"});
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

PipelineConfig parse_config_text(const std::string& text, bool seed_required) {
  const Json doc = parse_document(text);
  Reader r(index_lines(text));
  PipelineConfig c = read_config(doc, r, "", seed_required);
  if (!r.errors.empty()) throw ValidationError(r.errors);
  return c;
}

std::optional<std::vector<double>> grid(Reader& r, const Json& doc) {
  const Json* v = r.member(doc, "", "grid", true);
  if (!v) return std::nullopt;
  const auto g = r.vector(*v, "/grid");
  if (!g) return std::nullopt;
  if (g->size() < 4) {
    r.fail("/grid", "needs at least 4 points");
    return std::nullopt;
  }
  return std::vector<double>(g->data(), g->data() + g->size());
}

}  // namespace

PipelineConfig parse_config(const std::string& text) { return parse_config_text(text, true); }

PipelineConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

PipelineConfig config_from_json(const Json& doc) {
  Reader r({});
  PipelineConfig c = read_config(doc, r);
  if (!r.errors.empty()) throw ValidationError(r.errors);
  return c;
}

CompareConfig parse_compare_config(const std::string& text, const std::string& base_dir) {
  const Json doc = parse_document(text);
  Reader r(index_lines(text));
  CompareConfig cc;
  cc.source = doc;
  if (!doc.is_object()) throw ValidationError({"line 1: (root): top level must be an object"});
  r.allow_only(doc, "", {"runs", "seed", "out"});
  if (doc.contains("seed")) {
    std::uint64_t seed = 0;
    const std::size_t before = r.errors.size();
    r.number(doc, "", "seed", seed, false, 0);
    if (r.errors.size() == before) cc.seed = seed;
  }
  if (const Json* o = r.member(doc, "", "out", false)) {
    if (!o->is_string() || o->get<std::string>().empty()) r.fail("/out", "must be a non-empty path string");
    else cc.out = o->get<std::string>();
  }
  const Json* runs = r.member(doc, "", "runs", true);
  if (runs && (!runs->is_array() || runs->empty())) {
    r.fail("/runs", "must be a non-empty array of configs or config paths");
  } else if (runs) {
    for (std::size_t i = 0; i < runs->size(); ++i) {
      const Json& item = (*runs)[i];
      const std::string pointer = "/runs/" + std::to_string(i);
      if (item.is_object()) {
        cc.runs.push_back(read_config(item, r, pointer, !cc.seed));
      } else if (item.is_string()) {
        const std::string path = (std::filesystem::path(base_dir) / item.get<std::string>()).string();
        try {
          cc.runs.push_back(parse_config_text(read_file(path), !cc.seed));
        } catch (const ValidationError& e) {
          for (const auto& v : e.violations()) r.errors.push_back(path + ": " + v);
        }
      } else {
        r.fail(pointer, "must be a config object or a path string");
      }
    }
  }
  if (!r.errors.empty()) throw ValidationError(r.errors);
  if (cc.seed)
    for (auto& run : cc.runs) run.seed = *cc.seed;
  return cc;
}

CompareConfig load_compare_config(const std::string& path) {
  return parse_compare_config(read_file(path), std::filesystem::path(path).parent_path().string());
}

ScaleConfig parse_scale_config(const std::string& text) {
  const Json doc = parse_document(text);
  Reader r(index_lines(text));
  ScaleConfig sc;
  sc.source = doc;
  if (!doc.is_object()) throw ValidationError({"line 1: (root): top level must be an object"});
  r.allow_only(doc, "", {"kind", "seed", "out", "grid", "num_qubits", "trials", "replicates", "qvpf_replicates",
                         "experiment", "encoding", "qaoa", "qmcmc", "qvpf"});
  const int kind = r.choice(doc, "", "kind", {"epsilon_scaling", "particle_scaling"}, true);
  r.number(doc, "", "seed", sc.seed, true, 0);
  if (const Json* o = r.member(doc, "", "out", false)) {
    if (!o->is_string() || o->get<std::string>().empty()) r.fail("/out", "must be a non-empty path string");
    else sc.out = o->get<std::string>();
  }
  const auto g = grid(r, doc);
  if (kind == 0) {
    sc.kind = ScalingKind::epsilon_scaling;
    EpsilonScalingSettings& e = sc.epsilon;
    r.number(doc, "", "num_qubits", e.num_qubits, false, 1, 20);
    r.number(doc, "", "trials", e.trials, false, 1);
    if (g) {
      e.grid = *g;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double marked = (*g)[i] * std::ldexp(1.0, e.num_qubits);
        if (!((*g)[i] > 0.0 && (*g)[i] <= 1.0) || marked != std::floor(marked))
          r.fail("/grid/" + std::to_string(i), "epsilon must lie in (0, 1] and be a multiple of 2^-num_qubits");
      }
    }
  } else if (kind == 1) {
    sc.kind = ScalingKind::particle_scaling;
    ParticleScalingSettings& p = sc.particles;
    r.number(doc, "", "replicates", p.replicates, false, 1);
    r.number(doc, "", "qvpf_replicates", p.qvpf_replicates, false, 0);
    if (const Json* e = r.object(doc, "", "experiment", true)) {
      read_experiment(r, *e, "/experiment", p.experiment);
      if (p.experiment.model.kind != DynamicsModel::Kind::linear)
        r.fail("/experiment/model/kind", "particle_scaling needs a linear model for the Kalman reference");
    }
    const int dim = static_cast<int>(p.experiment.truth_mean.size());
    if (const Json* e = r.object(doc, "", "encoding", false)) read_encoding(r, *e, "/encoding", dim, p.encoding);
    if (const Json* s = r.object(doc, "", "qaoa", false)) read_qaoa(r, *s, "/qaoa", p.qaoa);
    if (const Json* s = r.object(doc, "", "qmcmc", false)) read_qmcmc(r, *s, "/qmcmc", p.qmcmc);
    if (const Json* s = r.object(doc, "", "qvpf", false)) read_qvpf(r, *s, "/qvpf", p.qvpf);
    if (g) {
      p.grid = *g;
      for (std::size_t i = 0; i < g->size(); ++i)
        if (!((*g)[i] >= 2.0) || (*g)[i] != std::floor((*g)[i]))
          r.fail("/grid/" + std::to_string(i), "particle counts must be integers >= 2");
    }
  }
  if (!r.errors.empty()) throw ValidationError(r.errors);
  return sc;
}

ScaleConfig load_scale_config(const std::string& path) { return parse_scale_config(read_file(path)); }

namespace {

Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_json(m.row(r).transpose()));
  return out;
}

Json covariance_json(const Covariance& c) { return c.is_zero() ? Json(0) : matrix_json(c.matrix()); }

}  // namespace

Json config_to_json(const PipelineConfig& c) {
  const ExperimentConfig& e = c.experiment;
  Json model;
  if (e.model.kind == DynamicsModel::Kind::linear) {
    model["kind"] = "linear";
    model["matrix"] = matrix_json(e.model.matrix);
  } else {
    model = {{"kind", "lorenz63"}, {"dt", e.model.dt},   {"substeps", e.model.substeps},
             {"sigma", e.model.sigma}, {"rho", e.model.rho}, {"beta", e.model.beta}};
  }
  Json exp = {{"model", model}, {"window", e.window}, {"obs_every", e.obs_every}};
  if (!e.observed.empty()) exp["observe"] = e.observed;
  exp["truth_mean"] = vector_json(e.truth_mean);
  exp["truth_cov"] = covariance_json(e.truth_cov);
  exp["background_cov"] = covariance_json(e.background_cov);
  exp["obs_cov"] = covariance_json(e.obs_cov);
  exp["process_cov"] = covariance_json(e.process_cov);
  exp["perturb_background"] = e.perturb_background;
  exp["add_obs_noise"] = e.add_obs_noise;

  Json out;
  out["experiment"] = exp;
  if (c.encoding)
    out["encoding"] = {{"bits_per_dim", c.encoding->bits_per_dim},
                       {"lower", vector_json(c.encoding->lower)},
                       {"upper", vector_json(c.encoding->upper)}};
  out["method"] = method_name(c.method);
  out["seed"] = c.seed;
  if (!c.out.empty()) out["out"] = c.out;
  out["fourdvar"] = {{"max_iterations", c.fourdvar.max_iterations},
                     {"gradient_tolerance", c.fourdvar.gradient_tolerance}};
  const char* resamplers[] = {"systematic", "quantum", "qvr"};
  out["pf"] = {{"particles", c.pf.particles},
               {"resampler", resamplers[static_cast<int>(c.pf.resampler)]},
               {"threshold", c.pf.threshold},
               {"qvr_layers", c.pf.qvr.layers},
               {"qvr_iterations", c.pf.qvr.max_iterations},
               {"qvr_threshold", c.pf.qvr.threshold},
               {"reverse_kl", c.pf.qvr.reverse_kl}};
  const auto& q = c.qaoa.optimizer;
  out["qaoa"] = {{"depth", c.qaoa.depth},
                 {"max_iterations", q.max_iterations},
                 {"gradient_tolerance", q.gradient_tolerance},
                 {"natural", q.natural},
                 {"learning_rate", q.learning_rate},
                 {"ridge", q.ridge},
                 {"gradient", q.gradient == qaoa::GradientMethod::adjoint ? "adjoint" : "parameter_shift"},
                 {"shots", q.shots}};
  const char* steps[] = {"classical", "quantum", "quantum_corrected"};
  out["qmcmc"] = {{"steps", c.qmcmc.steps},
                  {"burn_in", c.qmcmc.burn_in},
                  {"kernel", c.qmcmc.kernel.kind == mcmc::ProposalKernel::Kind::uniform_global ? "uniform_global"
                                                                                                : "bitflip"},
                  {"flip_count", c.qmcmc.kernel.flip_count},
                  {"step", steps[static_cast<int>(c.qmcmc.kind)]},
                  {"epsilon_shots", c.qmcmc.epsilon_shots}};
  out["qvpf"] = {{"particles", c.qvpf.particles},
                 {"cycle_length", c.qvpf.cycle_length},
                 {"refine_steps", c.qvpf.refine_steps},
                 {"adaptive_box", c.qvpf.adaptive_box},
                 {"box_sigmas", c.qvpf.box_sigmas}};
  return out;
}

void save_config(const PipelineConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot write config");
  out << config_to_json(config).dump(2) << '\n';
}

bool operator==(const PipelineConfig& a, const PipelineConfig& b) { return config_to_json(a) == config_to_json(b); }

}  // namespace qda
