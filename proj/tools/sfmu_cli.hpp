#pragma once

// Command-line front end. Kept in a header so the tests can drive run_cli
// in-process; tools/sfmu.cpp only forwards main() here.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "sfmu/sfmu.hpp"

namespace sfmu::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config: flat key=value text. '#' starts a comment line.

struct KeyInfo {
  const char* name;
  const char* fallback;
  const char* help;
};

inline const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = {
      {"mode", "linear", "linear | mixed_linear"},
      {"features", "", "SFUFEAT1 file (training data, or Jacobian rows in mixed_linear mode)"},
      {"test_features", "", "optional separate SFUFEAT1 test file"},
      {"residuals", "", "SFUJRES1 residual targets (mixed_linear mode)"},
      {"normalize", "false", "rescale rows so that max |x| = 1"},
      {"test_fraction", "0.2", "held-out share when no test_features file is given"},
      {"forget_fraction", "0.1", "share of training samples to forget"},
      {"split_seed", "0", ""},
      {"split_dir", "", "load train/test/forget/retain .idx files instead of drawing a split"},
      {"loss", "quadratic", "quadratic | logistic"},
      {"lambda", "0.001", "ridge weight; the subset loss carries lambda*|S|/2 |w|^2"},
      {"tol", "-1", "trainer tolerance; negative picks the per-loss default"},
      {"max_iter", "100", ""},
      {"m", "500", "number of probes"},
      {"eta", "0", "probe scale; 0 picks 1 (quadratic) or 0.01|w*| (logistic)"},
      {"estimator_seed", "0", ""},
      {"block", "true", "quadratic feature models: estimate the shared d x d block"},
      {"forget_scale", "retain_ratio", "retain_ratio | none"},
      {"ridge_floor", "true", "constrain the estimate to >= lambda*n_retain*I"},
      {"hessian_source", "estimated", "exact | estimated"},
      {"sigma", "0", "noise scale"},
      {"noise_form", "variance", "variance (sigma^2 xi) | stddev (sigma xi)"},
      {"noise_seed", "0", ""},
      {"tau", "0", "ridge added to the Hessian before the solve"},
      {"auto_tau", "true", "raise tau to 1e-8 tr(H)/p when the estimate is singular"},
      {"mia_seed", "0", ""},
      {"mia_one_sided", "false", "report max(score, 100 - score)"},
      {"baselines", "false", "also run NegGrad and RandomLabels"},
      {"baseline_steps", "50", ""},
      {"baseline_step_size", "0.001", ""},
      {"baseline_seed", "0", ""},
      {"model", "", "trained model file to start from (skips training)"},
      {"hessian", "", "precomputed Hessian file for hessian_source=estimated"},
      {"sweep_axis", "", "forget_fraction | m | lambda"},
      {"sweep_values", "", "comma separated"},
      {"sweep_seeds", "1", "repetitions per value; seeds split_seed+s, estimator_seed+s"},
      {"verify_samples", "1000000", "Monte-Carlo samples per matrix in verify"},
      {"verify_matrices", "5", "random matrices in verify"},
      {"synth_n", "1000", ""},
      {"synth_d", "10", ""},
      {"synth_k", "3", ""},
      {"synth_p", "20", "parameters per output for synthetic linearized data"},
      {"synth_seed", "0", ""},
      {"synth_separation", "1", ""},
      {"synth_decay", "1", ""},
      {"synth_label_noise", "0", ""},
      {"synth_kind", "features", "features | linearized"},
  };
  return keys;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

class Config {
 public:
  Config() {
    for (const auto& k : known_keys()) values_[k.name] = k.fallback;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw UsageError("unknown config key \"" + key + "\"");
    values_[key] = value;
  }

  /// Parses key=value lines. Relative paths are resolved against base_dir.
  void merge_text(const std::string& text, const std::string& origin, const fs::path& base_dir = {}) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key=value, got \"" + t + "\"");
      }
      const std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      if (is_path_key(key) && !value.empty() && !base_dir.empty() && fs::path(value).is_relative()) {
        value = (base_dir / value).lexically_normal().string();
      }
      try {
        set(key, value);
      } catch (const UsageError& e) {
        throw UsageError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void merge_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open config " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    merge_text(buf.str(), path.string(), fs::absolute(path).parent_path());
  }

  /// --set key=value overrides.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got \"" + kv + "\"");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key \"" + key + "\"");
    return it->second;
  }

  double num(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw UsageError("config key " + key + ": \"" + v + "\" is not a number");
    }
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
      const unsigned long long x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw UsageError("config key " + key + ": \"" + v + "\" is not a non-negative integer");
    }
  }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw UsageError("config key " + key + ": \"" + v + "\" is not a boolean");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static bool is_path_key(const std::string& key) {
    return key == "features" || key == "test_features" || key == "residuals" || key == "split_dir" ||
           key == "model" || key == "hessian";
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(what + ": \"" + item + "\" is not a number");
    }
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

/// Pipeline settings from the config (everything except data and split).
inline PipelineConfig pipeline_config(const Config& c) {
  PipelineConfig p;
  p.loss = parse_loss_kind(c.str("loss"));
  p.lambda = c.num("lambda");
  if (p.lambda < 0.0) throw UsageError("lambda must be >= 0");
  p.train.tol = c.num("tol");
  p.train.max_iter = static_cast<int>(c.u64("max_iter"));
  p.estimator.m = static_cast<Eigen::Index>(c.u64("m"));
  p.estimator.eta = c.num("eta");
  p.estimator.seed = c.u64("estimator_seed");
  p.estimator.block = c.flag("block");
  p.estimator.forget_scale = parse_forget_scale(c.str("forget_scale"));
  p.estimator.ridge_floor = c.flag("ridge_floor");
  p.unlearn.hessian_source = parse_hessian_source(c.str("hessian_source"));
  p.unlearn.sigma = c.num("sigma");
  p.unlearn.noise_form = parse_noise_form(c.str("noise_form"));
  p.unlearn.noise_seed = c.u64("noise_seed");
  p.unlearn.tau = c.num("tau");
  p.unlearn.validate();
  p.auto_tau = c.flag("auto_tau");
  p.mia_seed = c.u64("mia_seed");
  p.mia.one_sided = c.flag("mia_one_sided");
  p.run_baselines = c.flag("baselines");
  p.baseline.steps = static_cast<int>(c.u64("baseline_steps"));
  p.baseline.step_size = c.num("baseline_step_size");
  p.baseline.seed = c.u64("baseline_seed");
  p.baseline.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Data

struct Workspace {
  std::variant<FeatureDataset, LinearizedProblem> data;
  SplitSpec split;

  Index n() const {
    return std::visit([](const auto& d) { return d.n; }, data);
  }

  /// Calls f(design) with a FeatureDesign or JacobianDesign.
  template <typename F>
  decltype(auto) with_design(F&& f) const {
    if (const auto* ds = std::get_if<FeatureDataset>(&data)) return f(FeatureDesign(*ds));
    return f(JacobianDesign(std::get<LinearizedProblem>(data)));
  }
};

inline FeatureDataset concat(const FeatureDataset& a, const FeatureDataset& b, const std::string& b_origin) {
  if (a.d != b.d || a.k != b.k) {
    throw DataError(b_origin + ": shape d=" + std::to_string(b.d) + " k=" + std::to_string(b.k) +
                    " does not match the training file (d=" + std::to_string(a.d) + " k=" + std::to_string(a.k) +
                    ")");
  }
  FeatureDataset out = a;
  out.n = a.n + b.n;
  out.features.resize(out.n, a.d);
  out.features << a.features, b.features;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

inline Workspace load_workspace(const Config& c) {
  if (c.str("features").empty()) throw UsageError("config key \"features\" is required");
  Workspace ws;
  const std::string mode = c.str("mode");
  std::optional<Index> n_train;
  if (mode == "linear") {
    FeatureDataset ds = load_features(c.str("features"));
    if (!c.str("test_features").empty()) {
      n_train = ds.n;
      ds = concat(ds, load_features(c.str("test_features")), c.str("test_features"));
    }
    if (c.flag("normalize")) ds.normalize_rows();
    ws.data = std::move(ds);
  } else if (mode == "mixed_linear") {
    if (c.str("residuals").empty()) throw UsageError("mode=mixed_linear needs config key \"residuals\"");
    if (!c.str("test_features").empty()) throw UsageError("mode=mixed_linear takes its test set from test_fraction");
    ws.data = load_linearized(c.str("features"), c.str("residuals"));
  } else {
    throw UsageError("unknown mode \"" + mode + "\" (expected linear|mixed_linear)");
  }

  const double frac = c.num("forget_fraction");
  const std::uint64_t seed = c.u64("split_seed");
  if (!c.str("split_dir").empty()) {
    ws.split = load_split(c.str("split_dir"), ws.n());
  } else if (n_train) {
    IndexList train(*n_train);
    IndexList test(ws.n() - *n_train);
    std::iota(train.begin(), train.end(), Index{0});
    std::iota(test.begin(), test.end(), *n_train);
    ws.split = make_split(std::move(train), std::move(test), frac, seed);
  } else {
    FeatureDataset shape;
    shape.n = ws.n();
    ws.split = make_split(shape, frac, seed, c.num("test_fraction"));
  }
  return ws;
}

// ---------------------------------------------------------------------------
// Output

inline void write_text(const fs::path& path, const std::string& text) { detail::write_file(path, text); }

inline std::string manifest_text(const std::string& command, const Config& c) {
  std::ostringstream os;
  os << "# sfmu " << kVersion << " " << command << "\n"
     << "# eigen " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << "\n"
#if defined(__clang__)
     << "# compiler clang " << __clang_version__ << "\n"
#elif defined(__GNUC__)
     << "# compiler gcc " << __VERSION__ << "\n"
#endif
     << "# seeds split=" << c.str("split_seed") << " estimator=" << c.str("estimator_seed")
     << " noise=" << c.str("noise_seed") << " mia=" << c.str("mia_seed") << " baseline=" << c.str("baseline_seed")
     << "\n";
  for (const auto& [k, v] : c.values()) os << k << "=" << v << "\n";
  return os.str();
}

struct Context {
  Config config;
  fs::path out_dir;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

inline void write_manifest(const Context& ctx, const std::string& command) {
  write_text(ctx.out_dir / "manifest.txt", manifest_text(command, ctx.config));
}

// ---------------------------------------------------------------------------
// Commands

template <LinearDesign Design>
LinearModel trained_model(const Design& design, const SplitSpec& split, const PipelineConfig& p, const Config& c) {
  if (!c.str("model").empty()) {
    LinearModel m;
    m.w = load_model(c.str("model"));
    if (m.w.size() != design.num_params()) {
      throw DimensionMismatch(c.str("model") + ": model has " + std::to_string(m.w.size()) +
                              " parameters, data implies " + std::to_string(design.num_params()));
    }
    m.kind = p.loss;
    m.lambda = p.lambda;
    return m;
  }
  return train(SubsetLoss<Design>(design, split.train_idx, p.lambda, p.loss), p.train);
}

inline int cmd_train(const Context& ctx) {
  const Workspace ws = load_workspace(ctx.config);
  const PipelineConfig p = pipeline_config(ctx.config);
  ws.with_design([&](const auto& design) {
    using D = std::decay_t<decltype(design)>;
    const LinearModel m = train(SubsetLoss<D>(design, ws.split.train_idx, p.lambda, p.loss), p.train);
    save_model(ctx.out_dir / "model.bin", m.w);
    save_split(ctx.out_dir / "split", ws.split);
    *ctx.out << "trained p=" << m.w.size() << " iterations=" << m.iterations << " grad_norm=" << m.grad_norm << "\n";
    return 0;
  });
  write_manifest(ctx, "train");
  return 0;
}

inline int cmd_retrain(const Context& ctx) {
  const Workspace ws = load_workspace(ctx.config);
  const PipelineConfig p = pipeline_config(ctx.config);
  ws.with_design([&](const auto& design) {
    const LinearModel m = retrain_oracle(design, ws.split, p.lambda, p.loss, p.train);
    save_model(ctx.out_dir / "retrained.bin", m.w);
    save_split(ctx.out_dir / "split", ws.split);
    *ctx.out << "retrained p=" << m.w.size() << " iterations=" << m.iterations << "\n";
    return 0;
  });
  write_manifest(ctx, "retrain");
  return 0;
}

inline int cmd_estimate(const Context& ctx) {
  const Workspace ws = load_workspace(ctx.config);
  const PipelineConfig p = pipeline_config(ctx.config);
  ws.with_design([&](const auto& design) {
    using D = std::decay_t<decltype(design)>;
    const LinearModel trained = trained_model(design, ws.split, p, ctx.config);
    PerturbationSet set;
    const HessianEstimate est = estimate_from_forget(design, ws.split, trained, p, set);
    const SymMatrix h_hat = est.full();
    save_hessian(ctx.out_dir / "hessian.bin", h_hat);
    // Diagnostics against the retain data; the estimate itself never saw it.
    const SubsetLoss<D> retain(design, ws.split.retain_idx, p.lambda, p.loss);
    const double eps = max_abs_difference(loss_differences(retain, trained.w, set.probes), set.loss_diffs);
    const SymMatrix h_r = retain.hessian(trained.w);
    std::string report = estimation_report(est, eps, frobenius_norm(h_hat - h_r));
    report += "relative_frobenius_error=" + detail::fmt_g(frobenius_norm(h_hat - h_r) / frobenius_norm(h_r)) + "\n";
    for (const auto& w : est.warnings) {
      report += "warning=" + w + "\n";
      *ctx.err << "warning: " << w << "\n";
    }
    write_text(ctx.out_dir / "estimate.txt", report);
    *ctx.out << report;
    return 0;
  });
  write_manifest(ctx, "estimate");
  return 0;
}

inline int cmd_unlearn(const Context& ctx) {
  const Workspace ws = load_workspace(ctx.config);
  const PipelineConfig p = pipeline_config(ctx.config);
  ws.with_design([&](const auto& design) {
    using D = std::decay_t<decltype(design)>;
    const LinearModel trained = trained_model(design, ws.split, p, ctx.config);
    const LinearModel retrained = retrain_oracle(design, ws.split, p.lambda, p.loss, p.train);
    const SubsetLoss<D> retain(design, ws.split.retain_idx, p.lambda, p.loss);
    const SubsetLoss<D> forget(design, ws.split.forget_idx, p.lambda, p.loss);
    const Vector forget_grad = forget.gradient(trained.w);

    UnlearnConfig u = p.unlearn;
    SymMatrix h;
    std::string method;
    if (u.hessian_source == HessianSource::exact) {
      h = retain.hessian(trained.w);
      method = "Unlearned(+)";
    } else {
      if (!ctx.config.str("hessian").empty()) {
        h = load_hessian(ctx.config.str("hessian"));
      } else {
        PerturbationSet set;
        h = estimate_from_forget(design, ws.split, trained, p, set).full();
      }
      if (p.auto_tau && min_eigenvalue(h) <= 0.0) u.tau = std::max(u.tau, suggested_tau(h));
      method = "Unlearned(-)";
    }
    const LinearModel out = unlearn(trained, h, forget_grad, u);
    save_model(ctx.out_dir / "unlearned.bin", out.w);
    save_split(ctx.out_dir / "split", ws.split);

    auto row = [&](const std::string& name, const Vector& w) {
      EvalReport r = evaluate(design, p.loss, p.lambda, ws.split, w, std::optional<Vector>(retrained.w), p.mia_seed,
                              p.mia);
      r.method = name;
      return r;
    };
    std::vector<EvalReport> rows{row("Original", trained.w), row("Retrained", retrained.w), row(method, out.w)};
    if (p.run_baselines) {
      for (BaselineKind kind : {BaselineKind::neggrad, BaselineKind::random_labels}) {
        BaselineConfig b = p.baseline;
        b.kind = kind;
        rows.push_back(row(to_string(kind), run_baseline(trained, forget, b).w));
      }
    }
    write_text(ctx.out_dir / "report.csv", emit_table(rows));
    std::string text = summary(rows[2]);
    text += "tau=" + detail::fmt_g(u.tau) + "\n";
    write_text(ctx.out_dir / "report.txt", text);
    *ctx.out << emit_table(rows);
    return 0;
  });
  write_manifest(ctx, "unlearn");
  return 0;
}

inline unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SFMU_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/// Runs jobs 0..count-1 on a small thread pool; the first exception wins.
template <typename F>
void parallel_for(std::size_t count, F&& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const unsigned n = worker_count(count);
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct SweepRow {
  double value = 0.0;
  EvalReport retrained;
  EvalReport unlearned;
  double gap = 0.0;  // mean |acc difference| over test, remaining, forget
};

inline double accuracy_gap(const EvalReport& a, const EvalReport& b) {
  double sum = std::abs(a.remain_acc - b.remain_acc) + std::abs(a.forget_acc - b.forget_acc);
  int terms = 2;
  if (!std::isnan(a.test_acc) && !std::isnan(b.test_acc)) {
    sum += std::abs(a.test_acc - b.test_acc);
    ++terms;
  }
  return sum / terms;
}

inline std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::string out = axis +
                    ",retrained_test,retrained_remaining,retrained_forget,retrained_mia,"
                    "unlearned_test,unlearned_remaining,unlearned_forget,unlearned_mia,gap\n";
  for (const auto& r : rows) {
    out += detail::fmt_g(r.value);
    for (const EvalReport* e : {&r.retrained, &r.unlearned}) {
      out += "," + detail::fmt(e->test_acc, 4) + "," + detail::fmt(e->remain_acc, 4) + "," +
             detail::fmt(e->forget_acc, 4) + "," + detail::fmt(e->mia_score, 4);
    }
    out += "," + detail::fmt(r.gap, 6) + "\n";
  }
  return out;
}

/// One row per value, each averaged over sweep_seeds repetitions.
inline std::vector<SweepRow> run_sweep(const Context& ctx, const std::string& axis, const std::vector<double>& values) {
  if (axis != "forget_fraction" && axis != "m" && axis != "lambda") {
    throw UsageError("unknown sweep axis \"" + axis + "\" (expected forget_fraction|m|lambda)");
  }
  const std::size_t seeds = std::max<std::uint64_t>(1, ctx.config.u64("sweep_seeds"));
  // Validate everything up front so worker threads only see numeric failures.
  (void)pipeline_config(ctx.config);
  (void)load_workspace(ctx.config);

  struct Cell {
    EvalReport retrained;
    EvalReport unlearned;
  };
  std::vector<Cell> cells(values.size() * seeds);
  parallel_for(cells.size(), [&](std::size_t job) {
    const std::size_t v = job / seeds;
    const std::size_t s = job % seeds;
    Config c = ctx.config;
    std::ostringstream val;
    val.precision(17);
    val << values[v];
    c.set(axis, val.str());
    c.set("split_seed", std::to_string(ctx.config.u64("split_seed") + s));
    c.set("estimator_seed", std::to_string(ctx.config.u64("estimator_seed") + s));
    const Workspace ws = load_workspace(c);
    PipelineConfig p = pipeline_config(c);
    p.run_exact = false;
    p.run_baselines = false;
    const PipelineResult r = ws.with_design([&](const auto& design) { return run_pipeline(design, ws.split, p); });
    cells[job] = {r.reports[1], r.reports.back()};
  });

  std::vector<SweepRow> rows;
  for (std::size_t v = 0; v < values.size(); ++v) {
    SweepRow row;
    row.value = values[v];
    for (EvalReport* acc : {&row.retrained, &row.unlearned}) *acc = EvalReport{};
    for (std::size_t s = 0; s < seeds; ++s) {
      const Cell& cell = cells[v * seeds + s];
      for (auto [dst, src] : {std::pair{&row.retrained, &cell.retrained}, std::pair{&row.unlearned, &cell.unlearned}}) {
        dst->test_acc += src->test_acc / seeds;
        dst->remain_acc += src->remain_acc / seeds;
        dst->forget_acc += src->forget_acc / seeds;
        dst->mia_score += src->mia_score / seeds;
      }
      row.gap += accuracy_gap(cell.retrained, cell.unlearned) / seeds;
    }
    rows.push_back(row);
  }
  return rows;
}

inline int cmd_sweep(const Context& ctx) {
  const std::string axis = ctx.config.str("sweep_axis");
  if (axis.empty()) throw UsageError("sweep needs --axis or config key sweep_axis");
  const std::vector<double> values = parse_list(ctx.config.str("sweep_values"), "sweep_values");
  const std::vector<SweepRow> rows = run_sweep(ctx, axis, values);
  const std::string csv = sweep_csv(axis, rows);
  write_text(ctx.out_dir / ("sweep_" + axis + ".csv"), csv);
  *ctx.out << csv;
  write_manifest(ctx, "sweep");
  return 0;
}

// ---------------------------------------------------------------------------
// verify: the library's self-checks against closed forms.

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Relative Frobenius errors of the estimate under injected corruption
/// |dL_f - dL_r| <= eps on a consistent quadratic system. Feature models
/// estimate the shared d x d block, others the full Hessian.
template <LinearDesign Design>
std::vector<double> estimate_error_trend(const Design& design, const SplitSpec& split, double lambda,
                                 const std::vector<double>& eps, std::uint64_t seed) {
  const SubsetLoss<Design> full(design, split.train_idx, lambda, LossKind::quadratic);
  const SubsetLoss<Design> retain(design, split.retain_idx, lambda, LossKind::quadratic);
  const SubsetLoss<Design> forget(design, split.forget_idx, lambda, LossKind::quadratic);
  const LinearModel w = train(full);
  const Eigen::Index p = design.num_params();
  EstimatorOptions opt;
  SymMatrix h_r;
  if constexpr (std::same_as<Design, FeatureDesign>) {
    opt.side = design.feature_dim();
    h_r = retain.hessian_block();
  } else {
    h_r = retain.hessian(w.w);
  }
  const Eigen::Index side = h_r.dim();
  const Eigen::Index m = detail::vech_size(side) + side;
  PerturbationSet set = sample_probes(p, m, 1.0, seed);
  set.forget_grad = forget.gradient(w.w);
  const Vector clean = loss_differences(retain, w.w, set.probes);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Vector corruption(m);
  for (Eigen::Index i = 0; i < m; ++i) corruption(i) = unif(rng);
  std::vector<double> errors;
  for (double e : eps) {
    set.loss_diffs = clean + e * corruption;
    errors.push_back(frobenius_norm(estimate_retain_hessian(set, opt).h_hat - h_r) / frobenius_norm(h_r));
  }
  return errors;
}

inline std::vector<CheckLine> run_verify(const Config& c) {
  std::vector<CheckLine> lines;
  auto add = [&](std::string name, bool pass, std::string detail) {
    lines.push_back({std::move(name), pass, std::move(detail)});
  };

  {  // Quartic identity
    std::mt19937_64 rng(c.u64("split_seed"));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto count = static_cast<int>(c.u64("verify_matrices"));
    const auto samples = static_cast<std::int64_t>(c.u64("verify_samples"));
    double worst = 0.0;
    for (int r = 0; r < count; ++r) {
      const Eigen::Index d = 1 + r % 10;
      Matrix a(d, d);
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) a(i, j) = normal(rng);
      const QuarticCheck q = verify_quartic_identity(SymMatrix(Matrix(0.5 * (a + a.transpose()))), samples, 1000 + r);
      worst = std::max(worst, std::abs(q.monte_carlo - q.closed_form) / q.std_error);
    }
    add("quartic_identity", worst <= 3.0, "max deviation " + detail::fmt(worst, 3) + " standard errors");
  }
  {  // Optimal M
    double worst = 0.0;
    for (double eps : {0.0, 0.5, 1.0, 3.0})
      for (Eigen::Index d : {1, 2, 4, 16}) {
        const Matrix m = verify_optimal_M(eps, d).dense();
        const Matrix expected = -(2.0 * eps / (2.0 + static_cast<double>(d))) * Matrix::Identity(d, d);
        worst = std::max(worst, (m - expected).cwiseAbs().maxCoeff());
      }
    add("optimal_M", worst <= 1e-6, "max entry error " + detail::fmt_g(worst));
  }

  // The rest run on the configured data.
  const Workspace ws = load_workspace(c);
  const PipelineConfig p = pipeline_config(c);
  ws.with_design([&](const auto& design) {
    {  // Quadratic exactness
      PipelineConfig q = p;
      q.loss = LossKind::quadratic;
      q.run_estimated = false;
      q.unlearn.sigma = 0.0;
      q.unlearn.tau = 0.0;
      if (q.lambda <= 0.0) q.lambda = 1e-3;
      const PipelineResult r = run_pipeline(design, ws.split, q);
      const double rel = (r.unlearned_exact->w - r.retrained.w).norm() / std::max(r.retrained.w.norm(), 1e-300);
      add("quadratic_exactness", rel <= 1e-8, "relative parameter error " + detail::fmt_g(rel));
    }
    Eigen::Index side = design.num_params();
    if constexpr (std::same_as<std::decay_t<decltype(design)>, FeatureDesign>) side = design.feature_dim();
    if (side <= 30) {
      const std::vector<double> eps{0.0, 0.1, 0.5, 1.0};
      const auto errs = estimate_error_trend(design, ws.split, std::max(p.lambda, 1e-3), eps, c.u64("estimator_seed"));
      bool ok = errs[0] <= 1e-6;
      for (std::size_t i = 1; i < errs.size(); ++i) ok = ok && errs[i] >= errs[i - 1];
      std::string d;
      for (double e : errs) d += (d.empty() ? "" : " ") + detail::fmt_g(e);
      add("estimate_error_trend", ok, "errors " + d);
    } else {
      add("estimate_error_trend", true, "skipped: Hessian side " + std::to_string(side) + " > 30");
    }
    {  // residual bound on the logistic pipeline
      PipelineConfig t = p;
      t.loss = LossKind::logistic;
      if (t.lambda <= 0.0) t.lambda = 1e-3;
      t.run_exact = false;
      t.run_baselines = false;
      const PipelineResult r = run_pipeline(design, ws.split, t);
      add("residual_bound", r.residual_bound->holds,
          "residual " + detail::fmt_g(r.residual_bound->residual) + " bound " + detail::fmt_g(r.residual_bound->bound_closed_form));
    }
    return 0;
  });
  return lines;
}

inline int cmd_verify(const Context& ctx) {
  const auto lines = run_verify(ctx.config);
  std::string text;
  bool ok = true;
  for (const auto& l : lines) {
    text += std::string(l.pass ? "PASS " : "FAIL ") + l.name + ": " + l.detail + "\n";
    ok = ok && l.pass;
  }
  write_text(ctx.out_dir / "verify.txt", text);
  *ctx.out << text;
  write_manifest(ctx, "verify");
  return ok ? 0 : 3;
}

inline int cmd_synth(const Context& ctx) {
  const Config& c = ctx.config;
  const std::uint64_t seed = c.u64("synth_seed");
  const std::string kind = c.str("synth_kind");
  if (kind == "features") {
    SyntheticSpec spec;
    spec.n = static_cast<Index>(c.u64("synth_n"));
    spec.d = static_cast<Index>(c.u64("synth_d"));
    spec.k = static_cast<Index>(c.u64("synth_k"));
    spec.separation = c.num("synth_separation");
    spec.decay = c.num("synth_decay");
    spec.label_noise = c.num("synth_label_noise");
    if (spec.n < 1 || spec.d < 1 || spec.k < 1) throw UsageError("synth_n, synth_d, synth_k must be >= 1");
    save_features(ctx.out_dir / "features.bin", make_synthetic_classification(spec, seed));
    *ctx.out << "wrote " << (ctx.out_dir / "features.bin").string() << "\n";
  } else if (kind == "linearized") {
    const auto n = static_cast<Index>(c.u64("synth_n"));
    const auto p = static_cast<Index>(c.u64("synth_p"));
    const auto k = static_cast<Index>(c.u64("synth_k"));
    if (n < 1 || p < 1 || k < 1) throw UsageError("synth_n, synth_p, synth_k must be >= 1");
    save_linearized(ctx.out_dir / "jacobians.bin", ctx.out_dir / "residuals.bin", make_synthetic_linearized(n, p, k, seed));
    *ctx.out << "wrote " << (ctx.out_dir / "jacobians.bin").string() << " and residuals.bin\n";
  } else {
    throw UsageError("unknown synth_kind \"" + kind + "\" (expected features|linearized)");
  }
  write_manifest(ctx, "synth");
  return 0;
}

// ---------------------------------------------------------------------------

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  return 1;
}

/// Entry point: returns the process exit code (0 ok, 1 usage, 2 data, 3 numeric).
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Source-free Newton unlearning for linear models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::string axis;
  std::string values;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train on the training split; writes model.bin"},
      {"retrain", "train on the retain split; writes retrained.bin"},
      {"estimate", "estimate the retain Hessian from the forget set; writes hessian.bin, estimate.txt"},
      {"unlearn", "Newton removal step; writes unlearned.bin, report.txt, report.csv"},
      {"sweep", "accuracy gap over a parameter axis; writes sweep_<axis>.csv"},
      {"verify", "closed-form self-checks; nonzero exit on failure"},
      {"synth", "write synthetic data files"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--set", overrides, "override a config key (key=value), repeatable");
    if (name == "sweep") {
      sub->add_option("--axis", axis, "forget_fraction | m | lambda");
      sub->add_option("--values", values, "comma separated values");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Context ctx;
    ctx.out = &out;
    ctx.err = &err;
    if (!config_path.empty()) ctx.config.merge_file(config_path);
    for (const auto& kv : overrides) ctx.config.apply_override(kv);
    if (!axis.empty()) ctx.config.set("sweep_axis", axis);
    if (!values.empty()) ctx.config.set("sweep_values", values);
    ctx.out_dir = out_dir;
    fs::create_directories(ctx.out_dir);

    if (command == "train") return cmd_train(ctx);
    if (command == "retrain") return cmd_retrain(ctx);
    if (command == "estimate") return cmd_estimate(ctx);
    if (command == "unlearn") return cmd_unlearn(ctx);
    if (command == "sweep") return cmd_sweep(ctx);
    if (command == "verify") return cmd_verify(ctx);
    return cmd_synth(ctx);
  } catch (const std::exception& e) {
    err << "sfmu " << command << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace sfmu::cli
