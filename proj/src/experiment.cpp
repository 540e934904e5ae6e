#include "ep/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "ep/metrics.hpp"
#include "ep/version.hpp"

namespace ep {

namespace {

constexpr std::uint64_t kStreamInstance = 1;
constexpr std::uint64_t kStreamPriorInit = 2;
constexpr std::uint64_t kStreamRecurrent = 0xEC;

double nan_mean(const std::vector<double>& xs) {
  double s = 0;
  int c = 0;
  for (double x : xs)
    if (std::isfinite(x)) {
      s += x;
      ++c;
    }
  return c > 0 ? s / c : std::numeric_limits<double>::quiet_NaN();
}

double nan_se(const std::vector<double>& xs) {
  const double m = nan_mean(xs);
  double s2 = 0;
  int c = 0;
  for (double x : xs)
    if (std::isfinite(x)) {
      s2 += (x - m) * (x - m);
      ++c;
    }
  if (c < 2) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(s2 / (c - 1) / c);
}

nlohmann::json stats_json(const std::vector<double>& xs) {
  return {{"mean", nan_mean(xs)}, {"se", nan_se(xs)}, {"count", xs.size()}};
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected boolean, got '" + v + "'");
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
  }
}

long parse_long(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
  }
}

EnsembleKind parse_ensemble(const std::string& v) {
  if (v == "iid") return EnsembleKind::kIid;
  if (v == "mvn") return EnsembleKind::kMvn;
  if (v == "recurrent") return EnsembleKind::kRecurrent;
  throw ConfigError("ensemble must be iid | mvn | recurrent, got '" + v + "'");
}

RecurrentUpdate parse_update(const std::string& v) {
  if (v == "sync") return RecurrentUpdate::kSync;
  if (v == "full-sweep") return RecurrentUpdate::kFullSweep;
  if (v == "hamming") return RecurrentUpdate::kHamming;
  throw ConfigError("update must be sync | full-sweep | hamming, got '" + v + "'");
}

std::string ensemble_name(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::kIid: return "iid";
    case EnsembleKind::kMvn: return "mvn";
    default: return "recurrent";
  }
}

std::string update_name(RecurrentUpdate u) {
  switch (u) {
    case RecurrentUpdate::kSync: return "sync";
    case RecurrentUpdate::kFullSweep: return "full-sweep";
    default: return "hamming";
  }
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "name") cfg.name = value;
  else if (key == "preset") cfg = preset(value);  // keys after this line override
  else if (key == "n") cfg.n = static_cast<int>(parse_long(value, key));
  else if (key == "rho") cfg.rho = parse_double(value, key);
  else if (key == "lambda") cfg.lambda = parse_double(value, key);
  else if (key == "slab_std") {
    if (value == "linked") {
      cfg.slab_linked = true;
    } else {
      cfg.slab_linked = false;
      cfg.slab_std = parse_double(value, key);
    }
  } else if (key == "eta_true") cfg.eta_true = parse_double(value, key);
  else if (key == "rho_learn" || key == "learn_rho") cfg.rho_learn = parse_bool(value, key);
  else if (key == "eta_learn" || key == "learn_eta") cfg.eta_learn = parse_bool(value, key);
  else if (key == "alphas") {
    cfg.alphas.clear();
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) cfg.alphas.push_back(parse_double(tok, key));
    }
    if (cfg.alphas.empty()) throw ConfigError("alphas: empty list");
  } else if (key == "ensemble") cfg.ensemble = parse_ensemble(value);
  else if (key == "u") cfg.u = static_cast<int>(parse_long(value, key));
  else if (key == "update") cfg.update = parse_update(value);
  else if (key == "d_hamming") cfg.d_hamming = static_cast<int>(parse_long(value, key));
  else if (key == "n_trials") cfg.n_trials = static_cast<int>(parse_long(value, key));
  else if (key == "damping") cfg.ep.damping = parse_double(value, key);
  else if (key == "eps_stop") cfg.ep.eps_stop = parse_double(value, key);
  else if (key == "max_iter") cfg.ep.max_iter = static_cast<int>(parse_long(value, key));
  else if (key == "d_max") cfg.ep.d_max = parse_double(value, key);
  else if (key == "var_floor") cfg.ep.var_floor = parse_double(value, key);
  else if (key == "init_d") cfg.ep.init_d = parse_double(value, key);
  else if (key == "lr_rho") cfg.lr_rho = parse_double(value, key);
  else if (key == "lr_eta") cfg.lr_eta = parse_double(value, key);
  else if (key == "root_seed") cfg.root_seed = static_cast<std::uint64_t>(parse_long(value, key));
  else if (key == "score_mode") {
    if (value != "abs" && value != "pnz" && value != "both")
      throw ConfigError("score_mode must be abs | pnz | both");
    cfg.score_mode = value;
  } else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "workers") cfg.workers = static_cast<int>(parse_long(value, key));
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (n < 1) throw ConfigError("n must be >= 1");
  if (!(rho > 0) || rho > 1) throw ConfigError("rho must lie in (0, 1]");
  if (!(lambda > 0)) throw ConfigError("lambda must be positive");
  if (!(eta_true > 0.5) || eta_true > 1.0)
    throw ConfigError("eta_true must lie in (0.5, 1]");
  if (alphas.empty()) throw ConfigError("alphas must be nonempty");
  for (double a : alphas)
    if (!(a > 0)) throw ConfigError("alphas must be positive");
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (ensemble == EnsembleKind::kRecurrent && n_trials > n)
    throw ConfigError("recurrent ensembles train one perceptron per trial: n_trials <= n");
  ep.validate();
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig cfg;
  cfg.name = name;
  cfg.n = 128;
  cfg.rho = 0.25;
  cfg.alphas = {0.5, 1, 1.5, 2, 2.5, 3, 4, 5, 6};
  cfg.n_trials = 100;
  if (name == "iid-noiseless") {
    cfg.ensemble = EnsembleKind::kIid;
    cfg.lambda = 1.0;
    cfg.ep.damping = 0.9995;
    cfg.ep.eps_stop = 1e-4;
  } else if (name == "mvn-noiseless") {
    cfg.ensemble = EnsembleKind::kMvn;
    cfg.u = 1;
    cfg.lambda = 1.0;
    cfg.ep.damping = 0.999;
    cfg.ep.eps_stop = 1e-4;
  } else if (name == "iid-noisy-95") {
    cfg.ensemble = EnsembleKind::kIid;
    cfg.eta_true = 0.95;
    cfg.lambda = 1e4;
    cfg.ep.damping = 0.99;
    cfg.ep.eps_stop = 1e-6;
  } else if (name == "mvn-noisy-90") {
    cfg.ensemble = EnsembleKind::kMvn;
    cfg.u = 1;
    cfg.eta_true = 0.90;
    cfg.lambda = 1e4;
    cfg.ep.damping = 0.99;
    cfg.ep.eps_stop = 1e-6;
  } else if (name == "recnet-sync") {
    cfg.ensemble = EnsembleKind::kRecurrent;
    cfg.update = RecurrentUpdate::kSync;
    cfg.lambda = 1.0;
    cfg.ep.damping = 0.999;
    cfg.ep.eps_stop = 1e-4;
    cfg.n_trials = 128;
  } else if (name == "recnet-hamming10") {
    cfg.ensemble = EnsembleKind::kRecurrent;
    cfg.update = RecurrentUpdate::kHamming;
    cfg.d_hamming = 10;
    cfg.lambda = 1.0;
    cfg.ep.damping = 0.999;
    cfg.ep.eps_stop = 1e-4;
    cfg.n_trials = 128;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  cfg.ep.max_iter = 50000;
  return cfg;
}

std::vector<std::string> preset_names() {
  return {"iid-noiseless", "mvn-noiseless",  "iid-noisy-95",
          "mvn-noisy-90",  "recnet-sync",    "recnet-hamming10"};
}

ExperimentConfig parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  ExperimentConfig cfg;
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("JSON config parse error: ") + e.what());
    }
    if (j.contains("preset")) cfg = preset(j.at("preset").get<std::string>());
    for (const auto& [key, value] : j.items()) {
      if (key == "preset") continue;
      if (value.is_string()) apply_key(cfg, key, value.get<std::string>());
      else if (value.is_boolean()) apply_key(cfg, key, value.get<bool>() ? "true" : "false");
      else if (value.is_array()) {
        std::string joined;
        for (const auto& e : value) joined += (joined.empty() ? "" : ",") + e.dump();
        apply_key(cfg, key, joined);
      } else apply_key(cfg, key, value.dump());
    }
  } else {
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      try {
        apply_key(cfg, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

RecurrentShared make_recurrent_shared(const ExperimentConfig& cfg, int alpha_index) {
  const int m_max = static_cast<int>(std::lround(cfg.alphas[static_cast<std::size_t>(
                                         alpha_index)] * cfg.n));
  Rng rng(mix_seed(cfg.root_seed, static_cast<std::uint64_t>(alpha_index), kStreamRecurrent));
  RecurrentShared shared;
  shared.net = sample_recurrent_net(cfg.n, cfg.rho, cfg.effective_slab_std(), rng);
  PatternEnsemble ens;
  ens.kind = EnsembleKind::kRecurrent;
  ens.m = m_max;
  ens.update = cfg.update;
  ens.d_hamming = cfg.d_hamming;
  shared.patterns = gen_patterns_recurrent(shared.net, ens, rng);
  return shared;
}

Instance make_instance(const ExperimentConfig& cfg, int alpha_index, int trial,
                       const RecurrentShared* shared) {
  const double alpha = cfg.alphas[static_cast<std::size_t>(alpha_index)];
  const int m = static_cast<int>(std::lround(alpha * cfg.n));
  const std::uint64_t trial_seed =
      mix_seed(cfg.root_seed, static_cast<std::uint64_t>(alpha_index),
               static_cast<std::uint64_t>(trial));
  Rng rng(mix_seed(trial_seed, kStreamInstance));

  Instance inst;
  inst.seed = trial_seed;
  inst.rho = cfg.rho;
  inst.slab_std = cfg.effective_slab_std();
  inst.eta_true = cfg.eta_true;
  inst.ensemble = ensemble_name(cfg.ensemble);
  inst.u = cfg.u;
  inst.update = update_name(cfg.update);
  inst.d_hamming = cfg.ensemble == EnsembleKind::kRecurrent &&
                           cfg.update == RecurrentUpdate::kHamming
                       ? cfg.d_hamming
                       : 0;

  if (cfg.ensemble == EnsembleKind::kRecurrent) {
    if (!shared) throw std::invalid_argument("recurrent instances need the shared trajectory");
    const PerceptronView view = perceptron_view(shared->net, shared->patterns, trial);
    inst.n = cfg.n - 1;
    inst.m = m;
    inst.perceptron = trial;
    inst.teacher = view.teacher;
    inst.patterns = view.patterns.topRows(m);
  } else {
    inst.n = cfg.n;
    inst.m = m;
    inst.teacher = sample_teacher({cfg.n, cfg.rho, inst.slab_std}, rng);
    inst.patterns = cfg.ensemble == EnsembleKind::kIid
                        ? gen_patterns_iid(m, cfg.n, rng)
                        : gen_patterns_mvn(m, cfg.n, cfg.u, rng);
  }

  auto [sigma, design] = label(inst.patterns, inst.teacher);
  (void)design;
  inst.labels_clean = sigma;
  inst.labels = sigma;
  if (cfg.eta_true < 1.0) {
    inst.flipped = flip_labels(inst.labels, LabelNoiseSpec{cfg.eta_true}, rng);
  }
  return inst;
}

ExperimentRecord run_trial(const Instance& inst, const ExperimentConfig& cfg) {
  ExperimentRecord rec;
  rec.trial = inst.perceptron >= 0 ? inst.perceptron : -1;
  rec.seed = inst.seed;
  rec.alpha = static_cast<double>(inst.m) / cfg.n;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Rng prior_rng(mix_seed(inst.seed, kStreamPriorInit));
    const double rho0 = cfg.rho_learn ? prior_rng.uniform(0.05, 0.95) : cfg.rho;
    const bool mixture = cfg.eta_true < 1.0 || cfg.eta_learn;
    const double eta0 = cfg.eta_learn ? prior_rng.uniform(0.5, 1.0) : cfg.eta_true;

    SitePriorSpec<double> example_prior =
        mixture ? SitePriorSpec<double>{ThetaMixtureParams<double>{eta0}}
                : SitePriorSpec<double>{ThetaParams{}};
    auto priors = make_site_priors<double>(inst.n, inst.m, {rho0, cfg.lambda}, example_prior);

    RunOptions<double> opts;
    opts.learn_rho = cfg.rho_learn;
    opts.learn_eta = cfg.eta_learn;
    opts.lr_rho = cfg.lr_rho;
    opts.lr_eta = cfg.lr_eta;

    const DesignMatrix<double> x = inst.design();
    const EPResult<double> res = ep_run(x, priors, cfg.ep, opts);

    rec.converged = res.converged;
    rec.iterations = res.iterations;
    rec.eps_final = res.eps_final;
    rec.rho_learned = res.rho_final;
    rec.eta_learned = res.eta_final;

    const Eigen::VectorXd w = res.weight_mean();
    if (w.cwiseAbs().maxCoeff() > 0 && inst.teacher.cwiseAbs().maxCoeff() > 0)
      rec.mse_db = normalized_mse_db<double>(w, inst.teacher);

    std::vector<bool> truth(static_cast<std::size_t>(inst.n));
    bool any_pos = false, any_neg = false;
    for (int i = 0; i < inst.n; ++i) {
      truth[static_cast<std::size_t>(i)] = inst.teacher[i] != 0;
      (truth[static_cast<std::size_t>(i)] ? any_pos : any_neg) = true;
    }
    if (any_pos && any_neg) {
      rec.auc_abs = roc_and_auc(w.cwiseAbs(), truth).auc;
      const double rho_score = cfg.rho_learn ? res.rho_final : rho0;
      Eigen::VectorXd pscore(inst.n);
      for (int i = 0; i < inst.n; ++i)
        pscore[i] = p_nonzero(res.cav_mean[i], res.cav_var[i], rho_score, cfg.lambda);
      rec.auc_pnz = roc_and_auc(pscore, truth).auc;
    }
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  rec.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const int n_alpha = static_cast<int>(cfg.alphas.size());
  const int total = n_alpha * cfg.n_trials;

  std::vector<RecurrentShared> shared;
  if (cfg.ensemble == EnsembleKind::kRecurrent) {
    shared.reserve(static_cast<std::size_t>(n_alpha));
    for (int ai = 0; ai < n_alpha; ++ai) shared.push_back(make_recurrent_shared(cfg, ai));
  }

  int workers = cfg.workers;
  if (workers <= 0) {
    if (const char* env = std::getenv("SPARSE_EP_WORKERS")) workers = std::atoi(env);
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers <= 0) workers = 1;
  }
  workers = std::min(workers, total);

  std::vector<ExperimentRecord> records(static_cast<std::size_t>(total));
  std::atomic<int> next{0};
  auto worker_fn = [&] {
    for (int task = next.fetch_add(1); task < total; task = next.fetch_add(1)) {
      const int ai = task / cfg.n_trials;
      const int trial = task % cfg.n_trials;
      const Instance inst = make_instance(
          cfg, ai, trial, cfg.ensemble == EnsembleKind::kRecurrent ? &shared[ai] : nullptr);
      ExperimentRecord rec = run_trial(inst, cfg);
      rec.alpha = cfg.alphas[static_cast<std::size_t>(ai)];
      rec.trial = trial;
      records[static_cast<std::size_t>(task)] = std::move(rec);
    }
  };
  if (workers == 1) {
    worker_fn();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker_fn);
    for (auto& th : pool) th.join();
  }

  ExperimentOutput out;
  out.records = std::move(records);

  nlohmann::json per_alpha = nlohmann::json::array();
  for (int ai = 0; ai < n_alpha; ++ai) {
    std::vector<const ExperimentRecord*> rows;
    for (int t = 0; t < cfg.n_trials; ++t)
      rows.push_back(&out.records[static_cast<std::size_t>(ai * cfg.n_trials + t)]);
    const long n_conv = std::count_if(rows.begin(), rows.end(),
                                      [](const ExperimentRecord* r) { return r->converged; });
    auto collect = [&](auto getter, bool converged_only) {
      std::vector<double> xs;
      for (const auto* r : rows)
        if (!converged_only || r->converged) xs.push_back(getter(*r));
      return xs;
    };
    auto block = [&](bool conv_only) {
      nlohmann::json b;
      b["mse_db"] = stats_json(collect([](const auto& r) { return r.mse_db; }, conv_only));
      b["auc_abs"] = stats_json(collect([](const auto& r) { return r.auc_abs; }, conv_only));
      b["auc_pnz"] = stats_json(collect([](const auto& r) { return r.auc_pnz; }, conv_only));
      b["rho_learned"] =
          stats_json(collect([](const auto& r) { return r.rho_learned; }, conv_only));
      b["eta_learned"] =
          stats_json(collect([](const auto& r) { return r.eta_learned; }, conv_only));
      b["iterations"] = stats_json(
          collect([](const auto& r) { return static_cast<double>(r.iterations); }, conv_only));
      return b;
    };
    per_alpha.push_back({{"alpha", cfg.alphas[static_cast<std::size_t>(ai)]},
                         {"n_trials", cfg.n_trials},
                         {"n_converged", n_conv},
                         {"conv_fraction", static_cast<double>(n_conv) / cfg.n_trials},
                         {"converged_stats", block(true)},
                         {"all_stats", block(false)}});
  }

  out.aggregate = {{"format", "sparse-ep-aggregate/1"},
                   {"name", cfg.name},
                   {"git_hash", kGitHash},
                   {"root_seed", cfg.root_seed},
                   {"bayes_linked", cfg.bayes_linked()},
                   {"config",
                    {{"n", cfg.n},
                     {"rho", cfg.rho},
                     {"lambda", cfg.lambda},
                     {"slab_std", cfg.effective_slab_std()},
                     {"eta_true", cfg.eta_true},
                     {"rho_learn", cfg.rho_learn},
                     {"eta_learn", cfg.eta_learn},
                     {"ensemble", ensemble_name(cfg.ensemble)},
                     {"u", cfg.u},
                     {"update", update_name(cfg.update)},
                     {"d_hamming", cfg.d_hamming},
                     {"alphas", cfg.alphas},
                     {"n_trials", cfg.n_trials},
                     {"damping", cfg.ep.damping},
                     {"eps_stop", cfg.ep.eps_stop},
                     {"max_iter", cfg.ep.max_iter},
                     {"init_d", cfg.ep.init_d},
                     {"lr_rho", cfg.lr_rho},
                     {"lr_eta", cfg.lr_eta},
                     {"score_mode", cfg.score_mode}}},
                   {"per_alpha", per_alpha}};
  return out;
}

namespace {

void write_double(std::ostream& os, double x) {
  if (std::isnan(x)) {
    os << "nan";
    return;
  }
  char buf[32];
  const auto res = std::snprintf(buf, sizeof buf, "%.17g", x);
  os.write(buf, res);
}

}  // namespace

void write_records_csv(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  os << "alpha,trial,seed,converged,iterations,eps_final,mse_db,auc_abs,auc_pnz,"
        "rho_learned,eta_learned,error\n";
  for (const auto& r : records) {
    write_double(os, r.alpha);
    os << "," << r.trial << "," << r.seed << "," << (r.converged ? 1 : 0) << "," << r.iterations
       << ",";
    write_double(os, r.eps_final);
    os << ",";
    write_double(os, r.mse_db);
    os << ",";
    write_double(os, r.auc_abs);
    os << ",";
    write_double(os, r.auc_pnz);
    os << ",";
    write_double(os, r.rho_learned);
    os << ",";
    write_double(os, r.eta_learned);
    std::string err = r.error;
    for (char& c : err)
      if (c == ',' || c == '\n' || c == '\r') c = ';';
    os << "," << err << "\n";
  }
}

void write_timing_csv(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  os << "alpha,trial,wall_time_s\n";
  for (const auto& r : records) {
    write_double(os, r.alpha);
    os << "," << r.trial << ",";
    write_double(os, r.wall_time_s);
    os << "\n";
  }
}

ExperimentOutput run_and_persist(const ExperimentConfig& cfg) {
  ExperimentOutput out = run_experiment(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  const auto base = std::filesystem::path(cfg.out_dir);
  {
    std::ofstream os(base / "records.csv");
    write_records_csv(os, out.records);
  }
  {
    std::ofstream os(base / "timing.csv");
    write_timing_csv(os, out.records);
  }
  write_json_file((base / "aggregate.json").string(), out.aggregate);
  return out;
}

}  // namespace ep
