// Command-line front end: instance generation, single-instance training and
// evaluation, batch experiments, and the numerical self-checks.
//
// Exit codes: 0 success, 1 usage error, 2 numerical failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ep/experiment.hpp"
#include "ep/free_energy.hpp"
#include "ep/metrics.hpp"
#include "ep/oracle.hpp"
#include "ep/version.hpp"

namespace {

using namespace ep;

int cmd_gen(const std::string& out_path, ExperimentConfig cfg, double alpha, int trial) {
  cfg.alphas = {alpha};
  cfg.validate();
  std::optional<RecurrentShared> shared;
  if (cfg.ensemble == EnsembleKind::kRecurrent) shared = make_recurrent_shared(cfg, 0);
  const Instance inst = make_instance(cfg, 0, trial, shared ? &*shared : nullptr);
  write_json_file(out_path, instance_to_json(inst));
  std::cout << "wrote " << out_path << " (n=" << inst.n << ", m=" << inst.m
            << ", seed=" << inst.seed << ")\n";
  return 0;
}

int cmd_train(const std::string& inst_path, const std::string& out_path,
              const EPConfig<double>& ep_cfg, double rho, double lambda,
              std::optional<double> eta, bool learn_rho, bool learn_eta, double lr_rho,
              double lr_eta, std::uint64_t init_seed, const std::string& trace_path,
              bool trace_free_energy) {
  const Instance inst = instance_from_json(read_json_file(inst_path));
  Rng prior_rng(mix_seed(init_seed, 2));
  const double rho0 = learn_rho ? prior_rng.uniform(0.05, 0.95) : rho;
  const bool mixture = eta.has_value() || learn_eta;
  const double eta0 = learn_eta ? prior_rng.uniform(0.5, 1.0) : eta.value_or(1.0);

  SitePriorSpec<double> example_prior = mixture
                                            ? SitePriorSpec<double>{ThetaMixtureParams<double>{eta0}}
                                            : SitePriorSpec<double>{ThetaParams{}};
  auto priors = make_site_priors<double>(inst.n, inst.m, {rho0, lambda}, example_prior);

  RunOptions<double> opts;
  opts.learn_rho = learn_rho;
  opts.learn_eta = learn_eta;
  opts.lr_rho = lr_rho;
  opts.lr_eta = lr_eta;
  std::ofstream trace;
  if (!trace_path.empty()) {
    trace.open(trace_path);
    trace << "iteration,eps,clamp_cavity,clamp_site,free_energy,rho,eta\n";
    opts.trace_free_energy = trace_free_energy;
    opts.on_iteration = [&](const IterDiag& d) {
      trace << d.iteration << "," << d.eps << "," << d.clamp_cavity << "," << d.clamp_site << ","
            << d.free_energy << "," << d.rho << "," << d.eta << "\n";
    };
  }

  ResultFile rf;
  rf.result = ep_run(inst.design(), priors, ep_cfg, opts);
  rf.rho_prior = rho0;
  rf.lambda = lambda;
  if (mixture) rf.eta_prior = eta0;
  rf.learned_rho = learn_rho;
  rf.learned_eta = learn_eta;
  rf.config = ep_cfg;
  write_json_file(out_path, result_to_json(rf));
  std::cout << (rf.result.converged ? "converged" : "NOT converged") << " after "
            << rf.result.iterations << " iterations (eps " << rf.result.eps_final << ")\n";
  return 0;
}

int cmd_eval(const std::string& inst_path, const std::string& result_path,
             const std::string& out_path, const std::string& roc_csv,
             const std::string& sens_csv) {
  const Instance inst = instance_from_json(read_json_file(inst_path));
  const ResultFile rf = result_from_json(read_json_file(result_path));
  if (rf.result.n != inst.n) throw std::invalid_argument("instance/result dimension mismatch");

  const Eigen::VectorXd w = rf.result.weight_mean();
  std::vector<bool> truth(static_cast<std::size_t>(inst.n));
  for (int i = 0; i < inst.n; ++i) truth[static_cast<std::size_t>(i)] = inst.teacher[i] != 0;

  nlohmann::json j;
  j["format"] = "sparse-ep-eval/1";
  j["converged"] = rf.result.converged;
  j["mse_db"] = normalized_mse_db<double>(w, inst.teacher);
  const double rho_score = rf.learned_rho ? rf.result.rho_final : rf.rho_prior;
  Eigen::VectorXd pscore(inst.n);
  for (int i = 0; i < inst.n; ++i)
    pscore[i] = p_nonzero(rf.result.cav_mean[i], rf.result.cav_var[i], rho_score, rf.lambda);
  const RocCurve roc_abs = roc_and_auc(w.cwiseAbs(), truth);
  const RocCurve roc_pnz = roc_and_auc(pscore, truth);
  j["auc_abs"] = roc_abs.auc;
  j["auc_pnz"] = roc_pnz.auc;
  if (rf.learned_rho) j["rho_learned"] = rf.result.rho_final;
  if (rf.learned_eta) j["eta_learned"] = rf.result.eta_final;

  if (!roc_csv.empty()) {
    std::ofstream os(roc_csv);
    write_roc_csv(os, roc_abs, "score=abs_weight seed=" + std::to_string(inst.seed));
  }
  if (!sens_csv.empty()) {
    std::ofstream os(sens_csv);
    write_sensitivity_csv(os, sensitivity_curve(w.cwiseAbs(), truth),
                          "score=abs_weight seed=" + std::to_string(inst.seed));
  }
  if (!out_path.empty()) {
    write_json_file(out_path, j);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_oracle_check() {
  int failures = 0;
  auto check = [&](const std::string& name, bool ok) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
    if (!ok) ++failures;
  };

  // Closed-form tilted moments against the quadrature oracle.
  {
    double worst = 0;
    int points = 0;
    for (double mu : {-8.0, -2.0, -0.3, 0.0, 0.5, 3.0, 8.0})
      for (double sigma : {1e-3, 0.1, 1.0, 10.0, 1e3}) {
        const CavityParams<double> cav{mu, sigma};
        for (double rho : {0.1, 0.5, 1.0})
          for (double lambda : {0.01, 1.0, 1e4}) {
            const SitePriorSpec<double> p{SpikeSlabParams<double>{rho, lambda}};
            const auto a = tilted_moments(p, cav);
            const auto b = oracle::quad_moments(p, cav);
            worst = std::max(worst, std::abs(a.mean - b.mean) /
                                        std::max(1e-10, std::abs(b.mean)));
            ++points;
          }
        const SitePriorSpec<double> theta{ThetaParams{}};
        const auto a = tilted_moments(theta, cav);
        const auto b = oracle::quad_moments(theta, cav);
        worst = std::max(worst, std::abs(a.mean - b.mean) / std::max(1e-10, std::abs(b.mean)));
        for (double eta : {0.8, 0.95}) {
          const SitePriorSpec<double> mix{ThetaMixtureParams<double>{eta}};
          const auto am = tilted_moments(mix, cav);
          const auto bm = oracle::quad_moments(mix, cav);
          worst = std::max(worst, std::abs(am.mean - bm.mean) / std::max(1e-10, std::abs(bm.mean)));
        }
        points += 3;
      }
    std::cout << "moment kernels: " << points << " points, worst relative mean error " << worst
              << "\n";
    check("tilted moments vs quadrature (rel err < 1e-8)", worst < 1e-8);
  }

  // Importance sampler on a closed-form case: half-normal posterior.
  {
    Eigen::MatrixXd xs(1, 1);
    xs << 1.0;
    const auto mc = oracle::mc_posterior(xs, {1.0, 1.0}, SitePriorSpec<double>{ThetaParams{}},
                                         400000, 42);
    const double expect = std::sqrt(2.0 / M_PI);
    check("importance sampler half-normal mean within 4 SE",
          std::abs(mc.mean[0] - expect) < 4 * mc.std_error[0]);
  }

  // Finite differences on a quadratic.
  {
    const auto grad = oracle::fd_gradient(
        [](const Eigen::VectorXd& v) { return v.squaredNorm(); },
        Eigen::Vector2d(3.0, -1.0), 1e-5);
    check("finite differences on |x|^2", std::abs(grad[0] - 6.0) < 1e-8 &&
                                             std::abs(grad[1] + 2.0) < 1e-8);
  }

  if (failures > 0) {
    std::cout << failures << " oracle check(s) failed\n";
    return 2;
  }
  std::cout << "all oracle checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expectation propagation for diluted perceptron learning from sign labels"};
  app.set_version_flag("--version", std::string(ep::kVersion) + " (" + ep::kGitHash + ")");
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "Generate a problem instance file");
  std::string gen_out = "instance.json";
  double gen_alpha = 2.0;
  int gen_trial = 0;
  ExperimentConfig gen_cfg;
  std::string gen_ensemble = "iid", gen_update = "sync";
  gen->add_option("--out", gen_out, "Output instance file");
  gen->add_option("--n", gen_cfg.n, "Weight count N");
  gen->add_option("--alpha", gen_alpha, "Pattern ratio M/N");
  gen->add_option("--rho", gen_cfg.rho, "Teacher density");
  gen->add_option("--lambda", gen_cfg.lambda, "Slab precision (teacher std linked)");
  auto* gslab = gen->add_option("--slab-std", gen_cfg.slab_std, "Teacher slab std (unlinks lambda)");
  gen->add_option("--eta", gen_cfg.eta_true, "Fraction of unflipped labels");
  gen->add_option("--ensemble", gen_ensemble, "iid | mvn | recurrent");
  gen->add_option("--u", gen_cfg.u, "MVN rank parameter");
  gen->add_option("--update", gen_update, "recurrent update: sync | full-sweep | hamming");
  gen->add_option("--dh", gen_cfg.d_hamming, "Hamming distance between stored patterns");
  gen->add_option("--perceptron", gen_trial, "Recurrent: which perceptron to train");
  gen->add_option("--seed", gen_cfg.root_seed, "Root seed");

  // ---- train ----
  auto* train = app.add_subcommand("train", "Run EP on an instance file");
  std::string train_inst, train_out = "result.json", train_trace;
  EPConfig<double> train_ep;
  double train_rho = 0.25, train_lambda = 1.0;
  double train_eta_val = -1;
  bool train_learn_rho = false, train_learn_eta = false, train_trace_f = false;
  double train_lr_rho = 1e-5, train_lr_eta = 1e-5;
  std::uint64_t train_seed = 1;
  train->add_option("--instance", train_inst, "Instance file")->required();
  train->add_option("--out", train_out, "Output result file");
  train->add_option("--damping", train_ep.damping, "Damping factor");
  train->add_option("--eps-stop", train_ep.eps_stop, "Convergence threshold");
  train->add_option("--max-iter", train_ep.max_iter, "Iteration cap");
  train->add_option("--init-d", train_ep.init_d, "Initial site variance");
  train->add_option("--rho", train_rho, "Prior density");
  train->add_option("--lambda", train_lambda, "Slab precision");
  auto* topt = train->add_option("--eta", train_eta_val, "Mixture pseudoprior eta");
  train->add_flag("--learn-rho", train_learn_rho, "Learn rho online");
  train->add_flag("--learn-eta", train_learn_eta, "Learn eta online");
  train->add_option("--lr-rho", train_lr_rho, "Learning rate for rho");
  train->add_option("--lr-eta", train_lr_eta, "Learning rate for eta");
  train->add_option("--seed", train_seed, "Seed for prior initialization draws");
  train->add_option("--trace", train_trace, "Per-iteration diagnostics CSV");
  train->add_flag("--trace-free-energy", train_trace_f, "Include free energy in the trace");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Compute metrics from instance + result");
  std::string eval_inst, eval_res, eval_out, eval_roc, eval_sens;
  eval->add_option("--instance", eval_inst, "Instance file")->required();
  eval->add_option("--result", eval_res, "Result file")->required();
  eval->add_option("--out", eval_out, "Metrics JSON output");
  eval->add_option("--roc-csv", eval_roc, "ROC curve CSV output");
  eval->add_option("--sens-csv", eval_sens, "Sensitivity curve CSV output");

  // ---- exp ----
  auto* exp = app.add_subcommand("exp", "Run a batch experiment from a config");
  std::string exp_config, exp_preset, exp_out;
  std::uint64_t exp_seed = 0;
  bool exp_seed_set = false;
  exp->add_option("--config", exp_config, "Config file (key=value or JSON)");
  exp->add_option("--preset", exp_preset,
                  "Preset name: iid-noiseless mvn-noiseless iid-noisy-95 mvn-noisy-90 "
                  "recnet-sync recnet-hamming10");
  exp->add_option("--out", exp_out, "Output directory");
  exp->add_option_function<std::uint64_t>(
         "--seed", [&](const std::uint64_t& v) { exp_seed = v; exp_seed_set = true; },
         "Root seed override");

  // ---- oracle-check ----
  app.add_subcommand("oracle-check", "Run the numerical oracle self-checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      gen_cfg.ensemble = gen_ensemble == "iid"       ? EnsembleKind::kIid
                         : gen_ensemble == "mvn"     ? EnsembleKind::kMvn
                         : gen_ensemble == "recurrent"
                             ? EnsembleKind::kRecurrent
                             : throw ConfigError("ensemble must be iid | mvn | recurrent");
      gen_cfg.update = gen_update == "sync"         ? RecurrentUpdate::kSync
                       : gen_update == "full-sweep" ? RecurrentUpdate::kFullSweep
                       : gen_update == "hamming"
                           ? RecurrentUpdate::kHamming
                           : throw ConfigError("update must be sync | full-sweep | hamming");
      if (gslab->count() > 0) gen_cfg.slab_linked = false;
      if (gen_cfg.ensemble == EnsembleKind::kRecurrent) gen_cfg.n_trials = gen_cfg.n;
      return cmd_gen(gen_out, gen_cfg, gen_alpha, gen_trial);
    }
    if (train->parsed()) {
      std::optional<double> eta;
      if (topt->count() > 0) eta = train_eta_val;
      return cmd_train(train_inst, train_out, train_ep, train_rho, train_lambda, eta,
                       train_learn_rho, train_learn_eta, train_lr_rho, train_lr_eta, train_seed,
                       train_trace, train_trace_f);
    }
    if (eval->parsed()) return cmd_eval(eval_inst, eval_res, eval_out, eval_roc, eval_sens);
    if (exp->parsed()) {
      ExperimentConfig cfg;
      if (!exp_preset.empty() && !exp_config.empty())
        throw ConfigError("give either --preset or --config, not both");
      if (!exp_preset.empty()) cfg = preset(exp_preset);
      else if (!exp_config.empty()) cfg = load_config_file(exp_config);
      else throw ConfigError("exp needs --preset or --config");
      if (exp_seed_set) cfg.root_seed = exp_seed;
      if (!exp_out.empty()) cfg.out_dir = exp_out;
      const auto out = run_and_persist(cfg);
      std::cout << out.aggregate.dump(2) << "\n";
      return 0;
    }
    return cmd_oracle_check();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "usage error: malformed file: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
