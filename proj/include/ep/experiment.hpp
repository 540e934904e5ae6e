#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ep/datagen.hpp"
#include "ep/ep_core.hpp"
#include "ep/instance_io.hpp"

// Batch experiment runner: configuration (flat key=value files or JSON),
// deterministic per-trial seeding, optional trial-level parallelism, and
// aggregation with standard errors computed both over converged trials and
// over all trials.

namespace ep {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string name = "experiment";
  int n = 128;
  double rho = 0.25;
  double lambda = 1.0;
  double slab_std = 1.0;
  bool slab_linked = true;  // slab_std follows 1/sqrt(lambda)
  double eta_true = 1.0;    // 1 = noiseless
  bool rho_learn = false;
  bool eta_learn = false;
  std::vector<double> alphas{6.0};
  EnsembleKind ensemble = EnsembleKind::kIid;
  int u = 1;
  RecurrentUpdate update = RecurrentUpdate::kSync;
  int d_hamming = 10;
  int n_trials = 30;
  EPConfig<double> ep;
  double lr_rho = 1e-5;
  double lr_eta = 1e-5;
  std::uint64_t root_seed = 1;
  std::string score_mode = "both";  // abs | pnz | both (records always carry both)
  std::string out_dir = ".";
  int workers = 0;  // 0: SPARSE_EP_WORKERS env var, then hardware

  double effective_slab_std() const { return slab_linked ? 1.0 / std::sqrt(lambda) : slab_std; }
  bool bayes_linked() const {
    const double s = effective_slab_std();
    return std::abs(lambda * s * s - 1.0) < 1e-9;
  }
  void validate() const;
};

struct ExperimentRecord {
  double alpha = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  bool converged = false;
  int iterations = 0;
  double eps_final = 0;
  double mse_db = std::numeric_limits<double>::quiet_NaN();
  double auc_abs = std::numeric_limits<double>::quiet_NaN();
  double auc_pnz = std::numeric_limits<double>::quiet_NaN();
  double rho_learned = std::numeric_limits<double>::quiet_NaN();
  double eta_learned = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0;  // kept out of the deterministic record CSV
  std::string error;       // nonempty if the trial failed
};

struct ExperimentOutput {
  std::vector<ExperimentRecord> records;  // ordered by (alpha index, trial)
  nlohmann::json aggregate;
};

/// Named parameter presets for the standard experiment families.
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Flat key=value text or JSON, detected by the first non-space byte.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

/// Deterministic per-trial instance generation. Recurrent ensembles share
/// one network and trajectory per alpha; `trial` selects the perceptron.
struct RecurrentShared {
  RecurrentNet net;
  Eigen::MatrixXd patterns;
};
RecurrentShared make_recurrent_shared(const ExperimentConfig& cfg, int alpha_index);
Instance make_instance(const ExperimentConfig& cfg, int alpha_index, int trial,
                       const RecurrentShared* shared);

/// EP on one instance plus metrics; prior initialization draws come from a
/// stream derived from the instance seed.
ExperimentRecord run_trial(const Instance& inst, const ExperimentConfig& cfg);

/// The full grid. Trials run concurrently up to the worker budget; outputs
/// do not depend on the schedule.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);

/// Deterministic record CSV (no timing columns).
void write_records_csv(std::ostream& os, const std::vector<ExperimentRecord>& records);
/// Wall-clock per trial, written separately because it is not reproducible.
void write_timing_csv(std::ostream& os, const std::vector<ExperimentRecord>& records);

/// Runs run_experiment and writes records.csv, timing.csv and aggregate.json
/// under cfg.out_dir. Returns the output.
ExperimentOutput run_and_persist(const ExperimentConfig& cfg);

}  // namespace ep
