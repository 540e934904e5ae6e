#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ep/experiment.hpp"
#include "ep/instance_io.hpp"

using namespace ep;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.name = "tiny";
  cfg.n = 16;
  cfg.rho = 0.25;
  cfg.alphas = {1.0, 2.0};
  cfg.n_trials = 3;
  cfg.ep.damping = 0.9;
  cfg.ep.eps_stop = 1e-6;
  cfg.ep.max_iter = 20000;
  cfg.root_seed = 123;
  return cfg;
}

std::string records_to_string(const std::vector<ExperimentRecord>& records) {
  std::ostringstream os;
  write_records_csv(os, records);
  return os.str();
}

}  // namespace

TEST_CASE("experiment: identical runs produce bit-identical records") {
  const auto cfg = tiny_config();
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  CHECK(records_to_string(a.records) == records_to_string(b.records));
  // aggregate JSON identical except nothing (no timing inside)
  CHECK(a.aggregate.dump() == b.aggregate.dump());
}

TEST_CASE("experiment: worker count does not change the records") {
  auto cfg = tiny_config();
  cfg.workers = 1;
  const auto a = run_experiment(cfg);
  cfg.workers = 3;
  const auto b = run_experiment(cfg);
  CHECK(records_to_string(a.records) == records_to_string(b.records));
}

TEST_CASE("experiment: aggregation excludes non-converged trials") {
  auto cfg = tiny_config();
  cfg.alphas = {2.0};
  cfg.ep.max_iter = 1;  // nothing converges in one sweep
  const auto out = run_experiment(cfg);
  const auto& pa = out.aggregate.at("per_alpha").at(0);
  CHECK(pa.at("n_converged").get<int>() == 0);
  CHECK(pa.at("conv_fraction").get<double>() == 0.0);
  CHECK(pa.at("converged_stats").at("mse_db").at("count").get<int>() == 0);
  CHECK(pa.at("all_stats").at("mse_db").at("count").get<int>() == 3);
  // means over an empty set are NaN (serialized as null in the JSON dump)
  CHECK(std::isnan(pa.at("converged_stats").at("mse_db").at("mean").get<double>()));
}

TEST_CASE("experiment: bayes link flag") {
  ExperimentConfig cfg;
  cfg.lambda = 1e4;
  CHECK(cfg.effective_slab_std() == doctest::Approx(0.01));
  CHECK(cfg.bayes_linked());
  cfg.slab_linked = false;
  cfg.slab_std = 1.0;
  CHECK_FALSE(cfg.bayes_linked());
}

TEST_CASE("presets encode the experiment families") {
  const auto iid = preset("iid-noiseless");
  CHECK(iid.ep.damping == 0.9995);
  CHECK(iid.ep.eps_stop == 1e-4);
  CHECK(iid.lambda == 1.0);
  CHECK(iid.eta_true == 1.0);

  const auto mvn = preset("mvn-noiseless");
  CHECK(mvn.ensemble == EnsembleKind::kMvn);
  CHECK(mvn.u == 1);
  CHECK(mvn.ep.damping == 0.999);

  const auto noisy = preset("iid-noisy-95");
  CHECK(noisy.eta_true == 0.95);
  CHECK(noisy.lambda == 1e4);
  CHECK(noisy.ep.damping == 0.99);
  CHECK(noisy.ep.eps_stop == 1e-6);
  CHECK(noisy.effective_slab_std() == doctest::Approx(0.01));

  const auto mvn90 = preset("mvn-noisy-90");
  CHECK(mvn90.eta_true == 0.90);

  const auto rec = preset("recnet-sync");
  CHECK(rec.ensemble == EnsembleKind::kRecurrent);
  CHECK(rec.update == RecurrentUpdate::kSync);
  CHECK(rec.ep.damping == 0.999);

  const auto ham = preset("recnet-hamming10");
  CHECK(ham.update == RecurrentUpdate::kHamming);
  CHECK(ham.d_hamming == 10);

  CHECK_THROWS_AS(preset("nope"), ConfigError);
  CHECK(preset_names().size() == 6);
}

TEST_CASE("config parsing: key=value text") {
  const std::string text = R"(
# comment
n = 32
rho = 0.3
alphas = 0.5, 2
ensemble = mvn
u = 1
n_trials = 7
damping = 0.95
eps_stop = 1e-5
lambda = 1e4
slab_std = linked
learn_rho = true
root_seed = 99
)";
  const auto cfg = parse_config_text(text);
  CHECK(cfg.n == 32);
  CHECK(cfg.rho == 0.3);
  CHECK(cfg.alphas == std::vector<double>{0.5, 2});
  CHECK(cfg.ensemble == EnsembleKind::kMvn);
  CHECK(cfg.n_trials == 7);
  CHECK(cfg.ep.damping == 0.95);
  CHECK(cfg.rho_learn);
  CHECK(cfg.root_seed == 99);
  CHECK(cfg.effective_slab_std() == doctest::Approx(0.01));
}

TEST_CASE("config parsing: JSON and diagnostics") {
  const auto cfg = parse_config_text(
      R"({"preset": "iid-noisy-95", "n_trials": 4, "alphas": [2], "root_seed": 5})");
  CHECK(cfg.eta_true == 0.95);
  CHECK(cfg.n_trials == 4);
  CHECK(cfg.alphas == std::vector<double>{2});

  try {
    parse_config_text("n = 16\nbogus_key = 1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("damping = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("n = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"n": 16, "alphas": []})"), ConfigError);
}

TEST_CASE("experiment: recurrent trials are perceptron indices") {
  ExperimentConfig cfg;
  cfg.n = 10;
  cfg.ensemble = EnsembleKind::kRecurrent;
  cfg.n_trials = 11;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg.n_trials = 4;
  cfg.alphas = {1.0};
  cfg.ep.damping = 0.9;
  cfg.ep.eps_stop = 1e-5;
  cfg.ep.max_iter = 5000;
  const auto out = run_experiment(cfg);
  CHECK(out.records.size() == 4);
  // instances view different perceptrons of one shared trajectory
  const auto shared = make_recurrent_shared(cfg, 0);
  const auto i0 = make_instance(cfg, 0, 0, &shared);
  const auto i1 = make_instance(cfg, 0, 1, &shared);
  CHECK(i0.n == 9);
  CHECK(i0.teacher != i1.teacher);
}

TEST_CASE("instance files round-trip bit-exactly") {
  ExperimentConfig cfg = tiny_config();
  cfg.eta_true = 0.9;
  const auto inst = make_instance(cfg, 0, 1, nullptr);
  const auto j = instance_to_json(inst);
  const auto back = instance_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.teacher == inst.teacher);
  CHECK(back.patterns == inst.patterns);
  CHECK(back.labels == inst.labels);
  CHECK(back.flipped == inst.flipped);
  CHECK(back.seed == inst.seed);
}

TEST_CASE("run_and_persist writes records, timing and aggregate") {
  auto cfg = tiny_config();
  cfg.alphas = {1.0};
  cfg.n_trials = 2;
  const auto dir = std::filesystem::temp_directory_path() / "sparse_ep_test_out";
  std::filesystem::remove_all(dir);
  cfg.out_dir = dir.string();
  run_and_persist(cfg);
  CHECK(std::filesystem::exists(dir / "records.csv"));
  CHECK(std::filesystem::exists(dir / "timing.csv"));
  CHECK(std::filesystem::exists(dir / "aggregate.json"));
  const auto agg = read_json_file((dir / "aggregate.json").string());
  CHECK(agg.at("root_seed").get<std::uint64_t>() == 123);
  CHECK(agg.at("per_alpha").size() == 1);
  std::filesystem::remove_all(dir);
}
