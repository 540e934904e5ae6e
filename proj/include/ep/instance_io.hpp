#pragma once

#include <Eigen/Core>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ep/datagen.hpp"
#include "ep/design.hpp"
#include "ep/ep_core.hpp"

// Self-describing JSON files for problem instances and EP results, so any
// run can be replayed bit-exactly. Doubles survive the round trip unchanged
// (shortest-representation serialization).

namespace ep {

struct Instance {
  int n = 0;
  int m = 0;
  std::uint64_t seed = 0;
  std::string ensemble = "iid";  // iid | mvn | recurrent
  int u = 1;
  std::string update = "sync";  // sync | full-sweep | hamming
  int d_hamming = 0;
  int perceptron = -1;  // recurrent ensembles: which unit this instance trains
  double rho = 0;
  double slab_std = 1.0;
  double eta_true = 1.0;
  Eigen::VectorXd teacher;
  Eigen::MatrixXd patterns;
  Eigen::VectorXd labels_clean;
  Eigen::VectorXd labels;  // after flips
  std::vector<int> flipped;

  DesignMatrix<double> design() const {
    Eigen::MatrixXd rows(m, n);
    for (int t = 0; t < m; ++t) rows.row(t) = labels[t] * patterns.row(t);
    return DesignMatrix<double>(std::move(rows));
  }
};

namespace detail {

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                           static_cast<Eigen::Index>(values.size()));
}

inline nlohmann::json mat_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index t = 0; t < m.rows(); ++t)
    rows.push_back(std::vector<double>(m.row(t).begin(), m.row(t).end()));
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int cols_hint = -1) {
  const auto n_rows = static_cast<Eigen::Index>(j.size());
  if (n_rows == 0) return Eigen::MatrixXd(0, std::max(cols_hint, 0));
  Eigen::MatrixXd out(n_rows, static_cast<Eigen::Index>(j.at(0).size()));
  for (Eigen::Index t = 0; t < n_rows; ++t) {
    const auto row = j.at(static_cast<std::size_t>(t)).get<std::vector<double>>();
    out.row(t) = Eigen::Map<const Eigen::VectorXd>(row.data(),
                                                   static_cast<Eigen::Index>(row.size()));
  }
  return out;
}

}  // namespace detail

inline nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json j;
  j["format"] = "sparse-ep-instance/1";
  j["n"] = inst.n;
  j["m"] = inst.m;
  j["seed"] = inst.seed;
  j["ensemble"] = {{"kind", inst.ensemble}, {"u", inst.u},        {"update", inst.update},
                   {"d_hamming", inst.d_hamming},                 {"perceptron", inst.perceptron}};
  j["teacher"] = {{"rho", inst.rho},
                  {"slab_std", inst.slab_std},
                  {"weights", detail::vec_json(inst.teacher)}};
  j["patterns"] = detail::mat_json(inst.patterns);
  j["labels_clean"] = detail::vec_json(inst.labels_clean);
  j["labels"] = detail::vec_json(inst.labels);
  j["noise"] = {{"eta_true", inst.eta_true}, {"flipped", inst.flipped}};
  return j;
}

inline Instance instance_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "sparse-ep-instance/1")
    throw std::invalid_argument("not a sparse-ep instance file");
  Instance inst;
  inst.n = j.at("n").get<int>();
  inst.m = j.at("m").get<int>();
  inst.seed = j.at("seed").get<std::uint64_t>();
  const auto& ens = j.at("ensemble");
  inst.ensemble = ens.at("kind").get<std::string>();
  inst.u = ens.value("u", 1);
  inst.update = ens.value("update", "sync");
  inst.d_hamming = ens.value("d_hamming", 0);
  inst.perceptron = ens.value("perceptron", -1);
  const auto& teacher = j.at("teacher");
  inst.rho = teacher.at("rho").get<double>();
  inst.slab_std = teacher.at("slab_std").get<double>();
  inst.teacher = detail::vector_from_json(teacher.at("weights"));
  inst.patterns = detail::matrix_from_json(j.at("patterns"), inst.n);
  inst.labels_clean = detail::vector_from_json(j.at("labels_clean"));
  inst.labels = detail::vector_from_json(j.at("labels"));
  inst.eta_true = j.at("noise").value("eta_true", 1.0);
  inst.flipped = j.at("noise").value("flipped", std::vector<int>{});
  return inst;
}

struct ResultFile {
  EPResult<double> result;
  double rho_prior = 0;
  double lambda = 1;
  std::optional<double> eta_prior;
  bool learned_rho = false;
  bool learned_eta = false;
  EPConfig<double> config;
};

inline nlohmann::json result_to_json(const ResultFile& rf) {
  const auto& r = rf.result;
  nlohmann::json j;
  j["format"] = "sparse-ep-result/1";
  j["n"] = r.n;
  j["m"] = r.m;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["eps_final"] = r.eps_final;
  j["weight_mean"] = detail::vec_json(r.weight_mean());
  j["weight_std"] = detail::vec_json(r.weight_std());
  j["tilted_mean"] = detail::vec_json(r.tilted_mean);
  j["tilted_var"] = detail::vec_json(r.tilted_var);
  j["site_a"] = detail::vec_json(r.site.a);
  j["site_d"] = detail::vec_json(r.site.d);
  j["cavity_mean"] = detail::vec_json(r.cav_mean);
  j["cavity_var"] = detail::vec_json(r.cav_var);
  j["clamps"] = {{"cavity", r.clamp_cavity}, {"site", r.clamp_site}};
  j["factorizations"] = r.factorizations;
  j["prior"] = {{"rho", rf.rho_prior},
                {"lambda", rf.lambda},
                {"learn_rho", rf.learned_rho},
                {"learn_eta", rf.learned_eta}};
  if (rf.eta_prior) j["prior"]["eta"] = *rf.eta_prior;
  if (rf.learned_rho) j["learned"]["rho"] = r.rho_final;
  if (rf.learned_eta) j["learned"]["eta"] = r.eta_final;
  j["config"] = {{"damping", rf.config.damping},
                 {"eps_stop", rf.config.eps_stop},
                 {"max_iter", rf.config.max_iter},
                 {"d_max", rf.config.d_max},
                 {"var_floor", rf.config.var_floor}};
  return j;
}

inline ResultFile result_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "sparse-ep-result/1")
    throw std::invalid_argument("not a sparse-ep result file");
  ResultFile rf;
  auto& r = rf.result;
  r.n = j.at("n").get<int>();
  r.m = j.at("m").get<int>();
  r.converged = j.at("converged").get<bool>();
  r.iterations = j.at("iterations").get<int>();
  r.eps_final = j.at("eps_final").get<double>();
  r.tilted_mean = detail::vector_from_json(j.at("tilted_mean"));
  r.tilted_var = detail::vector_from_json(j.at("tilted_var"));
  r.tilted_second = r.tilted_var + r.tilted_mean.cwiseAbs2();
  r.site.a = detail::vector_from_json(j.at("site_a"));
  r.site.d = detail::vector_from_json(j.at("site_d"));
  r.cav_mean = detail::vector_from_json(j.at("cavity_mean"));
  r.cav_var = detail::vector_from_json(j.at("cavity_var"));
  rf.rho_prior = j.at("prior").at("rho").get<double>();
  rf.lambda = j.at("prior").at("lambda").get<double>();
  if (j.at("prior").contains("eta")) rf.eta_prior = j.at("prior").at("eta").get<double>();
  rf.learned_rho = j.at("prior").value("learn_rho", false);
  rf.learned_eta = j.at("prior").value("learn_eta", false);
  if (j.contains("learned")) {
    if (j.at("learned").contains("rho")) r.rho_final = j.at("learned").at("rho").get<double>();
    if (j.at("learned").contains("eta")) r.eta_final = j.at("learned").at("eta").get<double>();
  }
  const auto& cfg = j.at("config");
  rf.config.damping = cfg.at("damping").get<double>();
  rf.config.eps_stop = cfg.at("eps_stop").get<double>();
  rf.config.max_iter = cfg.at("max_iter").get<int>();
  rf.config.d_max = cfg.value("d_max", 1e12);
  rf.config.var_floor = cfg.value("var_floor", 1e-12);
  return rf;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw std::invalid_argument("cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open " + path);
  nlohmann::json j;
  is >> j;
  return j;
}

}  // namespace ep
