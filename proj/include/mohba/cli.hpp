#pragma once

// Command-line surface: gen-data, train, baseline, analyze, concepts.
// Kept in a header so tests can drive it in-process through run().

#include "mohba/baselines.hpp"
#include "mohba/behaviorgen.hpp"
#include "mohba/concepts.hpp"
#include "mohba/config.hpp"
#include "mohba/evalmetrics.hpp"
#include "mohba/hvae.hpp"
#include "mohba/plot.hpp"
#include "mohba/training.hpp"
#include "mohba/trajdata.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace mohba::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kNumerical = 3 };

struct AnalysisConfig {
  int k = 3;
  int ictd_k = 16;
  std::uint64_t seed = 0;
};

struct ConceptsConfig {
  std::string target = "dispersion";
  int m = 16;
  std::optional<double> kappa;  // default depends on target
  std::string method = "exact";
  int n_perms = 2000;
  int n_classes = 5;
  double val_fraction = 0.2;
  long head_steps = 10000;
  int head_batch = 64;
  std::uint64_t seed = 0;
};

struct RunConfig {
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;
  AnalysisConfig analysis;
  ConceptsConfig concepts;
  std::string out;
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  ConfigReader r(j, "");
  if (r.has("corpus")) read_corpus_config(r.child("corpus"), c.corpus);
  if (r.has("model")) read_model_config(r.child("model"), c.model);
  if (r.has("train")) {
    read_train_config(r.child("train"), c.train);
    try {
      c.train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train: ") + e.what());
    }
  }
  {
    ConfigReader a = r.child("analysis");
    a.get("k", c.analysis.k);
    a.get("ictd_k", c.analysis.ictd_k);
    a.get("seed", c.analysis.seed);
    a.finish();
    a.require(c.analysis.k >= 1, "k", "must be >= 1");
    a.require(c.analysis.ictd_k >= 1, "ictd_k", "must be >= 1");
  }
  {
    ConfigReader k = r.child("concepts");
    k.get("target", c.concepts.target);
    k.get("m", c.concepts.m);
    if (k.has("kappa")) {
      double kappa = 0.0;
      k.get("kappa", kappa);
      c.concepts.kappa = kappa;
    } else {
      k.accept("kappa");
    }
    k.get("method", c.concepts.method);
    k.get("n_perms", c.concepts.n_perms);
    k.get("n_classes", c.concepts.n_classes);
    k.get("val_fraction", c.concepts.val_fraction);
    k.get("head_steps", c.concepts.head_steps);
    k.get("head_batch", c.concepts.head_batch);
    k.get("seed", c.concepts.seed);
    k.finish();
    k.require(c.concepts.target == "dispersion" || c.concepts.target == "return", "target", "expected dispersion or return");
    k.require(c.concepts.method == "exact" || c.concepts.method == "sampled", "method", "expected exact or sampled");
    k.require(c.concepts.m >= 1, "m", "must be >= 1");
    k.require(c.concepts.n_perms >= 1, "n_perms", "must be >= 1");
    k.require(c.concepts.n_classes >= 2, "n_classes", "must be >= 2");
    k.require(c.concepts.val_fraction > 0 && c.concepts.val_fraction < 1, "val_fraction", "must be in (0, 1)");
    k.require(c.concepts.head_steps >= 1 && c.concepts.head_batch >= 1, "head_steps", "head steps and batch must be >= 1");
  }
  r.get("out", c.out);
  r.finish();
  return c;
}

/// MOHBA_SEED, when set, replaces every seed in the config.
inline void apply_seed_override(RunConfig& c) {
  const char* env = std::getenv("MOHBA_SEED");
  if (!env) return;
  std::uint64_t seed = 0;
  try {
    std::size_t used = 0;
    seed = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw ConfigError(std::string("MOHBA_SEED: not an unsigned integer: '") + env + "'");
  }
  c.corpus.seed = seed;
  c.train.seed = seed;
  c.analysis.seed = seed;
  c.concepts.seed = seed;
}

inline RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    c = parse_run_config(j);
  }
  apply_seed_override(c);
  return c;
}

// ---------------------------------------------------------------------------
// Output helpers

inline std::string prepare_out(const std::string& flag, const RunConfig& c) {
  const std::string out = flag.empty() ? c.out : flag;
  if (out.empty()) throw CLI::RequiredError("--out");
  std::filesystem::create_directories(out);
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Wall-clock facts live only here so that every other artifact is reproducible.
inline void write_sidecar(const std::filesystem::path& dir, const std::string& command, const std::vector<std::string>& args) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  write_json(dir / (command + ".meta.json"), {{"command", command}, {"args", args}, {"timestamp_utc", buf}});
}

// ---------------------------------------------------------------------------
// Any checkpointed model

using AnyModel = std::variant<MohbaModel<double>, MohbaModel<float>, FlatVae<double>, FlatVae<float>, LstmBaseline<double>,
                              LstmBaseline<float>>;

inline std::string kind_of(const AnyModel& m) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, MohbaModel<double>> || std::is_same_v<T, MohbaModel<float>>)
          return "mohba";
        else if constexpr (std::is_same_v<T, FlatVae<double>> || std::is_same_v<T, FlatVae<float>>)
          return "flat_vae";
        else
          return "lstm";
      },
      m);
}

inline AnyModel load_any(const std::string& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint '" + path + "' not found");
  const Checkpoint ck = read_checkpoint(path);
  const std::string kind = ck.header.value("kind", std::string("?"));
  const bool f32 = ck.header.contains("train_config") && ck.header["train_config"].value("float32", false);
  if (kind == "mohba")
    return f32 ? AnyModel(load_mohba_checkpoint<float>(ck).model) : AnyModel(load_mohba_checkpoint<double>(ck).model);
  if (kind == "flat_vae")
    return f32 ? AnyModel(load_baseline_checkpoint<FlatVae<float>>(ck, kind).model)
               : AnyModel(load_baseline_checkpoint<FlatVae<double>>(ck, kind).model);
  if (kind == "lstm")
    return f32 ? AnyModel(load_baseline_checkpoint<LstmBaseline<float>>(ck, kind).model)
               : AnyModel(load_baseline_checkpoint<LstmBaseline<double>>(ck, kind).model);
  throw CheckpointError("checkpoint '" + path + "' has unknown kind '" + kind + "'");
}

/// Embeddings for any model kind. Baselines fill z_omega only (the flat VAE's
/// posterior mean, or the LSTM's final hidden state) and leave z_alpha empty.
inline EmbeddingTable embed_any(const AnyModel& model, const TrajectoryDataset& ds) {
  return std::visit(
      [&](const auto& m) -> EmbeddingTable {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MohbaModel<double>> || std::is_same_v<T, MohbaModel<float>>) {
          return embed_dataset(m, ds, "mohba");
        } else {
          m.config.check_meta(ds.meta());
          EmbeddingTable e;
          const auto ptrs = trajectory_pointers(ds);
          const std::span<const Trajectory* const> sp(ptrs);
          if constexpr (std::is_same_v<T, FlatVae<double>> || std::is_same_v<T, FlatVae<float>>) {
            e.provenance = "flat_vae";
            const auto post = flat_vae_posteriors(m, sp);
            e.z_omega.resize(static_cast<Eigen::Index>(post.size()), m.config.d_omega);
            for (std::size_t k = 0; k < post.size(); ++k) e.z_omega.row(static_cast<Eigen::Index>(k)) = post[k].mean().transpose();
          } else {
            e.provenance = "lstm";
            e.z_omega = lstm_embed(m, sp);
          }
          for (std::size_t k = 0; k < ds.size(); ++k) {
            e.traj_ids.push_back(k);
            e.run_ids.push_back(ds[k].run_id);
            e.train_steps.push_back(ds[k].train_step);
          }
          return e;
        }
      },
      model);
}

inline double apl_any(const AnyModel& model, const TrajectoryDataset& ds) {
  return std::visit([&](const auto& m) { return apl(m, ds); }, model);
}

/// "omega" or "alpha:<i>".
inline Eigen::MatrixXd select_space(const EmbeddingTable& e, const std::string& space) {
  if (space == "omega") return e.z_omega;
  if (space.rfind("alpha:", 0) == 0) {
    int i = -1;
    try {
      i = std::stoi(space.substr(6));
    } catch (const std::exception&) {
    }
    if (i < 0 || static_cast<std::size_t>(i) >= e.z_alpha.size())
      throw CLI::ValidationError("--space", "no local latent '" + space + "' for this model");
    return e.z_alpha[static_cast<std::size_t>(i)];
  }
  throw CLI::ValidationError("--space", "expected omega or alpha:<agent>");
}

/// Ground-truth colouring from scripted run ids when available.
inline std::vector<int> truth_labels(const TrajectoryDataset& ds) {
  std::vector<int> out;
  for (const auto& t : ds) {
    const auto l = parse_run_id(t.run_id);
    if (!l) return {};
    int code = 0;
    for (int m : l->modes) code = code * 8 + m;
    out.push_back(code);
  }
  return out;
}

inline std::vector<Eigen::MatrixXd> agent_paths(const Trajectory& t) {
  std::vector<Eigen::MatrixXd> out;
  const auto n = static_cast<Eigen::Index>(t.n_agents());
  if (t.states.cols() != 2 * n) return out;  // only planar per-agent positions are drawable
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(t.states.middleCols(2 * i, 2));
  return out;
}

// ---------------------------------------------------------------------------
// Commands

template <typename S>
void train_mohba(const RunConfig& c, const TrajectoryDataset& ds, const std::string& resume, const std::filesystem::path& out) {
  MohbaModel<S> model;
  TrainerState<S> state;
  if (!resume.empty()) {
    ModelConfig expected = c.model;
    expected.adopt(ds.meta());
    auto l = load_mohba_checkpoint<S>(resume, &expected);
    model = std::move(l.model);
    state = std::move(l.state);
  } else {
    ModelConfig mc = c.model;
    mc.adopt(ds.meta());
    model = MohbaModel<S>::create(mc, init_seed(c.train));
    state = fresh_trainer(c.train, model.store);
  }
  train(model, state, ds, c.train);
  write_checkpoint((out / "checkpoint.bin").string(), make_checkpoint(model, state, c.train));
  state.log.write_csv((out / "metrics.csv").string());
}

template <typename Model>
void train_baseline(const RunConfig& c, const TrajectoryDataset& ds, const std::string& kind, const std::string& resume,
                    const std::filesystem::path& out) {
  using S = typename Model::Scalar;
  Model model;
  TrainerState<S> state;
  if (!resume.empty()) {
    auto l = load_baseline_checkpoint<Model>(read_checkpoint(resume), kind);
    ModelConfig expected = c.model;
    expected.adopt(ds.meta());
    if (!(expected == l.model.config)) throw CheckpointError("checkpoint model_config does not match the requested model");
    model = std::move(l.model);
    state = std::move(l.state);
  } else {
    ModelConfig mc = c.model;
    mc.adopt(ds.meta());
    model = Model::create(mc, init_seed(c.train));
    state = fresh_trainer(c.train, model.store);
  }
  train(model, state, ds, c.train);
  write_checkpoint((out / "checkpoint.bin").string(), make_checkpoint(model, state, c.train));
  state.log.write_csv((out / "metrics.csv").string());
}

inline nlohmann::json return_stats_json(const ReturnStats& s) {
  return {{"n_trajectories", s.totals.size()},
          {"max_return", s.max_return},
          {"min_return", s.min_return},
          {"fraction_below_half_max", s.fraction_below_half_max},
          {"histogram", {{"bin_edges", s.bin_edges}, {"bin_counts", s.bin_counts}}}};
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multiagent hierarchical behavior analysis"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv + 1, argv + argc);

  std::string config_path, data_path, out_dir, checkpoint_path, resume_path;
  int workers = 1;

  auto* gen = app.add_subcommand("gen-data", "Generate a scripted trajectory corpus");
  gen->add_option("--config", config_path, "Run config (JSON)");
  gen->add_option("--out", out_dir, "Output directory (or \"out\" in the config)");
  gen->add_option("--workers", workers, "Parallel generation threads")->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train", "Train the hierarchical model");
  tr->add_option("--config", config_path, "Run config (JSON)");
  tr->add_option("--data", data_path, "Dataset (JSON lines)")->required();
  tr->add_option("--out", out_dir, "Output directory (or \"out\" in the config)");
  tr->add_option("--resume", resume_path, "Continue from this checkpoint");

  std::string method;
  auto* bl = app.add_subcommand("baseline", "Train a baseline model");
  bl->add_option("--method", method, "lstm or vae")->required()->check(CLI::IsMember({"lstm", "vae"}));
  bl->add_option("--config", config_path, "Run config (JSON)");
  bl->add_option("--data", data_path, "Dataset (JSON lines)")->required();
  bl->add_option("--out", out_dir, "Output directory (or \"out\" in the config)");
  bl->add_option("--resume", resume_path, "Continue from this checkpoint");

  std::optional<int> k_flag;
  std::string run_id, space = "omega";
  auto* an = app.add_subcommand("analyze", "Embed, cluster, and score a trained model");
  an->require_subcommand(1);
  an->add_option("--config", config_path, "Run config (JSON)");
  an->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  an->add_option("--data", data_path, "Dataset (JSON lines)")->required();
  an->add_option("--out", out_dir, "Output directory (or \"out\" in the config)");
  an->add_subcommand("embed", "Write embeddings.csv");
  auto* an_cluster = an->add_subcommand("cluster", "K-means on a latent space, write clusters.json");
  an_cluster->add_option("--k", k_flag, "Number of clusters");
  an_cluster->add_option("--space", space, "omega or alpha:<agent>");
  auto* an_ictd = an->add_subcommand("ictd", "Intra-cluster trajectory distance");
  an_ictd->add_option("--k", k_flag, "Number of clusters");
  an->add_subcommand("apl", "Action-prediction loss");
  auto* an_track = an->add_subcommand("track", "Cluster changepoints along one run");
  an_track->add_option("--run-id", run_id, "Run to track")->required();
  an_track->add_option("--k", k_flag, "Number of reference clusters");
  an_track->add_option("--space", space, "omega or alpha:<agent>");
  auto* an_project = an->add_subcommand("project", "PCA projection to 2-D (CSV + PNG)");
  an_project->add_option("--space", space, "omega or alpha:<agent>");
  an_project->add_option("--k", k_flag, "Colour by K-means clusters instead of run labels");

  std::string target;
  std::optional<int> m_flag;
  std::optional<double> kappa_flag;
  std::string shap_method;
  auto* co = app.add_subcommand("concepts", "Concept discovery on z_omega");
  co->add_option("--config", config_path, "Run config (JSON)");
  co->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  co->add_option("--data", data_path, "Dataset (JSON lines)")->required();
  co->add_option("--out", out_dir, "Output directory (or \"out\" in the config)");
  co->add_option("--target", target, "dispersion or return")->check(CLI::IsMember({"dispersion", "return"}));
  co->add_option("--m", m_flag, "Number of concepts")->check(CLI::PositiveNumber);
  co->add_option("--kappa", kappa_flag, "Concept threshold");
  co->add_option("--method", shap_method, "exact or sampled")->check(CLI::IsMember({"exact", "sampled"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (gen->parsed()) {
      const std::filesystem::path dir = prepare_out(out_dir, cfg);
      const TrajectoryDataset ds = generate_corpus(cfg.corpus, workers);
      save_dataset(ds, (dir / "dataset.jsonl").string());
      nlohmann::json report = {{"corpus", to_json(cfg.corpus)}};
      if (ds.meta().has_rewards) report["returns"] = return_stats_json(return_statistics(ds));
      write_json(dir / "stats.json", report);
      write_sidecar(dir, "gen-data", args);
      out << "wrote " << ds.size() << " trajectories to " << (dir / "dataset.jsonl").string() << "\n";
      return kOk;
    }
    if (tr->parsed() || bl->parsed()) {
      const std::filesystem::path dir = prepare_out(out_dir, cfg);
      const TrajectoryDataset ds = load_dataset(data_path);
      const bool f32 = cfg.train.float32;
      if (tr->parsed()) {
        f32 ? train_mohba<float>(cfg, ds, resume_path, dir) : train_mohba<double>(cfg, ds, resume_path, dir);
      } else if (method == "lstm") {
        f32 ? train_baseline<LstmBaseline<float>>(cfg, ds, "lstm", resume_path, dir)
            : train_baseline<LstmBaseline<double>>(cfg, ds, "lstm", resume_path, dir);
      } else {
        f32 ? train_baseline<FlatVae<float>>(cfg, ds, "flat_vae", resume_path, dir)
            : train_baseline<FlatVae<double>>(cfg, ds, "flat_vae", resume_path, dir);
      }
      write_sidecar(dir, tr->parsed() ? "train" : "baseline", args);
      out << "wrote " << (dir / "checkpoint.bin").string() << "\n";
      return kOk;
    }
    if (an->parsed()) {
      const std::filesystem::path dir = prepare_out(out_dir, cfg);
      const TrajectoryDataset ds = load_dataset(data_path);
      const AnyModel model = load_any(checkpoint_path);
      const std::string action = an->get_subcommands().front()->get_name();
      const int k = k_flag.value_or(action == "ictd" ? cfg.analysis.ictd_k : cfg.analysis.k);
      if (action == "embed") {
        write_text(dir / "embeddings.csv", embeddings_csv(embed_any(model, ds)));
      } else if (action == "apl") {
        write_json(dir / "apl.json", {{"model", kind_of(model)}, {"apl", apl_any(model, ds)}, {"n_trajectories", ds.size()}});
      } else if (action == "cluster") {
        const EmbeddingTable e = embed_any(model, ds);
        nlohmann::json j = to_json(kmeans(select_space(e, space), k, cfg.analysis.seed));
        j["space"] = space;
        j["model"] = kind_of(model);
        write_json(dir / "clusters.json", j);
      } else if (action == "ictd") {
        const EmbeddingTable e = embed_any(model, ds);
        const ClusterAssignment a = kmeans(e.z_omega, k, cfg.analysis.seed);
        std::vector<std::string> warnings;
        const double v = ictd(ds, a, &warnings);
        write_json(dir / "ictd.json", {{"model", kind_of(model)}, {"k", k}, {"ictd", v}, {"warnings", warnings}});
      } else if (action == "track") {
        const auto members = run_members(ds, run_id);
        if (members.empty()) throw std::invalid_argument("run id '" + run_id + "' not found in the dataset");
        const EmbeddingTable e = embed_any(model, ds);
        const Eigen::MatrixXd z = select_space(e, space);
        const ClusterAssignment ref = kmeans(z, k, cfg.analysis.seed);
        const RunTrack t = track_run(select_rows(z, members), ref);
        nlohmann::json steps = nlohmann::json::array();
        for (auto idx : members) steps.push_back(ds[idx].train_step);
        write_json(dir / "track.json", {{"run_id", run_id},
                                        {"space", space},
                                        {"k", k},
                                        {"traj_ids", members},
                                        {"train_steps", steps},
                                        {"labels", t.labels},
                                        {"changepoints", t.changepoints}});
      } else if (action == "project") {
        const EmbeddingTable e = embed_any(model, ds);
        const Eigen::MatrixXd z = select_space(e, space);
        const Projection p = pca_project(z);
        std::string csv = "pc1,pc2\n";
        char buf[80];
        for (Eigen::Index r = 0; r < p.coords.rows(); ++r) {
          std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.coords(r, 0), p.coords(r, 1));
          csv += buf;
        }
        write_text(dir / "projection.csv", csv);
        const std::vector<int> colours = k_flag ? kmeans(z, *k_flag, cfg.analysis.seed).labels : truth_labels(ds);
        plot::scatter(p.coords, colours).write_png((dir / "projection.png").string());
      }
      write_sidecar(dir, "analyze-" + action, args);
      return kOk;
    }
    if (co->parsed()) {
      const std::filesystem::path dir = prepare_out(out_dir, cfg);
      const TrajectoryDataset ds = load_dataset(data_path);
      const AnyModel model = load_any(checkpoint_path);
      ConceptsConfig cc = cfg.concepts;
      if (!target.empty()) cc.target = target;
      if (m_flag) cc.m = *m_flag;
      if (kappa_flag) cc.kappa = *kappa_flag;
      if (!shap_method.empty()) cc.method = shap_method;
      if (cc.target == "return" && !ds.meta().has_rewards)
        throw std::invalid_argument("concept target 'return' needs a dataset with rewards");

      ConceptAnalysisConfig ac;
      ac.m = cc.m;
      ac.kappa = cc.kappa.value_or(cc.target == "return" ? 0.3 : 0.0);
      ac.n_classes = cc.n_classes;
      ac.val_fraction = cc.val_fraction;
      ac.method = parse_shapley_method(cc.method);
      ac.n_perms = cc.n_perms;
      ac.seed = cc.seed;
      ac.head.steps = cc.head_steps;
      ac.head.batch_size = cc.head_batch;
      const EmbeddingTable e = embed_any(model, ds);
      const std::vector<double> stat = cc.target == "return" ? total_returns(ds) : dispersions(ds);
      const ConceptReport rep = analyze_concepts(e.z_omega, stat, ac);
      nlohmann::json j = to_json(rep);
      j["target"] = cc.target;
      j["model"] = kind_of(model);
      write_json(dir / "concepts.json", j);
      for (const auto& cls : rep.classes) {
        std::vector<Eigen::MatrixXd> ps;
        std::vector<int> colours;
        for (auto idx : cls.nearest)
          for (auto& path : agent_paths(ds[idx])) {
            colours.push_back(static_cast<int>(ps.size() % static_cast<std::size_t>(ds.meta().n_agents)));
            ps.push_back(std::move(path));
          }
        if (!ps.empty()) plot::paths(ps, colours).write_png((dir / ("class_" + std::to_string(cls.klass) + ".png")).string());
      }
      for (const auto& w : rep.warnings) err << "warning: " << w << "\n";
      write_sidecar(dir, "concepts", args);
      return kOk;
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace mohba::cli
