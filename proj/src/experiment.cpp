#include "copo/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace copo {

namespace {

template <class T>
nlohmann::json idx_vec(const std::vector<T>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const T& x : v) a.push_back(x);
  return a;
}

std::vector<Index> to_idx_vec(const nlohmann::json& j) {
  std::vector<Index> out;
  for (const auto& x : j) out.push_back(x.get<Index>());
  return out;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  return {
      {"env", env_name},
      {"algo", algo},
      {"variant", variant},
      {"seed", seed},
      {"steps", steps},
      {"eval_interval", eval_interval},
      {"eval_episodes", eval_episodes},
      {"checkpoint_interval", checkpoint_interval},
      {"out_dir", out_dir},
      {"resume_from", resume_from},
      {"arch",
       {{"d", arch.d},
        {"decoder_hidden", arch.decoder_hidden},
        {"value_hidden", idx_vec(arch.value_hidden)},
        {"q_hidden", idx_vec(arch.q_hidden)},
        {"high_hidden", idx_vec(arch.high_hidden)},
        {"flat_hidden", idx_vec(arch.flat_hidden)},
        {"temperature", arch.temperature}}},
      {"sac",
       {{"learning_rate", sac.learning_rate},
        {"gamma", sac.gamma},
        {"tau", sac.tau},
        {"batch", sac.batch},
        {"replay_capacity", sac.replay_capacity},
        {"target_update_interval", sac.target_update_interval},
        {"gradient_steps", sac.gradient_steps},
        {"entropy_coef", sac.entropy_coef},
        {"warmup_steps", sac.warmup_steps},
        {"update_every", sac.update_every}}},
      {"hiro",
       {{"learning_rate", hiro.learning_rate},
        {"gamma", hiro.gamma},
        {"tau", hiro.tau},
        {"batch", hiro.batch},
        {"high_batch", hiro.high_batch},
        {"replay_capacity", hiro.replay_capacity},
        {"target_update_interval", hiro.target_update_interval},
        {"horizon_c", hiro.horizon_c},
        {"relabel_candidates", hiro.relabel_candidates},
        {"goal_bound", hiro.goal_bound},
        {"high_noise", hiro.high_noise},
        {"low_noise", hiro.low_noise},
        {"smooth_noise", hiro.smooth_noise},
        {"smooth_clip", hiro.smooth_clip},
        {"high_smooth_noise", hiro.high_smooth_noise},
        {"high_smooth_clip", hiro.high_smooth_clip},
        {"warmup_steps", hiro.warmup_steps},
        {"update_every", hiro.update_every}}}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  auto get = [&](const nlohmann::json& obj, const char* key, auto& dst) {
    if (obj.contains(key)) dst = obj.at(key).template get<std::decay_t<decltype(dst)>>();
  };
  get(j, "env", c.env_name);
  get(j, "algo", c.algo);
  get(j, "variant", c.variant);
  get(j, "seed", c.seed);
  get(j, "steps", c.steps);
  get(j, "eval_interval", c.eval_interval);
  get(j, "eval_episodes", c.eval_episodes);
  get(j, "checkpoint_interval", c.checkpoint_interval);
  get(j, "out_dir", c.out_dir);
  get(j, "resume_from", c.resume_from);
  if (j.contains("arch")) {
    const auto& a = j.at("arch");
    get(a, "d", c.arch.d);
    get(a, "decoder_hidden", c.arch.decoder_hidden);
    if (a.contains("value_hidden")) c.arch.value_hidden = to_idx_vec(a.at("value_hidden"));
    if (a.contains("q_hidden")) c.arch.q_hidden = to_idx_vec(a.at("q_hidden"));
    if (a.contains("high_hidden")) c.arch.high_hidden = to_idx_vec(a.at("high_hidden"));
    if (a.contains("flat_hidden")) c.arch.flat_hidden = to_idx_vec(a.at("flat_hidden"));
    get(a, "temperature", c.arch.temperature);
  }
  if (j.contains("sac")) {
    const auto& s = j.at("sac");
    get(s, "learning_rate", c.sac.learning_rate);
    get(s, "gamma", c.sac.gamma);
    get(s, "tau", c.sac.tau);
    get(s, "batch", c.sac.batch);
    get(s, "replay_capacity", c.sac.replay_capacity);
    get(s, "target_update_interval", c.sac.target_update_interval);
    get(s, "gradient_steps", c.sac.gradient_steps);
    get(s, "entropy_coef", c.sac.entropy_coef);
    get(s, "warmup_steps", c.sac.warmup_steps);
    get(s, "update_every", c.sac.update_every);
  }
  if (j.contains("hiro")) {
    const auto& h = j.at("hiro");
    get(h, "learning_rate", c.hiro.learning_rate);
    get(h, "gamma", c.hiro.gamma);
    get(h, "tau", c.hiro.tau);
    get(h, "batch", c.hiro.batch);
    get(h, "high_batch", c.hiro.high_batch);
    get(h, "replay_capacity", c.hiro.replay_capacity);
    get(h, "target_update_interval", c.hiro.target_update_interval);
    get(h, "horizon_c", c.hiro.horizon_c);
    get(h, "relabel_candidates", c.hiro.relabel_candidates);
    get(h, "goal_bound", c.hiro.goal_bound);
    get(h, "high_noise", c.hiro.high_noise);
    get(h, "low_noise", c.hiro.low_noise);
    get(h, "smooth_noise", c.hiro.smooth_noise);
    get(h, "smooth_clip", c.hiro.smooth_clip);
    get(h, "high_smooth_noise", c.hiro.high_smooth_noise);
    get(h, "high_smooth_clip", c.hiro.high_smooth_clip);
    get(h, "warmup_steps", c.hiro.warmup_steps);
    get(h, "update_every", c.hiro.update_every);
  }
  return c;
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form path=value");
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  nlohmann::json j = to_json();
  nlohmann::json* node = &j;
  std::size_t start = 0;
  std::vector<std::string> keys;
  while (true) {
    std::size_t dot = path.find('.', start);
    keys.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->contains(keys[i])) throw ConfigError("unknown config path '" + path + "'");
    node = &(*node)[keys[i]];
  }
  if (!node->contains(keys.back())) throw ConfigError("unknown config path '" + path + "'");
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  (*node)[keys.back()] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
  *this = from_json(j);
}

void ExperimentConfig::validate() const {
  auto known = PointEnv::registry();
  if (std::find(known.begin(), known.end(), env_name) == known.end()) {
    std::string list;
    for (const std::string& n : known) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown environment '" + env_name + "', known environments: " + list);
  }
  if (algo != "sac" && algo != "hiro") throw ConfigError("algo must be 'sac' or 'hiro'");
  variant_from_string(variant);  // throws on unknown
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (eval_interval <= 0) throw ConfigError("eval_interval must be positive");
  if (eval_episodes <= 0) throw ConfigError("eval_episodes must be positive");
  if (!(sac.gamma > 0.0 && sac.gamma <= 1.0)) throw ConfigError("sac.gamma must be in (0, 1]");
  if (!(sac.tau > 0.0 && sac.tau <= 1.0)) throw ConfigError("sac.tau must be in (0, 1]");
  if (sac.entropy_coef < 0.0) throw ConfigError("sac.entropy_coef must be >= 0");
  if (sac.batch == 0 || sac.replay_capacity == 0) throw ConfigError("sac batch/replay must be positive");
  if (!(hiro.gamma > 0.0 && hiro.gamma <= 1.0)) throw ConfigError("hiro.gamma must be in (0, 1]");
  if (!(hiro.tau > 0.0 && hiro.tau <= 1.0)) throw ConfigError("hiro.tau must be in (0, 1]");
  if (hiro.horizon_c < 1) throw ConfigError("hiro.horizon_c must be >= 1");
  if (hiro.relabel_candidates < 2)
    throw ConfigError("hiro.relabel_candidates must be >= 2 (original and mean candidates)");
  if (arch.temperature <= 0.0) throw ConfigError("arch.temperature must be positive");
}

Ensemble make_env_ensemble(const std::string& env_name) {
  PointEnv env = PointEnv::make(env_name);
  return make_scripted_primitives(env.spec().family, env.spec().shat_width,
                                  env.spec().action_bound);
}

CompositePolicy::Config policy_config_for(const ExperimentConfig& cfg, Index state_width,
                                          Index n_primitives) {
  CompositePolicy::Config p;
  p.variant = variant_from_string(cfg.variant);
  p.state_width = state_width;
  p.action_dim = PointEnv::make(cfg.env_name).spec().action_dim;
  p.n_primitives = n_primitives;
  p.d = cfg.arch.d;
  p.decoder_hidden = cfg.arch.decoder_hidden;
  p.flat_hidden = cfg.arch.flat_hidden;
  p.temperature = cfg.arch.temperature;
  return p;
}

namespace {

MetricsRecord episode_record(std::int64_t step, double ret, const PointEnv& env, bool success) {
  MetricsRecord r;
  r.step = step;
  r.episode_return = ret;
  r.final_distance = env.distance_to_goal();
  r.normalized_final_distance = r.final_distance / env.initial_distance();
  r.success = success ? 1 : 0;
  r.wall_clock = 0.0;
  return r;
}

}  // namespace

std::vector<MetricsRecord> evaluate_sac(const SacNets& nets, const Ensemble& ensemble,
                                        const std::string& env_name, int episodes,
                                        std::int64_t at_step, Rng& rng) {
  std::vector<MetricsRecord> out;
  PointEnv env = PointEnv::make(env_name);
  for (int ep = 0; ep < episodes; ++ep) {
    EnvObservation obs = env.reset(rng, /*eval_mode=*/true);
    double ret = 0.0;
    bool success = false;
    while (!env.done()) {
      auto prims = ensemble_act(ensemble, strip_goal(obs.s, env.spec().shat_width));
      Eigen::VectorXd a =
          nets.policy.act(obs.s, prims, PolicyMode::Deterministic, rng).action;
      StepResult res = env.step(a);
      ret += res.reward;
      success = success || res.info.goal_reached;
      obs = res.obs;
    }
    out.push_back(episode_record(at_step, ret, env, success));
  }
  return out;
}

std::vector<MetricsRecord> evaluate_hiro(const HiroNets& nets, const Ensemble& ensemble,
                                         const std::string& env_name, int episodes, int horizon_c,
                                         double goal_bound, std::int64_t at_step, Rng& rng) {
  std::vector<MetricsRecord> out;
  PointEnv env = PointEnv::make(env_name);
  for (int ep = 0; ep < episodes; ++ep) {
    EnvObservation obs = env.reset(rng, /*eval_mode=*/true);
    double ret = 0.0;
    bool success = false;
    int step_in_segment = 0;
    Eigen::VectorXd goal;
    while (!env.done()) {
      if (step_in_segment % horizon_c == 0) {
        autograd::NoGradGuard guard;
        Matrix row(1, obs.s.size());
        row.row(0) = obs.s.transpose();
        Tensor g = high_action_graph(nets.high_policy, row, goal_bound);
        goal = g.value().row(0).transpose();
      }
      auto prims = ensemble_act(ensemble, strip_goal(obs.s, env.spec().shat_width));
      Eigen::VectorXd sg(obs.s.size() + goal.size());
      sg << obs.s, goal;
      Eigen::VectorXd a =
          nets.low_policy.act(sg, prims, PolicyMode::Deterministic, rng).action;
      StepResult res = env.step(a);
      goal = goal_transition(obs.s, goal, res.obs.s);
      ret += res.reward;
      success = success || res.info.goal_reached;
      obs = res.obs;
      ++step_in_segment;
    }
    out.push_back(episode_record(at_step, ret, env, success));
  }
  return out;
}

namespace {

void write_train_log(const std::filesystem::path& path, const std::vector<EpisodeStats>& episodes) {
  std::string text = "step,episode_return,final_distance,normalized_final_distance,success\n";
  for (const EpisodeStats& e : episodes) {
    text += std::to_string(e.step) + "," + format_double(e.episode_return) + "," +
            format_double(e.final_distance) + "," + format_double(e.normalized_final_distance) +
            "," + std::to_string(e.success) + "\n";
  }
  write_text_atomic(path, text);
}

void write_summary(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                   const std::vector<MetricsRecord>& final_eval, std::int64_t total_steps) {
  double mean = 0.0, sq = 0.0, succ = 0.0;
  for (const MetricsRecord& r : final_eval) {
    mean += r.normalized_final_distance;
    succ += r.success;
  }
  std::size_t n = final_eval.size();
  if (n > 0) {
    mean /= static_cast<double>(n);
    for (const MetricsRecord& r : final_eval)
      sq += (r.normalized_final_distance - mean) * (r.normalized_final_distance - mean);
    sq = std::sqrt(sq / static_cast<double>(n));
    succ /= static_cast<double>(n);
  }
  nlohmann::json s = {{"env", cfg.env_name},
                      {"algo", cfg.algo},
                      {"variant", cfg.variant},
                      {"seed", cfg.seed},
                      {"total_steps", total_steps},
                      {"eval_episodes", n},
                      {"normalized_final_distance_mean", mean},
                      {"normalized_final_distance_std", sq},
                      {"success_rate", succ}};
  write_text_atomic(dir / "summary.json", s.dump(2) + "\n");
}

template <class Trainer>
RunResult drive_run(const ExperimentConfig& cfg, Trainer& trainer,
                    const std::function<std::vector<MetricsRecord>(std::int64_t, Rng&)>& eval_fn) {
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  write_text_atomic(dir / "config.json", cfg.to_json().dump(2) + "\n");

  bool resuming = !cfg.resume_from.empty();
  std::int64_t start_step = 0;
  std::int64_t metrics_rows = 0;
  if (resuming) {
    CheckpointReader reader{std::filesystem::path(cfg.resume_from)};
    trainer.load(reader);
    start_step = trainer.total_steps();
    metrics_rows = reader.extra().value("metrics_rows", 0);
    if (std::filesystem::exists(dir / "metrics.csv"))
      truncate_metrics(dir / "metrics.csv", metrics_rows);
  }
  MetricsWriter metrics(dir / "metrics.csv", resuming);
  metrics.set_rows_written(metrics_rows);

  auto save_checkpoint = [&](std::int64_t step) {
    CheckpointWriter w;
    trainer.save(w);
    w.extra()["metrics_rows"] = metrics.rows_written();
    w.write(dir, "checkpoint_" + std::to_string(step) + ".bin");
  };

  std::vector<MetricsRecord> last_eval;
  auto run_eval = [&](std::int64_t step) {
    Rng rng = make_stream(cfg.seed, "eval/" + std::to_string(step));
    last_eval = eval_fn(step, rng);
    for (const MetricsRecord& r : last_eval) metrics.append(r);
    metrics.flush();
  };

  auto t0 = std::chrono::steady_clock::now();
  std::int64_t target = start_step + std::max<std::int64_t>(cfg.steps - start_step, 0);
  if (cfg.steps > start_step) {
    try {
      trainer.run(cfg.steps - start_step, [&](std::int64_t step) {
        if (step % cfg.eval_interval == 0) run_eval(step);
        if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0)
          save_checkpoint(step);
      });
    } catch (const NumericalError&) {
      CheckpointWriter w;
      trainer.save(w);
      w.extra()["metrics_rows"] = metrics.rows_written();
      w.write(dir / "crash", "snapshot.bin");
      throw;
    }
  }
  if (last_eval.empty() || trainer.total_steps() % cfg.eval_interval != 0)
    run_eval(trainer.total_steps());
  save_checkpoint(trainer.total_steps());
  write_train_log(dir / "train_log.csv", trainer.episode_log());
  write_summary(dir, cfg, last_eval, trainer.total_steps());

  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("[%s %s %s seed=%llu] %lld steps in %.1fs\n", cfg.algo.c_str(), cfg.env_name.c_str(),
              cfg.variant.c_str(), static_cast<unsigned long long>(cfg.seed),
              static_cast<long long>(trainer.total_steps()), elapsed);
  (void)target;

  RunResult out;
  out.final_eval = last_eval;
  out.total_steps = trainer.total_steps();
  return out;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  PointEnv env = PointEnv::make(cfg.env_name);
  Ensemble ensemble = make_env_ensemble(cfg.env_name);
  Rng init = make_stream(cfg.seed, "init");

  if (cfg.algo == "sac") {
    CompositePolicy::Config pcfg =
        policy_config_for(cfg, env.spec().state_width(), static_cast<Index>(ensemble.size()));
    SacNets nets = SacNets::make(pcfg, cfg.arch.value_hidden, cfg.arch.q_hidden, init);
    SacTrainer trainer(std::move(env), std::move(ensemble), std::move(nets), cfg.sac, cfg.seed);
    return drive_run(cfg, trainer, [&](std::int64_t step, Rng& rng) {
      return evaluate_sac(trainer.nets(), trainer.ensemble(), cfg.env_name, cfg.eval_episodes,
                          step, rng);
    });
  }

  Index goal_dims = env.goal_space_dims();
  CompositePolicy::Config low_cfg = policy_config_for(
      cfg, env.spec().state_width() + goal_dims, static_cast<Index>(ensemble.size()));
  HiroNets nets = HiroNets::make(low_cfg, env.spec().state_width(), goal_dims, cfg.arch.q_hidden,
                                 cfg.arch.high_hidden, init);
  Ensemble eval_ensemble = make_env_ensemble(cfg.env_name);
  HiroTrainer trainer(std::move(env), std::move(ensemble), std::move(nets), cfg.hiro, cfg.seed);
  return drive_run(cfg, trainer, [&](std::int64_t step, Rng& rng) {
    return evaluate_hiro(trainer.nets(), eval_ensemble, cfg.env_name, cfg.eval_episodes,
                         cfg.hiro.horizon_c, cfg.hiro.goal_bound, step, rng);
  });
}

namespace {

struct Curve {
  std::vector<std::int64_t> steps;
  std::vector<double> mean_return, std_return, mean_norm, std_norm;
};

// Collapse per-episode rows into one point per eval step.
std::map<std::int64_t, std::pair<double, double>> per_step_means(
    const std::vector<MetricsRecord>& rows) {
  std::map<std::int64_t, std::vector<const MetricsRecord*>> by_step;
  for (const MetricsRecord& r : rows) by_step[r.step].push_back(&r);
  std::map<std::int64_t, std::pair<double, double>> out;
  for (auto& [step, list] : by_step) {
    double ret = 0.0, norm = 0.0;
    for (const MetricsRecord* r : list) {
      ret += r->episode_return;
      norm += r->normalized_final_distance;
    }
    out[step] = {ret / static_cast<double>(list.size()), norm / static_cast<double>(list.size())};
  }
  return out;
}

double trapezoid_auc(const std::vector<std::int64_t>& xs, const std::vector<double>& ys) {
  double auc = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    auc += 0.5 * (ys[i] + ys[i - 1]) * static_cast<double>(xs[i] - xs[i - 1]);
  return auc;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void run_ablation(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds) {
  const std::vector<std::string> variants = {"full", "no_attention", "att_brnn_removed"};
  std::filesystem::path root(base.out_dir);
  std::filesystem::create_directories(root);

  nlohmann::json report;
  for (const std::string& variant : variants) {
    // per-seed curves, shared step grid
    std::vector<std::map<std::int64_t, std::pair<double, double>>> curves;
    std::vector<double> aucs;
    for (std::uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.variant = variant;
      cfg.seed = seed;
      cfg.out_dir = (root / variant / ("seed_" + std::to_string(seed))).string();
      cfg.resume_from.clear();
      run_experiment(cfg);
      auto rows = read_metrics(std::filesystem::path(cfg.out_dir) / "metrics.csv");
      curves.push_back(per_step_means(rows));
    }

    Curve agg;
    for (const auto& [step, unused] : curves[0]) agg.steps.push_back(step);
    for (std::int64_t step : agg.steps) {
      double mr = 0, mn = 0;
      std::vector<double> rets, norms;
      for (auto& c : curves) {
        rets.push_back(c.at(step).first);
        norms.push_back(c.at(step).second);
      }
      for (double r : rets) mr += r;
      for (double x : norms) mn += x;
      mr /= static_cast<double>(rets.size());
      mn /= static_cast<double>(norms.size());
      double sr = 0, sn = 0;
      for (double r : rets) sr += (r - mr) * (r - mr);
      for (double x : norms) sn += (x - mn) * (x - mn);
      agg.mean_return.push_back(mr);
      agg.std_return.push_back(std::sqrt(sr / static_cast<double>(rets.size())));
      agg.mean_norm.push_back(mn);
      agg.std_norm.push_back(std::sqrt(sn / static_cast<double>(norms.size())));
    }
    for (auto& c : curves) {
      std::vector<double> ys;
      for (std::int64_t step : agg.steps) ys.push_back(c.at(step).first);
      aucs.push_back(trapezoid_auc(agg.steps, ys));
    }

    std::string csv = "step,mean_return,std_return,mean_normalized_distance,std_normalized_distance\n";
    for (std::size_t i = 0; i < agg.steps.size(); ++i)
      csv += std::to_string(agg.steps[i]) + "," + format_double(agg.mean_return[i]) + "," +
             format_double(agg.std_return[i]) + "," + format_double(agg.mean_norm[i]) + "," +
             format_double(agg.std_norm[i]) + "\n";
    write_text_atomic(root / ("ablate_" + variant + ".csv"), csv);

    report[variant] = {{"auc_per_seed", aucs}, {"auc_median", median(aucs)}};
  }
  report["ranking_ok"] =
      report["full"]["auc_median"].get<double>() >= report["no_attention"]["auc_median"].get<double>() &&
      report["full"]["auc_median"].get<double>() >=
          report["att_brnn_removed"]["auc_median"].get<double>();
  write_text_atomic(root / "ablate_report.json", report.dump(2) + "\n");
}

}  // namespace copo
