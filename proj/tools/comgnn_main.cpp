// comgnn: generate synthetic task bundles, train and evaluate the models,
// run gradient checks, and describe parameter layouts.
//
// exit codes: 0 ok, 2 usage, 3 data/config error, 4 training divergence

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "comgnn/datagen.hpp"

namespace fs = std::filesystem;
using namespace comgnn;

namespace {

constexpr int kExitUsage = 2, kExitData = 3, kExitDiverged = 4;

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Tracks files created by a command so failed runs leave nothing behind.
struct OutGuard {
  std::vector<fs::path> files;
  std::vector<fs::path> dirs;
  bool ok = false;
  ~OutGuard() {
    if (ok) return;
    for (const fs::path& p : files) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    for (const fs::path& p : dirs) {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  }
};

void write_text(const fs::path& path, const std::string& content, OutGuard& guard) {
  fs::create_directories(path.parent_path());
  guard.files.push_back(path);
  std::ofstream f(path, std::ios::binary);
  f << content;
  if (!f.good()) throw DataError("cannot write " + path.string());
}

struct Options {
  std::string config, data, out, task, model;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool no_het = false, no_edge = false, no_meta = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key = value settings file");
  cmd->add_option("--data", o.data, "task bundle directory");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "random seed")->each([&o](const std::string&) {
    o.seed_set = true;
  });
  cmd->add_option("--task", o.task, "ranking or forecast")
      ->check(CLI::IsMember({"ranking", "forecast"}));
  cmd->add_flag("--no-het", o.no_het, "collapse node/edge types into one space");
  cmd->add_flag("--no-edge-info", o.no_edge, "drop evolving edge states");
  cmd->add_flag("--no-meta-att", o.no_meta, "uniform attention instead of meta attention");
}

struct Settings {
  TrainConfig train;
  DimsConfig dims;
  STConfig st;
  AblationConfig ablation;
};

Settings load_settings(const Options& o) {
  Settings s;
  if (!o.config.empty()) {
    Config c = Config::parse_file(o.config);
    c.validate_keys(config_keys());
    apply_config(c, s.train);
    apply_config(c, s.dims);
    apply_config(c, s.st);
    apply_config(c, s.ablation);
  }
  if (o.seed_set) s.train.seed = o.seed;
  if (o.no_het) s.ablation.collapse_types = true;
  if (o.no_edge) s.ablation.use_edge_states = false;
  if (o.no_meta) s.ablation.use_meta_attention = false;
  return s;
}

std::string bundle_task(const fs::path& data_dir) {
  Config c = Config::parse_file((data_dir / "genspec.txt").string());
  if (!c.has("task")) throw DataError(data_dir.string() + "/genspec.txt: missing task");
  return c.str("task", "");
}

std::string settings_text(const Settings& s, const std::string& task) {
  std::ostringstream f;
  f << "task = " << task << "\nseed = " << s.train.seed << "\nlr = " << fmt_num(s.train.lr)
    << "\nlambda = " << fmt_num(s.train.lambda) << "\nepochs = " << s.train.epochs << "\n";
  const DimsConfig& d = s.dims;
  f << "dims.layers = " << d.layers << "\ndims.node_state_dim = " << d.node_state_dim
    << "\ndims.edge_state_dim = " << d.edge_state_dim
    << "\ndims.node_message_dim = " << d.node_message_dim
    << "\ndims.edge_message_dim = " << d.edge_message_dim
    << "\ndims.attention_dim = " << d.attention_dim
    << "\ndims.meta_hidden_dim = " << d.meta_hidden_dim
    << "\ndims.leaky_slope = " << fmt_num(d.leaky_slope) << "\n";
  const AblationConfig& a = s.ablation;
  f << "ablation.use_edge_states = " << (a.use_edge_states ? "true" : "false")
    << "\nablation.use_meta_attention = " << (a.use_meta_attention ? "true" : "false")
    << "\nablation.collapse_types = " << (a.collapse_types ? "true" : "false")
    << "\nablation.exclude_self_edge = " << (a.exclude_self_edge ? "true" : "false") << "\n";
  if (task == "forecast") {
    const STConfig& t = s.st;
    f << "st.k_spatial = " << t.k_spatial << "\nst.kernel = " << t.kernel
      << "\nst.n_blocks = " << t.n_blocks << "\nst.t_recent = " << t.t_recent
      << "\nst.t_daily = " << t.t_daily << "\nst.t_weekly = " << t.t_weekly
      << "\nst.horizon = " << t.horizon << "\nst.channels = " << t.channels
      << "\nst.edge_channels = " << t.edge_channels << "\nst.out_dim = " << t.out_dim
      << "\nst.step_minutes = " << t.step_minutes << "\n";
  }
  return f.str();
}

// forecast split metrics rendered as "split.metric = value" result lines
void forecast_result_lines(const ForecastModel& model, const ForecastData& data,
                           const std::vector<long long>& t0s, const std::string& split,
                           std::ostringstream& out) {
  MetricLog scratch;
  log_forecast_metrics(model, data, t0s, 0, split, scratch, nullptr);
  for (const std::string& line : scratch.lines) {
    // "0,split,metric,value"
    const std::size_t a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
    out << line.substr(a + 1, b - a - 1) << '.' << line.substr(b + 1, c - b - 1) << " = "
        << line.substr(c + 1) << "\n";
  }
}

void ranking_result_lines(const RankingModel& model, const std::vector<RankingInstance>& insts,
                          const std::string& split, std::ostringstream& out) {
  out << split << ".instances = " << insts.size() << "\n";
  out << split << ".map = " << fmt_num(eval_ranking(model, insts, 1).map) << "\n";
  for (std::size_t k : {1, 5, 10})
    out << split << ".recall@" << k << " = " << fmt_num(eval_ranking(model, insts, k).recall)
        << "\n";
}

int cmd_generate(const Options& o) {
  if (o.task.empty() || o.out.empty()) {
    std::cerr << "generate needs --task and --out\n";
    return kExitUsage;
  }
  OutGuard guard;
  const fs::path out = o.out;
  if (!fs::exists(out)) guard.dirs.push_back(out);
  const std::uint64_t seed = o.seed_set ? o.seed : 1;
  if (o.task == "ranking") {
    SynthRankingSpec spec;
    spec.seed = seed;
    save_ranking_bundle(out, gen_ranking_task(spec), spec);
    std::cout << "ranking bundle: " << spec.n_routes << " targets, " << spec.candidate_count
              << " candidates each, seed " << seed << " -> " << out.string() << "\n";
  } else {
    SynthDiffusionSpec spec;
    spec.seed = seed;
    DiffusionBundle b = gen_diffusion_task(spec);
    save_forecast_bundle(out, b, spec);
    std::cout << "forecast bundle: " << spec.n_nodes << " segments, " << spec.t_len
              << " steps, seed " << seed << " -> " << out.string() << "\n";
  }
  guard.ok = true;
  return 0;
}

int cmd_train(const Options& o) {
  if (o.data.empty() || o.out.empty()) {
    std::cerr << "train needs --data and --out\n";
    return kExitUsage;
  }
  const std::string task = bundle_task(o.data);
  if (!o.task.empty() && o.task != task) {
    std::cerr << "--task " << o.task << " does not match bundle task " << task << "\n";
    return kExitUsage;
  }
  Settings s = load_settings(o);
  if (!o.config.empty() && Config::parse_file(o.config).has("task") && s.train.task != task) {
    std::cerr << "config task " << s.train.task << " does not match bundle task " << task << "\n";
    return kExitUsage;
  }

  OutGuard guard;
  const fs::path out = o.out;
  if (!fs::exists(out)) guard.dirs.push_back(out);
  fs::create_directories(out);

  MetricLog log;
  TrainResult res;
  std::ostringstream results;
  results << "task = " << task << "\n";

  if (task == "ranking") {
    RankingData data = load_ranking_bundle(o.data);
    RankingModel model(data.graph, kConsider, s.dims, s.ablation, s.train.seed);
    res = train_ranking(model, data.train, data.valid, s.train, log);
    results << "diverged = " << (res.diverged ? 1 : 0) << "\nepochs = " << res.epochs_run
            << "\nbest_epoch = " << res.best_epoch << "\n";
    if (!res.diverged) ranking_result_lines(model, data.valid, "valid", results);
    guard.files.push_back(out / "model.bin");
    model.store().save(out / "model.bin");
  } else {
    ForecastBundle b = load_forecast_bundle(o.data);
    ForecastModel model(b.graph, b.data.series.node_signal.dim(2),
                        b.data.series.edge_signal.dim(2), s.dims, s.ablation, s.st, s.train.seed);
    res = train_forecast(model, b.data, s.train, log);
    results << "diverged = " << (res.diverged ? 1 : 0) << "\nepochs = " << res.epochs_run
            << "\nbest_epoch = " << res.best_epoch << "\n";
    if (!res.diverged) {
      forecast_result_lines(model, b.data, b.data.valid_t0, "valid", results);
      if (!b.data.test_t0.empty())
        forecast_result_lines(model, b.data, b.data.test_t0, "test", results);
    }
    guard.files.push_back(out / "model.bin");
    model.store().save(out / "model.bin");
  }

  write_text(out / "model_config.txt", settings_text(s, task), guard);
  guard.files.push_back(out / "metrics.csv");
  log.write(out / "metrics.csv");
  write_text(out / "results.txt", results.str(), guard);
  guard.ok = true;

  if (res.diverged) {
    std::cerr << "training diverged after epoch " << res.epochs_run
              << "; last good parameters kept\n";
    return kExitDiverged;
  }
  std::cout << "trained " << task << " model for " << res.epochs_run << " epochs (best epoch "
            << res.best_epoch << ") -> " << out.string() << "\n";
  return 0;
}

// Rebuild a trained model from its output directory.
struct LoadedModel {
  std::string task;
  Settings s;
  std::unique_ptr<RankingModel> ranking;
  std::unique_ptr<ForecastModel> forecast;
};

LoadedModel load_model(const fs::path& model_dir, const fs::path& data_dir, RankingData* rdata,
                       ForecastBundle* fbundle) {
  Config c = Config::parse_file((model_dir / "model_config.txt").string());
  c.validate_keys(config_keys());
  LoadedModel m;
  apply_config(c, m.s.train);
  apply_config(c, m.s.dims);
  apply_config(c, m.s.st);
  apply_config(c, m.s.ablation);
  m.task = m.s.train.task;
  const std::string task = bundle_task(data_dir);
  if (task != m.task)
    throw DataError("model task " + m.task + " does not match bundle task " + task);
  if (m.task == "ranking") {
    *rdata = load_ranking_bundle(data_dir);
    m.ranking = std::make_unique<RankingModel>(rdata->graph, kConsider, m.s.dims, m.s.ablation,
                                               m.s.train.seed);
    m.ranking->store().load(model_dir / "model.bin");
  } else {
    *fbundle = load_forecast_bundle(data_dir);
    m.forecast = std::make_unique<ForecastModel>(
        fbundle->graph, fbundle->data.series.node_signal.dim(2),
        fbundle->data.series.edge_signal.dim(2), m.s.dims, m.s.ablation, m.s.st, m.s.train.seed);
    m.forecast->store().load(model_dir / "model.bin");
  }
  return m;
}

int cmd_eval(const Options& o) {
  if (o.data.empty() || o.model.empty() || o.out.empty()) {
    std::cerr << "eval needs --data, --model and --out\n";
    return kExitUsage;
  }
  RankingData rdata;
  ForecastBundle fbundle;
  LoadedModel m = load_model(o.model, o.data, &rdata, &fbundle);

  std::ostringstream results;
  results << "task = " << m.task << "\nmodel = " << o.model << "\n";
  if (m.task == "ranking") {
    ranking_result_lines(*m.ranking, rdata.valid, "valid", results);
  } else {
    forecast_result_lines(*m.forecast, fbundle.data, fbundle.data.valid_t0, "valid", results);
    if (!fbundle.data.test_t0.empty())
      forecast_result_lines(*m.forecast, fbundle.data, fbundle.data.test_t0, "test", results);
  }
  OutGuard guard;
  const fs::path out = o.out;
  if (!fs::exists(out)) guard.dirs.push_back(out);
  write_text(out / "results.txt", results.str(), guard);
  guard.ok = true;
  std::cout << results.str();
  return 0;
}

int cmd_predict(const Options& o) {
  if (o.data.empty() || o.model.empty() || o.out.empty()) {
    std::cerr << "predict needs --data, --model and --out\n";
    return kExitUsage;
  }
  RankingData rdata;
  ForecastBundle fbundle;
  LoadedModel m = load_model(o.model, o.data, &rdata, &fbundle);

  std::ostringstream csv;
  std::size_t rows = 0;
  if (m.task == "ranking") {
    csv << "target,edge,score\n";
    NoGradScope ng;
    StateSet states = m.ranking->forward();
    for (const RankingInstance& inst : rdata.valid) {
      Tensor scores = m.ranking->instance_scores(states, inst);
      for (std::size_t i = 0; i < inst.candidates.size(); ++i, ++rows)
        csv << inst.target << ',' << inst.candidates[i] << ',' << fmt_num(scores.value_at(i))
            << '\n';
    }
  } else {
    csv << "t0,node,step,value\n";
    NoGradScope ng;
    const std::vector<long long>& t0s =
        fbundle.data.test_t0.empty() ? fbundle.data.valid_t0 : fbundle.data.test_t0;
    const std::size_t horizon = m.s.st.horizon;
    for (long long t0 : t0s) {
      Tensor p = m.forecast->predict_at(fbundle.data.series, t0);
      for (std::size_t v = 0; v < p.dim(0); ++v)
        for (std::size_t h = 0; h < horizon; ++h, ++rows)
          csv << t0 << ',' << v << ',' << h + 1 << ',' << fmt_num(p.value_at(v * horizon + h))
              << '\n';
    }
  }
  OutGuard guard;
  const fs::path out = o.out;
  if (!fs::exists(out)) guard.dirs.push_back(out);
  write_text(out / "predictions.csv", csv.str(), guard);
  guard.ok = true;
  std::cout << "wrote " << rows << " predictions -> " << (out / "predictions.csv").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck: verify analytic gradients on seeded toy models.

void randomize(ParamStore& store, Rng& rng) {
  for (const auto& [name, t] : store.entries()) {
    Tensor h = t;  // handles share storage
    for (std::size_t i = 0; i < h.numel(); ++i) h.set_value(i, rng.uniform(-0.8, 0.8));
  }
}

DimsConfig toy_dims() {
  DimsConfig d;
  d.layers = 2;
  d.node_state_dim = 3;
  d.edge_state_dim = 3;
  d.node_message_dim = 2;
  d.edge_message_dim = 2;
  d.attention_dim = 2;
  d.meta_hidden_dim = 3;
  return d;
}

std::shared_ptr<const HeteroGraph> toy_graph() {
  HeteroGraph g;
  g.add_node_type("alpha", 2);
  g.add_node_type("beta", 3);
  g.add_edge_type("ab", 0, 1, 1);
  g.add_edge_type("ba", 1, 0, 2);
  Rng rng(404);
  for (int i = 0; i < 4; ++i) g.add_node(0, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
  for (int i = 0; i < 3; ++i)
    g.add_node(1, {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  g.add_edge(0, 0, 4, {0.3});
  g.add_edge(0, 1, 4, {-0.2});
  g.add_edge(0, 2, 5, {0.7});
  g.add_edge(0, 3, 6, {0.1});
  g.add_edge(1, 4, 0, {0.5, -0.4});
  g.add_edge(1, 5, 2, {-0.6, 0.2});
  g.add_edge(1, 6, 3, {0.8, 0.9});
  g.finalize();
  return std::make_shared<const HeteroGraph>(std::move(g));
}

int cmd_gradcheck(const Options& o) {
  const std::uint64_t seed = o.seed_set ? o.seed : 7;
  std::map<std::string, double> group_err;
  auto group_of = [](const std::string& name) {
    const std::size_t dot = name.rfind('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
  };

  {
    auto g = toy_graph();
    ParamStore store;
    Rng rng(seed);
    CoMGNNStack stack(g, {2, 3}, {1, 2}, toy_dims(), AblationConfig{}, store, "", rng);
    EdgeReadout readout(3, 3, 3, store, "readout.", rng);
    Rng prng(seed + 1);
    randomize(store, prng);
    auto loss = [&]() {
      StateSet out = stack.forward(init_states(*g));
      Tensor acc = sumsq(readout.scores(*g, out, 0, {0, 1, 2, 3}));
      for (const Tensor& t : out.node_states) acc = add(acc, sumsq(t));
      for (const Tensor& t : out.edge_states) acc = add(acc, sumsq(t));
      return acc;
    };
    for (auto& [name, t] : store.trainable()) {
      const double err = param_grad_check(loss, t);
      double& slot = group_err["graph-layer " + group_of(name)];
      slot = std::max(slot, err);
    }
  }

  {
    HeteroGraph g;
    g.add_node_type("seg", 2);
    g.add_edge_type("fwd", 0, 0, 1);
    g.add_edge_type("rev", 0, 0, 1);
    Rng arng(505);
    for (int i = 0; i < 4; ++i) g.add_node(0, {arng.uniform(-1, 1), arng.uniform(-1, 1)});
    g.add_edge(0, 0, 1, {0.4});
    g.add_edge(0, 1, 2, {-0.3});
    g.add_edge(0, 2, 3, {0.6});
    g.add_edge(1, 1, 0, {0.2});
    g.add_edge(1, 3, 2, {-0.5});
    g.finalize();
    auto gp = std::make_shared<const HeteroGraph>(std::move(g));

    STConfig st;
    st.k_spatial = 1;
    st.kernel = 2;
    st.t_recent = 4;
    st.t_daily = 3;
    st.t_weekly = 3;
    st.horizon = 2;
    st.channels = 2;
    st.edge_channels = 2;
    st.out_dim = 2;

    const std::size_t t_len = 2100;
    Rng srng(seed + 2);
    std::vector<double> sig(t_len * 4);
    for (double& v : sig) v = srng.uniform(0.5, 2.0);
    STSeries series;
    series.node_signal = Tensor::from({t_len, 4, 1}, std::move(sig));
    for (std::size_t t = 0; t < t_len; ++t)
      series.timestamps.push_back(static_cast<long long>(t) * 5);
    series.edge_signal = edge_dynamic_features(series.node_signal, *gp);

    DimsConfig dims = toy_dims();
    dims.layers = 1;
    ParamStore store;
    Rng rng(seed + 3);
    STCoMGNN net(gp, 1, 2, dims, AblationConfig{}, st, store, rng);
    Rng prng(seed + 4);
    randomize(store, prng);
    const long long t0 = 10400;
    auto loss = [&]() { return sumsq(net.predict(build_period_windows(series, st, t0))); };
    for (auto& [name, t] : store.trainable()) {
      const double err = param_grad_check(loss, t);
      double& slot = group_err["spatiotemporal " + group_of(name)];
      slot = std::max(slot, err);
    }
  }

  bool all_ok = true;
  for (const auto& [group, err] : group_err) {
    const bool ok = err < 1e-5;
    all_ok = all_ok && ok;
    std::cout << (ok ? "ok  " : "FAIL") << "  " << fmt_num(err) << "  " << group << "\n";
  }
  std::cout << (all_ok ? "all gradients match finite differences (< 1e-5)"
                       : "gradient mismatch detected")
            << "\n";
  return all_ok ? 0 : 1;
}

int cmd_describe(const Options& o) {
  Settings s = load_settings(o);
  const std::string task = o.task.empty() ? "ranking" : o.task;
  if (task == "ranking") {
    SynthRankingSpec spec;
    spec.n_routes = 1;
    spec.mu = 1;
    spec.candidate_count = 2;
    spec.seed = 1;
    RankingBundle b = gen_ranking_task(spec);
    auto g = std::make_shared<const HeteroGraph>(std::move(b.graph));
    RankingModel model(g, kConsider, s.dims, s.ablation, s.train.seed);
    model.store().describe(std::cout);
  } else {
    SynthDiffusionSpec spec;
    spec.n_nodes = 4;
    spec.n_edges = 6;
    spec.t_len = 2;
    spec.seed = 1;
    DiffusionBundle b = gen_diffusion_task(spec);
    auto g = std::make_shared<const HeteroGraph>(std::move(b.graph));
    ForecastModel model(g, 1, 2, s.dims, s.ablation, s.st, s.train.seed);
    model.store().describe(std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("COMGNN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 0) {
      std::cerr << "COMGNN_THREADS must be a non-negative integer, got '" << env << "'\n";
      return kExitUsage;
    }
    // this build always runs sequential-deterministic; the cap is honored trivially
  }

  CLI::App app{"co-evolving heterogeneous graph networks: synthetic tasks, training, checks"};
  app.require_subcommand(1);
  Options o;
  add_common(app.add_subcommand("generate", "write a synthetic task bundle"), o);
  add_common(app.add_subcommand("train", "train a model on a bundle"), o);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained model");
  add_common(eval, o);
  eval->add_option("--model", o.model, "directory written by train");
  CLI::App* predict = app.add_subcommand("predict", "write raw predictions");
  add_common(predict, o);
  predict->add_option("--model", o.model, "directory written by train");
  add_common(app.add_subcommand("gradcheck", "check analytic gradients on toy models"), o);
  add_common(app.add_subcommand("describe-params", "list parameter names and shapes"), o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (app.got_subcommand("generate")) return cmd_generate(o);
    if (app.got_subcommand("train")) return cmd_train(o);
    if (app.got_subcommand("eval")) return cmd_eval(o);
    if (app.got_subcommand("predict")) return cmd_predict(o);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(o);
    if (app.got_subcommand("describe-params")) return cmd_describe(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
