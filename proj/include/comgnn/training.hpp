#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "comgnn/comgnn.hpp"
#include "comgnn/stcomgnn.hpp"

namespace comgnn {

// ---------------------------------------------------------------------------
// Losses

// -sum over positives of (1/#positives) * log softmax(scores); instances
// without a positive label carry no signal and must be skipped by the caller.
inline Tensor ranking_loss(const Tensor& scores, const std::vector<int>& labels) {
  if (scores.rank() != 1 || scores.numel() != labels.size())
    throw std::invalid_argument("ranking_loss: " + shape_str(scores.shape()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  double positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("ranking_loss: labels must be 0/1");
    positives += l;
  }
  if (positives == 0) throw std::invalid_argument("ranking_loss: no positive label");
  std::vector<double> target(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) target[i] = labels[i] / positives;
  return softmax_cross_entropy(scores, target);
}

inline bool has_positive(const std::vector<int>& labels) {
  return std::any_of(labels.begin(), labels.end(), [](int l) { return l == 1; });
}

// mean |pred-target| / max(target, eps) plus lambda * sum of squared weights
inline Tensor mape_loss(const Tensor& pred, const std::vector<double>& target,
                        const ParamStore& params, double lambda, double eps = 1.0) {
  Tensor loss = mape_mean(pred, target, eps);
  if (lambda != 0.0) loss = add(loss, scale(params.l2(), lambda));
  return loss;
}

// ---------------------------------------------------------------------------
// Optimizer

class Adam {
 public:
  explicit Adam(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0) throw std::invalid_argument("adam: learning rate must be positive");
    for (auto& [name, t] : store.trainable()) {
      slots_.push_back({name, t, std::vector<double>(t.numel(), 0.0),
                        std::vector<double>(t.numel(), 0.0)});
    }
  }

  std::size_t steps() const { return t_; }

  // consumes the gradients accumulated by the last backward pass; gradients
  // of untouched parameters count as zero (moments keep decaying)
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Slot& s : slots_) {
      auto impl = s.param.impl();
      const bool has_grad = !impl->grad.empty();
      for (std::size_t i = 0; i < s.m.size(); ++i) {
        const double g = has_grad ? impl->grad[i] : 0.0;
        if (!std::isfinite(g))
          throw std::runtime_error("adam: non-finite gradient in '" + s.name + "'");
        s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
        s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
        impl->data[i] -= lr_ * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
      }
    }
  }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Slot> slots_;
};

// ---------------------------------------------------------------------------
// Ranking metrics

struct RankingInstance {
  std::size_t target = 0;              // entity the candidates compete for
  std::vector<std::size_t> candidates;  // candidate edge ids
  std::vector<int> labels;              // 1 = accepted
};

struct ScoredList {
  std::vector<double> scores;
  std::vector<std::size_t> ids;
  std::vector<int> labels;
};

// candidate-list indices, best first; ties broken by ascending id
inline std::vector<std::size_t> ranking_order(const std::vector<double>& scores,
                                              const std::vector<std::size_t>& ids) {
  if (scores.size() != ids.size()) throw std::invalid_argument("ranking_order: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

inline double recall_at_k(const std::vector<std::size_t>& order, const std::vector<int>& labels,
                          std::size_t k) {
  if (k == 0) throw std::invalid_argument("recall_at_k: k must be >= 1");
  double positives = 0;
  for (int l : labels) positives += l;
  if (positives == 0) throw std::invalid_argument("recall_at_k: no positive label");
  double hit = 0;
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r) hit += labels[order[r]];
  return hit / positives;
}

// mean over positives of precision at that positive's rank
inline double average_precision(const std::vector<std::size_t>& order,
                                const std::vector<int>& labels) {
  double positives = 0;
  for (int l : labels) positives += l;
  if (positives == 0) throw std::invalid_argument("average_precision: no positive label");
  double hits = 0, acc = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] == 1) {
      hits += 1;
      acc += hits / static_cast<double>(r + 1);
    }
  }
  return acc / positives;
}

// instances without positives are excluded from the averages
inline double map_metric(const std::vector<ScoredList>& lists) {
  double acc = 0;
  std::size_t n = 0;
  for (const ScoredList& l : lists) {
    if (!has_positive(l.labels)) continue;
    acc += average_precision(ranking_order(l.scores, l.ids), l.labels);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("map_metric: no instance has a positive label");
  return acc / static_cast<double>(n);
}

inline double mean_recall_at_k(const std::vector<ScoredList>& lists, std::size_t k) {
  double acc = 0;
  std::size_t n = 0;
  for (const ScoredList& l : lists) {
    if (!has_positive(l.labels)) continue;
    acc += recall_at_k(ranking_order(l.scores, l.ids), l.labels, k);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_recall_at_k: no instance has a positive label");
  return acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Forecast metrics

struct ForecastMetrics {
  double mape = 0, mae = 0, rmse = 0;
};

// MAPE averages only entries with target > 0, each clamped below by eps
inline ForecastMetrics forecast_metrics(const std::vector<double>& pred,
                                        const std::vector<double>& target, double eps = 1.0) {
  if (pred.size() != target.size() || pred.empty())
    throw std::invalid_argument("forecast_metrics: size mismatch or empty");
  ForecastMetrics m;
  std::size_t mape_n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double err = pred[i] - target[i];
    m.mae += std::abs(err);
    m.rmse += err * err;
    if (target[i] > 0) {
      m.mape += std::abs(err) / std::max(target[i], eps);
      ++mape_n;
    }
  }
  const double n = static_cast<double>(pred.size());
  m.mae /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.mape = mape_n ? m.mape / static_cast<double>(mape_n) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Flat key-value configuration

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin) {
    Config c;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      const std::string at = origin + ":" + std::to_string(n);
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(at + ": want key = value");
      const std::string key = trim(s.substr(0, eq));
      const std::string value = trim(s.substr(eq + 1));
      if (key.empty()) throw ConfigError(at + ": empty key");
      if (c.kv_.count(key)) throw ConfigError(at + ": duplicate key '" + key + "'");
      c.kv_[key] = value;
    }
    return c;
  }

  static Config parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }

  double num(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  std::size_t idx(const std::string& key, std::size_t dflt) const {
    const double v = num(key, static_cast<double>(dflt));
    if (v < 0 || v != std::floor(v))
      throw ConfigError("config: '" + key + "' is not a non-negative integer");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config: '" + key + "' is not a boolean: '" + it->second + "'");
  }

  void validate_keys(const std::set<std::string>& known) const {
    for (const auto& [key, value] : kv_)
      if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }
  std::map<std::string, std::string> kv_;
};

struct TrainConfig {
  std::string task = "ranking";  // ranking | forecast
  double lr = 1e-3;
  double lambda = 1e-5;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;  // harness-level evaluation cadence (not a file key)
};

inline std::set<std::string> config_keys() {
  return {
      "task", "lr", "lambda", "epochs", "seed",
      "dims.layers", "dims.node_state_dim", "dims.edge_state_dim", "dims.node_message_dim",
      "dims.edge_message_dim", "dims.attention_dim", "dims.meta_hidden_dim", "dims.leaky_slope",
      "st.k_spatial", "st.kernel", "st.n_blocks", "st.t_recent", "st.t_daily", "st.t_weekly",
      "st.horizon", "st.channels", "st.edge_channels", "st.out_dim", "st.step_minutes",
      "ablation.use_edge_states", "ablation.use_meta_attention", "ablation.collapse_types",
      "ablation.exclude_self_edge",
  };
}

inline void apply_config(const Config& c, TrainConfig& t) {
  t.task = c.str("task", t.task);
  if (t.task != "ranking" && t.task != "forecast")
    throw ConfigError("config: task must be 'ranking' or 'forecast', got '" + t.task + "'");
  t.lr = c.num("lr", t.lr);
  if (t.lr <= 0) throw ConfigError("config: lr must be positive");
  t.lambda = c.num("lambda", t.lambda);
  if (t.lambda < 0) throw ConfigError("config: lambda must be non-negative");
  t.epochs = c.idx("epochs", t.epochs);
  t.seed = static_cast<std::uint64_t>(c.idx("seed", static_cast<std::size_t>(t.seed)));
}

inline void apply_config(const Config& c, DimsConfig& d) {
  d.layers = c.idx("dims.layers", d.layers);
  d.node_state_dim = c.idx("dims.node_state_dim", d.node_state_dim);
  d.edge_state_dim = c.idx("dims.edge_state_dim", d.edge_state_dim);
  d.node_message_dim = c.idx("dims.node_message_dim", d.node_message_dim);
  d.edge_message_dim = c.idx("dims.edge_message_dim", d.edge_message_dim);
  d.attention_dim = c.idx("dims.attention_dim", d.attention_dim);
  d.meta_hidden_dim = c.idx("dims.meta_hidden_dim", d.meta_hidden_dim);
  d.leaky_slope = c.num("dims.leaky_slope", d.leaky_slope);
}

inline void apply_config(const Config& c, STConfig& s) {
  s.k_spatial = c.idx("st.k_spatial", s.k_spatial);
  s.kernel = c.idx("st.kernel", s.kernel);
  s.n_blocks = c.idx("st.n_blocks", s.n_blocks);
  s.t_recent = c.idx("st.t_recent", s.t_recent);
  s.t_daily = c.idx("st.t_daily", s.t_daily);
  s.t_weekly = c.idx("st.t_weekly", s.t_weekly);
  s.horizon = c.idx("st.horizon", s.horizon);
  s.channels = c.idx("st.channels", s.channels);
  s.edge_channels = c.idx("st.edge_channels", s.edge_channels);
  s.out_dim = c.idx("st.out_dim", s.out_dim);
  s.step_minutes = static_cast<long long>(c.idx("st.step_minutes",
                                                static_cast<std::size_t>(s.step_minutes)));
}

inline void apply_config(const Config& c, AblationConfig& a) {
  a.use_edge_states = c.flag("ablation.use_edge_states", a.use_edge_states);
  a.use_meta_attention = c.flag("ablation.use_meta_attention", a.use_meta_attention);
  a.collapse_types = c.flag("ablation.collapse_types", a.collapse_types);
  a.exclude_self_edge = c.flag("ablation.exclude_self_edge", a.exclude_self_edge);
}

// ---------------------------------------------------------------------------
// Metric log: `epoch,split,metric,value` lines, bit-stable for a fixed seed

struct MetricLog {
  std::vector<std::string> lines;

  void add(std::size_t epoch, const std::string& split, const std::string& metric, double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    lines.push_back(std::to_string(epoch) + "," + split + "," + metric + "," + buf);
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const std::string& l : lines) out << l << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }
};

struct TrainResult {
  bool diverged = false;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_valid = 0;  // MAP for ranking (higher better), MAPE for forecast (lower better)
};

// ---------------------------------------------------------------------------
// Ranking task: score candidate edges with a 2-layer co-evolution stack

class RankingModel {
 public:
  RankingModel(std::shared_ptr<const HeteroGraph> g, std::size_t score_rel,
               const DimsConfig& dims, const AblationConfig& ab, std::uint64_t seed)
      : g_(std::move(g)), score_rel_(score_rel), rng_(seed) {
    if (ab.collapse_types) {  // edge ids survive collapsing, so instances stay valid
      g_ = std::make_shared<const HeteroGraph>(collapse_types(*g_));
      score_rel_ = 0;
    }
    std::vector<std::size_t> node_in, edge_in;
    for (std::size_t t = 0; t < g_->num_node_types(); ++t)
      node_in.push_back(g_->node_type(t).attr_dim);
    for (std::size_t r = 0; r < g_->num_edge_types(); ++r)
      edge_in.push_back(g_->edge_type(r).attr_dim);
    stack_ = std::make_unique<CoMGNNStack>(g_, node_in, edge_in, dims, ab, store_, "", rng_);
    const std::size_t edge_out = ab.use_edge_states ? dims.edge_state_dim
                                                    : g_->edge_type(score_rel_).attr_dim;
    readout_ = std::make_unique<EdgeReadout>(dims.node_state_dim, edge_out, dims.node_state_dim,
                                             store_, "", rng_);
  }

  const HeteroGraph& graph() const { return *g_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  std::size_t score_rel() const { return score_rel_; }

  StateSet forward() const { return stack_->forward(init_states(*g_)); }

  Tensor instance_scores(const StateSet& out, const RankingInstance& inst) const {
    std::vector<std::size_t> locals;
    locals.reserve(inst.candidates.size());
    for (std::size_t gid : inst.candidates) {
      if (g_->edge_type_of(gid) != score_rel_)
        throw std::invalid_argument("instance candidate " + std::to_string(gid) +
                                    " is not a candidate edge");
      locals.push_back(g_->edge_local(gid));
    }
    return readout_->scores(*g_, out, score_rel_, locals);
  }

 private:
  std::shared_ptr<const HeteroGraph> g_;
  std::size_t score_rel_;
  Rng rng_;
  ParamStore store_;
  std::unique_ptr<CoMGNNStack> stack_;
  std::unique_ptr<EdgeReadout> readout_;
};

struct RankingEval {
  double map = 0;
  double recall = 0;
  std::size_t instances = 0;
};

inline RankingEval eval_ranking(const RankingModel& model,
                                const std::vector<RankingInstance>& instances, std::size_t k) {
  NoGradScope ng;
  StateSet out = model.forward();
  std::vector<ScoredList> lists;
  for (const RankingInstance& inst : instances) {
    if (!has_positive(inst.labels)) continue;
    ScoredList l;
    l.scores = model.instance_scores(out, inst).values();
    l.ids = inst.candidates;
    l.labels = inst.labels;
    lists.push_back(std::move(l));
  }
  RankingEval e;
  e.instances = lists.size();
  if (!lists.empty()) {
    e.map = map_metric(lists);
    e.recall = mean_recall_at_k(lists, k);
  }
  return e;
}

// full-batch training; keeps the best-validation parameters in the model
inline TrainResult train_ranking(RankingModel& model, const std::vector<RankingInstance>& train,
                                 const std::vector<RankingInstance>& valid,
                                 const TrainConfig& cfg, MetricLog& log,
                                 std::size_t recall_k = 5) {
  Adam opt(model.store(), cfg.lr);
  TrainResult res;
  res.best_valid = -1;
  std::vector<std::vector<double>> best = model.store().snapshot();
  std::vector<std::vector<double>> last_good = best;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    last_good = model.store().snapshot();
    double loss_value = 0;
    bool finite = true;
    {
      Tape tape;
      TapeScope scope(tape);
      model.store().zero_grads();
      StateSet out = model.forward();
      Tensor acc = Tensor::scalar(0.0);
      std::size_t n = 0;
      for (const RankingInstance& inst : train) {
        if (!has_positive(inst.labels)) continue;  // no signal to learn from
        acc = add(acc, ranking_loss(model.instance_scores(out, inst), inst.labels));
        ++n;
      }
      if (n == 0) throw std::invalid_argument("train: no training instance has a positive label");
      Tensor loss = scale(acc, 1.0 / static_cast<double>(n));
      if (cfg.lambda != 0.0) loss = add(loss, scale(model.store().l2(), cfg.lambda));
      loss_value = loss.item();
      if (std::isfinite(loss_value)) {
        backward(loss, tape);
      } else {
        finite = false;
      }
    }
    if (finite) {
      try {
        opt.step();
      } catch (const std::runtime_error&) {
        finite = false;
      }
    }
    if (!finite) {
      model.store().restore(last_good);
      res.diverged = true;
      res.epochs_run = epoch;
      return res;
    }
    res.epochs_run = epoch;

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      log.add(epoch, "train", "loss", loss_value);
      RankingEval tr = eval_ranking(model, train, recall_k);
      log.add(epoch, "train", "map", tr.map);
      log.add(epoch, "train", "recall@" + std::to_string(recall_k), tr.recall);
      RankingEval va = eval_ranking(model, valid, recall_k);
      log.add(epoch, "valid", "map", va.map);
      log.add(epoch, "valid", "recall@" + std::to_string(recall_k), va.recall);
      if (va.map > res.best_valid) {
        res.best_valid = va.map;
        res.best_epoch = epoch;
        best = model.store().snapshot();
      }
    }
  }
  model.store().restore(best);
  return res;
}

// ---------------------------------------------------------------------------
// Forecast task: periodic windows over one series, targets from channel 0

struct ForecastData {
  STSeries series;
  std::vector<long long> train_t0, valid_t0, test_t0;
};

// [node][step] targets aligned with the model's [N x horizon] output
inline std::vector<double> forecast_target(const STSeries& s, long long t0, std::size_t horizon) {
  const long long dt = series_step(s);
  const long long rel = t0 - s.timestamps.front();
  if (rel % dt != 0) throw DataError("target: time off the sampling grid");
  const long long i0 = rel / dt;
  const std::size_t n = s.node_signal.dim(1), f = s.node_signal.dim(2);
  if (i0 < 0 || static_cast<std::size_t>(i0) + horizon > s.timestamps.size())
    throw DataError("target: series does not cover forecast steps from " + std::to_string(t0));
  std::vector<double> y(n * horizon);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t h = 0; h < horizon; ++h)
      y[v * horizon + h] =
          s.node_signal.value_at(((static_cast<std::size_t>(i0) + h) * n + v) * f);
  return y;
}

class ForecastModel {
 public:
  ForecastModel(std::shared_ptr<const HeteroGraph> g, std::size_t node_channels,
                std::size_t edge_channels, const DimsConfig& dims, const AblationConfig& ab,
                const STConfig& cfg, std::uint64_t seed)
      : g_(std::move(g)), rng_(seed) {
    net_ = std::make_unique<STCoMGNN>(g_, node_channels, edge_channels, dims, ab, cfg, store_,
                                      rng_);
    // Input standardization; persisted with the checkpoint, excluded from
    // training and the weight penalty. Identity until fit_input_stats runs.
    node_shift_ = store_.constant("input.node.shift", Tensor::zeros({node_channels}));
    node_scale_ =
        store_.constant("input.node.scale",
                        Tensor::from({node_channels}, std::vector<double>(node_channels, 1.0)));
    if (edge_channels > 0) {
      edge_shift_ = store_.constant("input.edge.shift", Tensor::zeros({edge_channels}));
      edge_scale_ =
          store_.constant("input.edge.scale",
                          Tensor::from({edge_channels}, std::vector<double>(edge_channels, 1.0)));
    }
  }

  const HeteroGraph& graph() const { return *g_; }
  const STCoMGNN& net() const { return *net_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  // Channel means/stds over all steps strictly before `limit_minutes`.
  void fit_input_stats(const STSeries& series, long long limit_minutes) {
    std::size_t cut = 0;
    while (cut < series.timestamps.size() && series.timestamps[cut] < limit_minutes) ++cut;
    if (cut < 2) throw std::invalid_argument("fit_input_stats: fewer than two history steps");
    fit_channels(series.node_signal, cut, node_shift_, node_scale_);
    if (edge_shift_.numel() > 0 && series.edge_signal.rank() == 3 && series.edge_signal.dim(2) > 0)
      fit_channels(series.edge_signal, cut, edge_shift_, edge_scale_);
  }

  Tensor predict_at(const STSeries& series, long long t0) const {
    PeriodWindows w = build_period_windows(series, net_->config(), t0);
    // Anchor the forecast at the most recent observation: the net regresses the
    // standardized deviation from that value, so matching a hold-last baseline is
    // the zero function rather than a demand to reproduce absolute levels exactly.
    const Tensor& rec = w.recent.node_signal;  // [T × N × C]
    const std::size_t tn = rec.dim(0), n = rec.dim(1), c = rec.dim(2);
    const std::size_t horizon = net_->config().horizon;
    std::vector<double> anchor(n * horizon);
    for (std::size_t v = 0; v < n; ++v) {
      const double last = rec.value_at(((tn - 1) * n + v) * c);
      for (std::size_t h = 0; h < horizon; ++h) anchor[v * horizon + h] = last;
    }
    for (STSeries* s : {&w.recent, &w.daily, &w.weekly}) {
      s->node_signal = standardize(s->node_signal, node_shift_, node_scale_);
      if (edge_shift_.numel() > 0 && s->edge_signal.rank() == 3 && s->edge_signal.dim(2) > 0)
        s->edge_signal = standardize(s->edge_signal, edge_shift_, edge_scale_);
    }
    Tensor out = net_->predict(w);
    const Shape orig = out.shape();
    Tensor scaled = reshape(linear(reshape(out, {out.numel(), 1}),
                                   Tensor::from({1, 1}, {node_scale_.value_at(0)}),
                                   Tensor::from({1}, {0.0})),
                            orig);
    return add(scaled, Tensor::from(orig, std::move(anchor)));
  }

 private:
  static void fit_channels(const Tensor& x, std::size_t cut, Tensor& shift, Tensor& scale) {
    const std::size_t c = x.shape().back(), rows = cut * x.dim(1);
    for (std::size_t j = 0; j < c; ++j) {
      double mean = 0;
      for (std::size_t i = 0; i < rows; ++i) mean += x.value_at(i * c + j);
      mean /= static_cast<double>(rows);
      double var = 0;
      for (std::size_t i = 0; i < rows; ++i) {
        const double d = x.value_at(i * c + j) - mean;
        var += d * d;
      }
      shift.set_value(j, mean);
      scale.set_value(j, std::max(std::sqrt(var / static_cast<double>(rows)), 1e-8));
    }
  }

  // (x - shift) / scale per channel, built as a constant affine map
  static Tensor standardize(const Tensor& x, const Tensor& shift, const Tensor& scale) {
    const std::size_t c = x.shape().back();
    std::vector<double> w(c * c, 0.0), b(c);
    for (std::size_t j = 0; j < c; ++j) {
      w[j * c + j] = 1.0 / scale.value_at(j);
      b[j] = -shift.value_at(j) / scale.value_at(j);
    }
    const Shape orig = x.shape();
    return reshape(linear(reshape(x, {x.numel() / c, c}), Tensor::from({c, c}, std::move(w)),
                          Tensor::from({c}, std::move(b))),
                   orig);
  }

  std::shared_ptr<const HeteroGraph> g_;
  Rng rng_;
  ParamStore store_;
  Tensor node_shift_, node_scale_, edge_shift_, edge_scale_;
  std::unique_ptr<STCoMGNN> net_;
};

// pooled and per-step error metrics over a list of forecast windows
inline void log_forecast_metrics(const ForecastModel& model, const ForecastData& data,
                                 const std::vector<long long>& t0s, std::size_t epoch,
                                 const std::string& split, MetricLog& log, double* pooled_mape) {
  NoGradScope ng;
  const std::size_t horizon = model.net().config().horizon;
  std::vector<std::vector<double>> pred_h(horizon), want_h(horizon);
  std::vector<double> pred_all, want_all;
  for (long long t0 : t0s) {
    Tensor p = model.predict_at(data.series, t0);
    std::vector<double> y = forecast_target(data.series, t0, horizon);
    for (std::size_t v = 0; v < p.dim(0); ++v)
      for (std::size_t h = 0; h < horizon; ++h) {
        pred_h[h].push_back(p.value_at(v * horizon + h));
        want_h[h].push_back(y[v * horizon + h]);
        pred_all.push_back(p.value_at(v * horizon + h));
        want_all.push_back(y[v * horizon + h]);
      }
  }
  ForecastMetrics pooled = forecast_metrics(pred_all, want_all);
  log.add(epoch, split, "mape", pooled.mape);
  log.add(epoch, split, "mae", pooled.mae);
  log.add(epoch, split, "rmse", pooled.rmse);
  for (std::size_t h = 0; h < horizon; ++h) {
    ForecastMetrics m = forecast_metrics(pred_h[h], want_h[h]);
    const std::string tag = "@" + std::to_string(h + 1);
    log.add(epoch, split, "mape" + tag, m.mape);
    log.add(epoch, split, "mae" + tag, m.mae);
    log.add(epoch, split, "rmse" + tag, m.rmse);
  }
  if (pooled_mape) *pooled_mape = pooled.mape;
}

inline TrainResult train_forecast(ForecastModel& model, const ForecastData& data,
                                  const TrainConfig& cfg, MetricLog& log) {
  Adam opt(model.store(), cfg.lr);
  TrainResult res;
  res.best_valid = std::numeric_limits<double>::infinity();
  const std::size_t horizon = model.net().config().horizon;
  if (data.train_t0.empty()) throw std::invalid_argument("train: no training windows");
  model.fit_input_stats(data.series, data.train_t0.front());
  std::vector<std::vector<double>> best = model.store().snapshot();
  std::vector<std::vector<double>> last_good = best;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    last_good = model.store().snapshot();
    double loss_value = 0;
    bool finite = true;
    // One update per epoch from the full-batch gradient. Each window gets its
    // own tape so memory stays bounded by a single forward pass; gradients
    // accumulate across tapes, which sums to the batched gradient exactly.
    model.store().zero_grads();
    const double inv_n = 1.0 / static_cast<double>(data.train_t0.size());
    for (long long t0 : data.train_t0) {
      Tape tape;
      TapeScope scope(tape);
      Tensor part = scale(mape_mean(model.predict_at(data.series, t0),
                                    forecast_target(data.series, t0, horizon), 1.0),
                          inv_n);
      loss_value += part.item();
      if (!std::isfinite(loss_value)) {
        finite = false;
        break;
      }
      backward(part, tape);
    }
    if (finite && cfg.lambda != 0.0) {
      Tape tape;
      TapeScope scope(tape);
      Tensor penalty = scale(model.store().l2(), cfg.lambda);
      loss_value += penalty.item();
      if (std::isfinite(loss_value)) {
        backward(penalty, tape);
      } else {
        finite = false;
      }
    }
    if (finite) {
      try {
        opt.step();
      } catch (const std::runtime_error&) {
        finite = false;
      }
    }
    if (!finite) {
      model.store().restore(last_good);
      res.diverged = true;
      res.epochs_run = epoch;
      return res;
    }
    res.epochs_run = epoch;

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      log.add(epoch, "train", "loss", loss_value);
      double valid_mape = 0;
      log_forecast_metrics(model, data, data.valid_t0, epoch, "valid", log, &valid_mape);
      if (valid_mape < res.best_valid) {
        res.best_valid = valid_mape;
        res.best_epoch = epoch;
        best = model.store().snapshot();
      }
    }
  }
  model.store().restore(best);
  return res;
}

}  // namespace comgnn
