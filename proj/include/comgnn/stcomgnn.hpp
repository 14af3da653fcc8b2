#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "comgnn/comgnn.hpp"

namespace comgnn {

// ---------------------------------------------------------------------------
// Time-aligned signals on a static graph

struct STSeries {
  Tensor node_signal;                  // [T x N x F_v]
  Tensor edge_signal;                  // [T x E x F_e] (F_e may be 0)
  std::vector<long long> timestamps;   // epoch minutes, strictly increasing, uniform step
};

inline long long series_step(const STSeries& s) {
  if (s.timestamps.size() < 2) throw DataError("series: need at least two timestamps");
  return s.timestamps[1] - s.timestamps[0];
}

inline void validate_series(const STSeries& s, const HeteroGraph& g) {
  if (s.node_signal.rank() != 3)
    throw DataError("series: node signal must be [time x nodes x channels], got " +
                    shape_str(s.node_signal.shape()));
  const std::size_t t = s.node_signal.dim(0);
  if (t != s.timestamps.size())
    throw DataError("series: " + std::to_string(t) + " signal steps vs " +
                    std::to_string(s.timestamps.size()) + " timestamps");
  if (s.node_signal.dim(1) != g.num_nodes())
    throw DataError("series: node signal covers " + std::to_string(s.node_signal.dim(1)) +
                    " nodes, graph has " + std::to_string(g.num_nodes()));
  if (s.edge_signal.numel() > 0 || s.edge_signal.rank() == 3) {
    if (s.edge_signal.rank() != 3 || s.edge_signal.dim(0) != t ||
        s.edge_signal.dim(1) != g.num_edges())
      throw DataError("series: edge signal shape " + shape_str(s.edge_signal.shape()) +
                      " does not match [" + std::to_string(t) + " x " +
                      std::to_string(g.num_edges()) + " x F]");
  }
  const long long dt = series_step(s);
  if (dt <= 0) throw DataError("series: timestamps must be strictly increasing");
  for (std::size_t i = 1; i < s.timestamps.size(); ++i)
    if (s.timestamps[i] - s.timestamps[i - 1] != dt)
      throw DataError("series: non-uniform step at index " + std::to_string(i));
  for (double v : s.node_signal.values())
    if (!std::isfinite(v)) throw DataError("series: non-finite node value");
  for (double v : s.edge_signal.values())
    if (!std::isfinite(v)) throw DataError("series: non-finite edge value");
}

// For each edge and channel: mean and absolute difference of the endpoint
// signals, so edges get a dynamic stream even when only nodes are measured.
inline Tensor edge_dynamic_features(const Tensor& node_signal, const HeteroGraph& g) {
  if (node_signal.rank() != 3)
    throw std::invalid_argument("edge_dynamic_features: want [T x N x F], got " +
                                shape_str(node_signal.shape()));
  const std::size_t t_len = node_signal.dim(0), n = node_signal.dim(1), f = node_signal.dim(2);
  if (n != g.num_nodes())
    throw std::invalid_argument("edge_dynamic_features: signal does not cover the graph");
  const std::size_t m = g.num_edges();
  std::vector<double> out(t_len * m * 2 * f);
  const std::vector<double>& x = node_signal.values();
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t e = 0; e < m; ++e) {
      const double* xi = &x[(t * n + g.edge_src(e)) * f];
      const double* xj = &x[(t * n + g.edge_dst(e)) * f];
      double* row = &out[(t * m + e) * 2 * f];
      for (std::size_t c = 0; c < f; ++c) {
        row[2 * c] = 0.5 * (xi[c] + xj[c]);
        row[2 * c + 1] = std::abs(xi[c] - xj[c]);
      }
    }
  return Tensor::from({t_len, m, 2 * f}, std::move(out));
}

// ---------------------------------------------------------------------------
// Configuration

struct STConfig {
  std::size_t k_spatial = 2;   // stacked spatial layers per sandwich
  std::size_t kernel = 3;      // temporal convolution width
  std::size_t n_blocks = 1;    // sandwich blocks per component
  std::size_t t_recent = 12;   // window lengths, in steps
  std::size_t t_daily = 6;
  std::size_t t_weekly = 6;
  std::size_t horizon = 6;     // forecast steps per node
  std::size_t channels = 16;       // node temporal channels
  std::size_t edge_channels = 8;   // edge temporal channels (per relation kernels)
  std::size_t out_dim = 16;        // collapsed per-component state width
  long long step_minutes = 5;
};

inline std::size_t st_min_window(const STConfig& c) {
  return c.n_blocks * 2 * (c.kernel - 1) + 1;
}

inline void validate_st_config(const STConfig& c) {
  if (c.kernel == 0 || c.horizon == 0 || c.n_blocks == 0 || c.channels == 0 || c.out_dim == 0 ||
      c.step_minutes <= 0)
    throw std::invalid_argument("st config: zero-sized field");
  const std::size_t need = st_min_window(c);
  for (std::size_t len : {c.t_recent, c.t_daily, c.t_weekly})
    if (len < need)
      throw std::invalid_argument("st config: window of " + std::to_string(len) +
                                  " steps leaves no time after " + std::to_string(c.n_blocks) +
                                  " blocks of width-" + std::to_string(c.kernel) +
                                  " convolutions (need >= " + std::to_string(need) + ")");
}

// ---------------------------------------------------------------------------
// Period windows

struct PeriodWindows {
  STSeries recent, daily, weekly;
};

inline STSeries slice_series(const STSeries& s, std::size_t begin, std::size_t end) {
  NoGradScope ng;
  STSeries out;
  out.node_signal = narrow(s.node_signal, 0, begin, end - begin);
  out.edge_signal = s.edge_signal.rank() == 3 ? narrow(s.edge_signal, 0, begin, end - begin)
                                              : s.edge_signal;
  out.timestamps.assign(s.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        s.timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

// Slices ending just before t0, t0 - 1 day and t0 - 1 week. t0 is the time of
// the first step to forecast, in epoch minutes on the sampling grid.
inline PeriodWindows build_period_windows(const STSeries& s, const STConfig& cfg, long long t0) {
  const long long dt = series_step(s);
  const long long t_len = static_cast<long long>(s.timestamps.size());
  auto end_index = [&](long long t, const char* what) {
    const long long rel = t - s.timestamps.front();
    if (rel % dt != 0)
      throw DataError(std::string("window: ") + what + " target time " + std::to_string(t) +
                      " is not on the sampling grid");
    return rel / dt;
  };
  auto take = [&](long long end, std::size_t len, const char* what) {
    if (end - static_cast<long long>(len) < 0 || end > t_len)
      throw DataError(std::string("window: insufficient history for the ") + what +
                      " slice ending at step " + std::to_string(end));
    return slice_series(s, static_cast<std::size_t>(end - static_cast<long long>(len)),
                        static_cast<std::size_t>(end));
  };
  PeriodWindows w;
  w.recent = take(end_index(t0, "recent"), cfg.t_recent, "recent");
  w.daily = take(end_index(t0 - 1440, "daily"), cfg.t_daily, "daily");
  w.weekly = take(end_index(t0 - 10080, "weekly"), cfg.t_weekly, "weekly");
  return w;
}

// ---------------------------------------------------------------------------
// One periodic component: n_blocks of (temporal - spatial - temporal), then a
// final temporal collapse to a single state per node (and per edge).

struct STStreams {
  Tensor node;               // [T x N x c]
  std::vector<Tensor> edge;  // per relation, [T x E_r x c_e]; empty when edges are unused
};

struct ComponentOut {
  Tensor node;               // [N x out_dim]
  std::vector<Tensor> edge;  // per relation, [E_r x out_dim]
};

class STComponent {
 public:
  STComponent(std::shared_ptr<const HeteroGraph> g, std::shared_ptr<GraphPlan> plan,
              std::size_t node_in, std::size_t edge_in, std::size_t window_len,
              const DimsConfig& dims, const AblationConfig& ab, const STConfig& cfg,
              ParamStore& store, const std::string& prefix, Rng& rng)
      : g_(std::move(g)), dims_(dims), ab_(ab), cfg_(cfg), window_len_(window_len) {
    validate_st_config(cfg_);
    if (window_len_ < st_min_window(cfg_))
      throw std::invalid_argument("component: window of " + std::to_string(window_len_) +
                                  " steps is too short");
    const std::size_t k = cfg_.kernel;
    auto conv = [&](const std::string& name, std::size_t width, std::size_t ci, std::size_t co) {
      kernels_.push_back(store.glorot(name + ".K", {width, ci, 2 * co}, width * ci,
                                      width * 2 * co, rng));
      biases_.push_back(store.zeros(name + ".b", {2 * co}));
      return kernels_.size() - 1;
    };
    DimsConfig sd = dims_;
    sd.layers = cfg_.k_spatial;
    for (std::size_t b = 1; b <= cfg_.n_blocks; ++b) {
      const std::string bp = prefix + "block." + std::to_string(b) + ".";
      Block blk;
      blk.in_node = conv(bp + "in.node", k, b == 1 ? node_in : cfg_.channels, cfg_.channels);
      if (ab_.use_edge_states)
        for (std::size_t r = 0; r < g_->num_edge_types(); ++r)
          blk.in_edge.push_back(conv(bp + "in.edge." + g_->edge_type(r).name, k,
                                     b == 1 ? edge_in : cfg_.edge_channels, cfg_.edge_channels));
      std::size_t node_mid = cfg_.channels;
      std::size_t edge_mid = cfg_.edge_channels;
      if (cfg_.k_spatial > 0) {
        spatial_.emplace_back(g_, plan,
                              std::vector<std::size_t>(g_->num_node_types(), cfg_.channels),
                              std::vector<std::size_t>(g_->num_edge_types(),
                                                       ab_.use_edge_states ? cfg_.edge_channels : 0),
                              sd, ab_, store, bp + "spatial.", rng);
        blk.spatial = spatial_.size() - 1;
        node_mid = dims_.node_state_dim;
        if (ab_.use_edge_states) edge_mid = dims_.edge_state_dim;
      }
      blk.out_node = conv(bp + "out.node", k, node_mid, cfg_.channels);
      if (ab_.use_edge_states)
        for (std::size_t r = 0; r < g_->num_edge_types(); ++r)
          blk.out_edge.push_back(
              conv(bp + "out.edge." + g_->edge_type(r).name, k, edge_mid, cfg_.edge_channels));
      blocks_.push_back(std::move(blk));
    }
    const std::size_t t_rem = window_len_ - cfg_.n_blocks * 2 * (k - 1);
    col_node_ = conv(prefix + "collapse.node", t_rem, cfg_.channels, cfg_.out_dim);
    if (ab_.use_edge_states)
      for (std::size_t r = 0; r < g_->num_edge_types(); ++r)
        col_edge_.push_back(conv(prefix + "collapse.edge." + g_->edge_type(r).name, t_rem,
                                 cfg_.edge_channels, cfg_.out_dim));
  }

  std::size_t window_len() const { return window_len_; }
  const HeteroGraph& graph() const { return *g_; }

  // valid temporal convolution + gated linear unit; T shrinks by K-1
  Tensor temporal(const Tensor& x, std::size_t conv_id) const {
    return glu(add_channel_bias(conv1d_time(x, kernels_[conv_id]), biases_[conv_id]));
  }

  STStreams sandwich(const STStreams& in, std::size_t block) const {
    const Block& blk = blocks_.at(block - 1);
    STStreams mid;
    mid.node = temporal(in.node, blk.in_node);
    for (std::size_t r = 0; r < blk.in_edge.size(); ++r)
      mid.edge.push_back(temporal(in.edge.at(r), blk.in_edge[r]));
    if (cfg_.k_spatial > 0) mid = spatial_over_time(mid, spatial_[blk.spatial]);
    STStreams out;
    out.node = temporal(mid.node, blk.out_node);
    for (std::size_t r = 0; r < blk.out_edge.size(); ++r)
      out.edge.push_back(temporal(mid.edge.at(r), blk.out_edge[r]));
    return out;
  }

  ComponentOut forward(STStreams in) const {
    if (in.node.dim(0) != window_len_)
      throw std::invalid_argument("component: got " + std::to_string(in.node.dim(0)) +
                                  " steps, built for " + std::to_string(window_len_));
    for (std::size_t b = 1; b <= cfg_.n_blocks; ++b) in = sandwich(in, b);
    ComponentOut out;
    out.node = reshape(temporal(in.node, col_node_), {g_->num_nodes(), cfg_.out_dim});
    for (std::size_t r = 0; r < col_edge_.size(); ++r)
      out.edge.push_back(
          reshape(temporal(in.edge.at(r), col_edge_[r]), {g_->edges_of_type(r), cfg_.out_dim}));
    return out;
  }

 private:
  struct Block {
    std::size_t in_node = 0, out_node = 0, spatial = 0;
    std::vector<std::size_t> in_edge, out_edge;
  };

  // one spatial pass per remaining time step, static attributes feeding the
  // meta learners at every step through the shared plan
  STStreams spatial_over_time(const STStreams& s, const CoMGNNStack& stack) const {
    const std::size_t t_len = s.node.dim(0), n = s.node.dim(1), c = s.node.dim(2);
    std::vector<Tensor> node_steps;
    std::vector<std::vector<Tensor>> edge_steps(g_->num_edge_types());
    for (std::size_t t = 0; t < t_len; ++t) {
      StateSet st;
      Tensor rows = reshape(narrow(s.node, 0, t, 1), {n, c});
      for (std::size_t tt = 0; tt < g_->num_node_types(); ++tt)
        st.node_states.push_back(narrow(rows, 0, g_->node_type_offset(tt), g_->nodes_of_type(tt)));
      for (std::size_t r = 0; r < g_->num_edge_types(); ++r)
        st.edge_states.push_back(
            ab_.use_edge_states
                ? reshape(narrow(s.edge.at(r), 0, t, 1), {g_->edges_of_type(r), s.edge.at(r).dim(2)})
                : Tensor::zeros({g_->edges_of_type(r), 0}));
      st = stack.forward(st);
      node_steps.push_back(reshape(concat(st.node_states, 0), {1, n, dims_.node_state_dim}));
      if (ab_.use_edge_states)
        for (std::size_t r = 0; r < g_->num_edge_types(); ++r)
          edge_steps[r].push_back(reshape(st.edge_states[r],
                                          {1, g_->edges_of_type(r), dims_.edge_state_dim}));
    }
    STStreams out;
    out.node = concat(node_steps, 0);
    if (ab_.use_edge_states)
      for (std::size_t r = 0; r < g_->num_edge_types(); ++r)
        out.edge.push_back(concat(edge_steps[r], 0));
    return out;
  }

  std::shared_ptr<const HeteroGraph> g_;
  DimsConfig dims_;
  AblationConfig ab_;
  STConfig cfg_;
  std::size_t window_len_;
  std::vector<Tensor> kernels_;  // handles sharing storage with the registry
  std::vector<Tensor> biases_;
  std::vector<CoMGNNStack> spatial_;
  std::vector<Block> blocks_;
  std::size_t col_node_ = 0;
  std::vector<std::size_t> col_edge_;
};

// ---------------------------------------------------------------------------
// Full model: three periodic components with independent parameters, fused by
// an affine head into per-node forecasts.

class STCoMGNN {
 public:
  STCoMGNN(std::shared_ptr<const HeteroGraph> g, std::size_t node_in, std::size_t edge_in,
           const DimsConfig& dims, const AblationConfig& ab, const STConfig& cfg,
           ParamStore& store, Rng& rng)
      : g_(std::move(g)), ab_(ab), cfg_(cfg) {
    validate_st_config(cfg_);
    auto plan = std::make_shared<GraphPlan>(build_plan(*g_, ab_.exclude_self_edge));
    components_.reserve(3);
    components_.emplace_back(g_, plan, node_in, edge_in, cfg_.t_recent, dims, ab_, cfg_, store,
                             "recent.", rng);
    components_.emplace_back(g_, plan, node_in, edge_in, cfg_.t_daily, dims, ab_, cfg_, store,
                             "daily.", rng);
    components_.emplace_back(g_, plan, node_in, edge_in, cfg_.t_weekly, dims, ab_, cfg_, store,
                             "weekly.", rng);
    fusion_w_ = store.glorot("fusion.W", {cfg_.horizon, 3 * cfg_.out_dim}, 3 * cfg_.out_dim,
                             cfg_.horizon, rng);
    fusion_b_ = store.zeros("fusion.b", {cfg_.horizon});
  }

  const STComponent& recent() const { return components_[0]; }
  const STComponent& daily() const { return components_[1]; }
  const STComponent& weekly() const { return components_[2]; }
  const HeteroGraph& graph() const { return *g_; }
  const STConfig& config() const { return cfg_; }

  // splits the dense edge signal into per-relation streams
  STStreams make_streams(const STSeries& slice) const {
    STStreams s;
    s.node = slice.node_signal;
    if (ab_.use_edge_states) {
      if (slice.edge_signal.rank() != 3)
        throw std::invalid_argument("streams: edge signal required but absent");
      for (std::size_t r = 0; r < g_->num_edge_types(); ++r)
        s.edge.push_back(narrow(slice.edge_signal, 1, g_->edge_type_offset(r),
                                g_->edges_of_type(r)));
    }
    return s;
  }

  Tensor fuse(const Tensor& recent_out, const Tensor& daily_out, const Tensor& weekly_out) const {
    return linear(concat({recent_out, daily_out, weekly_out}, 1), fusion_w_, fusion_b_);
  }

  // [N x horizon]
  Tensor predict(const PeriodWindows& w) const {
    ComponentOut r = components_[0].forward(make_streams(w.recent));
    ComponentOut d = components_[1].forward(make_streams(w.daily));
    ComponentOut wk = components_[2].forward(make_streams(w.weekly));
    return fuse(r.node, d.node, wk.node);
  }

 private:
  std::shared_ptr<const HeteroGraph> g_;
  AblationConfig ab_;
  STConfig cfg_;
  std::vector<STComponent> components_;
  Tensor fusion_w_;
  Tensor fusion_b_;
};

// ---------------------------------------------------------------------------
// Series bundle IO. CSV layout: one row per (timestamp, entity), sorted by
// timestamp then id, full grid required; missing observations are written as
// nan and filled forward (global channel mean for leading gaps).

namespace detail {

inline void impute_series(std::vector<double>& x, std::size_t t_len, std::size_t n,
                          std::size_t f) {
  for (std::size_t c = 0; c < f; ++c) {
    double mean = 0.0;
    std::size_t seen = 0;
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t e = 0; e < n; ++e) {
        const double v = x[(t * n + e) * f + c];
        if (std::isfinite(v)) {
          mean += v;
          ++seen;
        }
      }
    mean = seen ? mean / static_cast<double>(seen) : 0.0;
    for (std::size_t e = 0; e < n; ++e) {
      double last = mean;
      for (std::size_t t = 0; t < t_len; ++t) {
        double& v = x[(t * n + e) * f + c];
        if (std::isfinite(v)) last = v;
        else v = last;
      }
    }
  }
}

inline void save_signal_csv(const std::filesystem::path& path, const Tensor& x,
                            const std::vector<long long>& ts, const std::string& id_col,
                            const std::string& value_prefix) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t t_len = x.dim(0), n = x.dim(1), f = x.dim(2);
  out << "timestamp_min," << id_col;
  for (std::size_t c = 0; c < f; ++c) out << ',' << value_prefix << c;
  out << '\n';
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t e = 0; e < n; ++e) {
      out << ts[t] << ',' << e;
      for (std::size_t c = 0; c < f; ++c) out << ',' << fmt_double(x.value_at((t * n + e) * f + c));
      out << '\n';
    }
  if (!out) throw DataError("failed writing " + path.string());
}

struct SignalCsv {
  Tensor signal;
  std::vector<long long> timestamps;
};

inline SignalCsv load_signal_csv(const std::filesystem::path& path, std::size_t n_entities,
                                 bool impute) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "timestamp_min")
    throw DataError(path.string() + ":1: want header timestamp_min,<id>,<values...>");
  const std::size_t f = header.size() - 2;

  std::vector<long long> ts;
  std::vector<double> vals;
  std::size_t row = 1;
  long long cur_t = 0;
  std::size_t cur_e = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::string at = path.string() + ":" + std::to_string(row);
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(at + ": want " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    long long t = 0;
    try {
      t = std::stoll(cells[0]);
    } catch (const std::exception&) {
      throw DataError(at + ": bad timestamp '" + cells[0] + "'");
    }
    const std::size_t e = parse_id(cells[1], at);
    if (first) {
      if (e != 0) throw DataError(at + ": rows must start at entity 0");
      cur_t = t;
      cur_e = 0;
      ts.push_back(t);
      first = false;
    } else if (t == cur_t) {
      if (e != cur_e + 1) throw DataError(at + ": want entity " + std::to_string(cur_e + 1));
      cur_e = e;
    } else {
      if (cur_e + 1 != n_entities)
        throw DataError(at + ": previous timestamp covered " + std::to_string(cur_e + 1) +
                        " of " + std::to_string(n_entities) + " entities");
      if (t <= cur_t) throw DataError(at + ": timestamps must increase");
      if (e != 0) throw DataError(at + ": each timestamp must start at entity 0");
      cur_t = t;
      cur_e = 0;
      ts.push_back(t);
    }
    for (std::size_t c = 0; c < f; ++c) {
      const std::string& cell = cells[2 + c];
      if (cell == "nan" || cell.empty()) {
        vals.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        vals.push_back(parse_number(cell, at));
      }
    }
  }
  if (first) throw DataError(path.string() + ": no data rows");
  if (cur_e + 1 != n_entities)
    throw DataError(path.string() + ": last timestamp covered " + std::to_string(cur_e + 1) +
                    " of " + std::to_string(n_entities) + " entities");
  if (impute) impute_series(vals, ts.size(), n_entities, f);
  SignalCsv out;
  const std::size_t t_len = ts.size();
  out.signal = Tensor::from({t_len, n_entities, f}, std::move(vals));
  out.timestamps = std::move(ts);
  return out;
}

}  // namespace detail

inline void save_series(const std::filesystem::path& dir, const STSeries& s) {
  std::filesystem::create_directories(dir);
  detail::save_signal_csv(dir / "series_nodes.csv", s.node_signal, s.timestamps, "node_id", "v");
  if (s.edge_signal.rank() == 3 && s.edge_signal.dim(2) > 0)
    detail::save_signal_csv(dir / "series_edges.csv", s.edge_signal, s.timestamps, "edge_id", "v");
}

inline STSeries load_series(const std::filesystem::path& dir, const HeteroGraph& g,
                            bool impute = true) {
  STSeries s;
  detail::SignalCsv nodes = detail::load_signal_csv(dir / "series_nodes.csv", g.num_nodes(), impute);
  s.node_signal = nodes.signal;
  s.timestamps = nodes.timestamps;
  const std::filesystem::path epath = dir / "series_edges.csv";
  if (std::filesystem::exists(epath)) {
    detail::SignalCsv edges = detail::load_signal_csv(epath, g.num_edges(), impute);
    if (edges.timestamps != s.timestamps)
      throw DataError(epath.string() + ": timestamps differ from series_nodes.csv");
    s.edge_signal = edges.signal;
  } else {
    s.edge_signal = Tensor::zeros({s.timestamps.size(), g.num_edges(), 0});
  }
  validate_series(s, g);
  return s;
}

// Dense binary export: u64 rank, u64 dims..., row-major f64 payload.
inline void save_dense(const std::filesystem::path& path, const Tensor& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  put_u64(x.rank());
  for (std::size_t d = 0; d < x.rank(); ++d) put_u64(x.dim(d));
  out.write(reinterpret_cast<const char*>(x.values().data()),
            static_cast<std::streamsize>(x.numel() * sizeof(double)));
  if (!out) throw DataError("failed writing " + path.string());
}

inline Tensor load_dense(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  auto get_u64 = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw DataError(path.string() + ": truncated header");
    return v;
  };
  const std::uint64_t rank = get_u64();
  if (rank > 8) throw DataError(path.string() + ": implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(get_u64());
  std::vector<double> vals(shape_numel(shape));
  in.read(reinterpret_cast<char*>(vals.data()),
          static_cast<std::streamsize>(vals.size() * sizeof(double)));
  if (!in) throw DataError(path.string() + ": truncated payload");
  return Tensor::from(std::move(shape), std::move(vals));
}

}  // namespace comgnn
