// Co-evolving heterogeneous graph layer.
//
// Each layer reads the previous layer's node and edge states and produces
// both anew (synchronous co-evolution). Per-edge messages are computed in a
// common space, weighted by attention produced from meta knowledge (the raw
// attributes of an edge and its endpoints), and summed per target.
//
// Direction convention: an edge contributes one "appearance" per endpoint
// (self-loops once). The appearance's anchor vertex is the aggregation
// target; concatenations always put the anchor's state first, then the edge
// state, then the other endpoint's state, regardless of stored direction.
// Directional semantics beyond that come from explicit reverse relations.
#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "comgnn/checkpoint.hpp"
#include "comgnn/hetgraph.hpp"
#include "comgnn/tensor.hpp"

namespace comgnn {

struct DimsConfig {
  std::size_t layers = 2;             // L
  std::size_t node_state_dim = 32;    // d_o for every node type, layers >= 1
  std::size_t edge_state_dim = 32;    // d_r for every relation, layers >= 1
  std::size_t node_message_dim = 16;  // common node-message space
  std::size_t edge_message_dim = 16;  // common edge-message space
  std::size_t attention_dim = 16;     // common attention space for edge scores
  std::size_t meta_hidden_dim = 16;   // meta-learner hidden width
  double leaky_slope = 0.2;
};

struct AblationConfig {
  bool use_edge_states = true;    // off: no edge terms in messages, no edge evolution
  bool use_meta_attention = true; // off: uniform 1/|neighborhood| weights
  bool collapse_types = false;    // on: erase heterogeneity before building the model
  bool exclude_self_edge = false; // on: drop the target edge from its own neighborhood
};

inline HeteroGraph prepare_graph(const HeteroGraph& g, const AblationConfig& ab) {
  return ab.collapse_types ? collapse_types(g) : g;
}

// ---------------------------------------------------------------------------
// Index plumbing, fixed per (graph, exclude_self_edge): appearance tables for
// node aggregation and (target edge, appearance) pairs for edge aggregation.

struct GraphPlan {
  struct RelPlan {
    std::vector<std::size_t> src_local, dst_local;  // per edge of the relation
    std::vector<std::size_t> rev_keep;              // edge locals that are not self-loops
    std::vector<std::size_t> rev_src_local, rev_dst_local;
    Tensor mk;  // [E_r x mk_dim] static meta knowledge, fixed input
  };
  std::vector<RelPlan> rel;

  // appearances, ordered (relation asc; forward then reverse; edge asc)
  std::vector<std::size_t> app_edge;    // global edge id
  std::vector<std::size_t> app_target;  // anchor vertex gid (segment key)
  Tensor uniform_node_alpha;            // [A] 1/|neighborhood(target)|

  std::vector<std::size_t> pair_app, pair_tgt;  // per (target edge, appearance)
  Tensor uniform_edge_alpha;                    // [P]

  std::vector<std::size_t> node_offset, node_count;  // per node type
  std::vector<std::size_t> edge_offset, edge_count;  // per relation
  std::size_t n_nodes = 0, n_edges = 0;
};

inline GraphPlan build_plan(const HeteroGraph& g, bool exclude_self_edge) {
  GraphPlan p;
  p.n_nodes = g.num_nodes();
  p.n_edges = g.num_edges();
  for (std::size_t t = 0; t < g.num_node_types(); ++t) {
    p.node_offset.push_back(g.node_type_offset(t));
    p.node_count.push_back(g.nodes_of_type(t));
  }
  for (std::size_t r = 0; r < g.num_edge_types(); ++r) {
    p.edge_offset.push_back(g.edge_type_offset(r));
    p.edge_count.push_back(g.edges_of_type(r));
  }

  for (std::size_t r = 0; r < g.num_edge_types(); ++r) {
    GraphPlan::RelPlan rp;
    const std::size_t off = p.edge_offset[r], n = p.edge_count[r];
    const std::size_t mk_dim = g.meta_knowledge_dim(r);
    std::vector<double> mk_rows;
    mk_rows.reserve(n * mk_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t e = off + i;
      rp.src_local.push_back(g.node_local(g.edge_src(e)));
      rp.dst_local.push_back(g.node_local(g.edge_dst(e)));
      if (g.edge_src(e) != g.edge_dst(e)) {
        rp.rev_keep.push_back(i);
        rp.rev_src_local.push_back(g.node_local(g.edge_src(e)));
        rp.rev_dst_local.push_back(g.node_local(g.edge_dst(e)));
      }
      const std::vector<double> mk = g.meta_knowledge(e);
      mk_rows.insert(mk_rows.end(), mk.begin(), mk.end());
    }
    rp.mk = Tensor::from({n, mk_dim}, std::move(mk_rows));
    // forward appearances: anchor = stored source
    for (std::size_t i = 0; i < n; ++i) {
      p.app_edge.push_back(off + i);
      p.app_target.push_back(g.edge_src(off + i));
    }
    // reverse appearances: anchor = stored destination, self-loops skipped
    for (std::size_t i : rp.rev_keep) {
      p.app_edge.push_back(off + i);
      p.app_target.push_back(g.edge_dst(off + i));
    }
    p.rel.push_back(std::move(rp));
  }

  // per-anchor appearance lists drive both uniform weights and edge pairs
  std::vector<std::vector<std::size_t>> anchored(p.n_nodes);
  for (std::size_t a = 0; a < p.app_edge.size(); ++a) anchored[p.app_target[a]].push_back(a);

  const std::size_t n_app = p.app_edge.size();
  std::vector<double> ua(n_app);
  for (std::size_t a = 0; a < ua.size(); ++a)
    ua[a] = 1.0 / static_cast<double>(anchored[p.app_target[a]].size());
  p.uniform_node_alpha = Tensor::from({n_app}, std::move(ua));

  for (std::size_t e = 0; e < p.n_edges; ++e) {
    for (std::size_t endpoint : {g.edge_src(e), g.edge_dst(e)})
      for (std::size_t a : anchored[endpoint]) {
        if (exclude_self_edge && p.app_edge[a] == e) continue;
        p.pair_app.push_back(a);
        p.pair_tgt.push_back(e);
      }
  }
  std::vector<std::size_t> pair_count(p.n_edges, 0);
  for (std::size_t e : p.pair_tgt) ++pair_count[e];
  const std::size_t n_pair = p.pair_tgt.size();
  std::vector<double> ue(n_pair);
  for (std::size_t i = 0; i < ue.size(); ++i)
    ue[i] = 1.0 / static_cast<double>(pair_count[p.pair_tgt[i]]);
  p.uniform_edge_alpha = Tensor::from({n_pair}, std::move(ue));
  return p;
}

// ---------------------------------------------------------------------------
// Layer parameters

namespace detail {

struct MetaNet {
  Tensor w0, b0, w1, b1;
  Tensor operator()(const Tensor& mk) const { return linear(mish(linear(mk, w0, b0)), w1, b1); }
};

inline MetaNet make_meta_net(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                             std::size_t hidden, std::size_t out_dim, Rng& rng) {
  MetaNet net;
  net.w0 = store.glorot(prefix + ".0.W", {hidden, in_dim}, in_dim, hidden, rng);
  net.b0 = store.zeros(prefix + ".0.b", {hidden});
  net.w1 = store.glorot(prefix + ".1.W", {out_dim, hidden}, hidden, out_dim, rng);
  net.b1 = store.zeros(prefix + ".1.b", {out_dim});
  return net;
}

struct RelationParams {
  Tensor msg_w, msg_b;    // node-message map
  Tensor emsg_w, emsg_b;  // edge-message map
  Tensor out_w, out_b;    // edge output transform (skip connection)
  MetaNet gw, gb, gwt;    // attention vector, bias, and transform generators
  std::size_t concat_width = 0;
};

struct NodeTypeParams {
  Tensor out_w, out_b;  // node output transform (skip connection)
};

struct LayerParams {
  std::vector<RelationParams> rel;
  std::vector<NodeTypeParams> node;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// L stacked layers over one graph

class CoMGNNStack {
 public:
  // node_in / edge_in: state widths fed to layer 1 (attribute dims for the
  // static tasks, channel dims inside the temporal model).
  CoMGNNStack(std::shared_ptr<const HeteroGraph> g, std::vector<std::size_t> node_in,
              std::vector<std::size_t> edge_in, const DimsConfig& dims, const AblationConfig& ab,
              ParamStore& store, const std::string& prefix, Rng& rng)
      : g_(std::move(g)),
        plan_(std::make_shared<GraphPlan>(build_plan(*g_, ab.exclude_self_edge))),
        dims_(dims),
        ab_(ab),
        node_in_(std::move(node_in)),
        edge_in_(std::move(edge_in)) {
    if (node_in_.size() != g_->num_node_types() || edge_in_.size() != g_->num_edge_types())
      throw std::invalid_argument("CoMGNNStack: per-type input dims do not match the graph");
    for (std::size_t l = 1; l <= dims_.layers; ++l) layers_.push_back(build_layer(store, prefix, l, rng));
  }

  // Reuses the plan of a sibling stack over the same graph.
  CoMGNNStack(std::shared_ptr<const HeteroGraph> g, std::shared_ptr<GraphPlan> plan,
              std::vector<std::size_t> node_in, std::vector<std::size_t> edge_in,
              const DimsConfig& dims, const AblationConfig& ab, ParamStore& store,
              const std::string& prefix, Rng& rng)
      : g_(std::move(g)),
        plan_(std::move(plan)),
        dims_(dims),
        ab_(ab),
        node_in_(std::move(node_in)),
        edge_in_(std::move(edge_in)) {
    for (std::size_t l = 1; l <= dims_.layers; ++l) layers_.push_back(build_layer(store, prefix, l, rng));
  }

  const HeteroGraph& graph() const { return *g_; }
  const GraphPlan& plan() const { return *plan_; }
  const DimsConfig& dims() const { return dims_; }
  const AblationConfig& ablation() const { return ab_; }

  std::size_t node_in_dim(std::size_t layer, std::size_t type) const {
    return layer == 1 ? node_in_[type] : dims_.node_state_dim;
  }
  std::size_t edge_in_dim(std::size_t layer, std::size_t rel) const {
    if (!ab_.use_edge_states) return edge_in_[rel];  // edge states pass through
    return layer == 1 ? edge_in_[rel] : dims_.edge_state_dim;
  }

  StateSet forward(const StateSet& in) const {
    StateSet s = in;
    for (std::size_t l = 1; l <= dims_.layers; ++l) s = layer_forward(s, l);
    return s;
  }

  StateSet layer_forward(const StateSet& prev, std::size_t layer) const {
    StateSet out;
    out.layer = prev.layer + 1;
    out.node_states = node_evolve(prev, layer);
    out.edge_states = ab_.use_edge_states ? edge_evolve(prev, layer) : prev.edge_states;
    return out;
  }

  // Aggregation pieces, exposed for the invariant tests.

  // [A x node_message_dim] rows in appearance order.
  Tensor node_messages(const StateSet& prev, std::size_t layer) const {
    std::vector<Tensor> parts = per_appearance_messages(prev, layer, false);
    if (parts.empty()) return Tensor::zeros({0, dims_.node_message_dim});
    return concat(parts, 0);
  }
  // [A x edge_message_dim] rows in appearance order.
  Tensor edge_messages(const StateSet& prev, std::size_t layer) const {
    std::vector<Tensor> parts = per_appearance_messages(prev, layer, true);
    if (parts.empty()) return Tensor::zeros({0, dims_.edge_message_dim});
    return concat(parts, 0);
  }

  std::vector<Tensor> node_evolve(const StateSet& prev, std::size_t layer) const {
    const detail::LayerParams& lp = layers_[layer - 1];
    Tensor hhat;
    if (plan_->app_edge.empty()) {
      hhat = Tensor::zeros({plan_->n_nodes, dims_.node_message_dim});
    } else {
      Tensor all = node_messages(prev, layer);
      Tensor alpha = node_attention(prev, layer);
      hhat = segment_sum(scale_rows(all, alpha), plan_->app_target, plan_->n_nodes);
    }
    std::vector<Tensor> out;
    for (std::size_t t = 0; t < g_->num_node_types(); ++t) {
      Tensor rows = narrow(hhat, 0, plan_->node_offset[t], plan_->node_count[t]);
      Tensor cat = concat({rows, prev.node_states[t]}, 1);
      out.push_back(mish(linear(cat, lp.node[t].out_w, lp.node[t].out_b)));
    }
    return out;
  }

  std::vector<Tensor> edge_evolve(const StateSet& prev, std::size_t layer) const {
    const detail::LayerParams& lp = layers_[layer - 1];
    Tensor hhat;
    if (plan_->pair_app.empty()) {
      hhat = Tensor::zeros({plan_->n_edges, dims_.edge_message_dim});
    } else {
      Tensor all = edge_messages(prev, layer);
      Tensor alpha = edge_attention(prev, layer);
      Tensor weighted = scale_rows(gather_rows(all, plan_->pair_app), alpha);
      hhat = segment_sum(weighted, plan_->pair_tgt, plan_->n_edges);
    }
    std::vector<Tensor> out;
    for (std::size_t r = 0; r < g_->num_edge_types(); ++r) {
      Tensor rows = narrow(hhat, 0, plan_->edge_offset[r], plan_->edge_count[r]);
      Tensor cat = concat({rows, prev.edge_states[r]}, 1);
      out.push_back(mish(linear(cat, lp.rel[r].out_w, lp.rel[r].out_b)));
    }
    return out;
  }

  // Normalized per-appearance weights for node aggregation ([A], sums to 1
  // per target vertex).
  Tensor node_attention(const StateSet& prev, std::size_t layer) const {
    if (!ab_.use_meta_attention) return plan_->uniform_node_alpha;
    const detail::LayerParams& lp = layers_[layer - 1];
    std::vector<Tensor> betas;
    for (std::size_t r = 0; r < g_->num_edge_types(); ++r) {
      const GraphPlan::RelPlan& rp = plan_->rel[r];
      const detail::RelationParams& par = lp.rel[r];
      Tensor m = par.gw(rp.mk);                              // [E_r x width]
      Tensor bias = reshape(par.gb(rp.mk), {rp.mk.dim(0)});  // [E_r]
      Tensor fwd = anchored_concat(prev, r, false);
      betas.push_back(leaky_relu(add(rowwise_dot(m, fwd), bias), dims_.leaky_slope));
      if (!rp.rev_keep.empty()) {
        Tensor rev = anchored_concat(prev, r, true);
        Tensor m_rev = gather_rows(m, rp.rev_keep);
        Tensor bias_rev = reshape(gather_rows(reshape(bias, {rp.mk.dim(0), 1}), rp.rev_keep),
                                  {rp.rev_keep.size()});
        betas.push_back(leaky_relu(add(rowwise_dot(m_rev, rev), bias_rev), dims_.leaky_slope));
      }
    }
    return segment_softmax(concat(betas, 0), plan_->app_target);
  }

  // Normalized per-pair weights for edge aggregation ([P], sums to 1 per
  // target edge).
  Tensor edge_attention(const StateSet& prev, std::size_t layer) const {
    if (!ab_.use_meta_attention) return plan_->uniform_edge_alpha;
    const detail::LayerParams& lp = layers_[layer - 1];
    std::vector<Tensor> app_parts, tgt_parts;
    for (std::size_t r = 0; r < g_->num_edge_types(); ++r) {
      const GraphPlan::RelPlan& rp = plan_->rel[r];
      const detail::RelationParams& par = lp.rel[r];
      Tensor mt = par.gwt(rp.mk);  // [E_r x (d_att * width)]
      Tensor fwd = anchored_concat(prev, r, false);
      Tensor ht_fwd = sigmoid(rows_matvec(mt, fwd, dims_.attention_dim));
      tgt_parts.push_back(ht_fwd);  // target edges read their stored-order vector
      app_parts.push_back(ht_fwd);
      if (!rp.rev_keep.empty()) {
        Tensor rev = anchored_concat(prev, r, true);
        Tensor ht_rev =
            sigmoid(rows_matvec(gather_rows(mt, rp.rev_keep), rev, dims_.attention_dim));
        app_parts.push_back(ht_rev);
      }
    }
    Tensor ht_app = concat(app_parts, 0);          // [A x d_att], appearance order
    Tensor ht_tgt = concat(tgt_parts, 0);          // [E x d_att], edge id order
    Tensor beta = rowwise_dot(gather_rows(ht_tgt, plan_->pair_tgt),
                              gather_rows(ht_app, plan_->pair_app));
    return segment_softmax(beta, plan_->pair_tgt);
  }

 private:
  detail::LayerParams build_layer(ParamStore& store, const std::string& prefix, std::size_t l,
                                  Rng& rng) {
    detail::LayerParams lp;
    const std::string lq = prefix + "layer." + std::to_string(l) + ".";
    const std::string mq = prefix + "meta." + std::to_string(l) + ".";
    for (std::size_t r = 0; r < g_->num_edge_types(); ++r) {
      const EdgeTypeInfo& et = g_->edge_type(r);
      detail::RelationParams par;
      const std::size_t edge_part = ab_.use_edge_states ? edge_in_dim(l, r) : 0;
      const std::size_t width =
          node_in_dim(l, et.src_type) + edge_part + node_in_dim(l, et.dst_type);
      par.concat_width = width;
      const std::string rq = lq + "rel." + et.name + ".";
      par.msg_w = store.glorot(rq + "W", {dims_.node_message_dim, width}, width,
                               dims_.node_message_dim, rng);
      par.msg_b = store.zeros(rq + "b", {dims_.node_message_dim});
      if (ab_.use_edge_states) {
        par.emsg_w = store.glorot(rq + "Wt", {dims_.edge_message_dim, width}, width,
                                  dims_.edge_message_dim, rng);
        par.emsg_b = store.zeros(rq + "bt", {dims_.edge_message_dim});
        const std::size_t skip = dims_.edge_message_dim + edge_in_dim(l, r);
        par.out_w = store.glorot(rq + "Ws", {dims_.edge_state_dim, skip}, skip,
                                 dims_.edge_state_dim, rng);
        par.out_b = store.zeros(rq + "bs", {dims_.edge_state_dim});
      }
      if (ab_.use_meta_attention) {
        const std::size_t mk_dim = g_->meta_knowledge_dim(r);
        const std::string gq = mq + "rel." + et.name + ".";
        par.gw = detail::make_meta_net(store, gq + "gw", mk_dim, dims_.meta_hidden_dim, width, rng);
        par.gb = detail::make_meta_net(store, gq + "gb", mk_dim, dims_.meta_hidden_dim, 1, rng);
        if (ab_.use_edge_states)
          par.gwt = detail::make_meta_net(store, gq + "gwt", mk_dim, dims_.meta_hidden_dim,
                                          dims_.attention_dim * width, rng);
      }
      lp.rel.push_back(std::move(par));
    }
    for (std::size_t t = 0; t < g_->num_node_types(); ++t) {
      detail::NodeTypeParams np;
      const std::size_t skip = dims_.node_message_dim + node_in_dim(l, t);
      const std::string nq = lq + "node." + g_->node_type(t).name + ".";
      np.out_w = store.glorot(nq + "W", {dims_.node_state_dim, skip}, skip, dims_.node_state_dim, rng);
      np.out_b = store.zeros(nq + "b", {dims_.node_state_dim});
      lp.node.push_back(std::move(np));
    }
    return lp;
  }

  // [anchor state ‖ edge state ‖ other state] rows for one relation and
  // direction; reverse direction flips endpoint roles and skips self-loops.
  Tensor anchored_concat(const StateSet& prev, std::size_t r, bool rev) const {
    const GraphPlan::RelPlan& rp = plan_->rel[r];
    const EdgeTypeInfo& et = g_->edge_type(r);
    const Tensor& src_states = prev.node_states[et.src_type];
    const Tensor& dst_states = prev.node_states[et.dst_type];
    std::vector<Tensor> parts;
    if (!rev) {
      parts.push_back(gather_rows(src_states, rp.src_local));
      if (ab_.use_edge_states) parts.push_back(prev.edge_states[r]);
      parts.push_back(gather_rows(dst_states, rp.dst_local));
    } else {
      parts.push_back(gather_rows(dst_states, rp.rev_dst_local));
      if (ab_.use_edge_states) parts.push_back(gather_rows(prev.edge_states[r], rp.rev_keep));
      parts.push_back(gather_rows(src_states, rp.rev_src_local));
    }
    return concat(parts, 1);
  }

  // Per-relation/direction message blocks in global appearance order.
  std::vector<Tensor> per_appearance_messages(const StateSet& prev, std::size_t layer,
                                              bool edge_map) const {
    const detail::LayerParams& lp = layers_[layer - 1];
    std::vector<Tensor> parts;
    for (std::size_t r = 0; r < g_->num_edge_types(); ++r) {
      const GraphPlan::RelPlan& rp = plan_->rel[r];
      const detail::RelationParams& par = lp.rel[r];
      const Tensor& w = edge_map ? par.emsg_w : par.msg_w;
      const Tensor& b = edge_map ? par.emsg_b : par.msg_b;
      if (rp.src_local.empty()) continue;
      parts.push_back(linear(anchored_concat(prev, r, false), w, b));
      if (!rp.rev_keep.empty())
        parts.push_back(linear(anchored_concat(prev, r, true), w, b));
    }
    return parts;
  }

  std::shared_ptr<const HeteroGraph> g_;
  std::shared_ptr<GraphPlan> plan_;
  DimsConfig dims_;
  AblationConfig ab_;
  std::vector<std::size_t> node_in_, edge_in_;
  std::vector<detail::LayerParams> layers_;
};

// ---------------------------------------------------------------------------
// Scalar readout over selected edges: affine map of [h_src ‖ h_e ‖ h_dst].

class EdgeReadout {
 public:
  EdgeReadout() = default;
  EdgeReadout(std::size_t src_dim, std::size_t edge_dim, std::size_t dst_dim, ParamStore& store,
              const std::string& prefix, Rng& rng) {
    const std::size_t width = src_dim + edge_dim + dst_dim;
    w_ = store.glorot(prefix + "readout.W", {1, width}, width, 1, rng);
    b_ = store.zeros(prefix + "readout.b", {1});
  }

  // Scores for edges of one relation, identified by local indices.
  Tensor scores(const HeteroGraph& g, const StateSet& final_states, std::size_t rel,
                const std::vector<std::size_t>& edge_locals) const {
    const EdgeTypeInfo& et = g.edge_type(rel);
    const std::size_t off = g.edge_type_offset(rel);
    std::vector<std::size_t> src_local(edge_locals.size()), dst_local(edge_locals.size());
    for (std::size_t i = 0; i < edge_locals.size(); ++i) {
      const std::size_t e = off + edge_locals[i];
      src_local[i] = g.node_local(g.edge_src(e));
      dst_local[i] = g.node_local(g.edge_dst(e));
    }
    Tensor cat = concat({gather_rows(final_states.node_states[et.src_type], src_local),
                         gather_rows(final_states.edge_states[rel], edge_locals),
                         gather_rows(final_states.node_states[et.dst_type], dst_local)},
                        1);
    return reshape(linear(cat, w_, b_), {edge_locals.size()});
  }

 private:
  Tensor w_, b_;
};

}  // namespace comgnn
