// Multi-attributed heterogeneous graph: typed nodes and edges, per-type
// attribute matrices, incidence lists, bundle IO, and the reverse-relation
// and type-collapse transforms.
//
// Ids are global and contiguous per type (types in declaration order), so
// attribute rows are addressable as (type, local index) and per-type state
// matrices can be sliced out of a globally indexed tensor by row range.
#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "comgnn/tensor.hpp"

namespace comgnn {

// Raised for malformed bundles and graph schema violations (CLI exit code 3).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NodeTypeInfo {
  std::string name;
  std::size_t attr_dim = 0;
  std::vector<std::string> attr_names;
};

struct EdgeTypeInfo {
  std::string name;
  std::size_t src_type = 0;
  std::size_t dst_type = 0;
  std::size_t attr_dim = 0;
  std::vector<std::string> attr_names;
};

struct IncidentEdge {
  std::size_t edge;   // global edge id
  std::size_t other;  // the other endpoint (== v for a self-loop)
  bool is_src;        // whether v is the stored source
};

class HeteroGraph {
 public:
  // ---- construction (types first, then nodes grouped by type, then edges
  // grouped by type; finalize() validates and builds incidence) ----

  std::size_t add_node_type(std::string name, std::size_t attr_dim,
                            std::vector<std::string> attr_names = {}) {
    for (const auto& t : node_types_)
      if (t.name == name) throw DataError("duplicate node type '" + name + "'");
    if (attr_names.empty())
      for (std::size_t i = 0; i < attr_dim; ++i) attr_names.push_back("a" + std::to_string(i));
    if (attr_names.size() != attr_dim)
      throw DataError("node type '" + name + "': " + std::to_string(attr_names.size()) +
                      " attribute names for dim " + std::to_string(attr_dim));
    node_types_.push_back({std::move(name), attr_dim, std::move(attr_names)});
    node_attrs_.emplace_back();
    node_counts_.push_back(0);
    return node_types_.size() - 1;
  }

  std::size_t add_edge_type(std::string name, std::size_t src_type, std::size_t dst_type,
                            std::size_t attr_dim, std::vector<std::string> attr_names = {}) {
    for (const auto& t : edge_types_)
      if (t.name == name) throw DataError("duplicate edge type '" + name + "'");
    if (src_type >= node_types_.size() || dst_type >= node_types_.size())
      throw DataError("edge type '" + name + "': unknown endpoint type");
    if (attr_names.empty())
      for (std::size_t i = 0; i < attr_dim; ++i) attr_names.push_back("a" + std::to_string(i));
    if (attr_names.size() != attr_dim)
      throw DataError("edge type '" + name + "': attribute name count mismatch");
    edge_types_.push_back({std::move(name), src_type, dst_type, attr_dim, std::move(attr_names)});
    edge_attrs_.emplace_back();
    edge_counts_.push_back(0);
    return edge_types_.size() - 1;
  }

  std::size_t add_node(std::size_t type, const std::vector<double>& attrs) {
    if (type >= node_types_.size()) throw DataError("add_node: unknown type");
    if (attrs.size() != node_types_[type].attr_dim)
      throw DataError("add_node: type '" + node_types_[type].name + "' expects " +
                      std::to_string(node_types_[type].attr_dim) + " attributes, got " +
                      std::to_string(attrs.size()));
    if (!node_of_.empty() && node_of_.back().type > type)
      throw DataError("add_node: nodes must be added grouped by type in type order");
    node_attrs_[type].insert(node_attrs_[type].end(), attrs.begin(), attrs.end());
    node_of_.push_back({type, node_counts_[type]++});
    return node_of_.size() - 1;
  }

  std::size_t add_edge(std::size_t type, std::size_t src, std::size_t dst,
                       const std::vector<double>& attrs) {
    if (type >= edge_types_.size()) throw DataError("add_edge: unknown type");
    const EdgeTypeInfo& et = edge_types_[type];
    if (src >= node_of_.size() || dst >= node_of_.size())
      throw DataError("add_edge: type '" + et.name + "': dangling endpoint " +
                      std::to_string(std::max(src, dst)));
    if (node_of_[src].type != et.src_type || node_of_[dst].type != et.dst_type)
      throw DataError("add_edge: type '" + et.name + "': endpoint node types do not match (" +
                      node_types_[node_of_[src].type].name + " -> " +
                      node_types_[node_of_[dst].type].name + ")");
    if (attrs.size() != et.attr_dim)
      throw DataError("add_edge: type '" + et.name + "' expects " + std::to_string(et.attr_dim) +
                      " attributes, got " + std::to_string(attrs.size()));
    if (!edge_of_.empty() && edge_of_.back().type > type)
      throw DataError("add_edge: edges must be added grouped by type in type order");
    edge_attrs_[type].insert(edge_attrs_[type].end(), attrs.begin(), attrs.end());
    edge_of_.push_back({type, edge_counts_[type]++, src, dst});
    return edge_of_.size() - 1;
  }

  void finalize() {
    incidence_.assign(node_of_.size(), {});
    for (std::size_t e = 0; e < edge_of_.size(); ++e) {
      const EdgeRec& r = edge_of_[e];
      incidence_[r.src].push_back({e, r.dst, true});
      if (r.dst != r.src) incidence_[r.dst].push_back({e, r.src, false});
    }
    // add order is ascending edge id already; keep it explicit
    for (auto& lst : incidence_)
      std::sort(lst.begin(), lst.end(),
                [](const IncidentEdge& a, const IncidentEdge& b) { return a.edge < b.edge; });
    finalized_ = true;
  }

  // ---- queries ----

  std::size_t num_nodes() const { return node_of_.size(); }
  std::size_t num_edges() const { return edge_of_.size(); }
  std::size_t num_node_types() const { return node_types_.size(); }
  std::size_t num_edge_types() const { return edge_types_.size(); }
  const NodeTypeInfo& node_type(std::size_t t) const { return node_types_.at(t); }
  const EdgeTypeInfo& edge_type(std::size_t t) const { return edge_types_.at(t); }
  std::size_t nodes_of_type(std::size_t t) const { return node_counts_.at(t); }
  std::size_t edges_of_type(std::size_t t) const { return edge_counts_.at(t); }

  std::size_t node_type_of(std::size_t v) const { return node_of_.at(v).type; }
  std::size_t node_local(std::size_t v) const { return node_of_.at(v).local; }
  std::size_t edge_type_of(std::size_t e) const { return edge_of_.at(e).type; }
  std::size_t edge_local(std::size_t e) const { return edge_of_.at(e).local; }
  std::size_t edge_src(std::size_t e) const { return edge_of_.at(e).src; }
  std::size_t edge_dst(std::size_t e) const { return edge_of_.at(e).dst; }

  std::size_t node_type_offset(std::size_t t) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < t; ++i) off += node_counts_[i];
    return off;
  }
  std::size_t edge_type_offset(std::size_t t) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < t; ++i) off += edge_counts_[i];
    return off;
  }

  const std::vector<double>& node_attr_matrix(std::size_t t) const { return node_attrs_.at(t); }
  const std::vector<double>& edge_attr_matrix(std::size_t t) const { return edge_attrs_.at(t); }

  const double* node_attr_row(std::size_t v) const {
    const NodeRec& r = node_of_.at(v);
    return node_attrs_[r.type].data() + r.local * node_types_[r.type].attr_dim;
  }
  const double* edge_attr_row(std::size_t e) const {
    const EdgeRec& r = edge_of_.at(e);
    return edge_attrs_[r.type].data() + r.local * edge_types_[r.type].attr_dim;
  }

  const std::vector<IncidentEdge>& incident_edges(std::size_t v) const {
    if (!finalized_) throw std::logic_error("incident_edges: graph not finalized");
    if (v >= node_of_.size())
      throw std::out_of_range("incident_edges: node " + std::to_string(v) + " out of range");
    return incidence_[v];
  }

  // Static input attributes of src node, edge, dst node, in stored order.
  std::vector<double> meta_knowledge(std::size_t e) const {
    const EdgeRec& r = edge_of_.at(e);
    std::vector<double> mk;
    mk.reserve(meta_knowledge_dim(r.type));
    const double* s = node_attr_row(r.src);
    mk.insert(mk.end(), s, s + node_types_[node_of_[r.src].type].attr_dim);
    const double* ea = edge_attr_row(e);
    mk.insert(mk.end(), ea, ea + edge_types_[r.type].attr_dim);
    const double* d = node_attr_row(r.dst);
    mk.insert(mk.end(), d, d + node_types_[node_of_[r.dst].type].attr_dim);
    return mk;
  }

  std::size_t meta_knowledge_dim(std::size_t edge_type_id) const {
    const EdgeTypeInfo& et = edge_types_.at(edge_type_id);
    return node_types_[et.src_type].attr_dim + et.attr_dim + node_types_[et.dst_type].attr_dim;
  }

 private:
  struct NodeRec {
    std::size_t type, local;
  };
  struct EdgeRec {
    std::size_t type, local, src, dst;
  };

  std::vector<NodeTypeInfo> node_types_;
  std::vector<EdgeTypeInfo> edge_types_;
  std::vector<std::vector<double>> node_attrs_, edge_attrs_;
  std::vector<std::size_t> node_counts_, edge_counts_;
  std::vector<NodeRec> node_of_;
  std::vector<EdgeRec> edge_of_;
  std::vector<std::vector<IncidentEdge>> incidence_;
  bool finalized_ = false;
};

// Per-layer hidden states, one matrix per type. Layer 0 mirrors the raw
// attributes; later layers are produced fresh by the network, never in place.
struct StateSet {
  std::vector<Tensor> node_states;
  std::vector<Tensor> edge_states;
  std::size_t layer = 0;
};

inline StateSet init_states(const HeteroGraph& g) {
  StateSet s;
  for (std::size_t t = 0; t < g.num_node_types(); ++t)
    s.node_states.push_back(
        Tensor::from({g.nodes_of_type(t), g.node_type(t).attr_dim}, g.node_attr_matrix(t)));
  for (std::size_t t = 0; t < g.num_edge_types(); ++t)
    s.edge_states.push_back(
        Tensor::from({g.edges_of_type(t), g.edge_type(t).attr_dim}, g.edge_attr_matrix(t)));
  s.layer = 0;
  return s;
}

// ---------------------------------------------------------------------------
// Transforms

// For each edge type r (skipping ones already reversed), add r_rev with
// swapped endpoints and copied attributes. Original ids are preserved;
// applying the transform twice is the identity.
inline HeteroGraph add_reverse_relations(const HeteroGraph& g) {
  HeteroGraph out;
  for (std::size_t t = 0; t < g.num_node_types(); ++t) {
    const NodeTypeInfo& nt = g.node_type(t);
    out.add_node_type(nt.name, nt.attr_dim, nt.attr_names);
  }
  auto ends_with_rev = [](const std::string& s) {
    return s.size() >= 4 && s.compare(s.size() - 4, 4, "_rev") == 0;
  };
  auto find_type = [&g](const std::string& name) -> const EdgeTypeInfo* {
    for (std::size_t t = 0; t < g.num_edge_types(); ++t)
      if (g.edge_type(t).name == name) return &g.edge_type(t);
    return nullptr;
  };
  std::vector<std::size_t> to_reverse;
  for (std::size_t t = 0; t < g.num_edge_types(); ++t) {
    const EdgeTypeInfo& et = g.edge_type(t);
    out.add_edge_type(et.name, et.src_type, et.dst_type, et.attr_dim, et.attr_names);
    if (ends_with_rev(et.name)) continue;
    if (const EdgeTypeInfo* existing = find_type(et.name + "_rev")) {
      const bool mirrors = existing->src_type == et.dst_type &&
                           existing->dst_type == et.src_type &&
                           existing->attr_dim == et.attr_dim;
      if (!mirrors)
        throw DataError("add_reverse_relations: type '" + et.name +
                        "_rev' exists and is not a mirror of '" + et.name + "'");
      continue;  // already reversed
    }
    to_reverse.push_back(t);
  }
  for (std::size_t t : to_reverse) {
    const EdgeTypeInfo& et = g.edge_type(t);
    out.add_edge_type(et.name + "_rev", et.dst_type, et.src_type, et.attr_dim, et.attr_names);
  }
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const double* a = g.node_attr_row(v);
    out.add_node(g.node_type_of(v), {a, a + g.node_type(g.node_type_of(v)).attr_dim});
  }
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const double* a = g.edge_attr_row(e);
    out.add_edge(g.edge_type_of(e), g.edge_src(e), g.edge_dst(e),
                 {a, a + g.edge_type(g.edge_type_of(e)).attr_dim});
  }
  std::size_t next_rev_type = g.num_edge_types();
  for (std::size_t t : to_reverse) {
    const std::size_t off = g.edge_type_offset(t);
    for (std::size_t i = 0; i < g.edges_of_type(t); ++i) {
      const std::size_t e = off + i;
      const double* a = g.edge_attr_row(e);
      out.add_edge(next_rev_type, g.edge_dst(e), g.edge_src(e),
                   {a, a + g.edge_type(t).attr_dim});
    }
    ++next_rev_type;
  }
  out.finalize();
  return out;
}

// Erase heterogeneity: one node type, one edge type, attributes zero-padded
// to the widest dim of their kind. Node and edge orderings are preserved.
inline HeteroGraph collapse_types(const HeteroGraph& g) {
  std::size_t nd = 0, ed = 0;
  for (std::size_t t = 0; t < g.num_node_types(); ++t)
    nd = std::max(nd, g.node_type(t).attr_dim);
  for (std::size_t t = 0; t < g.num_edge_types(); ++t)
    ed = std::max(ed, g.edge_type(t).attr_dim);
  HeteroGraph out;
  out.add_node_type("node", nd);
  out.add_edge_type("edge", 0, 0, ed);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    std::vector<double> a(nd, 0.0);
    const std::size_t w = g.node_type(g.node_type_of(v)).attr_dim;
    std::copy_n(g.node_attr_row(v), w, a.begin());
    out.add_node(0, a);
  }
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    std::vector<double> a(ed, 0.0);
    const std::size_t w = g.edge_type(g.edge_type_of(e)).attr_dim;
    std::copy_n(g.edge_attr_row(e), w, a.begin());
    out.add_edge(0, g.edge_src(e), g.edge_dst(e), a);
  }
  out.finalize();
  return out;
}

// ---------------------------------------------------------------------------
// Bundle IO: schema.json + nodes_<type>.csv + edges_<type>.csv per type.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": not a number: '" + s + "'");
  }
}

inline std::size_t parse_id(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError(where + ": not a non-negative id: '" + s + "'");
  }
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_graph(const HeteroGraph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json schema;
  schema["node_types"] = nlohmann::json::array();
  for (std::size_t t = 0; t < g.num_node_types(); ++t) {
    const NodeTypeInfo& nt = g.node_type(t);
    schema["node_types"].push_back({{"name", nt.name}, {"attrs", nt.attr_names}});
  }
  schema["edge_types"] = nlohmann::json::array();
  for (std::size_t t = 0; t < g.num_edge_types(); ++t) {
    const EdgeTypeInfo& et = g.edge_type(t);
    schema["edge_types"].push_back({{"name", et.name},
                                    {"src", g.node_type(et.src_type).name},
                                    {"dst", g.node_type(et.dst_type).name},
                                    {"attrs", et.attr_names}});
  }
  std::ofstream js(dir / "schema.json");
  js << schema.dump(2) << "\n";

  for (std::size_t t = 0; t < g.num_node_types(); ++t) {
    const NodeTypeInfo& nt = g.node_type(t);
    std::ofstream f(dir / ("nodes_" + nt.name + ".csv"));
    f << "global_id";
    for (const auto& a : nt.attr_names) f << "," << a;
    f << "\n";
    const std::size_t off = g.node_type_offset(t);
    for (std::size_t i = 0; i < g.nodes_of_type(t); ++i) {
      f << off + i;
      const double* row = g.node_attr_matrix(t).data() + i * nt.attr_dim;
      for (std::size_t c = 0; c < nt.attr_dim; ++c) f << "," << detail::fmt_double(row[c]);
      f << "\n";
    }
  }
  for (std::size_t t = 0; t < g.num_edge_types(); ++t) {
    const EdgeTypeInfo& et = g.edge_type(t);
    std::ofstream f(dir / ("edges_" + et.name + ".csv"));
    f << "edge_id,src,dst";
    for (const auto& a : et.attr_names) f << "," << a;
    f << "\n";
    const std::size_t off = g.edge_type_offset(t);
    for (std::size_t i = 0; i < g.edges_of_type(t); ++i) {
      const std::size_t e = off + i;
      f << e << "," << g.edge_src(e) << "," << g.edge_dst(e);
      const double* row = g.edge_attr_matrix(t).data() + i * et.attr_dim;
      for (std::size_t c = 0; c < et.attr_dim; ++c) f << "," << detail::fmt_double(row[c]);
      f << "\n";
    }
  }
}

inline HeteroGraph load_graph(const std::filesystem::path& dir) {
  const auto schema_path = dir / "schema.json";
  std::ifstream js(schema_path);
  if (!js) throw DataError("missing " + schema_path.string());
  nlohmann::json schema;
  try {
    js >> schema;
  } catch (const std::exception& ex) {
    throw DataError(schema_path.string() + ": " + ex.what());
  }
  if (!schema.contains("node_types") || !schema.contains("edge_types"))
    throw DataError(schema_path.string() + ": want node_types and edge_types arrays");

  HeteroGraph g;
  std::map<std::string, std::size_t> ntype_id;
  for (const auto& jt : schema["node_types"]) {
    std::vector<std::string> attrs = jt.value("attrs", std::vector<std::string>{});
    const std::string name = jt.at("name").get<std::string>();
    ntype_id[name] = g.add_node_type(name, attrs.size(), attrs);
  }
  for (const auto& jt : schema["edge_types"]) {
    std::vector<std::string> attrs = jt.value("attrs", std::vector<std::string>{});
    const std::string name = jt.at("name").get<std::string>();
    const std::string src = jt.at("src").get<std::string>();
    const std::string dst = jt.at("dst").get<std::string>();
    if (!ntype_id.count(src) || !ntype_id.count(dst))
      throw DataError(schema_path.string() + ": edge type '" + name +
                      "' references unknown node type");
    g.add_edge_type(name, ntype_id[src], ntype_id[dst], attrs.size(), attrs);
  }

  std::size_t expect_gid = 0;
  for (std::size_t t = 0; t < g.num_node_types(); ++t) {
    const NodeTypeInfo nt = g.node_type(t);
    const auto path = dir / ("nodes_" + nt.name + ".csv");
    std::ifstream f(path);
    if (!f) throw DataError("missing " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw DataError(path.string() + ": empty file");
    auto header = detail::split_csv_line(line);
    if (header.size() != nt.attr_dim + 1 || header[0] != "global_id")
      throw DataError(path.string() + ": bad header '" + line + "'");
    for (std::size_t c = 0; c < nt.attr_dim; ++c)
      if (header[c + 1] != nt.attr_names[c])
        throw DataError(path.string() + ": attribute column '" + header[c + 1] +
                        "' does not match schema '" + nt.attr_names[c] + "'");
    std::size_t row = 1;
    while (std::getline(f, line)) {
      ++row;
      if (line.empty()) continue;
      auto fields = detail::split_csv_line(line);
      const std::string where = path.string() + ":" + std::to_string(row);
      if (fields.size() != nt.attr_dim + 1)
        throw DataError(where + ": want " + std::to_string(nt.attr_dim + 1) + " columns, got " +
                        std::to_string(fields.size()));
      const std::size_t gid = detail::parse_id(fields[0], where);
      if (gid != expect_gid)
        throw DataError(where + ": global_id " + std::to_string(gid) + " breaks contiguity (want " +
                        std::to_string(expect_gid) + ")");
      std::vector<double> attrs(nt.attr_dim);
      for (std::size_t c = 0; c < nt.attr_dim; ++c)
        attrs[c] = detail::parse_number(fields[c + 1], where);
      g.add_node(t, attrs);
      ++expect_gid;
    }
  }

  std::size_t expect_eid = 0;
  for (std::size_t t = 0; t < g.num_edge_types(); ++t) {
    const EdgeTypeInfo et = g.edge_type(t);
    const auto path = dir / ("edges_" + et.name + ".csv");
    std::ifstream f(path);
    if (!f) throw DataError("missing " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw DataError(path.string() + ": empty file");
    auto header = detail::split_csv_line(line);
    if (header.size() != et.attr_dim + 3 || header[0] != "edge_id" || header[1] != "src" ||
        header[2] != "dst")
      throw DataError(path.string() + ": bad header '" + line + "'");
    std::size_t row = 1;
    while (std::getline(f, line)) {
      ++row;
      if (line.empty()) continue;
      auto fields = detail::split_csv_line(line);
      const std::string where = path.string() + ":" + std::to_string(row);
      if (fields.size() != et.attr_dim + 3)
        throw DataError(where + ": want " + std::to_string(et.attr_dim + 3) + " columns, got " +
                        std::to_string(fields.size()));
      const std::size_t eid = detail::parse_id(fields[0], where);
      if (eid != expect_eid)
        throw DataError(where + ": edge_id " + std::to_string(eid) + " breaks contiguity (want " +
                        std::to_string(expect_eid) + ")");
      const std::size_t src = detail::parse_id(fields[1], where);
      const std::size_t dst = detail::parse_id(fields[2], where);
      if (src >= g.num_nodes() || dst >= g.num_nodes())
        throw DataError(where + ": dangling endpoint " + std::to_string(std::max(src, dst)));
      std::vector<double> attrs(et.attr_dim);
      for (std::size_t c = 0; c < et.attr_dim; ++c)
        attrs[c] = detail::parse_number(fields[c + 3], where);
      try {
        g.add_edge(t, src, dst, attrs);
      } catch (const DataError& ex) {
        throw DataError(where + ": " + ex.what());
      }
      ++expect_eid;
    }
  }
  g.finalize();
  return g;
}

}  // namespace comgnn
