#pragma once

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "delqg/adobe.hpp"
#include "delqg/errors.hpp"
#include "delqg/plant.hpp"
#include "delqg/synthesis.hpp"
#include "delqg/topology.hpp"

namespace delqg {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kProblemFormat = "delqg.problem";
inline constexpr const char* kControllerFormat = "delqg.controller";

/// Number encoding used when writing. Readers accept both forms everywhere.
enum class Encoding {
  kDecimal,  // JSON numbers, shortest round-trip representation
  kHex,      // strings in C99 hex-float notation, e.g. "-0x1.8p+1"
};

inline std::string hex_float(double v) {
  if (!std::isfinite(v)) throw Overflow("hex_float: non-finite value");
  char buf[64];
  const bool neg = std::signbit(v);
  auto r = std::to_chars(buf, buf + sizeof(buf), std::abs(v),
                         std::chars_format::hex);
  std::string digits(buf, r.ptr);
  return std::string(neg ? "-0x" : "0x") + digits;
}

namespace internal {

inline std::string child(const std::string& path, const std::string& key) {
  return path + "/" + key;
}
inline std::string child(const std::string& path, std::size_t k) {
  return path + "/" + std::to_string(k);
}

inline Json number(double v, Encoding enc) {
  if (!std::isfinite(v)) throw Overflow("write: non-finite matrix entry");
  if (enc == Encoding::kHex) return hex_float(v);
  return v;
}

inline double read_number(const Json& j, const std::string& path) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
      throw ParseError(path, "not a finite number: \"" + s + "\"");
    }
    return v;
  }
  throw ParseError(path, "expected a number");
}

inline const Json& field(const Json& j, const std::string& key,
                         const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(child(path, key), "missing field");
  return *it;
}

inline int read_int(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ParseError(path, "expected an integer");
  return j.get<int>();
}

inline std::vector<int> read_ints(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError(path, "expected an array");
  std::vector<int> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    out.push_back(read_int(j[k], child(path, k)));
  }
  return out;
}

}  // namespace internal

/// Nested row-major arrays; an empty matrix is written as {"rows", "cols"}.
inline Json matrix_to_json(const MatrixXd& M, Encoding enc) {
  if (M.rows() == 0 || M.cols() == 0) {
    return Json{{"rows", M.rows()}, {"cols", M.cols()}};
  }
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      row.push_back(internal::number(M(i, j), enc));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Parses a matrix; `rows`/`cols` < 0 leave that dimension unchecked.
inline MatrixXd matrix_from_json(const Json& j, const std::string& path,
                                 Eigen::Index rows = -1,
                                 Eigen::Index cols = -1) {
  auto check = [&](Eigen::Index r, Eigen::Index c) {
    if ((rows >= 0 && r != rows) || (cols >= 0 && c != cols)) {
      std::ostringstream os;
      os << "expected shape " << rows << "×" << cols << ", got " << r << "×"
         << c;
      throw ParseError(path, os.str());
    }
  };
  if (j.is_object()) {
    const Eigen::Index r =
        internal::read_int(internal::field(j, "rows", path), path + "/rows");
    const Eigen::Index c =
        internal::read_int(internal::field(j, "cols", path), path + "/cols");
    if (r != 0 && c != 0) {
      throw ParseError(path, "shape-only form is reserved for empty matrices");
    }
    check(r, c);
    return MatrixXd(r, c);
  }
  if (!j.is_array()) throw ParseError(path, "expected a nested array");
  const Eigen::Index r = static_cast<Eigen::Index>(j.size());
  if (r == 0) {
    check(0, cols >= 0 ? cols : 0);
    return MatrixXd(0, cols >= 0 ? cols : 0);
  }
  if (!j[0].is_array()) throw ParseError(internal::child(path, 0), "expected a row array");
  const Eigen::Index c = static_cast<Eigen::Index>(j[0].size());
  check(r, c);
  MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const std::string rp = internal::child(path, static_cast<std::size_t>(i));
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array()) throw ParseError(rp, "expected a row array");
    if (static_cast<Eigen::Index>(row.size()) != c) {
      throw ParseError(rp, "ragged row");
    }
    for (Eigen::Index k = 0; k < c; ++k) {
      M(i, k) = internal::read_number(
          row[static_cast<std::size_t>(k)],
          internal::child(rp, static_cast<std::size_t>(k)));
    }
  }
  return M;
}

// ---------------------------------------------------------------------------
// Graphs

/// Named graph presets: "chain", "star", "complete", "disconnected", "fig1"
/// (the four-agent example, which requires N = 4).
inline Topology topology_preset(const std::string& name, int N) {
  if (name == "chain") return Topology::chain(N);
  if (name == "star") return Topology::star(N);
  if (name == "complete") return Topology::complete(N);
  if (name == "disconnected" || name == "none") return Topology::disconnected(N);
  if (name == "fig1") {
    if (N != 4) throw InfeasibleDims("graph preset fig1 requires N = 4");
    return Topology::four_agent_example();
  }
  throw InfeasibleDims("unknown graph preset \"" + name + "\"");
}

inline Json adjacency_to_json(const Topology& t) {
  Json a = Json::array();
  for (int i = 0; i < t.agents(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < t.agents(); ++j) row.push_back(t.adjacency()(i, j) ? 1 : 0);
    a.push_back(std::move(row));
  }
  return a;
}

/// `adjacency[i][j] = 1` when agent i receives from agent j; or a preset
/// name string.
inline Topology topology_from_json(const Json& j, int N,
                                   const std::string& path) {
  if (j.is_string()) {
    try {
      return topology_preset(j.get<std::string>(), N);
    } catch (const InfeasibleDims& e) {
      throw ParseError(path, e.what());
    }
  }
  if (!j.is_array() || static_cast<int>(j.size()) != N) {
    throw ParseError(path, "expected an N×N 0/1 array or a preset name");
  }
  BoolMatrix a(N, N);
  for (int r = 0; r < N; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    const std::string rp = internal::child(path, static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<int>(row.size()) != N) {
      throw ParseError(rp, "expected a row of length N");
    }
    for (int c = 0; c < N; ++c) {
      const Json& v = row[static_cast<std::size_t>(c)];
      const std::string vp = internal::child(rp, static_cast<std::size_t>(c));
      if (v.is_boolean()) {
        a(r, c) = v.get<bool>();
      } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
        a(r, c) = v.get<int>() == 1;
      } else {
        throw ParseError(vp, "expected 0 or 1");
      }
    }
  }
  return Topology(std::move(a));
}

// ---------------------------------------------------------------------------
// Problem files

inline Json problem_to_json(const Problem& pr, Encoding enc = Encoding::kDecimal) {
  const FourBlockPlant& P = pr.plant;
  Json j;
  j["format"] = kProblemFormat;
  j["version"] = kFormatVersion;
  j["encoding"] = enc == Encoding::kHex ? "hex" : "decimal";
  j["N"] = P.agents();
  j["tau"] = internal::number(pr.tau, enc);
  j["adjacency"] = adjacency_to_json(pr.topology);
  Json agents = Json::array();
  for (int i = 0; i < P.agents(); ++i) {
    const AgentBlocks& a = P.agent(i);
    Json ja;
    ja["n"] = P.n().size(i);
    ja["m"] = P.m().size(i);
    ja["p"] = P.p().size(i);
    ja["pw"] = P.pw().size(i);
    ja["A"] = matrix_to_json(a.A, enc);
    ja["B1"] = matrix_to_json(a.B1, enc);
    ja["B2"] = matrix_to_json(a.B2, enc);
    ja["C2"] = matrix_to_json(a.C2, enc);
    ja["D21"] = matrix_to_json(a.D21, enc);
    agents.push_back(std::move(ja));
  }
  j["agents"] = std::move(agents);
  j["C1"] = matrix_to_json(P.C1(), enc);
  j["D12"] = matrix_to_json(P.D12(), enc);
  return j;
}

inline void check_header(const Json& j, const char* format) {
  const Json& f = internal::field(j, "format", "");
  if (!f.is_string() || f.get<std::string>() != format) {
    throw ParseError("/format", std::string("expected \"") + format + "\"");
  }
  const int v = internal::read_int(internal::field(j, "version", ""), "/version");
  if (v != kFormatVersion) {
    throw ParseError("/version", "unsupported version " + std::to_string(v));
  }
}

inline Problem problem_from_json(const Json& j) {
  check_header(j, kProblemFormat);
  const int N = internal::read_int(internal::field(j, "N", ""), "/N");
  if (N <= 0) throw ParseError("/N", "must be positive");
  const double tau = internal::read_number(internal::field(j, "tau", ""), "/tau");
  if (tau < 0.0) throw ParseError("/tau", "must be ≥ 0");
  const Json& ja = internal::field(j, "agents", "");
  if (!ja.is_array() || static_cast<int>(ja.size()) != N) {
    throw ParseError("/agents", "expected an array of N agents");
  }
  std::vector<AgentBlocks> blocks;
  int n_tot = 0, m_tot = 0;
  for (int i = 0; i < N; ++i) {
    const std::string p = "/agents/" + std::to_string(i);
    const Json& a = ja[static_cast<std::size_t>(i)];
    auto dim = [&](const char* key) {
      const int v = internal::read_int(internal::field(a, key, p), p + "/" + key);
      if (v < 0) throw ParseError(p + "/" + key, "must be ≥ 0");
      return v;
    };
    const int n = dim("n"), m = dim("m"), pp = dim("p"), pw = dim("pw");
    AgentBlocks b;
    b.A = matrix_from_json(internal::field(a, "A", p), p + "/A", n, n);
    b.B1 = matrix_from_json(internal::field(a, "B1", p), p + "/B1", n, pw);
    b.B2 = matrix_from_json(internal::field(a, "B2", p), p + "/B2", n, m);
    b.C2 = matrix_from_json(internal::field(a, "C2", p), p + "/C2", pp, n);
    b.D21 = matrix_from_json(internal::field(a, "D21", p), p + "/D21", pp, pw);
    blocks.push_back(std::move(b));
    n_tot += n;
    m_tot += m;
  }
  const MatrixXd C1 = matrix_from_json(internal::field(j, "C1", ""), "/C1", -1, n_tot);
  const MatrixXd D12 =
      matrix_from_json(internal::field(j, "D12", ""), "/D12", C1.rows(), m_tot);
  Topology topo;
  if (j.contains("adjacency")) {
    topo = topology_from_json(j["adjacency"], N, "/adjacency");
  } else {
    topo = topology_from_json(internal::field(j, "graph", ""), N, "/graph");
  }
  return {FourBlockPlant(std::move(blocks), C1, D12), topo, tau};
}

// ---------------------------------------------------------------------------
// Controller export

inline Json fir_to_json(const FirBlock& f, Encoding enc) {
  return Json{{"A", matrix_to_json(f.A, enc)},
              {"B_near", matrix_to_json(f.B_near, enc)},
              {"B_far", matrix_to_json(f.B_far, enc)},
              {"C", matrix_to_json(f.C, enc)},
              {"D_near", matrix_to_json(f.D_near, enc)},
              {"D_far", matrix_to_json(f.D_far, enc)},
              {"tau", internal::number(f.tau, enc)}};
}

inline FirBlock fir_from_json(const Json& j, const std::string& p) {
  FirBlock f;
  f.A = matrix_from_json(internal::field(j, "A", p), p + "/A");
  const Eigen::Index k = f.A.rows();
  f.B_near = matrix_from_json(internal::field(j, "B_near", p), p + "/B_near", k);
  f.B_far = matrix_from_json(internal::field(j, "B_far", p), p + "/B_far", k,
                             f.B_near.cols());
  f.C = matrix_from_json(internal::field(j, "C", p), p + "/C", -1, k);
  f.D_near = matrix_from_json(internal::field(j, "D_near", p), p + "/D_near",
                              f.C.rows(), f.B_far.cols());
  f.D_far = matrix_from_json(internal::field(j, "D_far", p), p + "/D_far",
                             f.C.rows(), f.B_far.cols());
  f.tau = internal::read_number(internal::field(j, "tau", p), p + "/tau");
  return f;
}

struct ControllerExportOptions {
  Encoding encoding = Encoding::kDecimal;
  /// Kernel sampling step; 0 omits sampled kernels. Must divide τ.
  double kernel_step = 0.0;
};

inline Json controller_to_json(const DecentralizedController& K,
                               const ControllerExportOptions& opts = {}) {
  const Encoding enc = opts.encoding;
  Json j;
  j["format"] = kControllerFormat;
  j["version"] = kFormatVersion;
  j["encoding"] = enc == Encoding::kHex ? "hex" : "decimal";
  j["tau"] = internal::number(K.tau, enc);
  j["coupling"] = to_string(K.agents.empty() ? AncestorCoupling::kLocalModel
                                             : K.agents.front().coupling);
  j["adjacency"] = adjacency_to_json(K.topology);
  Json agents = Json::array();
  for (const AgentController& c : K.agents) {
    Json a;
    a["agent"] = c.agent;
    a["descendants"] = c.descendants;
    a["strict_ancestors"] = c.strict_ancestors;
    a["own"] = c.own;
    a["n_blocks"] = c.n.sizes();
    a["m_blocks"] = c.m.sizes();
    a["own_inputs"] = c.own_inputs;
    a["delayed_inputs"] = c.delayed_inputs;
    a["A"] = matrix_to_json(c.A, enc);
    a["B"] = matrix_to_json(c.B, enc);
    a["F"] = matrix_to_json(c.F, enc);
    a["L"] = matrix_to_json(c.L, enc);
    a["A_local"] = matrix_to_json(c.A_local, enc);
    a["B_local"] = matrix_to_json(c.B_local, enc);
    a["C_local"] = matrix_to_json(c.C_local, enc);
    a["C1_modified"] = matrix_to_json(c.C1_modified, enc);
    a["X"] = matrix_to_json(c.X, enc);
    a["Y"] = matrix_to_json(c.Y, enc);
    a["regulator_residual"] = c.regulator_residual;
    a["estimator_residual"] = c.estimator_residual;
    a["fir_u"] = fir_to_json(c.fir_u, enc);
    a["fir_b"] = fir_to_json(c.fir_b, enc);
    if (opts.kernel_step > 0.0 && c.tau > 0.0 && !c.delayed_inputs.empty()) {
      const double r = c.tau / opts.kernel_step;
      const int d = static_cast<int>(std::lround(r));
      if (d < 1 || std::abs(r - d) > 1e-9 * std::max(1.0, r)) {
        throw NonIntegerDelayRatio("controller export: kernel step must divide τ");
      }
      Json ku = Json::array(), kb = Json::array();
      for (const MatrixXd& M : c.fir_u.sample_kernel(d)) ku.push_back(matrix_to_json(M, enc));
      for (const MatrixXd& M : c.fir_b.sample_kernel(d)) kb.push_back(matrix_to_json(M, enc));
      a["kernels"] = Json{{"h", internal::number(opts.kernel_step, enc)},
                          {"u", std::move(ku)},
                          {"b", std::move(kb)}};
    }
    agents.push_back(std::move(a));
  }
  j["agents"] = std::move(agents);
  return j;
}

inline DecentralizedController controller_from_json(const Json& j) {
  check_header(j, kControllerFormat);
  DecentralizedController K;
  K.tau = internal::read_number(internal::field(j, "tau", ""), "/tau");
  const Json& cj = internal::field(j, "coupling", "");
  AncestorCoupling coupling;
  if (cj == "local_model") {
    coupling = AncestorCoupling::kLocalModel;
  } else if (cj == "shared_innovation") {
    coupling = AncestorCoupling::kSharedInnovation;
  } else {
    throw ParseError("/coupling", "expected local_model or shared_innovation");
  }
  const Json& ja = internal::field(j, "agents", "");
  if (!ja.is_array()) throw ParseError("/agents", "expected an array");
  const int N = static_cast<int>(ja.size());
  K.topology = topology_from_json(internal::field(j, "adjacency", ""), N, "/adjacency");
  for (int i = 0; i < N; ++i) {
    const std::string p = "/agents/" + std::to_string(i);
    const Json& a = ja[static_cast<std::size_t>(i)];
    auto f = [&](const char* key) -> const Json& { return internal::field(a, key, p); };
    auto mat = [&](const char* key, Eigen::Index r = -1, Eigen::Index c = -1) {
      return matrix_from_json(f(key), p + "/" + key, r, c);
    };
    AgentController c;
    c.agent = internal::read_int(f("agent"), p + "/agent");
    if (c.agent != i) throw ParseError(p + "/agent", "agents must be listed in order");
    c.descendants = internal::read_ints(f("descendants"), p + "/descendants");
    c.strict_ancestors = internal::read_ints(f("strict_ancestors"), p + "/strict_ancestors");
    c.own = internal::read_int(f("own"), p + "/own");
    c.n = Partition(internal::read_ints(f("n_blocks"), p + "/n_blocks"));
    c.m = Partition(internal::read_ints(f("m_blocks"), p + "/m_blocks"));
    c.own_inputs = internal::read_ints(f("own_inputs"), p + "/own_inputs");
    c.delayed_inputs = internal::read_ints(f("delayed_inputs"), p + "/delayed_inputs");
    c.tau = K.tau;
    c.coupling = coupling;
    const Eigen::Index n = c.n.total(), m = c.m.total();
    c.A = mat("A", n, n);
    c.B = mat("B", n, m);
    c.F = mat("F", m, n);
    c.L = mat("L");
    c.A_local = mat("A_local", c.L.rows(), c.L.rows());
    c.C_local = mat("C_local", c.L.cols(), c.L.rows());
    c.B_local = mat("B_local", c.L.rows());
    c.C1_modified = mat("C1_modified", -1, n);
    c.X = mat("X", n, n);
    c.Y = mat("Y", c.L.rows(), c.L.rows());
    c.regulator_residual = internal::read_number(f("regulator_residual"), p + "/regulator_residual");
    c.estimator_residual = internal::read_number(f("estimator_residual"), p + "/estimator_residual");
    c.fir_u = fir_from_json(f("fir_u"), p + "/fir_u");
    c.fir_b = fir_from_json(f("fir_b"), p + "/fir_b");
    if (c.own < 0 || c.own >= static_cast<int>(c.descendants.size()) ||
        c.n.blocks() != static_cast<int>(c.descendants.size()) ||
        c.m.blocks() != c.n.blocks()) {
      throw ParseError(p, "index sets and block partitions disagree");
    }
    K.agents.push_back(std::move(c));
  }
  return K;
}

// ---------------------------------------------------------------------------
// Files

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("", "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError("", std::string("malformed JSON: ") + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

inline Problem read_problem(const std::string& path) {
  return problem_from_json(read_json_file(path));
}
inline DecentralizedController read_controller(const std::string& path) {
  return controller_from_json(read_json_file(path));
}

}  // namespace delqg
