#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace raven {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;
using Vec = std::vector<double>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense n-d array of f64, row-major. Plain value type; graph participation
// happens through Graph/Var below.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw Error("tensor: shape " + shape_str(shape) + " does not match data size " +
                  std::to_string(data.size()));
    for (auto e : shape)
      if (e == 0) throw Error("tensor: zero extent in shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape s, double v) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1; }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  double value() const {
    if (!is_scalar()) throw Error("tensor: value() on non-scalar " + shape_str(shape));
    return data[0];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Flat binary format: magic "RAVTNSR1", u32 rank, u32 extents, f64 payload,
// integers and floats little-endian.
inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("tensor save: cannot open " + path);
  f.write("RAVTNSR1", 8);
  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape) put_u32(static_cast<std::uint32_t>(e));
  for (double v : t.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), 8);
  }
  if (!f) throw Error("tensor save: write failed for " + path);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("tensor load: cannot open " + path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, "RAVTNSR1", 8) != 0)
    throw Error("tensor load: bad magic in " + path);
  auto get_u32 = [&]() {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw Error("tensor load: truncated header in " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  std::uint32_t rank = get_u32();
  if (rank > 8) throw Error("tensor load: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_u32();
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[8];
    if (!f.read(reinterpret_cast<char*>(b), 8))
      throw Error("tensor load: truncated payload in " + path + " at element " + std::to_string(i));
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    std::memcpy(&data[i], &bits, 8);
  }
  return Tensor(std::move(shape), std::move(data));
}

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline ECMap as_mat(const Tensor& t, std::size_t r, std::size_t c) {
  return ECMap(t.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline EMap as_mat(Tensor& t, std::size_t r, std::size_t c) {
  return EMap(t.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

}  // namespace detail

enum class Op {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScalarMul,   // c0 * a
  kScalarAdd,   // c0 + a
  kMatmul,
  kExp,
  kLog,
  kSquare,
  kSigmoid,
  kSoftplus,
  kPRelu,       // b is the (scalar) learnable slope
  kLogAddExp,
  kSum,         // all elements -> scalar
  kMean,        // all elements -> scalar
  kRowSum,      // [N,M] -> [N]
};

class Graph;

// Lightweight handle to a node on a Graph tape.
struct Var {
  Graph* g = nullptr;
  int id = -1;
  const Tensor& value() const;
  double scalar() const { return value().value(); }
};

// Tape-based reverse-mode autodiff. Nodes are appended in evaluation order,
// so inputs always reference strictly earlier nodes. The tape is meant to be
// rebuilt per forward pass; a Graph and its Vars belong to one worker.
class Graph {
public:
  struct Node {
    Op op = Op::kLeaf;
    int a = -1, b = -1;
    double c0 = 0.0;
    Tensor value;
    bool needs_grad = false;
  };

  Var leaf(Tensor value, bool requires_grad = false) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  // ---- forward ops ------------------------------------------------------

  Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }

  Var div(Var a, Var b) {
    for (double v : val(b).data)
      if (v == 0.0) throw Error("div: zero operand");
    return binary(Op::kDiv, a, b);
  }

  Var scalar_mul(Var a, double c) {
    Node n = unary_node(Op::kScalarMul, a);
    n.c0 = c;
    for (auto& v : n.value.data) v *= c;
    return push(std::move(n));
  }

  Var scalar_add(Var a, double c) {
    Node n = unary_node(Op::kScalarAdd, a);
    n.c0 = c;
    for (auto& v : n.value.data) v += c;
    return push(std::move(n));
  }

  Var neg(Var a) { return scalar_mul(a, -1.0); }

  Var matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
      throw Error("matmul: incompatible shapes " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    Node n;
    n.op = Op::kMatmul;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    n.value = Tensor::zeros({ta.rows(), tb.cols()});
    detail::as_mat(n.value, ta.rows(), tb.cols()).noalias() =
        detail::as_mat(ta, ta.rows(), ta.cols()) * detail::as_mat(tb, tb.rows(), tb.cols());
    return push(std::move(n));
  }

  Var exp(Var a) {
    Node n = unary_node(Op::kExp, a);
    for (auto& v : n.value.data) {
      v = std::exp(v);
      if (!std::isfinite(v)) throw Error("exp: non-finite result");
    }
    return push(std::move(n));
  }

  Var log(Var a) {
    Node n = unary_node(Op::kLog, a);
    for (auto& v : n.value.data) {
      if (v <= 0.0) throw Error("log: non-positive operand");
      v = std::log(v);
    }
    return push(std::move(n));
  }

  Var square(Var a) {
    Node n = unary_node(Op::kSquare, a);
    for (auto& v : n.value.data) v *= v;
    return push(std::move(n));
  }

  Var sigmoid(Var a) {
    Node n = unary_node(Op::kSigmoid, a);
    for (auto& v : n.value.data) v = stable_sigmoid(v);
    return push(std::move(n));
  }

  Var softplus(Var a) {
    Node n = unary_node(Op::kSoftplus, a);
    for (auto& v : n.value.data) v = std::fmax(v, 0.0) + std::log1p(std::exp(-std::fabs(v)));
    return push(std::move(n));
  }

  // y = max(0,x) + slope * min(0,x); slope is a scalar node shared over x.
  Var prelu(Var x, Var slope) {
    if (!val(slope).is_scalar()) throw Error("prelu: slope must be scalar");
    const double a = val(slope).value();
    Node n;
    n.op = Op::kPRelu;
    n.a = x.id;
    n.b = slope.id;
    n.needs_grad = nodes_[x.id].needs_grad || nodes_[slope.id].needs_grad;
    n.value = val(x);
    for (auto& v : n.value.data) v = v > 0.0 ? v : a * v;
    return push(std::move(n));
  }

  // Elementwise log(exp(a) + exp(b)), evaluated stably.
  Var logaddexp(Var a, Var b) { return binary(Op::kLogAddExp, a, b); }

  Var sum(Var a) {
    Node n;
    n.op = Op::kSum;
    n.a = a.id;
    n.needs_grad = nodes_[a.id].needs_grad;
    double s = 0.0;
    for (double v : val(a).data) s += v;
    n.value = Tensor::scalar(s);
    return push(std::move(n));
  }

  Var mean(Var a) {
    Node n;
    n.op = Op::kMean;
    n.a = a.id;
    n.needs_grad = nodes_[a.id].needs_grad;
    double s = 0.0;
    for (double v : val(a).data) s += v;
    n.value = Tensor::scalar(s / static_cast<double>(val(a).numel()));
    return push(std::move(n));
  }

  Var row_sum(Var a) {
    const Tensor& t = val(a);
    if (t.rank() != 2) throw Error("row_sum: expects rank-2, got " + shape_str(t.shape));
    Node n;
    n.op = Op::kRowSum;
    n.a = a.id;
    n.needs_grad = nodes_[a.id].needs_grad;
    n.value = Tensor::zeros({t.rows()});
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < t.cols(); ++j) s += t.at(i, j);
      n.value.at(i) = s;
    }
    return push(std::move(n));
  }

  // ---- backward ---------------------------------------------------------

  // Gradients of a scalar root w.r.t. every node; fan-out accumulates
  // additively. Grad buffers are rebuilt on every call.
  void backward(Var root) {
    if (root.g != this) throw Error("backward: root from another graph");
    if (!val(root).is_scalar()) throw Error("backward: root must be scalar");
    grads_.assign(nodes_.size(), {});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      grads_[i].assign(nodes_[i].value.numel(), 0.0);
    grads_[root.id][0] = 1.0;
    for (int id = root.id; id >= 0; --id) {
      const Node& n = nodes_[id];
      if (!n.needs_grad || n.op == Op::kLeaf) continue;
      propagate(id);
    }
  }

  const std::vector<double>& grad(Var v) const {
    if (grads_.size() != nodes_.size()) throw Error("grad: backward has not run");
    return grads_[v.id];
  }

  Tensor grad_tensor(Var v) const { return Tensor(nodes_[v.id].value.shape, grad(v)); }

private:
  friend struct Var;

  const Tensor& val(Var v) const {
    if (v.g != this || v.id < 0) throw Error("var does not belong to this graph");
    return nodes_[v.id].value;
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node unary_node(Op op, Var a) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.needs_grad = nodes_[a.id].needs_grad;
    n.value = val(a);
    return n;
  }

  static double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  // Shapes must match exactly, or b broadcasts over a's leading batch axis
  // (b's shape equals a's trailing dims, or b is scalar).
  enum class Bcast { kNone, kTile, kScalar };

  static Bcast broadcast_kind(const Shape& a, const Shape& b) {
    if (a == b) return Bcast::kNone;
    if (shape_numel(b) == 1) return Bcast::kScalar;
    if (a.size() == b.size() + 1 && std::equal(b.begin(), b.end(), a.begin() + 1)) return Bcast::kTile;
    return static_cast<Bcast>(-1);
  }

  Var binary(Op op, Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    const Bcast k = broadcast_kind(ta.shape, tb.shape);
    if (static_cast<int>(k) < 0)
      throw Error("binary op: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    n.value = Tensor::zeros(ta.shape);
    const std::size_t stride = shape_numel(tb.shape);
    for (std::size_t i = 0; i < ta.numel(); ++i) {
      const double x = ta.data[i];
      const double y = (k == Bcast::kNone) ? tb.data[i]
                       : (k == Bcast::kScalar) ? tb.data[0]
                                               : tb.data[i % stride];
      n.value.data[i] = apply_binary(op, x, y);
    }
    return push(std::move(n));
  }

  static double apply_binary(Op op, double x, double y) {
    switch (op) {
      case Op::kAdd: return x + y;
      case Op::kSub: return x - y;
      case Op::kMul: return x * y;
      case Op::kDiv: return x / y;
      case Op::kLogAddExp: {
        const double m = std::fmax(x, y);
        return m + std::log1p(std::exp(-std::fabs(x - y)));
      }
      default: throw Error("apply_binary: bad op");
    }
  }

  void add_to(int id, std::size_t idx, double v) { grads_[id][idx] += v; }

  void propagate(int id) {
    const Node& n = nodes_[id];
    const std::vector<double>& g = grads_[id];
    const bool need_a = n.a >= 0 && nodes_[n.a].needs_grad;
    const bool need_b = n.b >= 0 && nodes_[n.b].needs_grad;
    if (!need_a && !need_b) return;
    const Tensor& out = n.value;

    switch (n.op) {
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv:
      case Op::kLogAddExp: {
        const Tensor& ta = nodes_[n.a].value;
        const Tensor& tb = nodes_[n.b].value;
        const Bcast k = broadcast_kind(ta.shape, tb.shape);
        const std::size_t stride = shape_numel(tb.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          const double x = ta.data[i];
          const std::size_t bi = (k == Bcast::kNone) ? i : (k == Bcast::kScalar) ? 0 : i % stride;
          const double y = tb.data[bi];
          double da = 0.0, db = 0.0;
          switch (n.op) {
            case Op::kAdd: da = gi; db = gi; break;
            case Op::kSub: da = gi; db = -gi; break;
            case Op::kMul: da = gi * y; db = gi * x; break;
            case Op::kDiv: da = gi / y; db = -gi * x / (y * y); break;
            case Op::kLogAddExp:
              da = gi * stable_sigmoid(x - y);
              db = gi * stable_sigmoid(y - x);
              break;
            default: break;
          }
          if (need_a) add_to(n.a, i, da);
          if (need_b) add_to(n.b, bi, db);
        }
        break;
      }
      case Op::kScalarMul:
        for (std::size_t i = 0; i < out.numel(); ++i) add_to(n.a, i, g[i] * n.c0);
        break;
      case Op::kScalarAdd:
        for (std::size_t i = 0; i < out.numel(); ++i) add_to(n.a, i, g[i]);
        break;
      case Op::kMatmul: {
        const Tensor& ta = nodes_[n.a].value;
        const Tensor& tb = nodes_[n.b].value;
        const std::size_t N = ta.rows(), K = ta.cols(), M = tb.cols();
        detail::ECMap G(g.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(M));
        if (need_a) {
          detail::EMap dA(grads_[n.a].data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(K));
          dA.noalias() += G * detail::as_mat(tb, K, M).transpose();
        }
        if (need_b) {
          detail::EMap dB(grads_[n.b].data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M));
          dB.noalias() += detail::as_mat(ta, N, K).transpose() * G;
        }
        break;
      }
      case Op::kExp:
        for (std::size_t i = 0; i < out.numel(); ++i) add_to(n.a, i, g[i] * out.data[i]);
        break;
      case Op::kLog: {
        const Tensor& ta = nodes_[n.a].value;
        for (std::size_t i = 0; i < out.numel(); ++i) add_to(n.a, i, g[i] / ta.data[i]);
        break;
      }
      case Op::kSquare: {
        const Tensor& ta = nodes_[n.a].value;
        for (std::size_t i = 0; i < out.numel(); ++i) add_to(n.a, i, 2.0 * g[i] * ta.data[i]);
        break;
      }
      case Op::kSigmoid:
        for (std::size_t i = 0; i < out.numel(); ++i) {
          const double s = out.data[i];
          add_to(n.a, i, g[i] * s * (1.0 - s));
        }
        break;
      case Op::kSoftplus: {
        const Tensor& ta = nodes_[n.a].value;
        for (std::size_t i = 0; i < out.numel(); ++i) add_to(n.a, i, g[i] * stable_sigmoid(ta.data[i]));
        break;
      }
      case Op::kPRelu: {
        const Tensor& ta = nodes_[n.a].value;
        const double a = nodes_[n.b].value.value();
        for (std::size_t i = 0; i < out.numel(); ++i) {
          const double x = ta.data[i];
          if (need_a) add_to(n.a, i, g[i] * (x > 0.0 ? 1.0 : a));
          if (need_b && x <= 0.0) add_to(n.b, 0, g[i] * x);
        }
        break;
      }
      case Op::kSum:
        for (std::size_t i = 0; i < nodes_[n.a].value.numel(); ++i) add_to(n.a, i, g[0]);
        break;
      case Op::kMean: {
        const double s = g[0] / static_cast<double>(nodes_[n.a].value.numel());
        for (std::size_t i = 0; i < nodes_[n.a].value.numel(); ++i) add_to(n.a, i, s);
        break;
      }
      case Op::kRowSum: {
        const Tensor& ta = nodes_[n.a].value;
        for (std::size_t i = 0; i < ta.rows(); ++i)
          for (std::size_t j = 0; j < ta.cols(); ++j) add_to(n.a, i * ta.cols() + j, g[i]);
        break;
      }
      case Op::kLeaf:
        break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

inline const Tensor& Var::value() const {
  if (!g || id < 0) throw Error("empty var");
  return g->node(id).value;
}

// Convenience operators (graph taken from the left operand).
inline Var operator+(Var a, Var b) { return a.g->add(a, b); }
inline Var operator-(Var a, Var b) { return a.g->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.g->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.g->div(a, b); }
inline Var operator*(double c, Var a) { return a.g->scalar_mul(a, c); }
inline Var operator*(Var a, double c) { return a.g->scalar_mul(a, c); }
inline Var operator+(Var a, double c) { return a.g->scalar_add(a, c); }
inline Var operator+(double c, Var a) { return a.g->scalar_add(a, c); }
inline Var operator-(Var a, double c) { return a.g->scalar_add(a, -c); }
inline Var operator-(double c, Var a) { return a.g->scalar_add(a.g->scalar_mul(a, -1.0), c); }
inline Var operator-(Var a) { return a.g->scalar_mul(a, -1.0); }

// Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|), with g_fd the
// central difference of f at step h. f must build a scalar from its input.
inline double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double h) {
  if (h <= 0.0) throw Error("finite_diff_check: h must be positive");
  Graph g;
  Var xv = g.leaf(x, true);
  Var y = f(g, xv);
  if (!y.value().is_scalar()) throw Error("finite_diff_check: f must return a scalar");
  g.backward(y);
  const std::vector<double> g_ad = g.grad(xv);

  auto eval = [&](const Tensor& xt) {
    Graph gg;
    Var out = f(gg, gg.leaf(xt, false));
    const double v = out.value().value();
    if (!std::isfinite(v)) throw Error("finite_diff_check: f returned non-finite value");
    return v;
  };

  double worst = 0.0;
  Tensor xp = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double x0 = x.data[i];
    xp.data[i] = x0 + h;
    const double fp = eval(xp);
    xp.data[i] = x0 - h;
    const double fm = eval(xp);
    xp.data[i] = x0;
    const double g_fd = (fp - fm) / (2.0 * h);
    const double err = std::fabs(g_ad[i] - g_fd) / std::fmax(1.0, std::fabs(g_ad[i]));
    worst = std::fmax(worst, err);
  }
  return worst;
}

}  // namespace raven
