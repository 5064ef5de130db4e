#include "mbplan/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace mbplan::ad {

namespace {

std::string shape_of(const Mat& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

// 0.5*(1+tanh(x/2)) is a stable sigmoid for large |x|.
Eigen::ArrayXXd sigmoid_arr(const Eigen::ArrayXXd& x) {
  return 0.5 * (0.5 * x).tanh() + 0.5;
}

Eigen::ArrayXXd softplus_arr(const Eigen::ArrayXXd& x) {
  return x.max(0.0) + (-x.abs()).exp().log1p();
}

}  // namespace

NodeId Tape::push(Op op, Mat val, std::vector<NodeId> in, double c, int i0,
                  int i1) {
  Node n;
  n.op = op;
  n.val = std::move(val);
  n.in = std::move(in);
  n.c = c;
  n.i0 = i0;
  n.i1 = i1;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::check_same_shape(NodeId a, NodeId b, const char* what) const {
  const Mat& x = nodes_[a].val;
  const Mat& y = nodes_[b].val;
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_of(x) + " vs " + shape_of(y));
  }
}

NodeId Tape::leaf(Mat value) { return push(Op::kLeaf, std::move(value), {}); }

NodeId Tape::add(NodeId a, NodeId b) {
  check_same_shape(a, b, "add");
  return push(Op::kAdd, nodes_[a].val + nodes_[b].val, {a, b});
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_same_shape(a, b, "sub");
  return push(Op::kSub, nodes_[a].val - nodes_[b].val, {a, b});
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check_same_shape(a, b, "mul");
  return push(Op::kMul, nodes_[a].val.cwiseProduct(nodes_[b].val), {a, b});
}

NodeId Tape::div(NodeId a, NodeId b) {
  check_same_shape(a, b, "div");
  return push(Op::kDiv, nodes_[a].val.cwiseQuotient(nodes_[b].val), {a, b});
}

NodeId Tape::scale(NodeId a, double c) {
  return push(Op::kScale, nodes_[a].val * c, {a}, c);
}

NodeId Tape::shift(NodeId a, double c) {
  return push(Op::kShift, (nodes_[a].val.array() + c).matrix(), {a}, c);
}

NodeId Tape::matmul(NodeId x, NodeId w) {
  const Mat& xv = nodes_[x].val;
  const Mat& wv = nodes_[w].val;
  if (xv.cols() != wv.rows()) {
    throw std::invalid_argument("matmul: inner dims " + shape_of(xv) + " vs " +
                                shape_of(wv));
  }
  return push(Op::kMatMul, xv * wv, {x, w});
}

NodeId Tape::add_rowvec(NodeId x, NodeId r) {
  const Mat& xv = nodes_[x].val;
  const Mat& rv = nodes_[r].val;
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw std::invalid_argument("add_rowvec: " + shape_of(xv) + " vs " +
                                shape_of(rv));
  }
  return push(Op::kAddRow, xv.rowwise() + rv.row(0), {x, r});
}

NodeId Tape::mul_rowvec(NodeId x, NodeId r) {
  const Mat& xv = nodes_[x].val;
  const Mat& rv = nodes_[r].val;
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw std::invalid_argument("mul_rowvec: " + shape_of(xv) + " vs " +
                                shape_of(rv));
  }
  return push(Op::kMulRow,
              (xv.array().rowwise() * rv.row(0).array()).matrix(), {x, r});
}

NodeId Tape::tanh(NodeId a) {
  return push(Op::kTanh, nodes_[a].val.array().tanh().matrix(), {a});
}

NodeId Tape::sigmoid(NodeId a) {
  return push(Op::kSigmoid, sigmoid_arr(nodes_[a].val.array()).matrix(), {a});
}

NodeId Tape::swish(NodeId a) {
  const auto x = nodes_[a].val.array();
  return push(Op::kSwish, (x * sigmoid_arr(x)).matrix(), {a});
}

NodeId Tape::exp(NodeId a) {
  return push(Op::kExp, nodes_[a].val.array().exp().matrix(), {a});
}

NodeId Tape::log(NodeId a) {
  return push(Op::kLog, nodes_[a].val.array().log().matrix(), {a});
}

NodeId Tape::sqrt(NodeId a) {
  return push(Op::kSqrt, nodes_[a].val.array().sqrt().matrix(), {a});
}

NodeId Tape::sin(NodeId a) {
  return push(Op::kSin, nodes_[a].val.array().sin().matrix(), {a});
}

NodeId Tape::cos(NodeId a) {
  return push(Op::kCos, nodes_[a].val.array().cos().matrix(), {a});
}

NodeId Tape::square(NodeId a) {
  return push(Op::kSquare, nodes_[a].val.array().square().matrix(), {a});
}

NodeId Tape::softplus(NodeId a) {
  return push(Op::kSoftplus, softplus_arr(nodes_[a].val.array()).matrix(), {a});
}

NodeId Tape::sum(NodeId a) {
  Mat s(1, 1);
  s(0, 0) = nodes_[a].val.sum();
  return push(Op::kSum, std::move(s), {a});
}

NodeId Tape::mean(NodeId a) {
  Mat s(1, 1);
  s(0, 0) = nodes_[a].val.mean();
  return push(Op::kMean, std::move(s), {a});
}

NodeId Tape::rowsum(NodeId a) {
  return push(Op::kRowSum, nodes_[a].val.rowwise().sum(), {a});
}

NodeId Tape::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const Eigen::Index rows = nodes_[parts[0]].val.rows();
  Eigen::Index cols = 0;
  for (NodeId p : parts) {
    if (nodes_[p].val.rows() != rows) {
      throw std::invalid_argument("concat_cols: row mismatch");
    }
    cols += nodes_[p].val.cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (NodeId p : parts) {
    out.middleCols(at, nodes_[p].val.cols()) = nodes_[p].val;
    at += nodes_[p].val.cols();
  }
  return push(Op::kConcat, std::move(out),
              std::vector<NodeId>(parts.begin(), parts.end()));
}

NodeId Tape::slice_cols(NodeId a, int first, int count) {
  const Mat& v = nodes_[a].val;
  if (first < 0 || count < 0 || first + count > v.cols()) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(first) + "," +
                                std::to_string(first + count) +
                                ") out of range for " + shape_of(v));
  }
  return push(Op::kSlice, v.middleCols(first, count), {a}, 0.0, first, count);
}

NodeId Tape::stop_gradient(NodeId a) {
  return push(Op::kStopGrad, nodes_[a].val, {a});
}

double Tape::scalar(NodeId id) const {
  const Mat& v = nodes_[id].val;
  if (v.size() != 1) {
    throw std::invalid_argument("scalar: node is " + shape_of(v));
  }
  return v(0, 0);
}

Mat& Tape::grad_buf(NodeId id) { return nodes_[id].adj; }

void Tape::backward(NodeId root) {
  const Mat& rv = nodes_[root].val;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " +
                                shape_of(rv));
  }
  for (Node& n : nodes_) {
    n.adj = Mat::Zero(n.val.rows(), n.val.cols());
  }
  ran_backward_ = true;
  nodes_[root].adj(0, 0) = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    const Mat& g = n.adj;
    if (g.isZero(0.0)) continue;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kStopGrad:
        break;
      case Op::kAdd:
        grad_buf(n.in[0]) += g;
        grad_buf(n.in[1]) += g;
        break;
      case Op::kSub:
        grad_buf(n.in[0]) += g;
        grad_buf(n.in[1]) -= g;
        break;
      case Op::kMul:
        grad_buf(n.in[0]) += g.cwiseProduct(nodes_[n.in[1]].val);
        grad_buf(n.in[1]) += g.cwiseProduct(nodes_[n.in[0]].val);
        break;
      case Op::kDiv:
        grad_buf(n.in[0]) += g.cwiseQuotient(nodes_[n.in[1]].val);
        grad_buf(n.in[1]) -=
            g.cwiseProduct(n.val).cwiseQuotient(nodes_[n.in[1]].val);
        break;
      case Op::kScale:
        grad_buf(n.in[0]) += g * n.c;
        break;
      case Op::kShift:
        grad_buf(n.in[0]) += g;
        break;
      case Op::kMatMul:
        grad_buf(n.in[0]).noalias() += g * nodes_[n.in[1]].val.transpose();
        grad_buf(n.in[1]).noalias() += nodes_[n.in[0]].val.transpose() * g;
        break;
      case Op::kAddRow:
        grad_buf(n.in[0]) += g;
        grad_buf(n.in[1]) += g.colwise().sum();
        break;
      case Op::kMulRow:
        grad_buf(n.in[0]) +=
            (g.array().rowwise() * nodes_[n.in[1]].val.row(0).array()).matrix();
        grad_buf(n.in[1]) +=
            g.cwiseProduct(nodes_[n.in[0]].val).colwise().sum();
        break;
      case Op::kTanh:
        grad_buf(n.in[0]) +=
            (g.array() * (1.0 - n.val.array().square())).matrix();
        break;
      case Op::kSigmoid:
        grad_buf(n.in[0]) +=
            (g.array() * n.val.array() * (1.0 - n.val.array())).matrix();
        break;
      case Op::kSwish: {
        const auto x = nodes_[n.in[0]].val.array();
        const auto s = sigmoid_arr(x);
        grad_buf(n.in[0]) += (g.array() * (s + x * s * (1.0 - s))).matrix();
        break;
      }
      case Op::kExp:
        grad_buf(n.in[0]) += g.cwiseProduct(n.val);
        break;
      case Op::kLog:
        grad_buf(n.in[0]) += g.cwiseQuotient(nodes_[n.in[0]].val);
        break;
      case Op::kSqrt:
        grad_buf(n.in[0]) += (g.array() / (2.0 * n.val.array())).matrix();
        break;
      case Op::kSin:
        grad_buf(n.in[0]) +=
            g.cwiseProduct(nodes_[n.in[0]].val.array().cos().matrix());
        break;
      case Op::kCos:
        grad_buf(n.in[0]) -=
            g.cwiseProduct(nodes_[n.in[0]].val.array().sin().matrix());
        break;
      case Op::kSquare:
        grad_buf(n.in[0]) += 2.0 * g.cwiseProduct(nodes_[n.in[0]].val);
        break;
      case Op::kSoftplus:
        grad_buf(n.in[0]) +=
            (g.array() * sigmoid_arr(nodes_[n.in[0]].val.array())).matrix();
        break;
      case Op::kSum:
        grad_buf(n.in[0]).array() += g(0, 0);
        break;
      case Op::kMean:
        grad_buf(n.in[0]).array() += g(0, 0) / nodes_[n.in[0]].val.size();
        break;
      case Op::kRowSum:
        grad_buf(n.in[0]).colwise() += g.col(0);
        break;
      case Op::kConcat: {
        Eigen::Index at = 0;
        for (NodeId p : n.in) {
          const Eigen::Index w = nodes_[p].val.cols();
          grad_buf(p) += g.middleCols(at, w);
          at += w;
        }
        break;
      }
      case Op::kSlice:
        grad_buf(n.in[0]).middleCols(n.i0, n.i1) += g;
        break;
    }
  }
}

const Mat& Tape::adjoint(NodeId id) const {
  if (!ran_backward_) {
    throw std::logic_error("adjoint: backward() has not been run");
  }
  return nodes_[id].adj;
}

std::unordered_map<NodeId, Mat> Tape::leaf_gradients() const {
  std::unordered_map<NodeId, Mat> out;
  for (NodeId id = 0; id < size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::kLeaf) continue;
    out.emplace(id, adjoint(id));
  }
  return out;
}

void Tape::reset() {
  nodes_.clear();
  ran_backward_ = false;
}

int MlpParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().w.rows());
}

int MlpParams::output_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().w.cols());
}

void MlpParams::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.b.rows() != 1 || l.b.cols() != l.w.cols()) {
      throw std::invalid_argument("mlp layer " + std::to_string(i) +
                                  ": bias shape " + shape_of(l.b) +
                                  " does not match weights " + shape_of(l.w));
    }
    if (i > 0 && layers[i - 1].w.cols() != l.w.rows()) {
      throw std::invalid_argument(
          "mlp layers " + std::to_string(i - 1) + "->" + std::to_string(i) +
          " do not chain: " + shape_of(layers[i - 1].w) + " then " +
          shape_of(l.w));
    }
  }
}

MlpParams make_mlp(int input_dim, const std::vector<int>& hidden,
                   int output_dim, Activation hidden_act, Activation output_act,
                   Rng& rng, double weight_scale) {
  MlpParams p;
  std::vector<int> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    MlpParams::Layer l;
    const int fan_in = dims[i];
    const double std = weight_scale * std::sqrt(2.0 / std::max(1, fan_in));
    l.w = Mat(dims[i], dims[i + 1]);
    for (Eigen::Index c = 0; c < l.w.cols(); ++c) {
      for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
        l.w(r, c) = std * rng.gaussian();
      }
    }
    l.b = Mat::Zero(1, dims[i + 1]);
    l.act = (i + 2 == dims.size()) ? output_act : hidden_act;
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

MlpAttached attach_mlp(Tape& tape, const MlpParams& params) {
  MlpAttached a;
  a.params = &params;
  for (const auto& l : params.layers) {
    a.w.push_back(tape.leaf(l.w));
    a.b.push_back(tape.leaf(l.b));
  }
  return a;
}

NodeId mlp_apply(Tape& tape, const MlpAttached& mlp, NodeId input) {
  const auto& layers = mlp.params->layers;
  if (!layers.empty() &&
      tape.value(input).cols() != layers.front().w.rows()) {
    throw std::invalid_argument(
        "mlp input has " + std::to_string(tape.value(input).cols()) +
        " columns, first layer expects " +
        std::to_string(layers.front().w.rows()));
  }
  NodeId x = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = tape.add_rowvec(tape.matmul(x, mlp.w[i]), mlp.b[i]);
    switch (layers[i].act) {
      case Activation::kSwish:
        x = tape.swish(x);
        break;
      case Activation::kTanh:
        x = tape.tanh(x);
        break;
      case Activation::kIdentity:
        break;
    }
  }
  return x;
}

NodeId mlp_forward(Tape& tape, const MlpParams& params, NodeId input) {
  return mlp_apply(tape, attach_mlp(tape, params), input);
}

Eigen::VectorXd mlp_eval(const MlpParams& params, const Eigen::VectorXd& x) {
  Tape tape;
  const NodeId in = tape.leaf(x.transpose());
  const NodeId out = mlp_forward(tape, params, in);
  return tape.value(out).row(0).transpose();
}

std::vector<Mat*> mlp_tensors(MlpParams& params) {
  std::vector<Mat*> t;
  for (auto& l : params.layers) {
    t.push_back(&l.w);
    t.push_back(&l.b);
  }
  return t;
}

std::vector<const Mat*> mlp_tensors(const MlpParams& params) {
  std::vector<const Mat*> t;
  for (const auto& l : params.layers) {
    t.push_back(&l.w);
    t.push_back(&l.b);
  }
  return t;
}

AdamState make_adam(const std::vector<Mat*>& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const Mat* p : params) {
    s.m.push_back(Mat::Zero(p->rows(), p->cols()));
    s.v.push_back(Mat::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(const std::vector<Mat*>& params,
               const std::vector<const Mat*>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: tensor count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->rows() != params[i]->rows() ||
        grads[i]->cols() != params[i]->cols()) {
      throw std::invalid_argument("adam_step: shape mismatch at tensor " +
                                  std::to_string(i));
    }
    if (!grads[i]->allFinite()) {
      throw std::runtime_error("adam_step: non-finite gradient at tensor " +
                               std::to_string(i));
    }
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, state.step);
  const double c2 = 1.0 - std::pow(state.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * *grads[i];
    state.v[i] = state.beta2 * state.v[i] +
                 (1.0 - state.beta2) * grads[i]->cwiseProduct(*grads[i]);
    params[i]->array() -= state.lr * (state.m[i].array() / c1) /
                          ((state.v[i].array() / c2).sqrt() + state.eps);
  }
}

Eigen::VectorXd finite_diff_grad(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = p(i);
    p(i) = orig + h;
    const double fp = f(p);
    p(i) = orig - h;
    const double fm = f(p);
    p(i) = orig;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace mbplan::ad
