#pragma once

#include <Eigen/Core>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mbplan/rng.hpp"

namespace mbplan::ad {

using Mat = Eigen::MatrixXd;
using NodeId = int;

// Tape-based reverse-mode differentiation over matrix-valued nodes.
// Rows are a batch dimension: ops act elementwise, broadcast row vectors,
// or reduce per row, so the same graph evaluates one plan or a whole CEM
// population. A tape is built fresh per forward pass and is single-threaded;
// parallel evaluation uses one tape per worker.
class Tape {
 public:
  NodeId leaf(Mat value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId div(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId a, double c);
  NodeId shift(NodeId a, double c);
  NodeId neg(NodeId a) { return scale(a, -1.0); }

  NodeId matmul(NodeId x, NodeId w);       // [B,n]·[n,m] -> [B,m]
  NodeId add_rowvec(NodeId x, NodeId r);   // broadcast [1,m] over rows
  NodeId mul_rowvec(NodeId x, NodeId r);

  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId swish(NodeId a);  // x * sigmoid(x)
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId sin(NodeId a);
  NodeId cos(NodeId a);
  NodeId square(NodeId a);
  NodeId softplus(NodeId a);

  NodeId sum(NodeId a);      // -> [1,1]
  NodeId mean(NodeId a);     // -> [1,1]
  NodeId rowsum(NodeId a);   // [B,n] -> [B,1]

  NodeId concat_cols(std::span<const NodeId> parts);
  NodeId slice_cols(NodeId a, int first, int count);

  // Identity forward; backward propagates nothing.
  NodeId stop_gradient(NodeId a);

  const Mat& value(NodeId id) const { return nodes_[id].val; }
  double scalar(NodeId id) const;

  // Seeds the (scalar) root with adjoint 1 and sweeps the tape in reverse.
  // Every node reachable from the root receives its adjoint; the rest stay
  // zero. Rejects non-scalar roots.
  void backward(NodeId root);

  const Mat& adjoint(NodeId id) const;

  // Adjoints of all leaves after backward(); unreached leaves map to zeros.
  std::unordered_map<NodeId, Mat> leaf_gradients() const;

  int size() const { return static_cast<int>(nodes_.size()); }
  void reset();

 private:
  enum class Op {
    kLeaf, kAdd, kSub, kMul, kDiv, kScale, kShift, kMatMul, kAddRow, kMulRow,
    kTanh, kSigmoid, kSwish, kExp, kLog, kSqrt, kSin, kCos, kSquare,
    kSoftplus, kSum, kMean, kRowSum, kConcat, kSlice, kStopGrad,
  };

  struct Node {
    Op op;
    Mat val;
    Mat adj;
    std::vector<NodeId> in;
    double c = 0.0;  // scale/shift constant or slice offset
    int i0 = 0, i1 = 0;
  };

  NodeId push(Op op, Mat val, std::vector<NodeId> in, double c = 0.0,
              int i0 = 0, int i1 = 0);
  Mat& grad_buf(NodeId id);
  void check_same_shape(NodeId a, NodeId b, const char* what) const;

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

enum class Activation { kSwish, kTanh, kIdentity };

// Fully connected stack. Weight matrices are [in, out]; biases are [1, out].
struct MlpParams {
  struct Layer {
    Mat w;
    Mat b;
    Activation act = Activation::kSwish;
  };
  std::vector<Layer> layers;

  int input_dim() const;
  int output_dim() const;
  // Rejects non-chaining layer dimensions.
  void validate() const;
};

// Seeded He-style initialization (biases zero).
MlpParams make_mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                   Activation hidden_act, Activation output_act, Rng& rng,
                   double weight_scale = 1.0);

// Weight/bias nodes of an MLP attached to a tape, so a training step can read
// parameter gradients back out after backward().
struct MlpAttached {
  std::vector<NodeId> w;
  std::vector<NodeId> b;
  const MlpParams* params = nullptr;
};

MlpAttached attach_mlp(Tape& tape, const MlpParams& params);
NodeId mlp_apply(Tape& tape, const MlpAttached& mlp, NodeId input);

// Forward pass recording all intermediates on the tape. Input is [B, in].
NodeId mlp_forward(Tape& tape, const MlpParams& params, NodeId input);

// Convenience: single input vector -> output vector, values only.
Eigen::VectorXd mlp_eval(const MlpParams& params, const Eigen::VectorXd& x);

// Lists every tensor of an MLP in a stable order (w0, b0, w1, b1, ...).
std::vector<Mat*> mlp_tensors(MlpParams& params);
std::vector<const Mat*> mlp_tensors(const MlpParams& params);

// Adam over an ordered list of tensors. Moment buffers are zero at step 0.
struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam(const std::vector<Mat*>& params, double lr);

// One bias-corrected descent step. Rejects non-finite gradients, which is the
// signal used to abort a diverged planning restart or training run.
void adam_step(const std::vector<Mat*>& params,
               const std::vector<const Mat*>& grads, AdamState& state);

// Central finite differences, (f(x+h e_i) - f(x-h e_i)) / 2h.
Eigen::VectorXd finite_diff_grad(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h = 1e-5);

}  // namespace mbplan::ad
