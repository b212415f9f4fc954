#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

namespace fbox::proto {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Two affine layers with tanh between: MLP(M) = tanh(M*w1 + b1)*w2 + b2.
struct FusionParams {
  Matrix w1;  // in x hidden
  Vector b1;
  Matrix w2;  // hidden x out
  Vector b2;
};

FusionParams zero_fusion(int in_dim, int hidden_dim, int out_dim);

struct AttentionParams {
  Matrix wq;  // d x d
  Matrix wk;
  Matrix wv;
  int heads = 4;
};

struct TrainConfig {
  double learning_rate = 0.1;
  int steps = 500;
  double tau = 0.07;
  double lambda = 1.0;
  double inner_lr = 0.01;
  double outer_lr = 0.001;
  std::uint64_t seed = 0;
};

// F_fused = F_voxel + MLP(vxl_mask), rowwise.
Matrix fuse_features(const Matrix& f_voxel, const Matrix& vxl_mask, const FusionParams& params);

double cosine_similarity(const Vector& a, const Vector& b);

// InfoNCE over the prototype bank: anchors row c is the positive of bank row
// c, every other bank row its negative; cosine similarities scaled by 1/tau.
double infonce_loss(const Matrix& anchors, const Matrix& bank, double tau);

struct InfoNceGradients {
  double loss = 0.0;
  Matrix d_anchors;
  Matrix d_bank;
};

InfoNceGradients infonce_gradients(const Matrix& anchors, const Matrix& bank, double tau);

struct AttentionOutput {
  Matrix refined;                    // tilde: attended + residual input
  Matrix attended;                   // hat: concatenated head outputs
  std::vector<Matrix> head_weights;  // per head, rows sum to 1 (dropout off)
};

// Multi-head cross attention with the bank as key/value and f_prp as query;
// refined = attended + f_prp. dropout_rate > 0 draws a seeded mask over the
// attention weights (inverted dropout); the default is deterministic.
AttentionOutput cross_attention_refine(const Matrix& f_prp, const Matrix& bank,
                                       const AttentionParams& params, double dropout_rate = 0.0,
                                       std::uint64_t seed = 0);

// Composed training kernel: proposals are fused voxel features refined by the
// bank through cross attention; task head is least-squares on the refined
// features; contrastive term ties anchors to the bank.
//   loss = 0.5*||refine(fuse(f_voxel, mask)) - target||^2
//          + lambda * infonce(anchors, bank, tau)
struct KernelInputs {
  Matrix f_voxel;  // N x d
  Matrix vxl_mask;  // N x |C|
  Matrix anchors;  // |C| x d
  Matrix target;   // N x d
  double tau = 0.07;
  double lambda = 1.0;
};

struct KernelParams {
  FusionParams fusion;
  AttentionParams attention;
  Matrix bank;  // |C| x d
};

struct KernelGradients {
  FusionParams fusion;
  AttentionParams attention;
  Matrix bank;
};

struct KernelEval {
  double loss = 0.0;
  double task_loss = 0.0;
  double contrastive_loss = 0.0;
  KernelGradients grads;
};

double kernel_loss(const KernelInputs& inputs, const KernelParams& params);

// Exact reverse-mode gradients of kernel_loss for every parameter.
KernelEval kernel_loss_and_gradients(const KernelInputs& inputs, const KernelParams& params);

struct TrainResult {
  Matrix bank;
  std::vector<double> trace;  // lambda-weighted loss per step, final appended
};

// Plain gradient descent of lambda * infonce_loss over the bank. Throws if
// the loss leaves the finite range, naming the step.
TrainResult train_prototypes(Matrix bank, const Matrix& anchors, const TrainConfig& config);

// A differentiable task: loss, gradient, and exact Hessian-vector product.
struct MetaTask {
  std::function<double(const Vector&)> loss;
  std::function<Vector(const Vector&)> grad;
  std::function<Vector(const Vector&, const Vector&)> hessian_vec;
};

// Mean-squared-error linear regression task: loss = ||phi*theta - y||^2/(2m).
MetaTask least_squares_task(Matrix features, Vector targets);

// Two-step MAML update: one inner step on the support task, outer step on the
// query loss at the adapted parameters. The second-order term uses the
// support Hessian-vector product exactly; first_order drops it.
Vector maml_meta_step(const Vector& theta, const MetaTask& support, const MetaTask& query,
                      double inner_lr, double outer_lr, bool first_order = false);

}  // namespace fbox::proto
