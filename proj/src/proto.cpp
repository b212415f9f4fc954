#include "fbox/proto.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>

namespace fbox::proto {

namespace {

using RowVector = Eigen::RowVectorXd;

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

struct CosineTable {
  Matrix sim;     // C x C similarities
  Vector na, nb;  // row norms of anchors and bank
};

CosineTable cosine_table(const Matrix& anchors, const Matrix& bank) {
  if (anchors.rows() != bank.rows() || anchors.cols() != bank.cols())
    throw std::invalid_argument("infonce: anchors and bank shapes differ");
  if (anchors.rows() == 0) throw std::invalid_argument("infonce: empty inputs");
  CosineTable t;
  t.na = anchors.rowwise().norm();
  t.nb = bank.rowwise().norm();
  for (Eigen::Index i = 0; i < t.na.size(); ++i)
    if (t.na[i] == 0.0 || t.nb[i] == 0.0)
      throw std::invalid_argument("infonce: zero feature row");
  t.sim = ((anchors * bank.transpose()).array() / (t.na * t.nb.transpose()).array()).matrix();
  return t;
}

// Row softmax of sim/tau plus the loss -sum_c log P[c,c].
std::pair<Matrix, double> infonce_softmax(const CosineTable& t, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("infonce: tau must be positive");
  const Eigen::Index c = t.sim.rows();
  Matrix p(c, c);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < c; ++i) {
    const RowVector row = t.sim.row(i) / tau;
    const double m = row.maxCoeff();
    const RowVector e = (row.array() - m).exp().matrix();
    const double z = e.sum();
    p.row(i) = e / z;
    loss += -(row[i] - m) + std::log(z);
  }
  return {p, loss};
}

struct AttentionCache {
  Matrix q, k, v;
  std::vector<Matrix> weights;  // per head
};

AttentionOutput attention_forward(const Matrix& f_prp, const Matrix& bank,
                                  const AttentionParams& params, double dropout_rate,
                                  std::uint64_t seed, AttentionCache* cache) {
  const Eigen::Index d = f_prp.cols();
  if (bank.cols() != d) throw std::invalid_argument("cross_attention: feature dims differ");
  if (params.wq.rows() != d || params.wq.cols() != d || params.wk.rows() != d ||
      params.wk.cols() != d || params.wv.rows() != d || params.wv.cols() != d)
    throw std::invalid_argument("cross_attention: projection shape mismatch");
  if (params.heads < 1 || d % params.heads != 0)
    throw std::invalid_argument("cross_attention: dim not divisible by head count");
  if (bank.rows() == 0) throw std::invalid_argument("cross_attention: empty bank");

  const Eigen::Index dh = d / params.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix q = f_prp * params.wq;
  const Matrix k = bank * params.wk;
  const Matrix v = bank * params.wv;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  AttentionOutput out;
  out.attended.resize(f_prp.rows(), d);
  for (int h = 0; h < params.heads; ++h) {
    const Matrix logits = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    Matrix w(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double m = logits.row(i).maxCoeff();
      const RowVector e = (logits.row(i).array() - m).exp().matrix();
      w.row(i) = e / e.sum();
    }
    if (dropout_rate > 0.0) {
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
          w(i, j) = unit(rng) < dropout_rate ? 0.0 : w(i, j) / (1.0 - dropout_rate);
    }
    out.attended.middleCols(h * dh, dh) = w * v.middleCols(h * dh, dh);
    out.head_weights.push_back(std::move(w));
  }
  out.refined = out.attended + f_prp;
  if (cache) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->weights = out.head_weights;
  }
  return out;
}

struct FusionCache {
  Matrix hidden;  // tanh activations
};

Matrix fusion_forward(const Matrix& f_voxel, const Matrix& vxl_mask, const FusionParams& p,
                      FusionCache* cache) {
  if (f_voxel.rows() != vxl_mask.rows())
    throw std::invalid_argument("fuse_features: row counts differ");
  if (p.w1.rows() != vxl_mask.cols() || p.w1.cols() != p.b1.size() ||
      p.w2.rows() != p.w1.cols() || p.w2.cols() != p.b2.size() || p.w2.cols() != f_voxel.cols())
    throw std::invalid_argument("fuse_features: parameter shape mismatch");
  const Matrix hidden =
      ((vxl_mask * p.w1).rowwise() + p.b1.transpose()).array().tanh().matrix();
  Matrix fused = f_voxel + ((hidden * p.w2).rowwise() + p.b2.transpose()).eval();
  if (cache) cache->hidden = hidden;
  return fused;
}

}  // namespace

FusionParams zero_fusion(int in_dim, int hidden_dim, int out_dim) {
  FusionParams p;
  p.w1 = Matrix::Zero(in_dim, hidden_dim);
  p.b1 = Vector::Zero(hidden_dim);
  p.w2 = Matrix::Zero(hidden_dim, out_dim);
  p.b2 = Vector::Zero(out_dim);
  return p;
}

Matrix fuse_features(const Matrix& f_voxel, const Matrix& vxl_mask, const FusionParams& params) {
  return fusion_forward(f_voxel, vxl_mask, params, nullptr);
}

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero vector");
  return a.dot(b) / (na * nb);
}

double infonce_loss(const Matrix& anchors, const Matrix& bank, double tau) {
  return infonce_softmax(cosine_table(anchors, bank), tau).second;
}

InfoNceGradients infonce_gradients(const Matrix& anchors, const Matrix& bank, double tau) {
  const CosineTable t = cosine_table(anchors, bank);
  auto [p, loss] = infonce_softmax(t, tau);

  InfoNceGradients out;
  out.loss = loss;
  out.d_anchors = Matrix::Zero(anchors.rows(), anchors.cols());
  out.d_bank = Matrix::Zero(bank.rows(), bank.cols());

  const Eigen::Index c = anchors.rows();
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index s = 0; s < c; ++s) {
      const double g = (p(i, s) - (i == s ? 1.0 : 0.0)) / tau;  // dL/dSim(i,s)
      if (g == 0.0) continue;
      const double inv = 1.0 / (t.na[i] * t.nb[s]);
      out.d_anchors.row(i) +=
          g * (bank.row(s) * inv - t.sim(i, s) * anchors.row(i) / (t.na[i] * t.na[i]));
      out.d_bank.row(s) +=
          g * (anchors.row(i) * inv - t.sim(i, s) * bank.row(s) / (t.nb[s] * t.nb[s]));
    }
  }
  return out;
}

AttentionOutput cross_attention_refine(const Matrix& f_prp, const Matrix& bank,
                                       const AttentionParams& params, double dropout_rate,
                                       std::uint64_t seed) {
  return attention_forward(f_prp, bank, params, dropout_rate, seed, nullptr);
}

double kernel_loss(const KernelInputs& inputs, const KernelParams& params) {
  const Matrix f_prp = fuse_features(inputs.f_voxel, inputs.vxl_mask, params.fusion);
  const AttentionOutput att = cross_attention_refine(f_prp, params.bank, params.attention);
  check_same_shape(att.refined, inputs.target, "kernel target");
  const double task = 0.5 * (att.refined - inputs.target).squaredNorm();
  return task + inputs.lambda * infonce_loss(inputs.anchors, params.bank, inputs.tau);
}

KernelEval kernel_loss_and_gradients(const KernelInputs& inputs, const KernelParams& params) {
  FusionCache fusion_cache;
  const Matrix f_prp =
      fusion_forward(inputs.f_voxel, inputs.vxl_mask, params.fusion, &fusion_cache);
  AttentionCache att_cache;
  const AttentionOutput att =
      attention_forward(f_prp, params.bank, params.attention, 0.0, 0, &att_cache);
  check_same_shape(att.refined, inputs.target, "kernel target");

  KernelEval eval;
  eval.task_loss = 0.5 * (att.refined - inputs.target).squaredNorm();

  const Eigen::Index d = f_prp.cols();
  const int heads = params.attention.heads;
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix g_tilde = att.refined - inputs.target;
  Matrix g_fprp = g_tilde;  // residual branch
  Matrix g_q = Matrix::Zero(f_prp.rows(), d);
  Matrix g_k = Matrix::Zero(params.bank.rows(), d);
  Matrix g_v = Matrix::Zero(params.bank.rows(), d);

  for (int h = 0; h < heads; ++h) {
    const Matrix& w = att_cache.weights[h];
    const Matrix g_oh = g_tilde.middleCols(h * dh, dh);
    const Matrix vh = att_cache.v.middleCols(h * dh, dh);
    const Matrix qh = att_cache.q.middleCols(h * dh, dh);
    const Matrix kh = att_cache.k.middleCols(h * dh, dh);

    const Matrix g_w = g_oh * vh.transpose();
    g_v.middleCols(h * dh, dh) = w.transpose() * g_oh;

    Matrix g_logits(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      const double dot = g_w.row(i).dot(w.row(i));
      g_logits.row(i) = (w.row(i).array() * (g_w.row(i).array() - dot)).matrix();
    }
    g_q.middleCols(h * dh, dh) = g_logits * kh * scale;
    g_k.middleCols(h * dh, dh) = g_logits.transpose() * qh * scale;
  }

  KernelGradients& g = eval.grads;
  g.attention.heads = heads;
  g.attention.wq = f_prp.transpose() * g_q;
  g.attention.wk = params.bank.transpose() * g_k;
  g.attention.wv = params.bank.transpose() * g_v;
  g.bank = g_k * params.attention.wk.transpose() + g_v * params.attention.wv.transpose();
  g_fprp += g_q * params.attention.wq.transpose();

  // fusion backward through F_prp = F_voxel + tanh(M w1 + b1) w2 + b2
  const Matrix& hidden = fusion_cache.hidden;
  g.fusion.w2 = hidden.transpose() * g_fprp;
  g.fusion.b2 = g_fprp.colwise().sum().transpose();
  const Matrix g_hidden = g_fprp * params.fusion.w2.transpose();
  const Matrix g_pre =
      g_hidden.cwiseProduct((1.0 - hidden.array().square()).matrix());
  g.fusion.w1 = inputs.vxl_mask.transpose() * g_pre;
  g.fusion.b1 = g_pre.colwise().sum().transpose();

  InfoNceGradients nce = infonce_gradients(inputs.anchors, params.bank, inputs.tau);
  eval.contrastive_loss = nce.loss;
  g.bank += inputs.lambda * nce.d_bank;

  eval.loss = eval.task_loss + inputs.lambda * eval.contrastive_loss;
  return eval;
}

TrainResult train_prototypes(Matrix bank, const Matrix& anchors, const TrainConfig& config) {
  if (!(config.learning_rate > 0.0))
    throw std::invalid_argument("train_prototypes: learning rate must be positive");
  if (config.steps < 0) throw std::invalid_argument("train_prototypes: negative step count");

  TrainResult result;
  result.trace.reserve(config.steps + 1);
  for (int step = 0; step < config.steps; ++step) {
    InfoNceGradients g = infonce_gradients(anchors, bank, config.tau);
    const double weighted = config.lambda * g.loss;
    if (!std::isfinite(weighted))
      throw std::runtime_error("train_prototypes: loss diverged at step " + std::to_string(step));
    result.trace.push_back(weighted);
    bank -= config.learning_rate * config.lambda * g.d_bank;
  }
  const double final_loss = config.lambda * infonce_loss(anchors, bank, config.tau);
  if (!std::isfinite(final_loss))
    throw std::runtime_error("train_prototypes: loss diverged at step " +
                             std::to_string(config.steps));
  result.trace.push_back(final_loss);
  result.bank = std::move(bank);
  return result;
}

MetaTask least_squares_task(Matrix features, Vector targets) {
  if (features.rows() != targets.size())
    throw std::invalid_argument("least_squares_task: row count mismatch");
  const double m = static_cast<double>(features.rows());
  auto phi = std::make_shared<Matrix>(std::move(features));
  auto y = std::make_shared<Vector>(std::move(targets));
  MetaTask task;
  task.loss = [phi, y, m](const Vector& theta) {
    return (*phi * theta - *y).squaredNorm() / (2.0 * m);
  };
  task.grad = [phi, y, m](const Vector& theta) {
    return Vector(phi->transpose() * (*phi * theta - *y) / m);
  };
  task.hessian_vec = [phi, m](const Vector&, const Vector& v) {
    return Vector(phi->transpose() * (*phi * v) / m);
  };
  return task;
}

Vector maml_meta_step(const Vector& theta, const MetaTask& support, const MetaTask& query,
                      double inner_lr, double outer_lr, bool first_order) {
  const Vector adapted = theta - inner_lr * support.grad(theta);
  const Vector g_query = query.grad(adapted);
  if (first_order) return theta - outer_lr * g_query;
  // d/dtheta L_q(theta - a*g_s(theta)) = (I - a*H_s(theta)) g_q(adapted)
  const Vector correction = g_query - inner_lr * support.hessian_vec(theta, g_query);
  return theta - outer_lr * correction;
}

}  // namespace fbox::proto
