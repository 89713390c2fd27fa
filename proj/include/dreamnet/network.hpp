#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dreamnet/data.hpp"
#include "dreamnet/errors.hpp"
#include "dreamnet/layers.hpp"
#include "dreamnet/optim.hpp"
#include "dreamnet/spd_core.hpp"
#include "dreamnet/sym_matrix.hpp"

namespace dreamnet {

enum class HeadMode { kAllStages, kFinalOnly };
enum class RtMode { kFinalOnly, kAllStages };
enum class RtMetric { kEuclidean, kLogEuclidean };

inline const char* to_string(HeadMode m) {
  return m == HeadMode::kAllStages ? "all-stages" : "final-only";
}
inline const char* to_string(RtMode m) {
  return m == RtMode::kFinalOnly ? "final-only" : "all-stages";
}
inline const char* to_string(RtMetric m) {
  return m == RtMetric::kEuclidean ? "euclidean" : "log-euclidean";
}

/// Architecture description. backbone_dims[0] is the input dimension and
/// each consecutive pair is one BiMap. The final pair is the (shared shape
/// of the) per-stage autoencoder encoders, so the backbone proper runs
/// BiMap/ReEig over the leading pairs and hands the stages a rectified
/// feature of the second-to-last dim. Stage hidden features live in the
/// last dim; reconstructions recover the second-to-last dim, which is what
/// the reconstruction term compares against.
struct ModelConfig {
  std::vector<int> backbone_dims{400, 200, 100, 50};
  int num_rae = 3;  // E; stage counts 3/5/10 match the 27/47/92-layer variants
  int rae_hidden_dim = 50;
  int num_classes = 7;
  double epsilon = 1e-4;
  double lambda_rt = 1e-4;
  bool shortcuts_enabled = true;
  HeadMode heads = HeadMode::kAllStages;
  RtMode rt_mode = RtMode::kFinalOnly;
  RtMetric rt_metric = RtMetric::kEuclidean;
  std::uint64_t seed = 0;

  int input_dim() const { return backbone_dims.front(); }
  /// Dim of the backbone output Z and of every reconstruction.
  int recon_dim() const { return backbone_dims[backbone_dims.size() - 2]; }
  /// Dim of the stage hidden features H_e; the element-wise shortcut
  /// additions require it to be equal across stages.
  int hidden_dim() const { return backbone_dims.back(); }
  int num_heads() const { return heads == HeadMode::kAllStages ? num_rae : 1; }
  /// Stage (0-based) read by head index i.
  int head_stage(int i) const { return heads == HeadMode::kAllStages ? i : num_rae - 1; }

  void validate() const {
    if (backbone_dims.size() < 3) {
      throw BadConfig(
          "backbone_dims must list at least three dims (backbone BiMap + stage encoder)");
    }
    for (std::size_t i = 0; i < backbone_dims.size(); ++i) {
      if (backbone_dims[i] < 1) throw BadConfig("backbone_dims entries must be positive");
      if (i > 0 && backbone_dims[i] >= backbone_dims[i - 1]) {
        throw BadConfig("backbone_dims must be strictly decreasing");
      }
    }
    if (num_rae < 1) throw BadConfig("num_rae (E) must be >= 1");
    if (rae_hidden_dim != backbone_dims.back()) {
      throw BadConfig("rae_hidden_dim must equal the last backbone dim (shortcut additions "
                      "happen in that space)");
    }
    if (num_classes < 2) throw BadConfig("num_classes must be >= 2");
    if (epsilon <= 0.0) throw BadConfig("epsilon must be positive");
    if (lambda_rt < 0.0) throw BadConfig("lambda_rt must be >= 0");
  }
};

// Paper configurations: facial emotion (AFEW), hand actions (FPHA), UAV
// actions. Class counts are the datasets'; epsilon follows the per-dataset
// settings.
inline ModelConfig afew_preset() {
  ModelConfig c;
  c.backbone_dims = {400, 200, 100, 50};
  c.rae_hidden_dim = 50;
  c.num_classes = 7;
  c.epsilon = 1e-4;
  return c;
}
inline ModelConfig fpha_preset() {
  ModelConfig c;
  c.backbone_dims = {63, 53, 43, 33};
  c.rae_hidden_dim = 33;
  c.num_classes = 45;
  c.epsilon = 1e-4;
  return c;
}
inline ModelConfig uav_preset() {
  ModelConfig c;
  c.backbone_dims = {51, 43, 37, 31};
  c.rae_hidden_dim = 31;
  c.num_classes = 155;
  c.epsilon = 1e-5;
  return c;
}

/// Instantiated parameter set. backbone holds the backbone-proper BiMaps
/// (leading dim pairs); encoders/decoders are the per-stage weights over the
/// final pair. Decoder weights map the hidden dim back up to the
/// reconstruction dim; they are stored as the transpose's tall Stiefel point
/// and transposed at the point of use.
struct Model {
  ModelConfig config;
  std::vector<StiefelParam> backbone;
  std::vector<StiefelParam> encoders;
  std::vector<StiefelParam> decoders;
  std::vector<HeadParam> heads;

  ParamRefs params() {
    ParamRefs refs;
    for (auto& w : backbone) refs.stiefel.push_back(&w);
    for (auto& w : encoders) refs.stiefel.push_back(&w);
    for (auto& w : decoders) refs.stiefel.push_back(&w);
    for (auto& h : heads) refs.heads.push_back(&h);
    return refs;
  }

  void zero_grads() {
    for (auto& w : backbone) w.grad.setZero();
    for (auto& w : encoders) w.grad.setZero();
    for (auto& w : decoders) w.grad.setZero();
    for (auto& h : heads) h.grad.setZero();
  }
};

/// Builds a model with random semi-orthogonal BiMap weights and Gaussian
/// head projections (stddev 1/d_e). Bit-deterministic per config.seed.
inline Model build(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  std::uint64_t stream = 0;
  auto next_seed = [&] { return mix_seed(config.seed, stream++); };

  for (std::size_t i = 0; i + 2 < config.backbone_dims.size(); ++i) {
    m.backbone.push_back(
        init_semi_orthogonal(config.backbone_dims[i], config.backbone_dims[i + 1], next_seed()));
  }
  const int d_rec = config.recon_dim();
  const int d_h = config.hidden_dim();
  for (int e = 0; e < config.num_rae; ++e) {
    m.encoders.push_back(init_semi_orthogonal(d_rec, d_h, next_seed()));
    m.decoders.push_back(init_semi_orthogonal(d_rec, d_h, next_seed()));
  }
  const double stddev = 1.0 / static_cast<double>(d_h);
  for (int i = 0; i < config.num_heads(); ++i) {
    std::mt19937_64 rng(next_seed());
    std::normal_distribution<double> gauss(0.0, stddev);
    Eigen::MatrixXd p(config.num_classes, d_h * d_h);
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = gauss(rng);
    m.heads.push_back(make_head(std::move(p)));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

struct StageTrace {
  ReEigCache input_reeig;  // A_e = ReEig(Hhat_{e-1}); absent for stage 1 (Z is rectified)
  bool has_input_reeig = false;
  BiMapCache enc_cache;
  SymMatrix h;             // H_e = W_e1^T A_e W_e1
  ReEigCache post_reeig;   // Htilde_e = ReEig(H_e [+ skip])
  SpdMatrix h_tilde;
  BiMapCache dec_cache;
  SymMatrix h_hat;         // Hhat_e = W_e2^T Htilde_e W_e2, PSD of rank <= hidden dim

  bool has_head = false;
  LogEigCache log_cache;
  HeadCache head_cache;
  double head_loss = 0.0;
  Eigen::VectorXd head_probs;

  bool has_rt_log = false;  // log-euclidean RT bookkeeping
  ReEigCache rt_reeig_cache;
  LogEigCache rt_log_cache;
  SymMatrix rt_log;
};

struct ForwardTrace {
  SymMatrix z;  // backbone output: rectified feature of the second-to-last dim
  std::vector<BiMapCache> backbone_bimap;
  std::vector<ReEigCache> backbone_reeig;
  std::vector<StageTrace> stages;

  bool has_z_log = false;
  LogEigCache z_log_cache;
  SymMatrix z_log;

  double rt = 0.0;          // unweighted reconstruction term
  double ce = 0.0;          // summed head cross-entropies
  double total_loss = 0.0;  // ce + lambda_rt * rt
};

namespace detail {

/// Backbone and autoencoder stages: features plus caches, no classifiers,
/// no reconstruction term.
inline ForwardTrace run_trunk(const Model& model, const SpdMatrix& x) {
  const ModelConfig& cfg = model.config;
  if (x.dim() != cfg.input_dim()) {
    throw DimensionMismatch("forward: input dim " + std::to_string(x.dim()) +
                            " != backbone input dim " + std::to_string(cfg.input_dim()));
  }
  ForwardTrace t;

  // Backbone proper: alternating BiMap/ReEig down to the reconstruction dim.
  SymMatrix cur = x.sym();
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    auto [y, bc] = bimap_forward(model.backbone[i].value, cur);
    t.backbone_bimap.push_back(std::move(bc));
    auto [rect, rc] = reeig_forward(y, cfg.epsilon);
    t.backbone_reeig.push_back(std::move(rc));
    cur = rect.sym();
  }
  t.z = cur;

  // Stages. Stage 1 encodes Z directly (already rectified); later stages
  // rectify the previous reconstruction first, which also restores strict
  // definiteness lost to the decoder's rank deficiency. The skip added at
  // stage 2 is the raw H_1; later stages add the previous post-ReEig Htilde.
  t.stages.resize(cfg.num_rae);
  const SymMatrix* input = &t.z;
  for (int e = 0; e < cfg.num_rae; ++e) {
    StageTrace& st = t.stages[e];
    if (e > 0) {
      auto [a, arc] = reeig_forward(*input, cfg.epsilon);
      st.input_reeig = std::move(arc);
      st.has_input_reeig = true;
      auto [h, ec] = bimap_forward(model.encoders[e].value, a.sym());
      st.h = std::move(h);
      st.enc_cache = std::move(ec);
    } else {
      auto [h, ec] = bimap_forward(model.encoders[e].value, *input);
      st.h = std::move(h);
      st.enc_cache = std::move(ec);
    }

    SymMatrix pre_activation = st.h;
    if (cfg.shortcuts_enabled && e >= 1) {
      const SymMatrix& skip = (e == 1) ? t.stages[0].h : t.stages[e - 1].h_tilde.sym();
      pre_activation = shortcut_add(st.h, skip);
    }
    auto [ht, prc] = reeig_forward(pre_activation, cfg.epsilon);
    st.h_tilde = std::move(ht);
    st.post_reeig = std::move(prc);

    auto [hh, dc] = bimap_forward(model.decoders[e].value.transpose(), st.h_tilde.sym());
    st.h_hat = std::move(hh);
    st.dec_cache = std::move(dc);
    input = &st.h_hat;
  }
  return t;
}

/// Stages contributing to the reconstruction term, 0-based.
inline std::vector<int> rt_stages(const ModelConfig& cfg) {
  if (cfg.rt_mode == RtMode::kFinalOnly) return {cfg.num_rae - 1};
  std::vector<int> all(cfg.num_rae);
  for (int e = 0; e < cfg.num_rae; ++e) all[e] = e;
  return all;
}

inline ForwardTrace forward_impl(const Model& model, const SpdMatrix& x, int label,
                                 double lambda_rt) {
  const ModelConfig& cfg = model.config;
  ForwardTrace t = run_trunk(model, x);

  for (int i = 0; i < cfg.num_heads(); ++i) {
    StageTrace& st = t.stages[cfg.head_stage(i)];
    auto [logm, lc] = logeig_forward(st.h_tilde);
    HeadForward hf = head_forward(model.heads[i].projection, logm, label);
    st.has_head = true;
    st.log_cache = std::move(lc);
    st.head_cache = std::move(hf.cache);
    st.head_loss = hf.loss;
    st.head_probs = std::move(hf.probs);
    t.ce += st.head_loss;
  }

  if (cfg.rt_metric == RtMetric::kLogEuclidean) {
    auto [zl, zc] = logeig_forward(SpdMatrix(t.z));
    t.z_log = std::move(zl);
    t.z_log_cache = std::move(zc);
    t.has_z_log = true;
  }
  for (int e : rt_stages(cfg)) {
    StageTrace& st = t.stages[e];
    if (cfg.rt_metric == RtMetric::kEuclidean) {
      t.rt += frobenius_dist2(t.z, st.h_hat);
    } else {
      // Reconstructions are PSD of rank <= hidden dim, so rectify before
      // the matrix log, mirroring what the next stage's encoder chain does.
      auto [hr, rrc] = reeig_forward(st.h_hat, cfg.epsilon);
      auto [hl, hc] = logeig_forward(hr);
      st.rt_reeig_cache = std::move(rrc);
      st.rt_log = std::move(hl);
      st.rt_log_cache = std::move(hc);
      st.has_rt_log = true;
      t.rt += frobenius_dist2(t.z_log, st.rt_log);
    }
  }
  t.total_loss = t.ce + lambda_rt * t.rt;
  return t;
}

/// Reverse traversal of one sample's trace, accumulating unscaled Euclidean
/// gradients into the model's parameter slots.
inline void backward_impl(Model& model, const ForwardTrace& t, double lambda_rt) {
  const ModelConfig& cfg = model.config;
  const int e_count = cfg.num_rae;
  const Eigen::Index d_rec = cfg.recon_dim();
  const Eigen::Index d_h = cfg.hidden_dim();

  std::vector<SymMatrix> d_h_hat(e_count, SymMatrix::Zero(d_rec));
  std::vector<SymMatrix> d_h_tilde(e_count, SymMatrix::Zero(d_h));
  std::vector<SymMatrix> d_h_pre(e_count, SymMatrix::Zero(d_h));
  SymMatrix d_z = SymMatrix::Zero(d_rec);

  // Reconstruction-term seeds.
  for (int e : rt_stages(cfg)) {
    const StageTrace& st = t.stages[e];
    if (cfg.rt_metric == RtMetric::kEuclidean) {
      const SymMatrix diff = st.h_hat - t.z;
      d_h_hat[e] = d_h_hat[e] + diff * (2.0 * lambda_rt);
      d_z = d_z + diff * (-2.0 * lambda_rt);
    } else {
      const SymMatrix diff = st.rt_log - t.z_log;  // d/dlogH = 2 diff, d/dlogZ = -2 diff
      const SymMatrix d_rect = logeig_backward(st.rt_log_cache, diff * 2.0);
      d_h_hat[e] = d_h_hat[e] + reeig_backward(st.rt_reeig_cache, d_rect) * lambda_rt;
      d_z = d_z + logeig_backward(t.z_log_cache, diff * -2.0) * lambda_rt;
    }
  }

  for (int i = 0; i < cfg.num_heads(); ++i) {
    const int e = cfg.head_stage(i);
    const StageTrace& st = t.stages[e];
    HeadGrads hg = head_backward(model.heads[i].projection, st.head_cache);
    model.heads[i].grad += hg.dp;
    d_h_tilde[e] = d_h_tilde[e] + logeig_backward(st.log_cache, hg.dx);
  }

  for (int e = e_count - 1; e >= 0; --e) {
    const StageTrace& st = t.stages[e];

    // Decoder (wide weight used as the stored tall value's transpose).
    BiMapGrads dec_g =
        bimap_backward(model.decoders[e].value.transpose(), st.dec_cache, d_h_hat[e]);
    model.decoders[e].grad += dec_g.dw.transpose();
    d_h_tilde[e] = d_h_tilde[e] + dec_g.dx;

    // Post-add ReEig; the cotangent fans into H_e and the skip input.
    const SymMatrix d_pre = reeig_backward(st.post_reeig, d_h_tilde[e]);
    d_h_pre[e] = d_h_pre[e] + d_pre;
    if (cfg.shortcuts_enabled && e >= 1) {
      if (e == 1) {
        d_h_pre[0] = d_h_pre[0] + d_pre;
      } else {
        d_h_tilde[e - 1] = d_h_tilde[e - 1] + d_pre;
      }
    }

    BiMapGrads enc_g = bimap_backward(model.encoders[e].value, st.enc_cache, d_h_pre[e]);
    model.encoders[e].grad += enc_g.dw;
    if (e == 0) {
      d_z = d_z + enc_g.dx;  // stage 1 encodes Z directly
    } else {
      d_h_hat[e - 1] = d_h_hat[e - 1] + reeig_backward(st.input_reeig, enc_g.dx);
    }
  }

  // Backbone proper (each BiMap is followed by a ReEig).
  SymMatrix cur = d_z;
  for (int i = static_cast<int>(model.backbone.size()) - 1; i >= 0; --i) {
    const SymMatrix dy = reeig_backward(t.backbone_reeig[i], cur);
    BiMapGrads bg = bimap_backward(model.backbone[i].value, t.backbone_bimap[i], dy);
    model.backbone[i].grad += bg.dw;
    cur = bg.dx;
  }
}

}  // namespace detail

inline ForwardTrace forward(const Model& model, const SpdMatrix& x, int label) {
  return detail::forward_impl(model, x, label, model.config.lambda_rt);
}

/// Mean Eq.-style composite loss over a batch, forward only. Shares no code
/// with the backward pass; gradcheck uses it as the numeric objective.
inline double loss_only(const Model& model, std::span<const Sample> batch, double lambda_rt) {
  if (batch.empty()) throw TooFew("loss_only: batch is empty");
  double total = 0.0;
  for (const Sample& s : batch) {
    total += detail::forward_impl(model, s.x, s.label, lambda_rt).total_loss;
  }
  return total / static_cast<double>(batch.size());
}

/// Batch-averaged loss; Euclidean gradients are written into the parameter
/// grad slots (overwriting their previous contents).
inline double loss_and_grads(Model& model, std::span<const Sample> batch, double lambda_rt) {
  if (batch.empty()) throw TooFew("loss_and_grads: batch is empty");
  model.zero_grads();
  double total = 0.0;
  for (const Sample& s : batch) {
    ForwardTrace t = detail::forward_impl(model, s.x, s.label, lambda_rt);
    total += t.total_loss;
    detail::backward_impl(model, t, lambda_rt);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (auto& w : model.backbone) w.grad *= inv_b;
  for (auto& w : model.encoders) w.grad *= inv_b;
  for (auto& w : model.decoders) w.grad *= inv_b;
  for (auto& h : model.heads) h.grad *= inv_b;
  return total * inv_b;
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

struct VoteResult {
  int label = 0;
  std::vector<int> per_head_labels;
  std::vector<Eigen::VectorXd> per_head_probs;
};

inline int argmax_smallest(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

/// Majority vote over per-head argmaxes. Ties break by the largest summed
/// softmax probability across heads, then by the smallest class index.
inline VoteResult vote_from_probs(std::vector<Eigen::VectorXd> probs) {
  VoteResult r;
  r.per_head_probs = std::move(probs);
  const int c = static_cast<int>(r.per_head_probs.front().size());
  std::vector<int> counts(c, 0);
  Eigen::VectorXd summed = Eigen::VectorXd::Zero(c);
  for (const auto& p : r.per_head_probs) {
    const int lbl = argmax_smallest(p);
    r.per_head_labels.push_back(lbl);
    ++counts[lbl];
    summed += p;
  }
  const int top = *std::max_element(counts.begin(), counts.end());
  int winner = -1;
  double winner_score = 0.0;
  for (int k = 0; k < c; ++k) {
    if (counts[k] != top) continue;
    if (winner < 0 || summed(k) > winner_score) {
      winner = k;
      winner_score = summed(k);
    }
  }
  r.label = winner;
  return r;
}

inline std::vector<Eigen::VectorXd> head_probabilities(const Model& model, const SpdMatrix& x) {
  ForwardTrace t = detail::run_trunk(model, x);
  std::vector<Eigen::VectorXd> probs;
  for (int i = 0; i < model.config.num_heads(); ++i) {
    const StageTrace& st = t.stages[model.config.head_stage(i)];
    auto [logm, lc] = logeig_forward(st.h_tilde);
    probs.push_back(head_probs(model.heads[i].projection, logm));
  }
  return probs;
}

inline VoteResult predict_vote(const Model& model, const SpdMatrix& x) {
  return vote_from_probs(head_probabilities(model, x));
}

/// Nuclear norms of the traced feature maps: Z, each post-ReEig stage
/// output, and the final reconstruction.
inline std::vector<std::pair<std::string, double>> feature_stats(const Model& model,
                                                                 const SpdMatrix& x) {
  ForwardTrace t = detail::run_trunk(model, x);
  std::vector<std::pair<std::string, double>> stats;
  stats.emplace_back("Z", nuclear_norm(t.z));
  for (int e = 0; e < model.config.num_rae; ++e) {
    stats.emplace_back("Htilde_" + std::to_string(e + 1), nuclear_norm(t.stages[e].h_tilde.sym()));
  }
  stats.emplace_back("Hhat_" + std::to_string(model.config.num_rae),
                     nuclear_norm(t.stages.back().h_hat));
  return stats;
}

}  // namespace dreamnet
