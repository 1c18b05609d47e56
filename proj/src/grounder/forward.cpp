#include <algorithm>
#include <cmath>
#include <random>

#include "seqground/grounder/model.hpp"

namespace seqground::grounder {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

struct LnCache {
  Matrix xhat;
  std::vector<double> rstd;
};

void layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, Matrix& out, LnCache& cache) {
  const std::size_t L = x.rows(), D = x.cols();
  out = Matrix(L, D);
  cache.xhat = Matrix(L, D);
  cache.rstd.assign(L, 0.0);
  for (std::size_t p = 0; p < L; ++p) {
    const auto row = x.row(p);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(D);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd[p] = rstd;
    for (std::size_t d = 0; d < D; ++d) {
      const double xh = (row[d] - mean) * rstd;
      cache.xhat(p, d) = xh;
      out(p, d) = xh * g(0, d) + b(0, d);
    }
  }
}

// dx += d/dx, dg/db accumulate.
void layer_norm_backward(const Matrix& dout, const Matrix& g, const LnCache& cache, Matrix& dx, Matrix& dg,
                         Matrix& db) {
  const std::size_t L = dout.rows(), D = dout.cols();
  std::vector<double> dxhat(D);
  for (std::size_t p = 0; p < L; ++p) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double go = dout(p, d);
      dg(0, d) += go * cache.xhat(p, d);
      db(0, d) += go;
      dxhat[d] = go * g(0, d);
      mean_d += dxhat[d];
      mean_dx += dxhat[d] * cache.xhat(p, d);
    }
    mean_d /= static_cast<double>(D);
    mean_dx /= static_cast<double>(D);
    for (std::size_t d = 0; d < D; ++d) {
      dx(p, d) += cache.rstd[p] * (dxhat[d] - mean_d - cache.xhat(p, d) * mean_dx);
    }
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t p = 0; p < m.rows(); ++p) {
    for (std::size_t d = 0; d < m.cols(); ++d) m(p, d) += bias(0, d);
  }
}

void col_sum_acc(const Matrix& m, Matrix& out) {
  for (std::size_t p = 0; p < m.rows(); ++p) {
    for (std::size_t d = 0; d < m.cols(); ++d) out(0, d) += m(p, d);
  }
}

// Ragged key sets: query p attends to keys [begin[p], begin[p] + count[p]).
struct KeySets {
  std::vector<int> begin;
  std::vector<int> count;
  std::vector<std::size_t> offset;
  std::size_t total = 0;

  void finalize() {
    offset.assign(count.size(), 0);
    total = 0;
    for (std::size_t p = 0; p < count.size(); ++p) {
      offset[p] = total;
      total += static_cast<std::size_t>(count[p]);
    }
  }
};

void attend(const Matrix& q, const Matrix& k, const Matrix& v, int H, int dh, const KeySets& keys,
            std::vector<double>& probs, Matrix& out) {
  const std::size_t L = q.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  probs.assign(static_cast<std::size_t>(H) * keys.total, 0.0);
  out = Matrix(L, q.cols());
  for (int h = 0; h < H; ++h) {
    const std::size_t c0 = static_cast<std::size_t>(h * dh);
    for (std::size_t p = 0; p < L; ++p) {
      const int cnt = keys.count[p];
      if (cnt == 0) continue;
      double* pr = probs.data() + static_cast<std::size_t>(h) * keys.total + keys.offset[p];
      for (int i = 0; i < cnt; ++i) {
        const auto kp = static_cast<std::size_t>(keys.begin[p] + i);
        double s = 0.0;
        for (int d = 0; d < dh; ++d) s += q(p, c0 + d) * k(kp, c0 + d);
        pr[i] = s * scale;
      }
      softmax_inplace({pr, static_cast<std::size_t>(cnt)});
      for (int i = 0; i < cnt; ++i) {
        const auto kp = static_cast<std::size_t>(keys.begin[p] + i);
        for (int d = 0; d < dh; ++d) out(p, c0 + d) += pr[i] * v(kp, c0 + d);
      }
    }
  }
}

void attend_backward(const Matrix& q, const Matrix& k, const Matrix& v, int H, int dh, const KeySets& keys,
                     const std::vector<double>& probs, const Matrix& dout, Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t L = q.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> dp;
  for (int h = 0; h < H; ++h) {
    const std::size_t c0 = static_cast<std::size_t>(h * dh);
    for (std::size_t p = 0; p < L; ++p) {
      const int cnt = keys.count[p];
      if (cnt == 0) continue;
      const double* pr = probs.data() + static_cast<std::size_t>(h) * keys.total + keys.offset[p];
      dp.assign(static_cast<std::size_t>(cnt), 0.0);
      double weighted = 0.0;
      for (int i = 0; i < cnt; ++i) {
        const auto kp = static_cast<std::size_t>(keys.begin[p] + i);
        double s = 0.0;
        for (int d = 0; d < dh; ++d) {
          s += dout(p, c0 + d) * v(kp, c0 + d);
          dv(kp, c0 + d) += pr[i] * dout(p, c0 + d);
        }
        dp[static_cast<std::size_t>(i)] = s;
        weighted += pr[i] * s;
      }
      for (int i = 0; i < cnt; ++i) {
        const auto kp = static_cast<std::size_t>(keys.begin[p] + i);
        const double ds = pr[i] * (dp[static_cast<std::size_t>(i)] - weighted) * scale;
        if (ds == 0.0) continue;
        for (int d = 0; d < dh; ++d) {
          dq(p, c0 + d) += ds * k(kp, c0 + d);
          dk(kp, c0 + d) += ds * q(p, c0 + d);
        }
      }
    }
  }
}

struct LayerCache {
  Matrix x_in;
  LnCache ln1;
  Matrix a, q, k, v;
  std::vector<double> probs;
  bool adapter = false;
  double tg = 0.0;
  Matrix slots, ka, va, oa;
  std::vector<double> aprobs;
  Matrix o;
  Matrix x_mid;
  LnCache ln2;
  Matrix b, h1, g1;
};

struct Cache {
  KeySets vanilla_keys;
  KeySets adapter_keys;
  std::vector<int> slot_targets;
  std::vector<LayerCache> layers;
  LnCache lnf;
  Matrix z;
  Matrix grd_hidden;  // n x D
  Matrix qh, kh;
  Matrix vocab_logits;
  Matrix step_logits;
};

void check_inputs(const GroundingModelState& st, const Matrix& feats, const TranscriptEncoding& tr,
                  const std::vector<int>& slots) {
  const auto D = static_cast<std::size_t>(st.config.embed_dim);
  auto fail = [](const std::string& what) { throw GrounderError(GrounderErrc::ShapeMismatch, what); };
  if (feats.rows() == 0) fail("scene has no objects");
  if (feats.cols() != D) fail("object features do not have embed_dim columns");
  const std::size_t L = tr.tokens.size();
  if (tr.positions.size() != L || tr.segment_start.size() != L || tr.adapter_visible.size() != L ||
      tr.vocab_targets.size() != L || tr.step_of_token.size() != L) {
    fail("transcript arrays disagree in length");
  }
  for (std::size_t p = 0; p < L; ++p) {
    if (tr.tokens[p] < 0 || tr.tokens[p] >= st.config.vocab_size) fail("token id out of range");
    if (tr.positions[p] < 0 || tr.positions[p] >= st.config.max_seq_len) fail("position out of range");
    if (tr.segment_start[p] < 0 || tr.segment_start[p] > static_cast<int>(p)) fail("bad segment start");
  }
  if (tr.n_steps() > st.config.max_steps) throw GrounderError(GrounderErrc::TooManySteps, "transcript exceeds max_steps");
  if (static_cast<int>(slots.size()) > st.config.max_steps) fail("more adapter slots than max_steps");
  for (int t : slots) {
    if (t < 0 || static_cast<std::size_t>(t) >= feats.rows()) fail("adapter target index out of range");
  }
}

void run_forward(const GroundingModelState& st, const Matrix& feats, const TranscriptEncoding& tr,
                 const std::vector<int>& slot_targets, const ForwardOptions& opt, Cache& c) {
  check_inputs(st, feats, tr, slot_targets);
  const auto& P = st.params;
  const int H = st.config.n_heads, dh = st.config.head_dim();
  const std::size_t L = tr.tokens.size(), D = static_cast<std::size_t>(st.config.embed_dim);
  const int S = static_cast<int>(slot_targets.size());

  c.slot_targets = slot_targets;
  c.vanilla_keys = KeySets{};
  c.adapter_keys = KeySets{};
  bool any_adapter = false;
  for (std::size_t p = 0; p < L; ++p) {
    c.vanilla_keys.begin.push_back(tr.segment_start[p]);
    c.vanilla_keys.count.push_back(static_cast<int>(p) - tr.segment_start[p] + 1);
    const int visible = opt.use_adapter ? std::min(tr.adapter_visible[p], S) : 0;
    c.adapter_keys.begin.push_back(0);
    c.adapter_keys.count.push_back(visible);
    any_adapter = any_adapter || visible > 0;
  }
  c.vanilla_keys.finalize();
  c.adapter_keys.finalize();

  Matrix x(L, D);
  for (std::size_t p = 0; p < L; ++p) {
    const auto te = P.tok_emb.row(static_cast<std::size_t>(tr.tokens[p]));
    const auto pe = P.pos_emb.row(static_cast<std::size_t>(tr.positions[p]));
    for (std::size_t d = 0; d < D; ++d) x(p, d) = te[d] + pe[d];
  }

  if (opt.probe) opt.probe->weights.assign(P.layers.size(), std::vector<std::vector<double>>(L));

  c.layers.assign(P.layers.size(), LayerCache{});
  for (std::size_t l = 0; l < P.layers.size(); ++l) {
    const auto& W = P.layers[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    layer_norm(x, W.ln1_g, W.ln1_b, lc.a, lc.ln1);
    matmul(lc.a, W.wq, lc.q);
    matmul(lc.a, W.wk, lc.k);
    matmul(lc.a, W.wv, lc.v);
    attend(lc.q, lc.k, lc.v, H, dh, c.vanilla_keys, lc.probs, lc.o);

    lc.adapter = opt.use_adapter && any_adapter;
    if (lc.adapter) {
      lc.slots = Matrix(static_cast<std::size_t>(S), D);
      for (int j = 0; j < S; ++j) {
        const auto o = feats.row(static_cast<std::size_t>(slot_targets[static_cast<std::size_t>(j)]));
        const auto a = W.bank.row(static_cast<std::size_t>(j));
        for (std::size_t d = 0; d < D; ++d) lc.slots(static_cast<std::size_t>(j), d) = o[d] + a[d];
      }
      matmul(lc.slots, W.wk, lc.ka);
      matmul(lc.slots, W.wv, lc.va);
      attend(lc.q, lc.ka, lc.va, H, dh, c.adapter_keys, lc.aprobs, lc.oa);
      lc.tg = std::tanh(W.gate(0, 0));
      for (std::size_t p = 0; p < L; ++p) {
        if (c.adapter_keys.count[p] == 0) continue;
        for (std::size_t d = 0; d < D; ++d) lc.o(p, d) += lc.tg * lc.oa(p, d);
      }
      if (opt.probe) {
        for (std::size_t p = 0; p < L; ++p) {
          const int cnt = c.adapter_keys.count[p];
          auto& rec = opt.probe->weights[l][p];
          for (int h = 0; h < H; ++h) {
            const double* pr = lc.aprobs.data() + static_cast<std::size_t>(h) * c.adapter_keys.total +
                               c.adapter_keys.offset[p];
            rec.insert(rec.end(), pr, pr + cnt);
          }
        }
      }
    }

    Matrix y;
    matmul(lc.o, W.wo, y);
    add_row_bias(y, W.bo);
    lc.x_mid = x;
    for (std::size_t i = 0; i < y.size(); ++i) lc.x_mid.data()[i] += y.data()[i];

    layer_norm(lc.x_mid, W.ln2_g, W.ln2_b, lc.b, lc.ln2);
    matmul(lc.b, W.w1, lc.h1);
    add_row_bias(lc.h1, W.b1);
    lc.g1 = lc.h1;
    for (auto& v : lc.g1.data()) v = gelu(v);
    Matrix y2;
    matmul(lc.g1, W.w2, y2);
    add_row_bias(y2, W.b2);
    x = lc.x_mid;
    for (std::size_t i = 0; i < y2.size(); ++i) x.data()[i] += y2.data()[i];
  }

  layer_norm(x, P.lnf_g, P.lnf_b, c.z, c.lnf);
  matmul(c.z, P.lm_head, c.vocab_logits);
  add_row_bias(c.vocab_logits, P.lm_bias);

  const std::size_t n = tr.grd_positions.size();
  c.grd_hidden = Matrix(n, D);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = c.z.row(static_cast<std::size_t>(tr.grd_positions[i]));
    std::copy(src.begin(), src.end(), c.grd_hidden.row(i).begin());
  }
  matmul(c.grd_hidden, P.head_q, c.qh);
  matmul(feats, P.head_k, c.kh);
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  c.step_logits = Matrix(n, feats.rows());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < feats.rows(); ++j) c.step_logits(i, j) = dot(c.qh.row(i), c.kh.row(j)) * scale;
  }
  if (!c.step_logits.all_finite() || !c.vocab_logits.all_finite()) {
    throw GrounderError(GrounderErrc::NonFiniteActivation, "non-finite logits in forward pass");
  }
}

// Gradient of the loss w.r.t. every parameter, given logit gradients. Accumulates into g.
void run_backward(const GroundingModelState& st, const Matrix& feats, const ObjectInputs& inputs,
                  const TranscriptEncoding& tr, const Cache& c, const Matrix& dvocab, const Matrix& dstep,
                  ModelParams& g) {
  const auto& P = st.params;
  const int H = st.config.n_heads, dh = st.config.head_dim();
  const std::size_t L = tr.tokens.size(), D = static_cast<std::size_t>(st.config.embed_dim);
  const std::size_t n = tr.grd_positions.size(), N = feats.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));

  Matrix dz(L, D);
  matmul_a_bt_acc(dvocab, P.lm_head, dz);
  matmul_at_b_acc(c.z, dvocab, g.lm_head);
  col_sum_acc(dvocab, g.lm_bias);

  Matrix dfeats(N, D);
  Matrix dqh(n, D), dkh(N, D);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      const double gl = dstep(i, j) * scale;
      if (gl == 0.0) continue;
      for (std::size_t d = 0; d < D; ++d) {
        dqh(i, d) += gl * c.kh(j, d);
        dkh(j, d) += gl * c.qh(i, d);
      }
    }
  }
  Matrix dgrd(n, D);
  matmul_a_bt_acc(dqh, P.head_q, dgrd);
  matmul_at_b_acc(c.grd_hidden, dqh, g.head_q);
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = dz.row(static_cast<std::size_t>(tr.grd_positions[i]));
    for (std::size_t d = 0; d < D; ++d) dst[d] += dgrd(i, d);
  }
  matmul_a_bt_acc(dkh, P.head_k, dfeats);
  matmul_at_b_acc(feats, dkh, g.head_k);

  Matrix dx(L, D);
  layer_norm_backward(dz, P.lnf_g, c.lnf, dx, g.lnf_g, g.lnf_b);

  for (std::size_t li = P.layers.size(); li-- > 0;) {
    const auto& W = P.layers[li];
    auto& G = g.layers[li];
    const auto& lc = c.layers[li];

    // MLP block: x_out = x_mid + W2 gelu(W1 LN2(x_mid)).
    Matrix dx_mid = dx;
    Matrix dg1(L, W.w1.cols());
    matmul_a_bt_acc(dx, W.w2, dg1);
    matmul_at_b_acc(lc.g1, dx, G.w2);
    col_sum_acc(dx, G.b2);
    for (std::size_t i = 0; i < dg1.size(); ++i) dg1.data()[i] *= gelu_grad(lc.h1.data()[i]);
    Matrix db(L, D);
    matmul_a_bt_acc(dg1, W.w1, db);
    matmul_at_b_acc(lc.b, dg1, G.w1);
    col_sum_acc(dg1, G.b1);
    layer_norm_backward(db, W.ln2_g, lc.ln2, dx_mid, G.ln2_g, G.ln2_b);

    // Attention block: x_mid = x_in + Wo (attn_vanilla + tanh(G) attn_adapter).
    Matrix dx_in = dx_mid;
    Matrix dout(L, D);
    matmul_a_bt_acc(dx_mid, W.wo, dout);
    matmul_at_b_acc(lc.o, dx_mid, G.wo);
    col_sum_acc(dx_mid, G.bo);

    Matrix dq(L, D), dk(L, D), dv(L, D);
    attend_backward(lc.q, lc.k, lc.v, H, dh, c.vanilla_keys, lc.probs, dout, dq, dk, dv);

    if (lc.adapter) {
      const std::size_t S = lc.slots.rows();
      Matrix doa(L, D);
      double dgate = 0.0;
      for (std::size_t p = 0; p < L; ++p) {
        if (c.adapter_keys.count[p] == 0) continue;
        for (std::size_t d = 0; d < D; ++d) {
          doa(p, d) = lc.tg * dout(p, d);
          dgate += dout(p, d) * lc.oa(p, d);
        }
      }
      G.gate(0, 0) += dgate * (1.0 - lc.tg * lc.tg);
      Matrix dka(S, D), dva(S, D);
      attend_backward(lc.q, lc.ka, lc.va, H, dh, c.adapter_keys, lc.aprobs, doa, dq, dka, dva);
      Matrix dslots(S, D);
      matmul_a_bt_acc(dka, W.wk, dslots);
      matmul_a_bt_acc(dva, W.wv, dslots);
      matmul_at_b_acc(lc.slots, dka, G.wk);
      matmul_at_b_acc(lc.slots, dva, G.wv);
      for (std::size_t j = 0; j < S; ++j) {
        auto bank = G.bank.row(j);
        auto df = dfeats.row(static_cast<std::size_t>(c.slot_targets[j]));
        for (std::size_t d = 0; d < D; ++d) {
          bank[d] += dslots(j, d);
          df[d] += dslots(j, d);
        }
      }
    }

    Matrix da(L, D);
    matmul_a_bt_acc(dq, W.wq, da);
    matmul_a_bt_acc(dk, W.wk, da);
    matmul_a_bt_acc(dv, W.wv, da);
    matmul_at_b_acc(lc.a, dq, G.wq);
    matmul_at_b_acc(lc.a, dk, G.wk);
    matmul_at_b_acc(lc.a, dv, G.wv);
    layer_norm_backward(da, W.ln1_g, lc.ln1, dx_in, G.ln1_g, G.ln1_b);
    dx = std::move(dx_in);
  }

  for (std::size_t p = 0; p < L; ++p) {
    auto te = g.tok_emb.row(static_cast<std::size_t>(tr.tokens[p]));
    auto pe = g.pos_emb.row(static_cast<std::size_t>(tr.positions[p]));
    for (std::size_t d = 0; d < D; ++d) {
      te[d] += dx(p, d);
      pe[d] += dx(p, d);
    }
  }

  for (std::size_t j = 0; j < N; ++j) {
    const auto df = dfeats.row(j);
    auto ce = g.cat_emb.row(static_cast<std::size_t>(inputs.category[j]));
    for (std::size_t d = 0; d < D; ++d) ce[d] += df[d];
    for (const auto& [bucket, weight] : inputs.caption_bag[j]) {
      auto cp = g.cap_proj.row(static_cast<std::size_t>(bucket));
      for (std::size_t d = 0; d < D; ++d) cp[d] += weight * df[d];
    }
    for (std::size_t k = 0; k < 6; ++k) {
      const double xk = inputs.box[j][k];
      if (xk == 0.0) continue;
      auto bp = g.box_proj.row(k);
      for (std::size_t d = 0; d < D; ++d) bp[d] += xk * df[d];
    }
  }
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

GroundingOutput to_output(Cache&& c) {
  GroundingOutput out;
  out.step_logits = std::move(c.step_logits);
  out.vocab_logits = std::move(c.vocab_logits);
  out.predicted = argmax_rows(out.step_logits);
  return out;
}

// Free-running: step i's logits depend only on slots 0..i-2, so n passes with a growing
// slot list reproduce stepwise decoding exactly.
GroundingOutput free_running(const GroundingModelState& st, const Matrix& feats, const TranscriptEncoding& tr,
                             const ForwardOptions& opt, Cache& c) {
  const int n = tr.n_steps();
  std::vector<int> slots;
  const bool needs_slots = opt.use_adapter && tr.mode == ContextMode::Full;
  for (int i = 0; i < n; ++i) {
    if (!needs_slots || i == n - 1) break;
    ForwardOptions quiet = opt;
    quiet.probe = nullptr;
    run_forward(st, feats, tr, slots, quiet, c);
    const auto row = c.step_logits.row(static_cast<std::size_t>(i));
    slots.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  run_forward(st, feats, tr, slots, opt, c);
  return to_output(std::move(c));
}

std::vector<int> slot_list(const TranscriptEncoding& tr, const std::vector<int>& prior) {
  const std::size_t need = tr.grd_positions.empty() ? 0 : tr.grd_positions.size() - 1;
  int max_visible = 0;
  for (int v : tr.adapter_visible) max_visible = std::max(max_visible, v);
  const std::size_t want = std::max(need, static_cast<std::size_t>(max_visible));
  if (prior.size() < want) {
    throw GrounderError(GrounderErrc::ShapeMismatch, "teacher forcing needs " + std::to_string(want) +
                                                         " prior targets, got " + std::to_string(prior.size()));
  }
  return {prior.begin(), prior.begin() + static_cast<std::ptrdiff_t>(want)};
}

struct ExampleGrad {
  LossBreakdown loss;
  Matrix dvocab, dstep;
};

// Cross-entropy terms and their logit gradients (scaled by `weight`).
ExampleGrad ce_terms(const Matrix& step_logits, const Matrix& vocab_logits, const std::vector<int>& gold,
                     const std::vector<int>& targets, double weight) {
  ExampleGrad eg;
  eg.dstep = Matrix(step_logits.rows(), step_logits.cols());
  eg.dvocab = Matrix(vocab_logits.rows(), vocab_logits.cols());
  if (gold.size() != step_logits.rows()) throw GrounderError(GrounderErrc::ShapeMismatch, "gold targets vs steps");
  if (targets.size() != vocab_logits.rows()) throw GrounderError(GrounderErrc::ShapeMismatch, "token targets vs length");
  const std::size_t n = gold.size();
  std::vector<double> prob;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = step_logits.row(i);
    if (gold[i] < 0 || static_cast<std::size_t>(gold[i]) >= row.size()) {
      throw GrounderError(GrounderErrc::ShapeMismatch, "gold target index out of range");
    }
    prob.assign(row.begin(), row.end());
    softmax_inplace(prob);
    const double peak = *std::max_element(row.begin(), row.end());
    double lse = 0.0;
    for (double v : row) lse += std::exp(v - peak);
    eg.loss.grounding += (peak + std::log(lse) - row[static_cast<std::size_t>(gold[i])]) / static_cast<double>(n);
    for (std::size_t j = 0; j < row.size(); ++j) {
      eg.dstep(i, j) = weight * (prob[j] - (static_cast<int>(j) == gold[i] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  const auto m = static_cast<double>(std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; }));
  for (std::size_t p = 0; p < targets.size(); ++p) {
    const int t = targets[p];
    if (t < 0) continue;
    const auto row = vocab_logits.row(p);
    if (static_cast<std::size_t>(t) >= row.size()) throw GrounderError(GrounderErrc::ShapeMismatch, "token id out of range");
    prob.assign(row.begin(), row.end());
    softmax_inplace(prob);
    const double peak = *std::max_element(row.begin(), row.end());
    double lse = 0.0;
    for (double v : row) lse += std::exp(v - peak);
    eg.loss.instruction += (peak + std::log(lse) - row[static_cast<std::size_t>(t)]) / m;
    for (std::size_t j = 0; j < row.size(); ++j) {
      eg.dvocab(p, j) = weight * (prob[j] - (static_cast<int>(j) == t ? 1.0 : 0.0)) / m;
    }
  }
  eg.loss.total = eg.loss.grounding + eg.loss.instruction;
  return eg;
}

}  // namespace

GroundingOutput forward(const GroundingModelState& state, const ObjectTokenSet& objects,
                        const TranscriptEncoding& transcript, const std::vector<int>& prior_targets,
                        bool teacher_forcing, const ForwardOptions& options) {
  Cache c;
  if (!teacher_forcing) return free_running(state, objects.features, transcript, options, c);
  run_forward(state, objects.features, transcript, slot_list(transcript, prior_targets), options, c);
  return to_output(std::move(c));
}

std::vector<double> grounding_scores(std::span<const double> grd_hidden, const Matrix& objects, const Matrix& head_q,
                                     const Matrix& head_k) {
  const std::size_t D = grd_hidden.size();
  if (objects.cols() != D || head_q.rows() != D || head_k.rows() != D || head_q.cols() != head_k.cols()) {
    throw GrounderError(GrounderErrc::ShapeMismatch, "grounding head dimensions disagree");
  }
  Matrix h(1, D);
  std::copy(grd_hidden.begin(), grd_hidden.end(), h.row(0).begin());
  Matrix q, k;
  matmul(h, head_q, q);
  matmul(objects, head_k, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  std::vector<double> out;
  for (std::size_t j = 0; j < objects.rows(); ++j) out.push_back(dot(q.row(0), k.row(j)) * scale);
  for (double v : out) {
    if (!std::isfinite(v)) throw GrounderError(GrounderErrc::NonFiniteActivation, "non-finite grounding score");
  }
  return out;
}

LossBreakdown loss(const GroundingOutput& output, const std::vector<int>& gold_targets,
                   const std::vector<int>& gold_tokens) {
  return ce_terms(output.step_logits, output.vocab_logits, gold_targets, gold_tokens, 1.0).loss;
}

namespace {

LossBreakdown accumulate(const GroundingModelState& state, const std::vector<const Example*>& batch,
                         bool teacher_forcing, ModelParams* grads) {
  if (batch.empty()) throw GrounderError(GrounderErrc::EmptyCorpus, "empty batch");
  LossBreakdown total;
  const double weight = 1.0 / static_cast<double>(batch.size());
  Cache c;
  for (const Example* ex : batch) {
    const Matrix feats = featurize(state.params, ex->objects, state.config.embed_dim);
    std::vector<int> slots;
    if (teacher_forcing) {
      slots = slot_list(ex->transcript, ex->gold);
    } else {
      ObjectTokenSet set{{}, ex->objects, feats};
      slots = forward(state, set, ex->transcript, {}, false).predicted;
      if (!slots.empty()) slots.pop_back();
      if (ex->transcript.mode == ContextMode::NoContext) slots.clear();
    }
    run_forward(state, feats, ex->transcript, slots, {}, c);
    auto eg = ce_terms(c.step_logits, c.vocab_logits, ex->gold, ex->transcript.vocab_targets, weight);
    if (!std::isfinite(eg.loss.total)) throw GrounderError(GrounderErrc::Divergence, ex->task_id + ": non-finite loss");
    total.grounding += weight * eg.loss.grounding;
    total.instruction += weight * eg.loss.instruction;
    if (grads) run_backward(state, feats, ex->objects, ex->transcript, c, eg.dvocab, eg.dstep, *grads);
  }
  total.total = total.grounding + total.instruction;
  return total;
}

}  // namespace

LossBreakdown loss_and_gradient(const GroundingModelState& state, const std::vector<const Example*>& batch,
                                bool teacher_forcing, ModelParams& grads) {
  auto out = accumulate(state, batch, teacher_forcing, &grads);
  bool finite = true;
  grads.for_each([&](const std::string&, const Matrix& m) { finite = finite && m.all_finite(); });
  if (!finite) throw GrounderError(GrounderErrc::NonFiniteGradient, "non-finite gradient");
  return out;
}

LossBreakdown batch_loss(const GroundingModelState& state, const std::vector<const Example*>& batch,
                         bool teacher_forcing) {
  return accumulate(state, batch, teacher_forcing, nullptr);
}

json GradCheckReport::to_json() const {
  json probes_doc = json::array();
  for (const auto& p : probes) {
    probes_doc.push_back({{"tensor", p.tensor},
                          {"index", p.index},
                          {"analytic", p.analytic},
                          {"numeric", p.numeric},
                          {"rel_error", p.rel_error}});
  }
  return {{"max_rel_error", max_rel_error}, {"probes", probes_doc}};
}

GradCheckReport grad_check(const GroundingModelState& state, const std::vector<const Example*>& batch, double eps,
                           int n_probes, std::uint64_t seed) {
  if (eps < 1e-6 || eps > 1e-3) throw GrounderError(GrounderErrc::BadConfig, "eps must lie in [1e-6, 1e-3]");
  ModelParams grads = state.params.zeros_like();
  loss_and_gradient(state, batch, true, grads);

  GroundingModelState probe_state = state;
  std::vector<std::pair<std::string, Matrix*>> tensors;
  probe_state.params.for_each([&](const std::string& name, Matrix& m) { tensors.emplace_back(name, &m); });
  std::vector<const Matrix*> grad_tensors;
  grads.for_each([&](const std::string&, const Matrix& m) { grad_tensors.push_back(&m); });

  std::mt19937_64 rng(seed);
  GradCheckReport report;
  for (int k = 0; k < n_probes; ++k) {
    const std::size_t t = static_cast<std::size_t>(k) % tensors.size();
    auto& [name, tensor] = tensors[t];
    std::uniform_int_distribution<std::size_t> pick(0, tensor->size() - 1);
    const std::size_t idx = pick(rng);
    double& w = tensor->data()[idx];
    const double saved = w;
    w = saved + eps;
    const double up = batch_loss(probe_state, batch, true).total;
    w = saved - eps;
    const double down = batch_loss(probe_state, batch, true).total;
    w = saved;
    GradProbe probe{name, idx, grad_tensors[t]->data()[idx], (up - down) / (2.0 * eps), 0.0};
    probe.rel_error = std::abs(probe.analytic - probe.numeric) /
                      std::max({std::abs(probe.analytic), std::abs(probe.numeric), 1e-6});
    report.max_rel_error = std::max(report.max_rel_error, probe.rel_error);
    report.probes.push_back(probe);
  }
  return report;
}

}  // namespace seqground::grounder
