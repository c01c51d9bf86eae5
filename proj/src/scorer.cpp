#include "avs/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "avs/parallel.hpp"

namespace avs {

namespace {

constexpr double kLnEps = 1e-5;

// y[m x out] += x[m x in] * W[in x out]
template <typename T>
void matmul_acc(const T* x, int m, int in, const T* w, int out, T* y) {
  for (int i = 0; i < m; ++i) {
    const T* xi = x + static_cast<size_t>(i) * in;
    T* yi = y + static_cast<size_t>(i) * out;
    for (int k = 0; k < in; ++k) {
      T xv = xi[k];
      if (xv == T(0)) continue;
      const T* wk = w + static_cast<size_t>(k) * out;
      for (int j = 0; j < out; ++j) yi[j] += xv * wk[j];
    }
  }
}

template <typename T>
void linear_forward(const T* x, int m, int in, const T* w, const T* b, int out, T* y) {
  for (int i = 0; i < m; ++i) std::copy(b, b + out, y + static_cast<size_t>(i) * out);
  matmul_acc(x, m, in, w, out, y);
}

// dx += dy * W^T; dW += x^T * dy; db += column sums of dy.
template <typename T>
void linear_backward(const T* x, int m, int in, const T* w, int out, const T* dy, T* dx,
                     T* dw, T* db) {
  for (int i = 0; i < m; ++i) {
    const T* dyi = dy + static_cast<size_t>(i) * out;
    if (dx) {
      T* dxi = dx + static_cast<size_t>(i) * in;
      for (int k = 0; k < in; ++k) {
        const T* wk = w + static_cast<size_t>(k) * out;
        T s = T(0);
        for (int j = 0; j < out; ++j) s += dyi[j] * wk[j];
        dxi[k] += s;
      }
    }
    const T* xi = x + static_cast<size_t>(i) * in;
    for (int k = 0; k < in; ++k) {
      T xv = xi[k];
      if (xv == T(0)) continue;
      T* dwk = dw + static_cast<size_t>(k) * out;
      for (int j = 0; j < out; ++j) dwk[j] += xv * dyi[j];
    }
    for (int j = 0; j < out; ++j) db[j] += dyi[j];
  }
}

template <typename T>
void layernorm_forward(const T* x, int m, int dim, const T* g, const T* b, T* y, T* xhat,
                       T* rstd) {
  for (int i = 0; i < m; ++i) {
    const T* xi = x + static_cast<size_t>(i) * dim;
    T mean = T(0);
    for (int d = 0; d < dim; ++d) mean += xi[d];
    mean /= T(dim);
    T var = T(0);
    for (int d = 0; d < dim; ++d) var += (xi[d] - mean) * (xi[d] - mean);
    var /= T(dim);
    T rs = T(1) / std::sqrt(var + T(kLnEps));
    rstd[i] = rs;
    T* xh = xhat + static_cast<size_t>(i) * dim;
    T* yi = y + static_cast<size_t>(i) * dim;
    for (int d = 0; d < dim; ++d) {
      xh[d] = (xi[d] - mean) * rs;
      yi[d] = g[d] * xh[d] + b[d];
    }
  }
}

template <typename T>
void layernorm_backward(const T* xhat, const T* rstd, int m, int dim, const T* g, const T* dy,
                        T* dx, T* dg, T* db) {
  for (int i = 0; i < m; ++i) {
    const T* xh = xhat + static_cast<size_t>(i) * dim;
    const T* dyi = dy + static_cast<size_t>(i) * dim;
    T* dxi = dx + static_cast<size_t>(i) * dim;
    T sum1 = T(0), sum2 = T(0);
    for (int d = 0; d < dim; ++d) {
      T t = dyi[d] * g[d];
      sum1 += t;
      sum2 += t * xh[d];
      dg[d] += dyi[d] * xh[d];
      db[d] += dyi[d];
    }
    sum1 /= T(dim);
    sum2 /= T(dim);
    for (int d = 0; d < dim; ++d)
      dxi[d] += rstd[i] * (dyi[d] * g[d] - sum1 - xh[d] * sum2);
  }
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
  T phi = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
  return phi + x * pdf;
}

// probs[heads][nq][nk] = softmax over k of Q.K/sqrt(hd); out = probs.V
template <typename T>
void attention_forward(const T* q, int nq, const T* k, const T* v, int nk, int heads, int hd,
                       T* probs, T* out) {
  const int dim = heads * hd;
  const T scale = T(1) / std::sqrt(T(hd));
  std::fill(out, out + static_cast<size_t>(nq) * dim, T(0));
  for (int h = 0; h < heads; ++h) {
    const int off = h * hd;
    for (int i = 0; i < nq; ++i) {
      T* row = probs + (static_cast<size_t>(h) * nq + i) * nk;
      const T* qi = q + static_cast<size_t>(i) * dim + off;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < nk; ++j) {
        const T* kj = k + static_cast<size_t>(j) * dim + off;
        T s = T(0);
        for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
        s *= scale;
        row[j] = s;
        mx = std::max(mx, s);
      }
      T denom = T(0);
      for (int j = 0; j < nk; ++j) {
        row[j] = std::exp(row[j] - mx);
        denom += row[j];
      }
      T* oi = out + static_cast<size_t>(i) * dim + off;
      for (int j = 0; j < nk; ++j) {
        row[j] /= denom;
        const T* vj = v + static_cast<size_t>(j) * dim + off;
        T p = row[j];
        for (int d = 0; d < hd; ++d) oi[d] += p * vj[d];
      }
    }
  }
}

template <typename T>
void attention_backward(const T* q, int nq, const T* k, const T* v, int nk, int heads, int hd,
                        const T* probs, const T* dout, T* dq, T* dk, T* dv) {
  const int dim = heads * hd;
  const T scale = T(1) / std::sqrt(T(hd));
  std::vector<T> dp(static_cast<size_t>(nk));
  for (int h = 0; h < heads; ++h) {
    const int off = h * hd;
    for (int i = 0; i < nq; ++i) {
      const T* row = probs + (static_cast<size_t>(h) * nq + i) * nk;
      const T* doi = dout + static_cast<size_t>(i) * dim + off;
      // dV and dP
      T dot = T(0);
      for (int j = 0; j < nk; ++j) {
        const T* vj = v + static_cast<size_t>(j) * dim + off;
        T s = T(0);
        for (int d = 0; d < hd; ++d) s += doi[d] * vj[d];
        dp[j] = s;
        dot += s * row[j];
        T* dvj = dv + static_cast<size_t>(j) * dim + off;
        T p = row[j];
        for (int d = 0; d < hd; ++d) dvj[d] += p * doi[d];
      }
      // softmax backward, then scores into dQ/dK
      const T* qi = q + static_cast<size_t>(i) * dim + off;
      T* dqi = dq + static_cast<size_t>(i) * dim + off;
      for (int j = 0; j < nk; ++j) {
        T ds = row[j] * (dp[j] - dot) * scale;
        if (ds == T(0)) continue;
        const T* kj = k + static_cast<size_t>(j) * dim + off;
        T* dkj = dk + static_cast<size_t>(j) * dim + off;
        for (int d = 0; d < hd; ++d) {
          dqi[d] += ds * kj[d];
          dkj[d] += ds * qi[d];
        }
      }
    }
  }
}

std::vector<double> sinusoidal_posenc(int tokens, int dim) {
  std::vector<double> pe(static_cast<size_t>(tokens) * dim);
  for (int p = 0; p < tokens; ++p)
    for (int d = 0; d < dim; d += 2) {
      double rate = std::pow(10000.0, static_cast<double>(d) / dim);
      pe[static_cast<size_t>(p) * dim + d] = std::sin(p / rate);
      if (d + 1 < dim) pe[static_cast<size_t>(p) * dim + d + 1] = std::cos(p / rate);
    }
  return pe;
}

// Flattens an image into per-token patch rows, channel-interleaved inside
// the patch.
template <typename T>
void patchify(const ImageF& img, int patch, T* out) {
  const int gy = img.height / patch, gx = img.width / patch;
  const int row_len = patch * patch * 3;
  for (int ty = 0; ty < gy; ++ty)
    for (int tx = 0; tx < gx; ++tx) {
      T* row = out + (static_cast<size_t>(ty) * gx + tx) * row_len;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < 3; ++c)
            row[(py * patch + px) * 3 + c] = T(img.at(ty * patch + py, tx * patch + px, c));
    }
}

struct Offsets {
  size_t patch_w, patch_b;
  struct Block {
    size_t ln1_g, ln1_b;
    size_t sq_w, sq_b, sk_w, sk_b, sv_w, sv_b, so_w, so_b;
    size_t ln2_g, ln2_b;
    size_t cq_w, cq_b, ck_w, ck_b, cv_w, cv_b, co_w, co_b;
    size_t ln3_g, ln3_b;
    size_t f1_w, f1_b, f2_w, f2_b;
  };
  std::vector<Block> blocks;
  size_t h1_w, h1_b, h2_w, h2_b;
  size_t total = 0;
};

std::vector<ParamEntry> build_layout(const ScorerConfig& c) {
  std::vector<ParamEntry> layout;
  size_t offset = 0;
  auto add = [&](const std::string& name, std::vector<uint32_t> dims) {
    ParamEntry e;
    e.name = name;
    e.dims = std::move(dims);
    e.offset = offset;
    e.count = 1;
    for (uint32_t d : e.dims) e.count *= d;
    offset += e.count;
    layout.push_back(std::move(e));
  };
  const uint32_t D = static_cast<uint32_t>(c.dim);
  const uint32_t F = static_cast<uint32_t>(c.ffn_dim);
  const uint32_t P2C = static_cast<uint32_t>(c.patch * c.patch * 3);
  const uint32_t P2 = static_cast<uint32_t>(c.patch * c.patch);
  add("patch_embed.w", {P2C, D});
  add("patch_embed.b", {D});
  for (int b = 0; b < c.blocks; ++b) {
    std::string p = "blocks." + std::to_string(b) + ".";
    add(p + "ln1.g", {D});
    add(p + "ln1.b", {D});
    for (const char* n : {"self.q", "self.k", "self.v", "self.out"}) {
      add(p + n + ".w", {D, D});
      add(p + n + ".b", {D});
    }
    add(p + "ln2.g", {D});
    add(p + "ln2.b", {D});
    for (const char* n : {"cross.q", "cross.k", "cross.v", "cross.out"}) {
      add(p + n + ".w", {D, D});
      add(p + n + ".b", {D});
    }
    add(p + "ln3.g", {D});
    add(p + "ln3.b", {D});
    add(p + "ffn.w1", {D, F});
    add(p + "ffn.b1", {F});
    add(p + "ffn.w2", {F, D});
    add(p + "ffn.b2", {D});
  }
  add("head.w1", {D, F});
  add("head.b1", {F});
  add("head.w2", {F, P2});
  add("head.b2", {P2});
  return layout;
}

Offsets build_offsets(const ScorerConfig& c, const std::vector<ParamEntry>& layout) {
  Offsets o{};
  size_t idx = 0;
  auto next = [&]() { return layout[idx++].offset; };
  o.patch_w = next();
  o.patch_b = next();
  o.blocks.resize(static_cast<size_t>(c.blocks));
  for (int b = 0; b < c.blocks; ++b) {
    auto& bl = o.blocks[b];
    bl.ln1_g = next(); bl.ln1_b = next();
    bl.sq_w = next(); bl.sq_b = next();
    bl.sk_w = next(); bl.sk_b = next();
    bl.sv_w = next(); bl.sv_b = next();
    bl.so_w = next(); bl.so_b = next();
    bl.ln2_g = next(); bl.ln2_b = next();
    bl.cq_w = next(); bl.cq_b = next();
    bl.ck_w = next(); bl.ck_b = next();
    bl.cv_w = next(); bl.cv_b = next();
    bl.co_w = next(); bl.co_b = next();
    bl.ln3_g = next(); bl.ln3_b = next();
    bl.f1_w = next(); bl.f1_b = next();
    bl.f2_w = next(); bl.f2_b = next();
  }
  o.h1_w = next(); o.h1_b = next();
  o.h2_w = next(); o.h2_b = next();
  o.total = layout.back().offset + layout.back().count;
  return o;
}

void check_config(const ScorerConfig& c) {
  if (c.image_side < 1 || c.patch < 1 || c.image_side % c.patch != 0)
    throw std::runtime_error("scorer: image_side must be a positive multiple of patch");
  if (c.dim < 1 || c.heads < 1 || c.dim % c.heads != 0)
    throw std::runtime_error("scorer: dim must be a positive multiple of heads");
  if (c.blocks < 1 || c.ffn_dim < 1 || c.k_refs < 1)
    throw std::runtime_error("scorer: blocks, ffn_dim and k_refs must be positive");
}

}  // namespace

template <typename T>
struct ScorerTape {
  int n_refs = 0;
  std::vector<T> params;  // snapshot the forward ran with
  std::vector<T> xq0, xr0;        // patch rows
  std::vector<T> tok_r;           // embedded reference tokens
  struct BlockTape {
    std::vector<T> t_in;
    std::vector<T> ln1_y, ln1_xhat, ln1_rstd;
    std::vector<T> q, k, v, probs_self, att_self, t1;
    std::vector<T> ln2_y, ln2_xhat, ln2_rstd;
    std::vector<T> q2, k2, v2, probs_cross, att_cross, t2;
    std::vector<T> ln3_y, ln3_xhat, ln3_rstd;
    std::vector<T> z1, h1, t3;
  };
  std::vector<BlockTape> blocks;
  std::vector<T> hz, hh, logits;
  std::vector<T> map;  // sigmoid outputs at full precision
};

const ParamEntry& ScorerModel::entry(const std::string& name) const {
  for (const auto& e : layout)
    if (e.name == name) return e;
  throw std::runtime_error("scorer: unknown parameter '" + name + "'");
}

ScorerModel init_scorer(const ScorerConfig& config, uint64_t seed) {
  check_config(config);
  ScorerModel model;
  model.config = config;
  model.layout = build_layout(config);
  size_t total = model.layout.back().offset + model.layout.back().count;
  model.params.assign(total, 0.0f);
  for (size_t ei = 0; ei < model.layout.size(); ++ei) {
    const auto& e = model.layout[ei];
    bool is_weight = e.dims.size() == 2;
    bool ln_gain = e.name.size() > 2 && e.name.substr(e.name.size() - 2) == ".g" &&
                   e.name.find(".ln") != std::string::npos;
    if (ln_gain) {
      std::fill_n(model.params.begin() + e.offset, e.count, 1.0f);
    } else if (is_weight && e.name != "head.w2") {
      // head.w2 starts at zero so a fresh model predicts exactly 0.5
      double s = std::sqrt(1.0 / e.dims[0]);
      Rng rng = Rng::substream(seed, 0x5c02e2, ei);
      for (size_t i = 0; i < e.count; ++i)
        model.params[e.offset + i] = static_cast<float>(rng.uniform(-s, s));
    }
  }
  return model;
}

template <typename T>
ImageF scorer_forward(const ScorerModel& model, const ImageF& query,
                      const std::vector<const ImageF*>& refs,
                      std::shared_ptr<ScorerTape<T>>* tape_out) {
  const ScorerConfig& c = model.config;
  check_config(c);
  if (refs.empty() || static_cast<int>(refs.size()) > c.k_refs)
    throw std::runtime_error("scorer_forward: need 1..k_refs reference images");
  auto check_img = [&](const ImageF& img) {
    if (img.height != c.image_side || img.width != c.image_side || img.channels != 3)
      throw std::runtime_error("scorer_forward: inputs must be 3-channel image_side squares");
  };
  check_img(query);
  for (const auto* r : refs) check_img(*r);

  const int D = c.dim, F = c.ffn_dim, H = c.heads, hd = D / H;
  const int P2C = c.patch * c.patch * 3, P2 = c.patch * c.patch;
  const int Nq = c.tokens_per_image();
  const int Nr = Nq * static_cast<int>(refs.size());

  auto tape = std::make_shared<ScorerTape<T>>();
  ScorerTape<T>& tp = *tape;
  tp.n_refs = static_cast<int>(refs.size());
  tp.params.assign(model.params.begin(), model.params.end());
  const T* P = tp.params.data();
  Offsets off = build_offsets(c, model.layout);

  tp.xq0.resize(static_cast<size_t>(Nq) * P2C);
  patchify(query, c.patch, tp.xq0.data());
  tp.xr0.resize(static_cast<size_t>(Nr) * P2C);
  for (size_t r = 0; r < refs.size(); ++r)
    patchify(*refs[r], c.patch, tp.xr0.data() + r * static_cast<size_t>(Nq) * P2C);

  std::vector<T> tok_q(static_cast<size_t>(Nq) * D);
  linear_forward(tp.xq0.data(), Nq, P2C, P + off.patch_w, P + off.patch_b, D, tok_q.data());
  std::vector<double> pe = sinusoidal_posenc(Nq, D);
  for (size_t i = 0; i < tok_q.size(); ++i) tok_q[i] += T(pe[i]);

  tp.tok_r.resize(static_cast<size_t>(Nr) * D);
  linear_forward(tp.xr0.data(), Nr, P2C, P + off.patch_w, P + off.patch_b, D, tp.tok_r.data());

  tp.blocks.resize(static_cast<size_t>(c.blocks));
  for (int b = 0; b < c.blocks; ++b) {
    const auto& ob = off.blocks[b];
    auto& bt = tp.blocks[b];
    bt.t_in = tok_q;

    bt.ln1_y.resize(tok_q.size());
    bt.ln1_xhat.resize(tok_q.size());
    bt.ln1_rstd.resize(static_cast<size_t>(Nq));
    layernorm_forward(bt.t_in.data(), Nq, D, P + ob.ln1_g, P + ob.ln1_b, bt.ln1_y.data(),
                      bt.ln1_xhat.data(), bt.ln1_rstd.data());
    bt.q.resize(tok_q.size());
    bt.k.resize(tok_q.size());
    bt.v.resize(tok_q.size());
    linear_forward(bt.ln1_y.data(), Nq, D, P + ob.sq_w, P + ob.sq_b, D, bt.q.data());
    linear_forward(bt.ln1_y.data(), Nq, D, P + ob.sk_w, P + ob.sk_b, D, bt.k.data());
    linear_forward(bt.ln1_y.data(), Nq, D, P + ob.sv_w, P + ob.sv_b, D, bt.v.data());
    bt.probs_self.resize(static_cast<size_t>(H) * Nq * Nq);
    bt.att_self.resize(tok_q.size());
    attention_forward(bt.q.data(), Nq, bt.k.data(), bt.v.data(), Nq, H, hd,
                      bt.probs_self.data(), bt.att_self.data());
    bt.t1 = bt.t_in;
    matmul_acc(bt.att_self.data(), Nq, D, P + ob.so_w, D, bt.t1.data());
    for (int i = 0; i < Nq; ++i)
      for (int d = 0; d < D; ++d) bt.t1[static_cast<size_t>(i) * D + d] += P[ob.so_b + d];

    bt.ln2_y.resize(tok_q.size());
    bt.ln2_xhat.resize(tok_q.size());
    bt.ln2_rstd.resize(static_cast<size_t>(Nq));
    layernorm_forward(bt.t1.data(), Nq, D, P + ob.ln2_g, P + ob.ln2_b, bt.ln2_y.data(),
                      bt.ln2_xhat.data(), bt.ln2_rstd.data());
    bt.q2.resize(tok_q.size());
    bt.k2.resize(static_cast<size_t>(Nr) * D);
    bt.v2.resize(static_cast<size_t>(Nr) * D);
    linear_forward(bt.ln2_y.data(), Nq, D, P + ob.cq_w, P + ob.cq_b, D, bt.q2.data());
    linear_forward(tp.tok_r.data(), Nr, D, P + ob.ck_w, P + ob.ck_b, D, bt.k2.data());
    linear_forward(tp.tok_r.data(), Nr, D, P + ob.cv_w, P + ob.cv_b, D, bt.v2.data());
    bt.probs_cross.resize(static_cast<size_t>(H) * Nq * Nr);
    bt.att_cross.resize(tok_q.size());
    attention_forward(bt.q2.data(), Nq, bt.k2.data(), bt.v2.data(), Nr, H, hd,
                      bt.probs_cross.data(), bt.att_cross.data());
    bt.t2 = bt.t1;
    matmul_acc(bt.att_cross.data(), Nq, D, P + ob.co_w, D, bt.t2.data());
    for (int i = 0; i < Nq; ++i)
      for (int d = 0; d < D; ++d) bt.t2[static_cast<size_t>(i) * D + d] += P[ob.co_b + d];

    bt.ln3_y.resize(tok_q.size());
    bt.ln3_xhat.resize(tok_q.size());
    bt.ln3_rstd.resize(static_cast<size_t>(Nq));
    layernorm_forward(bt.t2.data(), Nq, D, P + ob.ln3_g, P + ob.ln3_b, bt.ln3_y.data(),
                      bt.ln3_xhat.data(), bt.ln3_rstd.data());
    bt.z1.resize(static_cast<size_t>(Nq) * F);
    linear_forward(bt.ln3_y.data(), Nq, D, P + ob.f1_w, P + ob.f1_b, F, bt.z1.data());
    bt.h1.resize(bt.z1.size());
    for (size_t i = 0; i < bt.z1.size(); ++i) bt.h1[i] = gelu(bt.z1[i]);
    bt.t3 = bt.t2;
    matmul_acc(bt.h1.data(), Nq, F, P + ob.f2_w, D, bt.t3.data());
    for (int i = 0; i < Nq; ++i)
      for (int d = 0; d < D; ++d) bt.t3[static_cast<size_t>(i) * D + d] += P[ob.f2_b + d];

    tok_q = bt.t3;
  }

  tp.hz.resize(static_cast<size_t>(Nq) * F);
  linear_forward(tok_q.data(), Nq, D, P + off.h1_w, P + off.h1_b, F, tp.hz.data());
  tp.hh.resize(tp.hz.size());
  for (size_t i = 0; i < tp.hz.size(); ++i) tp.hh[i] = gelu(tp.hz[i]);
  tp.logits.resize(static_cast<size_t>(Nq) * P2);
  linear_forward(tp.hh.data(), Nq, F, P + off.h2_w, P + off.h2_b, P2, tp.logits.data());

  // Reassemble per-token patch logits into the image-shaped sigmoid map.
  ImageF map(c.image_side, c.image_side, 1);
  tp.map.resize(map.data.size());
  const int grid = c.image_side / c.patch;
  for (int ty = 0; ty < grid; ++ty)
    for (int tx = 0; tx < grid; ++tx) {
      const T* row = tp.logits.data() + (static_cast<size_t>(ty) * grid + tx) * P2;
      for (int py = 0; py < c.patch; ++py)
        for (int px = 0; px < c.patch; ++px) {
          T s = T(1) / (T(1) + std::exp(-row[py * c.patch + px]));
          size_t px_idx = static_cast<size_t>(ty * c.patch + py) * c.image_side +
                          (tx * c.patch + px);
          tp.map[px_idx] = s;
          map.data[px_idx] = static_cast<float>(s);
        }
    }
  if (tape_out) *tape_out = std::move(tape);
  return map;
}

template <typename T>
std::vector<T> scorer_backward(const ScorerModel& model, const ScorerTape<T>& tp,
                               const std::vector<float>& upstream) {
  const ScorerConfig& c = model.config;
  const int D = c.dim, F = c.ffn_dim, H = c.heads, hd = D / H;
  const int P2C = c.patch * c.patch * 3, P2 = c.patch * c.patch;
  const int Nq = c.tokens_per_image();
  const int Nr = Nq * tp.n_refs;
  if (upstream.size() != tp.map.size())
    throw std::runtime_error("scorer_backward: upstream shape mismatch");

  const T* P = tp.params.data();
  Offsets off = build_offsets(c, model.layout);
  std::vector<T> grad(off.total, T(0));
  T* G = grad.data();

  // Map -> logits through the sigmoid, back into token rows.
  std::vector<T> dlogits(static_cast<size_t>(Nq) * P2);
  const int grid = c.image_side / c.patch;
  for (int ty = 0; ty < grid; ++ty)
    for (int tx = 0; tx < grid; ++tx) {
      T* row = dlogits.data() + (static_cast<size_t>(ty) * grid + tx) * P2;
      for (int py = 0; py < c.patch; ++py)
        for (int px = 0; px < c.patch; ++px) {
          size_t px_idx = static_cast<size_t>(ty * c.patch + py) * c.image_side +
                          (tx * c.patch + px);
          T s = tp.map[px_idx];
          row[py * c.patch + px] = T(upstream[px_idx]) * s * (T(1) - s);
        }
    }

  std::vector<T> dtok(static_cast<size_t>(Nq) * D, T(0));
  std::vector<T> dhh(tp.hh.size(), T(0));
  linear_backward(tp.hh.data(), Nq, F, P + off.h2_w, P2, dlogits.data(), dhh.data(),
                  G + off.h2_w, G + off.h2_b);
  for (size_t i = 0; i < dhh.size(); ++i) dhh[i] *= gelu_grad(tp.hz[i]);
  linear_backward(tp.blocks.back().t3.data(), Nq, D, P + off.h1_w, F, dhh.data(), dtok.data(),
                  G + off.h1_w, G + off.h1_b);

  std::vector<T> dtok_r(static_cast<size_t>(Nr) * D, T(0));

  for (int b = c.blocks - 1; b >= 0; --b) {
    const auto& ob = off.blocks[b];
    const auto& bt = tp.blocks[b];

    // FFN sublayer: t3 = t2 + f2(gelu(f1(ln3(t2)))); the residual passes
    // dtok through unchanged.
    std::vector<T> dh1(bt.h1.size(), T(0));
    linear_backward(bt.h1.data(), Nq, F, P + ob.f2_w, D, dtok.data(), dh1.data(),
                    G + ob.f2_w, G + ob.f2_b);
    for (size_t i = 0; i < dh1.size(); ++i) dh1[i] *= gelu_grad(bt.z1[i]);
    std::vector<T> dln3(static_cast<size_t>(Nq) * D, T(0));
    linear_backward(bt.ln3_y.data(), Nq, D, P + ob.f1_w, F, dh1.data(), dln3.data(),
                    G + ob.f1_w, G + ob.f1_b);
    layernorm_backward(bt.ln3_xhat.data(), bt.ln3_rstd.data(), Nq, D, P + ob.ln3_g,
                       dln3.data(), dtok.data(), G + ob.ln3_g, G + ob.ln3_b);

    // Cross-attention sublayer: t2 = t1 + co(attn(cq(ln2(t1)), ck(r), cv(r)))
    std::vector<T> datt(static_cast<size_t>(Nq) * D, T(0));
    linear_backward(bt.att_cross.data(), Nq, D, P + ob.co_w, D, dtok.data(), datt.data(),
                    G + ob.co_w, G + ob.co_b);
    std::vector<T> dq2(static_cast<size_t>(Nq) * D, T(0));
    std::vector<T> dk2(static_cast<size_t>(Nr) * D, T(0));
    std::vector<T> dv2(static_cast<size_t>(Nr) * D, T(0));
    attention_backward(bt.q2.data(), Nq, bt.k2.data(), bt.v2.data(), Nr, H, hd,
                       bt.probs_cross.data(), datt.data(), dq2.data(), dk2.data(), dv2.data());
    std::vector<T> dln2(static_cast<size_t>(Nq) * D, T(0));
    linear_backward(bt.ln2_y.data(), Nq, D, P + ob.cq_w, D, dq2.data(), dln2.data(),
                    G + ob.cq_w, G + ob.cq_b);
    linear_backward(tp.tok_r.data(), Nr, D, P + ob.ck_w, D, dk2.data(), dtok_r.data(),
                    G + ob.ck_w, G + ob.ck_b);
    linear_backward(tp.tok_r.data(), Nr, D, P + ob.cv_w, D, dv2.data(), dtok_r.data(),
                    G + ob.cv_w, G + ob.cv_b);
    layernorm_backward(bt.ln2_xhat.data(), bt.ln2_rstd.data(), Nq, D, P + ob.ln2_g,
                       dln2.data(), dtok.data(), G + ob.ln2_g, G + ob.ln2_b);

    // Self-attention sublayer: t1 = t_in + so(attn(q, k, v)), qkv from ln1(t_in)
    std::fill(datt.begin(), datt.end(), T(0));
    linear_backward(bt.att_self.data(), Nq, D, P + ob.so_w, D, dtok.data(), datt.data(),
                    G + ob.so_w, G + ob.so_b);
    std::vector<T> dq(static_cast<size_t>(Nq) * D, T(0));
    std::vector<T> dk(static_cast<size_t>(Nq) * D, T(0));
    std::vector<T> dv(static_cast<size_t>(Nq) * D, T(0));
    attention_backward(bt.q.data(), Nq, bt.k.data(), bt.v.data(), Nq, H, hd,
                       bt.probs_self.data(), datt.data(), dq.data(), dk.data(), dv.data());
    std::vector<T> dln1(static_cast<size_t>(Nq) * D, T(0));
    linear_backward(bt.ln1_y.data(), Nq, D, P + ob.sq_w, D, dq.data(), dln1.data(),
                    G + ob.sq_w, G + ob.sq_b);
    linear_backward(bt.ln1_y.data(), Nq, D, P + ob.sk_w, D, dk.data(), dln1.data(),
                    G + ob.sk_w, G + ob.sk_b);
    linear_backward(bt.ln1_y.data(), Nq, D, P + ob.sv_w, D, dv.data(), dln1.data(),
                    G + ob.sv_w, G + ob.sv_b);
    layernorm_backward(bt.ln1_xhat.data(), bt.ln1_rstd.data(), Nq, D, P + ob.ln1_g,
                       dln1.data(), dtok.data(), G + ob.ln1_g, G + ob.ln1_b);
  }

  // Patch embedding gets gradient from the query path and every reference.
  linear_backward(tp.xq0.data(), Nq, P2C, P + off.patch_w, D, dtok.data(),
                  static_cast<T*>(nullptr), G + off.patch_w, G + off.patch_b);
  linear_backward(tp.xr0.data(), Nr, P2C, P + off.patch_w, D, dtok_r.data(),
                  static_cast<T*>(nullptr), G + off.patch_w, G + off.patch_b);
  return grad;
}

double predict_quality(const ScorerModel& model, const ImageF& query,
                       const std::vector<const ImageF*>& refs) {
  ImageF map = scorer_forward<float>(model, query, refs);
  double sum = 0.0;
  for (float v : map.data) sum += v;
  return sum / static_cast<double>(map.data.size());
}

std::vector<const CameraView*> select_refs(const CameraView& pose,
                                           const std::vector<const CameraView*>& available,
                                           int k) {
  Vec3 p = pose.position();
  std::vector<std::pair<double, const CameraView*>> scored;
  scored.reserve(available.size());
  for (const auto* v : available) {
    if (v->id == pose.id) continue;
    scored.emplace_back((v->position() - p).norm(), v);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second->id < b.second->id;
  });
  std::vector<const CameraView*> out;
  for (const auto& [d, v] : scored) {
    if (static_cast<int>(out.size()) >= k) break;
    out.push_back(v);
  }
  return out;
}

ImageF scorer_prepare_input(const ImageF& img, int image_side) {
  if (img.height == image_side && img.width == image_side) return img;
  int short_side = std::min(img.height, img.width);
  int long_side = std::max(img.height, img.width);
  int target = static_cast<int>(std::floor(
      static_cast<double>(image_side) * long_side / short_side + 0.5));
  ImageF resized = resize_long_side(img, std::max(target, image_side));
  return center_crop(resized, image_side);
}

TrainResult train_scorer(const std::vector<TripletSample>& dataset, const ScorerConfig& config,
                         const TrainConfig& train) {
  if (dataset.empty()) throw std::runtime_error("train_scorer: empty dataset");
  TrainResult result;
  result.model = init_scorer(config, train.seed);
  ScorerModel& model = result.model;

  const size_t nparam = model.params.size();
  std::vector<double> m1(nparam, 0.0), m2(nparam, 0.0);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = Rng::substream(train.seed, 0x7a41);
  shuffle_rng.shuffle(order);
  size_t cursor = 0;

  const int batch = std::max(1, train.batch_size);
  std::vector<std::vector<float>> member_grads(static_cast<size_t>(batch));
  std::vector<double> member_loss(static_cast<size_t>(batch));
  std::vector<int> member_idx(static_cast<size_t>(batch));

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double window_loss = 0.0;
  int window_count = 0;

  for (int step = 1; step <= train.steps; ++step) {
    for (int bi = 0; bi < batch; ++bi) {
      if (cursor == order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      member_idx[bi] = order[cursor++];
    }

    parallel_for(static_cast<size_t>(batch), train.workers, [&](size_t bi) {
      const TripletSample& s = dataset[member_idx[bi]];
      std::vector<const ImageF*> refs;
      refs.reserve(s.refs.size());
      for (const auto& r : s.refs) refs.push_back(r.get());
      std::shared_ptr<ScorerTape<float>> tape;
      ImageF pred = scorer_forward<float>(model, *s.query, refs, &tape);
      const ImageF& target = *s.target;
      const size_t n = pred.data.size();
      std::vector<float> upstream(n);
      double loss = 0.0;
      for (size_t i = 0; i < n; ++i) {
        float t = std::clamp(target.data[i], 0.0f, 1.0f);
        float d = pred.data[i] - t;
        loss += static_cast<double>(d) * d;
        upstream[i] = 2.0f * d / static_cast<float>(n);
      }
      member_loss[bi] = loss / static_cast<double>(n);
      member_grads[bi] = scorer_backward<float>(model, *tape, upstream);
    });

    double batch_loss = 0.0;
    for (int bi = 0; bi < batch; ++bi) batch_loss += member_loss[bi];
    batch_loss /= batch;
    window_loss += batch_loss;
    window_count += 1;

    const double inv_batch = 1.0 / batch;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < nparam; ++i) {
      double g = 0.0;
      for (int bi = 0; bi < batch; ++bi) g += member_grads[bi][i];
      g *= inv_batch;
      m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
      m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
      double update = (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + eps);
      double p = model.params[i];
      p -= train.lr * update + train.lr * train.weight_decay * p;
      model.params[i] = static_cast<float>(p);
    }

    if (step % train.log_every == 0 || step == train.steps) {
      result.log.push_back({step, window_loss / window_count});
      window_loss = 0.0;
      window_count = 0;
    }
  }
  return result;
}

void save_scorer(const ScorerModel& model, const std::string& path, uint64_t training_seed,
                 uint64_t dataset_hash) {
  std::vector<NamedTensor> tensors;
  for (const auto& e : model.layout)
    tensors.emplace_back(e.name, e.dims,
                         std::vector<float>(model.params.begin() + e.offset,
                                            model.params.begin() + e.offset + e.count));
  save_tensors(tensors, path);
  nlohmann::json sidecar;
  sidecar["config"] = {{"image_side", model.config.image_side}, {"patch", model.config.patch},
                       {"dim", model.config.dim},               {"heads", model.config.heads},
                       {"blocks", model.config.blocks},         {"ffn_dim", model.config.ffn_dim},
                       {"k_refs", model.config.k_refs}};
  sidecar["training_seed"] = training_seed;
  sidecar["dataset_hash"] = dataset_hash;
  std::ofstream out(path + ".json");
  out << sidecar.dump(2) << "\n";
}

ScorerModel load_scorer(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw std::runtime_error("load_scorer: missing sidecar " + path + ".json");
  nlohmann::json sidecar = nlohmann::json::parse(in);
  ScorerConfig config;
  const auto& jc = sidecar.at("config");
  config.image_side = jc.at("image_side");
  config.patch = jc.at("patch");
  config.dim = jc.at("dim");
  config.heads = jc.at("heads");
  config.blocks = jc.at("blocks");
  config.ffn_dim = jc.at("ffn_dim");
  config.k_refs = jc.at("k_refs");
  check_config(config);

  ScorerModel model;
  model.config = config;
  model.layout = build_layout(config);
  size_t total = model.layout.back().offset + model.layout.back().count;
  model.params.assign(total, 0.0f);

  auto tensors = load_tensors(path);
  size_t matched = 0;
  for (const auto& e : model.layout) {
    bool found = false;
    for (const auto& t : tensors) {
      if (t.name != e.name) continue;
      if (t.dims != e.dims || t.data.size() != e.count)
        throw std::runtime_error("load_scorer: shape of '" + e.name +
                                 "' does not match the sidecar config");
      std::copy(t.data.begin(), t.data.end(), model.params.begin() + e.offset);
      found = true;
      break;
    }
    if (!found) throw std::runtime_error("load_scorer: missing tensor '" + e.name + "'");
    ++matched;
  }
  if (matched != tensors.size())
    throw std::runtime_error("load_scorer: weights file has extra tensors");
  return model;
}

template <typename T>
const std::vector<T>& scorer_map(const ScorerTape<T>& tape) {
  return tape.map;
}

template const std::vector<float>& scorer_map<float>(const ScorerTape<float>&);
template const std::vector<double>& scorer_map<double>(const ScorerTape<double>&);

template ImageF scorer_forward<float>(const ScorerModel&, const ImageF&,
                                      const std::vector<const ImageF*>&,
                                      std::shared_ptr<ScorerTape<float>>*);
template ImageF scorer_forward<double>(const ScorerModel&, const ImageF&,
                                       const std::vector<const ImageF*>&,
                                       std::shared_ptr<ScorerTape<double>>*);
template std::vector<float> scorer_backward<float>(const ScorerModel&, const ScorerTape<float>&,
                                                   const std::vector<float>&);
template std::vector<double> scorer_backward<double>(const ScorerModel&,
                                                     const ScorerTape<double>&,
                                                     const std::vector<float>&);

}  // namespace avs
