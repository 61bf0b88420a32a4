#include "itemtok/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "itemtok/error.hpp"
#include "itemtok/kernels.hpp"
#include "itemtok/rng.hpp"

namespace itemtok {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr char kMagic[8] = {'I', 'T', 'M', 'O', 'D', 'E', 'L', '1'};

void layernorm_row(const double* x, const double* g, const double* b, std::size_t c, double* y,
                   double* xhat, double* rstd_out) {
  double mean = 0.0;
  for (std::size_t k = 0; k < c; ++k) mean += x[k];
  mean /= static_cast<double>(c);
  double var = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double d = x[k] - mean;
    var += d * d;
  }
  var /= static_cast<double>(c);
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (std::size_t k = 0; k < c; ++k) {
    const double xh = (x[k] - mean) * rstd;
    if (xhat) xhat[k] = xh;
    y[k] = xh * g[k] + b[k];
  }
  if (rstd_out) *rstd_out = rstd;
}

// dx += rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)), dxhat = dy * g
void layernorm_backward_row(const double* dy, const double* xhat, double rstd, const double* g,
                            std::size_t c, double* dx, double* dg, double* db) {
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double dxh = dy[k] * g[k];
    mean_dxhat += dxh;
    mean_dxhat_xhat += dxh * xhat[k];
    dg[k] += dy[k] * xhat[k];
    db[k] += dy[k];
  }
  mean_dxhat /= static_cast<double>(c);
  mean_dxhat_xhat /= static_cast<double>(c);
  for (std::size_t k = 0; k < c; ++k)
    dx[k] += rstd * (dy[k] * g[k] - mean_dxhat - xhat[k] * mean_dxhat_xhat);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * x * (1.0 + t);
}

double gelu_grad(double x) {
  const double inner = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

// Causal attention for one query row over `len` cached rows of a qkv buffer
// laid out as [q | k | v] with row stride 3C.
void attend_row(const double* q, const double* qkv, std::size_t stride, std::size_t key_offset,
                std::size_t value_offset, std::size_t len, std::size_t hd, double scale,
                double* probs, double* out) {
  double mx = -INFINITY;
  for (std::size_t j = 0; j < len; ++j) {
    const double* k = qkv + j * stride + key_offset;
    double s = 0.0;
    for (std::size_t d = 0; d < hd; ++d) s += q[d] * k[d];
    s *= scale;
    probs[j] = s;
    mx = std::max(mx, s);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < len; ++j) {
    probs[j] = std::exp(probs[j] - mx);
    sum += probs[j];
  }
  for (std::size_t j = 0; j < len; ++j) probs[j] /= sum;
  std::fill(out, out + hd, 0.0);
  for (std::size_t j = 0; j < len; ++j) {
    const double* v = qkv + j * stride + value_offset;
    const double p = probs[j];
    for (std::size_t d = 0; d < hd; ++d) out[d] += p * v[d];
  }
}

void add_bias(double* rows, const double* bias, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) rows[i * m + j] += bias[j];
}

void sum_rows_into(const double* rows, std::size_t n, std::size_t m, double* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += rows[i * m + j];
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("model checkpoint", 0, "truncated file");
  return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (1ULL << 32)) throw ParseError("model checkpoint", 0, "implausible array size");
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ParseError("model checkpoint", 0, "truncated file");
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Layout / construction

void SequenceModel::compute_layout() {
  const std::size_t c = config_.dim;
  const std::size_t f = config_.dim * config_.ff_mult;
  std::size_t off = 0;
  pos_offset_ = off;
  off += config_.context * c;
  layers_.clear();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    LayerOffsets lo{};
    lo.ln1_g = off; off += c;
    lo.ln1_b = off; off += c;
    lo.wqkv = off; off += c * 3 * c;
    lo.bqkv = off; off += 3 * c;
    lo.wo = off; off += c * c;
    lo.bo = off; off += c;
    lo.ln2_g = off; off += c;
    lo.ln2_b = off; off += c;
    lo.w1 = off; off += c * f;
    lo.b1 = off; off += f;
    lo.w2 = off; off += f * c;
    lo.b2 = off; off += c;
    layers_.push_back(lo);
  }
  lnf_g_ = off; off += c;
  lnf_b_ = off; off += c;
  tok_offset_ = off;
}

SequenceModel::SequenceModel(const ModelConfig& config, TokenVocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.dim == 0 || config_.heads == 0 || config_.dim % config_.heads != 0)
    throw ConfigError("model dim must be a positive multiple of heads");
  if (config_.context == 0 || config_.layers == 0 || config_.ff_mult == 0)
    throw ConfigError("model context, layers and ff_mult must be positive");
  compute_layout();
  const std::size_t c = config_.dim;
  const std::size_t f = c * config_.ff_mult;
  embedded_tokens_ = vocab_.size();
  params_.assign(tok_offset_ + embedded_tokens_ * c, 0.0);
  Rng rng(derive_seed(seed, "model.init"));
  auto fill_normal = [&](std::size_t off, std::size_t n, double std) {
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = rng.normal(std);
  };
  const double resid_std = kInitStd / std::sqrt(2.0 * static_cast<double>(config_.layers));
  fill_normal(pos_offset_, config_.context * c, kInitStd);
  for (const auto& lo : layers_) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(lo.ln1_g), c, 1.0);
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(lo.ln2_g), c, 1.0);
    fill_normal(lo.wqkv, c * 3 * c, kInitStd);
    fill_normal(lo.wo, c * c, resid_std);
    fill_normal(lo.w1, c * f, kInitStd);
    fill_normal(lo.w2, f * c, resid_std);
  }
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(lnf_g_), c, 1.0);
  fill_normal(tok_offset_, embedded_tokens_ * c, kInitStd);
}

std::size_t SequenceModel::sync_vocabulary(std::uint64_t seed) {
  const std::size_t target = vocab_.size();
  if (target <= embedded_tokens_) return 0;
  const std::size_t c = config_.dim;
  const std::size_t added = target - embedded_tokens_;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(embedded_tokens_)));
  params_.reserve(tok_offset_ + target * c);
  for (std::size_t i = 0; i < added * c; ++i) params_.push_back(rng.normal(kInitStd));
  if (!optimizer_.m.empty()) {
    optimizer_.m.resize(params_.size(), 0.0);
    optimizer_.v.resize(params_.size(), 0.0);
  }
  embedded_tokens_ = target;
  return added;
}

bool SequenceModel::operator==(const SequenceModel& other) const {
  return config_ == other.config_ && vocab_ == other.vocab_ &&
         embedded_tokens_ == other.embedded_tokens_ && params_ == other.params_ &&
         optimizer_.m == other.optimizer_.m && optimizer_.v == other.optimizer_.v &&
         optimizer_.step == other.optimizer_.step;
}

// ---------------------------------------------------------------------------
// Full forward / backward

struct ForwardPass {
  struct LayerCache {
    std::vector<double> in, xhat1, rstd1, a, qkv, probs, o, mid, xhat2, rstd2, m, u, g;
  };

  const SequenceModel& model;
  std::size_t n = 0, c = 0, f = 0, heads = 0, hd = 0;
  std::vector<TokenId> tokens;
  std::vector<LayerCache> caches;
  std::vector<double> out, xhatf, rstdf, hf;

  explicit ForwardPass(const SequenceModel& m) : model(m) {}

  const double* p(std::size_t off) const { return model.params_.data() + off; }

  void run(std::span<const TokenId> toks) {
    tokens.assign(toks.begin(), toks.end());
    n = tokens.size();
    c = model.config_.dim;
    f = c * model.config_.ff_mult;
    heads = model.config_.heads;
    hd = c / heads;
    if (n == 0) throw ArgumentError("empty token sequence");
    if (n > model.config_.context)
      throw ArgumentError("sequence of " + std::to_string(n) + " tokens exceeds context " +
                          std::to_string(model.config_.context));
    std::vector<double> x(n * c);
    for (std::size_t i = 0; i < n; ++i) {
      const TokenId t = tokens[i];
      if (t < 0 || static_cast<std::size_t>(t) >= model.embedded_tokens_)
        throw ArgumentError("token id " + std::to_string(t) + " outside vocabulary");
      const double* e = p(model.tok_offset_ + static_cast<std::size_t>(t) * c);
      const double* pe = p(model.pos_offset_ + i * c);
      for (std::size_t k = 0; k < c; ++k) x[i * c + k] = e[k] + pe[k];
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    caches.assign(model.layers_.size(), {});
    for (std::size_t l = 0; l < model.layers_.size(); ++l) {
      const auto& lo = model.layers_[l];
      auto& lc = caches[l];
      lc.in = x;
      lc.xhat1.resize(n * c);
      lc.rstd1.resize(n);
      lc.a.resize(n * c);
      for (std::size_t i = 0; i < n; ++i)
        layernorm_row(&x[i * c], p(lo.ln1_g), p(lo.ln1_b), c, &lc.a[i * c], &lc.xhat1[i * c], &lc.rstd1[i]);
      lc.qkv.resize(n * 3 * c);
      kernels::matmul(lc.a, {p(lo.wqkv), c * 3 * c}, lc.qkv, n, c, 3 * c, false);
      add_bias(lc.qkv.data(), p(lo.bqkv), n, 3 * c);
      lc.probs.assign(heads * n * n, 0.0);
      lc.o.resize(n * c);
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
          attend_row(&lc.qkv[i * 3 * c + h * hd], lc.qkv.data(), 3 * c, c + h * hd, 2 * c + h * hd,
                     i + 1, hd, scale, &lc.probs[(h * n + i) * n], &lc.o[i * c + h * hd]);
      std::vector<double> proj(n * c);
      kernels::matmul(lc.o, {p(lo.wo), c * c}, proj, n, c, c, false);
      add_bias(proj.data(), p(lo.bo), n, c);
      lc.mid.resize(n * c);
      for (std::size_t k = 0; k < n * c; ++k) lc.mid[k] = x[k] + proj[k];
      lc.xhat2.resize(n * c);
      lc.rstd2.resize(n);
      lc.m.resize(n * c);
      for (std::size_t i = 0; i < n; ++i)
        layernorm_row(&lc.mid[i * c], p(lo.ln2_g), p(lo.ln2_b), c, &lc.m[i * c], &lc.xhat2[i * c], &lc.rstd2[i]);
      lc.u.resize(n * f);
      kernels::matmul(lc.m, {p(lo.w1), c * f}, lc.u, n, c, f, false);
      add_bias(lc.u.data(), p(lo.b1), n, f);
      lc.g.resize(n * f);
      for (std::size_t k = 0; k < n * f; ++k) lc.g[k] = gelu(lc.u[k]);
      std::vector<double> ff(n * c);
      kernels::matmul(lc.g, {p(lo.w2), f * c}, ff, n, f, c, false);
      add_bias(ff.data(), p(lo.b2), n, c);
      for (std::size_t k = 0; k < n * c; ++k) x[k] = lc.mid[k] + ff[k];
    }
    out = std::move(x);
    xhatf.resize(n * c);
    rstdf.resize(n);
    hf.resize(n * c);
    for (std::size_t i = 0; i < n; ++i)
      layernorm_row(&out[i * c], p(model.lnf_g_), p(model.lnf_b_), c, &hf[i * c], &xhatf[i * c], &rstdf[i]);
  }

  std::vector<double> logits_at(std::span<const std::size_t> positions) const {
    const std::size_t v = model.embedded_tokens_;
    std::vector<double> rows(positions.size() * c);
    for (std::size_t r = 0; r < positions.size(); ++r)
      std::copy_n(&hf[positions[r] * c], c, &rows[r * c]);
    std::vector<double> logits(positions.size() * v);
    kernels::matmul_bt(rows, {p(model.tok_offset_), v * c}, logits, positions.size(), c, v, false);
    return logits;
  }

  // dhf: n×C gradient w.r.t. the final LayerNorm output.
  void backward(std::vector<double> dhf, double* grad) const {
    const auto& mp = model;
    std::vector<double> dx(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      layernorm_backward_row(&dhf[i * c], &xhatf[i * c], rstdf[i], p(mp.lnf_g_), c, &dx[i * c],
                             grad + mp.lnf_g_, grad + mp.lnf_b_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t li = mp.layers_.size(); li-- > 0;) {
      const auto& lo = mp.layers_[li];
      const auto& lc = caches[li];
      // MLP branch: out = mid + W2ᵀ gelu(W1ᵀ LN2(mid))
      const std::vector<double>& dout = dx;
      sum_rows_into(dout.data(), n, c, grad + lo.b2);
      kernels::matmul_at(lc.g, dout, {grad + lo.w2, f * c}, n, f, c, true);
      std::vector<double> du(n * f);
      kernels::matmul_bt(dout, {p(lo.w2), f * c}, du, n, c, f, false);
      for (std::size_t k = 0; k < n * f; ++k) du[k] *= gelu_grad(lc.u[k]);
      sum_rows_into(du.data(), n, f, grad + lo.b1);
      kernels::matmul_at(lc.m, du, {grad + lo.w1, c * f}, n, c, f, true);
      std::vector<double> dm(n * c);
      kernels::matmul_bt(du, {p(lo.w1), c * f}, dm, n, f, c, false);
      std::vector<double> dmid = dout;
      for (std::size_t i = 0; i < n; ++i)
        layernorm_backward_row(&dm[i * c], &lc.xhat2[i * c], lc.rstd2[i], p(lo.ln2_g), c, &dmid[i * c],
                               grad + lo.ln2_g, grad + lo.ln2_b);
      // Attention branch: mid = in + Woᵀ attn(LN1(in))
      sum_rows_into(dmid.data(), n, c, grad + lo.bo);
      kernels::matmul_at(lc.o, dmid, {grad + lo.wo, c * c}, n, c, c, true);
      std::vector<double> dov(n * c);
      kernels::matmul_bt(dmid, {p(lo.wo), c * c}, dov, n, c, c, false);
      std::vector<double> dqkv(n * 3 * c, 0.0);
      std::vector<double> dp(n);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = h * hd, ko = c + h * hd, vo = 2 * c + h * hd;
        for (std::size_t i = 0; i < n; ++i) {
          const double* probs = &lc.probs[(h * n + i) * n];
          const double* dout_h = &dov[i * c + h * hd];
          double dot_pd = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            const double* v = &lc.qkv[j * 3 * c + vo];
            double s = 0.0;
            for (std::size_t d = 0; d < hd; ++d) s += dout_h[d] * v[d];
            dp[j] = s;
            dot_pd += probs[j] * s;
            double* dv = &dqkv[j * 3 * c + vo];
            for (std::size_t d = 0; d < hd; ++d) dv[d] += probs[j] * dout_h[d];
          }
          const double* q = &lc.qkv[i * 3 * c + qo];
          double* dq = &dqkv[i * 3 * c + qo];
          for (std::size_t j = 0; j <= i; ++j) {
            const double ds = probs[j] * (dp[j] - dot_pd) * scale;
            const double* k = &lc.qkv[j * 3 * c + ko];
            double* dk = &dqkv[j * 3 * c + ko];
            for (std::size_t d = 0; d < hd; ++d) {
              dq[d] += ds * k[d];
              dk[d] += ds * q[d];
            }
          }
        }
      }
      sum_rows_into(dqkv.data(), n, 3 * c, grad + lo.bqkv);
      kernels::matmul_at(lc.a, dqkv, {grad + lo.wqkv, c * 3 * c}, n, c, 3 * c, true);
      std::vector<double> da(n * c);
      kernels::matmul_bt(dqkv, {p(lo.wqkv), c * 3 * c}, da, n, 3 * c, c, false);
      std::vector<double> din = dmid;
      for (std::size_t i = 0; i < n; ++i)
        layernorm_backward_row(&da[i * c], &lc.xhat1[i * c], lc.rstd1[i], p(lo.ln1_g), c, &din[i * c],
                               grad + lo.ln1_g, grad + lo.ln1_b);
      dx = std::move(din);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double* de = grad + mp.tok_offset_ + static_cast<std::size_t>(tokens[i]) * c;
      double* dpos = grad + mp.pos_offset_ + i * c;
      for (std::size_t k = 0; k < c; ++k) {
        de[k] += dx[i * c + k];
        dpos[k] += dx[i * c + k];
      }
    }
  }
};

std::vector<double> SequenceModel::logits(std::span<const TokenId> tokens,
                                          std::span<const std::size_t> positions) const {
  ForwardPass fp(*this);
  fp.run(tokens);
  for (std::size_t pos : positions)
    if (pos >= tokens.size()) throw ArgumentError("logit position out of range");
  return fp.logits_at(positions);
}

double SequenceModel::nll(std::span<const TokenId> tokens, std::size_t response_begin,
                          std::span<double> grad, double scale) const {
  if (response_begin == 0 || response_begin >= tokens.size())
    throw ArgumentError("nll: response must be non-empty and follow a non-empty instruction");
  if (!grad.empty() && grad.size() != params_.size())
    throw ArgumentError("nll: gradient buffer has wrong size");
  ForwardPass fp(*this);
  fp.run(tokens);
  const std::size_t r = tokens.size() - response_begin;
  std::vector<std::size_t> positions(r);
  for (std::size_t k = 0; k < r; ++k) positions[k] = response_begin - 1 + k;
  std::vector<double> logits = fp.logits_at(positions);
  const std::size_t v = embedded_tokens_;
  double loss = 0.0;
  for (std::size_t k = 0; k < r; ++k) {
    std::span<double> row(&logits[k * v], v);
    kernels::log_softmax(row);
    loss -= row[static_cast<std::size_t>(tokens[response_begin + k])];
  }
  if (grad.empty()) return loss;

  const std::size_t c = config_.dim;
  std::vector<double> dlogits(r * v);
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t t = 0; t < v; ++t) dlogits[k * v + t] = scale * std::exp(logits[k * v + t]);
    dlogits[k * v + static_cast<std::size_t>(tokens[response_begin + k])] -= scale;
  }
  std::vector<double> rows(r * c);
  for (std::size_t k = 0; k < r; ++k) std::copy_n(&fp.hf[positions[k] * c], c, &rows[k * c]);
  kernels::matmul_at(dlogits, rows, grad.subspan(tok_offset_, v * c), r, v, c, true);
  std::vector<double> drows(r * c);
  kernels::matmul(dlogits, {params_.data() + tok_offset_, v * c}, drows, r, v, c, false);
  std::vector<double> dhf(fp.n * c, 0.0);
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t j = 0; j < c; ++j) dhf[positions[k] * c + j] += drows[k * c + j];
  fp.backward(std::move(dhf), grad.data());
  return loss;
}

// ---------------------------------------------------------------------------
// Incremental decoding

class TransformerSession final : public DecodeSession {
 public:
  explicit TransformerSession(const SequenceModel& model)
      : model_(&model), qkv_(model.layers_.size()) {}

  std::unique_ptr<DecodeSession> clone() const override {
    return std::make_unique<TransformerSession>(*this);
  }

  void push(TokenId token) override {
    const auto& m = *model_;
    const std::size_t c = m.config_.dim;
    const std::size_t f = c * m.config_.ff_mult;
    const std::size_t heads = m.config_.heads;
    const std::size_t hd = c / heads;
    const std::size_t pos = length_;
    if (pos >= m.config_.context) throw ArgumentError("decode session exceeds model context");
    if (token < 0 || static_cast<std::size_t>(token) >= m.embedded_tokens_)
      throw ArgumentError("token id " + std::to_string(token) + " outside vocabulary");
    const double* P = m.params_.data();
    std::vector<double> x(c), a(c), o(c), proj(c), mid(c), mm(c), u(f), ff(c), probs(pos + 1);
    const double* e = P + m.tok_offset_ + static_cast<std::size_t>(token) * c;
    const double* pe = P + m.pos_offset_ + pos * c;
    for (std::size_t k = 0; k < c; ++k) x[k] = e[k] + pe[k];
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t l = 0; l < m.layers_.size(); ++l) {
      const auto& lo = m.layers_[l];
      layernorm_row(x.data(), P + lo.ln1_g, P + lo.ln1_b, c, a.data(), nullptr, nullptr);
      auto& cache = qkv_[l];
      cache.resize((pos + 1) * 3 * c);
      std::span<double> row(&cache[pos * 3 * c], 3 * c);
      kernels::matmul(a, {P + lo.wqkv, c * 3 * c}, row, 1, c, 3 * c, false);
      add_bias(row.data(), P + lo.bqkv, 1, 3 * c);
      for (std::size_t h = 0; h < heads; ++h)
        attend_row(&row[h * hd], cache.data(), 3 * c, c + h * hd, 2 * c + h * hd, pos + 1, hd, scale,
                   probs.data(), &o[h * hd]);
      kernels::matmul(o, {P + lo.wo, c * c}, proj, 1, c, c, false);
      add_bias(proj.data(), P + lo.bo, 1, c);
      for (std::size_t k = 0; k < c; ++k) mid[k] = x[k] + proj[k];
      layernorm_row(mid.data(), P + lo.ln2_g, P + lo.ln2_b, c, mm.data(), nullptr, nullptr);
      kernels::matmul(mm, {P + lo.w1, c * f}, u, 1, c, f, false);
      add_bias(u.data(), P + lo.b1, 1, f);
      for (double& val : u) val = gelu(val);
      kernels::matmul(u, {P + lo.w2, f * c}, ff, 1, f, c, false);
      add_bias(ff.data(), P + lo.b2, 1, c);
      for (std::size_t k = 0; k < c; ++k) x[k] = mid[k] + ff[k];
    }
    hidden_.resize(c);
    layernorm_row(x.data(), P + m.lnf_g_, P + m.lnf_b_, c, hidden_.data(), nullptr, nullptr);
    ++length_;
    dirty_ = true;
  }

  std::span<const double> log_probs() const override {
    if (length_ == 0) throw ArgumentError("decode session has no context");
    if (dirty_) {
      const auto& m = *model_;
      const std::size_t c = m.config_.dim;
      const std::size_t v = m.embedded_tokens_;
      log_probs_.resize(v);
      kernels::matmul_bt(hidden_, {m.params_.data() + m.tok_offset_, v * c}, log_probs_, 1, c, v, false);
      kernels::log_softmax(log_probs_);
      dirty_ = false;
    }
    return log_probs_;
  }

 private:
  const SequenceModel* model_;
  std::vector<std::vector<double>> qkv_;
  std::vector<double> hidden_;
  std::size_t length_ = 0;
  mutable std::vector<double> log_probs_;
  mutable bool dirty_ = true;
};

std::unique_ptr<DecodeSession> SequenceModel::open(std::span<const TokenId> prompt) const {
  auto session = std::make_unique<TransformerSession>(*this);
  for (TokenId t : prompt) session->push(t);
  return session;
}

// ---------------------------------------------------------------------------
// Persistence

void SequenceModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  for (std::uint64_t v : {config_.layers, config_.heads, config_.dim, config_.context, config_.ff_mult})
    write_pod<std::uint64_t>(out, v);
  write_pod<std::uint64_t>(out, vocab_.size());
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    const auto& tok = vocab_.token(static_cast<TokenId>(i));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tok.size()));
    out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
  }
  write_pod<std::uint64_t>(out, embedded_tokens_);
  write_doubles(out, params_);
  write_pod<std::uint64_t>(out, optimizer_.step);
  write_doubles(out, optimizer_.m);
  write_doubles(out, optimizer_.v);
}

SequenceModel SequenceModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ParseError(path.string(), 0, "not a model checkpoint (bad magic)");
  SequenceModel m;
  m.config_.layers = read_pod<std::uint64_t>(in);
  m.config_.heads = read_pod<std::uint64_t>(in);
  m.config_.dim = read_pod<std::uint64_t>(in);
  m.config_.context = read_pod<std::uint64_t>(in);
  m.config_.ff_mult = read_pod<std::uint64_t>(in);
  const auto vsize = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < vsize; ++i) {
    const auto len = read_pod<std::uint32_t>(in);
    std::string tok(len, '\0');
    in.read(tok.data(), len);
    if (!in) throw ParseError(path.string(), 0, "truncated vocabulary");
    m.vocab_.add(tok);
  }
  m.embedded_tokens_ = read_pod<std::uint64_t>(in);
  m.params_ = read_doubles(in);
  m.optimizer_.step = read_pod<std::uint64_t>(in);
  m.optimizer_.m = read_doubles(in);
  m.optimizer_.v = read_doubles(in);
  m.compute_layout();
  if (m.vocab_.size() != vsize || m.embedded_tokens_ > vsize ||
      m.params_.size() != m.tok_offset_ + m.embedded_tokens_ * m.config_.dim)
    throw ParseError(path.string(), 0, "inconsistent checkpoint layout");
  return m;
}

}  // namespace itemtok
