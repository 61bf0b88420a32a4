#include "itemtok/rqvae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "itemtok/error.hpp"
#include "itemtok/kernels.hpp"

namespace itemtok {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct Mlp {
  std::size_t w1, b1, w2, b2, in, hidden, out;
};

void mlp_forward(const double* p, const Mlp& m, std::span<const double> x, std::vector<double>& hid,
                 std::vector<double>& y) {
  hid.assign(m.hidden, 0.0);
  for (std::size_t j = 0; j < m.hidden; ++j) {
    double s = p[m.b1 + j];
    for (std::size_t i = 0; i < m.in; ++i) s += x[i] * p[m.w1 + i * m.hidden + j];
    hid[j] = std::tanh(s);
  }
  y.assign(m.out, 0.0);
  for (std::size_t k = 0; k < m.out; ++k) {
    double s = p[m.b2 + k];
    for (std::size_t j = 0; j < m.hidden; ++j) s += hid[j] * p[m.w2 + j * m.out + k];
    y[k] = s;
  }
}

void mlp_backward(const double* p, const Mlp& m, std::span<const double> x, const std::vector<double>& hid,
                  std::span<const double> dy, double* grad, std::vector<double>* dx) {
  std::vector<double> dpre(m.hidden, 0.0);
  for (std::size_t j = 0; j < m.hidden; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.out; ++k) {
      s += dy[k] * p[m.w2 + j * m.out + k];
      grad[m.w2 + j * m.out + k] += hid[j] * dy[k];
    }
    dpre[j] = s * (1.0 - hid[j] * hid[j]);
  }
  for (std::size_t k = 0; k < m.out; ++k) grad[m.b2 + k] += dy[k];
  for (std::size_t j = 0; j < m.hidden; ++j) grad[m.b1 + j] += dpre[j];
  for (std::size_t i = 0; i < m.in; ++i)
    for (std::size_t j = 0; j < m.hidden; ++j) grad[m.w1 + i * m.hidden + j] += x[i] * dpre[j];
  if (dx) {
    dx->assign(m.in, 0.0);
    for (std::size_t i = 0; i < m.in; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m.hidden; ++j) s += p[m.w1 + i * m.hidden + j] * dpre[j];
      (*dx)[i] = s;
    }
  }
}

double sq_norm_diff(std::span<const double> a, std::span<const double> b) {
  return kernels::squared_distance(a, b);
}

void check_batch(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ArgumentError(std::string(what) + ": batch sizes differ");
  if (a < 2) throw ArgumentError(std::string(what) + ": needs a batch of at least 2");
}

}  // namespace

// ---------------------------------------------------------------------------
// Stand-alone operations

QuantizationResult quantize(std::span<const double> z, const CodebookStack& codebooks) {
  if (codebooks.levels == 0 || codebooks.size == 0) throw ConfigError("empty codebook");
  if (z.size() != codebooks.dim) throw ArgumentError("latent dimension does not match codebooks");
  QuantizationResult q;
  q.residuals.emplace_back(z.begin(), z.end());
  q.quantized.assign(codebooks.dim, 0.0);
  for (std::size_t l = 0; l < codebooks.levels; ++l) {
    const auto& r = q.residuals.back();
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < codebooks.size; ++k) {
      const double d = kernels::squared_distance(r, codebooks.codeword(l, k));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    q.codes.push_back(best);
    const auto e = codebooks.codeword(l, static_cast<std::size_t>(best));
    std::vector<double> next(codebooks.dim);
    for (std::size_t i = 0; i < codebooks.dim; ++i) {
      next[i] = r[i] - e[i];
      q.quantized[i] += e[i];
    }
    q.residuals.push_back(std::move(next));
  }
  return q;
}

double reconstruction_loss(std::span<const double> x, std::span<const double> decoded) {
  if (x.size() != decoded.size()) throw ArgumentError("reconstruction: dimension mismatch");
  return sq_norm_diff(x, decoded);
}

double commitment_loss(std::span<const std::vector<double>> residuals,
                       std::span<const std::vector<double>> codewords) {
  if (residuals.size() != codewords.size()) throw ArgumentError("commitment: level count mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < residuals.size(); ++l) {
    const double d = sq_norm_diff(residuals[l], codewords[l]);
    s += d + d;
  }
  return s;
}

double collaborative_loss(std::span<const std::vector<double>> quantized,
                          std::span<const std::vector<double>> cf, double temperature,
                          std::vector<std::vector<double>>* grad_quantized) {
  check_batch(quantized.size(), cf.size(), "collaborative loss");
  const std::size_t b = quantized.size();
  for (std::size_t j = 0; j < b; ++j)
    if (cf[j].size() != quantized[j].size())
      throw ArgumentError("collaborative loss: vector dimension mismatch");
  const double inv_t = 1.0 / temperature;
  const double inv_b = 1.0 / static_cast<double>(b);
  if (grad_quantized) grad_quantized->assign(b, std::vector<double>(quantized[0].size(), 0.0));
  double loss = 0.0;
  std::vector<double> row(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) row[j] = kernels::dot(quantized[i], cf[j]) * inv_t;
    kernels::log_softmax(row);
    loss -= row[i];
    if (grad_quantized) {
      auto& g = (*grad_quantized)[i];
      for (std::size_t j = 0; j < b; ++j) {
        const double w = (std::exp(row[j]) - (i == j ? 1.0 : 0.0)) * inv_t * inv_b;
        for (std::size_t d = 0; d < g.size(); ++d) g[d] += w * cf[j][d];
      }
    }
  }
  return loss * inv_b;
}

double diversity_loss(std::span<const std::vector<double>> anchors,
                      std::span<const std::vector<double>> positives, double temperature,
                      std::vector<std::vector<double>>* grad_anchors,
                      std::vector<std::vector<double>>* grad_positives) {
  check_batch(anchors.size(), positives.size(), "diversity loss");
  const std::size_t b = anchors.size();
  const std::size_t dim = anchors[0].size();
  const double inv_t = 1.0 / temperature;
  const double inv_b = 1.0 / static_cast<double>(b);
  if (grad_anchors) grad_anchors->assign(b, std::vector<double>(dim, 0.0));
  if (grad_positives) grad_positives->assign(b, std::vector<double>(dim, 0.0));
  double loss = 0.0;
  std::vector<double> row(b);  // slot i holds the positive, j != i the other anchors
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j)
      row[j] = (j == i ? kernels::dot(anchors[i], positives[i]) : kernels::dot(anchors[i], anchors[j])) * inv_t;
    kernels::log_softmax(row);
    loss -= row[i];
    if (grad_anchors) {
      for (std::size_t j = 0; j < b; ++j) {
        const double w = (std::exp(row[j]) - (i == j ? 1.0 : 0.0)) * inv_t * inv_b;
        auto& gi = (*grad_anchors)[i];
        if (j == i) {
          for (std::size_t d = 0; d < dim; ++d) gi[d] += w * positives[i][d];
          if (grad_positives)
            for (std::size_t d = 0; d < dim; ++d) (*grad_positives)[i][d] += w * anchors[i][d];
        } else {
          auto& gj = (*grad_anchors)[j];
          for (std::size_t d = 0; d < dim; ++d) {
            gi[d] += w * anchors[j][d];
            gj[d] += w * anchors[i][d];
          }
        }
      }
    }
  }
  return loss * inv_b;
}

std::vector<int> sample_positives(std::span<const int> codes, std::span<const std::size_t> clusters,
                                  Rng& rng, std::size_t* singletons) {
  std::vector<int> out;
  out.reserve(codes.size());
  std::vector<int> members;
  for (int c : codes) {
    members.clear();
    for (std::size_t k = 0; k < clusters.size(); ++k)
      if (static_cast<int>(k) != c && clusters[k] == clusters[static_cast<std::size_t>(c)])
        members.push_back(static_cast<int>(k));
    if (members.empty()) {
      out.push_back(c);
      if (singletons) ++*singletons;
    } else {
      out.push_back(members[rng.index(members.size())]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

void RqvaeModel::layout() {
  const auto& c = config_;
  std::size_t off = 0;
  ew1_ = off; off += c.input_dim * c.hidden;
  eb1_ = off; off += c.hidden;
  ew2_ = off; off += c.hidden * c.latent;
  eb2_ = off; off += c.latent;
  dw1_ = off; off += c.latent * c.hidden;
  db1_ = off; off += c.hidden;
  dw2_ = off; off += c.hidden * c.input_dim;
  db2_ = off; off += c.input_dim;
  cb_ = off; off += c.levels * c.codebook * c.latent;
  params_.assign(off, 0.0);
}

RqvaeModel::RqvaeModel(const RqvaeConfig& config, std::uint64_t seed) : config_(config) {
  if (config.levels == 0) throw ConfigError("rqvae needs at least one level");
  if (config.codebook < 2) throw ConfigError("rqvae codebooks need at least two codewords");
  if (config.input_dim == 0 || config.hidden == 0 || config.latent == 0)
    throw ConfigError("rqvae dimensions must be positive");
  layout();
  Rng rng(seed);
  auto fill = [&](std::size_t off, std::size_t n, double std) {
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = rng.normal(std);
  };
  const auto& c = config_;
  fill(ew1_, c.input_dim * c.hidden, 1.0 / std::sqrt(static_cast<double>(c.input_dim)));
  fill(ew2_, c.hidden * c.latent, 1.0 / std::sqrt(static_cast<double>(c.hidden)));
  fill(dw1_, c.latent * c.hidden, 1.0 / std::sqrt(static_cast<double>(c.latent)));
  fill(dw2_, c.hidden * c.input_dim, 1.0 / std::sqrt(static_cast<double>(c.hidden)));
  fill(cb_, c.levels * c.codebook * c.latent, 0.1);
}

std::vector<double> RqvaeModel::encode(std::span<const double> x) const {
  if (x.size() != config_.input_dim) throw ArgumentError("rqvae input dimension mismatch");
  std::vector<double> hid, z;
  mlp_forward(params_.data(), {ew1_, eb1_, ew2_, eb2_, config_.input_dim, config_.hidden, config_.latent}, x,
              hid, z);
  return z;
}

std::vector<double> RqvaeModel::decode(std::span<const double> z) const {
  std::vector<double> hid, x;
  mlp_forward(params_.data(), {dw1_, db1_, dw2_, db2_, config_.latent, config_.hidden, config_.input_dim}, z,
              hid, x);
  return x;
}

CodebookStack RqvaeModel::codebooks() const {
  CodebookStack s;
  s.levels = config_.levels;
  s.size = config_.codebook;
  s.dim = config_.latent;
  s.values.assign(params_.begin() + static_cast<std::ptrdiff_t>(cb_), params_.end());
  return s;
}

std::span<double> RqvaeModel::codeword(std::size_t level, std::size_t k) {
  return {params_.data() + cb_ + (level * config_.codebook + k) * config_.latent, config_.latent};
}

std::span<const double> RqvaeModel::codeword(std::size_t level, std::size_t k) const {
  return {params_.data() + cb_ + (level * config_.codebook + k) * config_.latent, config_.latent};
}

std::vector<int> RqvaeModel::codes(std::span<const double> x) const {
  return quantize(encode(x), codebooks()).codes;
}

void RqvaeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  const auto& c = config_;
  out << "rqvae 1\n"
      << c.input_dim << ' ' << c.hidden << ' ' << c.latent << ' ' << c.levels << ' ' << c.codebook << '\n'
      << params_.size() << '\n'
      << std::setprecision(17);
  for (double v : params_) out << v << '\n';
}

RqvaeModel RqvaeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "rqvae" || version != 1) throw ParseError(path.string(), 1, "not an rqvae checkpoint");
  RqvaeModel m;
  auto& c = m.config_;
  std::size_t count = 0;
  if (!(in >> c.input_dim >> c.hidden >> c.latent >> c.levels >> c.codebook >> count))
    throw ParseError(path.string(), 2, "bad header");
  m.layout();
  if (count != m.params_.size()) throw ParseError(path.string(), 3, "parameter count does not match shapes");
  for (std::size_t i = 0; i < count; ++i)
    if (!(in >> m.params_[i])) throw ParseError(path.string(), 4 + i, "bad parameter value");
  return m;
}

// ---------------------------------------------------------------------------
// Batch objective

BatchPlan plan_batch(const RqvaeModel& frozen, const RqvaeData& data, std::span<const std::size_t> items,
                     const std::vector<std::vector<std::size_t>>& clusters, Rng& rng) {
  BatchPlan plan;
  plan.items.assign(items.begin(), items.end());
  const auto books = frozen.codebooks();
  for (std::size_t i : items) plan.codes.push_back(quantize(frozen.encode(data.x.at(i)), books).codes);
  if (!clusters.empty()) {
    const std::size_t levels = frozen.config().levels;
    plan.positives.assign(items.size(), std::vector<int>(levels));
    std::vector<int> level_codes(items.size());
    for (std::size_t l = 0; l < levels; ++l) {
      for (std::size_t b = 0; b < items.size(); ++b) level_codes[b] = plan.codes[b][l];
      const auto pos = sample_positives(level_codes, clusters[l], rng);
      for (std::size_t b = 0; b < items.size(); ++b) plan.positives[b][l] = pos[b];
    }
  }
  return plan;
}

struct RqvaeBackprop {
  static LossTerms run(const RqvaeModel& model, const RqvaeModel& frozen, const RqvaeData& data,
                       const BatchPlan& plan, std::span<double> grad) {
    const auto& c = model.config_;
    if (!grad.empty() && grad.size() != model.params_.size())
      throw ArgumentError("rqvae gradient buffer has wrong size");
    const std::size_t n = plan.items.size();
    if (n == 0) throw ArgumentError("empty rqvae batch");
    const double inv = 1.0 / static_cast<double>(n);
    const bool same = &model == &frozen;
    const Mlp enc{model.ew1_, model.eb1_, model.ew2_, model.eb2_, c.input_dim, c.hidden, c.latent};
    const Mlp dec{model.dw1_, model.db1_, model.dw2_, model.db2_, c.latent, c.hidden, c.input_dim};
    const double* p = model.params_.data();
    double* g = grad.empty() ? nullptr : grad.data();
    const std::size_t d = c.latent;

    LossTerms t;
    std::vector<std::vector<double>> zq_live(n, std::vector<double>(d, 0.0));
    std::vector<double> hid_e, z, hid_d, xhat, u(d), du, dz;
    for (std::size_t b = 0; b < n; ++b) {
      const auto& x = data.x.at(plan.items[b]);
      const auto& codes = plan.codes[b];
      mlp_forward(p, enc, x, hid_e, z);
      const std::vector<double> z0 = same ? z : frozen.encode(x);
      std::vector<double> r = z, r0 = z0, zq0(d, 0.0);
      if (g) dz.assign(d, 0.0);
      double commit = 0.0;
      for (std::size_t l = 0; l < c.levels; ++l) {
        const auto code = static_cast<std::size_t>(codes[l]);
        const auto e = model.codeword(l, code);
        const auto e0 = frozen.codeword(l, code);
        commit += sq_norm_diff(r0, e) + sq_norm_diff(r, e0);
        if (g) {
          const double s = c.commit_weight * inv * 2.0;
          double* ge = g + model.cb_ + (l * c.codebook + code) * d;
          for (std::size_t k = 0; k < d; ++k) {
            ge[k] += s * (e[k] - r0[k]);
            dz[k] += s * (r[k] - e0[k]);
          }
        }
        for (std::size_t k = 0; k < d; ++k) {
          r[k] -= e0[k];
          r0[k] -= e0[k];
          zq0[k] += e0[k];
          zq_live[b][k] += e[k];
        }
      }
      t.commit += commit;
      for (std::size_t k = 0; k < d; ++k) u[k] = z[k] + (zq0[k] - z0[k]);
      mlp_forward(p, dec, u, hid_d, xhat);
      t.recon += reconstruction_loss(x, xhat);
      if (g) {
        std::vector<double> dx(c.input_dim);
        for (std::size_t k = 0; k < c.input_dim; ++k) dx[k] = -2.0 * (x[k] - xhat[k]) * inv;
        mlp_backward(p, dec, u, hid_d, dx, g, &du);
        for (std::size_t k = 0; k < d; ++k) dz[k] += du[k];
        mlp_backward(p, enc, x, hid_e, dz, g, nullptr);
      }
    }
    t.recon *= inv;
    t.commit *= inv;

    if (c.cf_weight > 0.0 && !data.cf.empty()) {
      std::vector<std::size_t> warm;
      for (std::size_t b = 0; b < n; ++b)
        if (!data.cf.at(plan.items[b]).cold) warm.push_back(b);
      if (warm.size() >= 2) {
        std::vector<std::vector<double>> q, h;
        for (std::size_t b : warm) {
          q.push_back(zq_live[b]);
          h.push_back(data.cf[plan.items[b]].values);
        }
        std::vector<std::vector<double>> gq;
        t.cf = collaborative_loss(q, h, c.temperature, g ? &gq : nullptr);
        if (g) {
          for (std::size_t w = 0; w < warm.size(); ++w)
            for (std::size_t l = 0; l < c.levels; ++l) {
              const auto code = static_cast<std::size_t>(plan.codes[warm[w]][l]);
              double* ge = g + model.cb_ + (l * c.codebook + code) * d;
              for (std::size_t k = 0; k < d; ++k) ge[k] += c.cf_weight * gq[w][k];
            }
        }
      }
    }

    if (c.div_weight > 0.0 && !plan.positives.empty() && n >= 2) {
      for (std::size_t l = 0; l < c.levels; ++l) {
        std::vector<std::vector<double>> anchors, positives;
        for (std::size_t b = 0; b < n; ++b) {
          const auto a = model.codeword(l, static_cast<std::size_t>(plan.codes[b][l]));
          const auto q = model.codeword(l, static_cast<std::size_t>(plan.positives[b][l]));
          anchors.emplace_back(a.begin(), a.end());
          positives.emplace_back(q.begin(), q.end());
        }
        std::vector<std::vector<double>> ga, gp;
        t.div += diversity_loss(anchors, positives, c.temperature, g ? &ga : nullptr, g ? &gp : nullptr);
        if (g) {
          for (std::size_t b = 0; b < n; ++b) {
            double* gA = g + model.cb_ + (l * c.codebook + static_cast<std::size_t>(plan.codes[b][l])) * d;
            double* gP = g + model.cb_ + (l * c.codebook + static_cast<std::size_t>(plan.positives[b][l])) * d;
            for (std::size_t k = 0; k < d; ++k) {
              gA[k] += c.div_weight * ga[b][k];
              gP[k] += c.div_weight * gp[b][k];
            }
          }
        }
      }
    }
    t.total = t.recon + c.commit_weight * t.commit + c.cf_weight * t.cf + c.div_weight * t.div;
    return t;
  }
};

LossTerms batch_loss(const RqvaeModel& model, const RqvaeModel& frozen, const RqvaeData& data,
                     const BatchPlan& plan, std::span<double> grad) {
  return RqvaeBackprop::run(model, frozen, data, plan, grad);
}

std::vector<std::vector<std::size_t>> cluster_codewords(const RqvaeModel& model, std::uint64_t seed) {
  const auto& c = model.config();
  const std::size_t k = std::clamp<std::size_t>(c.div_clusters, 1, c.codebook);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t l = 0; l < c.levels; ++l) {
    std::vector<Point> pts;
    for (std::size_t j = 0; j < c.codebook; ++j) {
      const auto e = model.codeword(l, j);
      pts.emplace_back(e.begin(), e.end());
    }
    out.push_back(balanced_kmeans(pts, k, derive_seed(seed, static_cast<std::uint64_t>(l))).labels);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

LossTerms evaluate(const RqvaeModel& model, const RqvaeData& data, std::uint64_t seed) {
  std::vector<std::size_t> all(data.x.size());
  std::iota(all.begin(), all.end(), 0);
  const auto clusters =
      model.config().div_weight > 0.0 ? cluster_codewords(model, derive_seed(seed, "eval.clusters"))
                                      : std::vector<std::vector<std::size_t>>{};
  Rng rng(derive_seed(seed, "eval.positives"));
  return batch_loss(model, model, data, plan_batch(model, data, all, clusters, rng));
}

void init_codebooks(RqvaeModel& model, const RqvaeData& data, std::span<const std::size_t> items,
                    std::uint64_t seed) {
  const auto& c = model.config();
  std::vector<Point> residuals;
  for (std::size_t i : items) residuals.push_back(model.encode(data.x[i]));
  for (std::size_t l = 0; l < c.levels; ++l) {
    const auto km = kmeans(residuals, c.codebook, derive_seed(seed, static_cast<std::uint64_t>(l)));
    for (std::size_t k = 0; k < c.codebook; ++k)
      std::copy(km.centroids[k].begin(), km.centroids[k].end(), model.codeword(l, k).begin());
    for (std::size_t r = 0; r < residuals.size(); ++r) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c.codebook; ++k) {
        const double dd = kernels::squared_distance(residuals[r], model.codeword(l, k));
        if (dd < best_d) {
          best_d = dd;
          best = k;
        }
      }
      const auto cw = model.codeword(l, best);
      for (std::size_t k = 0; k < c.latent; ++k) residuals[r][k] -= cw[k];
    }
  }
}

}  // namespace

IdentifierMap rqvae_identifiers(const RqvaeModel& model, std::span<const ItemId> ids, std::span<const Point> x) {
  if (ids.size() != x.size()) throw ArgumentError("rqvae identifiers: ids and embeddings differ in length");
  IdentifierMap map;
  map.source = "rqvae";
  map.base_length = model.config().levels;
  const auto books = model.codebooks();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto q = quantize(model.encode(x[i]), books);
    ItemIdentifier ident;
    for (std::size_t l = 0; l < q.codes.size(); ++l) ident.push_back({static_cast<int>(l), q.codes[l]});
    map.entries[ids[i]] = std::move(ident);
  }
  return map;
}

RqvaeTrainResult train_rqvae(std::span<const ItemId> ids, const RqvaeData& data, const RqvaeConfig& config) {
  const std::size_t n = data.x.size();
  if (ids.size() != n) throw ArgumentError("rqvae: ids and embeddings differ in length");
  if (n < config.codebook)
    throw ArgumentError("rqvae needs at least " + std::to_string(config.codebook) + " items, got " +
                        std::to_string(n));
  for (const auto& x : data.x)
    if (x.size() != config.input_dim) throw ArgumentError("rqvae: embedding dimension mismatch");
  if (config.cf_weight > 0.0 && data.cf.size() != n)
    throw ArgumentError("rqvae: collaborative term needs one cf embedding per item");
  if (config.batch == 0) throw ConfigError("rqvae batch must be positive");

  RqvaeTrainResult res;
  res.model = RqvaeModel(config, derive_seed(config.seed, "rqvae.init"));
  auto& model = res.model;
  {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng init_rng(derive_seed(config.seed, "rqvae.init_batch"));
    init_rng.shuffle(perm);
    perm.resize(std::min(n, std::max(config.batch, config.codebook)));
    init_codebooks(model, data, perm, derive_seed(config.seed, "rqvae.kmeans"));
  }
  const std::uint64_t eval_seed = derive_seed(config.seed, "rqvae.eval");
  res.curve.push_back(evaluate(model, data, eval_seed));

  Rng rng(derive_seed(config.seed, "rqvae.train"));
  const std::size_t np = model.params().size();
  std::vector<double> m(np, 0.0), v(np, 0.0), grad(np);
  std::uint64_t step = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t levels = config.levels, nc = config.codebook;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    const auto clusters = config.div_weight > 0.0
                              ? cluster_codewords(model, derive_seed(config.seed, static_cast<std::uint64_t>(epoch)))
                              : std::vector<std::vector<std::size_t>>{};
    std::vector<std::size_t> usage(levels * nc, 0);
    for (std::size_t start = 0; start < n; start += config.batch) {
      const std::size_t count = std::min(config.batch, n - start);
      const std::span<const std::size_t> items(order.data() + start, count);
      std::size_t singles = 0;
      BatchPlan plan = plan_batch(model, data, items, clusters, rng);
      if (!clusters.empty()) {
        for (std::size_t b = 0; b < count; ++b)
          for (std::size_t l = 0; l < levels; ++l)
            if (plan.positives[b][l] == plan.codes[b][l]) ++singles;
      }
      res.singleton_positives += singles;
      for (const auto& codes : plan.codes)
        for (std::size_t l = 0; l < levels; ++l) ++usage[l * nc + static_cast<std::size_t>(codes[l])];
      std::fill(grad.begin(), grad.end(), 0.0);
      const LossTerms t = batch_loss(model, model, data, plan, grad);
      if (!std::isfinite(t.total))
        throw NumericError("rqvae loss is not finite at epoch " + std::to_string(epoch) + ", batch starting " +
                           std::to_string(start) + " (recon=" + std::to_string(t.recon) +
                           " commit=" + std::to_string(t.commit) + ")");
      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      auto params = model.params();
      for (std::size_t i = 0; i < np; ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        params[i] -= config.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
      }
    }
    if (epoch + 1 < config.epochs) {
      for (std::size_t l = 0; l < levels; ++l)
        for (std::size_t k = 0; k < nc; ++k) {
          if (usage[l * nc + k] != 0) continue;
          const std::size_t donor = order[rng.index(n)];
          const auto q = quantize(model.encode(data.x[donor]), model.codebooks());
          auto cw = model.codeword(l, k);
          std::copy(q.residuals[l].begin(), q.residuals[l].end(), cw.begin());
          const std::size_t off = model.codebook_offset() + (l * nc + k) * config.latent;
          std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(off), config.latent, 0.0);
          std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(off), config.latent, 0.0);
          ++res.reseeded;
        }
    }
    res.curve.push_back(evaluate(model, data, eval_seed));
  }
  res.map = rqvae_identifiers(model, ids, data.x);
  res.map.source = config.cf_weight > 0.0 || config.div_weight > 0.0 ? "rqvae+letter" : "rqvae";
  return res;
}

}  // namespace itemtok
