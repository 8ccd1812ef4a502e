#include "d2l/oracle/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace d2l {

double ssim(std::span<const double> a, std::span<const double> b, std::size_t grid, const SsimParams& p) {
  if (a.size() != b.size() || a.size() != grid * grid) throw ShapeError("ssim: image size mismatch");
  if (p.window > grid || p.window == 0 || p.stride == 0) throw PreconditionError("ssim: bad window");
  const double c1 = (p.k1 * p.range) * (p.k1 * p.range);
  const double c2 = (p.k2 * p.range) * (p.k2 * p.range);
  const double n = static_cast<double>(p.window * p.window);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + p.window <= grid; r += p.stride) {
    for (std::size_t c = 0; c + p.window <= grid; c += p.stride) {
      double ma = 0, mb = 0;
      for (std::size_t i = r; i < r + p.window; ++i)
        for (std::size_t j = c; j < c + p.window; ++j) {
          ma += a[i * grid + j];
          mb += b[i * grid + j];
        }
      ma /= n;
      mb /= n;
      double va = 0, vb = 0, cov = 0;
      for (std::size_t i = r; i < r + p.window; ++i)
        for (std::size_t j = c; j < c + p.window; ++j) {
          const double da = a[i * grid + j] - ma, db = b[i * grid + j] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= n;
      vb /= n;
      cov /= n;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("mse: size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double psnr(std::span<const double> a, std::span<const double> b, double range) {
  const double m = mse(a, b);
  if (m == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(range * range / m));
}

double excess_kurtosis(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double n = static_cast<double>(v.size());
  double mean = 0;
  for (double x : v) mean += x;
  mean /= n;
  double m2 = 0, m4 = 0;
  for (double x : v) {
    const double d = (x - mean) * (x - mean);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  if (m2 <= 1e-300) return 0.0;
  return m4 / (m2 * m2) - 3.0;
}

double entropy(std::span<const double> probs) {
  double h = 0;
  for (double p : probs)
    if (p > 0) h -= p * std::log(p);
  return h;
}

double mean_column_std(const Tensor& rows) {
  const std::size_t n = rows.rows(), d = rows.cols();
  if (n == 0 || d == 0) return 0.0;
  double total = 0;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += rows.at(i, j);
    m /= static_cast<double>(n);
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) v += (rows.at(i, j) - m) * (rows.at(i, j) - m);
    total += std::sqrt(v / static_cast<double>(n));
  }
  return total / static_cast<double>(d);
}

namespace {

void check_batches(const Tensor& gen, const Tensor& cond) {
  if (gen.rows() == 0) throw PreconditionError("features: empty batch");
  if (gen.rows() != cond.rows() || gen.cols() != cond.cols()) throw ShapeError("features: generated/condition batch mismatch");
}

double dot_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(j, k);
  return s;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

FeatureVector compute_features(const Tensor& generated, const Tensor& conditions, const Network& net,
                               const FrozenGenerator& g, std::size_t grid) {
  check_batches(generated, conditions);
  const std::size_t n = generated.rows();
  FeatureVector z;
  for (std::size_t i = 0; i < n; ++i) z.ssim += ssim(conditions.row(i), generated.row(i), grid);
  z.ssim /= static_cast<double>(n);

  const Tensor fg = net.infer(generated).features;
  const Tensor fc = net.infer(conditions).features;
  for (std::size_t i = 0; i < n; ++i) z.dot += dot_rows(fc, i, fg, i);
  z.dot /= static_cast<double>(n);
  z.quality = mean(g.quality(generated));
  z.diversity = mean_column_std(fg);
  return z;
}

std::vector<std::string> candidate_names() {
  return {"img_ssim_vs_cond",   "img_psnr_vs_cond",      "img_mse_vs_cond",      "img_ssim_pairwise",
          "img_psnr_pairwise",  "img_mse_pairwise",      "img_quality_mean",     "img_quality_std",
          "img_cond_quality",   "img_pixel_std",         "feat_dot_vs_cond",     "feat_cos_vs_cond",
          "feat_mse_vs_cond",   "feat_std_gen",          "feat_std_cond",        "feat_cos_pairwise",
          "feat_norm_gen",      "feat_centroid_dist",    "cls_logit_variance",   "cls_entropy",
          "cls_logit_range",    "cls_logit_kurtosis",    "cls_target_ce",        "cls_max_softmax",
          "cls_pred_agreement"};
}

NamedFeatures compute_candidate_bank(const Tensor& generated, const Tensor& conditions, const Network& net,
                                     const FrozenGenerator& g, std::size_t target_head, std::size_t grid) {
  check_batches(generated, conditions);
  const std::size_t n = generated.rows();
  std::map<std::string, double> f;

  std::vector<double> s_vc, p_vc, m_vc, s_pw, p_pw, m_pw;
  for (std::size_t i = 0; i < n; ++i) {
    s_vc.push_back(ssim(conditions.row(i), generated.row(i), grid));
    p_vc.push_back(psnr(conditions.row(i), generated.row(i)));
    m_vc.push_back(mse(conditions.row(i), generated.row(i)));
    for (std::size_t j = i + 1; j < n; ++j) {
      s_pw.push_back(ssim(generated.row(i), generated.row(j), grid));
      p_pw.push_back(psnr(generated.row(i), generated.row(j)));
      m_pw.push_back(mse(generated.row(i), generated.row(j)));
    }
  }
  f["img_ssim_vs_cond"] = mean(s_vc);
  f["img_psnr_vs_cond"] = mean(p_vc);
  f["img_mse_vs_cond"] = mean(m_vc);
  // a single sample has no pairs; treat it as perfectly self-similar
  f["img_ssim_pairwise"] = s_pw.empty() ? 1.0 : mean(s_pw);
  f["img_psnr_pairwise"] = p_pw.empty() ? 100.0 : mean(p_pw);
  f["img_mse_pairwise"] = m_pw.empty() ? 0.0 : mean(m_pw);
  const auto qg = g.quality(generated);
  f["img_quality_mean"] = mean(qg);
  f["img_quality_std"] = stddev(qg);
  f["img_cond_quality"] = mean(g.quality(conditions));
  f["img_pixel_std"] = mean_column_std(generated);

  const Inference ig = net.infer(generated);
  const Tensor fc = net.infer(conditions).features;
  const Tensor& fg = ig.features;
  std::vector<double> dots, coss, fmse, norms, cos_pw;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = dot_rows(fc, i, fg, i);
    const double ng = std::sqrt(dot_rows(fg, i, fg, i)), nc = std::sqrt(dot_rows(fc, i, fc, i));
    dots.push_back(d);
    coss.push_back(ng > 0 && nc > 0 ? d / (ng * nc) : 0.0);
    fmse.push_back(mse(fc.row(i), fg.row(i)));
    norms.push_back(ng);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double nj = std::sqrt(dot_rows(fg, j, fg, j));
      cos_pw.push_back(ng > 0 && nj > 0 ? dot_rows(fg, i, fg, j) / (ng * nj) : 0.0);
    }
  }
  f["feat_dot_vs_cond"] = mean(dots);
  f["feat_cos_vs_cond"] = mean(coss);
  f["feat_mse_vs_cond"] = mean(fmse);
  f["feat_std_gen"] = mean_column_std(fg);
  f["feat_std_cond"] = mean_column_std(fc);
  f["feat_cos_pairwise"] = cos_pw.empty() ? 1.0 : mean(cos_pw);
  f["feat_norm_gen"] = mean(norms);
  double cd = 0;
  for (std::size_t k = 0; k < fg.cols(); ++k) {
    double a = 0, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a += fg.at(i, k);
      b += fc.at(i, k);
    }
    cd += (a - b) * (a - b) / static_cast<double>(n * n);
  }
  f["feat_centroid_dist"] = std::sqrt(cd);

  const Tensor& logits = ig.logits;
  const Tensor probs = softmax_rows(logits);
  if (target_head >= logits.cols()) throw PreconditionError("candidate bank: target head out of range");
  std::vector<double> var, ent, range, kurt, ce, maxp;
  std::vector<std::size_t> pred;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const auto prow = probs.row(i);
    double m = 0;
    for (double v : row) m += v;
    m /= static_cast<double>(row.size());
    double s = 0;
    for (double v : row) s += (v - m) * (v - m);
    var.push_back(s / static_cast<double>(row.size()));
    ent.push_back(entropy(prow));
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    range.push_back(*hi - *lo);
    kurt.push_back(excess_kurtosis(row));
    ce.push_back(-std::log(std::max(prow[target_head], 1e-300)));
    const auto best = std::max_element(prow.begin(), prow.end());
    maxp.push_back(*best);
    pred.push_back(static_cast<std::size_t>(best - prow.begin()));
  }
  f["cls_logit_variance"] = mean(var);
  f["cls_entropy"] = mean(ent);
  f["cls_logit_range"] = mean(range);
  f["cls_logit_kurtosis"] = mean(kurt);
  f["cls_target_ce"] = mean(ce);
  f["cls_max_softmax"] = mean(maxp);
  std::map<std::size_t, std::size_t> votes;
  for (std::size_t p : pred) ++votes[p];
  std::size_t top = 0;
  for (auto [k, v] : votes) top = std::max(top, v);
  f["cls_pred_agreement"] = static_cast<double>(top) / static_cast<double>(n);

  NamedFeatures out;
  for (const std::string& name : candidate_names()) out.emplace_back(name, f.at(name));
  return out;
}

}  // namespace d2l
