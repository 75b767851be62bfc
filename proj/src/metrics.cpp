#include "dittryon/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "dittryon/rng.hpp"

namespace dittryon {

namespace {

constexpr std::size_t kWin = 7;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_same(const ImageGrid& a, const ImageGrid& b) {
  if (!a.same_shape(b)) throw DimensionError("images differ in shape");
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("feature set must be (n x f)");
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  }
  return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

std::vector<double> ssim_window() {
  std::vector<double> g(kWin);
  double s = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - 3.0;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += g[i];
  }
  std::vector<double> w(kWin * kWin);
  for (std::size_t y = 0; y < kWin; ++y) {
    for (std::size_t x = 0; x < kWin; ++x) w[y * kWin + x] = g[y] * g[x] / (s * s);
  }
  return w;
}

double ssim(const ImageGrid& a, const ImageGrid& b) {
  check_same(a, b);
  if (a.height < kWin || a.width < kWin) throw DimensionError("SSIM needs images of at least 7x7");
  const auto w = ssim_window();
  const std::size_t oh = a.height - kWin + 1, ow = a.width - kWin + 1;
  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < kWin; ++i) {
          for (std::size_t j = 0; j < kWin; ++j) {
            const double k = w[i * kWin + j];
            const double va = a.at(y + i, x + j, c), vb = b.at(y + i, x + j, c);
            ma += k * va;
            mb += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
      }
    }
  }
  return total / static_cast<double>(a.channels * oh * ow);
}

double frechet_distance(const Tensor& a, const Tensor& b) {
  const Eigen::MatrixXd A = to_eigen(a), B = to_eigen(b);
  if (A.rows() < 2 || B.rows() < 2) throw ContractError("Frechet distance needs at least 2 samples per set");
  if (A.cols() != B.cols()) throw DimensionError("feature widths differ");
  const Eigen::RowVectorXd mu_a = A.colwise().mean(), mu_b = B.colwise().mean();
  const Eigen::MatrixXd ca = A.rowwise() - mu_a, cb = B.rowwise() - mu_b;
  const Eigen::MatrixXd sa = ca.transpose() * ca / static_cast<double>(A.rows() - 1);
  const Eigen::MatrixXd sb = cb.transpose() * cb / static_cast<double>(B.rows() - 1);
  if ((sa - sa.transpose()).cwiseAbs().maxCoeff() > 1e-8 || (sb - sb.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw NumericError("covariance is not symmetric");
  }
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  Eigen::MatrixXd m = ra * sb * ra;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

double kernel_mmd(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) throw DimensionError("feature sets must be (n x f)");
  const std::size_t n = a.rows(), m = b.rows(), f = a.cols();
  if (n < 2 || m < 2) throw ContractError("unbiased MMD needs at least 2 samples per set");
  auto k = [f](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
    double dot = 0.0;
    for (std::size_t c = 0; c < f; ++c) dot += x.at(i, c) * y.at(j, c);
    const double base = dot / static_cast<double>(f) + 1.0;
    return base * base * base;
  };
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) kaa += k(a, i, a, j);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) kbb += k(b, i, b, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) kab += k(a, i, b, j);
  }
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return kaa / (dn * (dn - 1)) + kbb / (dm * (dm - 1)) - 2.0 * kab / (dn * dm);
}

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed) {
  const std::size_t shapes[3][3] = {{3, 8, 1}, {8, 12, 2}, {12, 16, 2}};
  for (std::size_t l = 0; l < 3; ++l) {
    Rng rng(Rng::derive(seed, 0xc0 + l));
    const std::size_t in = shapes[l][0], out = shapes[l][1];
    layers_.push_back(Conv{in, out, shapes[l][2],
                           rng.normal_tensor({out, in * 9}, std::sqrt(2.0 / static_cast<double>(in * 9))),
                           rng.normal_tensor({out}, 0.05)});
  }
}

std::vector<Tensor> PerceptualExtractor::features(const ImageGrid& img) const {
  if (img.channels != 3) throw DimensionError("perceptual features need an RGB image");
  std::size_t h = img.height, w = img.width, ch = 3;
  std::vector<double> cur(img.values.size());
  for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = 2.0 * img.values[i] - 1.0;
  std::vector<Tensor> out;
  for (const Conv& conv : layers_) {
    const std::size_t oh = (h + conv.stride - 1) / conv.stride, ow = (w + conv.stride - 1) / conv.stride;
    std::vector<double> next(oh * ow * conv.out);
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        for (std::size_t o = 0; o < conv.out; ++o) {
          double s = conv.bias[o];
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const long sy = static_cast<long>(y * conv.stride + ky) - 1;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long sx = static_cast<long>(x * conv.stride + kx) - 1;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              for (std::size_t i = 0; i < ch; ++i) {
                s += conv.weight.at(o, (ky * 3 + kx) * ch + i) * cur[(sy * w + sx) * ch + i];
              }
            }
          }
          next[(y * ow + x) * conv.out + o] = std::max(0.0, s);
        }
      }
    }
    Tensor fmap({oh * ow, conv.out});
    for (std::size_t p = 0; p < oh * ow; ++p) {
      double norm = 0.0;
      for (std::size_t o = 0; o < conv.out; ++o) norm += next[p * conv.out + o] * next[p * conv.out + o];
      norm = std::sqrt(norm) + 1e-10;
      for (std::size_t o = 0; o < conv.out; ++o) fmap.at(p, o) = next[p * conv.out + o] / norm;
    }
    out.push_back(std::move(fmap));
    cur = std::move(next);
    h = oh;
    w = ow;
    ch = conv.out;
  }
  return out;
}

double PerceptualExtractor::distance(const ImageGrid& a, const ImageGrid& b) const {
  check_same(a, b);
  const auto fa = features(a), fb = features(b);
  double d = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    double s = 0.0;
    const auto va = fa[l].values(), vb = fb[l].values();
    for (std::size_t i = 0; i < va.size(); ++i) s += (va[i] - vb[i]) * (va[i] - vb[i]);
    d += s / static_cast<double>(va.size());
  }
  return d;
}

double embed_similarity(const SemanticEncoder& enc, const ImageGrid& a, const ImageGrid& b) {
  check_same(a, b);
  const auto ea = enc.embed(a), eb = enc.embed(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    dot += ea[i] * eb[i];
    na += ea[i] * ea[i];
    nb += eb[i] * eb[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("zero-norm embedding in cosine similarity");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double glyph_fidelity(const ImageGrid& generated, const ImageGrid& reference, const GarmentSpec& spec,
                      std::size_t pose, const ImageGrid& mask) {
  check_same(generated, reference);
  if (spec.glyph_count() == 0) throw ContractError("glyph fidelity needs a garment with glyphs");
  if (mask.channels != 1 || mask.height != reference.height || mask.width != reference.width) {
    throw DimensionError("mask does not match the images");
  }
  const std::size_t size = reference.height;
  double total = 0.0;
  std::size_t lines = 0;
  for (const Box& box : glyph_line_boxes(spec, size)) {
    const Box wb = warp_box(box, pose, size);
    std::vector<double> g, r;
    for (std::size_t y = wb.y0; y < wb.y1; ++y) {
      for (std::size_t x = wb.x0; x < wb.x1; ++x) {
        if (mask.at(y, x, 0) == 0.0) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          g.push_back(generated.at(y, x, c));
          r.push_back(reference.at(y, x, c));
        }
      }
    }
    if (r.size() < 2) continue;
    double mg = 0.0, mr = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      mg += g[i];
      mr += r[i];
    }
    mg /= static_cast<double>(r.size());
    mr /= static_cast<double>(r.size());
    double sgr = 0.0, sgg = 0.0, srr = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      sgr += (g[i] - mg) * (r[i] - mr);
      sgg += (g[i] - mg) * (g[i] - mg);
      srr += (r[i] - mr) * (r[i] - mr);
    }
    if (srr <= 1e-12) continue;
    ++lines;
    if (sgg > 1e-12) total += std::clamp(sgr / std::sqrt(sgg * srr), 0.0, 1.0);
  }
  if (lines == 0) throw ContractError("no glyph line is measurable on this sample");
  return std::clamp(total / static_cast<double>(lines), 0.0, 1.0);
}

Tensor semantic_features(const SemanticEncoder& enc, const std::vector<ImageGrid>& images) {
  if (images.empty()) throw ContractError("empty image set");
  Tensor out({images.size(), enc.sem_dim()});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto e = enc.embed(images[i]);
    for (std::size_t j = 0; j < e.size(); ++j) out.at(i, j) = e[j];
  }
  return out;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"setting", setting}, {"n", n}, {"config_hash", config_hash}};
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("ssim", ssim);
  put("perceptual", perceptual);
  put("embed_sim", embed_sim);
  put("frechet", frechet);
  put("mmd", mmd);
  put("glyph_fidelity", glyph_fidelity);
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.setting = j.at("setting").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.config_hash = j.value("config_hash", "");
  auto get = [&](const char* k, std::optional<double>& v) {
    if (j.contains(k)) v = j.at(k).get<double>();
  };
  get("ssim", r.ssim);
  get("perceptual", r.perceptual);
  get("embed_sim", r.embed_sim);
  get("frechet", r.frechet);
  get("mmd", r.mmd);
  get("glyph_fidelity", r.glyph_fidelity);
  return r;
}

void MetricReport::check_shape() const {
  if (setting == "paired") {
    if (!ssim || !perceptual || !embed_sim) throw ContractError("paired report lacks ssim/perceptual/embed_sim");
  } else if (setting == "unpaired") {
    if (!frechet || !mmd) throw ContractError("unpaired report lacks frechet/mmd");
  } else {
    throw ContractError("unknown setting '" + setting + "'");
  }
}

}  // namespace dittryon
