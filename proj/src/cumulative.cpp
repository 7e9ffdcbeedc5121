#include "resjac/cumulative.hpp"

#include "resjac/spectral.hpp"
#include "resjac/stats.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace resjac {

std::string to_string(CompositionMethod method) {
  return method == CompositionMethod::dense ? "dense" : "truncated";
}

double effective_rank(std::span<const double> sigma) {
  double total = 0.0, smax = 0.0;
  for (double s : sigma) {
    if (s < 0 || !std::isfinite(s)) throw ValidationError("effective_rank: singular values must be finite and >= 0");
    smax = std::max(smax, s);
  }
  if (smax == 0.0) throw ValidationError("effective_rank: all singular values are zero");
  for (double s : sigma) total += (s / smax) * (s / smax);
  double entropy = 0.0;
  for (double s : sigma) {
    double p = (s / smax) * (s / smax) / total;
    if (p > 0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

double effective_rank(const Vector& sigma) { return effective_rank(std::span<const double>(sigma.data(), sigma.size())); }

int clamp_rank(int k_cum, int d, bool* clamped) {
  if (k_cum < 1) throw ValidationError("K_cum must be >= 1");
  bool c = k_cum > d;
  if (c) log_warning("K_cum=" + std::to_string(k_cum) + " exceeds d=" + std::to_string(d) + ", clamped to d");
  if (clamped) *clamped = c;
  return c ? d : k_cum;
}

double CumulativeResult::log10_frobenius() const { return log10_scale + 0.5 * std::log10(sigma_top.squaredNorm()); }

Vector CumulativeResult::absolute_sigma() const { return sigma_top * std::pow(10.0, log10_scale); }

namespace {

template <typename Scalar>
void normalize(LowRankProduct<Scalar>& p) {
  const double smax = p.sigma.size() ? p.sigma(0) : 0.0;
  if (!(smax > 0) || !std::isfinite(smax)) throw NumericalError("cumulative product vanished or overflowed");
  p.sigma /= smax;
  p.log10_scale += std::log10(smax);
}

template <typename MatrixType>
auto checked_svd(const MatrixType& m) {
  Eigen::BDCSVD<MatrixType> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge during composition");
  return svd;
}

}  // namespace

template <typename Scalar>
LowRankProduct<Scalar> compose_low_rank(
    std::span<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> layers, int injection_layer, int k_cum,
    const std::function<void(int, const LowRankProduct<Scalar>&)>& on_step) {
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const int L = static_cast<int>(layers.size());
  if (L == 0) throw ValidationError("empty layer stack");
  if (injection_layer < 0 || injection_layer >= L)
    throw ValidationError("injection layer " + std::to_string(injection_layer) + " outside [0, L)");
  const int d = static_cast<int>(layers.front().rows());
  const int k = std::min(k_cum, d);

  LowRankProduct<Scalar> p;
  {
    auto svd = checked_svd(layers[L - 1]);
    p.u = svd.matrixU().leftCols(k);
    p.sigma = svd.singularValues().head(k);
    p.v = svd.matrixV().leftCols(k);
  }
  normalize(p);
  if (on_step) on_step(L - 1, p);

  for (int l = L - 2; l >= injection_layer; --l) {
    const MatrixType& m = layers[l];
    if (m.rows() != d || m.cols() != d) throw ValidationError("layer " + std::to_string(l) + " has the wrong shape");
    // P·M = U·(Σ Vᴴ M); only the k×d core is factored.
    MatrixType core = p.sigma.template cast<Scalar>().asDiagonal() * (p.v.adjoint() * m);
    auto svd = checked_svd(core);
    const int r = static_cast<int>(svd.singularValues().size());
    p.u = p.u * svd.matrixU().leftCols(r);
    p.sigma = svd.singularValues();
    p.v = svd.matrixV().leftCols(r);
    normalize(p);
    if (on_step) on_step(l, p);
  }
  return p;
}

template LowRankProduct<double> compose_low_rank<double>(std::span<const Matrix>, int, int,
                                                         const std::function<void(int, const LowRankProduct<double>&)>&);
template LowRankProduct<Complex> compose_low_rank<Complex>(
    std::span<const CMatrix>, int, int, const std::function<void(int, const LowRankProduct<Complex>&)>&);

template <typename Scalar>
CumulativeResult summarize_product(const LowRankProduct<Scalar>& p, int injection_layer, int k_cum, bool clamped) {
  CumulativeResult r;
  r.injection_layer = injection_layer;
  r.sigma_top = p.sigma;
  r.log10_scale = p.log10_scale;
  r.effective_rank = effective_rank(p.sigma);
  r.truncation_rank = k_cum;
  r.rank_clamped = clamped;
  r.truncation_limited = r.effective_rank >= 0.5 * k_cum;
  r.method = CompositionMethod::truncated;
  return r;
}

template CumulativeResult summarize_product<double>(const LowRankProduct<double>&, int, int, bool);
template CumulativeResult summarize_product<Complex>(const LowRankProduct<Complex>&, int, int, bool);

CumulativeResult compose_backward(const JacobianSet& set, int injection_layer, int k_cum) {
  bool clamped = false;
  const int k = clamp_rank(k_cum, set.d(), &clamped);
  auto p = compose_low_rank<double>(std::span<const Matrix>(set.mean_jacobians), injection_layer, k);
  return summarize_product(p, injection_layer, k, clamped);
}

CumulativeResult compose_backward(std::span<const CMatrix> layers, int injection_layer, int k_cum) {
  if (layers.empty()) throw ValidationError("empty layer stack");
  bool clamped = false;
  const int k = clamp_rank(k_cum, static_cast<int>(layers.front().rows()), &clamped);
  auto p = compose_low_rank<Complex>(layers, injection_layer, k);
  return summarize_product(p, injection_layer, k, clamped);
}

namespace {

struct DenseSweep {
  Matrix product;
  double log10_scale = 0.0;
};

CumulativeResult dense_result(const DenseSweep& s, int injection_layer) {
  Eigen::BDCSVD<Matrix> svd(s.product);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge on dense product");
  Vector sigma = svd.singularValues();
  CumulativeResult r;
  r.injection_layer = injection_layer;
  r.log10_scale = s.log10_scale + std::log10(sigma(0));
  r.sigma_top = sigma / sigma(0);
  r.effective_rank = effective_rank(r.sigma_top);
  r.truncation_rank = static_cast<int>(sigma.size());
  r.truncation_limited = false;
  r.method = CompositionMethod::dense;
  return r;
}

void absorb(DenseSweep& s, const Matrix& m) {
  s.product = s.product * m;
  double scale = s.product.cwiseAbs().maxCoeff();
  if (!(scale > 0) || !std::isfinite(scale)) throw NumericalError("dense cumulative product vanished or overflowed");
  s.product /= scale;
  s.log10_scale += std::log10(scale);
}

}  // namespace

CumulativeResult compose_dense(const JacobianSet& set, int injection_layer) {
  const int L = set.L();
  if (injection_layer < 0 || injection_layer >= L)
    throw ValidationError("injection layer " + std::to_string(injection_layer) + " outside [0, L)");
  DenseSweep s{Matrix::Identity(set.d(), set.d()), 0.0};
  for (int l = L - 1; l >= injection_layer; --l) absorb(s, set.mean_jacobians[l]);
  return dense_result(s, injection_layer);
}

BottleneckProfile bottleneck_profile(const JacobianSet& set, int k_cum, CompositionMethod method) {
  const int L = set.L();
  BottleneckProfile out;
  out.cumulative.resize(L);
  out.spectral_radius.resize(L);
  out.frac_expanding.resize(L);

  if (method == CompositionMethod::truncated) {
    bool clamped = false;
    const int k = clamp_rank(k_cum, set.d(), &clamped);
    compose_low_rank<double>(std::span<const Matrix>(set.mean_jacobians), 0, k,
                             [&](int layer, const LowRankProduct<double>& p) {
                               out.cumulative[layer] = summarize_product(p, layer, k, clamped);
                             });
  } else {
    DenseSweep s{Matrix::Identity(set.d(), set.d()), 0.0};
    for (int l = L - 1; l >= 0; --l) {
      absorb(s, set.mean_jacobians[l]);
      out.cumulative[l] = dense_result(s, l);
    }
  }

  parallel_for(L, [&](std::size_t l) {
    EigenSpectrum eig = eig_spectrum(set.mean_jacobians[l]);
    out.spectral_radius[l] = eig.spectral_radius();
    out.frac_expanding[l] = eig.frac_expanding();
  });

  if (L >= 3) {
    std::vector<double> er(L);
    for (int l = 0; l < L; ++l) er[l] = out.cumulative[l].effective_rank;
    double rho = spearman_or_nan(er, out.spectral_radius);
    if (std::isfinite(rho)) out.spearman_erank_radius = rho;
  }
  return out;
}

}  // namespace resjac
