#pragma once

// Schur surgery: write a layer as Q(Λ + N)Qᴴ in complex Schur form, scale only
// the strictly upper-triangular N by a dose c, and recompose the stack.
//
// For a real matrix whose eigenvalues are not all real, Q(Λ + cN)Qᴴ is complex
// whenever c ≠ 1, so recompositions and the cumulative products built from
// them are carried in complex arithmetic.

#include "resjac/common.hpp"
#include "resjac/tensorstore.hpp"

#include <string>
#include <vector>

namespace resjac {

enum class SchurMode { J, R };
enum class Construction { dose, control_a, control_b };

std::string to_string(SchurMode mode);
std::string to_string(Construction construction);
SchurMode parse_schur_mode(const std::string& s);
Construction parse_construction(const std::string& s);

struct SchurFactors {
  CMatrix q;       // unitary
  CVector lambda;  // diagonal of the triangular factor, in solver order
  CMatrix n;       // strictly upper triangular; diagonal and lower triangle exactly zero
  SchurMode source_mode = SchurMode::J;

  int dim() const { return static_cast<int>(lambda.size()); }
  double nonnormal_mass() const { return n.norm(); }
};

/// Factors M (mode J) or M − I (mode R).
SchurFactors schur_factor(const Matrix& m, SchurMode mode);

/// Q(Λ + cN)Qᴴ, plus I in mode R.
CMatrix recompose(const SchurFactors& factors, double c);

/// ‖Im A‖_F / ‖Re A‖_F (0 when both vanish).
double imaginary_residue(const CMatrix& a);

/// Tolerance on imaginary_residue for recompose_real.
inline constexpr double kRealResidueTolerance = 1e-6;

/// Real part of recompose(factors, c); throws NumericalError
/// "non-real recomposition" when the imaginary residue exceeds 1e-6.
Matrix recompose_real(const SchurFactors& factors, double c);

/// QΛQᴴ + M_rand with M_rand i.i.d. Gaussian rescaled to ‖M_rand‖_F = c‖N‖_F.
CMatrix control_a(const SchurFactors& factors, double c, std::uint64_t seed);

/// Q_rand(Λ + cN)Q_randᴴ with Q_rand Haar-distributed on the unitary group.
CMatrix control_b(const SchurFactors& factors, double c, std::uint64_t seed);

/// QR of a complex Gaussian matrix with the phases of R's diagonal moved into Q.
CMatrix haar_unitary(int d, Rng& rng);

inline const std::vector<double> kDefaultDoses = {0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0};

struct DoseOptions {
  Construction construction = Construction::dose;
  SchurMode mode = SchurMode::J;
  std::vector<double> doses = kDefaultDoses;
  int k_cum = 512;
  int n_draws = 4;  // controls only
  std::uint64_t seed = 0;
  bool full_henrici = false;  // Henrici of the dense product instead of the rank-K_cum one (d ≤ 512)
};

struct DosePoint {
  double dose = 0.0;
  double erank = 0.0;
  double erank_std = 0.0;
  double log10_frobenius = 0.0;
  double log10_frobenius_std = 0.0;
  double henrici = 0.0;
  double henrici_std = 0.0;
  bool truncation_limited = false;
};

struct DoseCurve {
  Construction construction = Construction::dose;
  SchurMode mode = SchurMode::J;
  int n_random_draws = 1;
  int k_cum = 512;
  bool full_henrici = false;
  std::vector<DosePoint> points;
};

/// Rebuilds every layer at each dose, composes P_0 = J_{L−1}(c)···J_0(c), and
/// records its effective rank, log10 Frobenius mass and Henrici departure.
/// Controls report mean and sample std over n_draws.
DoseCurve dose_sweep(const JacobianSet& set, const DoseOptions& options);

}  // namespace resjac
