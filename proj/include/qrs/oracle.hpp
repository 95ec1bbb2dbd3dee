#pragma once

// Brute-force density-matrix oracle for the two-pair circuits. Builds the
// full 16x16 state of two Werner pairs, applies the purification or
// swapping circuit gate by gate, and reports each measurement branch's
// probability and resulting pair fidelity. The closed forms in
// quantum.hpp are validated against this.

#include <Eigen/Dense>

#include <complex>
#include <vector>

#include "qrs/quantum.hpp"

namespace qrs::oracle {

using Mat = Eigen::MatrixXcd;
using std::complex;

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Mat identity(int dim) { return Mat::Identity(dim, dim); }

// |Phi+><Phi+| mixed with uniform noise.
inline Mat werner_pair(double f) {
  double w = (4.0 * f - 1.0) / 3.0;
  Eigen::Vector4cd phi_plus;
  phi_plus << 1.0 / std::sqrt(2.0), 0, 0, 1.0 / std::sqrt(2.0);
  Mat proj = phi_plus * phi_plus.adjoint();
  return w * proj + (1.0 - w) / 4.0 * identity(4);
}

// Embed a single-qubit gate at position q in an n-qubit register
// (qubit 0 is the most significant bit of the basis index).
inline Mat embed1(const Mat& g, int q, int n) {
  Mat out = identity(1);
  for (int i = 0; i < n; ++i) out = kron(out, i == q ? g : identity(2));
  return out;
}

inline Mat cnot(int control, int target, int n) {
  int dim = 1 << n;
  Mat u = Mat::Zero(dim, dim);
  for (int x = 0; x < dim; ++x) {
    int cbit = (x >> (n - 1 - control)) & 1;
    int y = cbit ? x ^ (1 << (n - 1 - target)) : x;
    u(y, x) = 1.0;
  }
  return u;
}

inline Mat hadamard() {
  Mat h(2, 2);
  double s = 1.0 / std::sqrt(2.0);
  h << s, s, s, -s;
  return h;
}

inline Mat pauli_x() {
  Mat m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

inline Mat pauli_z() {
  Mat m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

// Z-basis projector |b><b| on qubit q of n.
inline Mat z_projector(int b, int q, int n) {
  Mat p = Mat::Zero(2, 2);
  p(b, b) = 1.0;
  return embed1(p, q, n);
}

// Trace out all qubits not listed in `keep` (ascending order).
inline Mat partial_trace(const Mat& rho, const std::vector<int>& keep, int n) {
  int nk = static_cast<int>(keep.size());
  int dim_keep = 1 << nk;
  std::vector<int> drop;
  for (int q = 0; q < n; ++q) {
    bool kept = false;
    for (int k : keep) kept |= (k == q);
    if (!kept) drop.push_back(q);
  }
  int dim_drop = 1 << static_cast<int>(drop.size());
  auto index = [&](int kbits, int dbits) {
    int x = 0;
    for (int i = 0; i < nk; ++i)
      x |= ((kbits >> (nk - 1 - i)) & 1) << (n - 1 - keep[i]);
    for (size_t i = 0; i < drop.size(); ++i)
      x |= ((dbits >> (static_cast<int>(drop.size()) - 1 - i)) & 1)
           << (n - 1 - drop[i]);
    return x;
  };
  Mat out = Mat::Zero(dim_keep, dim_keep);
  for (int i = 0; i < dim_keep; ++i)
    for (int j = 0; j < dim_keep; ++j)
      for (int d = 0; d < dim_drop; ++d)
        out(i, j) += rho(index(i, d), index(j, d));
  return out;
}

inline double bell_fidelity(const Mat& rho2q) {
  Eigen::Vector4cd phi_plus;
  phi_plus << 1.0 / std::sqrt(2.0), 0, 0, 1.0 / std::sqrt(2.0);
  return (phi_plus.adjoint() * rho2q * phi_plus)(0, 0).real();
}

struct Branch {
  int m1 = 0;
  int m2 = 0;
  double probability = 0.0;
  double fidelity = 0.0;  // of the surviving pair, after any correction
};

// Bilateral CNOT between pair 1 (qubits A1=0, B1=1) and pair 2
// (A2=2, B2=3); Z-measure the targets; even parity keeps pair 1.
inline std::vector<Branch> purify_branches(double f1, double f2) {
  Mat rho = kron(werner_pair(f1), werner_pair(f2));
  Mat u = cnot(1, 3, 4) * cnot(0, 2, 4);
  rho = u * rho * u.adjoint();
  std::vector<Branch> out;
  for (int m1 = 0; m1 < 2; ++m1) {
    for (int m2 = 0; m2 < 2; ++m2) {
      Mat proj = z_projector(m1, 2, 4) * z_projector(m2, 3, 4);
      Mat post = proj * rho * proj.adjoint();
      double p = post.trace().real();
      Branch b{m1, m2, p, 0.0};
      if (p > 1e-300) {
        Mat kept = partial_trace(post, {0, 1}, 4) / p;
        b.fidelity = bell_fidelity(kept);
      }
      out.push_back(b);
    }
  }
  return out;
}

inline PurifyOutcome purify(double f1, double f2) {
  auto branches = purify_branches(f1, f2);
  double p_even = 0.0, f_acc = 0.0;
  for (const auto& b : branches) {
    if (b.m1 == b.m2) {
      p_even += b.probability;
      f_acc += b.probability * b.fidelity;
    }
  }
  return {p_even, f_acc / p_even};
}

// Entanglement swapping: pairs (A=0, B1=1) and (B2=2, C=3); Bell-state
// measurement on B1,B2; Pauli frame correction applied at C per outcome.
inline std::vector<Branch> swap_branches(double f1, double f2) {
  Mat rho = kron(werner_pair(f1), werner_pair(f2));
  Mat u = embed1(hadamard(), 1, 4) * cnot(1, 2, 4);
  rho = u * rho * u.adjoint();
  std::vector<Branch> out;
  for (int m1 = 0; m1 < 2; ++m1) {
    for (int m2 = 0; m2 < 2; ++m2) {
      Mat proj = z_projector(m1, 1, 4) * z_projector(m2, 2, 4);
      Mat post = proj * rho * proj.adjoint();
      double p = post.trace().real();
      Branch b{m1, m2, p, 0.0};
      if (p > 1e-300) {
        Mat pair = partial_trace(post, {0, 3}, 4) / p;
        Mat corr = identity(4);
        if (m2) corr = kron(identity(2), pauli_x()) * corr;
        if (m1) corr = kron(identity(2), pauli_z()) * corr;
        pair = corr * pair * corr.adjoint();
        b.fidelity = bell_fidelity(pair);
      }
      out.push_back(b);
    }
  }
  return out;
}

inline double swap_avg_fidelity(double f1, double f2) {
  double f = 0.0;
  for (const auto& b : swap_branches(f1, f2)) f += b.probability * b.fidelity;
  return f;
}

// Z (x) Z measurement statistics of a single Werner pair.
inline double qber_z(double f) {
  Mat rho = werner_pair(f);
  return (rho(1, 1) + rho(2, 2)).real();
}

// One-qubit depolarizing channel with rate matched to decohere().
inline double decohere(double f0, double dt, double t_mem) {
  double lam = 1.0 - std::exp(-dt / t_mem);
  Mat rho = werner_pair(f0);
  Mat marginal = partial_trace(rho, {1}, 2);
  Mat mixed = kron(identity(2) / 2.0, marginal);
  Mat out = (1.0 - lam) * rho + lam * mixed;
  return bell_fidelity(out);
}

}  // namespace qrs::oracle
