"""Eigendecompositions of spatial operators and equal-time state kernels.

For a mode expansion with eigenvalues ``lambda_i`` and measure-orthonormal
eigenfunctions ``psi_i`` the equal-time kernels are

    ground   sum_i psi_i(x) psi_i(y) / (2 omega_i)
    thermal  sum_i psi_i(x) psi_i(y) coth(beta omega_i / 2) / (2 omega_i)
    excess   sum_i psi_i(x) psi_i(y) F_beta(omega_i) / omega_i

with ``omega_i = sqrt(lambda_i)`` and ``F_beta(k) = 1 / (exp(beta k) - 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal, solve_banded
from scipy.linalg.lapack import dstein
from scipy.special import digamma

from .lattice import SpatialOperator

__all__ = [
    "SpectralDecomposition",
    "KernelMatrix",
    "SpectralError",
    "decompose",
    "decompose_matrix",
    "bose_factor",
    "ground_weights",
    "thermal_weights",
    "excess_weights",
    "ground_kernel",
    "thermal_kernel",
    "excess_kernel",
    "ground_kernel_columns",
    "matsubara_sum",
    "DENSE_LIMIT",
    "EXCESS_CUTOFF",
]

DENSE_LIMIT = 5000
# beta * omega above which the Bose factor is below exp(-EXCESS_CUTOFF) and the
# mode is dropped from partial decompositions
EXCESS_CUTOFF = 46.0
_LAURENT_SWITCH = 1e-5
_OVERFLOW_SWITCH = 700.0


class SpectralError(RuntimeError):
    pass


def bose_factor(beta, k):
    """Planck occupation ``1 / (exp(beta k) - 1)``.

    Uses the Laurent series ``1/x - 1/2 + x/12 - x^3/720`` for ``x = beta k < 1e-5``
    and ``exp(-x)`` above ``x = 700``.

    Examples
    --------
    >>> float(bose_factor(1.0, np.log(2.0)))
    1.0
    """
    beta = np.asarray(beta, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    if np.any(k <= 0):
        raise ValueError("bose_factor needs k > 0")
    x = beta * k
    out = np.empty(np.broadcast(x).shape)
    small = x < _LAURENT_SWITCH
    big = x > _OVERFLOW_SWITCH
    mid = ~(small | big)
    xs = x[small]
    out[small] = 1.0 / xs - 0.5 + xs / 12.0 - xs**3 / 720.0
    out[big] = np.exp(-x[big])
    out[mid] = 1.0 / np.expm1(x[mid])
    return out if out.ndim else out[()]


def ground_weights(lam):
    return 0.5 / np.sqrt(lam)


def excess_weights(lam, beta):
    omega = np.sqrt(lam)
    return bose_factor(beta, omega) / omega


def thermal_weights(lam, beta):
    # coth(x)/2 = 1/2 + 1/(e^{2x} - 1) at x = beta omega / 2
    return ground_weights(lam) + excess_weights(lam, beta)


@dataclass(eq=False)
class SpectralDecomposition:
    """Eigenpairs of a spatial operator.

    ``eigenfunctions`` are measure-orthonormal columns, ``psi^T diag(M) psi = I``.
    For translation-invariant tori the eigenfunctions are plane waves and only
    the eigenvalue array (shape ``(N, N, N)``) is stored.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray | None
    measure: np.ndarray
    residual: float
    residual_scaled: float
    orthonormality: float
    kind: str
    complete: bool = True
    cutoff: float = np.inf
    volume: float = 1.0

    @property
    def size(self) -> int:
        return int(self.measure.size)

    def _check_weights(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.shape != self.eigenvalues.shape:
            raise SpectralError("weight array does not match the spectrum")
        return w

    def diagonal(self, weights) -> np.ndarray:
        """``sum_i w_i psi_i(x)^2`` at every node."""
        w = self._check_weights(weights)
        if self.kind == "fourier":
            return np.full(self.size, float(np.sum(w)) / self.volume)
        psi = self.eigenfunctions
        return (psi * psi) @ w

    def columns(self, weights, cols) -> np.ndarray:
        """Kernel columns ``k(:, j)`` for ``j`` in ``cols``, shape ``(n, len(cols))``."""
        w = self._check_weights(weights)
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        if self.kind == "fourier":
            g = np.fft.ifftn(w).real.ravel() * w.size / self.volume
            n = w.shape[0]
            idx = np.arange(self.size)
            ijk = np.stack(np.unravel_index(idx, w.shape), axis=1)
            out = np.empty((self.size, cols.size))
            for c, j in enumerate(cols):
                shift = (ijk - np.array(np.unravel_index(j, w.shape))) % n
                out[:, c] = g[np.ravel_multi_index(shift.T, w.shape)]
            return out
        psi = self.eigenfunctions
        return (psi * w) @ psi[cols].T

    def matrix(self, weights) -> np.ndarray:
        """Full kernel matrix ``k(x, y)``."""
        if self.kind == "fourier":
            return self.columns(weights, np.arange(self.size))
        w = self._check_weights(weights)
        psi = self.eigenfunctions
        return (psi * w) @ psi.T


@dataclass(eq=False)
class KernelMatrix:
    """Lazily evaluated kernel ``sum_i weight_i psi_i(x) psi_i(y)`` tagged by state."""

    decomposition: SpectralDecomposition
    weights: np.ndarray
    state_tag: str

    def diagonal(self):
        return self.decomposition.diagonal(self.weights)

    def columns(self, cols):
        return self.decomposition.columns(self.weights, cols)

    @property
    def values(self):
        return self.decomposition.matrix(self.weights)

    def __sub__(self, other):
        if other.decomposition is not self.decomposition:
            raise SpectralError("kernel differences need a shared decomposition")
        return KernelMatrix(self.decomposition, self.weights - other.weights,
                            f"{self.state_tag}-{other.state_tag}")

    def __add__(self, other):
        if other.decomposition is not self.decomposition:
            raise SpectralError("kernel sums need a shared decomposition")
        return KernelMatrix(self.decomposition, self.weights + other.weights,
                            f"{self.state_tag}+{other.state_tag}")

    def quadratic_form(self):
        """Symmetric matrix ``M^{1/2} k M^{1/2}`` representing the kernel as a form on ``L^2``."""
        s = np.sqrt(self.decomposition.measure)
        return s[:, None] * self.values * s[None, :]

    def to_csv(self, path):
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")


def _torus_fourier_eigenvalues(op):
    n = op.grid.points_per_axis
    h = op.spacing
    k = (2.0 / h) ** 2 * np.sin(np.pi * np.arange(n) / n) ** 2
    shift = op.mass**2 + float(op.potential[0])
    return k[:, None, None] + k[None, :, None] + k[None, None, :] + shift


def decompose_matrix(sym, measure, kind="dense"):
    """Decompose a symmetric matrix ``sym = M^{1/2} A M^{-1/2}`` given as a dense array."""
    try:
        lam, vec = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"dense eigensolver failed: {exc}") from exc
    return _package(lam, vec, measure, lambda v: sym @ v, kind, True, np.inf)


def _package(lam, vec, measure, apply, kind, complete, cutoff):
    if lam.size and not lam[0] > 0:
        raise SpectralError(f"non-positive eigenvalue {lam[0]:.6e}")
    res_vec = np.linalg.norm(apply(vec) - vec * lam, axis=0)
    norm = float(np.max(np.abs(lam))) if lam.size else 1.0
    residual = float(np.max(res_vec / lam)) if lam.size else 0.0
    residual_scaled = float(np.max(res_vec) / norm) if lam.size else 0.0
    gram = vec.T @ vec
    ortho = float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if lam.size else 0.0
    psi = vec / np.sqrt(measure)[:, None]
    return SpectralDecomposition(lam, psi, np.asarray(measure, float), residual, residual_scaled,
                                 ortho, kind, complete, cutoff)


STEIN_CHUNK = 64


def _lowest_tridiagonal(d, e, cutoff):
    """Eigenpairs of a symmetric tridiagonal matrix with eigenvalues below ``cutoff``.

    Eigenvalues come from bisection and eigenvectors from inverse iteration
    in chunks of :data:`STEIN_CHUNK`, so memory stays ``O(n m)``; LAPACK's
    MRRR driver as wrapped by scipy allocates ``n x n`` regardless of ``m``.
    """
    lam = eigvalsh_tridiagonal(d, e, select="v", select_range=(-np.inf, cutoff), lapack_driver="stebz")
    n = d.size
    vec = np.empty((n, lam.size))
    iblock = np.ones(n, dtype=np.int32)
    isplit = np.zeros(n, dtype=np.int32)
    isplit[0] = n
    for s in range(0, lam.size, STEIN_CHUNK):
        w = lam[s:s + STEIN_CHUNK]
        z, info = dstein(d, e, w, iblock, isplit)
        if info != 0:
            raise np.linalg.LinAlgError(f"inverse iteration failed to converge for {info} vectors")
        vec[:, s:s + w.size] = z[:, :w.size]
    return lam, vec


def decompose(op: SpatialOperator, max_eigenvalue: float | None = None,
              method: str | None = None) -> SpectralDecomposition:
    """Eigendecomposition of ``op``.

    Parameters
    ----------
    op : SpatialOperator
    max_eigenvalue : float, optional
        Keep only eigenpairs below this value (tridiagonal operators only).
        The result is then marked incomplete and can only produce excess kernels.
    method : {"fourier", "tridiagonal", "dense"}, optional
        Defaults to Fourier for translation-invariant tori, tridiagonal for
        radial operators, dense otherwise.

    Returns
    -------
    SpectralDecomposition
        Cached on the operator per ``(method, max_eigenvalue)``.
    """
    if method is None:
        if op.form == "torus" and op.translation_invariant:
            method = "fourier"
        elif op.is_tridiagonal:
            method = "tridiagonal"
        else:
            method = "dense"
    key = ("dec", method, max_eigenvalue)
    if key in op._cache:
        return op._cache[key]
    if method == "fourier":
        if not (op.form == "torus" and op.translation_invariant):
            raise SpectralError("the Fourier path needs a translation-invariant torus")
        lam = _torus_fourier_eigenvalues(op)
        dec = SpectralDecomposition(lam, None, op.measure, 0.0, 0.0, 0.0, "fourier",
                                    volume=(op.grid.side * op.length_scale) ** 3)
    elif method == "tridiagonal":
        t = op.symmetrized()
        d, e = t.diagonal(), t.diagonal(1)
        try:
            if max_eigenvalue is None:
                lam, vec = eigh_tridiagonal(d, e)
            else:
                lam, vec = _lowest_tridiagonal(d, e, max_eigenvalue)
        except np.linalg.LinAlgError as exc:
            raise SpectralError(f"tridiagonal eigensolver failed: {exc}") from exc
        cutoff = np.inf if max_eigenvalue is None else float(max_eigenvalue)
        dec = _package(lam, vec, op.measure, lambda v: t @ v, "tridiagonal", max_eigenvalue is None, cutoff)
    elif method == "dense":
        if op.dim > DENSE_LIMIT:
            raise SpectralError(f"dense decomposition limited to {DENSE_LIMIT} dimensions, got {op.dim}")
        if max_eigenvalue is not None:
            raise SpectralError("eigenvalue cutoffs are only supported on the tridiagonal path")
        dec = decompose_matrix(op.symmetrized().toarray(), op.measure)
    else:
        raise SpectralError(f"unknown decomposition method {method!r}")
    op._cache[key] = dec
    return dec


def _require_complete(dec, what):
    if not dec.complete:
        raise SpectralError(f"{what} needs the complete spectrum; got a decomposition cut at {dec.cutoff}")


def ground_kernel(dec: SpectralDecomposition) -> KernelMatrix:
    _require_complete(dec, "the ground kernel")
    return KernelMatrix(dec, ground_weights(dec.eigenvalues), "ground")


def _check_beta(beta):
    if not np.isscalar(beta) or not beta > 0:
        raise ValueError(f"beta must be a positive number, got {beta!r}")


def thermal_kernel(dec: SpectralDecomposition, beta: float) -> KernelMatrix:
    _check_beta(beta)
    _require_complete(dec, "the thermal kernel")
    return KernelMatrix(dec, thermal_weights(dec.eigenvalues, beta), f"kms({beta!r})")


def excess_kernel(dec: SpectralDecomposition, beta: float) -> KernelMatrix:
    _check_beta(beta)
    if not dec.complete and beta * np.sqrt(dec.cutoff) < EXCESS_CUTOFF:
        raise SpectralError(
            f"decomposition cut at lambda={dec.cutoff} is too low for beta={beta}; "
            f"need beta*sqrt(cutoff) >= {EXCESS_CUTOFF}"
        )
    return KernelMatrix(dec, excess_weights(dec.eigenvalues, beta), f"excess({beta!r})")


def ground_kernel_columns(op: SpatialOperator, cols, step: float = 0.25) -> np.ndarray:
    """Columns of the ground kernel ``(1/2) A^{-1/2}`` for a tridiagonal operator.

    Uses ``(1/2) T^{-1/2} = (1/pi) int t (t^2 + T)^{-1} ds`` with ``t = e^s`` and the
    trapezoid rule in ``s``; the integrand is a shifted ``sech`` for every
    eigenvalue, so the rule converges like ``exp(-pi^2 / step)``.  Each node costs
    one banded solve, so the total cost is linear in the dimension.
    """
    if not op.is_tridiagonal:
        raise SpectralError("resolvent columns need a tridiagonal operator")
    d, e = op.tridiagonal()
    cols = np.atleast_1d(np.asarray(cols, dtype=int))
    key = ("ground_cols", tuple(cols.tolist()), step)
    if key in op._cache:
        return op._cache[key]
    lam_min = op.min_eigenvalue
    if not np.isfinite(lam_min):
        lam_min = float(eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))[0])
    lam_max = float(np.max(np.abs(d)) + 2.0 * np.max(np.abs(e)))
    s = np.arange(0.5 * np.log(lam_min) - 40.0, 0.5 * np.log(lam_max) + 40.0, step)
    n = d.size
    ab = np.zeros((3, n))
    ab[0, 1:] = e
    ab[2, :-1] = e
    rhs = np.zeros((n, cols.size))
    rhs[cols, np.arange(cols.size)] = 1.0
    acc = np.zeros((n, cols.size))
    for sk in s:
        t = np.exp(sk)
        ab[1] = d + t * t
        acc += t * solve_banded((1, 1), ab, rhs, check_finite=False)
    acc *= step / np.pi
    sm = np.sqrt(op.measure)
    out = acc / (sm[:, None] * sm[cols][None, :])
    op._cache[key] = out
    return out


def matsubara_sum(lam, beta, n_max, tail=True):
    """``(1/beta) sum_{|n| <= n_max} 1 / ((2 pi n / beta)^2 + lam)``.

    With ``tail=True`` the remainder ``n > n_max`` is added in closed form,
    ``sum_{n > N} 1/(n^2 + c^2) = Im psi(N + 1 + i c) / c``, which makes the
    result equal ``coth(beta sqrt(lam) / 2) / (2 sqrt(lam))`` up to rounding.
    """
    lam = np.asarray(lam, dtype=float)
    _check_beta(beta)
    n = np.arange(1, int(n_max) + 1, dtype=float)
    wn2 = (2.0 * np.pi * n / beta) ** 2
    partial = 1.0 / lam + 2.0 * np.sum(1.0 / (wn2[:, None] + lam.ravel()[None, :]), axis=0).reshape(lam.shape)
    total = partial
    if tail:
        c = beta * np.sqrt(lam) / (2.0 * np.pi)
        rem = np.imag(digamma(n_max + 1.0 + 1j * c)) / c
        total = partial + 2.0 * (beta / (2.0 * np.pi)) ** 2 * rem
    return total / beta
