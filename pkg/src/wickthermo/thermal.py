"""Stationary states, renormalized Wick squares and local temperatures.

The Wick square at a flat point is obtained by differencing the state kernel
of a model operator against the ground kernel of a flat reference operator
that agrees with the model near the point, taking the coincidence limit, and
extrapolating in the grid spacing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .lattice import (
    LatticeError,
    RadialGrid,
    SpatialOperator,
    assemble_radial_conformal,
    flat_reference,
    refine,
    rescale_metric,
)
from .spectral import (
    EXCESS_CUTOFF,
    KernelMatrix,
    SpectralDecomposition,
    decompose,
)

__all__ = [
    "StationaryState",
    "WickEstimate",
    "TemperatureReading",
    "SweepResult",
    "MassFit",
    "ThermalError",
    "state_kernel",
    "state_columns",
    "wick_square_relative",
    "wick_excess",
    "local_temperature",
    "beta_sweep",
    "lapse_rescale_check",
    "mass_coefficient_estimate",
    "ground_minimality",
    "richardson",
    "extend_domain",
]

# near-coincidence offsets: nodes at r = 2h, 3h, 4h (u form) and cells 2, 3, 4 (finite volume)
_OFFSETS = {"radial_u": (1, 2, 3), "two_chart": (2, 3, 4)}


class ThermalError(ValueError):
    pass


@dataclass(frozen=True)
class StationaryState:
    """Quasi-free stationary state.

    kind ``"ground"``, ``"kms"`` (needs ``beta``) or ``"perturbed"`` (needs
    ``occupations``: a callable ``n(omega)`` or an array with one entry per
    mode in ascending eigenvalue order).
    """

    kind: str
    beta: float | None = None
    occupations: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("ground", "kms", "perturbed"):
            raise ThermalError(f"unknown state kind {self.kind!r}")
        if self.kind == "kms" and not (self.beta is not None and self.beta > 0):
            raise ThermalError(f"KMS states need beta > 0, got {self.beta!r}")
        if self.kind == "perturbed":
            if self.occupations is None:
                raise ThermalError("perturbed states need occupation numbers")
            if not callable(self.occupations) and np.any(np.asarray(self.occupations) < 0):
                raise ThermalError("occupation numbers must be non-negative")

    @classmethod
    def ground(cls):
        return cls("ground")

    @classmethod
    def kms(cls, beta):
        return cls("kms", float(beta))

    @classmethod
    def perturbed(cls, occupations):
        return cls("perturbed", occupations=occupations)

    @property
    def tag(self) -> str:
        if self.kind == "kms":
            return f"kms(beta={self.beta!r})"
        return self.kind

    def weights(self, lam):
        lam = np.asarray(lam, dtype=float)
        base = spectral.ground_weights(lam)
        if self.kind == "ground":
            return base
        if self.kind == "kms":
            return base + spectral.excess_weights(lam, self.beta)
        omega = np.sqrt(lam)
        occ = self.occupations(omega) if callable(self.occupations) else np.asarray(self.occupations, float)
        occ = np.broadcast_to(occ, lam.shape)
        if np.any(occ < 0):
            raise ThermalError("occupation numbers must be non-negative")
        return base + occ / omega


@dataclass(frozen=True)
class WickEstimate:
    value: float
    error: float
    spacings: tuple
    point: object
    level_values: tuple = ()
    converged: bool = True
    notes: tuple = ()
    extras: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class TemperatureReading:
    status: str
    w: float
    temperature: float | None = None

    @property
    def defined(self) -> bool:
        return self.status == "defined"


def local_temperature(w) -> TemperatureReading:
    """``T = sqrt(12 w)`` when ``w >= 0``, otherwise undefined.

    Examples
    --------
    >>> local_temperature(1 / 12).temperature
    1.0
    >>> local_temperature(-0.1).status
    'undefined'
    """
    value = float(w.value if isinstance(w, WickEstimate) else w)
    if value >= 0:
        return TemperatureReading("defined", value, float(np.sqrt(12.0 * value)))
    return TemperatureReading("undefined", value, None)


def state_kernel(state: StationaryState, dec: SpectralDecomposition) -> KernelMatrix:
    if state.kind == "ground":
        return spectral.ground_kernel(dec)
    if state.kind == "kms":
        return spectral.thermal_kernel(dec, state.beta)
    if not dec.complete:
        raise ThermalError("perturbed states need the complete spectrum")
    return KernelMatrix(dec, state.weights(dec.eigenvalues), state.tag)


def state_columns(op: SpatialOperator, state: StationaryState, cols) -> np.ndarray:
    """Measure kernel columns of ``state`` on ``op`` at nodes ``cols``.

    Radial operators use resolvent quadrature for the ground part and a
    partial eigendecomposition, truncated where the Bose factor falls below
    ``exp(-EXCESS_CUTOFF)``, for the thermal excess.
    """
    cols = np.atleast_1d(np.asarray(cols, dtype=int))
    if not op.is_tridiagonal or (state.kind == "perturbed" and op.dim <= spectral.DENSE_LIMIT):
        return state_kernel(state, decompose(op)).columns(cols)
    if state.kind == "perturbed":
        raise ThermalError("perturbed states on large radial grids are not supported")
    out = spectral.ground_kernel_columns(op, cols)
    if state.kind == "kms":
        cut = (EXCESS_CUTOFF / state.beta) ** 2
        dec = decompose(op, max_eigenvalue=cut)
        out = out + spectral.excess_kernel(dec, state.beta).columns(cols)
    return out


def richardson(spacings, values, order=2):
    """Repeated extrapolation of ``values(h) = w + c h^order + ...``.

    Returns ``(value, error, converged)`` with ``error`` the last increment.
    """
    h = np.asarray(spacings, dtype=float)
    v = np.asarray(values, dtype=float)
    scale = max(float(np.max(np.abs(v))), 1e-300)
    floor = 4.0 * np.finfo(float).eps * scale
    if v.size == 1:
        return float(v[0]), floor, True
    p = h**order
    first = (p[:-1] * v[1:] - p[1:] * v[:-1]) / (p[:-1] - p[1:])
    if v.size == 2:
        return float(first[-1]), max(abs(first[-1] - v[-1]), floor), True
    diffs = np.abs(np.diff(v))
    converged = bool(np.all(diffs[1:] <= diffs[:-1] * 1.0000001 + floor))
    return float(first[-1]), max(float(abs(first[-1] - first[-2])), floor), converged


def _point_index(op, point):
    if op.form == "torus":
        if point is None:
            return 0
        if np.isscalar(point):
            return int(point)
        return op.grid.index(point)
    if point in (None, 0, 0.0, "center", "origin"):
        return None
    raise ThermalError(f"radial models are evaluated at the centre only, got point={point!r}")


def _check_flat(op, offsets):
    if op.model is None:
        return
    r_in = op.model.r_inner * op.length_scale
    r = op.radii[list(offsets)]
    h = op.spacing
    if not np.all(r + 2.0 * h < r_in):
        raise ThermalError(
            f"evaluation nodes at r={r.max():.4g} are not inside the flat region r < {r_in:.4g} "
            f"by two spacings"
        )


def _check_coincide(model, ref, offsets):
    if abs(model.spacing - ref.spacing) > 1e-12 * model.spacing:
        raise ThermalError("model and reference operators live on different grids")
    n = max(offsets) + 2
    dm, em = model.tridiagonal()
    dr, er = ref.tridiagonal()
    for a, b in ((dm[:n], dr[:n]), (em[:n], er[:n]), (model.measure[:n], ref.measure[:n])):
        if not np.allclose(a, b, rtol=1e-11, atol=0.0):
            raise ThermalError("model and reference operators differ near the evaluation point")


def _single_level(model, ref, state, ref_state, idx):
    if model.form == "torus":
        if model.grid != ref.grid or model.length_scale != ref.length_scale:
            raise ThermalError("model and reference operators live on different grids")
        km = state_columns(model, state, [idx])[idx, 0]
        kr = state_columns(ref, ref_state, [idx])[idx, 0]
        return float(km - kr)
    offsets = _OFFSETS[model.form]
    _check_flat(model, offsets)
    _check_coincide(model, ref, offsets)
    cols = np.array(offsets)
    gm = state_columns(model, state, cols)[cols, np.arange(cols.size)]
    gr = state_columns(ref, ref_state, cols)[cols, np.arange(cols.size)]
    diff = model.physical_kernel(np.diag(gm - gr), cols, cols).diagonal()
    r = model.radii[cols]
    coeff = np.polyfit(r**2, diff, cols.size - 1)
    return float(coeff[-1])


def extend_domain(op: SpatialOperator, factor: int = 2) -> SpatialOperator:
    """Same model and spacing on a radial domain ``factor`` times larger."""
    if op.form != "radial_u":
        raise LatticeError("domain extension applies to Dirichlet radial operators")
    g = op.grid
    new = assemble_radial_conformal(RadialGrid(g.r_max * factor, g.points * factor), op.model, op.xi)
    return rescale_metric(new, op.length_scale) if op.length_scale != 1.0 else new


def _ladder(op, levels, factor):
    ops = [op]
    for _ in range(1, levels):
        ops.append(refine(ops[-1], factor))
    return ops


def wick_square_relative(model_op, ref_op, state, ref_state=None, point=None, levels=3,
                         factor=2, rmax_doubling=False) -> WickEstimate:
    """Renormalized Wick square ``[state kernel(model) - ref_state kernel(ref)](x, x)``.

    Parameters
    ----------
    model_op, ref_op : SpatialOperator
        Must share the grid spacing and coincide near ``point``.
    state, ref_state : StationaryState
        ``ref_state`` defaults to the ground state.
    point : optional
        Torus node (index or ``(i, j, k)``); radial models use the centre.
    levels, factor : int
        Refinement ladder ``h, h/factor, ...`` used for second-order Richardson
        extrapolation.  Radial kernels are first extrapolated to ``r -> 0`` from
        three near-centre nodes.
    rmax_doubling : bool
        For non-compact radial models, repeat on a domain of twice the radius and
        add the shift to the error bar.
    """
    ref_state = StationaryState.ground() if ref_state is None else ref_state
    idx = _point_index(model_op, point)
    mops = _ladder(model_op, levels, factor)
    rops = _ladder(ref_op, levels, factor) if ref_op is not model_op else mops
    vals = [_single_level(m, r, state, ref_state, idx) for m, r in zip(mops, rops)]
    hs = [m.spacing for m in mops]
    value, error, converged = richardson(hs, vals)
    notes = [] if converged else ["refinement increments do not decrease"]
    extras = {}
    if rmax_doubling:
        big_m = _ladder(extend_domain(model_op), levels, factor)
        big_r = _ladder(extend_domain(ref_op), levels, factor)
        vals2 = [_single_level(m, r, state, ref_state, idx) for m, r in zip(big_m, big_r)]
        value2, error2, conv2 = richardson(hs, vals2)
        shift = abs(value2 - value)
        extras = {"value_doubled": value2, "error_doubled": error2, "rmax_shift": shift,
                  "extrapolation_error": error}
        error = error + shift
        if not conv2:
            notes.append("refinement increments do not decrease on the doubled domain")
            converged = False
    return WickEstimate(value, error, tuple(hs), "center" if idx is None else idx, tuple(vals),
                        converged, tuple(notes), extras)


def wick_excess(state, op_or_dec, point=None, levels=1, factor=2) -> WickEstimate:
    """Diagonal of the excess kernel (state minus ground on the same operator).

    With a decomposition, or ``levels=1``, this is a single-lattice value.
    With an operator and ``levels > 1`` the value is Richardson-extrapolated
    over the refinement ladder.
    """
    if state.kind == "ground":
        raise ThermalError("the excess is only defined for KMS or perturbed states")
    if isinstance(op_or_dec, SpectralDecomposition):
        idx = 0 if point is None else int(point)
        k = state_kernel(state, op_or_dec) - spectral.ground_kernel(op_or_dec)
        v = float(k.diagonal()[idx])
        return WickEstimate(v, richardson([1.0], [v])[1], (), idx, (v,))
    op = op_or_dec
    if op.is_tridiagonal:
        return wick_square_relative(op, op, state, StationaryState.ground(), point, levels, factor)
    idx = _point_index(op, point)
    ops = _ladder(op, levels, factor)
    vals = []
    for o in ops:
        dec = decompose(o)
        vals.append(float((state_kernel(state, dec) - spectral.ground_kernel(dec)).diagonal()[idx]))
    hs = [o.spacing for o in ops]
    value, error, converged = richardson(hs, vals)
    return WickEstimate(value, error, tuple(hs), idx, tuple(vals), converged)


@dataclass
class SweepResult:
    betas: np.ndarray
    excess: np.ndarray  # shape (len(betas), nodes)
    point: int
    estimates: list
    temperatures: list
    strict_decrease: bool
    decrease_violations: int
    lipschitz_violations: int
    tail_violations: int
    lipschitz_margin: float
    tail_margin: float
    checked_points: int

    def rows(self):
        for b, est, t in zip(self.betas, self.estimates, self.temperatures):
            yield float(b), est, t


def beta_sweep(op: SpatialOperator, betas, point=None, ground=None, all_points=True) -> SweepResult:
    """Excess Wick square over a strictly increasing grid of ``beta``.

    Checks at every node (or only at ``point`` with ``all_points=False``):
    strict decrease in ``beta``; the tail bound
    ``e(b) <= (b0 / b) e(b0)`` for ``b > b0``; and the Lipschitz bound
    ``|e(b) - e(b0)| <= 2 |b - b0| e(b0 / 4) / b0`` for ``b >= b0 / 2``.
    ``ground`` (a :class:`WickEstimate`) is added to every reported value.
    """
    betas = np.asarray(betas, dtype=float)
    if betas.ndim != 1 or betas.size < 2 or np.any(np.diff(betas) <= 0) or betas[0] <= 0:
        raise ThermalError("beta grid must be positive and strictly increasing")
    idx = _point_index(op, point)
    if idx is None:
        raise ThermalError("beta sweeps run on lattice operators with a node index")
    if op.is_tridiagonal:
        dec = decompose(op, max_eigenvalue=(EXCESS_CUTOFF / (betas[0] / 4.0)) ** 2)
    else:
        dec = decompose(op)
    lam = dec.eigenvalues.ravel()
    psi2 = None if dec.kind == "fourier" else dec.eigenfunctions**2

    def diag(beta):
        w = spectral.excess_weights(lam, beta)
        if psi2 is None:
            return np.full(dec.size, w.sum() / dec.volume)
        return psi2 @ w

    E = np.array([diag(b) for b in betas])
    Eq = np.array([diag(b / 4.0) for b in betas])
    if not all_points:
        E, Eq = E[:, [idx]], Eq[:, [idx]]
        pidx = 0
    else:
        pidx = idx
    slack = 1e-12
    dec_viol = int(np.count_nonzero(np.diff(E, axis=0) >= 0))
    tail_viol = lip_viol = 0
    tail_margin = lip_margin = np.inf
    for i in range(betas.size):
        for j in range(betas.size):
            if j == i:
                continue
            b0, b = betas[i], betas[j]
            if b > b0:
                bound = b0 / b * E[i]
                tail_viol += int(np.count_nonzero(E[j] > bound * (1 + slack)))
                tail_margin = min(tail_margin, float(np.min((bound - E[j]) / bound)))
            if b >= b0 / 2.0:
                bound = 2.0 / b0 * abs(b - b0) * Eq[i]
                gap = np.abs(E[j] - E[i])
                lip_viol += int(np.count_nonzero(gap > bound * (1 + slack)))
                lip_margin = min(lip_margin, float(np.min((bound - gap) / bound)))
    g_val = 0.0 if ground is None else ground.value
    g_err = None if ground is None else ground.error
    ests, temps = [], []
    for b, row in zip(betas, E):
        v = g_val + float(row[pidx])
        err = g_err if g_err is not None else richardson([1.0], [v])[1]
        est = WickEstimate(v, err, (op.spacing,), idx, (v,))
        ests.append(est)
        temps.append(local_temperature(est))
    return SweepResult(betas, E, idx, ests, temps, dec_viol == 0, dec_viol, lip_viol, tail_viol,
                       lip_margin, tail_margin, E.shape[1])


@dataclass(frozen=True)
class LapseCheck:
    c: float
    w: float
    w_scaled: float
    residual: float
    passed: bool


def _lapse_value(op, state, point):
    if op.form == "torus":
        return wick_excess(state, decompose(op), point).value
    return wick_square_relative(op, flat_reference(op), state, StationaryState.ground(), point, levels=1).value


def lapse_rescale_check(op: SpatialOperator, c: float, beta: float, point=None, tol=1e-10) -> LapseCheck:
    """Compare ``w'(c beta)`` on the metric scaled by ``c^2`` with ``c^-2 w(beta)``."""
    if not c > 0:
        raise ThermalError(f"lapse factor must be positive, got {c}")
    w = _lapse_value(op, StationaryState.kms(beta), point)
    w2 = _lapse_value(rescale_metric(op, c), StationaryState.kms(c * beta), point)
    target = w / c**2
    res = abs(w2 - target) / abs(target)
    return LapseCheck(float(c), float(w), float(w2), float(res), bool(res <= tol))


@dataclass(frozen=True)
class MassFit:
    value: float
    error: float
    level_values: tuple
    quadratic_value: float
    window: tuple
    points: int
    ill_conditioned: bool
    converged: bool


def _flat_length(op):
    if op.form == "two_chart":
        return op.model.potential.nu ** 2
    return 1.0


def _fit_level(op, state, window):
    src = 0
    col = state_columns(op, state, [src])[:, 0]
    inner = np.arange(op.dim) if op.chart is None else np.flatnonzero(op.chart == 0)
    g = op.physical_kernel(col[inner][:, None], inner, [src])[:, 0]
    scale = _flat_length(op)
    d = scale * op.radii[inner]
    d0 = scale * op.radii[src]
    sel = (d >= window[0]) & (d <= window[1])
    d, g = d[sel], g[sel]
    k0 = np.log((d + d0) / np.abs(d - d0)) / (8.0 * np.pi**2 * d * d0)
    y = 4.0 * np.pi**2 * (g - k0)
    lin = np.polyfit(d, y, 1)[-1] / (4.0 * np.pi**2)
    quad = np.polyfit(d, y, 2)[-1] / (4.0 * np.pi**2)
    return float(lin), float(quad), int(sel.sum())


def mass_coefficient_estimate(model_op, state=None, levels=3, factor=2, window=None) -> MassFit:
    """Estimate ``w`` from the near-centre expansion of the Green function.

    With the source at the node nearest the centre, ``4 pi^2 (G - k0)`` is fitted
    to a constant plus a linear term in the physical separation, where ``k0`` is
    the flat continuum kernel ``1 / (4 pi^2 |x - y|^2)`` averaged over spheres.
    The constant over ``4 pi^2`` estimates ``w``; constants from the refinement
    ladder are Richardson-extrapolated.  The error adds the last increment and
    the spread between the linear and a quadratic fit.
    """
    state = StationaryState.ground() if state is None else state
    if model_op.form not in ("radial_u", "two_chart"):
        raise ThermalError("mass-coefficient fits need a radial model")
    scale = _flat_length(model_op)
    r_flat = scale * model_op.model.r_inner * model_op.length_scale
    h_phys = scale * model_op.spacing
    if window is None:
        window = (max(0.05 * r_flat, 3.0 * h_phys), 0.9 * r_flat)
    window = (float(window[0]), float(window[1]))
    if window[0] < 3.0 * h_phys * (1 - 1e-12) or window[1] > r_flat:
        raise ThermalError(
            f"fit window {window} must lie between 3 spacings ({3 * h_phys:.3g}) and the flat radius {r_flat:.3g}"
        )
    ops = _ladder(model_op, levels, factor)
    lins, quads, npts = [], [], []
    for o in ops:
        a, b, n = _fit_level(o, state, window)
        lins.append(a)
        quads.append(b)
        npts.append(n)
    hs = [o.spacing for o in ops]
    value, err, converged = richardson(hs, lins)
    qvalue, _, _ = richardson(hs, quads)
    err = err + abs(value - qvalue)
    ill = min(npts) < 8 or window[1] / window[0] < 1.5
    return MassFit(value, err, tuple(lins), qvalue, window, min(npts), ill, converged)


@dataclass(frozen=True)
class MinimalityCheck:
    min_eigenvalue: float
    min_diagonal_gap: float
    norm: float
    psd: bool
    pointwise: bool


def ground_minimality(dec: SpectralDecomposition, occupations, tol=1e-10) -> MinimalityCheck:
    """Compare a perturbed state with the ground state on the same operator.

    The kernel difference must be a positive semi-definite form and the Wick
    square of the perturbed state must dominate the ground one at every node.
    """
    state = StationaryState.perturbed(occupations)
    diff = state_kernel(state, dec) - spectral.ground_kernel(dec)
    form = diff.quadratic_form()
    ev = np.linalg.eigvalsh(0.5 * (form + form.T))
    norm = float(np.max(np.abs(state_kernel(state, dec).quadratic_form())))
    gap = float(np.min(diff.diagonal()))
    return MinimalityCheck(float(ev[0]), gap, norm, bool(ev[0] >= -tol * norm), bool(gap >= 0))
