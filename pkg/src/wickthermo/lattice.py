"""Finite-difference spatial operators on flat tori and spherically symmetric grids.

Every operator is stored in nodal form ``A`` together with positive measure
weights ``M`` such that ``diag(M) @ A`` is symmetric.  Spectral routines work
with the similarity transform ``T = M^{1/2} A M^{-1/2}``, which is symmetric,
and map eigenvectors back to measure-orthonormal eigenfunctions.

Three discretizations are provided.

torus
    7-point periodic Laplacian plus a diagonal potential on ``(L/N) Z^3 / L Z^3``.
radial_u
    s-wave reduction ``u = r phi`` of a conformally flat operator on ``(0, r_max)``
    with Dirichlet ends; nodes ``r_i = i h``.
two_chart
    s-wave finite-volume discretization of ``-Delta_h + xi R`` for ``h = U^4 delta``
    on the one-point compactification, using ``r`` on the inner chart and
    ``s = mu^2 / r`` on the outer chart.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .geometry import ConformalFactorModel, ShellPotential

__all__ = [
    "TorusGrid",
    "RadialGrid",
    "SpatialOperator",
    "LatticeError",
    "ResourceLimitError",
    "assemble_torus",
    "assemble_radial_conformal",
    "assemble_radial_quartic",
    "flat_reference",
    "refine",
    "rescale_metric",
    "dump_triplets",
    "assemble_euclidean",
    "max_dimension",
    "MAX_DIM_ENV",
]

MAX_DIM_ENV = "WICKTHERMO_MAX_DIM"
DEFAULT_MAX_DIM = 1_000_000
MIN_SHELL_NODES = 16


class LatticeError(ValueError):
    pass


class ResourceLimitError(LatticeError):
    pass


def max_dimension() -> int:
    """Matrix-dimension cap, overridable through ``WICKTHERMO_MAX_DIM``."""
    raw = os.environ.get(MAX_DIM_ENV)
    if raw is None:
        return DEFAULT_MAX_DIM
    try:
        cap = int(raw)
    except ValueError as exc:
        raise LatticeError(f"{MAX_DIM_ENV} must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise LatticeError(f"{MAX_DIM_ENV} must be positive, got {cap}")
    return cap


def _guard(dim):
    cap = max_dimension()
    if dim > cap:
        raise ResourceLimitError(
            f"operator dimension {dim} exceeds the cap {cap} (set {MAX_DIM_ENV} to raise it)"
        )


@dataclass(frozen=True)
class TorusGrid:
    side: float = 1.0
    points_per_axis: int = 16

    def __post_init__(self):
        if self.points_per_axis < 4:
            raise LatticeError(f"torus needs at least 4 points per axis, got {self.points_per_axis}")
        if not self.side > 0:
            raise LatticeError(f"torus side must be positive, got {self.side}")

    @property
    def spacing(self) -> float:
        return self.side / self.points_per_axis

    @property
    def size(self) -> int:
        return self.points_per_axis**3

    def coordinates(self):
        """Node coordinates, shape ``(N^3, 3)``, C order over ``(x, y, z)``."""
        x = np.arange(self.points_per_axis) * self.spacing
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def index(self, ijk):
        n = self.points_per_axis
        i, j, k = (int(v) % n for v in ijk)
        return (i * n + j) * n + k

    def refined(self, factor):
        return TorusGrid(self.side, self.points_per_axis * factor)


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial grid.

    For ``boundary="dirichlet"`` the nodes are ``r_i = i h`` for ``i = 1..points-1``
    with ``h = r_max / points``.  For ``boundary="two_chart"`` ``r_max`` is the
    chart-matching radius, the inner chart has ``points`` cells of width ``h``
    and the outer chart another ``points`` cells in ``s = mu^2 / r``.
    """

    r_max: float
    points: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.boundary not in ("dirichlet", "two_chart"):
            raise LatticeError(f"unknown radial boundary {self.boundary!r}")
        if self.points < 8:
            raise LatticeError(f"radial grid needs at least 8 points, got {self.points}")
        if not self.r_max > 0:
            raise LatticeError(f"r_max must be positive, got {self.r_max}")

    @property
    def spacing(self) -> float:
        return self.r_max / self.points

    def radii(self):
        h = self.spacing
        if self.boundary == "dirichlet":
            return h * np.arange(1, self.points)
        return h * (np.arange(self.points) + 0.5)

    def refined(self, factor):
        return RadialGrid(self.r_max, self.points * factor, self.boundary)


@dataclass(eq=False)
class SpatialOperator:
    """Discretized spatial operator with its measure and provenance.

    ``matrix`` acts on nodal values; ``measure`` holds the lattice volume
    weights.  ``radii`` are physical node radii for radial operators (the
    kernel at radial nodes is ``G_phi`` after :meth:`physical_kernel`).
    """

    matrix: sp.csr_matrix
    measure: np.ndarray
    grid: TorusGrid | RadialGrid
    form: str
    xi: float = 0.0
    potential: np.ndarray | None = None
    model: ConformalFactorModel | None = None
    mass: float = 0.0
    radii: np.ndarray | None = None
    chart: np.ndarray | None = None
    recipe: dict = field(default_factory=dict)
    length_scale: float = 1.0
    translation_invariant: bool = False
    min_eigenvalue: float = float("nan")
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def spacing(self) -> float:
        return self.grid.spacing * self.length_scale

    @property
    def measure_power(self) -> int:
        return 1 if self.form == "radial_u" else 3

    @property
    def is_tridiagonal(self) -> bool:
        return self.form in ("radial_u", "two_chart", "flat_ball")

    def symmetrized(self) -> sp.csr_matrix:
        """``T = M^{1/2} A M^{-1/2}``, symmetric."""
        s = np.sqrt(self.measure)
        return (sp.diags(s) @ self.matrix @ sp.diags(1.0 / s)).tocsr()

    def tridiagonal(self):
        """Diagonal and off-diagonal of the symmetrized operator (radial forms)."""
        if "tri" not in self._cache:
            if not self.is_tridiagonal:
                raise LatticeError("tridiagonal form only exists for radial operators")
            t = self.symmetrized()
            self._cache["tri"] = (t.diagonal().copy(), t.diagonal(1).copy())
        return self._cache["tri"]

    def asymmetry(self) -> float:
        """Relative asymmetry of ``diag(M) A`` in the max norm."""
        b = sp.diags(self.measure) @ self.matrix
        diff = abs(b - b.T).max()
        return float(diff / abs(b).max())

    def physical_kernel(self, values, rows, cols):
        """Convert measure kernel entries at ``(rows, cols)`` to the 3-d field kernel."""
        values = np.asarray(values, dtype=float)
        if self.form != "radial_u":
            return values
        r = self.radii
        return values / (4.0 * np.pi * np.multiply.outer(r[rows], r[cols]))


def _finish(op: SpatialOperator, check=True) -> SpatialOperator:
    if not check:
        return op
    asym = op.asymmetry()
    if asym > 1e-12:
        raise LatticeError(f"assembled operator is not measure-symmetric (relative asymmetry {asym:.3e})")
    lam = _smallest_eigenvalue(op)
    if not lam > 0:
        raise LatticeError(f"assembled operator is not positive definite (smallest eigenvalue {lam:.6e})")
    op.min_eigenvalue = lam
    return op


def _smallest_eigenvalue(op):
    if op.is_tridiagonal:
        d, e = op.tridiagonal()
        return float(eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))[0])
    if op.translation_invariant:
        return float(op.mass**2 + (op.potential[0] if op.potential is not None else 0.0))
    t = op.symmetrized()
    if op.dim <= 1500:
        return float(np.linalg.eigvalsh(t.toarray())[0])
    from scipy.sparse.linalg import eigsh

    return float(eigsh(t, k=1, sigma=0.0, which="LM", return_eigenvectors=False)[0])


def _periodic_second_difference(n, h):
    main = np.full(n, 2.0)
    off = np.full(n - 1, -1.0)
    d2 = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    d2[0, n - 1] -= 1.0
    d2[n - 1, 0] -= 1.0
    return d2.tocsr() / h**2


def assemble_torus(grid: TorusGrid, V=None, mass: float = 0.0, check: bool = True) -> SpatialOperator:
    """``-Laplacian + V + m^2`` with the periodic 7-point stencil and uniform measure ``h^3``.

    Examples
    --------
    >>> op = assemble_torus(TorusGrid(1.0, 4), mass=1.0)
    >>> round(op.min_eigenvalue, 12)
    1.0
    """
    n, h = grid.points_per_axis, grid.spacing
    if V is None:
        V = np.zeros(grid.size)
    V = np.broadcast_to(np.asarray(V, dtype=float), (grid.size,)).copy()
    if np.any(V < 0):
        raise LatticeError("potential must be non-negative")
    if not mass >= 0:
        raise LatticeError(f"mass must be non-negative, got {mass}")
    if mass == 0 and not np.any(V > 0):
        raise LatticeError("V = 0 with m = 0 leaves a zero mode; supply a mass or a non-trivial potential")
    _guard(grid.size)
    d1 = _periodic_second_difference(n, h)
    eye = sp.identity(n, format="csr")
    lap = sp.kron(sp.kron(d1, eye), eye) + sp.kron(sp.kron(eye, d1), eye) + sp.kron(sp.kron(eye, eye), d1)
    mat = (lap + sp.diags(V + mass**2)).tocsr()
    op = SpatialOperator(
        matrix=mat,
        measure=np.full(grid.size, h**3),
        grid=grid,
        form="torus",
        potential=V,
        mass=float(mass),
        recipe={"builder": "torus", "V": V if np.ptp(V) > 0 else float(V[0]), "mass": float(mass)},
        translation_invariant=bool(np.ptp(V) == 0),
    )
    return _finish(op, check)


def _check_resolves_shell(grid, model):
    if model is None or model.potential is None:
        return
    r = grid.radii()
    inside = np.count_nonzero((r >= model.r_inner) & (r <= model.r_outer))
    if inside < MIN_SHELL_NODES:
        raise LatticeError(
            f"radial grid puts {inside} nodes in the shell [{model.r_inner}, {model.r_outer}], "
            f"need at least {MIN_SHELL_NODES}"
        )


def assemble_radial_conformal(grid: RadialGrid, model: ConformalFactorModel, xi: float,
                              check: bool = True) -> SpatialOperator:
    """s-wave operator ``Omega^{-1} (-d^2/dr^2) Omega^{-1} + (xi - 1/8) R`` on ``u = r phi``.

    Dirichlet conditions at ``r = 0`` and ``r = r_max``; the measure is ``dr``.
    """
    if grid.boundary != "dirichlet":
        raise LatticeError("conformal radial operators need a Dirichlet radial grid")
    if model.variant not in ("unit", "exp_newton", "affine_newton"):
        raise LatticeError(f"conformal assembly does not handle variant {model.variant!r}")
    _check_resolves_shell(grid, model)
    _guard(grid.points - 1)
    h = grid.spacing
    r = grid.radii()
    inv = 1.0 / model.omega(r)
    R = model.curvature(r)
    pot = (xi - 0.125) * R
    main = 2.0 * inv**2 / h**2 + pot
    off = -inv[:-1] * inv[1:] / h**2
    mat = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    op = SpatialOperator(
        matrix=mat,
        measure=np.full(r.size, h),
        grid=grid,
        form="radial_u",
        xi=float(xi),
        potential=pot,
        model=model,
        radii=r,
        recipe={"builder": "radial_conformal", "model": model, "xi": float(xi)},
    )
    return _finish(op, check)


def _quartic_chain(U, potential_fn, r_match, n_in, n_out, mu):
    """Two-chart finite-volume chain for ``-U^{-6} r^{-2} d_r(U^2 r^2 d_r) + potential``.

    Returns ``(matrix, measure, radii, chart, potential)``.
    """
    h = r_match / n_in
    faces = h * np.arange(n_in + 1)
    centres = h * (np.arange(n_in) + 0.5)
    m_in = 4.0 * np.pi * U(centres) ** 6 * (faces[1:] ** 3 - faces[:-1] ** 3) / 3.0
    k_in = 4.0 * np.pi * U(faces[1:n_in]) ** 2 * faces[1:n_in] ** 2 / h

    s_match = mu**2 / r_match
    hs = s_match / n_out
    sf = hs * np.arange(n_out + 1)
    sc = hs * (np.arange(n_out) + 0.5)
    m_out = 4.0 * np.pi * (sf[1:] ** 3 - sf[:-1] ** 3) / 3.0
    k_out = 4.0 * np.pi * sf[1:n_out] ** 2 / hs

    U_match = float(U(np.array(r_match)))
    # series conductance of the two half cells meeting at the chart boundary
    k_match = 4.0 * np.pi * s_match**2 / (U_match**2 * h / 2.0 + hs / 2.0)

    measure = np.concatenate([m_in, m_out[::-1]])
    kf = np.concatenate([k_in, [k_match], k_out[::-1]])
    n = measure.size
    stiff_diag = np.zeros(n)
    stiff_diag[:-1] += kf
    stiff_diag[1:] += kf
    pot = np.concatenate([potential_fn(centres), np.zeros(n_out)])
    main = stiff_diag / measure + pot
    upper = -kf / measure[:-1]
    lower = -kf / measure[1:]
    mat = sp.diags([lower, main, upper], [-1, 0, 1], format="csr")
    radii = np.concatenate([centres, (mu**2 / sc)[::-1]])
    chart = np.concatenate([np.zeros(n_in, int), np.ones(n_out, int)])
    return mat, measure, radii, chart, pot


def assemble_radial_quartic(grid: RadialGrid, potential: ShellPotential, xi: float,
                            check: bool = True) -> SpatialOperator:
    """``-Delta_h + xi R`` for ``h = U^4 delta`` compactified by the chart ``s = mu^2 / r``.

    ``grid.r_max`` is the matching radius (it must exceed the shell).  The
    operator is symmetric with respect to the measure ``4 pi U^6 r^2 dr`` on
    the inner chart and ``4 pi s^2 ds`` on the outer chart.
    """
    if grid.boundary != "two_chart":
        raise LatticeError("the compact quartic model needs a two_chart radial grid")
    if not 0.0 < xi <= 1.0 / 6.0:
        if xi == 0:
            raise LatticeError("xi = 0 leaves a zero mode on the compact manifold; need xi in (0, 1/6]")
        raise LatticeError(f"xi must lie in (0, 1/6], got {xi}")
    if grid.r_max <= potential.density.r_outer:
        raise LatticeError("the matching radius must lie outside the shell")
    model = ConformalFactorModel("quartic_shell", potential)
    _check_resolves_shell(grid, model)
    _guard(2 * grid.points)
    mat, measure, radii, chart, pot = _quartic_chain(
        potential.eval, lambda r: xi * model.curvature(r), grid.r_max, grid.points, grid.points, potential.mu
    )
    op = SpatialOperator(
        matrix=mat,
        measure=measure,
        grid=grid,
        form="two_chart",
        xi=float(xi),
        potential=pot,
        model=model,
        radii=radii,
        chart=chart,
        recipe={"builder": "radial_quartic", "potential": potential, "xi": float(xi)},
    )
    return _finish(op, check)


def _flat_ball(nu, h, radius, xi):
    n = int(round(radius / h))
    faces = h * np.arange(n + 1)
    centres = h * (np.arange(n) + 0.5)
    measure = 4.0 * np.pi * nu**6 * (faces[1:] ** 3 - faces[:-1] ** 3) / 3.0
    cf = 4.0 * np.pi * nu**2 * faces**2 / h
    kf = cf[1:n]
    diag = np.zeros(n)
    diag[:-1] += kf
    diag[1:] += kf
    diag[-1] += 2.0 * cf[n]  # Dirichlet wall at the outer face
    main = diag / measure
    mat = sp.diags([-kf / measure[1:], main, -kf / measure[:-1]], [-1, 0, 1], format="csr")
    return mat, measure, centres


def flat_reference(op: SpatialOperator, radius: float | None = None, check: bool = True) -> SpatialOperator:
    """Flat operator that coincides with ``op`` near the origin of a radial model.

    For ``radial_u`` this is ``-d^2/dr^2`` on the same grid.  For ``two_chart`` it
    is the flat metric ``nu^4 delta`` on a Dirichlet ball of coordinate radius
    ``radius`` (default ``50 r_match``) with the inner-chart spacing.
    """
    if op.form == "radial_u":
        ref = assemble_radial_conformal(op.grid, ConformalFactorModel("unit"), op.xi, check=check)
        return rescale_metric(ref, op.length_scale) if op.length_scale != 1.0 else ref
    if op.form != "two_chart":
        raise LatticeError("flat references exist for radial operators only")
    nu = op.model.potential.nu
    radius = 50.0 * op.grid.r_max if radius is None else float(radius)
    h = op.grid.spacing
    _guard(int(round(radius / h)))
    mat, measure, centres = _flat_ball(nu, h, radius, op.xi)
    ref = SpatialOperator(
        matrix=mat,
        measure=measure,
        grid=RadialGrid(radius, int(round(radius / h)), "dirichlet"),
        form="flat_ball",
        xi=op.xi,
        potential=np.zeros(centres.size),
        model=ConformalFactorModel("unit"),
        radii=centres,
        recipe={"builder": "flat_ball", "nu": nu, "radius": radius, "xi": op.xi},
    )
    _finish(ref, check)
    return rescale_metric(ref, op.length_scale) if op.length_scale != 1.0 else ref


def _rebuild(recipe, grid, check):
    kind = recipe["builder"]
    if kind == "torus":
        return assemble_torus(grid, recipe["V"], recipe["mass"], check=check)
    if kind == "radial_conformal":
        return assemble_radial_conformal(grid, recipe["model"], recipe["xi"], check=check)
    if kind == "radial_quartic":
        return assemble_radial_quartic(grid, recipe["potential"], recipe["xi"], check=check)
    raise LatticeError(f"operator built by {kind!r} cannot be refined")


def refine(op: SpatialOperator, factor: int, check: bool = True) -> SpatialOperator:
    """Rebuild ``op`` on a grid with ``factor`` times as many points per axis.

    A potential given as per-node samples cannot be transferred, so torus
    operators are refinable only with a constant potential.
    """
    if int(factor) != factor or factor < 2:
        raise LatticeError(f"refinement factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    if op.form == "flat_ball":
        r = op.recipe
        _guard(op.dim * factor)
        mat, measure, centres = _flat_ball(r["nu"], op.grid.spacing / factor, r["radius"], r["xi"])
        new = SpatialOperator(mat, measure, op.grid.refined(factor), "flat_ball", op.xi,
                              np.zeros(centres.size), op.model, radii=centres, recipe=dict(r))
        new = _finish(new, check)
    else:
        if op.form == "torus" and isinstance(op.recipe.get("V"), np.ndarray):
            raise LatticeError("cannot refine a torus operator with a sampled non-constant potential")
        new_dim = op.dim * factor ** (3 if op.form == "torus" else 1)
        _guard(new_dim)
        new = _rebuild(op.recipe, op.grid.refined(factor), check)
    return rescale_metric(new, op.length_scale) if op.length_scale != 1.0 else new


def rescale_metric(op: SpatialOperator, c: float) -> SpatialOperator:
    """Operator for the spatial metric scaled by ``c^2`` (all lengths times ``c``).

    The matrix scales as ``c^-2`` and the measure as ``c^3`` (``c`` for the
    ``dr`` measure of the ``u`` form); eigenfunctions and kernels follow.
    """
    if not c > 0:
        raise LatticeError(f"scale factor must be positive, got {c}")
    c = float(c)
    return replace(
        op,
        matrix=(op.matrix / c**2).tocsr(),
        measure=op.measure * c**op.measure_power,
        potential=None if op.potential is None else op.potential / c**2,
        radii=None if op.radii is None else op.radii * c,
        length_scale=op.length_scale * c,
        min_eigenvalue=op.min_eigenvalue / c**2,
        mass=op.mass / c,
        _cache={},
    )


def dump_triplets(op: SpatialOperator, path) -> None:
    """Write ``(row, col, value)`` triplets of ``op.matrix`` and the measure as text."""
    coo = op.matrix.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# dim {op.dim} form {op.form} xi {op.xi!r}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
        fh.write("# measure\n")
        for i, m in enumerate(op.measure):
            fh.write(f"{i} {m:.17g}\n")


def assemble_euclidean(op: SpatialOperator, beta: float, tau_points: int) -> sp.csc_matrix:
    """Operator ``-d_tau^2 + A`` on the periodic product ``S^1_beta x (spatial lattice)``.

    The circle carries the periodic second difference with spacing
    ``beta / tau_points``; the spatial factor is ``op.matrix``.  Nodes are ordered
    with the time index slowest, so the first ``op.dim`` rows sit at ``tau = 0``.
    """
    if tau_points < 4:
        raise LatticeError(f"need at least 4 points on the time circle, got {tau_points}")
    if not beta > 0:
        raise LatticeError(f"beta must be positive, got {beta}")
    _guard(op.dim * tau_points)
    a = beta / tau_points
    d_tau = _periodic_second_difference(tau_points, a)
    mat = sp.kron(d_tau, sp.identity(op.dim)) + sp.kron(sp.identity(tau_points), op.matrix)
    return mat.tocsc()
