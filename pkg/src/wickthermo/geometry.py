"""Shell densities, Newtonian shell potentials and conformally flat geometries.

All radial profiles are spherically symmetric functions of the coordinate
radius ``r``.  Densities are supported in a shell ``[r_inner, r_outer]`` away
from the origin, so every geometry built here is exactly flat near ``r = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "ShellDensity",
    "ShellPotential",
    "ConformalFactorModel",
    "CurvatureField",
    "VARIANTS",
    "shell_moments",
    "shell_potential_eval",
    "curvature_log_conformal",
    "curvature_affine_conformal",
    "curvature_quartic",
    "curvature_fd_log_form",
    "curvature_fd_omega_form",
    "curvature_fd_quartic",
    "radial_laplacian_fd",
    "riemann_tensor_fd",
    "ricci_scalar_fd",
    "conformal_metric",
    "GeometryError",
]

VARIANTS = ("unit", "exp_newton", "affine_newton", "quartic_shell")
PROFILES = ("uniform", "smooth")

# Gauss-Legendre rule for the smooth-bump radial integrals.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(96)


class GeometryError(ValueError):
    pass


def _bump(s):
    """C-infinity bump exp(1 - 1/(1 - s^2)) on |s| < 1, peak value 1."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class ShellDensity:
    """Non-negative spherically symmetric density supported in a shell.

    ``profile="uniform"`` is a constant ``amplitude`` on ``[r_inner, r_outer]``
    (closed-form moments, only C^0).  ``profile="smooth"`` is a C-infinity bump
    with peak ``amplitude`` centred in the shell.
    """

    r_inner: float
    r_outer: float
    amplitude: float
    profile: str = "uniform"

    def __post_init__(self):
        if not self.r_inner > 0:
            raise GeometryError(f"r_inner must be > 0, got {self.r_inner}")
        if not self.r_outer > self.r_inner:
            raise GeometryError(
                f"r_outer must exceed r_inner, got [{self.r_inner}, {self.r_outer}]"
            )
        if not self.amplitude > 0:
            raise GeometryError(f"amplitude must be > 0, got {self.amplitude}")
        if self.profile not in PROFILES:
            raise GeometryError(f"unknown density profile {self.profile!r}")

    @classmethod
    def with_mass(cls, r_inner, r_outer, mass, profile="uniform"):
        """Density whose total mass ``mu`` equals ``mass``."""
        unit = cls(r_inner, r_outer, 1.0, profile)
        mu, _ = shell_moments(unit)
        return cls(r_inner, r_outer, mass / mu, profile)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.profile == "uniform":
            return np.where((r >= self.r_inner) & (r <= self.r_outer), self.amplitude, 0.0)
        centre = 0.5 * (self.r_inner + self.r_outer)
        half = 0.5 * (self.r_outer - self.r_inner)
        return self.amplitude * _bump((r - centre) / half)

    def _integrate(self, weight, lo, hi):
        # int_lo^hi weight(s) rho(s) ds, vectorised over lo/hi
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        mid = 0.5 * (hi + lo)
        half = 0.5 * (hi - lo)
        s = mid[..., None] + half[..., None] * _GL_X
        return half * np.sum(weight(s) * self(s) * _GL_W, axis=-1)

    def enclosed_mass(self, r):
        """``M(r) = int_{|x|<r} rho``."""
        r = np.asarray(r, dtype=float)
        c = np.clip(r, self.r_inner, self.r_outer)
        if self.profile == "uniform":
            return 4.0 * np.pi / 3.0 * self.amplitude * (c**3 - self.r_inner**3)
        return self._integrate(lambda s: 4.0 * np.pi * s**2, np.full_like(c, self.r_inner), c)

    def outer_potential(self, r):
        """``P(r) = int_{|x|>r} rho/|x|``."""
        r = np.asarray(r, dtype=float)
        c = np.clip(r, self.r_inner, self.r_outer)
        if self.profile == "uniform":
            return 2.0 * np.pi * self.amplitude * (self.r_outer**2 - c**2)
        return self._integrate(lambda s: 4.0 * np.pi * s, c, np.full_like(c, self.r_outer))


def shell_moments(density: ShellDensity) -> tuple[float, float]:
    """Return ``(mu, nu)``: the total mass and the potential value at the origin."""
    mu = float(density.enclosed_mass(np.array(density.r_outer)))
    nu = float(density.outer_potential(np.array(0.0)))
    if not (mu > 0 and nu > 0 and nu > mu / density.r_outer):
        raise GeometryError(f"degenerate shell moments mu={mu}, nu={nu}")
    return mu, nu


@dataclass(frozen=True)
class ShellPotential:
    """Newtonian potential ``U`` of a shell density, ``-Laplacian U = 4 pi rho``.

    ``U`` equals ``nu`` inside the shell and ``mu / r`` outside it.
    """

    density: ShellDensity
    mu: float = field(init=False)
    nu: float = field(init=False)

    def __post_init__(self):
        mu, nu = shell_moments(self.density)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)

    def __call__(self, r):
        return self.eval(r)

    def eval(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise GeometryError("radius must be non-negative")
        d = self.density
        with np.errstate(divide="ignore", invalid="ignore"):
            val = d.enclosed_mass(r) / r + d.outer_potential(r)
        val = np.where(r <= d.r_inner, self.nu, val)
        return np.where(r >= d.r_outer, self.mu / np.where(r > 0, r, 1.0), val)

    def derivative(self, r):
        """``dU/dr = -M(r) / r^2``."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -self.density.enclosed_mass(r) / r**2
        return np.where(r <= self.density.r_inner, 0.0, val)

    def laplacian(self, r):
        return -4.0 * np.pi * self.density(r)


def shell_potential_eval(potential: ShellPotential, r):
    return potential.eval(r)


@dataclass(frozen=True)
class ConformalFactorModel:
    """Conformally flat spatial metric ``h = Omega^2 delta`` built from a shell potential.

    Variants
    --------
    unit           Omega = 1
    exp_newton     Omega = exp(nu - U)            (Omega >= 1, R <= 0)
    affine_newton  Omega = 1/2 + U / (2 nu)       (1/2 <= Omega <= 1, R >= 0)
    quartic_shell  h = U^4 delta, i.e. Omega = U^2 (R = 32 pi U^-5 rho >= 0)
    """

    variant: str
    potential: ShellPotential | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise GeometryError(f"unknown conformal variant {self.variant!r}")
        if self.variant != "unit" and self.potential is None:
            raise GeometryError(f"variant {self.variant!r} needs a shell potential")

    @property
    def r_inner(self):
        return np.inf if self.potential is None else self.potential.density.r_inner

    @property
    def r_outer(self):
        return np.inf if self.potential is None else self.potential.density.r_outer

    def omega(self, r):
        r = np.asarray(r, dtype=float)
        if self.variant == "unit":
            return np.ones_like(r)
        U, nu = self.potential.eval(r), self.potential.nu
        if self.variant == "exp_newton":
            return np.exp(nu - U)
        if self.variant == "affine_newton":
            return 0.5 + U / (2.0 * nu)
        return U**2

    def omega_derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.variant == "unit":
            return np.zeros_like(r)
        dU = self.potential.derivative(r)
        if self.variant == "exp_newton":
            return -self.omega(r) * dU
        if self.variant == "affine_newton":
            return dU / (2.0 * self.potential.nu)
        return 2.0 * self.potential.eval(r) * dU

    def curvature(self, r):
        """Closed-form scalar curvature of ``h`` at coordinate radius ``r``."""
        r = np.asarray(r, dtype=float)
        if self.variant == "unit":
            return np.zeros_like(r)
        pot = self.potential
        rho = pot.density(r)
        dU = pot.derivative(r)
        om = self.omega(r)
        if self.variant == "exp_newton":
            # Laplacian(ln Omega) = 4 pi rho, grad ln Omega = -grad U
            return -(16.0 * np.pi * rho + 2.0 * dU**2) / om**2
        if self.variant == "affine_newton":
            lap_om = -2.0 * np.pi * rho / pot.nu
            d_om = dU / (2.0 * pot.nu)
            return -4.0 * lap_om / om**3 + 2.0 * d_om**2 / om**4
        return 32.0 * np.pi * rho / pot.eval(r) ** 5


@dataclass(frozen=True)
class CurvatureField:
    r: np.ndarray
    samples: np.ndarray
    flat_region: np.ndarray
    variant: str = ""

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.r, self.samples]), delimiter=",",
                   header="r,R", comments="", fmt="%.17g")


def _grid_radii(grid):
    if hasattr(grid, "radii"):
        return np.asarray(grid.radii(), dtype=float)
    return np.asarray(grid, dtype=float)


def _curvature_field(model, grid, min_shell_points):
    r = _grid_radii(grid)
    if r.ndim != 1 or r.size < 2:
        raise GeometryError("radial grid must be a 1-d array of at least two radii")
    r_in, r_out = model.r_inner, model.r_outer
    n_shell = int(np.count_nonzero((r >= r_in) & (r <= r_out)))
    if model.variant != "unit" and n_shell < min_shell_points:
        raise GeometryError(
            f"grid does not resolve the shell: {n_shell} points in [{r_in}, {r_out}], "
            f"need {min_shell_points}"
        )
    h = float(np.max(np.diff(np.sort(r))))
    flat = r < r_in - 2.0 * h
    if model.variant == "quartic_shell":
        flat |= r > r_out + 2.0 * h
    if model.variant == "unit":
        flat = np.ones_like(r, dtype=bool)
    return CurvatureField(r, model.curvature(r), np.flatnonzero(flat), model.variant)


def _require(model, variant):
    if model.variant != variant and model.variant != "unit":
        raise GeometryError(f"expected a {variant} model, got {model.variant}")


def curvature_log_conformal(model, grid, min_shell_points=16):
    """Curvature of the ``exp_newton`` family from the log-form expression."""
    _require(model, "exp_newton")
    return _curvature_field(model, grid, min_shell_points)


def curvature_affine_conformal(model, grid, min_shell_points=16):
    _require(model, "affine_newton")
    return _curvature_field(model, grid, min_shell_points)


def curvature_quartic(model, grid, min_shell_points=16):
    _require(model, "quartic_shell")
    return _curvature_field(model, grid, min_shell_points)


# ---------------------------------------------------------------------------
# finite-difference oracles


def radial_laplacian_fd(f, r, step):
    """Flat Laplacian ``f'' + 2 f'/r`` of a radial function by centred differences."""
    r = np.asarray(r, dtype=float)
    fp, f0, fm = f(r + step), f(r), f(r - step)
    return (fp - 2.0 * f0 + fm) / step**2 + (fp - fm) / (step * r)


def _radial_gradient_fd(f, r, step):
    return (f(np.asarray(r) + step) - f(np.asarray(r) - step)) / (2.0 * step)


def curvature_fd_log_form(omega, r, step):
    """``R = -4 Om^-2 Lap(ln Om) - 2 Om^-2 |grad ln Om|^2`` with numerical derivatives."""
    log_om = lambda x: np.log(omega(x))  # noqa: E731
    om = omega(np.asarray(r, dtype=float))
    lap = radial_laplacian_fd(log_om, r, step)
    grad = _radial_gradient_fd(log_om, r, step)
    return (-4.0 * lap - 2.0 * grad**2) / om**2


def curvature_fd_omega_form(omega, r, step):
    """``R = -4 Om^-3 Lap(Om) + 2 Om^-4 |grad Om|^2`` with numerical derivatives."""
    om = omega(np.asarray(r, dtype=float))
    lap = radial_laplacian_fd(omega, r, step)
    grad = _radial_gradient_fd(omega, r, step)
    return -4.0 * lap / om**3 + 2.0 * grad**2 / om**4


def curvature_fd_quartic(potential, r, step):
    """``R = -8 U^-5 Lap(U)`` for the metric ``U^4 delta``."""
    return -8.0 * radial_laplacian_fd(potential.eval, r, step) / potential.eval(r) ** 5


def _christoffel(metric, x, step):
    dim = len(x)
    dg = np.empty((dim, dim, dim))  # dg[c, a, b] = d_c g_ab
    for c in range(dim):
        e = np.zeros(dim)
        e[c] = step
        dg[c] = (metric(x + e) - metric(x - e)) / (2.0 * step)
    ginv = np.linalg.inv(metric(x))
    # Gamma^a_bc = 1/2 g^ad (d_b g_dc + d_c g_db - d_d g_bc)
    lower = 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cdb->dbc", dg) - dg)
    return np.einsum("ad,dbc->abc", ginv, lower)


def riemann_tensor_fd(metric, x, step=1e-3):
    """Riemann tensor ``R^a_{bcd}`` of a metric field by nested centred differences.

    ``metric`` maps a coordinate vector to the matrix ``g_ij``.  The result has
    truncation error O(step^2) plus roundoff O(eps / step^2).
    """
    x = np.asarray(x, dtype=float)
    dim = len(x)
    gam = _christoffel(metric, x, step)
    dgam = np.empty((dim,) * 4)  # dgam[c, a, b, d] = d_c Gamma^a_bd
    for c in range(dim):
        e = np.zeros(dim)
        e[c] = step
        dgam[c] = (_christoffel(metric, x + e, step) - _christoffel(metric, x - e, step)) / (2.0 * step)
    riem = (
        np.einsum("cadb->abcd", dgam)
        - np.einsum("dacb->abcd", dgam)
        + np.einsum("ace,edb->abcd", gam, gam)
        - np.einsum("ade,ecb->abcd", gam, gam)
    )
    return riem


def ricci_scalar_fd(metric, x, step=1e-3):
    riem = riemann_tensor_fd(metric, x, step)
    ricci = np.einsum("abad->bd", riem)
    return float(np.einsum("bd,bd->", np.linalg.inv(metric(np.asarray(x, float))), ricci))


def conformal_metric(model: ConformalFactorModel):
    """Cartesian metric function ``x -> Omega(|x|)^2 * I`` for use with the FD oracles."""

    def metric(x):
        r = float(np.linalg.norm(x))
        return float(model.omega(np.array(r))) ** 2 * np.eye(len(x))

    return metric
