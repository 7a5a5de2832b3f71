import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigvalsh_tridiagonal

from wickthermo.geometry import ConformalFactorModel, ShellDensity, ShellPotential
from wickthermo.lattice import (
    LatticeError,
    RadialGrid,
    ResourceLimitError,
    TorusGrid,
    assemble_euclidean,
    assemble_radial_conformal,
    assemble_radial_quartic,
    assemble_torus,
    dump_triplets,
    flat_reference,
    max_dimension,
    refine,
    rescale_metric,
)


@pytest.fixture(scope="module")
def potential():
    return ShellPotential(ShellDensity.with_mass(1.0, 2.0, 1.0, "smooth"))


def lowest(op, k):
    d, e = op.tridiagonal()
    return eigvalsh_tridiagonal(d, e, select="i", select_range=(0, k - 1))


def fourier_oracle(n, side, mass):
    h = side / n
    s = (2.0 / h) ** 2 * np.sin(np.pi * np.arange(n) / n) ** 2
    return np.sort((mass**2 + s[:, None, None] + s[None, :, None] + s[None, None, :]).ravel())


class TestTorus:
    def test_constant_mode_is_mass_squared(self):
        op = assemble_torus(TorusGrid(1.0, 4), mass=1.0)
        assert op.min_eigenvalue == pytest.approx(1.0, abs=1e-14)
        lam = np.linalg.eigvalsh(op.symmetrized().toarray())
        assert lam[0] == pytest.approx(1.0, abs=1e-12)

    def test_fourier_spectrum(self):
        op = assemble_torus(TorusGrid(1.0, 8), mass=1.0)
        lam = np.linalg.eigvalsh(op.symmetrized().toarray())
        assert np.allclose(lam, fourier_oracle(8, 1.0, 1.0), rtol=1e-12, atol=1e-10)

    def test_zero_mode_rejected(self):
        with pytest.raises(LatticeError, match="zero mode"):
            assemble_torus(TorusGrid(1.0, 4), mass=0.0)

    def test_negative_potential_rejected(self):
        with pytest.raises(LatticeError):
            assemble_torus(TorusGrid(1.0, 4), V=-np.ones(64), mass=1.0)

    def test_total_measure_refinement_invariant(self):
        op = assemble_torus(TorusGrid(2.0, 4), mass=1.0)
        fine = refine(op, 2)
        assert op.measure.sum() == pytest.approx(8.0, rel=1e-14)
        assert fine.measure.sum() == pytest.approx(op.measure.sum(), rel=1e-12)

    def test_sampled_potential_not_refinable(self):
        rng = np.random.default_rng(0)
        op = assemble_torus(TorusGrid(1.0, 4), V=rng.uniform(0, 1, 64), mass=1.0)
        with pytest.raises(LatticeError):
            refine(op, 2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_potential_ordering_transfers_to_forms(self, seed):
        rng = np.random.default_rng(seed)
        grid = TorusGrid(1.0, 4)
        v1 = rng.uniform(0, 5, grid.size)
        v2 = v1 + rng.uniform(0, 5, grid.size) * (rng.random(grid.size) < 0.3)
        a1 = assemble_torus(grid, v1, 0.5)
        a2 = assemble_torus(grid, v2, 0.5)
        for op in (a1, a2):
            assert op.asymmetry() <= 1e-12
            assert op.min_eigenvalue > 0
        diff = (sp.diags(a2.measure) @ (a2.matrix - a1.matrix)).toarray()
        assert np.linalg.eigvalsh(diff)[0] >= -1e-12


class TestRadialConformal:
    def test_flat_dirichlet_spectrum(self):
        op = assemble_radial_conformal(RadialGrid(10.0, 400), ConformalFactorModel("unit"), 0.0)
        k = np.arange(1, 6)
        exact = (k * np.pi / 10.0) ** 2
        lam = lowest(op, 5)
        assert np.allclose(lam, exact, rtol=1e-3)

    def test_second_order_refinement(self):
        op = assemble_radial_conformal(RadialGrid(10.0, 100), ConformalFactorModel("unit"), 0.0)
        exact = (np.arange(1, 6) * np.pi / 10.0) ** 2
        errs = [np.max(np.abs(lowest(o, 5) - exact) / exact) for o in (op, refine(op, 2))]
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)

    def test_refine_factor_one_rejected(self):
        op = assemble_radial_conformal(RadialGrid(10.0, 100), ConformalFactorModel("unit"), 0.0)
        with pytest.raises(LatticeError):
            refine(op, 1)

    def test_exp_newton_form_exceeds_conformal_part(self, potential):
        # A(xi) - A(1/8) = (xi - 1/8) R; R <= 0 here so the xi = 0 difference is PSD
        grid = RadialGrid(20.0, 1000)
        model = ConformalFactorModel("exp_newton", potential)
        a0 = assemble_radial_conformal(grid, model, 0.0)
        a8 = assemble_radial_conformal(grid, model, 0.125)
        diff = (sp.diags(a0.measure) @ (a0.matrix - a8.matrix)).diagonal()
        assert np.all(diff >= 0) and np.any(diff > 0)
        off = sp.diags(a0.measure) @ (a0.matrix - a8.matrix)
        assert abs(off - sp.diags(off.diagonal())).max() == 0

    def test_affine_newton_form_below_conformal_part(self, potential):
        grid = RadialGrid(20.0, 1000)
        model = ConformalFactorModel("affine_newton", potential)
        a0 = assemble_radial_conformal(grid, model, 0.0)
        a8 = assemble_radial_conformal(grid, model, 0.125)
        diff = (sp.diags(a0.measure) @ (a0.matrix - a8.matrix)).diagonal()
        assert np.all(diff <= 0) and np.any(diff < 0)

    def test_unresolved_shell_rejected(self, potential):
        with pytest.raises(LatticeError):
            assemble_radial_conformal(RadialGrid(80.0, 100), ConformalFactorModel("exp_newton", potential), 0.0)

    def test_quartic_variant_rejected(self, potential):
        with pytest.raises(LatticeError):
            assemble_radial_conformal(RadialGrid(20.0, 1000), ConformalFactorModel("quartic_shell", potential), 0.1)

    def test_physical_kernel_divides_by_radii(self):
        op = assemble_radial_conformal(RadialGrid(10.0, 100), ConformalFactorModel("unit"), 0.0)
        val = op.physical_kernel(np.ones((1, 1)), np.array([9]), np.array([19]))
        assert val[0, 0] == pytest.approx(1.0 / (4 * np.pi * 1.0 * 2.0), rel=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.5, 2.0), st.floats(0.5, 2.0), st.floats(0.1, 3.0),
           st.sampled_from(["exp_newton", "affine_newton"]), st.floats(0.0, 0.125))
    def test_symmetric_and_positive(self, r_in, width, mass, variant, xi):
        pot = ShellPotential(ShellDensity.with_mass(r_in, r_in + width, mass, "smooth"))
        op = assemble_radial_conformal(RadialGrid(20 * (r_in + width), 2000),
                                       ConformalFactorModel(variant, pot), xi)
        assert op.asymmetry() <= 1e-12
        assert op.min_eigenvalue > 0


class TestQuartic:
    def test_smallest_eigenvalue_positive(self, potential):
        op = assemble_radial_quartic(RadialGrid(4.0, 400, "two_chart"), potential, 0.05)
        assert op.min_eigenvalue > 0
        assert op.asymmetry() <= 1e-12

    def test_second_order_refinement(self, potential):
        op = assemble_radial_quartic(RadialGrid(4.0, 200, "two_chart"), potential, 0.05)
        lam = [lowest(o, 5) for o in (op, refine(op, 2), refine(op, 4))]
        ratio = np.abs(lam[0] - lam[1]) / np.abs(lam[1] - lam[2])
        assert np.all((ratio > 3.6) & (ratio < 4.4))

    @pytest.mark.parametrize("xi", [0.0, -0.1, 0.2])
    def test_coupling_range(self, potential, xi):
        with pytest.raises(LatticeError):
            assemble_radial_quartic(RadialGrid(4.0, 400, "two_chart"), potential, xi)

    def test_matching_radius_outside_shell(self, potential):
        with pytest.raises(LatticeError):
            assemble_radial_quartic(RadialGrid(1.5, 400, "two_chart"), potential, 0.05)

    def test_flat_reference_is_flat_ball(self, potential):
        op = assemble_radial_quartic(RadialGrid(4.0, 400, "two_chart"), potential, 0.05)
        ref = flat_reference(op, radius=10.0)
        nu = potential.nu
        exact = (np.arange(1, 4) * np.pi / 10.0) ** 2 / nu**4
        assert np.allclose(lowest(ref, 3), exact, rtol=1e-4)
        assert np.allclose(ref.radii[:5], op.radii[:5], rtol=1e-14)
        assert np.allclose(ref.measure[:5], op.measure[:5], rtol=1e-12)

    def test_total_measure_approximates_volume(self, potential):
        # inner chart measure is exact for the flat part: 4 pi nu^6 r^3 / 3
        op = assemble_radial_quartic(RadialGrid(4.0, 400, "two_chart"), potential, 0.05)
        inner = op.radii < 0.9
        r_edge = 0.01 * np.count_nonzero(inner)
        assert op.measure[inner].sum() == pytest.approx(4 * np.pi * potential.nu**6 * r_edge**3 / 3, rel=1e-12)


class TestScalingAndIO:
    @pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
    def test_rescale_scales_spectrum(self, c):
        op = assemble_radial_conformal(RadialGrid(10.0, 200), ConformalFactorModel("unit"), 0.0)
        sc = rescale_metric(op, c)
        assert np.allclose(lowest(sc, 4), lowest(op, 4) / c**2, rtol=1e-12)
        assert np.allclose(sc.radii, c * op.radii)

    def test_rescale_rejects_nonpositive(self):
        op = assemble_torus(TorusGrid(1.0, 4), mass=1.0)
        with pytest.raises(LatticeError):
            rescale_metric(op, 0.0)

    def test_dimension_cap(self, monkeypatch):
        monkeypatch.setenv("WICKTHERMO_MAX_DIM", "100")
        assert max_dimension() == 100
        with pytest.raises(ResourceLimitError):
            assemble_torus(TorusGrid(1.0, 8), mass=1.0)

    def test_dump_triplets(self, tmp_path):
        op = assemble_torus(TorusGrid(1.0, 4), mass=1.0)
        path = tmp_path / "a.txt"
        dump_triplets(op, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# dim 64")
        assert len(lines) == 1 + op.matrix.nnz + 1 + 64

    def test_euclidean_product_spectrum(self):
        op = assemble_torus(TorusGrid(1.0, 4), mass=1.0)
        A4 = assemble_euclidean(op, 2.0, 8)
        assert A4.shape == (512, 512)
        sym = (sp.diags(np.tile(np.sqrt(op.measure), 8)) @ A4 @ sp.diags(np.tile(1 / np.sqrt(op.measure), 8)))
        lam = np.linalg.eigvalsh(sym.toarray())
        assert lam[0] == pytest.approx(1.0, abs=1e-12)

    def test_euclidean_needs_resolution(self):
        op = assemble_torus(TorusGrid(1.0, 4), mass=1.0)
        with pytest.raises(LatticeError):
            assemble_euclidean(op, 1.0, 2)
