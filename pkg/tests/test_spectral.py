import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wickthermo.geometry import ConformalFactorModel, ShellDensity, ShellPotential
from wickthermo.lattice import (
    RadialGrid,
    TorusGrid,
    assemble_radial_conformal,
    assemble_radial_quartic,
    assemble_torus,
)
from wickthermo.spectral import (
    SpectralError,
    bose_factor,
    decompose,
    decompose_matrix,
    excess_kernel,
    excess_weights,
    ground_kernel,
    ground_kernel_columns,
    matsubara_sum,
    thermal_kernel,
)


def single_mode(lam, measure=1.0):
    return decompose_matrix(np.array([[lam]]), np.array([measure]))


@pytest.fixture(scope="module")
def torus8():
    op = assemble_torus(TorusGrid(1.0, 8), mass=1.0)
    return op, decompose(op, method="dense")


@pytest.fixture(scope="module")
def radial_op():
    pot = ShellPotential(ShellDensity.with_mass(1.0, 2.0, 1.0, "smooth"))
    return assemble_radial_conformal(RadialGrid(20.0, 600), ConformalFactorModel("exp_newton", pot), 0.0)


class TestBoseFactor:
    @pytest.mark.parametrize("beta, k, expected", [
        (1.0, np.log(2.0), 1.0),
        (2.0, np.log(2.0), 1.0 / 3.0),
    ])
    def test_closed_values(self, beta, k, expected):
        assert bose_factor(beta, k) == pytest.approx(expected, rel=1e-15)

    def test_small_argument_laurent(self):
        k = 1e-8
        assert bose_factor(1.0, k) == pytest.approx(1 / k - 0.5 + k / 12, rel=1e-12)

    def test_switch_is_continuous(self):
        x = np.array([1e-5 * (1 - 1e-9), 1e-5 * (1 + 1e-9)])
        f = bose_factor(1.0, x)
        assert f[0] == pytest.approx(f[1], rel=1e-8)

    def test_large_argument_no_overflow(self):
        assert bose_factor(1.0, 800.0) == pytest.approx(np.exp(-800.0), rel=1e-12)
        assert np.isfinite(bose_factor(1.0, 1e5))

    @pytest.mark.parametrize("beta, k", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
    def test_domain(self, beta, k):
        with pytest.raises(ValueError):
            bose_factor(beta, k)

    def test_gibbs_occupation_oracle(self):
        # mean occupation of a thermal oscillator summed over number states
        beta, k = 0.7, 1.3
        n = np.arange(0, 400)
        p = np.exp(-beta * k * n)
        assert bose_factor(beta, k) == pytest.approx(np.sum(n * p) / np.sum(p), rel=1e-13)


class TestDecomposition:
    def test_one_by_one(self):
        dec = single_mode(4.0, measure=0.25)
        assert dec.eigenvalues[0] == 4.0
        assert dec.eigenfunctions[0, 0] ** 2 * 0.25 == pytest.approx(1.0, rel=1e-15)

    def test_torus_matches_fourier(self, torus8):
        op, dec = torus8
        fourier = decompose(op, method="fourier")
        assert np.allclose(np.sort(fourier.eigenvalues.ravel()), dec.eigenvalues, rtol=1e-12)
        assert dec.residual_scaled <= 1e-10
        assert dec.orthonormality <= 1e-10

    def test_reconstruction(self, torus8):
        op, dec = torus8
        t = op.symmetrized().toarray()
        s = np.sqrt(op.measure)
        q = dec.eigenfunctions * s[:, None]
        rec = (q * dec.eigenvalues) @ q.T
        assert np.linalg.norm(t - rec) / np.linalg.norm(t) <= 1e-10

    def test_fourier_and_dense_kernels_agree(self, torus8):
        op, dec = torus8
        fourier = decompose(op, method="fourier")
        cols = [0, 17, 300]
        a = thermal_kernel(dec, 1.5).columns(cols)
        b = thermal_kernel(fourier, 1.5).columns(cols)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_cut_tridiagonal_matches_full(self, radial_op):
        full = decompose(radial_op)
        cut = decompose(radial_op, max_eigenvalue=50.0)
        m = cut.eigenvalues.size
        assert not cut.complete and m > 0
        assert np.allclose(cut.eigenvalues, full.eigenvalues[:m], rtol=1e-12, atol=1e-12)
        signs = np.sign(np.sum(cut.eigenfunctions * full.eigenfunctions[:, :m], axis=0))
        assert np.allclose(cut.eigenfunctions * signs, full.eigenfunctions[:, :m], atol=1e-9)

    def test_dense_limit(self):
        op = assemble_torus(TorusGrid(1.0, 18), V=np.linspace(0, 1, 18**3), mass=1.0, check=False)
        with pytest.raises(SpectralError):
            decompose(op, method="dense")

    def test_resolvent_columns_match_eigendecomposition(self, radial_op):
        cols = [1, 2, 3]
        ref = ground_kernel(decompose(radial_op)).columns(cols)
        assert np.allclose(ground_kernel_columns(radial_op, cols), ref, rtol=1e-11, atol=1e-13)

    def test_quartic_resolvent_columns(self):
        pot = ShellPotential(ShellDensity.with_mass(1.0, 2.0, 1.0, "smooth"))
        op = assemble_radial_quartic(RadialGrid(4.0, 200, "two_chart"), pot, 0.05)
        ref = ground_kernel(decompose(op)).columns([2, 3])
        assert np.allclose(ground_kernel_columns(op, [2, 3]), ref, rtol=1e-11, atol=1e-13)


class TestKernels:
    def test_single_mode_ground(self):
        assert ground_kernel(single_mode(4.0)).values[0, 0] == pytest.approx(0.25, rel=1e-15)

    def test_single_mode_thermal(self):
        assert thermal_kernel(single_mode(1.0), np.log(3.0)).values[0, 0] == pytest.approx(1.0, rel=1e-14)

    def test_single_mode_excess(self):
        assert excess_kernel(single_mode(1.0), np.log(2.0)).values[0, 0] == pytest.approx(1.0, rel=1e-14)

    def test_ground_diagonal_positive(self, torus8):
        assert np.all(ground_kernel(torus8[1]).diagonal() > 0)

    def test_ground_squared_times_operator(self, torus8):
        op, dec = torus8
        k = ground_kernel(dec).values * op.measure[None, :]
        prod = k @ k @ op.matrix.toarray()
        assert np.max(np.abs(prod - 0.25 * np.eye(op.dim))) <= 1e-10

    def test_large_beta_limit(self, torus8):
        _, dec = torus8
        beta = 61.0 / np.sqrt(dec.eigenvalues[0])
        diff = thermal_kernel(dec, beta).values - ground_kernel(dec).values
        assert np.max(np.abs(diff)) <= 1e-12

    def test_thermal_is_ground_plus_excess(self, torus8):
        _, dec = torus8
        diff = thermal_kernel(dec, 0.8) - ground_kernel(dec)
        assert np.max(np.abs(diff.values - excess_kernel(dec, 0.8).values)) <= 1e-12

    def test_shared_decomposition_required(self, torus8):
        with pytest.raises(SpectralError):
            ground_kernel(torus8[1]) - ground_kernel(single_mode(1.0))

    def test_complete_spectrum_required(self, radial_op):
        with pytest.raises(SpectralError):
            ground_kernel(decompose(radial_op, max_eigenvalue=10.0))

    def test_excess_cutoff_must_cover_beta(self, radial_op):
        dec = decompose(radial_op, max_eigenvalue=10.0)
        with pytest.raises(SpectralError):
            excess_kernel(dec, 1.0)
        assert np.all(np.isfinite(excess_kernel(dec, 20.0).diagonal()))

    @pytest.mark.parametrize("family", ["ground", "thermal", "excess"])
    def test_kernels_are_psd_forms(self, torus8, family):
        _, dec = torus8
        k = {"ground": lambda: ground_kernel(dec), "thermal": lambda: thermal_kernel(dec, 0.5),
             "excess": lambda: excess_kernel(dec, 0.5)}[family]()
        form = k.quadratic_form()
        assert np.max(np.abs(form - form.T)) <= 1e-14 * np.max(np.abs(form))
        assert np.linalg.eigvalsh(form)[0] >= -1e-12 * np.max(np.abs(form))

    def test_excess_diagonal_decreases(self, torus8):
        _, dec = torus8
        d = [excess_kernel(dec, b).diagonal() for b in (0.5, 1.0, 2.0)]
        assert np.all(d[1] < d[0]) and np.all(d[2] < d[1])


class TestMatsubara:
    lam = np.array([0.01, 0.25, 1.0, 4.0, 100.0])

    @pytest.mark.parametrize("beta", [0.5, 2.0, 10.0])
    def test_identity_with_tail(self, beta):
        exact = 1 / np.tanh(beta * np.sqrt(self.lam) / 2) / (2 * np.sqrt(self.lam))
        assert np.max(np.abs(matsubara_sum(self.lam, beta, 2000) - exact)) <= 1e-10

    def test_truncated_sum_converges(self):
        beta = 2.0
        exact = 1 / np.tanh(beta * np.sqrt(self.lam) / 2) / (2 * np.sqrt(self.lam))
        errs = [np.max(np.abs(matsubara_sum(self.lam, beta, n, tail=False) - exact)) for n in (50, 500, 5000)]
        assert errs[0] > errs[1] > errs[2]
        # remainder behaves like beta / (2 pi^2 N)
        assert errs[2] == pytest.approx(beta / (2 * np.pi**2 * 5000), rel=1e-3)


excess_lams = st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=20).map(np.array)


class TestExcessBounds:
    @settings(max_examples=100, deadline=None)
    @given(excess_lams, st.floats(0.05, 20.0), st.floats(1.0001, 8.0))
    def test_monotone_and_tail(self, lam, b0, ratio):
        b = b0 * ratio
        e0, e1 = excess_weights(lam, b0), excess_weights(lam, b)
        assert np.all(e1 < e0)
        assert np.all(e1 <= (b0 / b) * e0 * (1 + 1e-12))

    @settings(max_examples=100, deadline=None)
    @given(excess_lams, st.floats(0.05, 20.0), st.floats(0.5, 8.0))
    def test_lipschitz(self, lam, b0, ratio):
        b = b0 * ratio
        gap = np.abs(excess_weights(lam, b) - excess_weights(lam, b0))
        bound = 2.0 / b0 * abs(b - b0) * excess_weights(lam, b0 / 4.0)
        assert np.all(gap <= bound * (1 + 1e-12))
