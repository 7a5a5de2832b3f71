"""Acceptance suite: each numbered criterion runs at its stated size and tolerance.

A summary line per criterion is printed at the end of the session by the
hooks in ``conftest.py``. Run it alone with ``pytest tests/test_acceptance.py``.
"""
import dataclasses

import numpy as np
import pytest

from wickthermo.config import load_config
from wickthermo.scenarios import run_scenario

pytestmark = pytest.mark.slow

_cache: dict = {}


def shipped(name, scenario_id):
    for cfg in load_config(name):
        if cfg.id == scenario_id:
            return cfg
    raise KeyError(scenario_id)


def report(scenario_id, config="default"):
    key = (config, scenario_id)
    if key not in _cache:
        _cache[key] = run_scenario(shipped(config, scenario_id))
    return _cache[key]


@pytest.mark.acceptance(1, "monotonicity of the thermal excess on the 16^3 torus")
def test_monotonicity():
    cfg = shipped("default", "monotonicity")
    assert cfg.grid["points"] == 16 and cfg.geometry["side"] == 1.0 and cfg.field["mass"] == 1.0
    betas = cfg.betas()
    assert len(betas) == 25 and betas[0] == pytest.approx(0.25) and betas[-1] == pytest.approx(8.0)
    assert np.allclose(np.diff(np.log(betas)), np.log(32.0) / 24)
    rep = report("monotonicity")
    assert rep.check("strict_decrease").value == 0
    assert rep.check("strict_decrease").detail["points"] == 16**3
    assert rep.check("lipschitz_bound").value == 0
    assert rep.check("tail_bound").value == 0
    assert rep.runtime_seconds < 120


@pytest.mark.acceptance(2, "ground-state limit at beta = 64")
def test_ground_limit():
    rep = report("monotonicity")
    limit = rep.check("ground_limit")
    assert limit.value <= 1e-3
    assert rep.check("ground_limit_tail").value <= 1.0 / 64.0


@pytest.mark.acceptance(3, "flat high-temperature calibration within 2%")
def test_calibration():
    cfg = shipped("calibration", "calibration")
    assert cfg.grid["refinements"] == [16, 24, 32]
    assert cfg.field["mass"] == 0.05 and cfg.betas() == [0.1] and cfg.geometry["side"] == 1.0
    rep = report("calibration", "calibration")
    assert rep.runtime_seconds < 300
    chk = rep.check("high_temperature_limit[beta=0.1]")
    target = 1.0 / (12.0 * 0.1**2)
    assert abs(chk.detail["w"] - target) / target <= 0.02


@pytest.mark.acceptance(4, "negative Wick square for the exponential conformal factor")
@pytest.mark.parametrize("xi", [0.0, 0.05, 0.1])
def test_counterexample(xi):
    base = shipped("default", "counterexample")
    assert base.grid["points"] == 4000 and base.grid["r_max"] == 80.0 and base.grid["rmax_doubling"]
    assert (base.geometry["r_inner"], base.geometry["r_outer"]) == (1.0, 2.0)
    cfg = dataclasses.replace(base, field={**base.field, "xi": [xi]})
    rep = run_scenario(cfg)
    assert rep.runtime_seconds < 300
    neg = rep.check(f"negative_wick_square[xi={xi:g}]")
    w, err = neg.detail["w"], neg.detail["w_error"]
    assert w < 0 and abs(w) >= 5 * err
    assert rep.check(f"rmax_doubling_stable[xi={xi:g}]").status == "pass"
    assert neg.detail["value_doubled"] < 0


@pytest.mark.acceptance(5, "non-negative Wick square for the affine conformal factor")
def test_positive_noncompact():
    cfg = shipped("default", "positive-noncompact")
    assert cfg.field["xi"] == [0.0, 0.125] and cfg.states["betas"] == [1.0, 4.0] and cfg.states["ground"]
    rep = report("positive-noncompact")
    runs = rep.checks_named("nonnegative_wick_square")
    assert len(runs) == 6
    for chk in runs:
        assert chk.value >= -chk.detail["w_error"]
        temp = rep.check(chk.name.replace("nonnegative_wick_square", "temperature_defined"))
        if chk.value >= 0:
            assert temp.status == "pass" and temp.value == pytest.approx(np.sqrt(12 * chk.value))


@pytest.mark.acceptance(6, "non-negative Wick square on the compact quartic shell, two estimators")
def test_positive_compact():
    cfg = shipped("default", "positive-compact")
    assert cfg.field["xi"] == pytest.approx([0.05, 1.0 / 6.0 - 0.01]) and cfg.states["betas"] == [2.0]
    rep = report("positive-compact")
    runs = rep.checks_named("nonnegative_wick_square")
    assert len(runs) == 4
    for chk in runs:
        assert chk.value >= -chk.detail["w_error"]
    agreement = rep.checks_named("estimator_agreement")
    assert len(agreement) == 4
    for chk in agreement:
        d = chk.detail
        gap = abs(d["coincidence"] - d["fit"])
        assert gap <= max(0.1 * abs(d["coincidence"]), d["combined_error"])


@pytest.mark.acceptance(7, "Matsubara and Euclidean reduction oracle")
def test_reduction_oracle():
    cfg = shipped("default", "reduction-oracle")
    assert cfg.grid["points"] == 4 and len(cfg.grid["tau_points"]) == 3
    rep = report("reduction-oracle")
    for chk in rep.checks_named("matsubara_identity"):
        assert chk.value <= 1e-10
    for chk in rep.checks_named("euclidean_envelope_order"):
        errors = chk.detail["errors"]
        assert errors[0] > errors[1] > errors[2]
        assert all(r >= 3.5 for r in chk.value)
    for chk in rep.checks_named("euclidean_extrapolated"):
        assert chk.status == "pass"


@pytest.mark.acceptance(8, "comparison properties for 100 random potential pairs")
def test_comparison():
    cfg = shipped("default", "comparison")
    assert cfg.grid["points"] == 8 and cfg.checks["pairs"] == 100 and cfg.checks["psd_tolerance"] == 1e-10
    rep = report("comparison")
    assert rep.check("inverse_ordering_psd").value == 0
    assert rep.check("inverse_ordering_psd").detail["worst_relative_eigenvalue"] >= -1e-10
    assert rep.check("green_kernel_positive").value == 0
    assert rep.check("green_kernel_positive").detail["smallest_entry"] > 0
    assert rep.runtime_seconds < 120


@pytest.mark.acceptance(9, "constant-lapse scaling on torus and exponential models")
def test_lapse_scaling():
    cfg = shipped("default", "lapse-scaling")
    assert cfg.checks["factors"] == [0.5, 2.0, 10.0]
    rep = report("lapse-scaling")
    assert len(rep.checks) == 6
    for chk in rep.checks:
        c = float(chk.name.split("c=")[1].split(",")[0])
        d = chk.detail
        assert abs(d["w_scaled"] - d["w"] / c**2) <= 1e-10 * abs(d["w"] / c**2)


@pytest.mark.acceptance(10, "perturbed stationary states dominate the ground state")
def test_ground_minimality():
    cfg = shipped("default", "ground-minimality")
    assert cfg.states["perturbed_count"] == 50
    rep = report("ground-minimality")
    assert rep.check("kernel_difference_psd").value == 0
    assert rep.check("pointwise_domination").value == 0
    assert rep.check("pointwise_domination").detail["smallest_gap"] >= 0
