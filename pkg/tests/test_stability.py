import json
import math

import numpy as np
import pytest

from semidae.circuit import (CircuitParams, SourceSpec, build_filter_dae, chart_ab, chart_x1x2,
                             instability_family, omega_region, sine_family, stability_presets)
from semidae.dae import SemilinearDAE, constraint_jacobian, manifold_residual
from semidae.integrate import integrate
from semidae.stability import (BoxSampler, ComparisonFunction, GaugeFunction, GridSampler, InvalidH,
                               InvalidRegion, RegionSampler, RegionSpec, Verdict, check_basis_invertibility,
                               check_boundedness_condition, check_constraint_solvability,
                               check_instability_conditions, check_stability_inequality, dissipation_lhs,
                               find_constraint_roots, instability_certificate, lift_to_manifold,
                               stability_certificate)

import regimes

ESCAPE_P = CircuitParams(10, 0.5, 2, 0.2, *instability_family(), SourceSpec("sinusoid", beta=2))
SINE_P = CircuitParams(300, 0.5, 2.6, 0.2, *sine_family((0.5, 1.5, 1, 3)),
                       SourceSpec("sinusoid", beta=200, omega=0.5, offset=-0.2))


def ab_grid(p, n=10):
    axis = np.linspace(-5, 5, n)
    return GridSampler([0.0], [axis, axis], chart=chart_ab(p))


def test_comparison_flags_are_analytic():
    assert ComparisonFunction.power(1.5).integral_diverges is False
    assert ComparisonFunction.power(1.0).integral_diverges is True
    assert ComparisonFunction.power(0.5).integral_diverges is True
    assert ComparisonFunction.linear(2.0).integral_diverges is True
    assert ComparisonFunction.loglinear().integral_diverges is True
    f = ComparisonFunction.custom(lambda v: v ** 3, integral_diverges=False)
    assert f.integral_diverges is False and f(2.0) == 8.0
    with pytest.raises(ValueError):
        ComparisonFunction("custom")
    with pytest.raises(ValueError):
        ComparisonFunction.power(0.0)


def test_comparison_values():
    assert ComparisonFunction.linear(3.0)(2.0) == 6.0
    assert ComparisonFunction.power(1.5, 2.0)(4.0) == pytest.approx(16.0)
    assert ComparisonFunction.loglinear(1.0)(math.e - 1) == pytest.approx(math.e - 1)


def test_gauge_declarations():
    assert GaugeFunction.constant(0.0).integral_finite_declared is True
    assert GaugeFunction.constant(1.0).integral_finite_declared is False
    assert GaugeFunction.constant(1.0).probe_continuity()


def scalar_dae():
    return SemilinearDAE([[1.0]], [[1.0]], lambda t, x: np.zeros(1), lambda t, x: np.zeros((1, 1)))


def test_scalar_sanity_stability():
    dae = scalar_dae()
    rep = check_stability_inequality(dae, [[1.0]], GaugeFunction.constant(0.0), ComparisonFunction.linear(),
                                     1.0, BoxSampler([-10.0], [10.0], count=500))
    assert rep.verdict is Verdict.NOT_FALSIFIED
    assert rep.entry("stability_inequality").samples > 0


@pytest.mark.parametrize("H", [np.diag([1.0, -1.0, 1.0]), np.diag([1.0, 0.0, 1.0]),
                               np.array([[1.0, 2.0, 0], [0, 1, 0], [0, 0, 1]]), np.eye(2) * -1])
def test_invalid_weight_rejected(H):
    dae = build_filter_dae(SINE_P)
    with pytest.raises(InvalidH):
        check_stability_inequality(dae, H, GaugeFunction.constant(1.0), ComparisonFunction.linear(), 1.0,
                                   BoxSampler([-1, -1], [1, 1], count=5))


def test_region_with_origin_rejected():
    dae = build_filter_dae(ESCAPE_P)
    region = RegionSpec(lambda xp1: True, excludes_origin=True)
    with pytest.raises(InvalidRegion):
        check_instability_conditions(dae, np.eye(3), GaugeFunction.constant(1.0),
                                     ComparisonFunction.power(1.5), region, BoxSampler([-1, -1], [1, 1]))
    region = RegionSpec(lambda xp1: xp1[0] > 1, excludes_origin=False)
    with pytest.raises(InvalidRegion):
        check_instability_conditions(dae, np.eye(3), GaugeFunction.constant(1.0),
                                     ComparisonFunction.power(1.5), region, BoxSampler([-1, -1], [1, 1]))


def test_solvability_examples():
    sampler = GridSampler(np.linspace(0, 10, 10), [np.linspace(-5, 5, 10)] * 2, chart=chart_ab(SINE_P))
    entry = check_constraint_solvability(build_filter_dae(SINE_P), sampler)
    assert entry.verdict is Verdict.NOT_FALSIFIED and entry.samples == 1000
    zero = CircuitParams(500, 0.5, 2, 0.2, source=SourceSpec("sinusoid", beta=3))
    assert check_constraint_solvability(build_filter_dae(zero), ab_grid(zero)).passed


def test_solvability_inconclusive_without_root():
    # x2 = x2**2 + 1 + x1**2 has no real root
    dae = SemilinearDAE(np.diag([1.0, 0.0]), np.eye(2),
                        lambda t, x: np.array([0.0, x[1] ** 2 + 1.0 + x[0] ** 2]),
                        lambda t, x: np.array([[0.0, 0.0], [2 * x[0], 2 * x[1]]]))
    entry = check_constraint_solvability(dae, GridSampler([0.0], [np.linspace(-1, 1, 5)]))
    assert entry.verdict is Verdict.INCONCLUSIVE
    assert entry.witness is not None


def test_find_roots_sine():
    a2 = a3 = 2.0
    p = CircuitParams(1, 1, 2, 1, *sine_family((1, a2, a3, 1)))
    dae = build_filter_dae(p)
    z, _ = dae.split(chart_ab(p)((0.0, 0.0)))
    roots = find_constraint_roots(dae, 0.0, z, (-10, 10))
    assert len(roots) == 1 and abs(roots[0]) < 1e-12


def test_basis_invertibility_examples():
    assert check_basis_invertibility(build_filter_dae(SINE_P), ab_grid(SINE_P)).verdict is Verdict.NOT_FALSIFIED
    zero = CircuitParams(500, 0.5, 2, 0.2)
    assert check_basis_invertibility(build_filter_dae(zero), ab_grid(zero)).verdict is Verdict.NOT_FALSIFIED


def test_basis_invertibility_falsified_with_reproducible_witness():
    p = CircuitParams(1, 1, 2, 1, *sine_family((1, 2, 2, 1)))
    dae = build_filter_dae(p)
    for entry in (check_basis_invertibility(dae, ab_grid(p, 11)),
                  check_basis_invertibility(dae, GridSampler([0.0], [[0.0], [0.0]], chart=chart_ab(p)),
                                            u_range=(-2 * math.pi, 2 * math.pi), mode="range")):
        assert entry.verdict is Verdict.FALSIFIED
        w = entry.witness
        z = dae.Ra @ np.asarray(w["x_p1"])
        val = constraint_jacobian(dae, w["t"], z, [w["u_star"]])[0, 0]
        assert abs(val) < 1e-10
        # 2 cos(a - b - u) + 2 cos(b + u) = -r at the witness
        x = np.asarray(w["x_star"])
        assert 2 * math.cos(x[0] - x[2]) + 2 * math.cos(x[2]) == pytest.approx(-2.0, abs=1e-9)


def test_range_mode_witness_at_origin():
    p = CircuitParams(1, 1, 2, 1, *sine_family((1, 2, 2, 1)))
    dae = build_filter_dae(p)
    entry = check_basis_invertibility(dae, GridSampler([0.0], [[0.0], [0.0]], chart=chart_ab(p)),
                                      u_range=(-2 * math.pi, 2 * math.pi), mode="range")
    # at a = b = 0 the condition reads 4 cos(u) = -2
    assert math.cos(entry.witness["u_star"]) == pytest.approx(-0.5, abs=1e-10)


def omega_setup(count=400):
    dae = build_filter_dae(ESCAPE_P)
    region = omega_region(ESCAPE_P)
    sampler = RegionSampler(region, 2, count=count, seed=3)
    return dae, region, sampler


def test_instability_certificate_not_falsified():
    dae, region, sampler = omega_setup()
    pr = stability_presets(ESCAPE_P)
    rep = instability_certificate(dae, pr.H_instability, pr.k_instability, pr.U_instability, region, sampler,
                                  boundary_samples=200)
    assert rep.verdict is Verdict.NOT_FALSIFIED, rep.summary()
    assert rep.entry("reversed_inequality").details["calibrated_alpha"] > 0
    assert rep.entry("region_invariance").worst_margin > 0


def test_stability_direction_fails_on_omega():
    dae, region, sampler = omega_setup()
    pr = stability_presets(ESCAPE_P)
    inst = check_instability_conditions(dae, pr.H_instability, pr.k_instability, pr.U_instability, region,
                                        sampler, boundary_samples=10)
    alpha = inst.entry("reversed_inequality").details["calibrated_alpha"]
    U = ComparisonFunction.power(1.5, alpha)
    rep = check_stability_inequality(dae, pr.H_instability, pr.k_instability, U, 1.0, sampler,
                                     accept=region.contains)
    entry = rep.entry("stability_inequality")
    assert entry.verdict is Verdict.FALSIFIED
    assert rep.entry("comparison_integral_diverges").verdict is Verdict.FALSIFIED
    w = entry.witness
    lhs, v = dissipation_lhs(dae, pr.H_instability, w["t"], np.asarray(w["x"]))
    assert lhs > U(v) * (1 + 1e-9)


def test_instability_fails_with_divergent_comparison():
    dae, region, sampler = omega_setup(50)
    pr = stability_presets(ESCAPE_P)
    rep = check_instability_conditions(dae, pr.H_instability, pr.k_instability, ComparisonFunction.linear(1e-6),
                                       region, sampler, boundary_samples=10)
    assert rep.entry("comparison_integral_converges").verdict is Verdict.FALSIFIED
    assert rep.verdict is Verdict.FALSIFIED


def test_sine_stability_certificate():
    dae = build_filter_dae(SINE_P)
    pr = stability_presets(SINE_P)
    k = pr.k_stability(SINE_P.source)
    sampler = BoxSampler([-50, -50], [50, 50], count=1000, chart=chart_x1x2(SINE_P))
    rep = stability_certificate(dae, pr.H_stability, k, pr.U_stability, pr.R, sampler)
    assert rep.verdict is Verdict.NOT_FALSIFIED, rep.summary()
    assert not rep.entry("gauge_integral_finite").required


def test_boundedness_condition_reports_sup():
    dae = build_filter_dae(SINE_P)
    entry = check_boundedness_condition(dae, [0.0], 5.0, BoxSampler([-5, -5], [5, 5], count=200,
                                                                     chart=chart_x1x2(SINE_P)))
    assert not entry.required
    # Q2 f = f3 (1, -1/r, 1) and |f3| <= alpha2 + alpha3
    w = np.linalg.norm([1, -1 / SINE_P.r, 1])
    assert 0 < entry.details["observed_sup"] <= (1.5 + 1.0) * w + 1e-9


def test_report_serialization():
    dae, region, sampler = omega_setup(30)
    pr = stability_presets(ESCAPE_P)
    rep = instability_certificate(dae, pr.H_instability, pr.k_instability, pr.U_instability, region,
                                  sampler, boundary_samples=10)
    doc = json.loads(rep.to_json())
    assert doc["verdict"] == "NotFalsified"
    names = [e["condition"] for e in doc["entries"]]
    assert names == ["constraint_solvability", "basis_invertibility", "reversed_inequality",
                     "region_invariance", "comparison_integral_converges", "gauge_integral_diverges"]
    assert "NotFalsified" in rep.summary()


def random_region_starts(dae, region, n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        xp1 = region.interior(rng.uniform(0.05, 0.95, 2))
        x = lift_to_manifold(dae, 0.0, xp1)
        if x is not None and region.contains(dae.dec.P1 @ x):
            out.append(x)
    return out


def test_random_omega_starts_escape():
    dae = build_filter_dae(ESCAPE_P)
    region = omega_region(ESCAPE_P)
    for x0 in random_region_starts(dae, region, 10, seed=12):
        assert np.linalg.norm(manifold_residual(dae, 0.0, x0)) < 1e-9
        tr = integrate(dae, 0.0, x0, regimes.options(1e-8, 50.0))
        assert tr.escaped, (x0, tr.status)


def test_random_sine_starts_stay_bounded():
    dae = build_filter_dae(SINE_P)
    rng = np.random.default_rng(21)
    for _ in range(10):
        x0 = lift_to_manifold(dae, 0.0, chart_x1x2(SINE_P)(rng.uniform(-3, 3, 2)))
        tr = integrate(dae, 0.0, x0, regimes.options(1e-7, 100.0))
        assert tr.completed and np.isfinite(tr.norms.max())
