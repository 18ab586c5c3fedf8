import numpy as np
import pytest
from scipy.stats import spearmanr

from flatcyl.closing import (
    ClosingReport,
    FlowBoxSpec,
    InapplicableError,
    box_coordinates,
    closing_experiment,
    closing_trial,
    empirical_threshold,
    exp_cartan,
    flags_in_box,
    flow_box_membership,
    power_for,
)
from flatcyl.group import COMPLEX, REAL, ConfigError, FactorSpec, GroupSpec, parse_word
from flatcyl.invariants import axis_matrix, diag_am, lower, upper

EYE2 = (np.eye(2, dtype=complex),) * 2
EPSILONS = [0.04, 0.02, 0.01, 0.005]


@pytest.fixture(scope="module")
def diag_spec():
    a = diag_am(0.8, np.exp(0.3j))
    b = diag_am(0.5, np.exp(1.1j))
    return GroupSpec((FactorSpec(COMPLEX),) * 2, ((a, b), (b, a)))


def test_epsilon_ceiling():
    with pytest.raises(ConfigError):
        FlowBoxSpec(EYE2, 0.06)
    with pytest.raises(ConfigError):
        FlowBoxSpec(EYE2, 0.0)
    assert FlowBoxSpec(EYE2, 0.2, ceiling=0.5).epsilon == 0.2


def test_membership_at_base(a3):
    g0 = axis_matrix(a3, tuple(np.asarray(m) for m in a3.generators[0]))
    box = FlowBoxSpec(g0, 0.01)
    assert flow_box_membership(box, g0)
    assert flow_box_membership(box, g0).radius == pytest.approx(0, abs=1e-12)


def test_membership_of_flat_ball():
    rng = np.random.default_rng(0)
    g0 = (lower(0.3 + 0.1j) @ upper(-0.2j), diag_am(0.4, np.exp(0.2j)))
    box = FlowBoxSpec(g0, 0.03)
    for _ in range(400):
        t = rng.normal(size=2)
        t *= rng.uniform(0, 0.05) / np.linalg.norm(t)
        g = tuple(b @ e for b, e in zip(g0, exp_cartan(t)))
        norm = np.sqrt(2) * np.linalg.norm(t)  # Euclidean norm of (t1, -t1, t2, -t2)
        if abs(norm - box.epsilon) > 1e-8:
            assert bool(flow_box_membership(box, g)) == (norm < box.epsilon)


def test_membership_rejects_far_coordinates():
    box = FlowBoxSpec(EYE2, 0.01)
    g = (lower(0.02), np.eye(2, dtype=complex))
    assert not flow_box_membership(box, g)
    assert flow_box_membership(box, (lower(0.005), np.eye(2, dtype=complex)))
    g = (upper(0.02), np.eye(2, dtype=complex))
    assert not flow_box_membership(box, g)


def test_membership_outside_cell():
    box = FlowBoxSpec(EYE2, 0.01)
    w = np.array([[0, 1], [-1, 0]], dtype=complex)
    res = flow_box_membership(box, (w, np.eye(2, dtype=complex)))
    assert not res and "decomposition" in res.reason


def test_box_coordinates_roundtrip():
    u = (lower(0.01j) @ upper(0.02) @ diag_am(0.005, np.exp(0.003j)), np.eye(2, dtype=complex))
    c = box_coordinates(u)
    assert c.y[0] == pytest.approx(0.01j)
    assert c.t[0] == pytest.approx(0.005) and c.phi[0] == pytest.approx(0.003)


def test_diagonal_gamma_closes_exactly(diag_spec):
    gamma = tuple(np.asarray(m) for m in diag_spec.generators[0])
    box = FlowBoxSpec(EYE2, 0.01)
    assert flags_in_box(box, gamma, diag_spec)
    rep = closing_trial(diag_spec, gamma, box, np.random.default_rng(0), spread=0.0)
    assert rep.dist_a < 1e-14 and rep.dist_m < 1e-14 and rep.box_displacement < 1e-14
    assert rep.T == pytest.approx(1.0)


def test_perturbed_diagonal_small_distance():
    a = diag_am(1.2, np.exp(0.7j)) @ upper(0.003 + 0.002j)
    b = diag_am(0.9, np.exp(2.0j)) @ upper(-0.004j)
    spec = GroupSpec((FactorSpec(COMPLEX),) * 2, ((a, b), (b, a)))
    gamma = (a, b)
    box = FlowBoxSpec(EYE2, 0.01)
    for j in range(30):
        rep = closing_trial(spec, gamma, box, np.random.default_rng([1, j]))
        assert rep.dist_a <= 0.05


def test_displacement_decreases_with_T(a3):
    gamma = parse_word("a b")
    run = closing_experiment(a3, gamma, [0.01], [5, 10, 15], trials=30, seed=0)
    byT = {}
    for r in run.reports:
        byT.setdefault(r.power, []).append(r.box_displacement)
    med = [np.median(byT[k]) for k in sorted(byT)]
    assert all(x >= y for x, y in zip(med, med[1:]))


def test_experiment_fits(a3):
    run = closing_experiment(a3, parse_word("a b'"), EPSILONS, [4, 8, 12], trials=25, seed=3)
    assert run.fits.r2 > 0.9
    assert run.fits.spearman > 0
    for eps in EPSILONS:
        sub = [r for r in run.reports if r.epsilon == eps]
        rho = spearmanr([r.box_displacement - eps for r in sub], [np.exp(-r.T) for r in sub]).statistic
        assert rho > 0
    assert all(r.dist_a >= 0 and r.dist_m >= 0 and r.box_displacement >= 0 for r in run.reports)
    assert sum(r.success for r in run.reports) >= 0.5 * len(run.reports)
    assert run.fits.t_threshold in {r.T for r in run.reports} | {None}


def test_experiment_is_deterministic(a3):
    one = closing_experiment(a3, parse_word("a b"), [0.02, 0.01], [6], trials=5, seed=9)
    two = closing_experiment(a3, parse_word("a b"), [0.02, 0.01], [6], trials=5, seed=9)
    assert [r.to_dict() for r in one.reports] == [r.to_dict() for r in two.reports]


def test_power_for(a3):
    g = tuple(np.asarray(m) for m in a3.generators[0])
    k = power_for(a3, g, 10.0)
    assert k >= 1
    assert power_for(a3, g, 0.0) == 1


def test_inapplicable_cases(a3):
    rot = np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]], dtype=complex)
    with pytest.raises(InapplicableError):
        closing_experiment(a3, (rot, rot), [0.01], trials=1)
    # box far from gamma's axis
    with pytest.raises(InapplicableError):
        closing_experiment(a3, parse_word("a b"), [0.01], trials=1, g0=(lower(3.0) @ upper(2.0),) * 2)


def test_real_factor_closing():
    a = np.array([[np.cosh(1.0), np.sinh(1.0)], [np.sinh(1.0), np.cosh(1.0)]])
    r = np.array([[np.cos(0.5), -np.sin(0.5)], [np.sin(0.5), np.cos(0.5)]])
    b = r @ a @ r.T
    spec = GroupSpec((FactorSpec(REAL),), ((a,), (b,)))
    run = closing_experiment(spec, (0, 2), EPSILONS, [6], trials=10, seed=1)
    assert run.fits.r2 > 0.9
    assert all(r.dist_m == 0 for r in run.reports)


def test_empirical_threshold():
    mk = lambda T, ok: ClosingReport(0.01, 1, T, 0.0, 0.0, 0.0, ok)
    assert empirical_threshold([mk(2, False), mk(4, True), mk(6, True), mk(6, True)]) == 4
    assert empirical_threshold([mk(2, True), mk(4, False), mk(6, True)]) == 6
    assert empirical_threshold([mk(2, True), mk(6, False)]) is None
