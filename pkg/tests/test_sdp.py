import math

import numpy as np
import pytest

from tsobserver import lmi, numerics, sdp
from tsobserver.lmi import SdpBlock, SdpRow, StandardSdp

from conftest import lyapunov_problem


def _scalar_blocks(*pairs, rows=()):
    """Scalar blocks ``f0 + f1 * y < 0`` for y in R^1."""
    blocks = tuple(SdpBlock(f"b{i}", np.array([[f0]]), np.array([[[f1]]])) for i, (f0, f1) in enumerate(pairs))
    return StandardSdp(d=1, blocks=blocks, rows=tuple(rows))


def _random_matrix(rng, stable: bool) -> np.ndarray:
    m = rng.standard_normal((3, 3))
    top = np.linalg.eigvals(m).real.max()
    shift = 0.1 + rng.uniform(0, 1)
    return m - (top + shift) * np.eye(3) if stable else m - (top - shift) * np.eye(3)


def _solve_lyapunov(A):
    standard = lmi.lower(lyapunov_problem(A))
    return standard, sdp.solve_feasibility(standard)


def test_scalar_lyapunov_stable():
    standard, out = _solve_lyapunov([[-1.0]])
    assert out.status == sdp.FEASIBLE
    p = standard.recover(out.point)["P"][0, 0]
    assert p > 0 and -2 * p < 0
    assert out.margin > 0
    assert out.margin == pytest.approx(sdp.point_margin(standard, out.point))


def test_scalar_lyapunov_unstable():
    _, out = _solve_lyapunov([[1.0]])
    assert out.status == sdp.INFEASIBLE
    assert out.point is None
    assert out.lower_bound >= -1e-8


def test_empty_problem_is_feasible():
    out = sdp.solve_feasibility(StandardSdp(d=1, blocks=()))
    assert out.status == sdp.FEASIBLE
    np.testing.assert_array_equal(out.point, [0.0])
    assert out.margin == sdp.MARGIN_SENTINEL


def test_malformed_problem():
    bad = StandardSdp(d=1, blocks=(SdpBlock("a", np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((1, 2, 2))),))
    with pytest.raises(sdp.MalformedProblem):
        sdp.solve_feasibility(bad)
    with pytest.raises(lmi.ShapeMismatch):
        StandardSdp(d=2, blocks=(SdpBlock("a", np.zeros((1, 1)), np.zeros((1, 1, 1))),))


def test_options_validation():
    with pytest.raises(ValueError):
        sdp.SolveOptions(tolerance=0.0)
    with pytest.raises(ValueError):
        sdp.SolveOptions(max_iterations=0)


def test_iteration_limit_reported():
    standard = lmi.lower(lyapunov_problem(np.array([[0.0, 1.0], [-2.0, -0.1]])))
    out = sdp.solve_feasibility(standard, sdp.SolveOptions(max_iterations=1))
    assert out.status in (sdp.FEASIBLE, sdp.ITERATION_LIMIT)
    if out.status == sdp.ITERATION_LIMIT:
        assert out.point is None


def test_random_hurwitz_feasible_and_sound():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        A = _random_matrix(rng, stable=True)
        standard, out = _solve_lyapunov(A)
        assert out.status == sdp.FEASIBLE
        P = standard.recover(out.point)["P"]
        # independent check with LAPACK
        assert np.linalg.eigvalsh(P).min() > 0
        assert np.linalg.eigvalsh(A.T @ P + P @ A).max() < 0
        for b in standard.blocks:
            assert numerics.max_eig(b.value(out.point)) <= -1e-8 / 2


def test_random_unstable_infeasible():
    rng = np.random.default_rng(4048)
    for _ in range(50):
        A = _random_matrix(rng, stable=False)
        _, out = _solve_lyapunov(A)
        assert out.status == sdp.INFEASIBLE


def test_determinism(ex1):
    standard = lmi.lower(lmi.assemble_theorem1(ex1))
    a = sdp.solve_feasibility(standard)
    b = sdp.solve_feasibility(standard)
    assert a.status == b.status == sdp.FEASIBLE
    assert a.point.tobytes() == b.point.tobytes()
    assert a.objective_trace == b.objective_trace


def test_phase_objective_monotone(ex1, ex2):
    for standard in (lmi.lower(lmi.assemble_theorem1(ex1)), lmi.lower(lyapunov_problem([[1.0]]))):
        trace = np.array(sdp.solve_feasibility(standard).objective_trace)
        assert trace.size > 0
        assert np.all(np.diff(trace) <= 0)


def test_rows_are_respected():
    # y > 0 from the block, y <= 3 from a row, y >= 2.5 from another row
    standard = _scalar_blocks((0.0, -1.0), rows=(SdpRow("ub", 3.0, np.array([-1.0])),
                                                 SdpRow("lb", -2.5, np.array([1.0]))))
    out = sdp.solve_feasibility(standard)
    assert out.status == sdp.FEASIBLE
    assert 2.5 <= out.point[0] <= 3.0


def test_contradictory_rows_infeasible():
    standard = _scalar_blocks((0.0, -1.0), rows=(SdpRow("ub", -1.0, np.array([-1.0])),))
    assert sdp.solve_feasibility(standard).status == sdp.INFEASIBLE


def test_recenter_box_center():
    standard = _scalar_blocks((0.0, -1.0), rows=(SdpRow("ub", 10.0, np.array([-1.0])),))
    y = sdp.recenter(standard, [1.0], sdp.SolveOptions(radius=None))
    assert y[0] == pytest.approx(5.0, abs=1e-6)


def test_recenter_symmetric_interval():
    standard = _scalar_blocks((-1.0, 1.0), (-1.0, -1.0))
    y = sdp.recenter(standard, [0.7], sdp.SolveOptions(radius=None))
    assert y[0] == pytest.approx(0.0, abs=1e-9)
    again = sdp.recenter(standard, y, sdp.SolveOptions(radius=None))
    assert again[0] == pytest.approx(y[0], abs=1e-9)


def test_recenter_does_not_reduce_margin(ex1):
    standard = lmi.lower(lmi.assemble_theorem1(ex1))
    out = sdp.solve_feasibility(standard)
    y = sdp.recenter(standard, out.point)
    assert sdp.point_margin(standard, y) >= out.margin


def test_recenter_rejects_infeasible_start():
    standard = _scalar_blocks((0.0, -1.0))
    with pytest.raises(sdp.NotStrictlyFeasible):
        sdp.recenter(standard, [-1.0])


def test_point_margin_definition():
    standard = _scalar_blocks((-2.0, 0.0), (-5.0, 0.0), rows=(SdpRow("r", 1.5, np.array([0.0])),))
    assert sdp.point_margin(standard, [0.0]) == 1.5
    assert math.isinf(sdp.solve_feasibility(StandardSdp(d=0, blocks=())).margin) is False
