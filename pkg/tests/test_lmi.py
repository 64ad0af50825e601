import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsobserver import lmi, model, synth
from tsobserver.lipschitz import LipschitzBounds
from tsobserver.model import Box, Constant

from conftest import lyapunov_problem


def _scalar_model(a=-1.0, c=1.0, measured=True):
    return model.TsDescriptorModel(E=[[[1.0]]], A=[[[a]]], B=[[[1.0]]], C=[[c]],
                                   h_specs=[Constant(1.0)], v_specs=[Constant(1.0)],
                                   premise_measured=measured)


def _random_assignment(problem, rng):
    out = {}
    for v in problem.variables:
        m = rng.standard_normal((v.rows, v.cols))
        out[v.name] = 0.5 * (m + m.T) if v.shape == "symmetric" else m
    return out


def test_scalar_theorem1_witness():
    problem = lmi.assemble_theorem1(_scalar_model())
    block = problem.lmis[0].matrix({"P1": [[1.0]], "P3": [[1.0]], "Y3_1": [[0.0]]})
    np.testing.assert_allclose(block, [[-2.0, -1.0], [-1.0, -2.0]])
    res = lmi.evaluate(problem, {"P1": 1.0, "P3": 1.0, "Y3_1": 0.0})
    assert res[0].value == pytest.approx(-1.0, abs=1e-14)
    assert all(r.passed() for r in res)


def test_positivity_boundary_residual():
    problem = lmi.assemble_theorem1(_scalar_model())
    res = {r.name: r for r in lmi.evaluate(problem, {"P1": 0.0, "P3": 1.0, "Y3_1": 0.0})}
    assert res["P1"].value == 0.0
    assert not res["P1"].passed()


def test_theorem1_counts(ex1):
    problem = lmi.assemble_theorem1(ex1)
    assert len(problem.lmis) == 5
    sizes = sorted(c.expr.shape[0] for c in problem.lmis)
    assert sizes == [2, 4, 4, 4, 4]
    sdp = lmi.lower(problem)
    assert sdp.d == 3 + 4 + 2 * 2
    assert [v.name for v in problem.variables] == ["P1", "P3", "Y3_1", "Y3_2"]


def test_theorem1_needs_measured_premise():
    with pytest.raises(lmi.PremiseNotMeasured):
        lmi.assemble_theorem1(_scalar_model(measured=False))


def test_theorem1_blocks_symmetric(ex1):
    problem = lmi.assemble_theorem1(ex1)
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = problem.check_assignment(_random_assignment(problem, rng))
        for c in problem.lmis:
            m = c.matrix(a)
            assert np.array_equal(m, m.T)
            raw = c.expr.evaluate(a)
            assert np.abs(raw - raw.T).max() <= 1e-12 * (1 + np.abs(raw).max())


def test_theorem1_block_entries_by_hand(ex1):
    problem = lmi.assemble_theorem1(ex1)
    rng = np.random.default_rng(5)
    a = problem.check_assignment(_random_assignment(problem, rng))
    P1, P3, Y = a["P1"], a["P3"], a["Y3_2"]
    A, E, C = ex1.A[1], ex1.E[0], ex1.C
    b11 = A.T @ P3 + P3.T @ A - C.T @ Y.T - Y @ C
    b21 = P1 - E.T @ P3 + P3.T @ A - Y @ C
    b22 = -E.T @ P3 - P3.T @ E
    expected = np.block([[b11, b21.T], [b21, b22]])
    got = next(c for c in problem.lmis if c.name == "T1[i=2,k=1]").expr.evaluate(a)
    np.testing.assert_allclose(got, expected, atol=1e-14)


def _ex2_problem(ex2, mode="descriptor", r_bounds=None):
    bounds = LipschitzBounds(m=[1.7, 1.7], n=[0.525, 0.525], box=Box.uniform(-2, 2, 3), beta1=0.5)
    return lmi.assemble_theorem2(ex2, synth.centroid_decompose(ex2), bounds, mode)


def test_theorem2_counts(ex2):
    problem = _ex2_problem(ex2, "none")
    sizes = sorted(c.expr.shape[0] for c in problem.lmis)
    assert sizes == [3, 3, 10, 10]
    assert len(problem.inequalities) == 1
    names = [v.name for v in problem.variables]
    assert names == ["P", "Q", "K_1", "K_2", "lambda1", "lambda2", "gamma"]
    assert lmi.lower(problem).d == 6 + 6 + 6 + 6 + 3


def test_theorem2_descriptor_elimination_matches_rank(ex2):
    problem = _ex2_problem(ex2, "descriptor")
    E = ex2.E[0]
    # independent oracle: rank of P -> E^T P - P E over symmetric P
    cols = []
    for i in range(3):
        for j in range(i, 3):
            P = np.zeros((3, 3))
            P[i, j] = P[j, i] = 1.0
            cols.append((E.T @ P - P @ E).ravel())
    rank = np.linalg.matrix_rank(np.array(cols).T)
    assert lmi.lower(problem).d == 6 + 6 + 6 + 6 + 3 - rank
    assert any(c.name == "sym(E^T P)" for c in problem.lmis)


def test_theorem2_errors(ex1, ex2):
    bounds = LipschitzBounds(m=[1.0, 1.0], n=[1.0, 1.0], box=Box.uniform(-1, 1, 2), beta1=1.0)
    with pytest.raises(lmi.MultipleLeftVertices):
        lmi.assemble_theorem2(ex1, synth.centroid_decompose(ex1), bounds)
    with pytest.raises(lmi.NonpositiveBounds):
        lmi.assemble_theorem2(ex2, synth.centroid_decompose(ex2),
                              LipschitzBounds(m=[1.0, 1.0], n=[1.0, 1.0], box=Box.uniform(-1, 1, 3)))


def test_theorem2_single_rule_block_structure():
    m = model.TsDescriptorModel(E=[np.eye(2)], A=[-np.eye(2)], B=[[[1.0], [0.0]]], C=[[1.0, 0.0]],
                                h_specs=[Constant(1.0)], v_specs=[Constant(1.0)], premise_measured=False)
    d = synth.centroid_decompose(m)
    assert np.all(d.Abar[0] == 0) and np.all(d.Bbar[0] == 0)
    bounds = LipschitzBounds(m=[0.3], n=[0.0], box=Box.uniform(-1, 1, 2), beta1=1.0)
    problem = lmi.assemble_theorem2(m, d, bounds)
    a = {"P": np.eye(2), "Q": 2 * np.eye(2), "K_1": [[0.0], [0.0]], "lambda1": 3.0, "lambda2": 4.0, "gamma": 5.0}
    big = next(c for c in problem.lmis if c.name == "T2b[i=1]").expr.evaluate(problem.check_assignment(a))
    expected = np.diag([-2 + 3 * 0.09] * 2 + [-3.0] * 2 + [-4.0] + [-4.0] * 2)
    np.testing.assert_allclose(big, expected, atol=1e-14)


def test_identity_descriptor_equality_vacuous():
    m = model.TsDescriptorModel(E=[np.eye(2)], A=[-np.eye(2)] * 2, B=[[[1.0], [0.0]]] * 2, C=[[1.0, 0.0]],
                                h_specs=[model.TanhSector(0), model.Complement(0)], v_specs=[Constant(1.0)],
                                premise_measured=False)
    bounds = LipschitzBounds(m=[1.0, 1.0], n=[0.5, 0.5], box=Box.uniform(-1, 1, 2), beta1=1.0)
    d = synth.centroid_decompose(m)
    assert lmi.lower(lmi.assemble_theorem2(m, d, bounds, "descriptor")).d == \
        lmi.lower(lmi.assemble_theorem2(m, d, bounds, "none")).d


def test_lower_simple_counts():
    P = lmi.symmetric("P", 2, positive=True)
    problem = lmi.AffineLmiProblem([P], [lmi.LmiConstraint("negP", -P.x)])
    sdp = lmi.lower(problem)
    assert sdp.d == 3 and len(sdp.blocks) == 2
    p12 = np.array([[1.0, 0.0]]) @ P.x @ np.array([[0.0], [1.0]])
    problem = lmi.AffineLmiProblem([P], [lmi.LmiConstraint("negP", -P.x)],
                                   equalities=[lmi.LinearEquality("p12", p12)])
    assert lmi.lower(problem).d == 2


def test_inconsistent_equalities():
    x = lmi.scalar("x")
    problem = lmi.AffineLmiProblem([x], equalities=[lmi.LinearEquality("a", x.x - 1.0),
                                                    lmi.LinearEquality("b", x.x - 2.0)])
    with pytest.raises(lmi.InconsistentEqualities):
        lmi.lower(problem)


def test_missing_and_misshaped_variables(ex1):
    problem = lmi.assemble_theorem1(ex1)
    with pytest.raises(lmi.MissingVariable):
        lmi.evaluate(problem, {"P1": np.eye(2)})
    a = _random_assignment(problem, np.random.default_rng(0))
    a["P3"] = np.eye(3)
    with pytest.raises(lmi.ShapeMismatch):
        lmi.evaluate(problem, a)
    with pytest.raises(lmi.MissingVariable):
        lmi.AffineLmiProblem([], [lmi.LmiConstraint("c", lmi.symmetric("Z", 2).x)])


def test_non_affine_product_rejected():
    P = lmi.symmetric("P", 2)
    with pytest.raises(lmi.LmiError):
        P.x * P.x


@pytest.mark.parametrize("which", ["ex1", "ex2d", "ex2n", "lyap"])
def test_round_trip_evaluate_vs_lowered(which, ex1, ex2):
    problem = {"ex1": lambda: lmi.assemble_theorem1(ex1),
               "ex2d": lambda: _ex2_problem(ex2, "descriptor"),
               "ex2n": lambda: _ex2_problem(ex2, "none"),
               "lyap": lambda: lyapunov_problem(np.array([[0.0, 1.0], [-2.0, -3.0]]))}[which]()
    sdp = lmi.lower(problem)
    rng = np.random.default_rng(9)
    for _ in range(25):
        y = rng.standard_normal(sdp.d)
        assignment = sdp.recover(y)
        direct = lmi.evaluate(problem, assignment)
        lowered = lmi.sdp_residuals(sdp, y)
        inexact = [r.value for r in direct if r.kind != "equality"]
        np.testing.assert_allclose(inexact, lowered, atol=1e-10)
        assert all(r.value <= 1e-10 for r in direct if r.kind == "equality")
        np.testing.assert_allclose(sdp.reduce(assignment), y, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_affinity(ex1, seed, theta):
    problem = lmi.assemble_theorem1(ex1)
    rng = np.random.default_rng(seed)
    a = problem.check_assignment(_random_assignment(problem, rng))
    b = problem.check_assignment(_random_assignment(problem, rng))
    mix = {k: theta * a[k] + (1 - theta) * b[k] for k in a}
    for c in problem.lmis:
        lhs = c.expr.evaluate(mix)
        rhs = theta * c.expr.evaluate(a) + (1 - theta) * c.expr.evaluate(b)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_variable_pack_unpack():
    P = lmi.symmetric("P", 3)
    m = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    assert P.size == 6
    np.testing.assert_array_equal(P.unpack(P.pack(m)), m)
    # off-diagonal basis matrices carry paired ones
    k = next(k for k in range(6) if P.basis(k)[0, 1] != 0)
    np.testing.assert_array_equal(P.basis(k), [[0, 1, 0], [1, 0, 0], [0, 0, 0]])
