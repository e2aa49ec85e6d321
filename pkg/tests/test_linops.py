import math

import numpy as np
import pytest
import scipy.sparse as sp

from oracles import basis_matrix, cube_diff_matrix, neumann_diff_matrix
from ovdp.errors import CapacityError, DegenerateError, NumericError, StructuralError
from ovdp.linops import (
    GraphSpec,
    LinOp,
    OpGrid,
    VarShape,
    adjoint_consistency_check,
    blockdiag_matrix_op,
    compose,
    diff_b,
    diff_h,
    diff_v,
    graph_diff,
    graph_diff_bound_printed,
    graph_diff_groups,
    identity,
    lemma1_decompose,
    materialize,
    matrix_op,
    power_iteration_norm,
    sampling_op,
)


def test_varshape_len_is_product():
    s = VarShape((4, 3, 2))
    assert s.size == len(s) == 24


def test_varshape_rejects_negative():
    with pytest.raises(StructuralError):
        VarShape((2, -1))


# adjoint consistency


def test_adjoint_check_identity_exact():
    assert adjoint_consistency_check(identity(3), trials=10) == 0.0


def test_adjoint_check_diff_v_against_explicit_transpose():
    op = diff_v((4, 4, 1))
    D = basis_matrix(op.forward, 16)
    Dt = basis_matrix(op.adjoint, 16)
    np.testing.assert_allclose(Dt, D.T, atol=0)
    assert adjoint_consistency_check(op, trials=100) <= 1e-12


def test_adjoint_check_detects_wrong_adjoint():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    bad = LinOp(2, 2, lambda x: A @ x, lambda y: (A.T + 0.1) @ y, 6.0)
    assert adjoint_consistency_check(bad, trials=10) > 1e-3


def test_adjoint_check_is_scale_invariant():
    A = np.random.default_rng(1).normal(size=(3, 4))
    for scale in (1e-280, 1.0, 1e280):
        assert adjoint_consistency_check(matrix_op(scale * A), trials=20) <= 1e-14
    zero_forward = LinOp(2, 2, lambda x: np.zeros(2), lambda y: y, 1.0)
    assert adjoint_consistency_check(zero_forward, trials=5) >= 0.5


def test_adjoint_check_shape_mismatch():
    bad = LinOp(3, 2, lambda x: x[:2], lambda y: y, 1.0)
    with pytest.raises(StructuralError):
        adjoint_consistency_check(bad)


def test_adjoint_check_needs_trials():
    with pytest.raises(ValueError):
        adjoint_consistency_check(identity(2), trials=0)


# power iteration


def test_power_identity():
    assert power_iteration_norm(identity(5)) == pytest.approx(1.0, abs=1e-9)


def test_power_neumann_diff_n4():
    D = neumann_diff_matrix(4)
    exact = np.linalg.norm(D, 2)  # explicit eigensolve of D'D
    assert exact == pytest.approx(math.sqrt(2 + math.sqrt(2)), abs=1e-12)
    op = diff_v((4, 1, 1))
    assert power_iteration_norm(op, iters=2000) == pytest.approx(exact, abs=1e-6)
    assert power_iteration_norm(op, iters=2000) == pytest.approx(1.847759, abs=1e-6)


def test_power_dvdb_below_four():
    op = compose(diff_v((8, 8, 4)), diff_b((8, 8, 4)))
    assert power_iteration_norm(op, iters=500) <= 4 + 1e-6
    assert op.norm_bound == 4.0


def test_power_zero_operator_returns_zero():
    zero = LinOp(3, 2, lambda x: np.zeros(2), lambda y: np.zeros(3), 0.0)
    assert power_iteration_norm(zero) == 0.0


def test_power_nonfinite_raises():
    bad = LinOp(2, 2, lambda x: np.full(2, np.nan), lambda y: np.full(2, np.nan), 1.0)
    with pytest.raises(NumericError):
        power_iteration_norm(bad)


def test_power_nondecreasing_in_iters():
    rng = np.random.default_rng(1)
    op = matrix_op(rng.normal(size=(6, 5)))
    est = [power_iteration_norm(op, iters=k, seed=3) for k in (1, 2, 5, 10, 50, 200)]
    assert all(b >= a for a, b in zip(est, est[1:]))
    assert est[-1] <= op.norm_bound + 1e-12


# composition


def test_compose_identity():
    assert compose(identity(3), identity(3)).norm_bound == 1.0


def test_compose_scalars():
    op = compose(identity(4, 2.0), identity(4, 3.0))
    assert op.norm_bound == 6.0
    assert power_iteration_norm(op) == pytest.approx(6.0, abs=1e-9)


def test_compose_shape_mismatch():
    with pytest.raises(StructuralError):
        compose(identity(3), identity(4))


# difference operators


def test_diff_constant_kernel():
    for d in (diff_v, diff_h, diff_b):
        assert np.all(d((3, 4, 2)).forward(np.full(24, 7.0)) == 0)


def test_diff_v_values():
    op = diff_v((2, 1, 1))
    np.testing.assert_array_equal(op.forward(np.array([1.0, 4.0])), [-3.0, 0.0])
    np.testing.assert_array_equal(op.adjoint(np.array([1.0, 0.0])), [1.0, -1.0])
    np.testing.assert_array_equal(materialize(op), [[1.0, -1.0], [0.0, 0.0]])


@pytest.mark.parametrize("axis,make", [(0, diff_v), (1, diff_h), (2, diff_b)])
def test_diff_matches_kronecker_matrix(axis, make):
    dims = (3, 4, 2)
    np.testing.assert_array_equal(materialize(make(dims)), cube_diff_matrix(dims, axis))


def test_diff_needs_cube():
    with pytest.raises(StructuralError):
        diff_v((4, 4))


# graph difference


def test_graph_single_edge():
    g = GraphSpec.from_edges(2, [(0, 1, 1.0)])
    op = graph_diff(g)
    np.testing.assert_array_equal(op.forward(np.array([0.0, 1.0])), [1.0])
    assert np.linalg.norm(materialize(op), 2) == pytest.approx(math.sqrt(2))
    assert graph_diff_bound_printed(g) == 2.0
    assert math.sqrt(2) <= op.norm_bound <= 2.0


def test_graph_constant_signal_zero():
    g = GraphSpec.from_edges(4, [(0, 1, 0.5), (1, 2, 2.0), (3, 0, 1.0), (2, 3, 0.3)])
    assert np.all(graph_diff(g).forward(np.full(4, 3.0)) == 0)


def test_graph_edge_order_and_groups():
    g = GraphSpec.from_edges(3, [(2, 1, 1.0), (0, 2, 2.0), (0, 1, 3.0)])
    rows, cols, w = g.edges()
    assert list(zip(rows, cols)) == [(0, 1), (0, 2), (2, 1)]
    np.testing.assert_array_equal(graph_diff_groups(g), [2, 1])
    D = materialize(graph_diff(g))
    np.testing.assert_array_equal(D, [[-3, 3, 0], [-2, 0, 2], [0, 1, -1]])


def test_graph_bound_is_valid_and_no_looser_than_printed():
    rng = np.random.default_rng(0)
    n = 12
    edges = [(i, j, rng.uniform(0.1, 2)) for i in range(n) for j in range(n) if i != j and rng.random() < 0.3]
    g = GraphSpec.from_edges(n, edges)
    op = graph_diff(g)
    true = np.linalg.norm(materialize(op), 2)
    assert true <= op.norm_bound + 1e-9
    assert op.norm_bound <= max(graph_diff_bound_printed(g), 1.01 * true) + 1e-12


def test_graph_without_edges():
    op = graph_diff(GraphSpec.from_edges(3, []))
    assert op.out_shape.size == 0
    assert op.forward(np.ones(3)).shape == (0,)


def test_graph_validation():
    with pytest.raises(StructuralError):
        GraphSpec(2, sp.csr_array(np.array([[1.0, 0.0], [0.0, 0.0]])))
    with pytest.raises(StructuralError):
        GraphSpec.from_edges(2, [(0, 1, -1.0)])


# sampling


def test_sampling():
    op = sampling_op([True, False, True])
    np.testing.assert_array_equal(op.forward(np.array([5.0, 6.0, 7.0])), [5.0, 7.0])
    np.testing.assert_array_equal(op.adjoint(np.array([5.0, 7.0])), [5.0, 0.0, 7.0])
    assert power_iteration_norm(op) == pytest.approx(1.0, abs=1e-9)


def test_sampling_empty_mask():
    with pytest.raises(StructuralError):
        sampling_op([False, False])


# matrices


def test_matrix_op_bounds():
    assert matrix_op(np.eye(2)).norm_bound == pytest.approx(1.0)
    assert matrix_op(np.array([[3.0, 0.0], [0.0, 1.0]])).norm_bound == pytest.approx(3.0, abs=1e-9)


def test_matrix_op_nonfinite():
    with pytest.raises(NumericError):
        matrix_op(np.array([[np.inf]]))


def test_blockdiag_scalar_blocks():
    op = blockdiag_matrix_op(np.array([[2.0]]), 3)
    np.testing.assert_array_equal(op.forward(np.array([1.0, 2.0, 3.0])), [2.0, 4.0, 6.0])


@pytest.mark.parametrize("pixel_major", [True, False])
def test_blockdiag_layouts(pixel_major):
    rng = np.random.default_rng(2)
    A = rng.normal(size=(4, 3))
    op = blockdiag_matrix_op(A, 5, pixel_major=pixel_major)
    ref = np.kron(np.eye(5), A) if pixel_major else np.kron(A, np.eye(5))
    np.testing.assert_allclose(basis_matrix(op.forward, 15), ref, atol=1e-14)
    np.testing.assert_allclose(materialize(op), ref, atol=0)
    assert op.norm_bound == pytest.approx(np.linalg.norm(A, 2))
    assert adjoint_consistency_check(op, trials=20) <= 1e-12


def test_materialize_identity_and_roundtrip():
    np.testing.assert_array_equal(materialize(identity(3)), np.eye(3))
    op = compose(diff_h((3, 3, 2)), diff_b((3, 3, 2)))
    back = matrix_op(materialize(op))
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = rng.normal(size=18)
        np.testing.assert_allclose(back.forward(x), op.forward(x), atol=1e-12)


def test_materialize_cap():
    with pytest.raises(CapacityError, match="cap of 10"):
        materialize(identity(4), cap=10)


# lemma 1


def test_lemma1_examples():
    B, C = lemma1_decompose(np.array([[3.0]]), 0.0)
    np.testing.assert_allclose(np.abs(B), [[3.0]])
    np.testing.assert_allclose(np.abs(C), [[1.0]])
    B, C = lemma1_decompose(np.array([[3.0]]), 0.5)
    assert np.linalg.norm(B, 2) == pytest.approx(math.sqrt(3))
    assert np.linalg.norm(C, 2) == pytest.approx(math.sqrt(3))
    A = np.array([[0.0, 2.0], [1.0, 0.0]])
    B, C = lemma1_decompose(A, 0.5)
    assert np.linalg.norm(B, 2) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert np.linalg.norm(C, 2) == pytest.approx(math.sqrt(2), abs=1e-12)
    np.testing.assert_allclose(B @ C, A, atol=1e-12)


def test_lemma1_zero_matrix():
    with pytest.raises(DegenerateError):
        lemma1_decompose(np.zeros((2, 2)), 0.5)


def test_lemma1_rank_deficient():
    A = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
    B, C = lemma1_decompose(A, 0.3)
    np.testing.assert_allclose(B @ C, A, atol=1e-12)


# grids


def test_grid_validation():
    with pytest.raises(StructuralError):
        OpGrid([[None, None]])
    with pytest.raises(StructuralError):
        OpGrid([[identity(2)], [identity(3)]])
    with pytest.raises(StructuralError):
        OpGrid([[identity(2), None]])  # second column has no known shape
    OpGrid([[identity(2), None]], in_shapes=[None, 5])


def test_grid_forward_adjoint_match_stacked_matrix():
    rng = np.random.default_rng(5)
    A, B, C = rng.normal(size=(2, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    grid = OpGrid([[matrix_op(A), None], [matrix_op(B), matrix_op(C)]])
    K = np.block([[A, np.zeros((2, 2))], [B, C]])
    L = grid.as_linop()
    np.testing.assert_allclose(basis_matrix(L.forward, 5), K, atol=1e-14)
    np.testing.assert_allclose(basis_matrix(L.adjoint, 6), K.T, atol=1e-14)
    assert np.isnan(grid.mu()[0, 1])
