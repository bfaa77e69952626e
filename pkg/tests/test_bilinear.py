import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from abipnn.bilinear import (
    BUILTIN_KINDS,
    DimensionMismatchError,
    builtin_product,
    custom_product,
    get_product,
    load_product_json,
    matrix_rep,
    product,
    transmuted_rep,
)

from oracles import MATRIX_TABLES, TRANSMUTED_TABLES, symbolic

CONV_DIM = 5


def all_builtins(conv_dim=CONV_DIM):
    return [builtin_product(k, conv_dim if n is None else None) for k, n in BUILTIN_KINDS.items()]


class TestBuiltins:
    def test_vector3_e1_e2(self):
        p = builtin_product("vector3")
        np.testing.assert_array_equal(product([1, 0, 0], [0, 1, 0], p), [0, 0, 1])

    def test_quaternion_i_times_j_is_k(self):
        p = builtin_product("quaternion")
        np.testing.assert_array_equal(p([0, 1, 0, 0], [0, 0, 1, 0]), [0, 0, 0, 1])

    def test_quaternion_units_square_to_minus_one(self):
        p = builtin_product("quaternion")
        eye = np.eye(4)
        for n in (1, 2, 3):
            np.testing.assert_array_equal(p(eye[n], eye[n]), -eye[0])
        ijk = p(p(eye[1], eye[2]), eye[3])
        np.testing.assert_array_equal(ijk, -eye[0])

    def test_scalar(self):
        np.testing.assert_array_equal(builtin_product("scalar")([2.0], [3.0]), [6.0])

    @pytest.mark.parametrize("kind,bad", [("vector3", 4), ("quaternion", 3), ("seven_dim_vector", 8), ("scalar", 2)])
    def test_fixed_dimension_mismatch(self, kind, bad):
        with pytest.raises(DimensionMismatchError):
            builtin_product(kind, bad)

    def test_convolution_needs_dim(self):
        with pytest.raises(DimensionMismatchError):
            builtin_product("circular")

    def test_cached_instance(self):
        assert builtin_product("circular", 6) is builtin_product("circular", 6)
        assert get_product("circular_6") is builtin_product("circular", 6)
        assert get_product("circular", 6) is builtin_product("circular", 6)

    def test_seven_dim_is_a_cross_product(self, rng):
        # |a x b|^2 = |a|^2 |b|^2 - (a.b)^2 and a x b orthogonal to a, b
        p = builtin_product("seven_dim_vector")
        for _ in range(50):
            a, b = rng.normal(size=(2, 7))
            c = p(a, b)
            assert c @ c == pytest.approx((a @ a) * (b @ b) - (a @ b) ** 2, rel=1e-12)
            assert abs(c @ a) < 1e-12 and abs(c @ b) < 1e-12


class TestProduct:
    def test_circular_identity(self):
        p = builtin_product("circular", 3)
        np.testing.assert_array_equal(p([1, 2, 3], [1, 0, 0]), [1, 2, 3])

    def test_circular_unit_shift(self):
        p = builtin_product("circular", 3)
        np.testing.assert_array_equal(p([1, 2, 3], [0, 1, 0]), [3, 1, 2])

    def test_cross_of_parallel(self):
        np.testing.assert_array_equal(builtin_product("vector3")([1, 0, 0], [1, 0, 0]), [0, 0, 0])

    def test_quaternion_right_identity(self, rng):
        a = rng.normal(size=4)
        np.testing.assert_array_equal(builtin_product("quaternion")(a, [1, 0, 0, 0]), a)

    def test_circular_matches_fft_convolution(self, rng):
        # independent route: circular convolution theorem
        for n in (1, 2, 5, 8):
            p = builtin_product("circular", n)
            a, b = rng.normal(size=(2, n))
            ref = np.real(np.fft.ifft(np.fft.fft(a) * np.fft.fft(b)))
            np.testing.assert_allclose(p(a, b), ref, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            builtin_product("vector3")([1, 2], [1, 2, 3])

    def test_basis_consistency(self):
        for p in all_builtins():
            eye = np.eye(p.dim)
            for m in range(p.dim):
                for n in range(p.dim):
                    assert np.array_equal(p(eye[m], eye[n]), p.coeffs[m, n])


class TestRepresentations:
    @pytest.mark.parametrize("key", list(MATRIX_TABLES))
    def test_matrix_rep_matches_literal_table(self, key, rng):
        kind, n = key
        p = builtin_product(kind, n)
        table = MATRIX_TABLES[key]
        # basis vectors pin each symbol's position and sign exactly
        for m in range(p.dim):
            e = np.eye(p.dim)[m]
            np.testing.assert_array_equal(matrix_rep(e, p), symbolic(table, e))
        w = rng.normal(size=p.dim)
        np.testing.assert_allclose(matrix_rep(w, p), symbolic(table, w), atol=0)

    @pytest.mark.parametrize("key", list(TRANSMUTED_TABLES))
    def test_transmuted_rep_matches_literal_table(self, key):
        kind, n = key
        p = builtin_product(kind, n)
        for m in range(p.dim):
            e = np.eye(p.dim)[m]
            np.testing.assert_array_equal(transmuted_rep(e, p), symbolic(TRANSMUTED_TABLES[key], e))

    def test_circulant_general_pattern(self, rng):
        # first column is w, w1 on the diagonal, each column a cyclic shift down
        for n in (1, 2, 3, 7, 10):
            w = rng.normal(size=n)
            m = matrix_rep(w, builtin_product("circular", n))
            for c in range(n):
                np.testing.assert_array_equal(m[:, c], np.roll(w, c))

    def test_skew_circulant_general_pattern(self, rng):
        for n in (2, 3, 6):
            w = rng.normal(size=n)
            m = matrix_rep(w, builtin_product("skew_circular", n))
            circ = np.array([[w[(r - c) % n] for c in range(n)] for r in range(n)])
            np.testing.assert_array_equal(m, np.where(np.triu(np.ones((n, n)), 1) > 0, -circ, circ))

    def test_reverse_time_is_flipped_circulant(self, rng):
        for n in (1, 2, 5, 9):
            w = rng.normal(size=n)
            circ = matrix_rep(w, builtin_product("circular", n))
            np.testing.assert_array_equal(matrix_rep(w, builtin_product("reverse_time_circular", n)), circ[::-1])

    def test_matrix_rep_columns(self, rng):
        for p in all_builtins():
            w = rng.normal(size=p.dim)
            m = matrix_rep(w, p)
            for n in range(p.dim):
                np.testing.assert_allclose(m[:, n], p(w, np.eye(p.dim)[n]), atol=1e-15)

    def test_vector3_transmuted_is_minus_matrix(self, rng):
        p = builtin_product("vector3")
        q = rng.normal(size=3)
        for n in range(3):
            e = np.eye(3)[n]
            np.testing.assert_array_equal(p(e, q), -p(q, e))
        np.testing.assert_array_equal(transmuted_rep(q, p), -matrix_rep(q, p))

    def test_circular_transmuted_equals_matrix(self, rng):
        p = builtin_product("circular", 3)
        a = rng.normal(size=3)
        np.testing.assert_array_equal(transmuted_rep(a, p), matrix_rep(a, p))

    def test_quaternion_unit_transmuted_identity(self):
        np.testing.assert_array_equal(transmuted_rep([1, 0, 0, 0], builtin_product("quaternion")), np.eye(4))

    def test_zero_vector_gives_zero_matrix(self):
        for p in all_builtins():
            assert not matrix_rep(np.zeros(p.dim), p).any()

    def test_representation_identities(self, rng):
        for p in all_builtins():
            pq = rng.uniform(-1, 1, size=(2, 1000, p.dim))
            ref = p(pq[0], pq[1])
            left = np.einsum("bkn,bn->bk", p.matrix_reps(pq[0]), pq[1])
            right = np.einsum("bkm,bm->bk", p.transmuted_reps(pq[1]), pq[0])
            assert np.abs(left - ref).max() < 1e-12
            assert np.abs(right - ref).max() < 1e-12

    def test_batched_reps_match_single(self, rng):
        p = builtin_product("quaternion")
        w = rng.normal(size=(3, 2, 4))
        reps = p.matrix_reps(w)
        assert reps.shape == (3, 2, 4, 4)
        np.testing.assert_array_equal(reps[1, 0], matrix_rep(w[1, 0], p))


vec = arrays(np.float64, 7, elements=st.floats(-10, 10))


@settings(max_examples=60, deadline=None)
@given(vec, vec, vec, st.floats(-5, 5), st.floats(-5, 5), st.sampled_from(list(BUILTIN_KINDS)))
def test_bilinearity(p1, p2, q, alpha, beta, kind):
    prod = builtin_product(kind, 7 if BUILTIN_KINDS[kind] is None else None)
    n = prod.dim
    p1, p2, q = p1[:n], p2[:n], q[:n]
    scale = 1.0 + np.abs(np.concatenate([p1, p2, q])).max() ** 2 * 25
    lhs = prod(alpha * p1 + beta * p2, q)
    rhs = alpha * prod(p1, q) + beta * prod(p2, q)
    assert np.abs(lhs - rhs).max() < 1e-12 * scale
    lhs = prod(q, alpha * p1 + beta * p2)
    rhs = alpha * prod(q, p1) + beta * prod(q, p2)
    assert np.abs(lhs - rhs).max() < 1e-12 * scale


def test_bilinearity_unit_range(rng):
    for prod in all_builtins():
        p1, p2, q = rng.uniform(-1, 1, size=(3, 200, prod.dim))
        a, b = rng.uniform(-1, 1, size=2)
        assert np.abs(prod(a * p1 + b * p2, q) - a * prod(p1, q) - b * prod(p2, q)).max() < 1e-12
        assert np.abs(prod(q, a * p1 + b * p2) - a * prod(q, p1) - b * prod(q, p2)).max() < 1e-12


class TestCustom:
    def test_manual_circular_matches_builtin(self, rng):
        ref = builtin_product("circular", 3)
        mine = custom_product("manual_circ3", np.array(ref.coeffs))
        p, q = rng.normal(size=(2, 100, 3))
        np.testing.assert_array_equal(mine(p, q), ref(p, q))

    def test_zero_product(self, rng):
        z = custom_product("zero4", np.zeros((4, 4, 4)))
        assert not z(rng.normal(size=4), rng.normal(size=4)).any()

    def test_scalar_custom(self):
        s = custom_product("my_scalar", [[[1.0]]])
        np.testing.assert_array_equal(s([2.0], [-3.0]), [-6.0])

    def test_rejects_non_finite(self):
        c = np.zeros((2, 2, 2))
        c[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            custom_product("bad_nan", c)

    def test_rejects_conflicting_duplicate(self):
        first = custom_product("dup_once", np.zeros((2, 2, 2)))
        assert custom_product("dup_once", np.zeros((2, 2, 2))) is first
        with pytest.raises(ValueError):
            custom_product("dup_once", np.ones((2, 2, 2)))
        with pytest.raises(ValueError):
            custom_product("circular_3", np.zeros((3, 3, 3)))

    def test_rejects_bad_shape(self):
        with pytest.raises(DimensionMismatchError):
            custom_product("bad_shape", np.zeros((2, 3, 2)))

    def test_load_json(self, tmp_path):
        coeffs = np.array(builtin_product("skew_circular", 2).coeffs).tolist()
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"name": "json_complex", "dim": 2, "coeffs": coeffs}))
        prod = load_product_json(path)
        assert get_product("json_complex") is prod
        # complex multiplication: (1+2i)(3-1i) = 5 + 5i
        np.testing.assert_array_equal(prod([1, 2], [3, -1]), [5, 5])


class TestAlgebraFlags:
    def test_commutativity(self):
        assert builtin_product("circular", 4).commutativity() == "commutative"
        assert builtin_product("vector3").commutativity() == "anticommutative"
        assert builtin_product("quaternion").commutativity() == "noncommutative"
        assert builtin_product("seven_dim_vector").commutativity() == "anticommutative"

    def test_identity_elements(self):
        assert builtin_product("scalar").identity_element() == 0
        assert builtin_product("circular", 5).identity_element() == 0
        assert builtin_product("quaternion").identity_element() == 0
        assert builtin_product("seven_dim_vector").identity_element() is None
        assert builtin_product("vector3").identity_element() is None
