from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from renormindex.charclass import FormPolynomial, wedge
from renormindex.clifford import (
    CliffordElement, MetricForm, basis_monomials, chirality_matrix, clifford_mul, filtration_degree,
    from_matrix, matrix_representation, matrix_supertrace, quantize, supertrace,
)


def e(n, *idx, c=1):
    return CliffordElement.monomial(n, idx, c)


@st.composite
def elements(draw, n, homogeneous=False):
    subsets = list(basis_monomials(n))
    if homogeneous:
        parity = draw(st.integers(0, 1))
        subsets = [s for s in subsets if len(s) % 2 == parity]
    picked = draw(st.lists(st.sampled_from(subsets), max_size=6, unique=True))
    coeffs = {s: complex(draw(st.integers(-3, 3)), draw(st.integers(-3, 3))) for s in picked}
    return CliffordElement(n, coeffs)


def test_generator_squares_to_minus_one():
    assert clifford_mul(e(2, 0), e(2, 0)) == CliffordElement.scalar(2, -1)


def test_unit_law():
    a = e(4, 0, 2, c=3) + e(4, 1)
    one = CliffordElement.scalar(4)
    assert clifford_mul(one, a) == a
    assert clifford_mul(a, one) == a


def test_bivector_square():
    b = e(2, 0, 1)
    assert clifford_mul(b, b) == CliffordElement.scalar(2, -1)


def test_relation_with_general_metric():
    g = MetricForm(np.array([[2.0, 0.5], [0.5, 1.0]]))
    e0, e1 = e(2, 0), e(2, 1)
    anti = clifford_mul(e0, e1, g) + clifford_mul(e1, e0, g)
    assert anti.isclose(CliffordElement.scalar(2, -1.0))
    assert clifford_mul(e0, e0, g).isclose(CliffordElement.scalar(2, -2.0))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        clifford_mul(e(2, 0), e(4, 0))
    with pytest.raises(ValueError):
        clifford_mul(e(2, 0), e(2, 1), MetricForm.identity(3))


def test_metric_must_be_positive():
    with pytest.raises(ValueError):
        MetricForm(np.array([[1.0, 0.0], [0.0, -1.0]]))


@pytest.mark.parametrize("n, top", [(2, -2j), (4, -4), (6, 8j)])
def test_supertrace_values(n, top):
    assert supertrace(e(n, *range(n)), orthonormal_frame=True) == top
    assert supertrace(CliffordElement.scalar(n), orthonormal_frame=True) == 0


def test_supertrace_requires_flag_and_even_n():
    with pytest.raises(ValueError):
        supertrace(e(2, 0, 1), orthonormal_frame=False)
    with pytest.raises(ValueError):
        supertrace(e(3, 0, 1, 2), orthonormal_frame=True)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_supertrace_exhaustive(n):
    for s in basis_monomials(n):
        val = supertrace(CliffordElement.monomial(n, s), orthonormal_frame=True)
        if len(s) < n:
            assert val == 0
        else:
            assert val == (-2j) ** (n // 2)


def test_supertrace_keeps_exact_coefficients():
    a = e(4, 0, 1, 2, 3, c=Fraction(1, 3))
    assert supertrace(a, orthonormal_frame=True) == Fraction(-4, 3)


def test_filtration_degree():
    assert filtration_degree(CliffordElement.scalar(3)) == 0
    assert filtration_degree(e(3, 0, 1) + e(3, 2)) == 2
    assert filtration_degree(clifford_mul(e(3, 0), e(3, 0))) == 0
    assert filtration_degree(CliffordElement(3)) == 0


def test_quantize_examples():
    assert quantize(FormPolynomial.constant(2, 1)) == CliffordElement.scalar(2)
    f = Fraction(5, 7)
    assert quantize(FormPolynomial.monomial(2, (0, 1), f)) == e(2, 0, 1, c=f)
    w = wedge(FormPolynomial.monomial(4, (0, 1)), FormPolynomial.monomial(4, (2, 3)))
    assert quantize(w) == e(4, 0, 1, 2, 3)


def test_quantize_matches_product_of_generators_on_all_degree4_monomials():
    # exterior monomial dx^S maps to the ordered product of generators
    n = 6
    for s in combinations(range(n), 4):
        form = FormPolynomial.constant(n, 1)
        prod = CliffordElement.scalar(n)
        for i in s:
            form = wedge(form, FormPolynomial.one_form(n, i))
            prod = clifford_mul(prod, e(n, i))
        assert quantize(form) == prod


def test_quantize_rejects_matrix_forms():
    with pytest.raises(ValueError):
        quantize(FormPolynomial(2, {(0, 1): np.eye(2)}))


def test_matrix_representation_basics():
    g = matrix_representation(e(2, 0))
    assert np.allclose(g @ g, -np.eye(2))
    gamma = chirality_matrix(2)
    assert np.allclose(gamma, 1j * matrix_representation(e(2, 0, 1)))
    assert np.allclose(gamma @ gamma, np.eye(2))
    assert matrix_supertrace(matrix_representation(e(2, 0, 1)), 2) == pytest.approx(-2j)
    with pytest.raises(ValueError):
        matrix_representation(e(3, 0))


@pytest.mark.parametrize("n", [2, 4, 6])
def test_matrix_supertrace_agrees_on_basis(n):
    for s in basis_monomials(n):
        m = CliffordElement.monomial(n, s)
        assert matrix_supertrace(matrix_representation(m), n) == pytest.approx(complex(supertrace(m, orthonormal_frame=True)), abs=1e-12)


def test_from_matrix_roundtrip(rng):
    from renormindex.clifford import random_element

    a = random_element(4, rng)
    assert from_matrix(matrix_representation(a), 4, atol=1e-12).isclose(a)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_associativity_and_distributivity(data):
    n = data.draw(st.sampled_from([2, 3, 4, 6]))
    a, b, c = (data.draw(elements(n)) for _ in range(3))
    assert clifford_mul(clifford_mul(a, b), c) == clifford_mul(a, clifford_mul(b, c))
    assert clifford_mul(a, b + c) == clifford_mul(a, b) + clifford_mul(a, c)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_product_degree_bound(data):
    n = data.draw(st.sampled_from([3, 4, 5]))
    a, b = data.draw(elements(n)), data.draw(elements(n))
    assert filtration_degree(clifford_mul(a, b)) <= filtration_degree(a) + filtration_degree(b)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_supertrace_kills_supercommutators(data):
    n = data.draw(st.sampled_from([2, 4, 6]))
    a, b = data.draw(elements(n, homogeneous=True)), data.draw(elements(n, homogeneous=True))
    pa, pb = a.parity or 0, b.parity or 0
    lhs = supertrace(clifford_mul(a, b), orthonormal_frame=True)
    rhs = supertrace(clifford_mul(b, a), orthonormal_frame=True)
    assert lhs == (-1) ** (pa * pb) * rhs


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_representation_is_homomorphism(data):
    n = data.draw(st.sampled_from([2, 4]))
    a, b = data.draw(elements(n)), data.draw(elements(n))
    lhs = matrix_representation(clifford_mul(a, b))
    rhs = matrix_representation(a) @ matrix_representation(b)
    assert np.allclose(lhs, rhs, atol=1e-12)
