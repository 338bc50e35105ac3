import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnschro.mesh import MacroMesh, Mesh1D


def test_uniform_breakpoints():
    m = Mesh1D.uniform(-2.0, 2.0, 8)
    assert m.n_elements == 8
    np.testing.assert_allclose(m.breakpoints(), np.linspace(-2, 2, 9))
    np.testing.assert_allclose(m.widths(), 0.5)
    assert m.is_uniform()


def test_refine_single_element():
    m = Mesh1D.uniform(0.0, 1.0, 4)
    m2 = m.refine([1])
    assert m2.n_elements == 5
    np.testing.assert_allclose(
        m2.breakpoints(), [0.0, 0.25, 0.375, 0.5, 0.75, 1.0]
    )
    assert m2.is_refinement_of(m)
    assert not m.is_refinement_of(m2)


def test_refine_all_matches_uniform():
    m = Mesh1D.uniform(0.0, 1.0, 4).refine(range(4))
    u = Mesh1D.uniform(0.0, 1.0, 8)
    np.testing.assert_allclose(m.breakpoints(), u.breakpoints())


def test_coarsen_merges_sibling_pairs_only():
    m = Mesh1D.uniform(0.0, 1.0, 4)
    fine = m.refine([0, 1])  # 6 elements: two bisected macro cells
    # elements 0,1 are siblings; 2,3 are siblings; 4,5 are macro cells
    back = fine.coarsen([0, 1, 2, 3])
    np.testing.assert_allclose(back.breakpoints(), m.breakpoints())
    # macro cells at depth 0 cannot coarsen further
    same = m.coarsen(range(4))
    np.testing.assert_allclose(same.breakpoints(), m.breakpoints())


def test_coarsen_requires_both_siblings_marked():
    m = Mesh1D.uniform(0.0, 1.0, 2).refine([0, 1])  # 4 elements
    out = m.coarsen([0])  # left sibling only: no merge
    assert out.n_elements == 4
    out = m.coarsen([0, 1])
    assert out.n_elements == 3
    np.testing.assert_allclose(out.breakpoints(), [0.0, 0.5, 0.75, 1.0])


def test_coarsen_non_sibling_neighbors_not_merged():
    # refine 0 then its right child: elements at depths [1,2,2,0]
    m = Mesh1D.uniform(0.0, 1.0, 2).refine([0]).refine([1])
    assert m.n_elements == 4
    # elements 1,2 are siblings (children of the right half of cell 0);
    # elements 0,1 touch but are not siblings
    out = m.coarsen([0, 1])
    assert out.n_elements == 4
    out = m.coarsen([1, 2])
    assert out.n_elements == 3


def test_common_coarsening_and_refinement():
    base = Mesh1D.uniform(0.0, 1.0, 2)
    a = base.refine([0])          # breaks .25
    b = base.refine([1])          # breaks .75
    cc = a.common_coarsening(b)
    np.testing.assert_allclose(cc.breakpoints(), base.breakpoints())
    cr = a.common_refinement(b)
    np.testing.assert_allclose(cr.breakpoints(), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert cr.is_refinement_of(a)
    assert cr.is_refinement_of(b)
    assert a.is_refinement_of(cc)
    assert b.is_refinement_of(cc)


def test_locate_and_containing():
    m = Mesh1D.uniform(0.0, 1.0, 4)
    f = m.refine([2])
    x = np.array([0.0, 0.1, 0.5, 0.55, 0.70, 1.0])
    np.testing.assert_array_equal(f.locate(x), [0, 0, 2, 2, 3, 4])
    ce = f.containing_elements(m)
    np.testing.assert_array_equal(ce, [0, 1, 2, 2, 3])


def test_json_roundtrip():
    m = Mesh1D.uniform(-1.0, 2.0, 3).refine([1]).refine([0, 3])
    m2 = Mesh1D.from_json(m.to_json())
    assert m2 == m
    np.testing.assert_allclose(m2.breakpoints(), m.breakpoints())


@st.composite
def dyadic_meshes(draw, n_macro=3):
    m = Mesh1D.uniform(0.0, 1.0, n_macro)
    for _ in range(draw(st.integers(0, 4))):
        marks = draw(
            st.lists(st.integers(0, m.n_elements - 1), min_size=1, max_size=4)
        )
        m = m.refine(sorted(set(marks)))
    return m


@given(dyadic_meshes(), dyadic_meshes())
@settings(max_examples=60, deadline=None)
def test_merge_properties(a, b):
    cr = a.common_refinement(b)
    cc = a.common_coarsening(b)
    assert cr.is_refinement_of(a) and cr.is_refinement_of(b)
    assert a.is_refinement_of(cc) and b.is_refinement_of(cc)
    # breakpoint sets: union resp. intersection
    ba, bb = set(a.breakpoints()), set(b.breakpoints())
    assert set(cr.breakpoints()) == ba | bb
    assert set(cc.breakpoints()) == ba & bb


@given(dyadic_meshes())
@settings(max_examples=40, deadline=None)
def test_refine_coarsen_roundtrip(m):
    n = m.n_elements
    fine = m.refine(range(n))
    assert fine.n_elements == 2 * n
    back = fine.coarsen(range(2 * n))
    assert back == m


def test_distinct_macro_meshes_not_comparable():
    a = Mesh1D.uniform(0.0, 1.0, 2)
    b = Mesh1D.uniform(0.0, 1.0, 3)
    assert not a.is_refinement_of(b)
    assert not b.is_refinement_of(a)
    with pytest.raises(ValueError):
        a.common_refinement(b)


def test_macro_mesh_eq():
    assert MacroMesh(0.0, 1.0, 4) == MacroMesh(0.0, 1.0, 4)
    assert MacroMesh(0.0, 1.0, 4) != MacroMesh(0.0, 1.0, 5)
