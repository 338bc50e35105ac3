"""One-dimensional meshes over a fixed macro grid of cells.

Every mesh in a run shares the same macro grid; each macro cell carries a
binary bisection tree whose leaves are the mesh elements.  An element is
identified by the triple (cell, depth, pos): macro cell index, bisection
depth, and position among the 2**depth dyadic intervals of that cell.  The
identifier is stable across refinement and coarsening of other elements,
which makes meshes from different time steps comparable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MAX_DEPTH = 52  # dyadic widths stay exact in float64 below this


@dataclass(frozen=True)
class MacroMesh:
    """Uniform macro grid of ``n_cells`` cells on [a, b]."""

    a: float
    b: float
    n_cells: int

    @property
    def width(self) -> float:
        return (self.b - self.a) / self.n_cells

    def __eq__(self, other):
        return (
            isinstance(other, MacroMesh)
            and self.a == other.a
            and self.b == other.b
            and self.n_cells == other.n_cells
        )


class Mesh1D:
    """Partition of [a, b] into dyadic leaves of per-cell bisection trees.

    Elements are kept sorted left to right in three parallel arrays
    ``cell``, ``depth``, ``pos``.  Construction validates nothing beyond
    array shapes; use the classmethods.
    """

    __slots__ = ("macro", "cell", "depth", "pos", "_breaks")

    def __init__(self, macro: MacroMesh, cell, depth, pos):
        self.macro = macro
        self.cell = np.asarray(cell, dtype=np.int64)
        self.depth = np.asarray(depth, dtype=np.int64)
        self.pos = np.asarray(pos, dtype=np.int64)
        self._breaks = None

    # ------------------------------------------------------------------
    @classmethod
    def uniform(cls, a: float, b: float, n_elements: int) -> "Mesh1D":
        """Uniform mesh: one macro cell per element, no refinement."""
        macro = MacroMesh(a, b, n_elements)
        idx = np.arange(n_elements, dtype=np.int64)
        z = np.zeros(n_elements, dtype=np.int64)
        return cls(macro, idx, z, z)

    @classmethod
    def from_macro(cls, macro: MacroMesh) -> "Mesh1D":
        idx = np.arange(macro.n_cells, dtype=np.int64)
        z = np.zeros(macro.n_cells, dtype=np.int64)
        return cls(macro, idx, z, z)

    # ------------------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return len(self.cell)

    @property
    def a(self) -> float:
        return self.macro.a

    @property
    def b(self) -> float:
        return self.macro.b

    def widths(self) -> np.ndarray:
        return self.macro.width * np.ldexp(1.0, -self.depth)

    def breakpoints(self) -> np.ndarray:
        """Element boundaries, length n_elements + 1."""
        if self._breaks is None:
            w = self.macro.width
            left = self.macro.a + self.cell * w + np.ldexp(self.pos.astype(float), -self.depth) * w
            self._breaks = np.append(left, self.macro.b)
        return self._breaks

    def midpoints(self) -> np.ndarray:
        br = self.breakpoints()
        return 0.5 * (br[:-1] + br[1:])

    def is_uniform(self) -> bool:
        return bool(np.all(self.depth == self.depth[0])) if self.n_elements else True

    def locate(self, x) -> np.ndarray:
        """Element index containing each point (right-closed at b)."""
        br = self.breakpoints()
        idx = np.searchsorted(br, x, side="right") - 1
        return np.clip(idx, 0, self.n_elements - 1)

    # ------------------------------------------------------------------
    def refine(self, marked) -> "Mesh1D":
        """Bisect the marked elements (indices into the sorted element list)."""
        marked = np.asarray(marked, dtype=np.int64)
        if marked.size == 0:
            return self
        if np.any(self.depth[marked] >= MAX_DEPTH):
            raise ValueError("refinement beyond maximum tree depth")
        keep = np.ones(self.n_elements, dtype=bool)
        keep[marked] = False
        c = [self.cell[keep]]
        d = [self.depth[keep]]
        p = [self.pos[keep]]
        c.append(np.repeat(self.cell[marked], 2))
        dd = np.repeat(self.depth[marked] + 1, 2)
        d.append(dd)
        pp = np.repeat(self.pos[marked] * 2, 2)
        pp[1::2] += 1
        p.append(pp)
        return _sorted_mesh(self.macro, np.concatenate(c), np.concatenate(d), np.concatenate(p))

    def coarsen(self, marked) -> "Mesh1D":
        """Merge sibling pairs where both siblings are marked.

        Removes one tree level per call; unpaired marks are ignored.
        """
        marked = np.asarray(marked, dtype=np.int64)
        if marked.size == 0:
            return self
        is_marked = np.zeros(self.n_elements, dtype=bool)
        is_marked[marked] = True
        # left sibling at index i pairs with i+1: same cell/depth, pos even, pos+1
        i = np.arange(self.n_elements - 1)
        pair = (
            is_marked[:-1]
            & is_marked[1:]
            & (self.cell[:-1] == self.cell[1:])
            & (self.depth[:-1] == self.depth[1:])
            & (self.depth[:-1] > 0)
            & (self.pos[:-1] % 2 == 0)
            & (self.pos[1:] == self.pos[:-1] + 1)
        )
        first = i[pair]
        if first.size == 0:
            return self
        # greedy left-to-right: a right sibling already consumed cannot start a pair
        chosen = []
        last = -2
        for f in first:
            if f > last + 1:
                chosen.append(f)
                last = f
        chosen = np.asarray(chosen, dtype=np.int64)
        drop = np.zeros(self.n_elements, dtype=bool)
        drop[chosen + 1] = True
        cell = self.cell[~drop].copy()
        depth = self.depth[~drop].copy()
        pos = self.pos[~drop].copy()
        # positions of merged leaves in the filtered arrays
        merged = np.searchsorted(np.flatnonzero(~drop), chosen)
        depth[merged] -= 1
        pos[merged] //= 2
        return Mesh1D(self.macro, cell, depth, pos)

    # ------------------------------------------------------------------
    def _check_macro(self, other: "Mesh1D"):
        if self.macro != other.macro:
            raise ValueError("meshes do not share a macro grid")

    def __eq__(self, other):
        return (
            isinstance(other, Mesh1D)
            and self.macro == other.macro
            and self.n_elements == other.n_elements
            and np.array_equal(self.cell, other.cell)
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.pos, other.pos)
        )

    def _edge_keys(self) -> np.ndarray:
        """Exact integer left-edge keys: cell * 2^MAX_DEPTH + pos * 2^(MAX_DEPTH-depth)."""
        return (self.cell << MAX_DEPTH) + (self.pos << (MAX_DEPTH - self.depth))

    def common_coarsening(self, other: "Mesh1D") -> "Mesh1D":
        """Finest mesh that both self and other refine (tree intersection)."""
        return self._merge(other, take_deeper=False)

    def common_refinement(self, other: "Mesh1D") -> "Mesh1D":
        """Coarsest common refinement of self and other (tree union)."""
        return self._merge(other, take_deeper=True)

    def _merge(self, other: "Mesh1D", take_deeper: bool) -> "Mesh1D":
        self._check_macro(other)
        if self == other:
            return self
        one = np.int64(1)
        ra = self._edge_keys() + (one << (MAX_DEPTH - self.depth))
        rb = other._edge_keys() + (one << (MAX_DEPTH - other.depth))
        cell, depth, pos = [], [], []
        i = j = 0
        na, nb = self.n_elements, other.n_elements
        while i < na and j < nb:
            # the emitted leaf's left edge coincides with the deeper (union)
            # resp. shallower (intersection) of the two current leaves
            da, db = self.depth[i], other.depth[j]
            if (da >= db) == take_deeper:
                src, idx, right = self, i, ra[i]
            else:
                src, idx, right = other, j, rb[j]
            cell.append(src.cell[idx])
            depth.append(src.depth[idx])
            pos.append(src.pos[idx])
            while i < na and ra[i] <= right:
                i += 1
            while j < nb and rb[j] <= right:
                j += 1
        return Mesh1D(self.macro, np.array(cell), np.array(depth), np.array(pos))

    def is_refinement_of(self, other: "Mesh1D") -> bool:
        """True when every element of other is a union of elements of self."""
        if self.macro != other.macro:
            return False
        if self == other:
            return True
        if self.n_elements < other.n_elements:
            return False
        # each leaf of self must be a descendant-or-equal of a leaf of other
        owner = other.locate(self.midpoints())
        ok = (
            (self.cell == other.cell[owner])
            & (self.depth >= other.depth[owner])
            & (self.pos >> (self.depth - other.depth[owner]) == other.pos[owner])
        )
        return bool(np.all(ok))

    def containing_elements(self, coarser: "Mesh1D") -> np.ndarray:
        """For each element of self, the index of the element of coarser containing it."""
        self._check_macro(coarser)
        return coarser.locate(self.midpoints())

    # ------------------------------------------------------------------
    def to_json(self) -> str:
        payload = {
            "a": self.macro.a,
            "b": self.macro.b,
            "n_cells": self.macro.n_cells,
            "leaves": [
                [int(c), int(d), int(p)]
                for c, d, p in zip(self.cell, self.depth, self.pos)
            ],
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "Mesh1D":
        payload = json.loads(text)
        macro = MacroMesh(payload["a"], payload["b"], payload["n_cells"])
        leaves = np.asarray(payload["leaves"], dtype=np.int64).reshape(-1, 3)
        return _sorted_mesh(macro, leaves[:, 0], leaves[:, 1], leaves[:, 2])


def _sorted_mesh(macro, cell, depth, pos) -> Mesh1D:
    key = (cell << MAX_DEPTH) + (pos << (MAX_DEPTH - depth))
    order = np.argsort(key, kind="stable")
    return Mesh1D(macro, cell[order], depth[order], pos[order])
