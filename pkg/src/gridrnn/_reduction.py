"""Vietoris-Rips persistence pairs via boundary-matrix reduction.

H0 comes from a union-find pass over the edges in filtration order. Higher
dimensions use the coboundary (anti-transposed) form of the standard column
reduction with the clearing optimization: for dimension p the columns are the
p-simplices in reverse filtration order, each column holding its cofacets,
and a pivot pairing (sigma^p, tau^(p+1)) yields the dim-p bar
(diam(sigma), diam(tau)). Simplices paired as deaths in dimension p-1 are
cleared (skipped) in dimension p. Working in coboundary order means the
(p+1)-simplices are only ever touched lazily as cofacets of processed
columns, so computing H2 never materializes the tetrahedra.

The filtration order within a dimension is (diameter ascending, combinatorial
index descending); the diagram itself does not depend on the tie order. Most
columns pair immediately with their smallest cofacet; a numba batch kernel
handles those against a shared pivot table and defers the rare pivot
collisions to a heap-based resolver in Python.

Adjacency is kept as packed uint64 bitsets, so cofacet enumeration is a few
word ANDs plus set-bit iteration. Combinatorial index of {v0 < ... < vp}:
sum_r binom(v_r, r+1) (colex).
"""

from __future__ import annotations

import heapq

import numpy as np
from numba import njit
from numba import types
from numba.typed import Dict


def binomial_table(n: int, kmax: int = 5) -> np.ndarray:
    table = np.zeros((n + 1, kmax), dtype=np.int64)
    table[:, 0] = 1
    for row in range(1, n + 1):
        for k in range(1, kmax):
            table[row, k] = table[row - 1, k - 1] + table[row - 1, k]
    return table


def adjacency_bits(D: np.ndarray, thresh: float) -> np.ndarray:
    """(n, ceil(n/64)) uint64 bitset adjacency: j set in row i iff i != j and
    D[i, j] <= thresh."""
    n = D.shape[0]
    adj = (D <= thresh) & ~np.eye(n, dtype=bool)
    words = (n + 63) // 64
    bits = np.zeros((n, words), dtype=np.uint64)
    idx_i, idx_j = np.nonzero(adj)
    np.bitwise_or.at(bits, (idx_i, idx_j // 64), np.uint64(1) << (idx_j % 64).astype(np.uint64))
    return bits


@njit(cache=True, inline="always")
def _popcount(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True, inline="always")
def _ctz(x):
    # count trailing zeros of a nonzero uint64
    c = 0
    while x & np.uint64(1) == np.uint64(0):
        x >>= np.uint64(1)
        c += 1
    return c


@njit(cache=True)
def _enumerate_triangles(ei, ej, ediam, bits, D):
    words = bits.shape[1]
    count = 0
    for e in range(len(ei)):
        i, j = ei[e], ej[e]
        # common neighbors k > j
        start_word = (j + 1) // 64
        head_mask = ~np.uint64(0) << np.uint64((j + 1) % 64)
        for w in range(start_word, words):
            word = bits[i, w] & bits[j, w]
            if w == start_word:
                word &= head_mask
            count += int(_popcount(word))
    ti = np.empty(count, dtype=np.int32)
    tj = np.empty(count, dtype=np.int32)
    tk = np.empty(count, dtype=np.int32)
    tdiam = np.empty(count, dtype=np.float64)
    pos = 0
    for e in range(len(ei)):
        i, j = ei[e], ej[e]
        start_word = (j + 1) // 64
        head_mask = ~np.uint64(0) << np.uint64((j + 1) % 64)
        for w in range(start_word, words):
            word = bits[i, w] & bits[j, w]
            if w == start_word:
                word &= head_mask
            base = w * 64
            while word != np.uint64(0):
                k = base + _ctz(word)
                word &= word - np.uint64(1)
                ti[pos] = i
                tj[pos] = j
                tk[pos] = np.int32(k)
                d = ediam[e]
                if D[i, k] > d:
                    d = D[i, k]
                if D[j, k] > d:
                    d = D[j, k]
                tdiam[pos] = d
                pos += 1
    return ti, tj, tk, tdiam


@njit(cache=True)
def _cofacets(verts, diam_sigma, bits, D, binom):
    """All cofacets of a simplex: returns (combos, diams), unsorted.

    A cofacet adds one common neighbor w of all vertices; its diameter is
    max(diam_sigma, max_v D[w, v]). Vertices of the simplex itself are never
    common neighbors (no self-loops in the adjacency).
    """
    p1 = len(verts)
    words = bits.shape[1]
    total = 0
    for w in range(words):
        word = bits[verts[0], w]
        for r in range(1, p1):
            word &= bits[verts[r], w]
        total += int(_popcount(word))
    combos = np.empty(total, dtype=np.int64)
    diams = np.empty(total, dtype=np.float64)
    count = 0
    for w in range(words):
        word = bits[verts[0], w]
        for r in range(1, p1):
            word &= bits[verts[r], w]
        base = w * 64
        while word != np.uint64(0):
            cand = base + _ctz(word)
            word &= word - np.uint64(1)
            d = diam_sigma
            for r in range(p1):
                dv = D[cand, verts[r]]
                if dv > d:
                    d = dv
            combo = np.int64(0)
            rank = 0
            inserted = False
            for r in range(p1):
                if not inserted and cand < verts[r]:
                    combo += binom[cand, rank + 1]
                    rank += 1
                    inserted = True
                combo += binom[verts[r], rank + 1]
                rank += 1
            if not inserted:
                combo += binom[cand, rank + 1]
            combos[count] = combo
            diams[count] = d
            count += 1
    return combos, diams


@njit(cache=True)
def _batch_reduce(
    cols_v,
    cols_diam,
    proc,
    start,
    cleared,
    bits,
    D,
    binom,
    pivot_key,
    pair_col,
    pair_diam,
    essential,
):
    """Process columns from position `start` in reverse filtration order.

    For each live column, find its minimal cofacet under the order
    (diam asc, combo desc). If that pivot key is unclaimed, claim it and
    record the pair; if the column has no cofacets, mark it essential.
    Returns the position of the first pivot collision (resolved in Python),
    or len(proc) when the block is done.
    """
    m = len(proc)
    for pos in range(start, m):
        ci = proc[pos]
        if cleared[ci]:
            continue
        combos, diams = _cofacets(cols_v[ci], cols_diam[ci], bits, D, binom)
        if len(combos) == 0:
            essential[ci] = True
            continue
        best = 0
        for idx in range(1, len(combos)):
            if diams[idx] < diams[best] or (
                diams[idx] == diams[best] and combos[idx] > combos[best]
            ):
                best = idx
        key = combos[best]
        if key in pivot_key:
            return pos
        pivot_key[key] = np.int64(ci)
        pair_col[ci] = True
        pair_diam[ci] = diams[best]
    return m


class _Block:
    """One dimension of the coboundary reduction."""

    def __init__(self, cols_v, cols_diam, combos, bits, D, binom):
        self.cols_v = cols_v
        self.cols_diam = cols_diam
        self.combos = combos
        self.bits = bits
        self.D = D
        self.binom = binom

    def run(self, cleared_mask):
        m = len(self.cols_diam)
        order = np.lexsort((-self.combos, self.cols_diam))
        proc = order[::-1].copy()
        pivot_key = Dict.empty(types.int64, types.int64)
        pair_col = np.zeros(m, dtype=bool)
        pair_diam = np.zeros(m, dtype=np.float64)
        essential = np.zeros(m, dtype=bool)
        stored: dict = {}  # pivot key -> explicit column entries, when reduced
        pos = 0
        if m:
            pos = _batch_reduce(
                self.cols_v,
                self.cols_diam,
                proc,
                0,
                cleared_mask,
                self.bits,
                self.D,
                self.binom,
                pivot_key,
                pair_col,
                pair_diam,
                essential,
            )
        while pos < m:
            ci = int(proc[pos])
            self._resolve(ci, pivot_key, pair_col, pair_diam, essential, stored)
            pos = _batch_reduce(
                self.cols_v,
                self.cols_diam,
                proc,
                pos + 1,
                cleared_mask,
                self.bits,
                self.D,
                self.binom,
                pivot_key,
                pair_col,
                pair_diam,
                essential,
            )
        return pivot_key, pair_col, pair_diam, essential

    def _raw_entries(self, ci):
        combos, diams = _cofacets(
            self.cols_v[ci], self.cols_diam[ci], self.bits, self.D, self.binom
        )
        return [(diams[idx], -int(combos[idx])) for idx in range(len(combos))]

    def _resolve(self, ci, pivot_key, pair_col, pair_diam, essential, stored):
        """Heap-based reduction of one column whose first pivot collided."""
        heap = self._raw_entries(ci)
        heapq.heapify(heap)
        while True:
            pivot = None
            while heap:
                entry = heapq.heappop(heap)
                parity = 1
                while heap and heap[0] == entry:
                    heapq.heappop(heap)
                    parity ^= 1
                if parity:
                    pivot = entry
                    break
            if pivot is None:
                essential[ci] = True
                return
            key = -pivot[1]
            owner = pivot_key.get(key, -1)
            if owner < 0:
                entries = [pivot]
                entries.extend(self._drain(heap))
                stored[key] = entries
                pivot_key[key] = ci
                pair_col[ci] = True
                pair_diam[ci] = pivot[0]
                return
            heapq.heappush(heap, pivot)
            if key in stored:
                for entry in stored[key]:
                    heapq.heappush(heap, entry)
            else:
                for entry in self._raw_entries(int(owner)):
                    heapq.heappush(heap, entry)

    @staticmethod
    def _drain(heap):
        out = []
        while heap:
            entry = heapq.heappop(heap)
            parity = 1
            while heap and heap[0] == entry:
                heapq.heappop(heap)
                parity ^= 1
            if parity:
                out.append(entry)
        return out


def _h0_union_find(n, ei, ej, ediam, ecombo):
    """Kruskal pass in filtration order; returns (bars, n_components,
    killer_edge_mask)."""
    order = np.lexsort((-ecombo, ediam))
    parent = np.arange(n)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    bars = []
    killer = np.zeros(len(ei), dtype=bool)
    for e in order:
        ra, rb = find(ei[e]), find(ej[e])
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
            killer[e] = True
            if ediam[e] > 0.0:
                bars.append((0.0, float(ediam[e])))
    roots = len({find(v) for v in range(n)})
    return bars, roots, killer


def rips_pairs(D: np.ndarray, max_dim: int = 2, threshold: float | None = None):
    """Persistence of the Rips filtration of a distance matrix.

    Returns (pairs, essentials): pairs[dim] is a list of (birth, death) with
    death > birth; essentials[dim] lists the birth values of classes still
    alive at the threshold. Zero-persistence pairs are dropped. The default
    threshold is the enclosing radius min_i max_j D[i, j], past which the
    complex is a cone and carries no homology beyond one component.
    """
    D = np.ascontiguousarray(D, dtype=np.float64)
    n = D.shape[0]
    if n == 0:
        return {d: [] for d in range(max_dim + 1)}, {d: [] for d in range(max_dim + 1)}
    if threshold is None:
        threshold = float(np.min(np.max(D, axis=1))) if n > 1 else 0.0
    binom = binomial_table(n + 1)
    bits = adjacency_bits(D, threshold)

    iu, ju = np.nonzero(np.triu(D <= threshold, 1))
    ei = iu.astype(np.int32)
    ej = ju.astype(np.int32)
    ediam = D[iu, ju]
    ecombo = binom[ju, 2] + binom[iu, 1]

    pairs = {d: [] for d in range(max_dim + 1)}
    essentials = {d: [] for d in range(max_dim + 1)}
    bars0, n_components, killer_edges = _h0_union_find(n, ei, ej, ediam, ecombo)
    pairs[0] = sorted(bars0)
    essentials[0] = [0.0] * n_components
    if max_dim == 0:
        return pairs, essentials

    # dim 1: columns are edges; cleared = H0 killer edges
    edge_v = np.stack([ei, ej], axis=1)
    block1 = _Block(edge_v, ediam, ecombo, bits, D, binom)
    pk1, pc1, pd1, es1 = block1.run(killer_edges)
    for ci in np.nonzero(pc1)[0]:
        birth, death = float(ediam[ci]), float(pd1[ci])
        if death > birth:
            pairs[1].append((birth, death))
    for ci in np.nonzero(es1)[0]:
        essentials[1].append(float(ediam[ci]))
    pairs[1].sort()
    essentials[1].sort()
    if max_dim == 1:
        return pairs, essentials

    # dim 2: columns are triangles; cleared = pivots claimed in dim 1
    ti, tj, tk, tdiam = _enumerate_triangles(ei, ej, ediam, bits, D)
    tcombo = (
        binom[tk.astype(np.int64), 3]
        + binom[tj.astype(np.int64), 2]
        + binom[ti.astype(np.int64), 1]
    )
    killed = np.fromiter(pk1.keys(), dtype=np.int64, count=len(pk1))
    cleared2 = np.isin(tcombo, killed)
    tri_v = np.stack([ti, tj, tk], axis=1)
    block2 = _Block(tri_v, tdiam, tcombo, bits, D, binom)
    pk2, pc2, pd2, es2 = block2.run(cleared2)
    for ci in np.nonzero(pc2)[0]:
        birth, death = float(tdiam[ci]), float(pd2[ci])
        if death > birth:
            pairs[2].append((birth, death))
    for ci in np.nonzero(es2)[0]:
        essentials[2].append(float(tdiam[ci]))
    pairs[2].sort()
    essentials[2].sort()
    return pairs, essentials
