"""Exact optimal transport between two finitely supported distributions.

This is the inner minimisation of the distance operator: given marginals
mu, nu and a cost on the support product, find a coupling of mu and nu
with minimal expected cost.  The solver is a network simplex on the
bipartite transportation graph with exact rational pivots, a
northwest-corner starting basis and Bland's rule, so it terminates, never
rounds, and always returns a vertex of the transportation polytope.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .models import Distribution

__all__ = ["Coupling", "CostMatrix", "optimal_coupling", "check_coupling", "product_coupling"]

ZERO = Fraction(0)

#: Cost on ordered state pairs; must cover support(mu) x support(nu).
CostMatrix = Mapping[tuple[str, str], Fraction]


@dataclass(frozen=True)
class Coupling:
    """A joint distribution over state pairs with prescribed marginals.

    Only positive entries are stored.  The marginal conditions are not
    enforced on construction; `check_coupling` verifies them exactly.
    """

    entries: dict[tuple[str, str], Fraction]
    left: Distribution
    right: Distribution

    def __call__(self, u: str, v: str) -> Fraction:
        return self.entries.get((u, v), ZERO)

    def support(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(self.entries))

    def expected_cost(self, cost: CostMatrix) -> Fraction:
        return sum((p * cost[pair] for pair, p in self.entries.items()), ZERO)


def product_coupling(mu: Distribution, nu: Distribution) -> Coupling:
    """The independent coupling mu (x) nu; always feasible."""
    entries = {
        (u, v): pu * pv for u, pu in mu.items() for v, pv in nu.items()
    }
    return Coupling(entries, mu, nu)


def check_coupling(w: Coupling) -> bool:
    """True iff all entries are nonnegative and both marginals match exactly."""
    if any(p < 0 for p in w.entries.values()):
        return False
    row: dict[str, Fraction] = {}
    col: dict[str, Fraction] = {}
    for (u, v), p in w.entries.items():
        row[u] = row.get(u, ZERO) + p
        col[v] = col.get(v, ZERO) + p
    left = dict(w.left.items())
    right = dict(w.right.items())
    row = {u: p for u, p in row.items() if p != 0}
    col = {v: p for v, p in col.items() if p != 0}
    return row == left and col == right


def _northwest_basis(
    a: list[Fraction], b: list[Fraction]
) -> tuple[list[tuple[int, int]], dict[tuple[int, int], Fraction]]:
    """Northwest-corner rule; returns exactly m+n-1 basic cells (a tree)."""
    m, n = len(a), len(b)
    rem_a, rem_b = list(a), list(b)
    basis: list[tuple[int, int]] = []
    flow: dict[tuple[int, int], Fraction] = {}
    i = j = 0
    while i < m and j < n:
        q = min(rem_a[i], rem_b[j])
        basis.append((i, j))
        flow[(i, j)] = q
        rem_a[i] -= q
        rem_b[j] -= q
        if rem_a[i] == 0 and i < m - 1:
            i += 1
        else:
            j += 1
    return basis, flow


def _tree_path(
    basis: list[tuple[int, int]], start_row: int, end_col: int
) -> list[tuple[int, int]]:
    """Edge path from row node `start_row` to column node `end_col` in the
    spanning tree formed by the basic cells."""
    adj: dict[tuple[str, int], list[tuple[tuple[str, int], tuple[int, int]]]] = {}
    for (i, j) in basis:
        adj.setdefault(("r", i), []).append((("c", j), (i, j)))
        adj.setdefault(("c", j), []).append((("r", i), (i, j)))
    start, goal = ("r", start_row), ("c", end_col)
    prev: dict[tuple[str, int], tuple[tuple[str, int], tuple[int, int]]] = {}
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt, cell in adj.get(node, []):
            if nxt not in seen:
                seen.add(nxt)
                prev[nxt] = (node, cell)
                queue.append(nxt)
    path: list[tuple[int, int]] = []
    node = goal
    while node != start:
        node, cell = prev[node]
        path.append(cell)
    path.reverse()
    return path


def optimal_coupling(
    mu: Distribution, nu: Distribution, cost: CostMatrix
) -> tuple[Coupling, Fraction]:
    """Minimise the expected cost over all couplings of mu and nu.

    Returns an optimal vertex coupling and the exact minimal value.  The
    pivot rule is deterministic (lowest-index entering and leaving arc),
    so ties between optimal vertices are always broken the same way.
    """
    rows = list(mu.support())
    cols = list(nu.support())
    a = [mu(u) for u in rows]
    b = [nu(v) for v in cols]
    try:
        c = [[Fraction(cost[(u, v)]) for v in cols] for u in rows]
    except KeyError as exc:
        raise KeyError(f"cost undefined for support pair {exc.args[0]!r}") from exc

    m, n = len(rows), len(cols)
    basis, flow = _northwest_basis(a, b)

    while True:
        # Duals from the basis tree: u[i] + v[j] = c[i][j] on basic cells.
        u: list[Fraction | None] = [None] * m
        v: list[Fraction | None] = [None] * n
        u[0] = ZERO
        pending = list(basis)
        while pending:
            progressed = []
            for (i, j) in pending:
                if u[i] is not None and v[j] is None:
                    v[j] = c[i][j] - u[i]
                elif v[j] is not None and u[i] is None:
                    u[i] = c[i][j] - v[j]
                elif u[i] is None and v[j] is None:
                    progressed.append((i, j))
            if len(progressed) == len(pending):
                break
            pending = progressed

        entering = None
        for i in range(m):
            for j in range(n):
                if c[i][j] - u[i] - v[j] < 0:
                    entering = (i, j)
                    break
            if entering is not None:
                break
        if entering is None:
            break

        path = _tree_path(basis, entering[0], entering[1])
        minus_cells = path[0::2]
        theta = min(flow[cell] for cell in minus_cells)
        leaving = min(cell for cell in minus_cells if flow[cell] == theta)
        flow[entering] = theta
        for k, cell in enumerate(path):
            if k % 2 == 0:
                flow[cell] -= theta
            else:
                flow[cell] += theta
        del flow[leaving]
        basis[basis.index(leaving)] = entering
        basis.sort()

    entries = {
        (rows[i], cols[j]): q for (i, j), q in sorted(flow.items()) if q > 0
    }
    value = sum((q * c[i][j] for (i, j), q in flow.items()), ZERO)
    return Coupling(entries, mu, nu), value
