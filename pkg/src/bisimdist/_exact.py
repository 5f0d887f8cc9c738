"""Exact numeric kernel shared by the solvers.

Everything here works over `fractions.Fraction` (or integers) and never
rounds: linear systems are solved with fraction-free (Bareiss)
elimination, strongly connected components come from an iterative Tarjan,
and linear feasibility is decided with a phase-1 simplex under Bland's
rule, which cannot cycle.
"""

from __future__ import annotations

from fractions import Fraction
from math import lcm
from typing import Hashable, Mapping, Sequence

ZERO = Fraction(0)
ONE = Fraction(1)


class SingularSystemError(ArithmeticError):
    """The linear system has no unique solution."""


def solve_linear(rows: Sequence[Sequence[Fraction]], rhs: Sequence[Fraction]) -> list[Fraction]:
    """Solve the square system rows * x = rhs exactly.

    Uses Bareiss fraction-free elimination on the denominator-cleared
    integer matrix, so intermediate values stay integers (single-step
    divisions are exact) and the result is an exact rational vector.
    """
    n = len(rows)
    if n == 0:
        return []
    m: list[list[int]] = []
    for row, b in zip(rows, rhs):
        entries = [Fraction(v) for v in row] + [Fraction(b)]
        scale = lcm(*(e.denominator for e in entries))
        m.append([int(e * scale) for e in entries])

    prev = 1
    for k in range(n):
        pivot_row = next((r for r in range(k, n) if m[r][k] != 0), None)
        if pivot_row is None:
            raise SingularSystemError(f"no pivot in column {k}")
        if pivot_row != k:
            m[k], m[pivot_row] = m[pivot_row], m[k]
        pivot = m[k][k]
        for i in range(k + 1, n):
            mik = m[i][k]
            row_i, row_k = m[i], m[k]
            for j in range(k + 1, n + 1):
                row_i[j] = (row_i[j] * pivot - mik * row_k[j]) // prev
            row_i[k] = 0
        prev = pivot

    x: list[Fraction] = [ZERO] * n
    for i in range(n - 1, -1, -1):
        acc = Fraction(m[i][n])
        for j in range(i + 1, n):
            acc -= m[i][j] * x[j]
        x[i] = acc / m[i][i]
    return x


def tarjan_sccs(adjacency: Mapping[Hashable, Sequence[Hashable]]) -> list[list[Hashable]]:
    """Strongly connected components, in reverse topological order.

    Iterative so deep chains (long pair-graph paths) do not hit the
    recursion limit.  Every key of `adjacency` is a node; edge targets
    that are not keys are ignored.
    """
    index: dict[Hashable, int] = {}
    lowlink: dict[Hashable, int] = {}
    on_stack: set[Hashable] = set()
    stack: list[Hashable] = []
    sccs: list[list[Hashable]] = []
    counter = 0

    for root in adjacency:
        if root in index:
            continue
        work: list[tuple[Hashable, int]] = [(root, 0)]
        while work:
            node, child_i = work[-1]
            if child_i == 0:
                index[node] = lowlink[node] = counter
                counter += 1
                stack.append(node)
                on_stack.add(node)
            advanced = False
            children = [t for t in adjacency[node] if t in adjacency]
            while child_i < len(children):
                child = children[child_i]
                child_i += 1
                if child not in index:
                    work[-1] = (node, child_i)
                    work.append((child, 0))
                    advanced = True
                    break
                if child in on_stack:
                    lowlink[node] = min(lowlink[node], index[child])
            if advanced:
                continue
            work.pop()
            if lowlink[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                sccs.append(comp)
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
    return sccs


def feasible_nonneg(
    rows: Sequence[Sequence[Fraction]], rhs: Sequence[Fraction]
) -> list[Fraction] | None:
    """Decide whether rows * x = rhs has a solution with x >= 0, exactly.

    Phase-1 simplex with artificial variables and Bland's rule: the
    system is feasible iff the artificials can be driven to total zero.
    Returns one feasible point (a basic solution) or None.
    """
    m = len(rows)
    n = len(rows[0]) if m else 0
    a = [[Fraction(v) for v in row] for row in rows]
    b = [Fraction(v) for v in rhs]
    for i in range(m):
        if b[i] < 0:
            a[i] = [-v for v in a[i]]
            b[i] = -b[i]

    # Columns 0..n-1 are the real variables, n..n+m-1 the artificials.
    tableau = [a[i] + [ONE if j == i else ZERO for j in range(m)] + [b[i]] for i in range(m)]
    basis = [n + i for i in range(m)]
    # Reduced costs for minimising the artificial total: r_j = c_j - sum of
    # the rows for column j (artificials start basic, so their r_j is 0).
    reduced = [-sum(tableau[i][j] for i in range(m)) for j in range(n)]
    reduced += [ZERO] * m
    objective = -sum(b)

    while True:
        entering = next((j for j in range(n + m) if reduced[j] < 0), None)
        if entering is None:
            break
        ratio = None
        leaving = None
        for i in range(m):
            coeff = tableau[i][entering]
            if coeff > 0:
                r = tableau[i][-1] / coeff
                if ratio is None or r < ratio or (r == ratio and basis[i] < basis[leaving]):
                    ratio = r
                    leaving = i
        if leaving is None:
            raise SingularSystemError("phase-1 objective unbounded; inconsistent input")
        pivot = tableau[leaving][entering]
        tableau[leaving] = [v / pivot for v in tableau[leaving]]
        for i in range(m):
            if i != leaving and tableau[i][entering] != 0:
                factor = tableau[i][entering]
                tableau[i] = [v - factor * w for v, w in zip(tableau[i], tableau[leaving])]
        factor = reduced[entering]
        reduced = [v - factor * w for v, w in zip(reduced, tableau[leaving][:-1])]
        objective -= factor * tableau[leaving][-1]
        basis[leaving] = entering

    if objective != 0:
        return None
    x = [ZERO] * n
    for i, var in enumerate(basis):
        if var < n:
            x[var] = tableau[i][-1]
        elif tableau[i][-1] != 0:
            return None
    return x
