"""Distance minimisation over memoryless strategies.

`objective` evaluates a strategy exactly (induce the LMC, run exact
policy iteration).  `minimize_local` is a multistart projected
coordinate descent over the product of per-state action simplices; the
search itself runs in floating point for speed and the best point found
is re-evaluated exactly.  `emit_etr_smt` writes the decision problem
"is there a memoryless strategy with d(s1, s2) < theta" as an SMT-LIB 2
script over nonlinear real arithmetic; the same constraint system can be
checked under an exact rational assignment, which is how the emitter is
tested without an external solver.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping

from .distances import distance_exact
from .models import Distribution, Mdp, MemorylessStrategy, ModelError
from .strategies import induce_memoryless, uniform_strategy
from .transport import optimal_coupling

__all__ = [
    "MinimizationResult",
    "objective",
    "minimize_local",
    "EtrSystem",
    "etr_system",
    "emit_etr_smt",
    "witness_assignment",
    "check_witness",
]

ZERO = Fraction(0)
ONE = Fraction(1)


def objective(d: Mdp, s1: str, s2: str, a: MemorylessStrategy) -> Fraction:
    """Exact distance of s1 and s2 in the LMC induced by the strategy."""
    induced = induce_memoryless(d, a)
    return distance_exact(induced.lmc, pairs=[(s1, s2)])[(s1, s2)]


# ---------------------------------------------------------------------------
# Floating-point evaluation used inside the local search
# ---------------------------------------------------------------------------


FloatCoupling = list[tuple[int, int, float]]


def _transport_float(
    mu: list[tuple[int, float]],
    nu: list[tuple[int, float]],
    cost: Callable[[int, int], float],
) -> tuple[FloatCoupling, float]:
    """Min-cost coupling of two small float distributions.

    Supports of size one and 2x2 are closed form; anything larger goes
    through the exact solver on the float values (floats are rationals).
    """
    if len(mu) == 1:
        u = mu[0][0]
        return [(u, v, q) for v, q in nu], sum(q * cost(u, v) for v, q in nu)
    if len(nu) == 1:
        v = nu[0][0]
        return [(u, v, p) for u, p in mu], sum(p * cost(u, v) for u, p in mu)
    if len(mu) == 2 and len(nu) == 2:
        (u1, p1), (u2, _) = mu
        (v1, q1), (v2, _) = nu
        c11, c12 = cost(u1, v1), cost(u1, v2)
        c21, c22 = cost(u2, v1), cost(u2, v2)
        lo = max(0.0, p1 + q1 - 1.0)
        hi = min(p1, q1)

        def at(t: float) -> float:
            return t * c11 + (p1 - t) * c12 + (q1 - t) * c21 + (1.0 - p1 - q1 + t) * c22

        t = lo if at(lo) <= at(hi) else hi
        entries = [
            (u1, v1, t),
            (u1, v2, p1 - t),
            (u2, v1, q1 - t),
            (u2, v2, 1.0 - p1 - q1 + t),
        ]
        return [(u, v, w) for u, v, w in entries if w > 0.0], at(t)
    total_mu = sum(p for _, p in mu)
    total_nu = sum(q for _, q in nu)
    dmu = Distribution({str(u): Fraction(p) / Fraction(total_mu) for u, p in mu})
    dnu = Distribution({str(v): Fraction(q) / Fraction(total_nu) for v, q in nu})
    table = {
        (str(u), str(v)): Fraction(cost(u, v)) for u, _ in mu for v, _ in nu
    }
    coupling, value = optimal_coupling(dmu, dnu, table)
    entries = [(int(u), int(v), float(w)) for (u, v), w in coupling.entries.items()]
    return entries, float(value)


def _solve_float(rows: list[list[float]], rhs: list[float]) -> list[float]:
    """Dense Gaussian elimination with partial pivoting."""
    n = len(rows)
    m = [row[:] + [b] for row, b in zip(rows, rhs)]
    for k in range(n):
        pivot = max(range(k, n), key=lambda r: abs(m[r][k]))
        m[k], m[pivot] = m[pivot], m[k]
        if m[k][k] == 0.0:
            raise ZeroDivisionError("singular float system")
        for i in range(k + 1, n):
            factor = m[i][k] / m[k][k]
            if factor != 0.0:
                for j in range(k, n + 1):
                    m[i][j] -= factor * m[k][j]
    x = [0.0] * n
    for i in range(n - 1, -1, -1):
        acc = m[i][n] - sum(m[i][j] * x[j] for j in range(i + 1, n))
        x[i] = acc / m[i][i]
    return x


class _FloatEvaluator:
    """Float policy iteration for d(s1, s2) under a float strategy.

    Mirrors the exact algorithm step for step: pin bisimilar pairs to 0
    (partition refinement with bitwise-equal float masses), pin the
    distance-one pairs to 1 (graph reachability on supports), then run
    policy iteration on the rest.  Linear solves instead of value
    iteration keep it insensitive to near-absorbing cycles, which the
    search routinely creates by driving action weights toward 0.
    """

    def __init__(self, d: Mdp, s1: str, s2: str, tol: float = 1e-12, max_rounds: int = 60):
        self.mdp = d
        self.states = list(d.states)
        self.index = {s: i for i, s in enumerate(self.states)}
        self.labels = [d.labels[s] for s in self.states]
        self.s1 = self.index[s1]
        self.s2 = self.index[s2]
        self.tol = tol
        self.max_rounds = max_rounds
        self.free = [s for s in self.states if len(d.actions[s]) > 1]
        # Per state: list of (action, [(target index, float prob), ...]).
        self.rows = {
            s: [
                (m, [(self.index[t], float(p)) for t, p in d.trans[(s, m)].items()])
                for m in d.actions[s]
            ]
            for s in self.states
        }

    def start_uniform(self) -> dict[str, list[float]]:
        return {
            s: [1.0 / len(self.mdp.actions[s])] * len(self.mdp.actions[s])
            for s in self.free
        }

    def _bisim_blocks(self, succ: list[list[tuple[int, float]]]) -> list[int]:
        """Partition refinement on the float chain.

        Block masses are accumulated in a fixed target order, so states
        with identical rows get bitwise-equal signatures; no tolerance is
        involved (only exactly symmetric strategies merge states, which
        is also where the exact distance drops).
        """
        n = len(self.states)
        block = {s: 0 for s in range(n)}
        by_label: dict[str, int] = {}
        for s in range(n):
            block[s] = by_label.setdefault(self.labels[s], len(by_label))
        count = len(by_label)
        while True:
            sigs: dict[int, tuple] = {}
            for s in range(n):
                mass: dict[int, float] = {}
                for t, p in succ[s]:
                    b = block[t]
                    mass[b] = mass.get(b, 0.0) + p
                sigs[s] = (block[s], tuple(sorted(mass.items())))
            renumber: dict[tuple, int] = {}
            new_block = {}
            for s in range(n):
                new_block[s] = renumber.setdefault(sigs[s], len(renumber))
            if len(renumber) == count:
                return [new_block[s] for s in range(n)]
            block, count = new_block, len(renumber)

    def _evaluate(
        self,
        pairs: list[tuple[int, int]],
        policy: dict[tuple[int, int], FloatCoupling],
        boundary: Callable[[int, int], float | None],
    ) -> dict[tuple[int, int], float]:
        pair_set = set(pairs)
        direct: dict[tuple[int, int], float] = {}
        inside: dict[tuple[int, int], list[tuple[tuple[int, int], float]]] = {}
        for pair in pairs:
            hit = 0.0
            into: list[tuple[tuple[int, int], float]] = []
            for u, v, mass in policy[pair]:
                if (u, v) in pair_set:
                    into.append(((u, v), mass))
                else:
                    hit += mass * boundary(u, v)
            direct[pair] = hit
            inside[pair] = into

        rpreds: dict[tuple[int, int], list[tuple[int, int]]] = {p: [] for p in pairs}
        for pair, into in inside.items():
            for q, _ in into:
                rpreds[q].append(pair)
        kept: set[tuple[int, int]] = set()
        frontier = [p for p in pairs if direct[p] > 0.0]
        kept.update(frontier)
        while frontier:
            nxt: list[tuple[int, int]] = []
            for q in frontier:
                for p in rpreds[q]:
                    if p not in kept:
                        kept.add(p)
                        nxt.append(p)
            frontier = nxt

        val = {pair: 0.0 for pair in pairs}
        order = [p for p in pairs if p in kept]
        pos = {p: i for i, p in enumerate(order)}
        if order:
            rows = []
            rhs = []
            for pair in order:
                row = [0.0] * len(order)
                row[pos[pair]] = 1.0
                for q, mass in inside[pair]:
                    if q in pos:
                        row[pos[q]] -= mass
                rows.append(row)
                rhs.append(direct[pair])
            for pair, value in zip(order, _solve_float(rows, rhs)):
                val[pair] = min(1.0, max(0.0, value))
        return val

    def value(self, theta: Mapping[str, list[float]]) -> float:
        if self.labels[self.s1] != self.labels[self.s2]:
            return 1.0
        if self.s1 == self.s2:
            return 0.0
        n = len(self.states)
        succ: list[list[tuple[int, float]]] = []
        for s in self.states:
            weights = theta.get(s)
            acc: dict[int, float] = {}
            for k, (_, targets) in enumerate(self.rows[s]):
                w = weights[k] if weights is not None else 1.0
                if w <= 0.0:
                    continue
                for t, p in targets:
                    acc[t] = acc.get(t, 0.0) + w * p
            succ.append(sorted(acc.items()))

        block = self._bisim_blocks(succ)

        # Pairs reaching a bisimilar pair through label-equal pairs have
        # distance below one; all other pairs are pinned at one.
        preds: list[list[int]] = [[] for _ in range(n)]
        for s in range(n):
            for t, _ in succ[s]:
                preds[t].append(s)
        lt_one = {(u, v) for u in range(n) for v in range(n) if block[u] == block[v]}
        frontier = list(lt_one)
        while frontier:
            nxt = []
            for (u, v) in frontier:
                for s in preds[u]:
                    for t in preds[v]:
                        if (s, t) not in lt_one and self.labels[s] == self.labels[t]:
                            lt_one.add((s, t))
                            nxt.append((s, t))
            frontier = nxt

        def pinned(u: int, v: int) -> float:
            return 0.0 if block[u] == block[v] else 1.0

        if block[self.s1] == block[self.s2]:
            return 0.0
        if (self.s1, self.s2) not in lt_one:
            return 1.0

        # Undetermined pairs reachable from the query pair.
        pairs: list[tuple[int, int]] = []
        seen = {(self.s1, self.s2)}
        stack = [(self.s1, self.s2)]
        while stack:
            pair = stack.pop()
            a, b = pair
            if block[a] == block[b] or pair not in lt_one:
                continue
            pairs.append(pair)
            for u, _ in succ[a]:
                for v, _ in succ[b]:
                    if (u, v) not in seen:
                        seen.add((u, v))
                        stack.append((u, v))

        val = {pair: 0.0 for pair in pairs}

        def lookup(u: int, v: int) -> float:
            got = val.get((u, v))
            if got is not None:
                return got
            return pinned(u, v) if (u, v) in lt_one else 1.0

        policy: dict[tuple[int, int], FloatCoupling] = {
            (a, b): [(u, v, p * q) for u, p in succ[a] for v, q in succ[b]]
            for (a, b) in pairs
        }
        for _ in range(self.max_rounds):
            val = self._evaluate(pairs, policy, lookup)
            improved = False
            for pair in pairs:
                a, b = pair
                coupling, value = _transport_float(succ[a], succ[b], lookup)
                if value < val[pair] - self.tol:
                    policy[pair] = coupling
                    improved = True
            if not improved:
                break
        return val[(self.s1, self.s2)]


def _clamp_renormalize(vec: list[float]) -> list[float]:
    clipped = [max(0.0, v) for v in vec]
    total = sum(clipped)
    if total <= 0.0:
        return [1.0 / len(vec)] * len(vec)
    return [v / total for v in clipped]


def _round_strategy(d: Mdp, theta: Mapping[str, list[float]]) -> MemorylessStrategy:
    choice: dict[str, Distribution] = {}
    for s in d.states:
        acts = d.actions[s]
        if s in theta:
            probs = [Fraction(p).limit_denominator(10**6) for p in theta[s]]
            probs = [max(ZERO, p) for p in probs]
            total = sum(probs)
            if total == 0:
                probs = [Fraction(1, len(acts))] * len(acts)
            else:
                probs = [p / total for p in probs]
            entries = {m: p for m, p in zip(acts, probs) if p > 0}
        else:
            entries = {acts[0]: ONE}
        choice[s] = Distribution(entries)
    return MemorylessStrategy(choice)


@dataclass(frozen=True)
class MinimizationResult:
    """Best strategy found by the search.

    `best_value` is the exact objective of `best_strategy` (recomputed
    with rational arithmetic, not the float estimate); `search_trace`
    records the float value each restart ended with.
    """

    best_strategy: MemorylessStrategy
    best_value: Fraction
    search_trace: tuple[tuple[int, float], ...]


def minimize_local(
    d: Mdp,
    s1: str,
    s2: str,
    restarts: int = 16,
    iters: int = 60,
    seed: int = 0,
) -> MinimizationResult:
    """Multistart projected coordinate descent over the strategy simplices.

    Restart 0 starts at the uniform strategy, later restarts at random
    simplex points drawn from `seed`.  In each pass every free state is
    pulled toward each of its action vertices; the step halves when a
    full pass brings no improvement and the restart stops once the step
    drops below 1e-7.  The overall best point is rounded to rationals and
    re-evaluated exactly (the uniform strategy is always kept as a
    candidate, so the result is never worse than it).
    """
    if restarts < 1 or iters < 1:
        raise ValueError("restarts and iters must be >= 1")
    for x in (s1, s2):
        if x not in d.labels:
            raise ModelError(f"unknown state id {x!r}")
    rng = random.Random(seed)
    ev = _FloatEvaluator(d, s1, s2)

    best_theta: dict[str, list[float]] | None = None
    best_float = float("inf")
    trace: list[tuple[int, float]] = []
    for restart in range(restarts):
        if restart == 0:
            theta = ev.start_uniform()
        else:
            theta = {
                s: _clamp_renormalize([rng.random() for _ in d.actions[s]])
                for s in ev.free
            }
        current = ev.value(theta)
        step = 0.5
        for _ in range(iters):
            if current <= 1e-12:
                break
            improved = False
            for s in ev.free:
                k_actions = len(d.actions[s])
                for k in range(k_actions):
                    vec = theta[s]
                    candidate = [
                        (1.0 - step) * v + (step if k == j else 0.0)
                        for j, v in enumerate(vec)
                    ]
                    candidate = _clamp_renormalize(candidate)
                    if candidate == vec:
                        continue
                    trial = dict(theta)
                    trial[s] = candidate
                    value = ev.value(trial)
                    if value < current - 1e-15:
                        theta = trial
                        current = value
                        improved = True
            if not improved:
                step *= 0.5
                if step < 1e-7:
                    break
        trace.append((restart, current))
        if current < best_float:
            best_float = current
            best_theta = theta

    uniform = uniform_strategy(d)
    uniform_value = objective(d, s1, s2, uniform)
    best_strategy, best_value = uniform, uniform_value
    if best_theta is not None:
        rounded = _round_strategy(d, best_theta)
        value = objective(d, s1, s2, rounded)
        if value < best_value:
            best_strategy, best_value = rounded, value
    return MinimizationResult(best_strategy, best_value, tuple(trace))


# ---------------------------------------------------------------------------
# The existential-theory-of-the-reals certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    """coef * product of variables (0, 1 or 2 of them)."""

    coef: Fraction
    vars: tuple[str, ...] = ()


@dataclass(frozen=True)
class Constraint:
    op: str  # "=", "<" or "<="
    lhs: tuple[Term, ...]
    rhs: tuple[Term, ...]

    def evaluate(self, assignment: Mapping[str, Fraction]) -> bool:
        def side(terms: tuple[Term, ...]) -> Fraction:
            total = ZERO
            for term in terms:
                value = term.coef
                for var in term.vars:
                    value *= assignment[var]
                total += value
            return total

        left, right = side(self.lhs), side(self.rhs)
        if self.op == "=":
            return left == right
        if self.op == "<":
            return left < right
        return left <= right


_SIMPLE_SYMBOL = re.compile(r"[A-Za-z~!@$%^&*_\-+=<>.?/][A-Za-z0-9~!@$%^&*_\-+=<>.?/]*$")


def _smt_symbol(name: str) -> str:
    if _SIMPLE_SYMBOL.match(name):
        return name
    if "|" in name or "\\" in name:
        raise ModelError(f"cannot encode name {name!r} as an SMT symbol")
    return f"|{name}|"


def _smt_rational(value: Fraction) -> str:
    if value.denominator == 1:
        text = str(value.numerator)
        return text if value >= 0 else f"(- {-value.numerator})"
    body = f"(/ {abs(value.numerator)} {value.denominator})"
    return body if value > 0 else f"(- {body})"


def _smt_term(term: Term) -> str:
    if not term.vars:
        return _smt_rational(term.coef)
    symbols = [_smt_symbol(v) for v in term.vars]
    if term.coef == 1:
        return symbols[0] if len(symbols) == 1 else f"(* {' '.join(symbols)})"
    return f"(* {_smt_rational(term.coef)} {' '.join(symbols)})"


def _smt_sum(terms: tuple[Term, ...]) -> str:
    if not terms:
        return "0"
    if len(terms) == 1:
        return _smt_term(terms[0])
    return f"(+ {' '.join(_smt_term(t) for t in terms)})"


@dataclass(frozen=True)
class EtrSystem:
    """The closed formula deciding d(s1, s2) < theta for some memoryless
    strategy, as declarations plus polynomial constraints."""

    variables: tuple[str, ...]
    constraints: tuple[Constraint, ...]

    def satisfied_by(self, assignment: Mapping[str, Fraction]) -> bool:
        return not self.failures(assignment)

    def failures(self, assignment: Mapping[str, Fraction]) -> list[Constraint]:
        return [c for c in self.constraints if not c.evaluate(assignment)]

    def to_smtlib(self) -> bytes:
        lines = ["(set-logic QF_NRA)"]
        for var in self.variables:
            lines.append(f"(declare-const {_smt_symbol(var)} Real)")
        for c in self.constraints:
            lines.append(f"(assert ({c.op} {_smt_sum(c.lhs)} {_smt_sum(c.rhs)}))")
        lines.append("(check-sat)")
        return ("\n".join(lines) + "\n").encode("utf-8")


def _xvar(s: str, m: str) -> str:
    return f"x_{s}_{m}"


def _wvar(s: str, t: str, u: str, v: str) -> str:
    return f"w_{s}_{t}_{u}_{v}"


def _dvar(s: str, t: str) -> str:
    return f"d_{s}_{t}"


def etr_system(d: Mdp, s1: str, s2: str, theta: Fraction) -> EtrSystem:
    """Build the certificate formula for the MDP and threshold.

    Variables: x_{s,m} for the strategy, w_{s,t,u,v} for one coupling per
    label-equal pair, d_{s,t} for the pseudometric, all in [0, 1].
    Constraints: per-state action simplices; both coupling marginals
    equal to the induced transition probabilities (expanded through x);
    the coupling-weighted pair values equal to d on label-equal pairs;
    d = 1 on mismatched pairs; and d_{s1,s2} < theta.
    """
    theta = Fraction(theta)
    if not 0 < theta <= 1:
        raise ModelError(f"theta must be in (0, 1], got {theta}")
    for x in (s1, s2):
        if x not in d.labels:
            raise ModelError(f"unknown state id {x!r}")

    states = d.states
    equal_pairs = [
        (s, t) for s in states for t in states if d.labels[s] == d.labels[t]
    ]
    variables: list[str] = []
    for s in states:
        for m in d.actions[s]:
            variables.append(_xvar(s, m))
    for s, t in equal_pairs:
        for u in states:
            for v in states:
                variables.append(_wvar(s, t, u, v))
    for s in states:
        for t in states:
            variables.append(_dvar(s, t))

    constraints: list[Constraint] = []
    one = (Term(ONE),)
    zero = (Term(ZERO),)
    for var in variables:
        term = (Term(ONE, (var,)),)
        constraints.append(Constraint("<=", zero, term))
        constraints.append(Constraint("<=", term, one))

    for s in states:
        constraints.append(
            Constraint("=", tuple(Term(ONE, (_xvar(s, m),)) for m in d.actions[s]), one)
        )

    def induced_prob(s: str, u: str) -> tuple[Term, ...]:
        terms = tuple(
            Term(d.trans[(s, m)](u), (_xvar(s, m),))
            for m in d.actions[s]
            if d.trans[(s, m)](u) > 0
        )
        return terms if terms else zero

    for s, t in equal_pairs:
        for u in states:
            constraints.append(
                Constraint(
                    "=",
                    tuple(Term(ONE, (_wvar(s, t, u, v),)) for v in states),
                    induced_prob(s, u),
                )
            )
        for v in states:
            constraints.append(
                Constraint(
                    "=",
                    tuple(Term(ONE, (_wvar(s, t, u, v),)) for u in states),
                    induced_prob(t, v),
                )
            )
        constraints.append(
            Constraint(
                "=",
                tuple(
                    Term(ONE, (_wvar(s, t, u, v), _dvar(u, v)))
                    for u in states
                    for v in states
                ),
                (Term(ONE, (_dvar(s, t),)),),
            )
        )

    for s in states:
        for t in states:
            if d.labels[s] != d.labels[t]:
                constraints.append(Constraint("=", (Term(ONE, (_dvar(s, t),)),), one))

    constraints.append(Constraint("<", (Term(ONE, (_dvar(s1, s2),)),), (Term(theta),)))
    return EtrSystem(tuple(variables), tuple(constraints))


def emit_etr_smt(d: Mdp, s1: str, s2: str, theta: Fraction) -> bytes:
    """The certificate formula as an SMT-LIB 2 script (logic QF_NRA)."""
    return etr_system(d, s1, s2, theta).to_smtlib()


def witness_assignment(
    d: Mdp, s1: str, s2: str, a: MemorylessStrategy
) -> dict[str, Fraction]:
    """Exact satisfying values derived from a strategy.

    The strategy fixes the x variables, the exact distances of the
    induced LMC fix d, and an optimal coupling against those distances
    fixes w for every label-equal pair.  The result satisfies every
    constraint of `etr_system` except possibly the final threshold.
    """
    induced = induce_memoryless(d, a)
    lmc = induced.lmc
    dist = distance_exact(lmc)
    assignment: dict[str, Fraction] = {}
    for s in d.states:
        choice = a.choice[s]
        for m in d.actions[s]:
            assignment[_xvar(s, m)] = choice(m)
    for s in d.states:
        for t in d.states:
            assignment[_dvar(s, t)] = dist[(s, t)]
    for s in d.states:
        for t in d.states:
            if d.labels[s] != d.labels[t]:
                continue
            cost = {
                (u, v): dist[(u, v)]
                for u in lmc.trans[s].support()
                for v in lmc.trans[t].support()
            }
            coupling, _ = optimal_coupling(lmc.trans[s], lmc.trans[t], cost)
            for u in d.states:
                for v in d.states:
                    assignment[_wvar(s, t, u, v)] = coupling(u, v)
    return assignment


def check_witness(
    d: Mdp, s1: str, s2: str, theta: Fraction, a: MemorylessStrategy
) -> bool:
    """True iff the strategy's exact objective is strictly below theta."""
    theta = Fraction(theta)
    if not 0 < theta <= 1:
        raise ModelError(f"theta must be in (0, 1], got {theta}")
    return objective(d, s1, s2, a) < theta
