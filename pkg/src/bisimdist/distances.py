"""The bisimilarity pseudometric on finite labelled Markov chains.

The distance is the least fixed point of the operator that assigns 1 to
label-mismatched pairs and otherwise the optimal-transport value of the
current pair values under couplings of the two transition distributions.

Three routes are provided:

* `distance_vi` iterates the operator from the zero function (a Kleene
  chain, every iterate is a lower bound on the distance);
* `distance_one_set` finds the pairs at distance exactly one by plain
  graph reachability on the support pair graph;
* `distance_exact` computes the distance as an exact rational via policy
  iteration over couplings: a policy fixes one coupling per undetermined
  pair, its value is the reachability probability of the distance-one
  boundary in the induced pair chain (an exact linear solve), and the
  policy is improved pair by pair until no coupling strictly helps.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

from ._exact import solve_linear, tarjan_sccs
from .bisim import PairClassification, classify_pairs
from .models import Lmc, ModelError
from .transport import Coupling, check_coupling, optimal_coupling, product_coupling

__all__ = [
    "Pair",
    "DistanceTable",
    "Policy",
    "ValueIterationResult",
    "apply_delta",
    "distance_vi",
    "distance_one_set",
    "distance_exact",
    "optimal_policy",
    "policy_value",
    "lt1_lmc",
]

ZERO = Fraction(0)
ONE = Fraction(1)

Pair = tuple[str, str]
DistanceTable = dict[Pair, Fraction]
#: One coupling per undetermined pair.
Policy = dict[Pair, Coupling]


def _pair_cost(m: Lmc, s: str, t: str, table: Mapping[Pair, Fraction]) -> dict[Pair, Fraction]:
    return {
        (u, v): table[(u, v)]
        for u in m.trans[s].support()
        for v in m.trans[t].support()
    }


def _min_transport(
    m: Lmc, s: str, t: str, table: Mapping[Pair, Fraction]
) -> tuple[Coupling, Fraction]:
    return optimal_coupling(m.trans[s], m.trans[t], _pair_cost(m, s, t, table))


def apply_delta(m: Lmc, e: Mapping[Pair, Fraction]) -> DistanceTable:
    """One application of the distance operator to the pair table `e`."""
    out: DistanceTable = {}
    for s in m.states:
        for t in m.states:
            if m.labels[s] != m.labels[t]:
                out[(s, t)] = ONE
            else:
                out[(s, t)] = _min_transport(m, s, t, e)[1]
    return out


@dataclass(frozen=True)
class ValueIterationResult:
    """Iterate of the Kleene chain from below.

    `values` is the `rounds`-fold application of the operator to the zero
    table, hence a pointwise lower bound on the exact distance;
    `residual` is the last step change (the stopping quantity, not a
    proven distance to the fixed point).
    """

    values: DistanceTable
    rounds: int
    residual: Fraction


def distance_vi(m: Lmc, eps: Fraction) -> ValueIterationResult:
    """Iterate the operator from zero until the step change is <= eps.

    The iterates are symmetric, zero on the diagonal and constant one on
    label mismatches, so only one ordered half of the label-equal pairs
    goes through the transport solver per sweep.
    """
    eps = Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    same_label = [
        (s, t)
        for s in m.states
        for t in m.states
        if s < t and m.labels[s] == m.labels[t]
    ]
    e: DistanceTable = {(s, t): ZERO for s in m.states for t in m.states}
    rounds = 0
    while True:
        rounds += 1
        nxt = dict(e)
        residual = ZERO
        for s in m.states:
            for t in m.states:
                if m.labels[s] != m.labels[t] and e[(s, t)] != ONE:
                    nxt[(s, t)] = ONE
                    residual = ONE
        for s, t in same_label:
            value = _min_transport(m, s, t, e)[1]
            nxt[(s, t)] = value
            nxt[(t, s)] = value
            residual = max(residual, abs(value - e[(s, t)]))
        e = nxt
        if residual <= eps:
            return ValueIterationResult(e, rounds, residual)


def distance_one_set(m: Lmc) -> frozenset[Pair]:
    """The pairs at distance exactly one, found graph-theoretically.

    A pair has distance below one iff it can reach a bisimilar pair in
    the support pair graph while staying on label-equal vertices; the
    returned set is the complement of that reachable region.
    """
    classes = classify_pairs(m)
    return _distance_one_set(m, classes)


def _distance_one_set(m: Lmc, classes: PairClassification) -> frozenset[Pair]:
    preds: dict[str, list[str]] = {s: [] for s in m.states}
    for s in m.states:
        for t in m.trans[s].support():
            preds[t].append(s)
    reach: set[Pair] = set(classes.zero)
    queue: deque[Pair] = deque(reach)
    while queue:
        u, v = queue.popleft()
        for s in preds[u]:
            for t in preds[v]:
                pair = (s, t)
                if pair not in reach and m.labels[s] == m.labels[t]:
                    reach.add(pair)
                    queue.append(pair)
    return frozenset(
        (s, t) for s in m.states for t in m.states if (s, t) not in reach
    )


def lt1_lmc(m: Lmc, s: str, t: str) -> bool:
    """True iff the distance of s and t is below one."""
    for x in (s, t):
        if x not in m.labels:
            raise ModelError(f"unknown state id {x!r}")
    return (s, t) not in distance_one_set(m)


def _reachable_closure(m: Lmc, seeds: Iterable[Pair], live: frozenset[Pair]) -> set[Pair]:
    """Pairs reachable from `seeds` through support products of `live` pairs."""
    closure: set[Pair] = set()
    stack = list(seeds)
    while stack:
        pair = stack.pop()
        if pair in closure:
            continue
        closure.add(pair)
        if pair in live:
            s, t = pair
            for u in m.trans[s].support():
                for v in m.trans[t].support():
                    if (u, v) not in closure:
                        stack.append((u, v))
    return closure


def _policy_fixpoint(
    policy: Mapping[Pair, Coupling],
    unknowns: list[Pair],
    boundary_one: frozenset[Pair],
) -> DistanceTable:
    """Least fixed point of the one-policy step operator on `unknowns`.

    Computes the reachability probability of `boundary_one` in the chain
    induced by the policy.  Pairs that cannot reach the boundary get
    probability zero (this is what makes it the least fixed point); the
    rest is solved exactly, one strongly connected component at a time.
    """
    unknown_set = set(unknowns)
    direct: dict[Pair, Fraction] = {}
    succ: dict[Pair, list[Pair]] = {}
    for pair in unknowns:
        coupling = policy[pair]
        hit = ZERO
        inside: list[Pair] = []
        for target, mass in coupling.entries.items():
            if target in boundary_one:
                hit += mass
            elif target in unknown_set:
                inside.append(target)
        direct[pair] = hit
        succ[pair] = inside

    # Keep only pairs with positive boundary reachability.
    rpreds: dict[Pair, list[Pair]] = {pair: [] for pair in unknowns}
    for pair, targets in succ.items():
        for q in targets:
            rpreds[q].append(pair)
    kept: set[Pair] = set()
    queue = deque(pair for pair in unknowns if direct[pair] > 0)
    kept.update(queue)
    while queue:
        pair = queue.popleft()
        for p in rpreds[pair]:
            if p not in kept:
                kept.add(p)
                queue.append(p)

    values: DistanceTable = {pair: ZERO for pair in unknowns}
    adjacency = {pair: [q for q in succ[pair] if q in kept] for pair in kept}
    for component in tarjan_sccs(adjacency):
        if len(component) == 1:
            pair = component[0]
            coupling = policy[pair]
            const = direct[pair]
            self_mass = ZERO
            for q in adjacency[pair]:
                if q == pair:
                    self_mass += coupling(*q)
                else:
                    const += coupling(*q) * values[q]
            values[pair] = const / (ONE - self_mass)
            continue
        order = sorted(component)
        pos = {pair: k for k, pair in enumerate(order)}
        rows = []
        rhs = []
        for pair in order:
            coupling = policy[pair]
            row = [ZERO] * len(order)
            row[pos[pair]] = ONE
            const = direct[pair]
            for q in adjacency[pair]:
                if q in pos:
                    row[pos[q]] -= coupling(*q)
                else:
                    const += coupling(*q) * values[q]
            rows.append(row)
            rhs.append(const)
        for pair, value in zip(order, solve_linear(rows, rhs)):
            values[pair] = value
    return values


def _exact_core(
    m: Lmc, seeds: Iterable[Pair] | None
) -> tuple[DistanceTable, PairClassification, frozenset[Pair], list[Pair]]:
    classes = classify_pairs(m)
    one_set = _distance_one_set(m, classes)
    undetermined = frozenset(classes.unknown - one_set)

    if seeds is None:
        scope = {(s, t) for s in m.states for t in m.states}
    else:
        seeds = list(seeds)
        for s, t in seeds:
            for x in (s, t):
                if x not in m.labels:
                    raise ModelError(f"unknown state id {x!r}")
        scope = _reachable_closure(m, seeds, undetermined)

    table: DistanceTable = {}
    for pair in scope:
        if pair in classes.zero:
            table[pair] = ZERO
        elif pair in one_set:
            table[pair] = ONE
    unknowns = sorted(undetermined & scope)
    if not unknowns:
        return table, classes, one_set, unknowns

    policy: Policy = {
        (s, t): product_coupling(m.trans[s], m.trans[t]) for (s, t) in unknowns
    }
    while True:
        values = _policy_fixpoint(policy, unknowns, one_set)
        table.update(values)
        improved = False
        for pair in unknowns:
            coupling, value = _min_transport(m, *pair, table)
            if value < table[pair]:
                policy[pair] = coupling
                improved = True
        if not improved:
            return table, classes, one_set, unknowns


def distance_exact(m: Lmc, *, pairs: Iterable[Pair] | None = None) -> DistanceTable:
    """Exact rational bisimilarity distances.

    Without `pairs` the full table over S x S is returned (it satisfies
    apply_delta(m, d) == d).  With `pairs`, computation is restricted to
    the pairs reachable from them in the support pair graph, and the
    returned table covers exactly that closure.
    """
    table, _, _, _ = _exact_core(m, pairs)
    return table


def optimal_policy(m: Lmc) -> tuple[Policy, DistanceTable]:
    """A policy witnessing the exact distances, with the distance table.

    The policy picks, for every undetermined pair, a coupling that is
    optimal against the exact distances, so its evaluation under
    `policy_value` reproduces them.
    """
    table, classes, _, _ = _exact_core(m, None)
    policy: Policy = {}
    for pair in sorted(classes.unknown):
        policy[pair] = _min_transport(m, *pair, table)[0]
    return policy, table


def policy_value(m: Lmc, policy: Mapping[Pair, Coupling]) -> DistanceTable:
    """The value of one policy: reachability of the label-mismatch pairs.

    This is the least fixed point of the per-policy step operator, so it
    is an upper bound on the exact distance for every policy and matches
    it for an optimal one.
    """
    classes = classify_pairs(m)
    unknowns = sorted(classes.unknown)
    for pair in unknowns:
        if pair not in policy:
            raise ModelError(f"policy missing pair {pair!r}")
        coupling = policy[pair]
        s, t = pair
        if (
            not check_coupling(coupling)
            or dict(coupling.left.items()) != dict(m.trans[s].items())
            or dict(coupling.right.items()) != dict(m.trans[t].items())
        ):
            raise ModelError(f"coupling invariant violated at pair {pair!r}")
    table: DistanceTable = {}
    for pair in classes.zero:
        table[pair] = ZERO
    for pair in classes.one_mismatch:
        table[pair] = ONE
    table.update(_policy_fixpoint(policy, unknowns, classes.one_mismatch))
    return table
