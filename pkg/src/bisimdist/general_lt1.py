"""Distance below one under general strategies.

A set of MDP states is *equalizable* when some general strategy makes
all of them pairwise bisimilar in the induced chain.  The family of
equalizable sets is the greatest family of label-homogeneous sets closed
under a one-step condition: every member set S0 must admit a per-state
action mix, an assignment of each positive-probability successor to a
surviving class containing it, and a single class distribution realised
by every state of S0 (a linear feasibility problem once the assignment
is fixed).

The family is downward closed, so it is represented by its maximal sets
(an antichain); the fixed point deletes maximal sets without a witness
and replaces them by their facets until stable.

Distance below one is then plain reachability: a pair can be pushed
below one iff it reaches an equalizable pair in the support pair graph.
The converse reduction (bisimilarity to distance-below-one) doubles the
MDP, halves every transition and detours through a fresh observable
state that restarts the respective copy at its distinguished state.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import product

from ._exact import feasible_nonneg
from .models import Distribution, Mdp, ModelError, dirac

__all__ = [
    "CapExceededError",
    "DEFAULT_CAP",
    "equalizable_family",
    "equalizable",
    "pair_zero_set",
    "decide_lt1",
    "reduce_bisim_to_lt1",
]

ZERO = Fraction(0)
ONE = Fraction(1)
HALF = Fraction(1, 2)

DEFAULT_CAP = 12

StateSet = frozenset[str]


class CapExceededError(RuntimeError):
    """The model is larger than the configured state cap."""


def _check_cap(d: Mdp, cap: int) -> None:
    if len(d.states) > cap:
        raise CapExceededError(
            f"model has {len(d.states)} states, cap is {cap}; the set-family "
            "fixed point is exponential, raise the cap explicitly to proceed"
        )


def _class_key(e: StateSet) -> tuple[str, ...]:
    return tuple(sorted(e))


Vector = tuple[tuple[StateSet, Fraction], ...]  # sorted class/mass pairs


def _freeze(vec: dict[StateSet, Fraction]) -> Vector:
    return tuple(sorted(vec.items(), key=lambda kv: _class_key(kv[0])))


def _action_candidates(
    d: Mdp,
    s: str,
    m: str,
    options: dict[str, list[StateSet]],
    allowed: frozenset[StateSet] | None = None,
) -> list[Vector]:
    """Class-mass vectors action m can realise in state s.

    Each positive-probability successor is assigned one surviving
    maximal class containing it (restricted to `allowed` when given);
    the vector aggregates the mass per class.  Duplicates collapse.
    Empty when a successor has no permitted class.
    """
    support = list(d.trans[(s, m)].items())
    per_succ = []
    for t, _ in support:
        choices = options[t]
        if allowed is not None:
            choices = [e for e in choices if e in allowed]
        if not choices:
            return []
        per_succ.append(choices)
    seen: set[Vector] = set()
    out: list[Vector] = []
    for combo in product(*per_succ):
        vec: dict[StateSet, Fraction] = {}
        for (t, p), e in zip(support, combo):
            vec[e] = vec.get(e, ZERO) + p
        frozen = _freeze(vec)
        if frozen not in seen:
            seen.add(frozen)
            out.append(frozen)
    return out


def _mixable(selected: list[Vector], target: dict[StateSet, Fraction]) -> bool:
    """Can a convex combination of the selected vectors equal the target?

    One vector is a plain equality check and two vectors have a closed
    form (the mixing weight is pinned by any class where they differ);
    three or more go through the exact feasibility solver.
    """
    if not selected:
        return False
    if len(selected) == 1:
        return dict(selected[0]) == {e: p for e, p in target.items() if p != 0}
    if len(selected) == 2:
        v, w = (dict(vec) for vec in selected)
        classes = set(v) | set(w) | set(target)
        alpha = None
        for e in classes:
            ve, we = v.get(e, ZERO), w.get(e, ZERO)
            if ve != we:
                alpha = (target.get(e, ZERO) - we) / (ve - we)
                break
        if alpha is None:
            return _mixable(selected[:1], target)
        if not 0 <= alpha <= 1:
            return False
        return all(
            alpha * v.get(e, ZERO) + (1 - alpha) * w.get(e, ZERO)
            == target.get(e, ZERO)
            for e in classes
        )
    classes = sorted(
        {e for vec in selected for e, _ in vec} | set(target), key=_class_key
    )
    rows = [[dict(vec).get(e, ZERO) for vec in selected] for e in classes]
    rhs = [target.get(e, ZERO) for e in classes]
    rows.append([ONE] * len(selected))
    rhs.append(ONE)
    return feasible_nonneg(rows, rhs) is not None


def _assignment_matches(
    items: list[tuple[str, Fraction]],
    options: dict[str, list[StateSet]],
    target: dict[StateSet, Fraction],
) -> bool:
    """Can each successor be assigned a target class so the per-class
    masses match the target exactly?  Depth-first with remaining-mass
    bookkeeping."""
    remaining = dict(target)

    def go(idx: int) -> bool:
        if idx == len(items):
            return all(v == 0 for v in remaining.values())
        t, p = items[idx]
        for e in options[t]:
            left = remaining.get(e)
            if left is not None and left >= p:
                remaining[e] = left - p
                if go(idx + 1):
                    return True
                remaining[e] = left
        return False

    return go(0)


def _state_matches(
    d: Mdp,
    s: str,
    target: dict[StateSet, Fraction],
    options: dict[str, list[StateSet]],
) -> bool:
    """Can state s realise exactly the target class distribution?

    Single-action states need an exact successor-to-class assignment.
    Multi-action states may mix: for every action either pick one
    vector over the target's support or give the action weight zero,
    then a convex combination of the picks must hit the target.
    """
    acts = d.actions[s]
    if len(acts) == 1:
        items = sorted(d.trans[(s, acts[0])].items(), key=lambda kv: (-kv[1], kv[0]))
        return _assignment_matches(items, options, target)
    allowed = frozenset(target)
    per_action = [
        _action_candidates(d, s, m, options, allowed) for m in acts
    ]
    slates = [vectors + [None] for vectors in per_action]
    tried: set[frozenset[Vector]] = set()
    for picks in product(*slates):
        selected = sorted({vec for vec in picks if vec is not None})
        key = frozenset(selected)
        if not selected or key in tried:
            continue
        tried.add(key)
        if _mixable(selected, target):
            return True
    return False


def _pin_cost(d: Mdp, s: str, options: dict[str, list[StateSet]]) -> int:
    cost = 1
    for m in d.actions[s]:
        for t in d.trans[(s, m)].support():
            cost *= max(1, len(options[t]))
    return cost


def _label_marginals(d: Mdp, s: str, m: str) -> Vector:
    acc: dict[str, Fraction] = {}
    for t, p in d.trans[(s, m)].items():
        lbl = d.labels[t]
        acc[lbl] = acc.get(lbl, ZERO) + p
    # Re-use the class-vector plumbing with singleton "label classes".
    return tuple(sorted(((frozenset((lbl,)), p) for lbl, p in acc.items()),
                        key=lambda kv: _class_key(kv[0])))


def _label_stage(d: Mdp, s0: StateSet) -> bool:
    """Necessary condition: some common label-mass distribution must be
    realisable by every member (the label marginal does not depend on
    the class assignment, so this is one small feasibility check)."""
    per_state = {s: [_label_marginals(d, s, m) for m in d.actions[s]] for s in s0}
    fixed: Vector | None = None
    for s, vectors in per_state.items():
        if len(vectors) == 1:
            if fixed is None:
                fixed = vectors[0]
            elif vectors[0] != fixed:
                return False
    if fixed is not None:
        target = dict(fixed)
        return all(
            _mixable(list(vectors), target)
            for s, vectors in per_state.items()
            if len(vectors) > 1
        )
    # All members have several actions: joint feasibility over the
    # per-state mixes and a shared label distribution.
    states = sorted(s0)
    labels = sorted(
        {e for vectors in per_state.values() for vec in vectors for e, _ in vec},
        key=_class_key,
    )
    col: dict[tuple, int] = {}
    for s in states:
        for k in range(len(per_state[s])):
            col[("a", s, k)] = len(col)
    for e in labels:
        col[("u", e)] = len(col)
    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    for s in states:
        for e in labels:
            row = [ZERO] * len(col)
            for k, vec in enumerate(per_state[s]):
                mass = dict(vec).get(e, ZERO)
                if mass != 0:
                    row[col[("a", s, k)]] = mass
            row[col[("u", e)]] = -ONE
            rows.append(row)
            rhs.append(ZERO)
        row = [ZERO] * len(col)
        for k in range(len(per_state[s])):
            row[col[("a", s, k)]] = ONE
        rows.append(row)
        rhs.append(ONE)
    return feasible_nonneg(rows, rhs) is not None


def _has_witness(
    d: Mdp,
    s0: StateSet,
    options: dict[str, list[StateSet]],
) -> bool:
    """Search for a witness of s0 against the surviving maximal classes.

    After the label-marginal filter, one member with a single action is
    picked as the pin: each of its realisable class vectors is a
    candidate for the shared distribution, and every other member is
    checked against it (the candidate's support prunes the remaining
    class choices hard).  If every member has several actions, the pin
    enumerates per-action picks instead and the candidate distributions
    range over their mixtures, handled by one joint feasibility check
    per pick of the other members' vectors.
    """
    if len(s0) == 1:
        return True
    if len({d.labels[s] for s in s0}) > 1:
        return False
    if not _label_stage(d, s0):
        return False

    single = [s for s in s0 if len(d.actions[s]) == 1]
    if single:
        pin = min(single, key=lambda s: (_pin_cost(d, s, options), s))
        rest = sorted(s0 - {pin})
        for candidate in _action_candidates(d, pin, d.actions[pin][0], options):
            target = dict(candidate)
            if all(_state_matches(d, s, target, options) for s in rest):
                return True
        return False

    pin = min(s0, key=lambda s: (_pin_cost(d, s, options), s))
    rest = sorted(s0 - {pin})
    slates = [
        _action_candidates(d, pin, m, options) + [None] for m in d.actions[pin]
    ]
    for picks in product(*slates):
        pin_vectors = [vec for vec in picks if vec is not None]
        if not pin_vectors:
            continue
        allowed = frozenset(e for vec in pin_vectors for e, _ in vec)
        if _joint_match(d, rest, pin_vectors, allowed, options):
            return True
    return False


def _joint_match(
    d: Mdp,
    rest: list[str],
    pin_vectors: list[Vector],
    allowed: frozenset[StateSet],
    options: dict[str, list[StateSet]],
) -> bool:
    """Joint feasibility when no member pins the distribution outright:
    backtrack over the remaining members' per-action picks (restricted
    to the pin's support) and solve for the mixing weights."""

    per_state: list[list[tuple[Vector, ...]]] = []
    for s in rest:
        slates = [
            _action_candidates(d, s, m, options, allowed) + [None]
            for m in d.actions[s]
        ]
        combos = [
            tuple(vec for vec in picks if vec is not None)
            for picks in product(*slates)
        ]
        combos = [c for c in set(combos) if c]
        if not combos:
            return False
        per_state.append(sorted(combos))

    classes = sorted(allowed, key=_class_key)

    def solve(assignment: list[tuple[Vector, ...]]) -> bool:
        groups = [tuple(pin_vectors)] + assignment
        cols: list[tuple[int, Vector]] = []
        for g, vectors in enumerate(groups):
            for vec in vectors:
                cols.append((g, vec))
        rows: list[list[Fraction]] = []
        rhs: list[Fraction] = []
        # Same mass per class for every group, via shared variables.
        shared_base = len(cols)
        width = shared_base + len(classes)
        class_index = {e: i for i, e in enumerate(classes)}
        for g in range(len(groups)):
            for e in classes:
                row = [ZERO] * width
                for j, (gg, vec) in enumerate(cols):
                    if gg == g:
                        row[j] = dict(vec).get(e, ZERO)
                row[shared_base + class_index[e]] = -ONE
                rows.append(row)
                rhs.append(ZERO)
            row = [ZERO] * width
            for j, (gg, _) in enumerate(cols):
                if gg == g:
                    row[j] = ONE
            rows.append(row)
            rhs.append(ONE)
        return feasible_nonneg(rows, rhs) is not None

    def go(idx: int, acc: list[tuple[Vector, ...]]) -> bool:
        if idx == len(per_state):
            return solve(acc)
        for combo in per_state[idx]:
            if go(idx + 1, acc + [combo]):
                return True
        return False

    return go(0, [])


def equalizable_family(d: Mdp, cap: int = DEFAULT_CAP) -> frozenset[StateSet]:
    """Maximal equalizable sets (the family is their downward closure)."""
    _check_cap(d, cap)
    by_label: dict[str, set[str]] = {}
    for s in d.states:
        by_label.setdefault(d.labels[s], set()).add(s)
    antichain: set[StateSet] = {frozenset(c) for c in by_label.values()}
    while True:
        current = sorted(antichain, key=lambda e: (-len(e), _class_key(e)))
        options = {
            t: [e for e in current if t in e] for t in d.states
        }
        pair_memo: dict[tuple[str, str], bool] = {}
        witness_memo: dict[StateSet, bool] = {}

        def check(e: StateSet) -> bool:
            got = witness_memo.get(e)
            if got is None:
                got = _has_witness(d, e, options)
                witness_memo[e] = got
            return got

        def pair_ok(a: str, b: str) -> bool:
            key = (a, b) if a <= b else (b, a)
            got = pair_memo.get(key)
            if got is None:
                got = check(frozenset(key))
                pair_memo[key] = got
            return got

        failed = []
        for e in current:
            if len(e) == 1:
                continue
            members = sorted(e)
            # A witness for a set restricts to each subset, so a failing
            # pair disqualifies the whole set without a full search.
            pairs_fine = all(
                pair_ok(a, b)
                for i, a in enumerate(members)
                for b in members[i + 1 :]
            )
            if not pairs_fine or not check(e):
                failed.append(e)
        if not failed:
            return frozenset(antichain)
        antichain -= set(failed)
        for e in failed:
            for x in sorted(e):
                facet = e - {x}
                antichain.add(facet)
        antichain = {
            e for e in antichain if not any(e < other for other in antichain)
        }


def equalizable(d: Mdp, s0: frozenset[str] | set[str], cap: int = DEFAULT_CAP) -> bool:
    """Can some general strategy make all states of s0 pairwise bisimilar?"""
    s0 = frozenset(s0)
    if not s0:
        raise ModelError("the state set must be nonempty")
    for s in s0:
        if s not in d.labels:
            raise ModelError(f"unknown state id {s!r}")
    family = equalizable_family(d, cap)
    return any(s0 <= member for member in family)


def pair_zero_set(d: Mdp, cap: int = DEFAULT_CAP) -> frozenset[tuple[str, str]]:
    """Ordered pairs whose distance some general strategy makes zero."""
    family = equalizable_family(d, cap)
    pairs = {(s, s) for s in d.states}
    for member in family:
        for s in member:
            for t in member:
                pairs.add((s, t))
    return frozenset(pairs)


def decide_lt1(d: Mdp, s: str, t: str, cap: int = DEFAULT_CAP) -> bool:
    """Is there a general strategy with d(s, t) < 1 in the induced chain?

    True iff (s, t) reaches an equalizable pair in the directed graph
    whose edges follow, on each side independently, the support of any
    available action.
    """
    for x in (s, t):
        if x not in d.labels:
            raise ModelError(f"unknown state id {x!r}")
    zero = pair_zero_set(d, cap)
    succ_union: dict[str, set[str]] = {
        state: {tgt for m in d.actions[state] for tgt in d.trans[(state, m)].support()}
        for state in d.states
    }
    seen = {(s, t)}
    stack = [(s, t)]
    while stack:
        a, b = stack.pop()
        if (a, b) in zero:
            return True
        if d.labels[a] != d.labels[b]:
            continue
        for u in succ_union[a]:
            for v in succ_union[b]:
                if (u, v) not in seen:
                    seen.add((u, v))
                    stack.append((u, v))
    return False


def reduce_bisim_to_lt1(d: Mdp, s1: str, s2: str) -> tuple[Mdp, tuple[str, str]]:
    """Reduce "can s1, s2 be made bisimilar" to "distance below one".

    Two disjoint copies of the MDP are built.  In copy i every action
    keeps its successors (probabilities halved) and moves with the other
    half to a fresh detour state, labelled with a fresh symbol, that
    restarts the copy at its distinguished state.  The answer for
    (s1, s2) in the input equals decide_lt1 on the returned pair.
    """
    for x in (s1, s2):
        if x not in d.labels:
            raise ModelError(f"unknown state id {x!r}")
    dollar_label = "$"
    existing_labels = set(d.labels.values())
    while dollar_label in existing_labels:
        dollar_label += "'"

    def name(s: str, i: int) -> str:
        return f"{s}@{i}"

    taken = {name(s, i) for s in d.states for i in (1, 2)}
    dollars = {}
    for i in (1, 2):
        candidate = f"$@{i}"
        while candidate in taken:
            candidate += "'"
        dollars[i] = candidate
        taken.add(candidate)

    states: dict[str, str] = {}
    actions: dict[str, tuple[str, ...]] = {}
    trans: dict[tuple[str, str], Distribution] = {}
    anchors = {1: s1, 2: s2}
    for i in (1, 2):
        for s in d.states:
            sid = name(s, i)
            states[sid] = d.labels[s]
            actions[sid] = d.actions[s]
            for m in d.actions[s]:
                row = {name(t, i): HALF * p for t, p in d.trans[(s, m)].items()}
                row[dollars[i]] = HALF
                trans[(sid, m)] = Distribution(row)
        states[dollars[i]] = dollar_label
        actions[dollars[i]] = ("m",)
        trans[(dollars[i], "m")] = dirac(name(anchors[i], i))
    reduced = Mdp(tuple(states), states, actions, trans)
    return reduced, (name(s1, 1), name(s2, 2))
