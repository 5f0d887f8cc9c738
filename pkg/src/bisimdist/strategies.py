"""Turning MDP strategies into labelled Markov chains.

A memoryless strategy keeps the state space; a finite-memory strategy
induces an LMC on the reachable (state, memory) product, which is a
finite stand-in for the path-indexed chain a general strategy induces.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .models import (
    Distribution,
    FiniteMemoryStrategy,
    Lmc,
    Mdp,
    MemorylessStrategy,
    ModelError,
    dirac,
    uniform,
)

__all__ = [
    "InducedLmc",
    "induce_memoryless",
    "induce_finite_memory",
    "uniform_strategy",
    "non3_alternation_strategy",
]

ZERO = Fraction(0)


@dataclass(frozen=True)
class InducedLmc:
    """An induced LMC together with the map back to (state, memory).

    For memoryless strategies the memory component is None.
    """

    lmc: Lmc
    origin: dict[str, tuple[str, str | None]]

    def state_for(self, mdp_state: str, memory: str | None = None) -> str:
        for induced, key in self.origin.items():
            if key == (mdp_state, memory):
                return induced
        raise ModelError(f"no induced state for ({mdp_state!r}, {memory!r})")


def _check_choice(d: Mdp, s: str, choice: Distribution, where: str) -> None:
    allowed = set(d.actions[s])
    for action in choice.support():
        if action not in allowed:
            raise ModelError(f"{where}: action {action!r} not available in state {s!r}")


def induce_memoryless(d: Mdp, a: MemorylessStrategy) -> InducedLmc:
    """Mix the per-action distributions with the strategy's action weights."""
    trans: dict[str, Distribution] = {}
    for s in d.states:
        if s not in a.choice:
            raise ModelError(f"strategy missing state {s!r}")
        choice = a.choice[s]
        _check_choice(d, s, choice, "memoryless strategy")
        row: dict[str, Fraction] = {}
        for action, weight in choice.items():
            for t, p in d.trans[(s, action)].items():
                row[t] = row.get(t, ZERO) + weight * p
        trans[s] = Distribution(row)
    lmc = Lmc(d.states, dict(d.labels), trans)
    return InducedLmc(lmc, {s: (s, None) for s in d.states})


def induce_finite_memory(d: Mdp, a: FiniteMemoryStrategy) -> InducedLmc:
    """Product construction over the reachable (state, memory) pairs.

    Entry points are all pairs (s, initial memory); only pairs reachable
    from them are materialised.  A missing choice or update entry on a
    reachable tuple is an error.
    """
    ids: dict[tuple[str, str], str] = {}

    def name(key: tuple[str, str]) -> str:
        if key not in ids:
            candidate = f"{key[0]}@{key[1]}"
            taken = set(ids.values())
            while candidate in taken:
                candidate += "'"
            ids[key] = candidate
        return ids[key]

    seeds = [(s, a.initial_memory) for s in d.states]
    for key in seeds:
        name(key)
    rows: dict[tuple[str, str], dict[tuple[str, str], Fraction]] = {}
    stack = list(reversed(seeds))
    seen = set(seeds)
    while stack:
        s, mem = stack.pop()
        if (s, mem) not in a.choice:
            raise ModelError(f"strategy has no choice for ({s!r}, {mem!r})")
        choice = a.choice[(s, mem)]
        _check_choice(d, s, choice, "finite-memory strategy")
        row: dict[tuple[str, str], Fraction] = {}
        for action, weight in choice.items():
            for t, p in d.trans[(s, action)].items():
                try:
                    nxt_mem = a.update[(s, mem, action, t)]
                except KeyError:
                    raise ModelError(
                        f"strategy has no memory update for ({s!r}, {mem!r}, "
                        f"{action!r}, {t!r})"
                    ) from None
                key = (t, nxt_mem)
                row[key] = row.get(key, ZERO) + weight * p
                if key not in seen:
                    seen.add(key)
                    name(key)
                    stack.append(key)
        rows[(s, mem)] = row

    labels = {name(key): d.labels[key[0]] for key in rows}
    trans = {
        name(key): Distribution({name(t): p for t, p in row.items()})
        for key, row in rows.items()
    }
    lmc = Lmc(tuple(labels), labels, trans)
    return InducedLmc(lmc, {name(key): key for key in rows})


def uniform_strategy(d: Mdp) -> MemorylessStrategy:
    """Uniform over the available actions in every state."""
    return MemorylessStrategy({s: uniform(d.actions[s]) for s in d.states})


def non3_alternation_strategy(d: Mdp) -> FiniteMemoryStrategy:
    """The two-phase disguise strategy for the third noninterference MDP.

    In the loop states s0, s1 play m0/m1 uniformly.  Visits to t0/t1
    alternate: on an odd visit pick m2 or m3 uniformly and remember the
    pick, on the following visit play the other action.
    """
    for required in ("s0", "s1", "t0", "t1"):
        if required not in d.labels:
            raise ModelError(f"expected a state named {required!r}")
    for t in ("t0", "t1"):
        if set(d.actions[t]) != {"m2", "m3"}:
            raise ModelError(f"state {t!r} must offer exactly the actions m2 and m3")

    memories = ("fresh", "took2", "took3")
    choice: dict[tuple[str, str], Distribution] = {}
    update: dict[tuple[str, str, str, str], str] = {}
    flips = {("fresh", "m2"): "took2", ("fresh", "m3"): "took3",
             ("took2", "m3"): "fresh", ("took3", "m2"): "fresh"}
    for s in d.states:
        for mem in memories:
            if s in ("t0", "t1"):
                picks = {"fresh": uniform(("m2", "m3")),
                         "took2": dirac("m3"),
                         "took3": dirac("m2")}
                choice[(s, mem)] = picks[mem]
            elif s in ("s0", "s1"):
                choice[(s, mem)] = uniform(("m0", "m1"))
            else:
                choice[(s, mem)] = dirac(d.actions[s][0])
            for action in choice[(s, mem)].support():
                for t in d.trans[(s, action)].support():
                    if s in ("t0", "t1"):
                        update[(s, mem, action, t)] = flips[(mem, action)]
                    else:
                        update[(s, mem, action, t)] = mem
    return FiniteMemoryStrategy(memories, "fresh", choice, update)
