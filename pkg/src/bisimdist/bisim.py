"""Probabilistic bisimilarity on finite labelled Markov chains.

Partition refinement: start from the label partition and split blocks
whose members give different probability mass to some current block,
until stable.  All mass comparisons are exact rational equalities.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import groupby

from .models import Lmc, ModelError

__all__ = ["Partition", "PairClassification", "bisim_partition", "classify_pairs", "is_bisimilar"]


@dataclass(frozen=True)
class Partition:
    """Disjoint nonempty blocks covering the state space."""

    blocks: tuple[frozenset[str], ...]

    def block_of(self) -> dict[str, int]:
        return {s: i for i, block in enumerate(self.blocks) for s in block}

    def same_block(self, s: str, t: str) -> bool:
        lookup = self.block_of()
        return lookup[s] == lookup[t]


@dataclass(frozen=True)
class PairClassification:
    """The split of ordered state pairs into distance-zero pairs,
    label-mismatched pairs (distance one by definition), and the rest."""

    zero: frozenset[tuple[str, str]]
    one_mismatch: frozenset[tuple[str, str]]
    unknown: frozenset[tuple[str, str]]


def _sorted_blocks(blocks: list[frozenset[str]]) -> tuple[frozenset[str], ...]:
    return tuple(sorted(blocks, key=min))


def bisim_partition(m: Lmc) -> Partition:
    """The coarsest label-respecting partition stable under refinement.

    Each round refines every block against the block masses of the whole
    current partition; the block count is monotone, so at most |S| rounds
    are needed.
    """
    keyed = sorted(m.states, key=lambda s: m.labels[s])
    blocks = [frozenset(group) for _, group in groupby(keyed, key=lambda s: m.labels[s])]
    while True:
        index = {s: i for i, block in enumerate(blocks) for s in block}

        def signature(s: str) -> tuple[tuple[int, Fraction], ...]:
            mass: dict[int, Fraction] = {}
            for t, p in m.trans[s].items():
                b = index[t]
                mass[b] = mass.get(b, Fraction(0)) + p
            return tuple(sorted(mass.items()))

        refined: list[frozenset[str]] = []
        for block in blocks:
            by_sig = sorted(block, key=signature)
            refined.extend(
                frozenset(group) for _, group in groupby(by_sig, key=signature)
            )
        if len(refined) == len(blocks):
            return Partition(_sorted_blocks(refined))
        blocks = refined


def classify_pairs(m: Lmc) -> PairClassification:
    """Partition S x S into bisimilar pairs, label mismatches, and the rest."""
    index = bisim_partition(m).block_of()
    zero, mismatch, unknown = set(), set(), set()
    for s in m.states:
        for t in m.states:
            if index[s] == index[t]:
                zero.add((s, t))
            elif m.labels[s] != m.labels[t]:
                mismatch.add((s, t))
            else:
                unknown.add((s, t))
    return PairClassification(frozenset(zero), frozenset(mismatch), frozenset(unknown))


def is_bisimilar(m: Lmc, s: str, t: str) -> bool:
    """True iff s and t share a block of the bisimilarity partition."""
    for x in (s, t):
        if x not in m.labels:
            raise ModelError(f"unknown state id {x!r}")
    return bisim_partition(m).same_block(s, t)
