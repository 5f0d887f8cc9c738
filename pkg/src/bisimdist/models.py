"""Exact-rational model types and their JSON interchange format.

Labelled Markov chains, labelled MDPs, probabilistic automata and
strategies are stored with `fractions.Fraction` probabilities throughout,
so equality checks and distance values are exact.  The JSON format is
bit-exact: probabilities are written as "a/b" strings in lowest terms and
states are emitted in sorted order, which makes serialisation canonical
(parse ∘ serialize is the identity and serialisation is deterministic).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

__all__ = [
    "ModelError",
    "Distribution",
    "Lmc",
    "Mdp",
    "ProbAutomaton",
    "MemorylessStrategy",
    "FiniteMemoryStrategy",
    "parse_rational",
    "format_rational",
    "parse_model",
    "serialize_model",
    "parse_pa",
    "serialize_pa",
    "parse_strategy",
    "serialize_strategy",
    "gen_example",
]

ONE = Fraction(1)
ZERO = Fraction(0)


class ModelError(ValueError):
    """Raised for malformed models, automata or strategies."""


def parse_rational(text: str, where: str = "") -> Fraction:
    """Parse "a/b" (or "a") into an exact Fraction.

    Rejects anything that is not an integer ratio; floats are deliberately
    not accepted so that no rounding can sneak into stored models.
    """
    loc = f" in {where}" if where else ""
    if not isinstance(text, str):
        raise ModelError(f"probability must be a string like \"1/2\", got {text!r}{loc}")
    parts = text.split("/")
    try:
        if len(parts) == 1:
            return Fraction(int(parts[0]))
        if len(parts) == 2:
            num, den = int(parts[0]), int(parts[1])
            if den <= 0:
                raise ModelError(f"denominator must be positive in {text!r}{loc}")
            return Fraction(num, den)
    except ValueError:
        pass
    raise ModelError(f"cannot parse rational {text!r}{loc}")


def format_rational(value: Fraction) -> str:
    """Render a Fraction as "a/b" in lowest terms (denominator always shown)."""
    value = Fraction(value)
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class Distribution:
    """A finitely supported probability distribution with exact entries.

    Zero entries are not stored: the support is exactly the key set, and
    the entries must sum to exactly 1.
    """

    entries: dict[str, Fraction]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ModelError("empty distribution")
        total = ZERO
        for target, prob in self.entries.items():
            if prob <= 0:
                raise ModelError(f"non-positive probability {prob} for {target!r}")
            total += prob
        if total != ONE:
            raise ModelError(f"probabilities sum to {total}, expected 1")
        object.__setattr__(self, "entries", dict(sorted(self.entries.items())))

    def support(self) -> tuple[str, ...]:
        return tuple(self.entries)

    def __call__(self, target: str) -> Fraction:
        return self.entries.get(target, ZERO)

    def items(self) -> Iterable[tuple[str, Fraction]]:
        return self.entries.items()


def dirac(target: str) -> Distribution:
    return Distribution({target: ONE})


def uniform(targets: Iterable[str]) -> Distribution:
    targets = list(targets)
    p = Fraction(1, len(targets))
    return Distribution({t: p for t in targets})


@dataclass(frozen=True)
class Lmc:
    """Finite labelled Markov chain: every state has one label and one
    outgoing distribution."""

    states: tuple[str, ...]
    labels: dict[str, str]
    trans: dict[str, Distribution]

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(sorted(self.states)))
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate state ids")
        state_set = set(self.states)
        for s in self.states:
            if s not in self.labels:
                raise ModelError(f"state {s!r} has no label")
            if s not in self.trans:
                raise ModelError(f"state {s!r} has no outgoing distribution")
        for s, dist in self.trans.items():
            if s not in state_set:
                raise ModelError(f"transition from unknown state {s!r}")
            for t in dist.support():
                if t not in state_set:
                    raise ModelError(f"transition from {s!r} to unknown state {t!r}")

    def label(self, s: str) -> str:
        return self.labels[s]


@dataclass(frozen=True)
class Mdp:
    """Finite labelled Markov decision process.

    `actions[s]` is the nonempty set of actions available in `s`, and
    `trans` is defined exactly on the pairs (s, m) with m in actions[s].
    """

    states: tuple[str, ...]
    labels: dict[str, str]
    actions: dict[str, tuple[str, ...]]
    trans: dict[tuple[str, str], Distribution]

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(sorted(self.states)))
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate state ids")
        state_set = set(self.states)
        normalized: dict[str, tuple[str, ...]] = {}
        for s in self.states:
            if s not in self.labels:
                raise ModelError(f"state {s!r} has no label")
            acts = self.actions.get(s, ())
            if not acts:
                raise ModelError(f"state {s!r} has an empty action set")
            if len(set(acts)) != len(acts):
                raise ModelError(f"state {s!r} repeats an action")
            normalized[s] = tuple(sorted(acts))
            for m in acts:
                if (s, m) not in self.trans:
                    raise ModelError(f"no distribution for state {s!r}, action {m!r}")
        object.__setattr__(self, "actions", normalized)
        for (s, m), dist in self.trans.items():
            if s not in state_set or m not in self.actions.get(s, ()):
                raise ModelError(f"transition for undeclared pair ({s!r}, {m!r})")
            for t in dist.support():
                if t not in state_set:
                    raise ModelError(f"transition from {s!r} to unknown state {t!r}")

    def label(self, s: str) -> str:
        return self.labels[s]


@dataclass(frozen=True)
class ProbAutomaton:
    """Probabilistic automaton over a finite alphabet with final states.

    With `reduction_mode` (the default) the automaton is constrained the
    way the MDP compilation needs it: a two-letter alphabet and a
    non-final initial state.
    """

    qstates: tuple[str, ...]
    initial: str
    letters: tuple[str, ...]
    delta: dict[tuple[str, str], Distribution]
    final: frozenset[str]
    reduction_mode: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "qstates", tuple(sorted(self.qstates)))
        object.__setattr__(self, "final", frozenset(self.final))
        if len(set(self.qstates)) != len(self.qstates):
            raise ModelError("duplicate automaton state ids")
        qset = set(self.qstates)
        if self.initial not in qset:
            raise ModelError(f"initial state {self.initial!r} not declared")
        if not set(self.final) <= qset:
            raise ModelError("final states must be declared states")
        if len(set(self.letters)) != len(self.letters):
            raise ModelError("duplicate letters")
        for q in self.qstates:
            for a in self.letters:
                if (q, a) not in self.delta:
                    raise ModelError(f"delta undefined for state {q!r}, letter {a!r}")
        for (q, a), dist in self.delta.items():
            if q not in qset or a not in self.letters:
                raise ModelError(f"delta declared for unknown ({q!r}, {a!r})")
            for t in dist.support():
                if t not in qset:
                    raise ModelError(f"delta from {q!r} to unknown state {t!r}")
        if self.reduction_mode:
            if len(self.letters) != 2:
                raise ModelError(
                    f"alphabet size {len(self.letters)} not supported; the MDP "
                    "reduction needs exactly two letters"
                )
            if self.initial in self.final:
                raise ModelError(
                    "initial state is final; the MDP reduction requires a "
                    "non-final initial state"
                )


@dataclass(frozen=True)
class MemorylessStrategy:
    """Per-state distribution over actions."""

    choice: dict[str, Distribution]

    def actions(self, s: str) -> Distribution:
        if s not in self.choice:
            raise ModelError(f"strategy undefined for state {s!r}")
        return self.choice[s]


@dataclass(frozen=True)
class FiniteMemoryStrategy:
    """Strategy with a finite memory automaton.

    `choice[(s, mem)]` is the action distribution played in state `s` with
    memory `mem`; `update[(s, mem, action, next_state)]` is the next memory
    value.  Only tuples reachable in the product need to be present.
    """

    memories: tuple[str, ...]
    initial_memory: str
    choice: dict[tuple[str, str], Distribution]
    update: dict[tuple[str, str, str, str], str]

    def __post_init__(self) -> None:
        if self.initial_memory not in self.memories:
            raise ModelError(f"initial memory {self.initial_memory!r} not declared")
        mems = set(self.memories)
        for (_, mem) in self.choice:
            if mem not in mems:
                raise ModelError(f"choice uses undeclared memory {mem!r}")
        for key, mem in self.update.items():
            if key[1] not in mems or mem not in mems:
                raise ModelError(f"update uses undeclared memory in {key!r}")


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------


def _load_json(text: bytes | str) -> dict:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ModelError("top-level JSON value must be an object")
    return data


def _parse_states(data: dict) -> dict[str, str]:
    labels: dict[str, str] = {}
    for entry in data.get("states", []):
        if not isinstance(entry, dict) or "id" not in entry or "label" not in entry:
            raise ModelError(f"state entry {entry!r} needs \"id\" and \"label\"")
        sid = entry["id"]
        if sid in labels:
            raise ModelError(f"duplicate state id {sid!r}")
        labels[sid] = entry["label"]
    if not labels:
        raise ModelError("model has no states")
    return labels


def parse_model(text: bytes | str) -> Lmc | Mdp:
    """Parse the JSON model format into a validated Lmc or Mdp.

    Probabilities are parsed exactly from "a/b" strings; every error
    (unknown state, bad sum, empty action set, duplicate id) names the
    offending state or transition.
    """
    data = _load_json(text)
    kind = data.get("type")
    if kind not in ("lmc", "mdp"):
        raise ModelError(f"unknown model type {kind!r}")
    labels = _parse_states(data)

    if kind == "lmc":
        rows: dict[str, dict[str, Fraction]] = {}
        for tr in data.get("transitions", []):
            where = f"transition {tr!r}"
            try:
                frm, to, prob = tr["from"], tr["to"], tr["prob"]
            except (TypeError, KeyError):
                raise ModelError(f"{where}: needs \"from\", \"to\", \"prob\"") from None
            p = parse_rational(prob, where)
            if p == 0:
                raise ModelError(f"{where}: zero-probability edges are not stored")
            row = rows.setdefault(frm, {})
            if to in row:
                raise ModelError(f"duplicate edge {frm!r} -> {to!r}")
            row[to] = p
        trans: dict[str, Distribution] = {}
        for s in labels:
            row = rows.get(s)
            if row is None:
                raise ModelError(f"state {s!r} has no outgoing transitions")
            total = sum(row.values())
            if total != 1:
                raise ModelError(
                    f"state {s!r}: outgoing probabilities sum to {total}, expected 1"
                )
            trans[s] = Distribution(row)
        for s in rows:
            if s not in labels:
                raise ModelError(f"transition from unknown state {s!r}")
        return Lmc(tuple(labels), labels, trans)

    arows: dict[tuple[str, str], dict[str, Fraction]] = {}
    for tr in data.get("transitions", []):
        where = f"transition {tr!r}"
        try:
            frm, act, to, prob = tr["from"], tr["action"], tr["to"], tr["prob"]
        except (TypeError, KeyError):
            raise ModelError(
                f"{where}: needs \"from\", \"action\", \"to\", \"prob\""
            ) from None
        p = parse_rational(prob, where)
        if p == 0:
            raise ModelError(f"{where}: zero-probability edges are not stored")
        row = arows.setdefault((frm, act), {})
        if to in row:
            raise ModelError(f"duplicate edge {frm!r} -{act!r}-> {to!r}")
        row[to] = p
    actions: dict[str, list[str]] = {s: [] for s in labels}
    mtrans: dict[tuple[str, str], Distribution] = {}
    for (s, m), row in arows.items():
        if s not in labels:
            raise ModelError(f"transition from unknown state {s!r}")
        total = sum(row.values())
        if total != 1:
            raise ModelError(
                f"state {s!r}, action {m!r}: probabilities sum to {total}, expected 1"
            )
        actions[s].append(m)
        mtrans[(s, m)] = Distribution(row)
    for s, acts in actions.items():
        if not acts:
            raise ModelError(f"state {s!r} has an empty action set")
    return Mdp(tuple(labels), labels, {s: tuple(a) for s, a in actions.items()}, mtrans)


def serialize_model(m: Lmc | Mdp) -> bytes:
    """Canonical JSON bytes: states sorted, probabilities in lowest terms.

    The output is deterministic, so two serialisations of equal models are
    byte-identical and parse_model(serialize_model(m)) == m.
    """
    doc: dict = {
        "type": "lmc" if isinstance(m, Lmc) else "mdp",
        "states": [{"id": s, "label": m.labels[s]} for s in m.states],
    }
    transitions = []
    if isinstance(m, Lmc):
        for s in m.states:
            for t, p in m.trans[s].items():
                transitions.append({"from": s, "to": t, "prob": format_rational(p)})
    else:
        for s in m.states:
            for a in m.actions[s]:
                for t, p in m.trans[(s, a)].items():
                    transitions.append(
                        {"from": s, "action": a, "to": t, "prob": format_rational(p)}
                    )
    doc["transitions"] = transitions
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def parse_pa(text: bytes | str, reduction_mode: bool = True) -> ProbAutomaton:
    """Parse the JSON probabilistic-automaton format.

    With `reduction_mode` the automaton is additionally rejected when the
    initial state is final or the alphabet does not have exactly two
    letters, since the MDP compilation assumes both.
    """
    data = _load_json(text)
    if data.get("type") != "pa":
        raise ModelError(f"unknown model type {data.get('type')!r}, expected \"pa\"")
    qstates = data.get("states")
    if not isinstance(qstates, list) or not qstates:
        raise ModelError("\"states\" must be a nonempty list of state ids")
    if len(set(qstates)) != len(qstates):
        raise ModelError("duplicate automaton state ids")
    letters = data.get("letters")
    if not isinstance(letters, list) or not letters:
        raise ModelError("\"letters\" must be a nonempty list")
    rows: dict[tuple[str, str], dict[str, Fraction]] = {}
    for tr in data.get("delta", []):
        where = f"delta entry {tr!r}"
        try:
            frm, letter, to, prob = tr["from"], tr["letter"], tr["to"], tr["prob"]
        except (TypeError, KeyError):
            raise ModelError(
                f"{where}: needs \"from\", \"letter\", \"to\", \"prob\""
            ) from None
        p = parse_rational(prob, where)
        if p == 0:
            raise ModelError(f"{where}: zero-probability edges are not stored")
        row = rows.setdefault((frm, letter), {})
        if to in row:
            raise ModelError(f"duplicate delta edge {frm!r} -{letter!r}-> {to!r}")
        row[to] = p
    delta: dict[tuple[str, str], Distribution] = {}
    for (q, a), row in rows.items():
        total = sum(row.values())
        if total != 1:
            raise ModelError(
                f"state {q!r}, letter {a!r}: probabilities sum to {total}, expected 1"
            )
        delta[(q, a)] = Distribution(row)
    return ProbAutomaton(
        qstates=tuple(qstates),
        initial=data.get("initial"),
        letters=tuple(letters),
        delta=delta,
        final=frozenset(data.get("final", [])),
        reduction_mode=reduction_mode,
    )


def serialize_pa(a: ProbAutomaton) -> bytes:
    doc = {
        "type": "pa",
        "states": list(a.qstates),
        "initial": a.initial,
        "final": sorted(a.final),
        "letters": list(a.letters),
        "delta": [
            {"from": q, "letter": letter, "to": t, "prob": format_rational(p)}
            for q in a.qstates
            for letter in a.letters
            for t, p in a.delta[(q, letter)].items()
        ],
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def parse_strategy(text: bytes | str) -> MemorylessStrategy | FiniteMemoryStrategy:
    """Parse a strategy file (memoryless or finite-memory)."""
    data = _load_json(text)
    if data.get("type") != "strategy":
        raise ModelError(f"unknown type {data.get('type')!r}, expected \"strategy\"")
    if "memory" not in data:
        rows: dict[str, dict[str, Fraction]] = {}
        for tr in data.get("choice", []):
            where = f"choice entry {tr!r}"
            try:
                frm, act, prob = tr["from"], tr["action"], tr["prob"]
            except (TypeError, KeyError):
                raise ModelError(f"{where}: needs \"from\", \"action\", \"prob\"") from None
            p = parse_rational(prob, where)
            if p > 0:
                rows.setdefault(frm, {})[act] = rows.setdefault(frm, {}).get(act, ZERO) + p
        choice = {}
        for s, row in rows.items():
            if sum(row.values()) != 1:
                raise ModelError(f"strategy at state {s!r} does not sum to 1")
            choice[s] = Distribution(row)
        return MemorylessStrategy(choice)

    rows2: dict[tuple[str, str], dict[str, Fraction]] = {}
    for tr in data.get("choice", []):
        where = f"choice entry {tr!r}"
        try:
            frm, mem, act, prob = tr["from"], tr["memory"], tr["action"], tr["prob"]
        except (TypeError, KeyError):
            raise ModelError(
                f"{where}: needs \"from\", \"memory\", \"action\", \"prob\""
            ) from None
        p = parse_rational(prob, where)
        if p > 0:
            key = (frm, mem)
            rows2.setdefault(key, {})[act] = rows2.setdefault(key, {}).get(act, ZERO) + p
    choice2 = {}
    for (s, mem), row in rows2.items():
        if sum(row.values()) != 1:
            raise ModelError(f"strategy at ({s!r}, {mem!r}) does not sum to 1")
        choice2[(s, mem)] = Distribution(row)
    update = {}
    for tr in data.get("update", []):
        where = f"update entry {tr!r}"
        try:
            key = (tr["from"], tr["memory"], tr["action"], tr["to"])
            update[key] = tr["next_memory"]
        except (TypeError, KeyError):
            raise ModelError(
                f"{where}: needs \"from\", \"memory\", \"action\", \"to\", \"next_memory\""
            ) from None
    return FiniteMemoryStrategy(
        memories=tuple(data["memory"]),
        initial_memory=data.get("initial_memory"),
        choice=choice2,
        update=update,
    )


def serialize_strategy(a: MemorylessStrategy | FiniteMemoryStrategy) -> bytes:
    if isinstance(a, MemorylessStrategy):
        doc: dict = {
            "type": "strategy",
            "choice": [
                {"from": s, "action": m, "prob": format_rational(p)}
                for s in sorted(a.choice)
                for m, p in a.choice[s].items()
            ],
        }
    else:
        doc = {
            "type": "strategy",
            "memory": list(a.memories),
            "initial_memory": a.initial_memory,
            "choice": [
                {"from": s, "memory": mem, "action": m, "prob": format_rational(p)}
                for (s, mem) in sorted(a.choice)
                for m, p in a.choice[(s, mem)].items()
            ],
            "update": [
                {
                    "from": s,
                    "memory": mem,
                    "action": m,
                    "to": t,
                    "next_memory": a.update[(s, mem, m, t)],
                }
                for (s, mem, m, t) in sorted(a.update)
            ],
        }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Generators for the noninterference examples
# ---------------------------------------------------------------------------

# Neutral label of the scheduler/sink states (the coloured states carry the
# observable low value "0" or "1").
NEUTRAL = "-"


def _two_thread_copy(
    which: str,
    copy: int,
    p: Fraction,
    states: dict[str, str],
    actions: dict[str, tuple[str, ...]],
    trans: dict[tuple[str, str], Distribution],
) -> None:
    """One h-copy of the two-thread scheduler MDP.

    Branch m0 runs `l := h` first, branch m1 runs `l := not h` first; with
    h = `copy` the first observed value on branch m0 is `copy` itself.
    """
    s = f"s{copy}"
    t = f"t{copy}"
    first = {"m0": str(copy), "m1": str(1 - copy)}
    states[s] = NEUTRAL
    states[t] = NEUTRAL
    actions[s] = ("m0", "m1")
    for branch in ("m0", "m1"):
        head = ("a" if branch == "m0" else "b") + str(copy)
        mid = head + "m"
        end = head + "e"
        states[head] = first[branch]
        states[mid] = NEUTRAL
        states[end] = str(1 - int(first[branch]))
        trans[(s, branch)] = dirac(head)
        actions.setdefault(head, ("m",))
        actions.setdefault(mid, ("m",))
        actions.setdefault(end, ("m",))
        trans[(head, "m")] = dirac(mid)
        trans[(mid, "m")] = dirac(end)
        if which == "non1" or copy == 1:
            # Example 1, and the h=1 copy in Examples 2 and 3, exit the
            # loop deterministically.
            trans[(end, "m")] = dirac(t)
        elif p == 1:
            trans[(end, "m")] = dirac(t)
        else:
            trans[(end, "m")] = Distribution({t: p, s: 1 - p})
    if which == "non3":
        actions[t] = ("m2", "m3")
        low, high = f"t{copy}c0", f"t{copy}c1"
        states[low] = "0"
        states[high] = "1"
        actions[low] = ("m",)
        actions[high] = ("m",)
        trans[(t, "m2")] = dirac(low)
        trans[(t, "m3")] = dirac(high)
        trans[(low, "m")] = dirac(t)
        trans[(high, "m")] = dirac(t)
    else:
        actions[t] = ("m",)
        trans[(t, "m")] = dirac(t)


def gen_example(which: str, p: Fraction | None = None) -> Mdp:
    """The three noninterference MDPs, with distinguished states s0 and s1.

    non1: both loop bodies run once and terminate in a self-loop sink.
    non2: the h=0 copy loops back to s0 with probability 1-p, sinks at t.
    non3: like non2 but t0, t1 carry the nondeterministic disguise gadget
          (actions m2 and m3 emitting low value 0 or 1 forever).

    `p` is the coin bias for non2/non3 (ignored for non1) and must satisfy
    0 < p <= 1; p = 1 degenerates to non1-style exits with the gadget.
    """
    if which not in ("non1", "non2", "non3"):
        raise ModelError(f"unknown example {which!r}")
    if which != "non1":
        if p is None:
            raise ModelError(f"{which} needs the coin bias p")
        p = Fraction(p)
        if not 0 < p <= 1:
            raise ModelError(f"p must satisfy 0 < p <= 1, got {p}")
    states: dict[str, str] = {}
    actions: dict[str, tuple[str, ...]] = {}
    trans: dict[tuple[str, str], Distribution] = {}
    for copy in (0, 1):
        _two_thread_copy(which, copy, p if p is not None else ONE, states, actions, trans)
    return Mdp(tuple(states), states, actions, trans)
