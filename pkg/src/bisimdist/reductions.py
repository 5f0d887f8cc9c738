"""Model compilers: polynomials and probabilistic automata to MDPs.

Two constructions are implemented as verifiable compilers.

* Polynomial route: a degree-6 polynomial is rewritten into a normal
  form (nonnegative coefficients, every term a product of exactly six
  literals x_i or 1-x_i) and compiled into a two-part MDP whose free
  choices sit in n two-action states.  Strategies correspond
  one-to-one to points x in the unit cube, and the distance of the two
  distinguished states is exactly 1 - q(x)/(n+1)^7 where q is the
  normal-form term sum.

* Automaton route: a two-letter probabilistic automaton (non-final
  initial state) is compiled into an MDP whose only nondeterminism is a
  single binary choice taken after a random word has been emitted.  The
  distance between the two distinguished states under the always-x
  strategy equals the series sum over words w of Pr(w) / 3^(|w|+1),
  which links distance minimisation to the automaton's emptiness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

from .distances import distance_exact
from .models import (
    Distribution,
    Mdp,
    MemorylessStrategy,
    ModelError,
    ProbAutomaton,
    dirac,
    format_rational,
    parse_rational,
)
from .strategies import induce_memoryless

__all__ = [
    "Polynomial",
    "NormalFormPoly",
    "parse_polynomial",
    "serialize_polynomial",
    "etr2_transform",
    "etr3_normalize",
    "poly_to_mdp",
    "poly_strategy",
    "strategy_point",
    "poly_threshold",
    "pa_to_mdp",
    "pa_strategy_x",
    "pa_theta",
    "word_probability",
    "series_value",
    "series_value_with_flip",
    "emptiness_search",
]

ZERO = Fraction(0)
ONE = Fraction(1)


@dataclass(frozen=True)
class Polynomial:
    """Multivariate polynomial with exact rational coefficients.

    Monomials are keyed by exponent vectors of length `nvars`; absent
    keys mean coefficient zero.
    """

    nvars: int
    monomials: tuple[tuple[Fraction, tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        seen = set()
        for coef, exps in self.monomials:
            if len(exps) != self.nvars:
                raise ModelError(f"exponent vector {exps} has wrong length")
            if any(e < 0 for e in exps):
                raise ModelError(f"negative exponent in {exps}")
            if exps in seen:
                raise ModelError(f"duplicate exponent vector {exps}")
            seen.add(exps)

    def degree(self) -> int:
        return max((sum(e) for c, e in self.monomials if c != 0), default=0)

    def evaluate(self, x: list[Fraction]) -> Fraction:
        if len(x) != self.nvars:
            raise ModelError(f"expected {self.nvars} coordinates, got {len(x)}")
        total = ZERO
        for coef, exps in self.monomials:
            term = coef
            for xi, e in zip(x, exps):
                term *= xi**e
            total += term
        return total


def _poly_from_dict(nvars: int, data: dict[tuple[int, ...], Fraction]) -> Polynomial:
    monomials = tuple(
        (coef, exps) for exps, coef in sorted(data.items()) if coef != 0
    )
    return Polynomial(nvars, monomials)


def parse_polynomial(text: bytes | str) -> Polynomial:
    """JSON polynomial format: {"vars": n, "monomials": [{"coef": "a/b", "exps": [..]}]}."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"not valid JSON: {exc}") from exc
    nvars = data.get("vars")
    if not isinstance(nvars, int) or nvars < 0:
        raise ModelError("\"vars\" must be a nonnegative integer")
    acc: dict[tuple[int, ...], Fraction] = {}
    for entry in data.get("monomials", []):
        coef = parse_rational(entry.get("coef"), f"monomial {entry!r}")
        exps = tuple(entry.get("exps", []))
        if len(exps) != nvars or not all(isinstance(e, int) and e >= 0 for e in exps):
            raise ModelError(f"bad exponent vector in {entry!r}")
        acc[exps] = acc.get(exps, ZERO) + coef
    return _poly_from_dict(nvars, acc)


def serialize_polynomial(p: Polynomial) -> bytes:
    doc = {
        "vars": p.nvars,
        "monomials": [
            {"coef": format_rational(c), "exps": list(e)} for c, e in p.monomials
        ],
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _poly_mul(
    nvars: int,
    a: dict[tuple[int, ...], Fraction],
    b: dict[tuple[int, ...], Fraction],
) -> dict[tuple[int, ...], Fraction]:
    out: dict[tuple[int, ...], Fraction] = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            key = tuple(x + y for x, y in zip(ea, eb))
            out[key] = out.get(key, ZERO) + ca * cb
    return {e: c for e, c in out.items() if c != 0}


def etr2_transform(p: Polynomial) -> Polynomial:
    """Substitute x_i = y_i - z_i and negate: q(y, z) = -p(y - z).

    q has 2n variables (y_1..y_n then z_1..z_n) and the same degree
    bound; p has some x with p(x) < 0 iff q has a unit-box point with
    q > 0.
    """
    if p.degree() > 6:
        raise ModelError(f"degree {p.degree()} exceeds 6")
    n = p.nvars
    zero_exp = (0,) * (2 * n)

    def linear(i: int) -> dict[tuple[int, ...], Fraction]:
        ey = tuple(1 if k == i else 0 for k in range(2 * n))
        ez = tuple(1 if k == n + i else 0 for k in range(2 * n))
        return {ey: ONE, ez: -ONE}

    acc: dict[tuple[int, ...], Fraction] = {}
    for coef, exps in p.monomials:
        term = {zero_exp: -coef}
        for i, e in enumerate(exps):
            for _ in range(e):
                term = _poly_mul(2 * n, term, linear(i))
        for key, c in term.items():
            acc[key] = acc.get(key, ZERO) + c
    return _poly_from_dict(2 * n, acc)


Literal = int  # i > 0 means x_i, i < 0 means 1 - x_|i|


@dataclass(frozen=True)
class NormalFormPoly:
    """Sum of products of exactly six literals with coefficients summing
    to one, plus an offset and the global rescale factor.

    For every x: scale * (sum_j c_j * term_j(x) - theta) equals the
    original polynomial's value at x.
    """

    nvars: int
    theta: Fraction
    terms: tuple[tuple[Fraction, tuple[Literal, ...]], ...]
    scale: Fraction

    def __post_init__(self) -> None:
        if self.nvars < 1:
            raise ModelError("normal form needs at least one variable")
        if self.theta < 0:
            raise ModelError("theta must be nonnegative")
        if self.scale <= 0:
            raise ModelError("scale must be positive")
        total = ZERO
        for coef, lits in self.terms:
            if coef <= 0:
                raise ModelError("term coefficients must be positive")
            if len(lits) != 6:
                raise ModelError(f"term {lits} does not have exactly 6 literals")
            for lit in lits:
                if lit == 0 or abs(lit) > self.nvars:
                    raise ModelError(f"literal {lit} out of range")
            total += coef
        if total != 1:
            raise ModelError(f"coefficients sum to {total}, expected 1")

    def term_sum(self, x: list[Fraction]) -> Fraction:
        """sum_j c_j * prod_k literal value, the quantity the MDP encodes."""
        if len(x) != self.nvars:
            raise ModelError(f"expected {self.nvars} coordinates, got {len(x)}")
        total = ZERO
        for coef, lits in self.terms:
            value = coef
            for lit in lits:
                value *= x[lit - 1] if lit > 0 else ONE - x[-lit - 1]
            total += value
        return total


def etr3_normalize(p: Polynomial) -> NormalFormPoly:
    """Rewrite into the nonnegative six-literal normal form.

    Negative monomials -c * x_{i_1}..x_{i_d} are expanded as
    -c + sum_k c (1 - x_{i_k}) * x_{i_{k+1}}..x_{i_d}, collecting the
    constants into theta.  Terms of degree below six are repeatedly
    split against x_1 and 1 - x_1, and finally everything is rescaled so
    the coefficients sum to one (the factor is reported in `scale`).
    """
    if p.degree() > 6:
        raise ModelError(f"degree {p.degree()} exceeds 6")
    if p.nvars < 1:
        raise ModelError("constant polynomials cannot be normalised")

    theta = ZERO
    terms: list[tuple[Fraction, list[Literal]]] = []
    for coef, exps in p.monomials:
        lits: list[Literal] = []
        for i, e in enumerate(exps):
            lits.extend([i + 1] * e)
        if coef > 0:
            terms.append((coef, lits))
        elif coef < 0:
            c = -coef
            theta += c
            for k in range(len(lits)):
                terms.append((c, [-lits[k]] + lits[k + 1 :]))

    expanded: list[tuple[Fraction, tuple[Literal, ...]]] = []
    for coef, lits in terms:
        queue = [lits]
        while queue:
            cur = queue.pop()
            if len(cur) == 6:
                expanded.append((coef, tuple(cur)))
            else:
                queue.append([1] + cur)
                queue.append([-1] + cur)
    scale = sum((c for c, _ in expanded), ZERO)
    if scale == 0:
        raise ModelError("polynomial has no positive part; nothing to encode")
    rescaled = tuple((c / scale, lits) for c, lits in sorted(expanded))
    return NormalFormPoly(p.nvars, theta / scale, rescaled, scale)


# ---------------------------------------------------------------------------
# Polynomial -> MDP
# ---------------------------------------------------------------------------

_CHOOSE_HI = "pos"  # action from the i-th choice state to the w_i sink chain
_CHOOSE_LO = "neg"  # action to the w_{-i} side


def poly_to_mdp(nf: NormalFormPoly) -> tuple[Mdp, str, str]:
    """Compile the normal form into the two-part gadget MDP.

    Part one is a chain per term: for term j and position k, states
    u{j}_{k} -> v{j}_{k} -> w{j}_{k}, where w carries the literal's
    index as its label, chained left to right and ending in a sink.
    Part two is the evaluation loop: a hub that fans out to one
    two-action choice state per variable (and a sink), with the chosen
    w_i / w_{-i} states looping back to the hub.  The distance of s1
    and s2 under the strategy for x is 1 - term_sum(x)/(n+1)^7.
    """
    n = nf.nvars
    states: dict[str, str] = {}
    actions: dict[str, tuple[str, ...]] = {}
    trans: dict[tuple[str, str], Distribution] = {}

    def add(name: str, label: str, *, act: tuple[str, ...] = ("m",)) -> str:
        states[name] = label
        actions[name] = act
        return name

    add("s1", "0")
    add("uprime", "0")
    add("t", "0")
    trans[("uprime", "m")] = dirac("t")
    trans[("t", "m")] = dirac("t")
    fanout: dict[str, Fraction] = {}
    for j, (coef, lits) in enumerate(nf.terms, start=1):
        for k, lit in enumerate(lits, start=1):
            u = add(f"u{j}_{k}", "0")
            v = add(f"v{j}_{k}", "0")
            w = add(f"w{j}_{k}", str(lit))
            trans[(u, "m")] = dirac(v)
            trans[(v, "m")] = dirac(w)
            nxt = f"u{j}_{k + 1}" if k < 6 else "uprime"
            trans[(w, "m")] = dirac(nxt)
        fanout[f"u{j}_1"] = fanout.get(f"u{j}_1", ZERO) + coef
    trans[("s1", "m")] = Distribution(fanout)

    add("s2", "0")
    add("u", "0")
    add("tprime", "0")
    trans[("s2", "m")] = dirac("u")
    trans[("tprime", "m")] = dirac("tprime")
    share = Fraction(1, n + 1)
    hub = {f"v{i}": share for i in range(1, n + 1)}
    hub["tprime"] = share
    trans[("u", "m")] = Distribution(hub)
    for i in range(1, n + 1):
        v = add(f"v{i}", "0", act=(_CHOOSE_HI, _CHOOSE_LO))
        hi = add(f"w{i}", str(i))
        lo = add(f"w-{i}", str(-i))
        trans[(v, _CHOOSE_HI)] = dirac(hi)
        trans[(v, _CHOOSE_LO)] = dirac(lo)
        trans[(hi, "m")] = dirac("u")
        trans[(lo, "m")] = dirac("u")

    return Mdp(tuple(states), states, actions, trans), "s1", "s2"


def poly_strategy(mdp: Mdp, x: list[Fraction]) -> MemorylessStrategy:
    """The memoryless strategy for a point of the unit cube: the i-th
    choice state takes its positive branch with probability x_i."""
    choice: dict[str, Distribution] = {}
    position = 0
    for s in mdp.states:
        acts = mdp.actions[s]
        if acts == (_CHOOSE_LO, _CHOOSE_HI) or acts == (_CHOOSE_HI, _CHOOSE_LO):
            position += 1
        else:
            choice[s] = dirac(acts[0])
    if position != len(x):
        raise ModelError(f"expected {position} coordinates, got {len(x)}")
    for i, xi in enumerate(x, start=1):
        xi = Fraction(xi)
        if not 0 <= xi <= 1:
            raise ModelError(f"coordinate {i} = {xi} outside [0, 1]")
        entries = {}
        if xi > 0:
            entries[_CHOOSE_HI] = xi
        if xi < 1:
            entries[_CHOOSE_LO] = ONE - xi
        choice[f"v{i}"] = Distribution(entries)
    return MemorylessStrategy(choice)


def strategy_point(mdp: Mdp, a: MemorylessStrategy) -> list[Fraction]:
    """Inverse of `poly_strategy`: read the cube point off the strategy."""
    x: list[Fraction] = []
    i = 1
    while f"v{i}" in mdp.labels:
        x.append(a.choice[f"v{i}"](_CHOOSE_HI))
        i += 1
    return x


def poly_threshold(nf: NormalFormPoly) -> Fraction:
    """The distance threshold matching "original polynomial > 0".

    Some x in the unit cube has term_sum(x) > theta iff some memoryless
    strategy brings the distance of s1 and s2 below this value.
    """
    return ONE - nf.theta * Fraction(1, nf.nvars + 1) ** 7


# ---------------------------------------------------------------------------
# Probabilistic automaton -> MDP
# ---------------------------------------------------------------------------

_RESERVED = ("$", "x", "y")


def pa_to_mdp(a: ProbAutomaton) -> tuple[Mdp, str, str]:
    """Compile a two-letter automaton into the two-part MDP.

    Part one has one state per letter (uniform moves between letters and
    a choice state), a choice state with two actions leading to the two
    differently-labelled sinks, and the sinks themselves.  Part two
    simulates the automaton with probability 1/3 per letter and routes
    the remaining 1/3 to the sink matching the current state's
    final/non-final status; it has no real choices.
    """
    if not a.reduction_mode:
        raise ModelError("the MDP compilation needs a reduction-mode automaton")
    for letter in a.letters:
        if letter in _RESERVED:
            raise ModelError(f"letter {letter!r} collides with a reserved state name")

    states: dict[str, str] = {}
    actions: dict[str, tuple[str, ...]] = {}
    trans: dict[tuple[str, str], Distribution] = {}

    def add(name: str, label: str, *, act: tuple[str, ...] = ("m",)) -> str:
        states[name] = label
        actions[name] = act
        return name

    third = Fraction(1, 3)
    for letter in a.letters:
        add(letter, letter)
    add("$", "$", act=("mx", "my"))
    add("x", "x")
    add("y", "y")
    for letter in a.letters:
        row = {other: third for other in a.letters}
        row["$"] = third
        trans[(letter, "m")] = Distribution(row)
    trans[("$", "mx")] = dirac("x")
    trans[("$", "my")] = dirac("y")
    trans[("x", "m")] = dirac("x")
    trans[("y", "m")] = dirac("y")

    add("$x", "$")
    add("$y", "$")
    add("x'", "x")
    add("y'", "y")
    trans[("$x", "m")] = dirac("x'")
    trans[("$y", "m")] = dirac("y'")
    trans[("x'", "m")] = dirac("x'")
    trans[("y'", "m")] = dirac("y'")
    for sigma in a.letters:
        for q in a.qstates:
            add(f"{sigma}.{q}", sigma)
    for sigma in a.letters:
        for q in a.qstates:
            row = {}
            for letter in a.letters:
                for q2, prob in a.delta[(q, letter)].items():
                    key = f"{letter}.{q2}"
                    row[key] = row.get(key, ZERO) + third * prob
            row["$y" if q in a.final else "$x"] = third
            trans[(f"{sigma}.{q}", "m")] = Distribution(row)

    s1 = a.letters[0]
    s2 = f"{a.letters[0]}.{a.initial}"
    return Mdp(tuple(states), states, actions, trans), s1, s2


def pa_strategy_x(mdp: Mdp) -> MemorylessStrategy:
    """The memoryless strategy that always takes the x branch."""
    choice = {}
    for s in mdp.states:
        acts = mdp.actions[s]
        choice[s] = dirac("mx" if "mx" in acts else acts[0])
    return MemorylessStrategy(choice)


def pa_theta(a: ProbAutomaton) -> Fraction:
    """Distance of the two distinguished states under the always-x
    strategy; the reduction's threshold."""
    mdp, s1, s2 = pa_to_mdp(a)
    induced = induce_memoryless(mdp, pa_strategy_x(mdp))
    return distance_exact(induced.lmc, pairs=[(s1, s2)])[(s1, s2)]


def word_probability(a: ProbAutomaton, word: tuple[str, ...]) -> Fraction:
    """Acceptance probability of a word (mass on final states after
    reading it from the initial state)."""
    dist: dict[str, Fraction] = {a.initial: ONE}
    for letter in word:
        if letter not in a.letters:
            raise ModelError(f"letter {letter!r} not in the alphabet")
        nxt: dict[str, Fraction] = {}
        for q, mass in dist.items():
            for q2, prob in a.delta[(q, letter)].items():
                nxt[q2] = nxt.get(q2, ZERO) + mass * prob
        dist = nxt
    return sum((mass for q, mass in dist.items() if q in a.final), ZERO)


def _level_mass(a: ProbAutomaton, depth: int) -> list[Fraction]:
    """Per length k <= depth: sum over all words of length k of the
    acceptance probability (computed by pushing the summed state mass)."""
    mass = {q: ZERO for q in a.qstates}
    mass[a.initial] = ONE
    out = []
    for _ in range(depth + 1):
        out.append(sum((mass[q] for q in a.final), ZERO))
        nxt = {q: ZERO for q in a.qstates}
        for q, m in mass.items():
            if m == 0:
                continue
            for letter in a.letters:
                for q2, prob in a.delta[(q, letter)].items():
                    nxt[q2] += m * prob
        mass = nxt
    return out


def series_value(a: ProbAutomaton, depth: int) -> tuple[Fraction, Fraction]:
    """Exact bounds on the always-x distance series.

    lower = sum over words of length <= depth of Pr(w)/3^(|w|+1);
    upper adds the geometric tail bound (2/3)^(depth+1).
    """
    if depth < 0:
        raise ModelError("depth must be nonnegative")
    levels = _level_mass(a, depth)
    lower = sum(
        (levels[k] * Fraction(1, 3 ** (k + 1)) for k in range(depth + 1)), ZERO
    )
    return lower, lower + Fraction(2, 3) ** (depth + 1)


def series_value_with_flip(
    a: ProbAutomaton, word: tuple[str, ...], depth: int
) -> tuple[Fraction, Fraction]:
    """Series bounds for the strategy that deviates to the y branch on
    exactly one word.  Replacing that word's term turns Pr(w) into
    1 - Pr(w), so the value drops below the always-x series by exactly
    (2 Pr(w) - 1)/3^(|w|+1)."""
    if depth < len(word):
        raise ModelError("depth must cover the flipped word")
    lower, upper = series_value(a, depth)
    pr = word_probability(a, word)
    shift = (ONE - 2 * pr) * Fraction(1, 3 ** (len(word) + 1))
    return lower + shift, upper + shift


def emptiness_search(a: ProbAutomaton, maxlen: int) -> tuple[str, ...] | None:
    """Exhaustive emptiness check: the first word (ordered by length,
    then letter order) with acceptance probability above 1/2, or None."""
    if maxlen < 0:
        raise ModelError("maxlen must be nonnegative")
    half = Fraction(1, 2)
    level: list[tuple[tuple[str, ...], dict[str, Fraction]]] = [
        ((), {a.initial: ONE})
    ]
    for length in range(maxlen + 1):
        for word, dist in level:
            accept = sum((mass for q, mass in dist.items() if q in a.final), ZERO)
            if accept > half:
                return word
        if length == maxlen:
            break
        nxt_level = []
        for word, dist in level:
            for letter in a.letters:
                nxt: dict[str, Fraction] = {}
                for q, mass in dist.items():
                    for q2, prob in a.delta[(q, letter)].items():
                        nxt[q2] = nxt.get(q2, ZERO) + mass * prob
                nxt_level.append((word + (letter,), nxt))
        level = nxt_level
    return None
