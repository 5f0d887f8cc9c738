from fractions import Fraction
import random, time
import bisimdist.general_lt1 as gl
from bisimdist.models import Mdp, Distribution
from bisimdist.general_lt1 import reduce_bisim_to_lt1

def rand_mdp(rng, n, max_actions=2, n_labels=2):
    states = [f'q{i}' for i in range(n)]
    labels = {s: f'L{rng.randrange(n_labels)}' for s in states}
    actions = {}
    trans = {}
    for s in states:
        k = rng.randint(1, max_actions)
        acts = tuple(f'a{j}' for j in range(k))
        actions[s] = acts
        for m in acts:
            support = rng.sample(states, rng.randint(1, min(3, n)))
            weights = [rng.randint(1, 4) for _ in support]
            total = sum(weights)
            trans[(s, m)] = Distribution({t: Fraction(w, total) for t, w in zip(support, weights)})
    return Mdp(tuple(states), labels, actions, trans)

rng = random.Random(42)
for trial in range(24):
    n = rng.randint(2, 5)
    d = rand_mdp(rng, n)
    s1, s2 = rng.sample(d.states, 2)
dd, _ = reduce_bisim_to_lt1(d, s1, s2)

t0 = time.time()
by_label = {}
for s in dd.states: by_label.setdefault(dd.labels[s], set()).add(s)
antichain = {frozenset(c) for c in by_label.values()}
rounds = 0
while True:
    rounds += 1
    current = sorted(antichain, key=lambda e: (-len(e), tuple(sorted(e))))
    options = {t: [e for e in current if t in e] for t in dd.states}
    witness_memo = {}
    def check(e):
        if e not in witness_memo:
            ts = time.time()
            witness_memo[e] = gl._has_witness(dd, e, options)
            dt = time.time() - ts
            if dt > 1.0:
                print(f'   slow witness size={len(e)} {sorted(e)} {dt:.1f}s', flush=True)
        return witness_memo[e]
    pair_memo = {}
    def pair_ok(a, b):
        key = (a,b) if a<=b else (b,a)
        if key not in pair_memo:
            pair_memo[key] = check(frozenset(key))
        return pair_memo[key]
    failed = []
    for e in current:
        if len(e) == 1: continue
        members = sorted(e)
        fine = all(pair_ok(a,b) for i,a in enumerate(members) for b in members[i+1:])
        if not fine or not check(e):
            failed.append(e)
    maxopt = max(len(v) for v in options.values())
    print(f'round {rounds}: antichain={len(antichain)} failed={len(failed)} maxopts={maxopt} t={time.time()-t0:.1f}s', flush=True)
    if not failed or time.time() - t0 > 150: break
    antichain -= set(failed)
    for e in failed:
        for x in sorted(e):
            antichain.add(e - {x})
    antichain = {e for e in antichain if not any(e < o for o in antichain)}
print('final антichain size:', len(antichain), flush=True)
