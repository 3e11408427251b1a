"""Closed-form laws and combinatorial diagnostics for depth profiles.

Three groups of tools:

* exact expectations for the embedded branching process -- mean level
  counts and the induced first-passage (Markov) bounds;
* profile combinatorics -- detecting depths whose vertex count dominates
  their influence window, the covering walker that routes any depth to
  such a dominating depth, and prefix cover mass;
* exact moments of the ladder tails F_k = sum_{i>=k} Exp(f(i)) through
  the first-nonzero-index recursion, plus a Monte Carlo report that fits
  the smallest constants making the product-moment bounds hold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .branching import _tail_cut
from .errors import ConfigError, ToleranceError
from .weights import (
    UNBOUNDED,
    WeightSpec,
    base_log_table,
    geometric_mean_weight,
    psi,
)

_EXP_MAX = 709.0  # exp() overflows just past this


def _exp_or_inf(log_x: float) -> float:
    if log_x > _EXP_MAX:
        return math.inf
    return math.exp(log_x)


def _check_depth(k, *, minimum: int, name: str = "k") -> int:
    if not isinstance(k, int) or isinstance(k, bool) or k < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {k!r}")
    return k


# -- exact branching expectations -------------------------------------------


def expected_level_count(spec: WeightSpec, k: int, t: float) -> float:
    """E[N_k(t)] for the embedded branching process: (t*ell_k)^k / k!.

    ell_k is the geometric mean of f(0..k-1); the count of depth-0 vertices
    is identically 1.  Evaluated in log space so factorial weights at large
    k stay finite.
    """
    _check_depth(k, minimum=0)
    if not t >= 0.0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    if k == 0:
        return 1.0
    if t == 0.0:
        return 0.0
    ell = geometric_mean_weight(spec, k)
    return _exp_or_inf(k * math.log(t * ell) - math.lgamma(k + 1.0))


def markov_depth_bound(spec: WeightSpec, k: int, t: float) -> tuple[float, float]:
    """Bounds on P(tau_{1,k} <= t): ((t*ell_k)^k/k!, (e*t*ell_k/k)^k).

    The first is the Markov bound through E[N_k(t)]; the second relaxes
    k! >= (k/e)^k and is the form that telescopes nicely in proofs.  The
    exact bound never exceeds the loose one.
    """
    _check_depth(k, minimum=1)
    if not t >= 0.0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    if t == 0.0:
        return (0.0, 0.0)
    ell = geometric_mean_weight(spec, k)
    base = math.log(t * ell)
    exact = _exp_or_inf(k * base - math.lgamma(k + 1.0))
    loose = _exp_or_inf(k * (1.0 + base - math.log(k)))
    return (exact, loose)


# -- accumulation detection and the covering walker --------------------------


@dataclass(frozen=True)
class AccumulationEvent:
    """A depth r whose count s = N_r dominates its influence window.

    Dominating means N_{r-1} <= s and N_{r+i} <= s for 1 <= i <= window
    (depths beyond the profile count as 0).  This is the exactly-s variant:
    s is the actual count at r, so membership for any smaller target count
    is decidable from the same record.
    """

    r: int
    s: int
    window: int


def _check_profile(profile) -> list[int]:
    prof = list(profile)
    if not prof:
        raise ValueError("profile must be non-empty")
    out = []
    for r, c in enumerate(prof):
        ci = int(c)
        if ci != c or ci < 1:
            raise ValueError(
                f"profile counts must be positive integers; N_{r} = {c!r}"
            )
        out.append(ci)
    if out[0] != 1:
        raise ValueError(f"N_0 must be 1 (single root), got {out[0]}")
    return out


def _window_fn(spec, psi_cap, psi_fn):
    # psi_fn lets tests inject a constant window to make examples
    # hand-checkable; production uses the influence-window length.
    if psi_fn is not None:
        return psi_fn
    return lambda r: psi(spec, r, cap=psi_cap)


def _dominates(prof: list[int], r: int, w: int) -> bool:
    s = prof[r]
    if r >= 1 and prof[r - 1] > s:
        return False
    hi = min(len(prof) - 1, r + w)
    for i in range(r + 1, hi + 1):
        if prof[i] > s:
            return False
    return True


def find_accumulations(
    profile,
    spec: WeightSpec,
    *,
    psi_cap: int = 10_000,
    psi_fn=None,
) -> list[AccumulationEvent]:
    """All depths 1 <= r <= d whose count dominates their window.

    The global argmax of the profile always qualifies.  Raises ConfigError
    if the influence window is unbounded at some occupied depth -- the
    window condition is undefined there.
    """
    prof = _check_profile(profile)
    window_of = _window_fn(spec, psi_cap, psi_fn)
    events: list[AccumulationEvent] = []
    for r in range(1, len(prof)):
        w = window_of(r)
        if w == UNBOUNDED:
            raise ConfigError(
                f"influence window is unbounded at occupied depth {r}; "
                "accumulation detection needs a finite window"
            )
        if _dominates(prof, r, int(w)):
            events.append(AccumulationEvent(r=r, s=prof[r], window=int(w)))
    return events


def accumulations_to_csv(events: list[AccumulationEvent]) -> str:
    """CSV rows (r, s, r') for detected events; each one covers itself."""
    lines = ["r,s,rprime"]
    for ev in events:
        lines.append(f"{ev.r},{ev.s},{ev.r}")
    return "\n".join(lines) + "\n"


def covering_walk(
    profile,
    spec: WeightSpec,
    r: int,
    *,
    psi_cap: int = 10_000,
    psi_fn=None,
) -> int:
    """Walk from depth r to a depth whose count dominates its window.

    While the window check fails at the walker's depth (with s = the count
    there), some depth among r-1, r+1, ..., r+window holds at least s+1
    vertices; jump to the one with the most vertices, smallest index on
    ties, and re-check.  Every hop strictly increases the count under the
    walker, so the walk ends within max(profile) steps; the step budget
    d * max(profile) only guards against an internal inconsistency.

    Depth 0 borrows the window of depth 1 (the window length needs a
    previous depth to compare against).
    """
    prof = _check_profile(profile)
    _check_depth(r, minimum=0, name="r")
    if r > len(prof) - 1:
        raise ValueError(f"r must be <= max depth {len(prof) - 1}, got {r}")
    return _walk_from(prof, _window_fn(spec, psi_cap, psi_fn), r)


def _walk_from(prof: list[int], window_of, r: int) -> int:
    # validation-free core shared with cover_map, which walks every depth
    # of one already-checked profile
    d = len(prof) - 1
    for _ in range(d * max(prof) + 1):
        w = window_of(r if r >= 1 else 1)
        if w == UNBOUNDED:
            raise ConfigError(
                f"influence window is unbounded at depth {r}; "
                "the covering walk needs a finite window"
            )
        w = int(w)
        if _dominates(prof, r, w):
            return r
        s = prof[r]
        best_r = -1
        best_n = s  # the failed check guarantees some candidate exceeds s
        for cand in (r - 1, *range(r + 1, r + w + 1)):
            n_c = prof[cand] if 0 <= cand <= d else 0
            if n_c > best_n:
                best_r, best_n = cand, n_c
        assert best_r >= 0, "window check failed but no candidate exceeds s"
        r = best_r
    raise RuntimeError(
        "internal error: covering walk exceeded its step budget; "
        "each hop must strictly increase the count under the walker"
    )


@dataclass
class CoverMap:
    """Walker destination for every depth, and the prefix cover mass.

    assignment maps each depth r in [0, d] to the dominating depth r' its
    walk ends at; covered inverts that (r' -> sorted depths it covers).
    cover_mass is the total vertex count over depths whose destination
    lies in the prefix [0, m].
    """

    assignment: dict[int, int]
    covered: dict[int, tuple[int, ...]]
    cover_mass: int
    m: int
    profile: tuple[int, ...]

    def to_csv(self) -> str:
        """CSV rows (r, s, r'): depth, its count, its covering depth."""
        lines = ["r,s,rprime"]
        for r in sorted(self.assignment):
            lines.append(f"{r},{self.profile[r]},{self.assignment[r]}")
        return "\n".join(lines) + "\n"


def cover_map(
    profile,
    spec: WeightSpec,
    m: int,
    *,
    psi_cap: int = 10_000,
    psi_fn=None,
) -> CoverMap:
    """Run the covering walk from every depth and tally the prefix mass."""
    prof = _check_profile(profile)
    d = len(prof) - 1
    _check_depth(m, minimum=0, name="m")
    if m > d:
        raise ValueError(f"m must be <= max depth {d}, got {m}")
    window_of = _window_fn(spec, psi_cap, psi_fn)
    cache: dict[int, float] = {}

    def cached(rr: int) -> float:
        if rr not in cache:
            cache[rr] = window_of(rr)
        return cache[rr]

    assignment = {r: _walk_from(prof, cached, r) for r in range(d + 1)}
    covered: dict[int, list[int]] = {}
    for r, rp in assignment.items():
        covered.setdefault(rp, []).append(r)
    mass = sum(prof[r] for r, rp in assignment.items() if rp <= m)
    return CoverMap(
        assignment=assignment,
        covered={rp: tuple(sorted(rs)) for rp, rs in covered.items()},
        cover_mass=mass,
        m=m,
        profile=tuple(prof),
    )


# -- exact moments of the ladder tails ---------------------------------------


def a_value(
    spec: WeightSpec,
    k: int,
    ell: int,
    j_cap: int = 60,
    tol: float = 1e-12,
) -> float:
    """A_{k,ell}: the composition sum behind the ladder-tail moments.

    A_{k,ell} sums prod_j (f(k)/f(j))^{y_j} over all sequences (y_j)_{j>=k}
    of non-negative integers with sum ell.  Splitting on the first nonzero
    index gives the recursion evaluated here by dynamic programming:

        A_{k,ell} = sum_{j>=k} (f(k)/f(j))^ell * A_{j,ell-1},   A_{.,0} = 1.

    Inner sums are truncated at j_cap; the discarded tail of each is
    majorized geometrically by its last retained term with ratio
    (f(j_cap)/f(j_cap+1))^column, which requires that one-step ratio to be
    below 1/2 (the diverging-ratio families this targets have it shrinking
    to 0).  Tail errors are propagated through the recursion by a parallel
    error DP, and the total certificate must come in at or below tol.
    Always >= 1 (the all-mass-at-j=k sequence alone contributes 1).
    """
    _check_depth(k, minimum=0)
    _check_depth(ell, minimum=0, name="ell")
    if ell == 0:
        return 1.0
    _check_depth(j_cap, minimum=k, name="j_cap")
    if not tol > 0.0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    lw = base_log_table(spec, j_cap + 2)
    r_cut = math.exp(lw[j_cap] - lw[j_cap + 1])
    if not r_cut < 0.5:
        raise ToleranceError(
            f"weight ratio f({j_cap})/f({j_cap + 1}) = {r_cut:.3g} is not "
            "below 1/2, so the discarded tail has no geometric majorant; "
            "raise j_cap or use a family with diverging ratios"
        )
    rows = range(k, j_cap + 1)
    prev = {j: 1.0 for j in rows}
    prev_err = {j: 0.0 for j in rows}
    for col in range(1, ell + 1):
        q = r_cut**col
        cur: dict[int, float] = {}
        cur_err: dict[int, float] = {}
        for j in rows:
            acc = 0.0
            err = 0.0
            for j2 in range(j, j_cap + 1):
                coef = math.exp(col * (lw[j] - lw[j2]))
                acc += coef * prev[j2]
                err += coef * prev_err[j2]
            tail = math.exp(col * (lw[j] - lw[j_cap])) * prev[j_cap] * q / (1.0 - q)
            cur[j] = acc
            cur_err[j] = err + tail
        prev, prev_err = cur, cur_err
    if prev_err[k] > tol:
        raise ToleranceError(
            f"certified truncation tail {prev_err[k]:.3g} exceeds tol "
            f"{tol:.3g} at j_cap={j_cap}; raise j_cap"
        )
    return prev[k]


def moment_g(
    spec: WeightSpec,
    k: int,
    ell: int,
    j_cap: int = 60,
    tol: float = 1e-12,
) -> float:
    """E[G_k^ell] for G_k = f(k-1) * F_k, F_k the ladder tail from depth k.

    Expanding F_k^ell over compositions and using E[Exp(a)^n] = n!/a^n
    collapses the expectation to ell! (f(k-1)/f(k))^ell A_{k,ell}.
    Scale-free: G_k is invariant under rescaling the weight family.
    """
    _check_depth(k, minimum=1)
    _check_depth(ell, minimum=0, name="ell")
    if ell == 0:
        return 1.0
    a = a_value(spec, k, ell, j_cap=j_cap, tol=tol)
    lw = base_log_table(spec, k + 1)
    return math.factorial(ell) * math.exp(ell * (lw[k - 1] - lw[k])) * a


# -- Monte Carlo product-moment report ----------------------------------------


@dataclass
class BoundCheckReport:
    """Monte Carlo product moments of the G_k with fitted bound constants.

    The bound shapes come with existential constants, so the report fits
    the smallest constant making each shape hold on the sampled grid and
    reports it -- nothing here asserts.  pairs rows carry E[G_k G_l]
    against the tail shape f(l-1)/f(l) and the product shape
    (f(k-1)/f(k)) * (f(l-1)/f(l)); sets rows carry E[prod G_j^{a_j}]
    against 2^-|B| * prod_j (f(j-1)/f(j))^{a_j}.
    """

    family: str
    mc_samples: int
    seed: int
    truncation_K: int
    means: dict[int, float]
    pairs: list[dict]
    sets: list[dict]
    fitted_c_tail: float
    fitted_c_product: float
    fitted_c_sets: dict[int, float]

    def to_json(self, indent: int = 2) -> str:
        payload = {
            "family": self.family,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "truncation_K": self.truncation_K,
            "means": {str(j): v for j, v in self.means.items()},
            "pairs": self.pairs,
            "sets": self.sets,
            "fitted_c_tail": self.fitted_c_tail,
            "fitted_c_product": self.fitted_c_product,
            "fitted_c_sets": {str(d): v for d, v in self.fitted_c_sets.items()},
        }
        return json.dumps(payload, indent=indent, sort_keys=True)


def product_moment_report(
    spec: WeightSpec,
    pairs=None,
    sets=None,
    *,
    mc_samples: int = 100_000,
    seed: int = 0,
    tail_tol: float = 1e-12,
) -> BoundCheckReport:
    """Estimate product moments of the G_k by sampling the ladder jointly.

    pairs is an iterable of (k, l) with 1 <= k < l for E[G_k G_l]; sets is
    an iterable of (depths, exponents) with exponents in {1, 2} for
    E[prod_j G_j^{a_j}].  One truncated ladder is drawn per sample (bulk
    numpy sampling, suffix sums for the tails), every requested statistic
    is read off the same draws, and the smallest constants making the
    bound shapes hold are fitted per shape.  Purely diagnostic.
    """
    pair_list = [tuple(p) for p in pairs] if pairs is not None else []
    set_list = []
    if sets is not None:
        for depths, exps in sets:
            set_list.append((tuple(depths), tuple(exps)))
    if not pair_list and not set_list:
        raise ValueError("nothing to check: provide pairs and/or sets")
    for k, ell in pair_list:
        _check_depth(k, minimum=1)
        _check_depth(ell, minimum=k + 1, name="l")
    for depths, exps in set_list:
        if len(depths) != len(exps) or not depths:
            raise ValueError(f"set {depths!r} needs one exponent per depth")
        for j in depths:
            _check_depth(j, minimum=1, name="set depth")
        if list(depths) != sorted(set(depths)):
            raise ValueError(f"set depths must be strictly increasing, got {depths!r}")
        if any(a not in (1, 2) for a in exps):
            raise ValueError(f"exponents must be in {{1, 2}}, got {exps!r}")
    if not isinstance(mc_samples, int) or mc_samples < 2:
        raise ValueError(f"mc_samples must be an integer >= 2, got {mc_samples!r}")

    needed = sorted(
        {k for k, _ in pair_list}
        | {ell for _, ell in pair_list}
        | {j for depths, _ in set_list for j in depths}
    )
    jmin, jmax = needed[0], needed[-1]
    K, _, _ = _tail_cut(spec, jmax, tail_tol, 200_000)
    lw = base_log_table(spec, K + 1)
    inv_rates = np.exp(-lw[jmin : K + 1])
    f_prev = {j: math.exp(lw[j - 1]) for j in needed}
    col = {j: j - jmin for j in needed}

    keys: list[tuple] = [("mean", j) for j in needed]
    keys += [("pair", k, ell) for k, ell in pair_list]
    keys += [("set", depths, exps) for depths, exps in set_list]
    acc = {key: [0.0, 0.0] for key in keys}

    gen = np.random.default_rng(seed)
    chunk = 65_536
    done = 0
    while done < mc_samples:
        b = min(chunk, mc_samples - done)
        draws = gen.standard_exponential((b, K + 1 - jmin)) * inv_rates
        tails = np.cumsum(draws[:, ::-1], axis=1)[:, ::-1]
        g = {j: tails[:, col[j]] * f_prev[j] for j in needed}
        for key in keys:
            if key[0] == "mean":
                v = g[key[1]]
            elif key[0] == "pair":
                v = g[key[1]] * g[key[2]]
            else:
                _, depths, exps = key
                v = np.ones(b)
                for j, a in zip(depths, exps):
                    v = v * (g[j] if a == 1 else g[j] * g[j])
            acc[key][0] += float(v.sum())
            acc[key][1] += float((v * v).sum())
        done += b

    def summarize(key):
        s, s2 = acc[key]
        mean = s / mc_samples
        var = max(s2 / mc_samples - mean * mean, 0.0)
        return mean, math.sqrt(var / mc_samples)

    ratio = lambda j: math.exp(lw[j - 1] - lw[j])
    means = {j: summarize(("mean", j))[0] for j in needed}
    pair_rows = []
    c_tail = 0.0
    c_product = 0.0
    for k, ell in pair_list:
        est, se = summarize(("pair", k, ell))
        shape_tail = ratio(ell)
        shape_product = ratio(k) * ratio(ell)
        pair_rows.append(
            {
                "k": k,
                "l": ell,
                "estimate": est,
                "stderr": se,
                "mean_product": means[k] * means[ell],
                "shape_tail": shape_tail,
                "shape_product": shape_product,
                "fitted_c_tail": est / shape_tail,
                "fitted_c_product": est / shape_product,
            }
        )
        c_tail = max(c_tail, est / shape_tail)
        c_product = max(c_product, est / shape_product)
    set_rows = []
    c_sets: dict[int, float] = {}
    for depths, exps in set_list:
        est, se = summarize(("set", depths, exps))
        shape = math.ldexp(1.0, -len(depths))
        for j, a in zip(depths, exps):
            shape *= ratio(j) ** a
        set_rows.append(
            {
                "depths": list(depths),
                "exponents": list(exps),
                "estimate": est,
                "stderr": se,
                "shape": shape,
                "fitted_c": est / shape,
            }
        )
        d = len(depths)
        c_sets[d] = max(c_sets.get(d, 0.0), est / shape)
    return BoundCheckReport(
        family=spec.family,
        mc_samples=mc_samples,
        seed=seed,
        truncation_K=K,
        means=means,
        pairs=pair_rows,
        sets=set_rows,
        fitted_c_tail=c_tail,
        fitted_c_product=c_product,
        fitted_c_sets=c_sets,
    )
