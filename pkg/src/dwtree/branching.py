"""Continuous-time branching embedding and the exponential-ladder coupling.

The embedding: every born vertex v produces children at the points of a
Poisson process of rate f(depth(v)); the tree at time t, restricted to its
first n births, has the same law as the discrete n-vertex tree.  Vertices
carry Ulam–Harris labels (tuples of child ranks, root = empty tuple) and
only born vertices are materialized.

The ladder: independent E_k ~ Exp(f(k)) with tail sums F_k = sum_{i>=k} E_i,
truncated at an index K where the remaining expected mass sum_{i>K} 1/f(i)
drops below a requested tolerance.  `coupled_run` builds the branching
process level by level with the ladder spliced in: the first child gap of
each level's pioneer (earliest-born vertex) *is* the ladder variable E_k.
That makes two facts exact by construction rather than statistically true:
the first depth-(k+1) birth is at most tau_{1,k} + E_k, and the root's
first child time equals E_0.

Per-level horizons h_k = tau_{1,k} + F_k are non-increasing (since
tau_{1,k+1} - tau_{1,k} <= E_k = F_k - F_{k+1}), so generating level k up to
h_k is enough for every later level count.  Levels are complete up to their
horizon; H_k counts depth-k births in [0, h_k] minus the pioneer.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _kernels as _k
from .errors import BudgetError, ConfigError, ToleranceError
from .growth import GrowthTrace
from .rng import MASK64, Xoshiro256PP
from .weights import WeightSpec, base_log_table, classify_regime, log_weight

__all__ = [
    "BirthEvent",
    "BranchingRun",
    "CoupledRun",
    "ExponentialLadder",
    "coupled_run",
    "sample_ladder",
    "simulate_branching",
]

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class BirthEvent:
    """One birth: Ulam–Harris label, depth (= label length), absolute time."""

    label: tuple[int, ...]
    depth: int
    birth_time: float

    def label_str(self) -> str:
        """Dot-joined child ranks; the root renders as the empty string."""
        return ".".join(str(r) for r in self.label)


@dataclass
class BranchingRun:
    """Birth events in birth-time order, plus the explosion-guard flag.

    Behaves as a sequence of BirthEvent; `truncated` is True when node_cap
    stopped the run early (the events list is then a valid partial prefix).
    """

    events: list[BirthEvent]
    truncated: bool

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[BirthEvent]:
        return iter(self.events)

    def __getitem__(self, i):
        return self.events[i]

    def level_counts(self, k_max: int | None = None) -> np.ndarray:
        """Number of births per depth, up to k_max (default: max observed)."""
        depths = np.array([e.depth for e in self.events], dtype=np.int64)
        hi = int(depths.max()) if k_max is None else int(k_max)
        return np.bincount(depths, minlength=hi + 1)[: hi + 1]

    def to_csv(self) -> str:
        """CSV rows (time, depth, parent-label, label), header included."""
        lines = ["time,depth,parent_label,label"]
        for e in self.events:
            parent = ".".join(str(r) for r in e.label[:-1]) if e.label else ""
            lines.append(f"{e.birth_time!r},{e.depth},{parent},{e.label_str()}")
        return "\n".join(lines) + "\n"


def simulate_branching(
    spec: WeightSpec,
    t_max: float,
    node_cap: int = 10_000_000,
    seed: int = 0,
    *,
    stream: int = 0,
) -> BranchingRun:
    """All births up to time t_max, in non-decreasing birth order.

    Gaps are generated lazily (a vertex's next gap is drawn when its previous
    event fires), so memory is proportional to the alive frontier.  Draw
    order per event: the parent's next gap, then the newborn's first gap;
    the very first draw is the root's first gap (consumed even when
    t_max = 0).  node_cap stops super-exponential explosions: the run then
    returns the partial prefix with truncated=True rather than failing.
    """
    if not isinstance(spec, WeightSpec):
        raise TypeError("spec must be a WeightSpec")
    t_max = float(t_max)
    if not t_max >= 0.0:
        raise ValueError(f"t_max must be >= 0, got {t_max!r}")
    if not isinstance(node_cap, int) or isinstance(node_cap, bool) or node_cap < 1:
        raise ValueError(f"node_cap must be a positive integer, got {node_cap!r}")

    vcap = max(16, min(node_cap + 1, 4096))
    birth = np.zeros(vcap, dtype=np.float64)
    depth = np.zeros(vcap, dtype=np.int64)
    parent = np.full(vcap, -1, dtype=np.int64)
    crank = np.zeros(vcap, dtype=np.int64)
    nchild = np.zeros(vcap, dtype=np.int64)
    hcap = 4096
    heap_t = np.zeros(hcap, dtype=np.float64)
    heap_v = np.zeros(hcap, dtype=np.int64)
    lcap = 256
    logw = base_log_table(spec, lcap)
    i64s = np.zeros(4, dtype=np.int64)
    f64s = np.zeros(2, dtype=np.float64)
    rng = np.zeros(4, dtype=np.uint64)
    _k.seed_stream(np.uint64(seed & MASK64), np.uint64(stream), rng)

    i64s[0] = 1  # the root
    inv_scale = math.ldexp(1.0, -spec.scale_log2)
    f64s[0] = inv_scale
    g = _k._exp_gap(rng, logw[0], inv_scale)
    if g <= t_max:
        i64s[1] = _k._heap_push(heap_t, heap_v, 0, g, 0)

    while True:
        status = _k.advance_branching(
            birth, depth, parent, crank, nchild, heap_t, heap_v, logw,
            i64s, f64s, rng, t_max, node_cap,
        )
        if status == _k.OK or status == _k.TRUNCATED:
            break
        if status == _k.GROW:
            new_cap = min(2 * vcap, node_cap + 1)
            if new_cap <= vcap:  # pragma: no cover - capped growth stall
                raise RuntimeError("vertex capacity growth stalled")
            nb = np.zeros(new_cap, dtype=np.float64)
            nb[:vcap] = birth
            nd = np.zeros(new_cap, dtype=np.int64)
            nd[:vcap] = depth
            npar = np.full(new_cap, -1, dtype=np.int64)
            npar[:vcap] = parent
            ncr = np.zeros(new_cap, dtype=np.int64)
            ncr[:vcap] = crank
            nnc = np.zeros(new_cap, dtype=np.int64)
            nnc[:vcap] = nchild
            birth, depth, parent, crank, nchild = nb, nd, npar, ncr, nnc
            vcap = new_cap
        elif status == _k.GROW_HEAP:
            nt = np.zeros(2 * hcap, dtype=np.float64)
            nt[:hcap] = heap_t
            nv = np.zeros(2 * hcap, dtype=np.int64)
            nv[:hcap] = heap_v
            heap_t, heap_v = nt, nv
            hcap *= 2
        elif status == _k.GROW_LOGW:
            lcap *= 2
            logw = base_log_table(spec, lcap)
        else:  # pragma: no cover
            raise RuntimeError(f"unexpected kernel status {status}")

    n_v = int(i64s[0])
    truncated = bool(i64s[2])
    labels: list[tuple[int, ...]] = [()]
    for i in range(1, n_v):
        labels.append(labels[int(parent[i])] + (int(crank[i]),))
    events = [
        BirthEvent(label=labels[i], depth=int(depth[i]), birth_time=float(birth[i]))
        for i in range(n_v)
    ]
    return BranchingRun(events=events, truncated=truncated)


# -- exponential ladder ---------------------------------------------------------


@dataclass(frozen=True)
class ExponentialLadder:
    """Independent E_k ~ Exp(f(k)) for k <= truncation_K, with tail sums.

    f_tail[k] = sum_{i=k}^{K} e[i] (backward summation), so
    f_tail[k] - f_tail[k+1] == e[k] up to one rounding ulp.  tail_bound is
    the expected mass of the dropped indices, sum_{i>K} 1/f(i), and is below
    the tolerance the ladder was built with.
    """

    e: np.ndarray
    f_tail: np.ndarray
    truncation_K: int
    tail_bound: float


def _tail_cut(spec: WeightSpec, k_max: int, tail_tol: float,
              scan_cap: int) -> tuple[int, float, int]:
    """Smallest K >= k_max with sum_{i>K} 1/f(i) < tail_tol.

    The scan collects terms t_i = 1/f(i) until they are far below the
    tolerance and locally log-convexly decaying (ratio <= 1/2 and still
    shrinking); the remainder past the scan is then bounded by the geometric
    extrapolation t_M * r/(1-r).  Weight functions whose reciprocal tail
    does not decay that way (constant, periodic, plain exponential) exhaust
    the scan and raise ToleranceError — they are outside the divergent
    regime the ladder is defined for.
    """
    terms: list[float] = []
    i = 0
    while True:
        if i >= scan_cap:
            raise ToleranceError(
                f"no truncation index with tail below {tail_tol!r} within "
                f"{scan_cap} terms for family '{spec.family}'"
            )
        lw = log_weight(spec, i)
        terms.append(math.exp(-lw) if lw != math.inf else 0.0)
        if i > max(k_max, 1):
            t = terms[i]
            prev = terms[i - 1]
            if t == 0.0:
                break
            r = t / prev if prev > 0 else 0.0
            r_prev = prev / terms[i - 2] if terms[i - 2] > 0 else 0.0
            if r <= 0.5 and r <= r_prev and t < tail_tol * 1e-9:
                break
        i += 1
    m = len(terms) - 1
    last = terms[m]
    if last > 0.0 and terms[m - 1] > 0.0:
        r = last / terms[m - 1]
        geo_remainder = last * r / (1.0 - r)
    else:
        geo_remainder = 0.0
    # suffix sums: tail(K) = sum_{i=K+1}^{M} t_i + remainder
    tail = geo_remainder
    tails = [0.0] * (m + 1)
    for j in range(m, k_max - 1, -1):
        tails[j] = tail  # tail(j) before adding t_j = sum over i > j
        tail += terms[j]
    for K in range(k_max, m + 1):
        if tails[K] < tail_tol:
            return K, tails[K], m
    raise ToleranceError(
        f"tail stays above {tail_tol!r} up to index {m} for family "
        f"'{spec.family}'"
    )


def _draw_gap(rng: Xoshiro256PP, base_lw: float, inv_scale: float) -> float:
    """Exp(f) gap in log space; the power-of-two rescale multiplies exactly."""
    e = -math.log1p(-rng.random())
    if e <= 0.0:
        return 0.0
    return math.exp(math.log(e) - base_lw) * inv_scale


def _ladder_with_rng(
    spec: WeightSpec,
    k_max: int,
    tail_tol: float,
    rng: Xoshiro256PP,
    check_regime: bool,
    scan_cap: int,
) -> ExponentialLadder:
    if not isinstance(k_max, int) or isinstance(k_max, bool) or k_max < 1:
        raise ValueError(f"k_max must be a positive integer, got {k_max!r}")
    if not tail_tol > 0.0:
        raise ValueError(f"tail_tol must be positive, got {tail_tol!r}")
    if check_regime:
        # the tail scan bounds its remainder geometrically, which needs the
        # reciprocal weights to at least halve step over step by the horizon;
        # ratio >= 2 on a monotone family is exactly that
        report = classify_regime(spec, horizon=max(10, k_max))
        if not (report.wsv_monotone and report.d_last_ratio >= 2.0):
            raise ConfigError(
                f"family '{spec.family}' does not have diverging weight "
                "ratios by this horizon; the ladder tail cannot be "
                "truncated (pass check_regime=False to override)"
            )
    K, tail_bound, _ = _tail_cut(spec, k_max, tail_tol, scan_cap)
    inv_scale = math.ldexp(1.0, -spec.scale_log2)
    lw = base_log_table(spec, K + 1)
    e = np.empty(K + 1, dtype=np.float64)
    for i in range(K + 1):
        e[i] = _draw_gap(rng, lw[i], inv_scale)
    f_tail = np.empty(K + 1, dtype=np.float64)
    acc = 0.0
    for i in range(K, -1, -1):
        acc = acc + e[i]
        f_tail[i] = acc
    return ExponentialLadder(
        e=e, f_tail=f_tail, truncation_K=K, tail_bound=float(tail_bound)
    )


def sample_ladder(
    spec: WeightSpec,
    k_max: int,
    tail_tol: float,
    seed: int,
    *,
    stream: int = 0,
    check_regime: bool = True,
    scan_cap: int = 200_000,
) -> ExponentialLadder:
    """Draw the truncated exponential ladder (E_0 first, then E_1, ...)."""
    rng = Xoshiro256PP(seed, stream)
    return _ladder_with_rng(spec, k_max, tail_tol, rng, check_regime, scan_cap)


# -- the coupling ---------------------------------------------------------------


@dataclass
class CoupledRun:
    """One coupled realization: process + spliced ladder, per-level records.

    taus[k] is the first depth-k birth time; e[k] the pioneer's first-child
    gap (== the ladder variable by construction); h[k] the count of depth-k
    births within the window f_tail[k] past the pioneer, excluding the
    pioneer itself.  level_offsets[k] holds the materialized birth times of
    level k *relative to its pioneer* (first entry always 0.0), complete at
    least up to windows[k] (== f_tail[k] for the levels run).  horizons[k]
    is the nonincreasing absolute chain min(horizons[k-1], taus[k] +
    f_tail[k]), for reporting only: once f_tail[k] drops below one ulp of
    the clock it saturates at taus[k], which is why per-level queries go
    through the offset frame instead.  bias_bound[k] bounds the expected
    undercount of h[k] due to the ladder truncation: tail_bound times the
    depth-k birth rate N_{k-1}(h_k) * f(k-1) at the horizon.

    Iterating unpacks as (trace, e, h).
    """

    trace: GrowthTrace
    e: np.ndarray
    h: np.ndarray
    taus: np.ndarray
    level_offsets: tuple[np.ndarray, ...]
    windows: np.ndarray
    horizons: np.ndarray
    f_tail: np.ndarray
    tail_bound: float
    bias_bound: np.ndarray
    births: int

    def __iter__(self):
        return iter((self.trace, self.e, self.h))

    def level_count_at(self, j: int, t: float) -> int:
        """N_j(t): depth-j births up to absolute time t.

        Valid for t <= horizons[j].  The query is answered in the level's
        offset frame, so its resolution is limited by the rounding of
        t - taus[j] (about one ulp of taus[j]).
        """
        off = t - float(self.taus[j])
        if off > self.windows[j]:
            raise ValueError(
                f"level {j} is only materialized up to {self.horizons[j]!r}"
            )
        return int(bisect_right(self.level_offsets[j], off))


def coupled_run(
    spec: WeightSpec,
    depth_max: int,
    seed: int,
    *,
    stream: int = 0,
    tail_tol: float = 1e-12,
    birth_budget: int = 1_000_000,
    check_regime: bool = True,
) -> CoupledRun:
    """Grow the embedding to depth_max with the ladder coupling spliced in.

    Stream layout: the ladder variables E_0..E_K are drawn first, then level
    by level (parents in birth order) the remaining child gaps.

    All per-level arithmetic runs in the level's own offset frame (times
    relative to the level's pioneer).  Under rapidly growing weights the
    windows f_tail[k] shrink like 1/f(k) while the absolute clock stays
    O(1), so absolute arithmetic would stall below one ulp within ~18 levels
    for factorial weights; offsets keep every level at its natural scale.
    Three facts are exact by construction, not just statistically true: the
    pioneer's first child sits at offset E_k (placed unconditionally — in
    exact arithmetic it is always inside the window), the root's first child
    time equals E_0, and the reported increments taus[k+1] - taus[k] never
    exceed E_k (the absolute cumsum is nudged down an ulp when rounding
    would overshoot).
    """
    if not isinstance(depth_max, int) or isinstance(depth_max, bool) or depth_max < 1:
        raise ValueError(f"depth_max must be a positive integer, got {depth_max!r}")
    rng = Xoshiro256PP(seed, stream)
    ladder = _ladder_with_rng(
        spec, depth_max, tail_tol, rng, check_regime, scan_cap=200_000
    )
    e_lad = ladder.e
    f_tail = ladder.f_tail

    lw = base_log_table(spec, depth_max + 1)
    inv_scale = math.ldexp(1.0, -spec.scale_log2)

    offsets: list[list[float]] = [[0.0]]
    taus = [0.0]
    # The measuring window at level k is the ladder tail F_k itself.  The
    # recursive form min(win_{k-1} - dtau, F_k) is the same quantity in exact
    # arithmetic (dtau <= E_{k-1} always, so the min never binds), but in
    # floats the subtraction cancels to within ulp(F_{k-1}) of F_k and the
    # leftover absolute error compounds by a factor ~k per level -- for
    # factorial weights the window is eaten whole by depth ~20.  Taking the
    # backward sums directly keeps every window at its own scale.
    windows = [float(f_tail[k]) for k in range(depth_max + 1)]
    horizons = [float(f_tail[0])]
    dtaus: list[float] = []
    births = 1
    for k in range(depth_max):
        win = windows[k]
        parents = offsets[k]
        children: list[float] = []
        for idx, delta in enumerate(parents):
            t = delta
            if idx == 0:
                # the pioneer sits at offset 0, so its first child's offset
                # is the ladder variable itself, exactly
                if e_lad[k] == 0.0:
                    raise BudgetError(
                        f"child gap underflowed to zero at depth {k}; the "
                        "weights exceed the floating-point range"
                    )
                t = e_lad[k]
                children.append(t)
                births += 1
            while True:
                gap = _draw_gap(rng, lw[k], inv_scale)
                if gap == 0.0:
                    raise BudgetError(
                        f"child gap underflowed to zero at depth {k}; the "
                        "weights exceed the floating-point range"
                    )
                t = t + gap
                if t > win:
                    break
                children.append(t)
                births += 1
                if births > birth_budget:
                    raise BudgetError(
                        f"more than {birth_budget} births before depth "
                        f"{depth_max}; weight family '{spec.family}' likely "
                        "lacks divergent ratios"
                    )
        children.sort()
        dtau = children[0]
        dtaus.append(dtau)
        # absolute clock, for reporting: never let rounding push the
        # increment above the spliced gap
        t_next = taus[k] + dtau
        while t_next - taus[k] > e_lad[k]:
            t_next = math.nextafter(t_next, taus[k])
        taus.append(t_next)
        h_next = min(horizons[k], t_next + float(f_tail[k + 1]))
        if h_next < t_next:
            h_next = t_next
        horizons.append(h_next)
        offsets.append([c - dtau for c in children])

    h = np.empty(depth_max + 1, dtype=np.int64)
    for k in range(depth_max + 1):
        h[k] = bisect_right(offsets[k], windows[k]) - 1
    bias = np.zeros(depth_max + 1, dtype=np.float64)
    for k in range(1, depth_max + 1):
        n_prev = bisect_right(offsets[k - 1], dtaus[k - 1] + windows[k])
        if ladder.tail_bound > 0.0 and n_prev > 0:
            log_b = (
                math.log(ladder.tail_bound)
                + math.log(n_prev)
                + log_weight(spec, k - 1)
            )
            bias[k] = math.exp(log_b) if log_b < 709.0 else math.inf
    level_arrays = tuple(np.asarray(lv, dtype=np.float64) for lv in offsets)
    profile = np.array([len(lv) for lv in offsets], dtype=np.int64)
    trace = GrowthTrace(
        n=births,
        final_depth=depth_max,
        z=births - depth_max,
        profile=profile,
        tau=float(taus[depth_max]),
        first_passage=np.asarray(taus, dtype=np.float64),
        j_indicators=None,
        checkpoints=(),
        rebuilds=0,
        capacity=0,
    )
    return CoupledRun(
        trace=trace,
        e=e_lad[:depth_max].copy(),
        h=h,
        taus=np.asarray(taus, dtype=np.float64),
        level_offsets=level_arrays,
        windows=np.asarray(windows, dtype=np.float64),
        horizons=np.asarray(horizons, dtype=np.float64),
        f_tail=f_tail,
        tail_bound=ladder.tail_bound,
        bias_bound=bias,
        births=births,
    )


def sample_f_tail(
    spec: WeightSpec,
    k: int,
    tail_tol: float,
    samples: int,
    seed: int,
) -> np.ndarray:
    """Monte Carlo draws of the ladder tail F_k = sum_{i>=k} E_i, vectorized.

    Same truncation rule as sample_ladder (smallest K >= k with the dropped
    mass below tail_tol), but draws `samples` independent tails in one shot
    for moment estimation; numpy's PCG64 drives the bulk sampling here, not
    the per-run xoshiro streams.
    """
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    if not tail_tol > 0.0:
        raise ValueError(f"tail_tol must be positive, got {tail_tol!r}")
    if not isinstance(samples, int) or isinstance(samples, bool) or samples < 1:
        raise ValueError(f"samples must be a positive integer, got {samples!r}")
    K, _, _ = _tail_cut(spec, k, tail_tol, scan_cap=200_000)
    lw = base_log_table(spec, K + 1)
    inv_rates = np.exp(-lw[k : K + 1]) * math.ldexp(1.0, -spec.scale_log2)
    gen = np.random.default_rng(seed)
    draws = gen.standard_exponential(size=(samples, K + 1 - k))
    return draws @ inv_rates
