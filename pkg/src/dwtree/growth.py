"""Depth-profile and full-tree growth under depth-dependent attachment.

The process: vertex n+1 attaches to an existing vertex v with probability
proportional to w(depth(v)), where w is the configured weight function.  Only
the *profile* (vertex counts per depth) matters for that law, so the fast
path (`grow_profile`) never materialises the tree; `grow_tree` additionally
picks a uniformly random occupant of the sampled depth as the actual parent
and records the edge list.

Two sampler implementations exist on purpose:

- `ProfileState` + `step`: pure python, one attachment at a time.  This is
  the readable reference implementation and the engine behind `grow_tree`.
- `grow_profile`: compiled kernels from `_kernels`, same numeric policy
  (identical log-weight tables, anchor rules, Fenwick layout), batched to
  millions of steps.

Both use *base* log-weights for mass bookkeeping; a power-of-two rescale of
the weight function (`WeightSpec.scale_log2`) affects only holding times,
via one exact multiply by 2**-scale_log2.  Hence depth/profile output is
bit-identical across rescales and clocks scale exactly.

Draw order per step is fixed and documented: (1) holding time, when clock
tracking is on; (2) parent depth; (3) for tree growth only, the occupant
index within that depth.  Nothing else consumes randomness, so runs are
reproducible from (seed, stream) alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as _k
from .rng import MASK64, Xoshiro256PP
from .weights import WeightSpec, base_log_table

__all__ = [
    "AttachmentRecord",
    "Checkpoint",
    "GrowthTrace",
    "ProfileState",
    "TreeStorage",
    "grow_profile",
    "grow_tree",
    "new_state",
    "step",
]


@dataclass(frozen=True)
class AttachmentRecord:
    """One attachment event: parent depth, the new vertex's depth, and the
    holding time that elapsed before it (None when clock tracking is off)."""

    parent_depth: int
    new_depth: int
    holding_time: float | None


@dataclass(frozen=True)
class Checkpoint:
    """Snapshot row after the tree reached n vertices.

    z = n - d is the depth deficit; tau is the embedded-clock time of the
    n-th arrival (None when the run does not track the clock).
    """

    n: int
    d: int
    z: int
    tau: float | None


class ProfileState:
    """Mutable profile sampler state (pure python reference implementation).

    Keeps per-depth vertex counts plus a Fenwick tree over the per-depth
    sampling masses m_r = N_r * exp(ln w(r) - L), where the anchor L tracks
    the largest occupied term ln N_r + ln w(r).  Re-anchoring happens when a
    term drifts more than 200 log-units above L, when a brand-new depth
    would exceed it by more than 640 (float headroom), and every 2**16 steps
    to bound additive drift.  Masses >= ~745 log-units below L underflow to
    exact zero; their true selection probability is < 1e-300, which is the
    documented truncation.
    """

    __slots__ = (
        "spec",
        "track_clock",
        "counts",
        "n",
        "depth",
        "tau",
        "anchor",
        "total_mass",
        "rebuilds",
        "_logw",
        "_wexp",
        "_marr",
        "_tree",
        "_cap",
        "_wfill",
        "_steps",
        "_tauc",
        "_inv_scale",
        "_maxterm",
    )

    def __init__(self, spec: WeightSpec, *, track_clock: bool = False,
                 capacity: int = 64):
        if not isinstance(spec, WeightSpec):
            raise TypeError("spec must be a WeightSpec")
        self.spec = spec
        self.track_clock = bool(track_clock)
        cap = max(8, int(capacity))
        self._cap = cap
        self.counts = np.zeros(cap, dtype=np.int64)
        self.counts[0] = 1
        self._logw = base_log_table(spec, cap)
        self._wexp = np.zeros(cap, dtype=np.float64)
        self._marr = np.zeros(cap, dtype=np.float64)
        self._tree = np.zeros(cap + 1, dtype=np.float64)
        self.n = 1
        self.depth = 0
        self.tau = 0.0
        self._tauc = 0.0
        self._inv_scale = math.ldexp(1.0, -spec.scale_log2)
        self._wfill = 0
        self._steps = 0
        self.rebuilds = 0
        self.anchor = 0.0
        self.total_mass = 0.0
        self._maxterm = float(self._logw[0])
        self._rebuild()

    # -- internals ----------------------------------------------------------

    def _rebuild(self) -> None:
        # anchor = largest occupied term ln N_r + ln w(r); terms only grow,
        # so step() maintains the running max and no scan is needed
        cap = self._cap
        d = self.depth
        counts = self.counts
        logw = self._logw
        L = self._maxterm
        self.anchor = L
        fill = min(d + 2, cap)
        wexp = self._wexp
        marr = self._marr
        tree = self._tree
        total = 0.0
        for r in range(fill):
            lw = logw[r] - L
            # exp underflows to exact 0 below -746; skip the call there
            w = math.exp(lw) if lw > -746.0 else 0.0
            wexp[r] = w
            c = counts[r]
            m = c * w if c > 0 else 0.0
            marr[r] = m
            tree[r + 1] = m
            total += m
        self._wfill = fill
        marr[fill:] = 0.0
        tree[fill + 1:] = 0.0
        for i in range(1, cap + 1):
            t = tree[i]
            if t != 0.0:
                j = i + (i & (-i))
                if j <= cap:
                    tree[j] += t
        self.total_mass = total
        self._steps = 0
        self.rebuilds += 1

    def _grow(self) -> None:
        new_cap = max(2 * self._cap, self.depth + 64)
        old_counts = self.counts
        self.counts = np.zeros(new_cap, dtype=np.int64)
        self.counts[: self._cap] = old_counts
        self._logw = base_log_table(self.spec, new_cap)
        self._wexp = np.zeros(new_cap, dtype=np.float64)
        self._marr = np.zeros(new_cap, dtype=np.float64)
        self._tree = np.zeros(new_cap + 1, dtype=np.float64)
        self._cap = new_cap
        self._rebuild()

    def _search(self, target: float) -> int:
        """Smallest depth whose cumulative mass reaches target (ties: lower)."""
        tree = self._tree
        size = self._cap
        pos = 0
        stride = 1
        while (stride << 1) <= size:
            stride <<= 1
        rem = target
        while stride > 0:
            nxt = pos + stride
            if nxt <= size and tree[nxt] < rem:
                pos = nxt
                rem -= tree[nxt]
            stride >>= 1
        return pos

    # -- views --------------------------------------------------------------

    @property
    def capacity(self) -> int:
        return self._cap

    def profile(self) -> np.ndarray:
        """Vertex counts per depth, 0..max depth (copy)."""
        return self.counts[: self.depth + 1].copy()

    def mass(self, r: int) -> float:
        """Current sampling mass at depth r (relative to the anchor)."""
        if r < 0 or r >= self._cap:
            return 0.0
        return float(self._marr[r])


def new_state(spec: WeightSpec, *, track_clock: bool = False) -> ProfileState:
    """Fresh single-root state for step-by-step growth."""
    return ProfileState(spec, track_clock=track_clock)


def step(state: ProfileState, rng: Xoshiro256PP) -> AttachmentRecord:
    """Advance one attachment; mutates state, returns the event record."""
    st = state
    if st.depth + 3 >= st._cap:
        st._grow()

    hold: float | None = None
    if st.track_clock:
        u = rng.random()
        e = -math.log1p(-u)
        if e > 0.0 and st.total_mass > 0.0:
            hold = math.exp(math.log(e) - st.anchor - math.log(st.total_mass))
            hold *= st._inv_scale
        else:
            hold = 0.0
        y = hold - st._tauc
        t = st.tau + y
        st._tauc = (t - st.tau) - y
        st.tau = t

    u = rng.random()
    target = u * st.total_mass
    r = st._search(target)
    if r > st.depth:
        r = st.depth
    if st._marr[r] == 0.0:
        q = r
        while q < st.depth and st._marr[q] == 0.0:
            q += 1
        if st._marr[q] == 0.0:
            q = r
            while q > 0 and st._marr[q] == 0.0:
                q -= 1
        r = q

    q = r + 1
    st.n += 1
    if q > st.depth:
        st.counts[q] = 1
        st.depth = q
    else:
        st.counts[q] += 1

    lw = st._logw[q] - st.anchor
    c = st.counts[q]
    t_q = st._logw[q] if c == 1 else math.log(c) + st._logw[q]
    if t_q > st._maxterm:
        st._maxterm = t_q
    if lw > _k.NEW_DEPTH_LIMIT:
        st._rebuild()
    else:
        if q >= st._wfill:
            st._wexp[q] = math.exp(lw)
            st._wfill = q + 1
        w = st._wexp[q]
        tree = st._tree
        size = st._cap
        i = q + 1
        while i <= size:
            tree[i] += w
            i += i & (-i)
        st._marr[q] += w
        st.total_mass += w
        st._steps += 1
        if t_q - st.anchor > _k.DRIFT_LIMIT or st._steps >= _k.REBUILD_PERIOD:
            st._rebuild()

    return AttachmentRecord(parent_depth=r, new_depth=q, holding_time=hold)


# -- results ------------------------------------------------------------------


@dataclass
class GrowthTrace:
    """Result of a growth run.

    profile[k] counts vertices at depth k; z = n - final_depth.  tau is the
    embedded-clock arrival time of the n-th vertex (None unless tracked).
    first_passage[k] is the arrival time of the first depth-k vertex
    (requires clock tracking); j_indicators[k] is 1 when the second vertex
    of depth k appeared while k was still the maximum depth.  capacity and
    rebuilds are sampler diagnostics (live array size scales with the max
    depth, not with n).
    """

    n: int
    final_depth: int
    z: int
    profile: np.ndarray
    tau: float | None = None
    first_passage: np.ndarray | None = None
    j_indicators: np.ndarray | None = None
    checkpoints: tuple[Checkpoint, ...] = ()
    rebuilds: int = 0
    capacity: int = 0

    def to_json_dict(self) -> dict:
        out: dict = {
            "n": int(self.n),
            "final_depth": int(self.final_depth),
            "z": int(self.z),
            "tau": None if self.tau is None else float(self.tau),
            "profile": [int(c) for c in self.profile],
        }
        if self.first_passage is not None:
            out["first_passage"] = [float(t) for t in self.first_passage]
        if self.j_indicators is not None:
            out["j_indicators"] = [int(b) for b in self.j_indicators]
        return out

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_json_dict(), indent=indent, sort_keys=True)

    def checkpoint_csv(self) -> str:
        """Checkpoint rows as CSV text with header n,d,z,tau."""
        lines = ["n,d,z,tau"]
        for cp in self.checkpoints:
            tau = "" if cp.tau is None else repr(float(cp.tau))
            lines.append(f"{cp.n},{cp.d},{cp.z},{tau}")
        return "\n".join(lines) + "\n"


@dataclass
class TreeStorage:
    """Flat tree arrays: parent[i] (-1 for the root) and depth[i], i=0..n-1."""

    parent: np.ndarray
    depth: np.ndarray

    @property
    def n(self) -> int:
        return int(self.parent.shape[0])

    def max_depth(self) -> int:
        return int(self.depth.max())

    def profile(self) -> np.ndarray:
        return np.bincount(self.depth)

    def validate(self) -> None:
        """Raise if the arrays do not describe a rooted increasing tree."""
        par = self.parent
        dep = self.depth
        if par.shape != dep.shape or par.ndim != 1:
            raise ValueError("parent/depth must be equal-length 1-d arrays")
        if par[0] != -1 or dep[0] != 0:
            raise ValueError("vertex 0 must be the depth-0 root")
        for i in range(1, self.n):
            p = int(par[i])
            if not 0 <= p < i:
                raise ValueError(f"vertex {i}: parent {p} out of range")
            if dep[i] != dep[p] + 1:
                raise ValueError(f"vertex {i}: depth {int(dep[i])} != parent depth + 1")

    def to_edge_csv(self) -> str:
        """Edge list as CSV text (child,parent,depth), vertex labels 1-based."""
        lines = ["child,parent,depth"]
        par = self.parent
        dep = self.depth
        for i in range(1, self.n):
            lines.append(f"{i + 1},{int(par[i]) + 1},{int(dep[i])}")
        return "\n".join(lines) + "\n"


# -- fast profile growth --------------------------------------------------------


def _check_run_args(n: int, seed: int, stream: int) -> None:
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValueError(f"seed must be an integer, got {seed!r}")
    if not isinstance(stream, int) or isinstance(stream, bool) or stream < 0:
        raise ValueError(f"stream must be a non-negative integer, got {stream!r}")


def _check_checkpoints(checkpoints: Iterable[int] | None, n: int) -> list[int]:
    if checkpoints is None:
        return []
    out: list[int] = []
    for c in checkpoints:
        if not isinstance(c, (int, np.integer)) or isinstance(c, bool):
            raise ValueError(f"checkpoint values must be integers, got {c!r}")
        out.append(int(c))
    if out != sorted(set(out)):
        raise ValueError("checkpoints must be strictly increasing")
    if out and (out[0] < 1 or out[-1] > n):
        raise ValueError("checkpoints must lie in [1, n]")
    return out


def grow_profile(
    spec: WeightSpec,
    n: int,
    seed: int,
    *,
    stream: int = 0,
    track_tau: bool = False,
    track_first_passage: bool = False,
    track_j: bool = False,
    checkpoints: Sequence[int] | None = None,
) -> GrowthTrace:
    """Grow an n-vertex profile with the compiled sampler.

    Randomness comes from the xoshiro256++ stream derived from
    (seed, stream); distinct streams are independent, so batches can use
    stream=0..samples-1 under one seed.  track_first_passage requires
    track_tau (first-passage times live on the embedded clock).
    """
    _check_run_args(n, seed, stream)
    if not isinstance(spec, WeightSpec):
        raise TypeError("spec must be a WeightSpec")
    if track_first_passage and not track_tau:
        raise ValueError("track_first_passage requires track_tau")
    cps = _check_checkpoints(checkpoints, n)

    cap = max(8, min(64, n + 2))
    counts = np.zeros(cap, dtype=np.int64)
    counts[0] = 1
    logw = base_log_table(spec, cap)
    wexp = np.zeros(cap, dtype=np.float64)
    marr = np.zeros(cap, dtype=np.float64)
    tree = np.zeros(cap + 1, dtype=np.float64)
    i64s = np.zeros(8, dtype=np.int64)
    f64s = np.zeros(8, dtype=np.float64)
    i64s[_k.I_N] = 1
    i64s[_k.I_REBUILD_FLAG] = 1
    f64s[_k.F_INVSCALE] = math.ldexp(1.0, -spec.scale_log2)
    f64s[_k.F_MAXTERM] = logw[0]

    fp = np.full(cap, np.nan) if track_first_passage else np.zeros(0)
    jf = np.zeros(cap if track_j else 0, dtype=np.uint8)

    rng_state = np.zeros(4, dtype=np.uint64)
    _k.seed_stream(np.uint64(seed & MASK64), np.uint64(stream), rng_state)

    pre_rows: list[Checkpoint] = []
    if cps and cps[0] == 1:
        pre_rows.append(Checkpoint(1, 0, 1, 0.0 if track_tau else None))
        cps = cps[1:]
    cp_ns = np.asarray(cps, dtype=np.int64)
    cp_d = np.zeros(len(cps), dtype=np.int64)
    cp_z = np.zeros(len(cps), dtype=np.int64)
    cp_tau = np.zeros(len(cps), dtype=np.float64)

    t_tau = 1 if track_tau else 0
    t_fp = 1 if track_first_passage else 0
    t_j = 1 if track_j else 0
    while True:
        status = _k.advance_profile(
            counts, logw, wexp, marr, tree, i64s, f64s, rng_state,
            fp, jf, cp_ns, cp_d, cp_z, cp_tau,
            n, t_tau, t_fp, t_j,
        )
        if status == _k.OK:
            break
        new_cap = min(max(2 * cap, int(i64s[_k.I_D]) + 64), n + 2)
        if new_cap <= cap:
            raise RuntimeError("capacity growth stalled")  # pragma: no cover
        new_counts = np.zeros(new_cap, dtype=np.int64)
        new_counts[:cap] = counts
        counts = new_counts
        logw = base_log_table(spec, new_cap)
        wexp = np.zeros(new_cap, dtype=np.float64)
        marr = np.zeros(new_cap, dtype=np.float64)
        tree = np.zeros(new_cap + 1, dtype=np.float64)
        if track_first_passage:
            new_fp = np.full(new_cap, np.nan)
            new_fp[:cap] = fp
            fp = new_fp
        if track_j:
            new_jf = np.zeros(new_cap, dtype=np.uint8)
            new_jf[:cap] = jf
            jf = new_jf
        cap = new_cap
        i64s[_k.I_REBUILD_FLAG] = 1

    d = int(i64s[_k.I_D])
    fp_out = None
    if track_first_passage:
        fp_out = fp[: d + 1].copy()
        fp_out[0] = 0.0
    jf_out = jf[: d + 1].copy() if track_j else None
    rows = pre_rows + [
        Checkpoint(
            int(cp_ns[i]), int(cp_d[i]), int(cp_z[i]),
            float(cp_tau[i]) if track_tau else None,
        )
        for i in range(len(cps))
    ]
    return GrowthTrace(
        n=n,
        final_depth=d,
        z=n - d,
        profile=counts[: d + 1].copy(),
        tau=float(f64s[_k.F_TAU]) if track_tau else None,
        first_passage=fp_out,
        j_indicators=jf_out,
        checkpoints=tuple(rows),
        rebuilds=int(i64s[_k.I_REBUILDS]),
        capacity=cap,
    )


def grow_tree(
    spec: WeightSpec,
    n: int,
    seed: int,
    *,
    stream: int = 0,
    track_tau: bool = False,
    track_first_passage: bool = False,
    track_j: bool = False,
    checkpoints: Sequence[int] | None = None,
) -> tuple[TreeStorage, GrowthTrace]:
    """Grow a full n-vertex tree (python sampler + uniform occupant pick).

    Consumes one extra uniform per step compared to grow_profile (the
    occupant index), so the two functions give equal distributions but not
    equal draws under the same (seed, stream).
    """
    _check_run_args(n, seed, stream)
    if not isinstance(spec, WeightSpec):
        raise TypeError("spec must be a WeightSpec")
    if track_first_passage and not track_tau:
        raise ValueError("track_first_passage requires track_tau")
    cps = _check_checkpoints(checkpoints, n)
    cp_set = set(cps)

    rng = Xoshiro256PP(seed, stream)
    state = ProfileState(spec, track_clock=track_tau)
    parent = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    occupants: list[list[int]] = [[0]]
    fp: list[float] = [0.0]
    jf: list[int] = [0]
    rows: list[Checkpoint] = []
    if 1 in cp_set:
        rows.append(Checkpoint(1, 0, 1, 0.0 if track_tau else None))

    for v in range(1, n):
        prev_d = state.depth
        rec = step(state, rng)
        q = rec.new_depth
        row = occupants[rec.parent_depth]
        u = rng.random()
        idx = int(u * len(row))
        if idx >= len(row):  # u == 1.0 cannot occur, but stay safe
            idx = len(row) - 1
        parent[v] = row[idx]
        depth[v] = q
        if q > prev_d:
            occupants.append([v])
            fp.append(state.tau)
            jf.append(0)
        else:
            occupants[q].append(v)
            if state.counts[q] == 2 and q == prev_d:
                jf[q] = 1
        if (v + 1) in cp_set:
            rows.append(
                Checkpoint(
                    v + 1, state.depth, (v + 1) - state.depth,
                    state.tau if track_tau else None,
                )
            )

    trace = GrowthTrace(
        n=n,
        final_depth=state.depth,
        z=n - state.depth,
        profile=state.profile(),
        tau=state.tau if track_tau else None,
        first_passage=np.asarray(fp) if track_first_passage else None,
        j_indicators=np.asarray(jf, dtype=np.uint8) if track_j else None,
        checkpoints=tuple(rows),
        rebuilds=state.rebuilds,
        capacity=state.capacity,
    )
    return TreeStorage(parent=parent, depth=depth), trace
