"""Weight-function families and the scalar quantities derived from them.

A weight function assigns every depth k >= 0 a positive attachment weight
f(k).  Everything downstream works with ln f(k) ("log-weight"): products
become sums, and ratios like f(j)/f(j+1) stay representable even when f
itself dwarfs the float range (factorial-power weights overflow floats by
k ~ 170, their log-weights never do).

A ``WeightSpec`` is a family name plus named parameters, optionally scaled
by an exact power of two (``scale_log2``).  Rescaling f by a constant does
not change the attachment distribution, so the sampler consumes *base*
(unscaled) log-weights; the scale only touches clock quantities, where a
power-of-two multiply is exact in IEEE arithmetic.  Derived indicators that
are mathematically scale-free (psi, tail_ratio_sum, regime classification)
are computed from base log-weights too, which makes their scale neutrality
exact rather than approximate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError

_LN2 = math.log(2.0)
_LN8 = math.log(8.0)
# exp() overflows above this; used to clamp ratio -> inf conversions
_EXP_MAX = 709.0

UNBOUNDED = math.inf

_FAMILIES = (
    "constant",
    "table",
    "periodic",
    "logarithmic",
    "polynomial",
    "stretched_exp",
    "exponential",
    "sub_exp_quotient",
    "super_exp",
    "factorial_power",
    "custom",
)

_EXTRAPOLATIONS = ("hold", "geometric")


def _positive_values(values, what: str) -> tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if not vals:
        raise ConfigError(f"{what} must be non-empty")
    for v in vals:
        if not (v > 0.0 and math.isfinite(v)):
            raise ConfigError(f"{what} must be positive finite numbers, got {v!r}")
    return vals


def _positive_scalar(params: dict, name: str) -> float:
    if name not in params:
        raise ConfigError(f"missing parameter {name!r}")
    v = float(params[name])
    if not (v > 0.0 and math.isfinite(v)):
        raise ConfigError(f"parameter {name!r} must be positive finite, got {v!r}")
    return v


@dataclass(frozen=True)
class WeightSpec:
    """A weight-function family with parameters and a power-of-two scale."""

    family: str
    params: dict = field(default_factory=dict)
    scale_log2: int = 0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(
                f"unknown weight family {self.family!r}; known: {', '.join(_FAMILIES)}"
            )
        if not isinstance(self.scale_log2, int) or isinstance(self.scale_log2, bool):
            raise ConfigError("scale_log2 must be an integer")
        if abs(self.scale_log2) > 512:
            raise ConfigError("scale_log2 out of range (|scale_log2| <= 512)")
        object.__setattr__(self, "params", _validate_params(self.family, self.params))

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        out = {"family": self.family, "params": dict(self.params)}
        for k, v in out["params"].items():
            if isinstance(v, tuple):
                out["params"][k] = list(v)
        if self.scale_log2:
            out["scale_log2"] = self.scale_log2
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @staticmethod
    def from_json_dict(obj: dict) -> "WeightSpec":
        if not isinstance(obj, dict):
            raise ConfigError("weight spec must be a JSON object")
        unknown = set(obj) - {"family", "params", "scale_log2"}
        if unknown:
            raise ConfigError(f"unknown weight spec keys: {sorted(unknown)}")
        if "family" not in obj:
            raise ConfigError("weight spec needs a 'family' key")
        fam = obj["family"]
        params = obj.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("'params' must be an object")
        scale = obj.get("scale_log2", 0)
        if not isinstance(scale, int) or isinstance(scale, bool):
            raise ConfigError("scale_log2 must be an integer")
        return WeightSpec(family=fam, params=params, scale_log2=scale)

    @staticmethod
    def from_json(text: str) -> "WeightSpec":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON for weight spec: {e}") from e
        return WeightSpec.from_json_dict(obj)


def _validate_params(family: str, params: dict) -> dict:
    if not isinstance(params, dict):
        raise ConfigError("params must be a dict")
    p = dict(params)

    def only(*names):
        extra = set(p) - set(names)
        if extra:
            raise ConfigError(f"family {family!r} got unknown params {sorted(extra)}")

    if family == "constant":
        only("value")
        return {"value": _positive_scalar({"value": p.get("value", 1.0)}, "value")}
    if family == "table":
        only("values", "limit")
        if "values" not in p or "limit" not in p:
            raise ConfigError("table family needs 'values' and 'limit'")
        return {
            "values": _positive_values(p["values"], "table values"),
            "limit": _positive_scalar(p, "limit"),
        }
    if family == "periodic":
        only("values")
        if "values" not in p:
            raise ConfigError("periodic family needs 'values'")
        return {"values": _positive_values(p["values"], "periodic values")}
    if family == "logarithmic":
        only()
        return {}
    if family == "polynomial":
        only("alpha")
        if "alpha" not in p:
            raise ConfigError("polynomial family needs 'alpha'")
        alpha = float(p["alpha"])
        if not (alpha >= 0.0 and math.isfinite(alpha)):
            raise ConfigError(f"alpha must be >= 0 and finite, got {alpha!r}")
        return {"alpha": alpha}
    if family == "stretched_exp":
        only("beta")
        if "beta" not in p:
            raise ConfigError("stretched_exp family needs 'beta'")
        beta = float(p["beta"])
        if not (0.0 < beta < 1.0):
            raise ConfigError(f"beta must lie in (0, 1), got {beta!r}")
        return {"beta": beta}
    if family == "exponential":
        only("c")
        return {"c": _positive_scalar(p, "c")}
    if family == "sub_exp_quotient":
        only("c")
        return {"c": _positive_scalar(p, "c")}
    if family == "super_exp":
        only("a")
        return {"a": _positive_scalar(p, "a")}
    if family == "factorial_power":
        only("a")
        return {"a": _positive_scalar(p, "a")}
    if family == "custom":
        only("values", "extrapolation")
        if "values" not in p:
            raise ConfigError("custom family needs 'values'")
        values = _positive_values(p["values"], "custom values")
        extrap = p.get("extrapolation", "hold")
        if extrap not in _EXTRAPOLATIONS:
            raise ConfigError(
                f"extrapolation must be one of {_EXTRAPOLATIONS}, got {extrap!r}"
            )
        if extrap == "geometric" and len(values) < 2:
            raise ConfigError("geometric extrapolation needs at least 2 values")
        return {"values": values, "extrapolation": extrap}
    raise ConfigError(f"unknown weight family {family!r}")  # pragma: no cover


# -- factory helpers --------------------------------------------------------


def constant(value: float = 1.0) -> WeightSpec:
    return WeightSpec("constant", {"value": value})


def table(values, limit: float) -> WeightSpec:
    return WeightSpec("table", {"values": tuple(values), "limit": limit})


def periodic(values) -> WeightSpec:
    return WeightSpec("periodic", {"values": tuple(values)})


def logarithmic() -> WeightSpec:
    return WeightSpec("logarithmic", {})


def polynomial(alpha: float) -> WeightSpec:
    return WeightSpec("polynomial", {"alpha": alpha})


def stretched_exp(beta: float) -> WeightSpec:
    return WeightSpec("stretched_exp", {"beta": beta})


def exponential(c: float) -> WeightSpec:
    return WeightSpec("exponential", {"c": c})


def sub_exp_quotient(c: float) -> WeightSpec:
    return WeightSpec("sub_exp_quotient", {"c": c})


def super_exp(a: float) -> WeightSpec:
    return WeightSpec("super_exp", {"a": a})


def factorial_power(a: float) -> WeightSpec:
    return WeightSpec("factorial_power", {"a": a})


def custom(values, extrapolation: str = "hold") -> WeightSpec:
    return WeightSpec("custom", {"values": tuple(values), "extrapolation": extrapolation})


# -- evaluation -------------------------------------------------------------


def _base_log_weight(spec: WeightSpec, k: int) -> float:
    """ln f(k) before scaling.  Closed forms; finite for any int64 k >= 0."""
    fam = spec.family
    p = spec.params
    if fam == "constant":
        return math.log(p["value"])
    if fam == "table":
        vals = p["values"]
        return math.log(vals[k]) if k < len(vals) else math.log(p["limit"])
    if fam == "periodic":
        vals = p["values"]
        return math.log(vals[k % len(vals)])
    if fam == "logarithmic":
        return math.log(math.log(k + 2.0))
    if fam == "polynomial":
        return p["alpha"] * math.log(k + 1.0)
    if fam == "stretched_exp":
        return float(k) ** p["beta"]
    if fam == "exponential":
        return k * math.log(p["c"])
    if fam == "sub_exp_quotient":
        return p["c"] * k / math.log(k + 2.0)
    if fam == "super_exp":
        # k*log(k) with the k in {0,1} convention: f(0) = f(1) = 1
        return 0.0 if k < 2 else p["a"] * k * math.log(k)
    if fam == "factorial_power":
        return p["a"] * math.lgamma(k + 1.0)
    if fam == "custom":
        vals = p["values"]
        if k < len(vals):
            return math.log(vals[k])
        last = math.log(vals[-1])
        if p["extrapolation"] == "hold":
            return last
        step = last - math.log(vals[-2])
        return last + (k - (len(vals) - 1)) * step
    raise ConfigError(f"unknown weight family {fam!r}")  # pragma: no cover


def log_weight(spec: WeightSpec, k: int) -> float:
    """ln f(k), including the spec's power-of-two scale."""
    if k < 0:
        raise ValueError(f"depth index must be >= 0, got {k}")
    base = _base_log_weight(spec, int(k))
    if spec.scale_log2:
        return base + spec.scale_log2 * _LN2
    return base


def base_log_table(spec: WeightSpec, count: int) -> np.ndarray:
    """Vectorized ln f(k) for k = 0..count-1, *without* the scale.

    This is the array the samplers consume; keeping it unscaled is what makes
    power-of-two rescaling bit-exact.  May differ from the scalar closed form
    in the last ulp (libm vs SIMD transcendentals).
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    n = int(count)
    fam = spec.family
    p = spec.params
    k = np.arange(n, dtype=np.float64)
    if fam == "constant":
        return np.full(n, math.log(p["value"]))
    if fam == "table":
        vals, limit = p["values"], p["limit"]
        out = np.full(n, math.log(limit))
        m = min(n, len(vals))
        out[:m] = np.log(np.asarray(vals[:m]))
        return out
    if fam == "periodic":
        logs = np.log(np.asarray(p["values"]))
        return logs[np.arange(n) % len(logs)]
    if fam == "logarithmic":
        return np.log(np.log(k + 2.0))
    if fam == "polynomial":
        return p["alpha"] * np.log(k + 1.0)
    if fam == "stretched_exp":
        return k ** p["beta"]
    if fam == "exponential":
        return k * math.log(p["c"])
    if fam == "sub_exp_quotient":
        return p["c"] * k / np.log(k + 2.0)
    if fam == "super_exp":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = p["a"] * k * np.log(k)
        out[: min(2, n)] = 0.0
        return out
    if fam == "factorial_power":
        return p["a"] * gammaln(k + 1.0)
    if fam == "custom":
        vals = p["values"]
        logs = np.log(np.asarray(vals))
        out = np.empty(n)
        m = min(n, len(vals))
        out[:m] = logs[:m]
        if n > m:
            if p["extrapolation"] == "hold":
                out[m:] = logs[-1]
            else:
                step = logs[-1] - logs[-2]
                out[m:] = logs[-1] + step * (np.arange(m, n) - (len(vals) - 1))
        return out
    raise ConfigError(f"unknown weight family {fam!r}")  # pragma: no cover


def weight_scale(spec: WeightSpec) -> float:
    """The exact multiplicative scale 2**scale_log2."""
    return math.ldexp(1.0, spec.scale_log2)


# -- derived scalars --------------------------------------------------------


def geometric_mean_weight(spec: WeightSpec, k: int) -> float:
    """The geometric mean of f(0..k-1): the k-th root of their product."""
    if k < 1:
        raise ValueError(f"geometric mean weight needs k >= 1, got {k}")
    mean = float(np.mean(base_log_table(spec, int(k))))
    if mean > _EXP_MAX:
        return math.inf
    # scale by 2**scale_log2 exactly, so rescaled specs scale this exactly
    return math.ldexp(math.exp(mean), spec.scale_log2)


def tail_ratio_sum(spec: WeightSpec, n: int) -> float:
    """Sum of consecutive-weight ratios f(j)/f(j+1) for j = 0..n.

    Scale-free; correctly-rounded accumulation (fsum), so the suffix identity
    sum(n) - sum(n-1) = f(n)/f(n+1) holds to the last ulp.
    """
    if n < 0:
        raise ValueError(f"tail ratio sum needs n >= 0, got {n}")
    tbl = base_log_table(spec, int(n) + 2)
    with np.errstate(over="ignore"):
        ratios = np.exp(tbl[:-1] - tbl[1:])
    return math.fsum(ratios.tolist())


def psi(spec: WeightSpec, k: int, cap: int = 10_000) -> float:
    """Influence-window length of depth k.

    The smallest window ell such that the product f(k)...f(k+ell-1),
    discounted by (2 f(k-1))^ell (ell+1)!, reaches 8 — evaluated entirely in
    log-space.  Returns UNBOUNDED (math.inf) when no ell <= cap qualifies.
    Scale-free because the ell weight factors cancel against the (2f(k-1))^ell
    term, so base log-weights are used directly.
    """
    if k < 1:
        raise ValueError(f"psi is defined for k >= 1, got {k}")
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    ref = _LN2 + _base_log_weight(spec, k - 1)
    running = 0.0
    for ell in range(1, int(cap) + 1):
        running += _base_log_weight(spec, k + ell - 1)
        if running - ell * ref - math.lgamma(ell + 2.0) >= _LN8:
            return ell
    return UNBOUNDED


@dataclass(frozen=True)
class RegimeReport:
    """Numeric growth-regime classification at a finite horizon.

    The underlying conditions are limits; these are finite-horizon checks,
    so the report carries the raw residuals and component flags for tests to
    assert against explicit tolerances.
    """

    eg_limit: float
    eg_converged: bool
    wsv: bool
    wsv_monotone: bool
    wsv_divergent: bool
    wsv_residuals: tuple[float, float]
    d_holds: bool
    d_last_ratio: float
    horizon: int
    tolerance: float


def _interp_weight(spec: WeightSpec, x: float) -> float:
    """f extended to real x >= 0 by linear interpolation between integers."""
    i = int(math.floor(x))
    lo = _base_log_weight(spec, i)
    if lo > _EXP_MAX:
        return math.inf
    flo = math.exp(lo)
    frac = x - i
    if frac == 0.0:
        return flo
    hi = _base_log_weight(spec, i + 1)
    fhi = math.exp(hi) if hi <= _EXP_MAX else math.inf
    return flo + frac * (fhi - flo)


def classify_regime(spec: WeightSpec, horizon: int = 1000, tol: float = 1e-3) -> RegimeReport:
    """Classify growth behaviour of f at a finite horizon.

    - eg: the consecutive ratio f(h+1)/f(h), flagged converged when all
      ratios over the last horizon/2 indices deviate from it by <= tol.
    - wsv: monotone + divergent + both slow-variation ratios
      f(x)/f(k) at x = k/f(k) and x = k*f(k) (f linearly interpolated)
      within tol of 1 at k = horizon.
    - d: consecutive ratio at the horizon exceeds 1/tol.
    """
    if horizon < 10:
        raise ValueError(f"horizon must be >= 10, got {horizon}")
    if not (tol > 0.0):
        raise ValueError(f"tol must be positive, got {tol}")
    h = int(horizon)
    tbl = base_log_table(spec, h + 2)

    # (EG): ratio convergence over the trailing half
    with np.errstate(over="ignore", invalid="ignore"):
        tail = tbl[h - h // 2 :]
        ratios = np.exp(np.diff(tail))
        eg_limit = float(ratios[-1])
        eg_converged = bool(np.all(np.abs(ratios - eg_limit) <= tol))

    # (WSV): non-decreasing, divergent, and slowly varying at the horizon
    monotone = bool(np.all(np.diff(tbl) >= 0.0))
    divergent = bool(tbl[h] - tbl[math.isqrt(h)] >= math.log1p(tol))
    fk_log = tbl[h]
    if fk_log > 300.0:
        # f this large at the horizon cannot be slowly varying; skip the
        # interpolated evaluation, which would overflow
        res = (math.inf, math.inf)
    else:
        fk = math.exp(fk_log)
        r1 = _interp_weight(spec, h / fk) / fk
        r2 = _interp_weight(spec, h * fk) / fk
        res = (abs(r1 - 1.0), abs(r2 - 1.0))
    wsv = monotone and divergent and res[0] <= tol and res[1] <= tol

    # (D): ratio above 1/tol at the horizon
    logdiff = float(tbl[h + 1] - tbl[h])
    d_last_ratio = math.exp(logdiff) if logdiff <= _EXP_MAX else math.inf
    d_holds = bool(logdiff > -math.log(tol))

    return RegimeReport(
        eg_limit=eg_limit,
        eg_converged=eg_converged,
        wsv=wsv,
        wsv_monotone=monotone,
        wsv_divergent=divergent,
        wsv_residuals=res,
        d_holds=d_holds,
        d_last_ratio=d_last_ratio,
        horizon=h,
        tolerance=float(tol),
    )
