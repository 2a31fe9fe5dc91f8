"""Young functions: construction, evaluation, inversion, and growth classification.

A Young function is a convex phi : [0, inf) -> [0, inf) with phi(0) = 0,
phi(t) > 0 for t > 0 and phi(t) -> inf.  Four parametric families are built
in (``power``, ``powerlog``, ``powerexp``, ``exptaylor``); each carries the
ambient dimension n used by the growth constant and by the series truncation
of the ``exptaylor`` kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import QuadratureError, UsageError

KINDS = ("power", "powerlog", "powerexp", "exptaylor")

# exp() overflows float64 just above this exponent
_EXP_MAX = 709.0

# 15/7 point Gauss-Legendre nodes/weights on [-1, 1]
_GL15 = np.polynomial.legendre.leggauss(15)
_GL7 = np.polynomial.legendre.leggauss(7)


def _exp_remainder(x, k):
    """e^x minus its Taylor polynomial of degree k, computed stably.

    For small x the direct difference cancels catastrophically, so the tail
    series sum_{j>k} x^j/j! is used instead.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    small = x <= max(1.0, 0.5 * k)
    if np.any(small):
        xs = x[small]
        term = xs ** (k + 1) / math.factorial(k + 1)
        acc = term.copy()
        for j in range(k + 2, k + 60):
            term = term * xs / j
            acc += term
        out[small] = acc
    big = ~small
    if np.any(big):
        xb = x[big]
        # sum_{j<=k} x^j/j! by Horner on coefficients 1/j!
        poly = np.zeros_like(xb)
        for j in range(k, 0, -1):
            poly = (poly + 1.0 / math.factorial(j)) * xb
        poly += 1.0
        ex = np.where(xb > _EXP_MAX, np.inf, np.exp(np.minimum(xb, _EXP_MAX)))
        out[big] = ex - poly
    return out


@dataclass(frozen=True)
class YoungFunction:
    """One of the built-in Young function families.

    kind/params:
      power     (p,)        t^p                     with p >= 1
      powerlog  (p, alpha)  t^p * ln(1+t)^alpha     with p >= 1, alpha > 0
      powerexp  (p, c, alpha)  t^p * exp(c t^alpha) with p >= 1, c > 0, alpha > 0
      exptaylor (c, alpha)  exp(c t^alpha) minus the Taylor terms of order
                            <= floor(n/alpha), with c > 0, alpha > 0
    """

    kind: str
    params: tuple
    n: int = 2
    _m: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown Young function kind {self.kind!r}")
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        if self.n < 1:
            raise UsageError("dimension n must be >= 1")
        if any(not math.isfinite(v) or v <= 0 for v in p):
            raise UsageError(f"parameters must be positive finite, got {p}")
        need = {"power": 1, "powerlog": 2, "powerexp": 3, "exptaylor": 2}[self.kind]
        if len(p) != need:
            raise UsageError(f"kind {self.kind} takes {need} parameters, got {len(p)}")
        if self.kind in ("power", "powerlog", "powerexp") and p[0] < 1.0:
            raise UsageError("exponent p must be >= 1 for convexity")
        if self.kind == "exptaylor":
            object.__setattr__(self, "_m", int(math.floor(self.n / p[1])))

    # -- evaluation ---------------------------------------------------------

    def __call__(self, t):
        """phi(t) for scalar or array t >= 0; overflow saturates to +inf."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < 0) or np.any(np.isnan(t)):
            raise UsageError("Young functions are evaluated at t >= 0")
        out = self._eval(t)
        return float(out[0]) if scalar else out

    def _eval(self, t):
        if self.kind == "power":
            (p,) = self.params
            return t ** p
        if self.kind == "powerlog":
            p, alpha = self.params
            return t ** p * np.log1p(t) ** alpha
        if self.kind == "powerexp":
            p, c, alpha = self.params
            out = np.zeros_like(t)
            pos = t > 0
            tp = t[pos]
            expo = p * np.log(tp) + c * tp ** alpha
            out[pos] = np.where(expo > _EXP_MAX, np.inf, np.exp(np.minimum(expo, _EXP_MAX)))
            return out
        # exptaylor
        c, alpha = self.params
        x = c * t ** alpha
        return _exp_remainder(x, self._m)

    def log_value(self, t):
        """log(phi(t)); -inf at t = 0.  Never overflows."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        out = np.full_like(t, -np.inf)
        pos = t > 0
        tp = t[pos]
        if self.kind == "power":
            (p,) = self.params
            out[pos] = p * np.log(tp)
        elif self.kind == "powerlog":
            p, alpha = self.params
            out[pos] = p * np.log(tp) + alpha * np.log(np.log1p(tp))
        elif self.kind == "powerexp":
            p, c, alpha = self.params
            out[pos] = p * np.log(tp) + c * tp ** alpha
        else:
            c, alpha = self.params
            x = c * tp ** alpha
            r = np.empty_like(x)
            mod = x <= _EXP_MAX - 40.0
            r[mod] = np.log(_exp_remainder(x[mod], self._m))
            r[~mod] = x[~mod]  # Taylor part is negligible there
            out[pos] = r
        return float(out[0]) if scalar else out

    def loglog_slope(self, t):
        """d log(phi) / d log(t), the local growth exponent."""
        t = float(t)
        if t < 0:
            raise UsageError("slope defined for t >= 0")
        if self.kind == "power":
            return self.params[0]
        if self.kind == "powerlog":
            p, alpha = self.params
            if t == 0.0:
                return p + alpha
            return p + alpha * t / ((1.0 + t) * math.log1p(t))
        if self.kind == "powerexp":
            p, c, alpha = self.params
            return p + c * alpha * t ** alpha
        c, alpha = self.params
        m = self._m
        if t == 0.0:
            return alpha * (m + 1)
        x = c * t ** alpha
        if x > _EXP_MAX - 40.0:
            return alpha * x
        num = _exp_remainder(np.asarray([x]), m - 1)[0] if m >= 1 else math.exp(x)
        den = _exp_remainder(np.asarray([x]), m)[0]
        return alpha * x * (num / den)

    # -- inversion ----------------------------------------------------------

    def inverse(self, y, rtol=1e-10):
        """t with phi(t) = y, by monotone bisection; inverse(0) = 0."""
        y = float(y)
        if not math.isfinite(y) or y < 0:
            raise UsageError(f"inverse needs finite y >= 0, got {y}")
        if y == 0.0:
            return 0.0
        hi = 1.0
        for _ in range(200):
            if self(hi) >= y:
                break
            hi *= 2.0
        else:
            raise UsageError("failed to bracket inverse")
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if self(mid) >= y:
                hi = mid
            else:
                lo = mid
            if hi - lo <= rtol * hi:
                break
        t = 0.5 * (lo + hi)
        return t

    def label(self):
        fmt = ",".join(f"{v:g}" for v in self.params)
        return f"{self.kind}:{fmt}"


def parse_young(text, n=2):
    """Parse ``kind:params`` strings, e.g. ``power:3`` or ``powerexp:4,1,0.5``."""
    text = text.strip()
    if ":" not in text:
        raise UsageError(f"Young function spec {text!r} must look like kind:params")
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    try:
        params = tuple(float(tok) for tok in rest.split(",") if tok.strip())
    except ValueError as exc:
        raise UsageError(f"bad parameter in Young function spec {text!r}") from exc
    return YoungFunction(kind, params, n=n)


# -- growth constant ---------------------------------------------------------


@dataclass(frozen=True)
class CphiResult:
    """Result of the growth-constant scan.

    value               sup over the t-ladder of t^n/phi(t) * int_0^t phi(s) s^{-n-1} ds
    diverges            True when the inner integral is non-integrable at 0
    t_argmax            ladder point attaining the supremum (nan when divergent)
    increasing_at_edge  True when the supremum sits at the ladder end and the
                        ratio was still rising there (the reported value is a
                        sup-so-far, not a certified supremum)
    """

    value: float
    diverges: bool
    t_argmax: float
    increasing_at_edge: bool

    def as_json(self):
        if self.diverges:
            return "diverges"
        return {
            "value": self.value,
            "t_argmax": self.t_argmax,
            "increasing_at_edge": self.increasing_at_edge,
        }


def _segment_log_integral(g, slope_at, v0, v1, depth=0):
    """log of int_{v0}^{v1} exp(g(v)) dv for smooth increasing g.

    Steep segments (variation > 25) use an endpoint exponential model with
    the analytic slope; mild ones use a 7/15-point Gauss-Legendre pair with
    recursive bisection.
    """
    g0, g1 = g(v0), g(v1)
    dg = g1 - g0
    if dg > 25.0:
        lam = max(slope_at(v1), dg / (v1 - v0))
        out = g1 - math.log(lam)
        if lam * (v1 - v0) < 700.0:
            out += math.log1p(-math.exp(-lam * (v1 - v0)))
        return out
    gmax = max(g0, g1)
    half = 0.5 * (v1 - v0)
    mid = 0.5 * (v0 + v1)

    def quad(nodes, weights):
        vs = mid + half * nodes
        return half * float(np.sum(weights * np.exp(np.array([g(v) for v in vs]) - gmax)))

    i15 = quad(*_GL15)
    i7 = quad(*_GL7)
    if abs(i15 - i7) <= 1e-10 * max(abs(i15), 1e-300) or depth >= 24:
        if depth >= 24 and abs(i15 - i7) > 1e-6 * max(abs(i15), 1e-300):
            raise QuadratureError(f"inner integral did not converge on [{math.exp(v0)}, {math.exp(v1)}]")
        return gmax + math.log(max(i15, 1e-300))
    left = _segment_log_integral(g, slope_at, v0, mid, depth + 1)
    right = _segment_log_integral(g, slope_at, mid, v1, depth + 1)
    return np.logaddexp(left, right)


def compute_cphi(phi, n=None, t_min=1e-6, t_max=1e6, points=500):
    """Growth constant sup_t (t^n / phi(t)) int_0^t phi(s)/s^n ds/s.

    Finiteness of this constant is what makes the increment seminorm
    nontrivial.  Divergence is decided by the local power of phi at 0
    (integrable at 0 iff the local exponent exceeds n), not by quadrature
    blow-up.  The sup is taken over a log-spaced ladder; when it sits at the
    upper ladder edge and is still increasing the result is flagged.
    """
    n = phi.n if n is None else int(n)
    if n < 2:
        raise UsageError("growth constant defined for n >= 2")

    slope0 = phi.loglog_slope(1e-8)
    if slope0 <= n + 1e-9:
        return CphiResult(math.inf, True, math.nan, False)

    ts = np.geomspace(t_min, t_max, points)
    vs = np.log(ts)

    def g(v):
        return float(phi.log_value(math.exp(v))) - n * v

    def slope_at(v):
        return phi.loglog_slope(math.exp(v)) - n

    # analytic tail below t_min from the local power fit
    m_tail = phi.loglog_slope(t_min * 1e-2)
    log_acc = float(phi.log_value(t_min)) - n * math.log(t_min) - math.log(m_tail - n)

    best = -math.inf
    best_t = ts[0]
    prev = -math.inf
    ratios_tail = []
    for k in range(points):
        if k > 0:
            log_acc = np.logaddexp(log_acc, _segment_log_integral(g, slope_at, vs[k - 1], vs[k]))
        log_ratio = n * vs[k] - float(phi.log_value(ts[k])) + log_acc
        r = math.exp(log_ratio) if log_ratio < _EXP_MAX else math.inf
        ratios_tail.append(r)
        if r > best:
            best, best_t = r, ts[k]
        prev = r
    increasing = best_t == ts[-1] and len(ratios_tail) > 1 and ratios_tail[-1] > ratios_tail[-2] * (1 + 1e-12)
    return CphiResult(best, False, float(best_t), bool(increasing))


@dataclass(frozen=True)
class SubexpReport:
    """Verdict of the sub-exponential growth test phi(x) e^{-cx} -> 0 for all c > 0."""

    subexponential: bool
    failing_c: float | None

    def as_json(self):
        return {"subexponential": self.subexponential, "failing_c": self.failing_c}


def check_subexponential(phi, c_ladder=None, k_max=60):
    """Test phi(x) e^{-cx} -> 0 along x = 2^k for every c in a decreasing ladder.

    Uses the analytic log of phi, so exponential kinds are classified exactly
    rather than through overflowing evaluations.  A c passes when the decay
    exponent is far below zero at the far end of the x grid and still falling.
    """
    if c_ladder is None:
        c_ladder = [2.0 ** (-j) for j in range(0, 11)]
    for c in c_ladder:
        d = [float(phi.log_value(2.0 ** k)) - c * 2.0 ** k for k in range(40, k_max + 1)]
        tail_falling = all(d[i + 1] < d[i] for i in range(len(d) - 5, len(d) - 1))
        if not (d[-1] < -37.0 and tail_falling):
            return SubexpReport(False, float(c))
    return SubexpReport(True, None)
