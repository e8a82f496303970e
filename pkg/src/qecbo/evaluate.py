"""Logical error rate estimation and the Hamming-bound objective.

The scalar objective for a code with rate R = k/n is

    F = lambda * R + f2(n, t_hat) - 1,

where t_hat is the pseudo-distance radius recovered by inverting a
polynomial fit of the log2 binomial tail at the code's estimated logical
error rate.  F = 0 means the code saturates the non-degenerate CSS
Hamming bound at the evaluation error rate.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .codes import CssCode
from .decoding import (
    BlockDecoder,
    DecoderConfig,
    DepolarizingChannel,
    sample_error_block,
)

# Shots per decoding chunk.  Fixed so that estimates are bit-identical
# regardless of worker count (reduction order is chunk order).
CHUNK_SHOTS = 512

# f1 grid extends until the binomial tail falls below this value.
TAIL_CUTOFF = 2.0**-60


class PseudoModelError(RuntimeError):
    """The log2-tail polynomial could not be fitted monotonically."""


@dataclass(frozen=True)
class LerEstimate:
    """Monte Carlo logical error rate with its binomial standard error."""

    p_l: float
    shots: int
    failures: int
    std_error: float
    physical_p: float


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weight, channel strength and shot budget for objective evaluation."""

    lam: float
    physical_p: float
    shots: int

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.shots < 1:
            raise ValueError("shot budget must be positive")


class PseudoT(NamedTuple):
    t_hat: float
    clamped: bool


def estimate_ler(
    code: CssCode,
    ch: DepolarizingChannel,
    shots: int,
    seed,
    decoder_cfg: Optional[DecoderConfig] = None,
    workers: int = 1,
) -> LerEstimate:
    """Estimate the logical error rate over independent depolarizing shots.

    Shots are processed in fixed-size chunks, each with its own child RNG
    stream derived from (seed, chunk index), and failure counts are summed
    in chunk order.  The result is therefore identical for any worker
    count and for any chunked or unchunked caller.
    """
    if code.k < 1:
        raise ValueError("cannot estimate a logical error rate with k = 0")
    if shots < 1:
        raise ValueError("shot count must be positive")
    if ch.p == 0.0:
        return LerEstimate(0.0, shots, 0, 0.0, 0.0)

    if decoder_cfg is None:
        decoder_cfg = DecoderConfig(
            prior_flip_probability=ch.marginal_flip_probability
        )
    decoder = BlockDecoder(code, decoder_cfg)

    def run_chunk(index: int) -> int:
        start = index * CHUNK_SHOTS
        block = min(CHUNK_SHOTS, shots - start)
        rng = np.random.default_rng([seed, index])
        ex, ez = sample_error_block(ch, code.n, block, rng)
        sx, sz = decoder.syndromes(ex, ez)
        ex_hat, ez_hat = decoder.decode(sx, sz)
        return int(np.sum(decoder.failures(ex, ez, ex_hat, ez_hat)))

    n_chunks = (shots + CHUNK_SHOTS - 1) // CHUNK_SHOTS
    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(run_chunk, range(n_chunks)))
    else:
        counts = [run_chunk(i) for i in range(n_chunks)]
    failures = sum(counts)

    p_l = failures / shots
    std_error = math.sqrt(p_l * (1.0 - p_l) / shots)
    return LerEstimate(p_l, shots, failures, std_error, ch.p)


def lerpq(p_l: float, k: int) -> float:
    """Logical error rate per qubit: 1 - (1 - p_l)^(1/k)."""
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if not 0.0 <= p_l <= 1.0:
        raise ValueError(f"p_l must lie in [0, 1], got {p_l}")
    if p_l == 1.0:
        return 1.0
    return -math.expm1(math.log1p(-p_l) / k)


def f2(n: int, t: int) -> float:
    """(1/n) log2 of the Hamming-ball size sum_{j<=t} C(n,j) 3^j.

    The inner sum is accumulated exactly over integers before taking the
    logarithm, so the result is correct to double rounding.
    """
    if not 0 <= t <= n:
        raise ValueError(f"t must lie in [0, n], got t={t}, n={n}")
    total = sum(math.comb(n, j) * 3**j for j in range(t + 1))
    return math.log2(total) / n


def f2_real(n: int, t: float) -> float:
    """f2 extended to real t by linear interpolation between integers."""
    if not 0.0 <= t <= n:
        raise ValueError(f"t must lie in [0, n], got t={t}, n={n}")
    lo = math.floor(t)
    if lo == t:
        return f2(n, int(t))
    hi = lo + 1
    w = t - lo
    return (1.0 - w) * f2(n, lo) + w * f2(n, hi)


def _log_binomial_tail(n: int, t: int, p: float) -> float:
    """log of sum_{j>t} C(n,j) p^j (1-p)^(n-j), or -inf for an empty sum."""
    if t >= n:
        return -math.inf
    log_p = math.log(p)
    log_q = math.log1p(-p)
    log_terms = [
        math.lgamma(n + 1)
        - math.lgamma(j + 1)
        - math.lgamma(n - j + 1)
        + j * log_p
        + (n - j) * log_q
        for j in range(t + 1, n + 1)
    ]
    peak = max(log_terms)
    return peak + math.log(sum(math.exp(v - peak) for v in log_terms))


def binomial_tail(n: int, t: float, p: float) -> float:
    """P(X > t) for X ~ Binomial(n, p), linearly interpolated in t."""
    if not 0.0 <= t <= n:
        raise ValueError(f"t must lie in [0, n], got t={t}, n={n}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    lo = math.floor(t)
    tail_lo = math.exp(_log_binomial_tail(n, lo, p))
    if lo == t:
        return tail_lo
    tail_hi = math.exp(_log_binomial_tail(n, lo + 1, p))
    w = t - lo
    return (1.0 - w) * tail_lo + w * tail_hi


@dataclass(frozen=True)
class PseudoDistanceModel:
    """Cubic fit of log2 binomial tail against t, for inverting to t_hat.

    ``grid`` holds the fitted (t, log2 tail) points; ``poly_coeffs`` are
    the polynomial coefficients, highest power first.  The fitted curve
    is strictly decreasing across [t_min, t_max].
    """

    n: int
    physical_p: float
    grid: tuple[tuple[int, float], ...]
    poly_coeffs: tuple[float, ...]

    @property
    def t_min(self) -> float:
        return float(self.grid[0][0])

    @property
    def t_max(self) -> float:
        return float(self.grid[-1][0])

    def f1(self, t: float) -> float:
        """Fitted log2 tail at radius t."""
        acc = 0.0
        for c in self.poly_coeffs:
            acc = acc * t + c
        return acc


def _cubic_is_decreasing(coeffs: np.ndarray, lo: float, hi: float) -> bool:
    """Exact check that the cubic's derivative is negative on [lo, hi]."""
    a3, a2, a1, _ = coeffs
    candidates = [lo, hi]
    # The derivative 3*a3*t^2 + 2*a2*t + a1 peaks at an endpoint or, for
    # a concave-down quadratic, at its vertex.
    if a3 != 0.0:
        vertex = -a2 / (3.0 * a3)
        if lo < vertex < hi:
            candidates.append(vertex)
    return all(3.0 * a3 * t * t + 2.0 * a2 * t + a1 < 0.0 for t in candidates)


def fit_pseudo_model(n: int, p: float) -> PseudoDistanceModel:
    """Fit the degree-3 log2-tail polynomial used for pseudo-distance.

    The grid runs from t = 0 to the first t where the tail drops below
    2^-60 (capped at n).  If the cubic is not strictly decreasing over
    the grid range, points are dropped from the low-t end (where the
    tail is flat) until it is; the shipped grid is the trimmed one.
    """
    if not 0.0 < p < 0.5:
        raise ValueError(f"p must lie in (0, 0.5), got {p}")

    log2_cut = math.log2(TAIL_CUTOFF)
    points: list[tuple[int, float]] = []
    for t in range(n + 1):
        log_tail = _log_binomial_tail(n, t, p)
        if log_tail == -math.inf:
            break
        log2_tail = log_tail / math.log(2.0)
        points.append((t, log2_tail))
        if log2_tail < log2_cut:
            break

    start = 0
    while True:
        trimmed = points[start:]
        if len(trimmed) < 4:
            raise PseudoModelError(
                f"no strictly decreasing cubic fit for n={n}, p={p}"
            )
        ts = np.array([q[0] for q in trimmed], dtype=float)
        ys = np.array([q[1] for q in trimmed], dtype=float)
        coeffs = np.polyfit(ts, ys, 3)
        if _cubic_is_decreasing(coeffs, ts[0], ts[-1]):
            break
        start += 1

    return PseudoDistanceModel(
        n=n,
        physical_p=p,
        grid=tuple(trimmed),
        poly_coeffs=tuple(float(c) for c in coeffs),
    )


def pseudo_t(model: PseudoDistanceModel, p_l: float) -> PseudoT:
    """Invert the fitted tail polynomial at log2(p_l) by bisection.

    Values outside the fitted log2 range clamp to the nearest endpoint
    and set the clamp flag.  p_l = 0 is rejected; callers must apply the
    zero-failure floor first.
    """
    if not 0.0 < p_l <= 1.0:
        raise ValueError(f"p_l must lie in (0, 1], got {p_l}")
    y = math.log2(p_l)
    y_hi = model.f1(model.t_min)
    y_lo = model.f1(model.t_max)
    if y >= y_hi:
        return PseudoT(model.t_min, y > y_hi)
    if y <= y_lo:
        return PseudoT(model.t_max, y < y_lo)

    lo, hi = model.t_min, model.t_max
    # f1 is strictly decreasing: f1(lo) > y > f1(hi).
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if model.f1(mid) > y:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return PseudoT(0.5 * (lo + hi), False)


def objective(n: int, k: int, t_hat: float, lam: float) -> float:
    """Hamming-bound proximity F = lam * (k/n) + f2(n, t_hat) - 1."""
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lambda must lie in (0, 1], got {lam}")
    return lam * (k / n) + f2_real(n, t_hat) - 1.0


def objective_moments(
    mu_logp: float,
    sigma_logp: float,
    n: int,
    k: int,
    lam: float,
    model: PseudoDistanceModel,
    step: float = 1e-3,
) -> tuple[float, float]:
    """Propagate a Gaussian belief on log p_l to objective space.

    mu_logp is a natural-log mean.  The variance maps through the local
    derivative of the composite log p_l -> t_hat -> F, taken by central
    difference; in a clamped region the derivative is zero.
    """
    if sigma_logp < 0.0:
        raise ValueError("sigma_logp must be nonnegative")

    def g(u: float) -> float:
        p_l = min(math.exp(u), 1.0)
        t_val = pseudo_t(model, p_l).t_hat
        return objective(n, k, t_val, lam)

    mu_f = g(mu_logp)
    if sigma_logp == 0.0:
        return mu_f, 0.0
    slope = (g(mu_logp + step) - g(mu_logp - step)) / (2.0 * step)
    return mu_f, abs(slope) * sigma_logp


@dataclass(frozen=True)
class EvalRecord:
    """One true-objective evaluation, as persisted in run traces.

    Invalid candidates (k = 0) carry the floor objective and null
    estimation fields.  ``floored`` marks the zero-failure p_l floor
    1/(2N); ``t_clamped`` marks pseudo-distance range clamping.
    """

    index: int
    bits: str
    ell: Optional[int]
    em: Optional[int]
    valid: bool
    n: Optional[int]
    k: Optional[int]
    physical_p: float
    shots: Optional[int]
    failures: Optional[int]
    p_l: Optional[float]
    std_error: Optional[float]
    floored: bool
    t_hat: Optional[float]
    t_clamped: bool
    objective_value: float
    lam: float
    seed: int
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def canonical_json(self) -> str:
        """Serialization with the wall-clock diagnostic masked.

        Trace identity (reproducibility across runs, worker counts, and
        resumes) is defined over this payload; wall_time is the one field
        that legitimately differs between identical runs.
        """
        payload = asdict(self)
        del payload["wall_time"]
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "EvalRecord":
        return EvalRecord(**json.loads(line))
