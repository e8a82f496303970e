"""Search drivers over code bit vectors: BO, EA, and random search.

The Bayesian driver evaluates an initial design, then repeats: refit the
surrogate on all observations, maximize expected improvement over the
predicted objective by single-bit-flip hill climbing with restarts, and
evaluate the proposal on the true objective.  The evolutionary and
random-search baselines consume the identical evaluator interface and
budget accounting, so method comparisons differ only in the proposal
rule.

Invalid candidates score the floor objective -1 (the value of a k = 0,
t_hat = 0 code) instead of being resampled, so every method faces the
same landscape.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Protocol, Sequence

import numpy as np

from .codes import BbParams, CssCode, bb_from_bits
from .decoding import DepolarizingChannel
from .embedding import EmbeddingConfig
from .evaluate import (
    EvalRecord,
    ObjectiveConfig,
    PseudoDistanceModel,
    estimate_ler,
    fit_pseudo_model,
    objective,
    objective_moments,
    pseudo_t,
)
from .gf2 import BitVector
from .surrogate import Dataset, Surrogate

# Floor objective for invalid or failed evaluations; equals
# objective(n, 0, 0, lam) for every n and lam since f2(n, 0) = 0.
FLOOR_OBJECTIVE = -1.0

# Hill-climb iteration cap, in units of the space dimension.
CLIMB_CAP_FACTOR = 10

# Stream tags for per-purpose RNG derivation from the run seed.
_TAG_DRIVER = 1
_TAG_EVAL = 2

_MAX_VALID_TRIES = 100_000


def derive_seed(run_seed: int, tag: int, index: int) -> int:
    """Collapse (run seed, stream tag, index) to one reproducible uint64."""
    ss = np.random.SeedSequence([run_seed, tag, index])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SearchSpace:
    """Bivariate bicycle search domain F_2^{2(ell+em-1)}.

    A point is valid when the constructed code exists and has k >= 1;
    construction returns None otherwise.
    """

    ell: int
    em: int

    def __post_init__(self):
        if self.ell < 1 or self.em < 1:
            raise ValueError("cyclic orders must be positive")

    @property
    def dimension(self) -> int:
        return 2 * (self.ell + self.em - 1)

    def construct(self, bits: BitVector) -> Optional[CssCode]:
        return bb_from_bits(BbParams(self.ell, self.em, bits))

    def is_valid(self, bits: BitVector) -> bool:
        return self.construct(bits) is not None

    def random_bits(self, rng: np.random.Generator) -> BitVector:
        return BitVector.from_array(rng.integers(0, 2, size=self.dimension))

    def random_valid(self, rng: np.random.Generator) -> BitVector:
        for _ in range(_MAX_VALID_TRIES):
            bits = self.random_bits(rng)
            if self.is_valid(bits):
                return bits
        raise RuntimeError(
            f"no valid point found in {_MAX_VALID_TRIES} draws over "
            f"({self.ell}, {self.em})"
        )


class ObjectiveEvaluator(Protocol):
    """What a search driver needs from the problem being optimized."""

    @property
    def dimension(self) -> int: ...

    def is_valid(self, bits: BitVector) -> bool: ...

    def random_valid(self, rng: np.random.Generator) -> BitVector: ...

    def random_bits(self, rng: np.random.Generator) -> BitVector: ...

    def evaluate(self, bits: BitVector, index: int, seed: int) -> EvalRecord: ...

    def new_surrogate(self, seed: int) -> Surrogate: ...

    def dataset(self, records: Sequence[EvalRecord]) -> Dataset: ...

    def predict_objective(
        self, surrogate: Surrogate, bits: BitVector
    ) -> Optional[tuple[float, float]]: ...


@dataclass(frozen=True)
class BoConfig:
    """Initial design size, iteration budget, and proposal settings."""

    nu0: int
    iterations: int
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.nu0 < 2:
            raise ValueError(f"initial design needs nu0 >= 2, got {self.nu0}")
        if self.iterations < 1:
            raise ValueError("iteration budget must be positive")
        if self.restarts < 0:
            raise ValueError("restart count must be nonnegative")

    @property
    def budget(self) -> int:
        return self.nu0 + self.iterations


@dataclass(frozen=True)
class EaConfig:
    """Generational EA settings; mutation_rate None means 1/dimension."""

    budget: int
    seed: int = 0
    population: int = 20
    truncation: float = 0.25
    mutation_rate: Optional[float] = None
    crossover_probability: float = 0.5
    elites: int = 2

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if not 0.0 < self.truncation <= 1.0:
            raise ValueError("truncation fraction must lie in (0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation rate must lie in [0, 1]")
        if not 0.0 <= self.crossover_probability <= 1.0:
            raise ValueError("crossover probability must lie in [0, 1]")
        if not 0 <= self.elites < self.population:
            raise ValueError("elite count must lie in [0, population)")


@dataclass(frozen=True)
class RsConfig:
    budget: int
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be positive")


@dataclass
class RunTrace:
    """Ordered evaluation records of one run plus derived series.

    ``surrogate`` carries the final fitted model of a BO run so callers
    can checkpoint it; baseline runs leave it None.
    """

    method: str
    records: list[EvalRecord] = field(default_factory=list)
    surrogate: Optional[Surrogate] = None

    def __len__(self) -> int:
        return len(self.records)

    def best_so_far(self) -> list[float]:
        out = []
        best = -math.inf
        for rec in self.records:
            best = max(best, rec.objective_value)
            out.append(best)
        return out

    @property
    def best(self) -> EvalRecord:
        if not self.records:
            raise ValueError("empty trace has no best record")
        return max(self.records, key=lambda rec: rec.objective_value)


# -- acquisition -----------------------------------------------------------


def expected_improvement(mu: float, sigma: float, f_star: float) -> float:
    """Closed-form E[max(0, f - f_star)] for f ~ Normal(mu, sigma^2)."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0.0:
        return max(0.0, mu - f_star)
    z = (mu - f_star) / sigma
    phi = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    big_phi = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    return sigma * (z * big_phi + phi)


def acquisition(
    bits: BitVector,
    surrogate: Surrogate,
    evaluator: ObjectiveEvaluator,
    f_star: float,
) -> float:
    """EI of a candidate under the surrogate, -inf for invalid points."""
    stats = evaluator.predict_objective(surrogate, bits)
    if stats is None:
        return -math.inf
    mu_f, sigma_f = stats
    return expected_improvement(mu_f, sigma_f, f_star)


class HillClimbResult(NamedTuple):
    bits: BitVector
    value: float
    cap_hit: bool


def hill_climb(
    acq: Callable[[BitVector], float],
    start: BitVector,
    max_steps: Optional[int] = None,
) -> HillClimbResult:
    """Ascend acq by strict best single-bit-flip improvement.

    Each step scans all dimension flips and moves to the strictly best
    improving neighbor, ties broken by the lowest flipped-bit index;
    stops when no neighbor improves.  The step cap defaults to 10x the
    dimension and a capped exit is flagged.
    """
    dim = len(start)
    if max_steps is None:
        max_steps = CLIMB_CAP_FACTOR * dim
    current = start
    current_val = acq(start)
    for _ in range(max_steps):
        best_bits = None
        best_val = current_val
        for j in range(dim):
            neighbor = BitVector(dim, current.bits ^ (1 << j))
            val = acq(neighbor)
            if val > best_val:
                best_bits, best_val = neighbor, val
        if best_bits is None:
            return HillClimbResult(current, current_val, False)
        current, current_val = best_bits, best_val
    # Cap reached; flag if an improving neighbor still exists.
    improvable = any(
        acq(BitVector(dim, current.bits ^ (1 << j))) > current_val
        for j in range(dim)
    )
    return HillClimbResult(current, current_val, improvable)


class Proposal(NamedTuple):
    bits: BitVector
    source: str  # "climb", "unseen", or "random"
    cap_hit: bool


def propose(
    surrogate: Surrogate,
    evaluator: ObjectiveEvaluator,
    records: Sequence[EvalRecord],
    restarts: int,
    rng: np.random.Generator,
) -> Proposal:
    """Maximize the acquisition by restarted hill climbs, deduplicated.

    Climbs start from ``restarts`` random valid points plus the incumbent
    best.  If the winning endpoint was already evaluated, the best point
    encountered during the climbs that is unseen and valid is proposed
    instead; failing that, a fresh random valid point (flagged).
    """
    if not records:
        raise ValueError("propose needs at least one prior evaluation")
    seen = {rec.bits for rec in records}
    f_star = max(rec.objective_value for rec in records)

    cache: dict[int, float] = {}

    def cached_acq(bits: BitVector) -> float:
        key = bits.bits
        if key not in cache:
            cache[key] = acquisition(bits, surrogate, evaluator, f_star)
        return cache[key]

    incumbent = max(records, key=lambda rec: rec.objective_value)
    starts = [
        evaluator.random_valid(rng) for _ in range(restarts)
    ]
    starts.append(BitVector.from_text(incumbent.bits))

    best: Optional[HillClimbResult] = None
    cap_hit = False
    for start in starts:
        result = hill_climb(cached_acq, start)
        cap_hit = cap_hit or result.cap_hit
        if best is None or result.value > best.value:
            best = result

    if best.bits.to_text() not in seen:
        return Proposal(best.bits, "climb", cap_hit)

    dim = best.bits.n
    unseen = [
        (val, key)
        for key, val in cache.items()
        if math.isfinite(val) and BitVector(dim, key).to_text() not in seen
    ]
    if unseen:
        val, key = max(unseen, key=lambda pair: (pair[0], -pair[1]))
        return Proposal(BitVector(dim, key), "unseen", cap_hit)

    for _ in range(_MAX_VALID_TRIES):
        bits = evaluator.random_valid(rng)
        if bits.to_text() not in seen:
            return Proposal(bits, "random", cap_hit)
    raise RuntimeError("search space exhausted: no unseen valid point found")


# -- evaluators ------------------------------------------------------------


class CodeEvaluator:
    """True-objective evaluation of BB codes by Monte Carlo decoding.

    A candidate bit vector is constructed into a code, its logical error
    rate estimated, the zero-failure floor 1/(2N) applied when no shot
    fails, the pseudo-distance radius recovered by tail inversion, and
    the Hamming-bound objective scored.  The surrogate models the natural
    log of the (floored) error rate over code embeddings.
    """

    def __init__(
        self,
        space: SearchSpace,
        objective_cfg: ObjectiveConfig,
        embedding_cfg: Optional[EmbeddingConfig] = None,
        smoothness: float = 2.5,
        workers: int = 1,
        decoder_cfg=None,
    ):
        self.space = space
        self.cfg = objective_cfg
        self.embedding_cfg = embedding_cfg if embedding_cfg is not None else EmbeddingConfig()
        self.smoothness = smoothness
        self.workers = workers
        self.decoder_cfg = decoder_cfg
        self.channel = DepolarizingChannel(objective_cfg.physical_p)
        n = 2 * space.ell * space.em
        self.pseudo_model: PseudoDistanceModel = fit_pseudo_model(
            n, objective_cfg.physical_p
        )
        self._codes: dict[int, Optional[CssCode]] = {}

    @property
    def dimension(self) -> int:
        return self.space.dimension

    def _code(self, bits: BitVector) -> Optional[CssCode]:
        key = bits.bits
        if key not in self._codes:
            self._codes[key] = self.space.construct(bits)
        return self._codes[key]

    def is_valid(self, bits: BitVector) -> bool:
        return self._code(bits) is not None

    def random_valid(self, rng: np.random.Generator) -> BitVector:
        return self.space.random_valid(rng)

    def random_bits(self, rng: np.random.Generator) -> BitVector:
        return self.space.random_bits(rng)

    def floored_p(self, p_l: float) -> tuple[float, bool]:
        if p_l == 0.0:
            return 0.5 / self.cfg.shots, True
        return p_l, False

    def evaluate(self, bits: BitVector, index: int, seed: int) -> EvalRecord:
        t0 = time.perf_counter()
        code = self._code(bits)
        if code is None:
            return EvalRecord(
                index=index, bits=bits.to_text(), ell=self.space.ell,
                em=self.space.em, valid=False, n=None, k=None,
                physical_p=self.cfg.physical_p, shots=None, failures=None,
                p_l=None, std_error=None, floored=False, t_hat=None,
                t_clamped=False, objective_value=FLOOR_OBJECTIVE,
                lam=self.cfg.lam, seed=seed,
                wall_time=time.perf_counter() - t0,
            )
        try:
            est = estimate_ler(
                code, self.channel, self.cfg.shots, seed,
                decoder_cfg=self.decoder_cfg, workers=self.workers,
            )
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            # A failed estimation scores the floor; the search continues.
            return EvalRecord(
                index=index, bits=bits.to_text(), ell=self.space.ell,
                em=self.space.em, valid=True, n=code.n, k=code.k,
                physical_p=self.cfg.physical_p, shots=self.cfg.shots,
                failures=None, p_l=None, std_error=None, floored=False,
                t_hat=None, t_clamped=False, objective_value=FLOOR_OBJECTIVE,
                lam=self.cfg.lam, seed=seed,
                wall_time=time.perf_counter() - t0,
            )
        p_eff, floored = self.floored_p(est.p_l)
        t_val = pseudo_t(self.pseudo_model, p_eff)
        f_val = objective(code.n, code.k, t_val.t_hat, self.cfg.lam)
        return EvalRecord(
            index=index, bits=bits.to_text(), ell=self.space.ell,
            em=self.space.em, valid=True, n=code.n, k=code.k,
            physical_p=self.cfg.physical_p, shots=est.shots,
            failures=est.failures, p_l=est.p_l, std_error=est.std_error,
            floored=floored, t_hat=t_val.t_hat, t_clamped=t_val.clamped,
            objective_value=f_val, lam=self.cfg.lam, seed=seed,
            wall_time=time.perf_counter() - t0,
        )

    def new_surrogate(self, seed: int) -> Surrogate:
        return Surrogate(self.embedding_cfg, smoothness=self.smoothness, seed=seed)

    def dataset(self, records: Sequence[EvalRecord]) -> Dataset:
        codes = []
        targets = []
        for rec in records:
            if not rec.valid or rec.p_l is None:
                continue
            code = self._code(BitVector.from_text(rec.bits))
            p_eff = 0.5 / rec.shots if rec.floored else rec.p_l
            codes.append(code)
            targets.append(math.log(p_eff))
        return Dataset.from_raw(codes, np.array(targets))

    def predict_objective(
        self, surrogate: Surrogate, bits: BitVector
    ) -> Optional[tuple[float, float]]:
        code = self._code(bits)
        if code is None:
            return None
        mu_ln, var_ln = surrogate.predict_raw(code)
        return objective_moments(
            mu_ln, math.sqrt(var_ln), code.n, code.k,
            self.cfg.lam, self.pseudo_model,
        )


class SyntheticEvaluator:
    """Deterministic planted quadratic over F_2^dimension.

    F(x) = 1 - d^T W d / normalizer with d = x XOR x_star and W a seeded
    positive-definite matrix, so the unique global maximum is F = 1 at
    the planted point and there is no Monte Carlo noise.  The surrogate
    models F directly on raw bit features.
    """

    def __init__(self, dimension: int, seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension_ = dimension
        rng = np.random.default_rng([seed, 0xB0])
        self.x_star = BitVector.from_array(rng.integers(0, 2, size=dimension))
        a = rng.standard_normal((dimension, dimension))
        self.w = a @ a.T
        self.normalizer = float(np.abs(self.w).sum())

    @property
    def dimension(self) -> int:
        return self.dimension_

    def objective_of(self, bits: BitVector) -> float:
        delta = (bits.to_array() ^ self.x_star.to_array()).astype(float)
        return 1.0 - float(delta @ self.w @ delta) / self.normalizer

    def is_valid(self, bits: BitVector) -> bool:
        return True

    def random_valid(self, rng: np.random.Generator) -> BitVector:
        return self.random_bits(rng)

    def random_bits(self, rng: np.random.Generator) -> BitVector:
        return BitVector.from_array(rng.integers(0, 2, size=self.dimension_))

    def evaluate(self, bits: BitVector, index: int, seed: int) -> EvalRecord:
        t0 = time.perf_counter()
        return EvalRecord(
            index=index, bits=bits.to_text(), ell=None, em=None, valid=True,
            n=None, k=None, physical_p=0.0, shots=None, failures=None,
            p_l=None, std_error=None, floored=False, t_hat=None,
            t_clamped=False, objective_value=self.objective_of(bits),
            lam=1.0, seed=seed, wall_time=time.perf_counter() - t0,
        )

    def new_surrogate(self, seed: int) -> Surrogate:
        return Surrogate.on_features(self.dimension_, seed=seed)

    def dataset(self, records: Sequence[EvalRecord]) -> Dataset:
        inputs = [
            BitVector.from_text(rec.bits).to_array().astype(float)
            for rec in records
        ]
        targets = np.array([rec.objective_value for rec in records])
        return Dataset.from_raw(inputs, targets)

    def predict_objective(
        self, surrogate: Surrogate, bits: BitVector
    ) -> Optional[tuple[float, float]]:
        mu, var = surrogate.predict_raw(bits.to_array().astype(float))
        return mu, math.sqrt(var)


# -- drivers ---------------------------------------------------------------


def _emit(
    records: list[EvalRecord],
    rec: EvalRecord,
    sink: Optional[Callable[[EvalRecord], None]],
    replayed: bool,
) -> None:
    records.append(rec)
    if sink is not None and not replayed:
        sink(rec)


def _next_record(
    evaluator: ObjectiveEvaluator,
    bits: BitVector,
    index: int,
    run_seed: int,
    replay: Sequence[EvalRecord],
) -> tuple[EvalRecord, bool]:
    """Evaluate, or consume the stored record when replaying a trace."""
    if index < len(replay):
        stored = replay[index]
        if stored.bits != bits.to_text() or stored.index != index:
            raise ValueError(
                f"stored trace diverges from the driver at record {index}"
            )
        return stored, True
    seed = derive_seed(run_seed, _TAG_EVAL, index)
    return evaluator.evaluate(bits, index, seed), False


def bo_run(
    evaluator: ObjectiveEvaluator,
    cfg: BoConfig,
    sink: Optional[Callable[[EvalRecord], None]] = None,
    replay: Sequence[EvalRecord] = (),
) -> RunTrace:
    """Algorithm: initial design, then refit / propose / evaluate loop.

    The trace has exactly nu0 + iterations records.  Passing a stored
    prefix as ``replay`` consumes those records instead of re-evaluating
    (surrogate fits are recomputed), reproducing the uninterrupted run.
    """
    rng = np.random.default_rng([cfg.seed, _TAG_DRIVER])
    trace = RunTrace("bo")
    for i in range(cfg.nu0):
        bits = evaluator.random_valid(rng)
        rec, replayed = _next_record(evaluator, bits, i, cfg.seed, replay)
        _emit(trace.records, rec, sink, replayed)

    surrogate = evaluator.new_surrogate(cfg.seed)
    for t in range(cfg.iterations):
        data = evaluator.dataset(trace.records)
        surrogate.fit(data)
        proposal = propose(surrogate, evaluator, trace.records, cfg.restarts, rng)
        index = cfg.nu0 + t
        rec, replayed = _next_record(
            evaluator, proposal.bits, index, cfg.seed, replay
        )
        _emit(trace.records, rec, sink, replayed)
    trace.surrogate = surrogate
    return trace


def ea_run(
    evaluator: ObjectiveEvaluator,
    cfg: EaConfig,
    sink: Optional[Callable[[EvalRecord], None]] = None,
    replay: Sequence[EvalRecord] = (),
) -> RunTrace:
    """Generational EA: truncation selection, crossover, mutation, elites.

    Exactly cfg.budget true evaluations are consumed; elites carry their
    records across generations without re-evaluation.
    """
    rng = np.random.default_rng([cfg.seed, _TAG_DRIVER])
    dim = evaluator.dimension
    rate = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / dim
    trace = RunTrace("ea")

    def evaluate(bits: BitVector) -> EvalRecord:
        index = len(trace.records)
        rec, replayed = _next_record(evaluator, bits, index, cfg.seed, replay)
        _emit(trace.records, rec, sink, replayed)
        return rec

    pop_size = min(cfg.population, cfg.budget)
    population = [evaluate(evaluator.random_bits(rng)) for _ in range(pop_size)]

    while len(trace.records) < cfg.budget:
        ranked = sorted(
            population, key=lambda rec: rec.objective_value, reverse=True
        )
        n_selected = max(1, int(round(cfg.truncation * len(ranked))))
        selected = ranked[:n_selected]
        elites = ranked[: cfg.elites]
        children: list[EvalRecord] = []
        n_children = min(
            cfg.population - len(elites), cfg.budget - len(trace.records)
        )
        for _ in range(n_children):
            first = selected[rng.integers(len(selected))]
            second = selected[rng.integers(len(selected))]
            a = BitVector.from_text(first.bits).to_array()
            b = BitVector.from_text(second.bits).to_array()
            if rng.random() < cfg.crossover_probability:
                mask = rng.integers(0, 2, size=dim).astype(bool)
                child = np.where(mask, a, b)
            else:
                child = a.copy()
            flips = rng.random(dim) < rate
            child = child ^ flips
            children.append(evaluate(BitVector.from_array(child)))
        population = elites + children
    return trace


def rs_run(
    evaluator: ObjectiveEvaluator,
    cfg: RsConfig,
    sink: Optional[Callable[[EvalRecord], None]] = None,
    replay: Sequence[EvalRecord] = (),
) -> RunTrace:
    """Uniform i.i.d. sampling; invalid draws score the floor."""
    rng = np.random.default_rng([cfg.seed, _TAG_DRIVER])
    trace = RunTrace("rs")
    for i in range(cfg.budget):
        bits = evaluator.random_bits(rng)
        rec, replayed = _next_record(evaluator, bits, i, cfg.seed, replay)
        _emit(trace.records, rec, sink, replayed)
    return trace
