"""Depolarizing noise, syndromes, BP+OSD decoding, and failure classification.

The channel applies X, Y, or Z to each qubit independently, each with
probability p/3; a Y sets bits in both the X and Z error vectors.  The two
error types are decoded separately (X from Hz, Z from Hx) with the exact
marginal prior 2p/3 per bit.

Belief propagation is sum-product on the Tanner graph with a flooding
schedule.  Log-likelihood ratios are clamped to +-30 throughout.  When BP
does not converge within the iteration cap, order-0 ordered-statistics
postprocessing produces a syndrome-consistent estimate from the BP
reliabilities: columns are sorted by descending error probability (ties by
ascending column index) and the syndrome is solved on the resulting
information set.

The batched path processes many shots at once; every per-shot quantity is
computed column-independently and each shot's outputs freeze at its first
converged iteration, so results are bit-identical to a per-shot loop and
independent of how shots are chunked across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import CssCode
from .gf2 import BitMatrix, BitVector, mat_vec

__all__ = [
    "DecoderConfigError",
    "InconsistentSyndromeError",
    "DecoderContractError",
    "DepolarizingChannel",
    "PauliError",
    "Syndrome",
    "DecoderConfig",
    "sample_error",
    "sample_error_block",
    "syndrome",
    "bp_decode",
    "osd_postprocess",
    "decode_css",
    "decode_block",
    "is_logical_failure",
]

LLR_CLAMP = 30.0


class DecoderConfigError(ValueError):
    """A decoder configuration value is outside its documented domain."""


class InconsistentSyndromeError(RuntimeError):
    """The syndrome is outside the column space of the check matrix."""


class DecoderContractError(RuntimeError):
    """A decoded estimate failed the zero-residual-syndrome precondition."""


@dataclass(frozen=True)
class DepolarizingChannel:
    """Code-capacity depolarizing noise with total per-qubit rate p."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")

    @property
    def marginal_flip_probability(self) -> float:
        """Per-bit prior for one decoding side: P(X or Y) = P(Z or Y) = 2p/3."""
        return 2.0 * self.p / 3.0


@dataclass(frozen=True)
class PauliError:
    """Binary symplectic error: ex marks X/Y support, ez marks Z/Y support."""

    ex: BitVector
    ez: BitVector

    def __post_init__(self):
        if self.ex.n != self.ez.n:
            raise ValueError("ex and ez must have equal length")


@dataclass(frozen=True)
class Syndrome:
    """sx = Hz ex (length mz) and sz = Hx ez (length mx)."""

    sx: BitVector
    sz: BitVector


@dataclass(frozen=True)
class DecoderConfig:
    """BP+OSD settings.

    ``damping`` is the retention weight of the previous check-to-variable
    messages (0 disables damping).  ``postprocess_order`` is a hook for
    higher-order reprocessing; only order 0 is implemented.
    """

    prior_flip_probability: float
    max_iterations: int = 50
    postprocess_order: int = 0
    damping: float = 0.0

    def __post_init__(self):
        _check_prior(self.prior_flip_probability)
        if self.max_iterations < 1:
            raise DecoderConfigError("max_iterations must be at least 1")
        if not 0.0 <= self.damping < 1.0:
            raise DecoderConfigError("damping must lie in [0, 1)")
        if self.postprocess_order != 0:
            raise DecoderConfigError(
                "only order-0 postprocessing is implemented"
            )


def _check_prior(prior: float) -> None:
    if not 0.0 < prior < 1.0 or prior == 0.5:
        raise DecoderConfigError(
            f"prior flip probability must lie in (0, 1) and differ from "
            f"0.5, got {prior}"
        )


def sample_error(ch: DepolarizingChannel, n: int, rng: np.random.Generator) -> PauliError:
    """Draw one depolarizing error on n qubits.

    Per qubit, a uniform draw u selects: u < p/3 an X error, u in
    [p/3, 2p/3) a Y error (both bits), u in [2p/3, p) a Z error, and
    u >= p no error.
    """
    ex, ez = _errors_from_uniform(rng.random(n), ch.p)
    return PauliError(ex=BitVector.from_array(ex), ez=BitVector.from_array(ez))


def sample_error_block(
    ch: DepolarizingChannel, n: int, shots: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a (shots, n) block of errors as uint8 arrays (ex, ez)."""
    return _errors_from_uniform(rng.random((shots, n)), ch.p)


def _errors_from_uniform(u: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    ex = (u < 2.0 * p / 3.0).astype(np.uint8)
    ez = ((u >= p / 3.0) & (u < p)).astype(np.uint8)
    return ex, ez


def syndrome(code: CssCode, e: PauliError) -> Syndrome:
    """Measure both syndromes of an error on a code."""
    return Syndrome(sx=mat_vec(code.hz, e.ex), sz=mat_vec(code.hx, e.ez))


class _TannerGraph:
    """Cached edge structure of one check matrix for batched BP."""

    def __init__(self, h: BitMatrix):
        self.m = h.rows
        self.n = h.cols
        self.dense = h.to_array()
        check, var = np.nonzero(self.dense)
        # Row-major order: edges grouped by check, ascending variable.
        self.edge_check = check.astype(np.int64)
        self.edge_var = var.astype(np.int64)
        self.n_edges = len(check)
        if self.n_edges:
            self.check_ids, check_first = np.unique(self.edge_check, return_index=True)
            self.check_starts = check_first
            # Position of each edge's check within check_ids.
            self.edge_check_pos = np.searchsorted(self.check_ids, self.edge_check)
            self.var_perm = np.argsort(self.edge_var, kind="stable")
            sorted_vars = self.edge_var[self.var_perm]
            self.var_ids, var_first = np.unique(sorted_vars, return_index=True)
            self.var_starts = var_first


def bp_decode(
    h: BitMatrix, s: BitVector, cfg: DecoderConfig
) -> tuple[np.ndarray, BitVector, bool]:
    """Sum-product decoding of one syndrome.

    Returns:
        (posteriors, hard, converged): per-bit error probabilities, the
        hard decision, and whether H * hard = s held at some iteration
        within the cap.  Posteriors are returned in all cases.
    """
    if s.n != h.rows:
        raise ValueError(f"syndrome length {s.n} does not match {h.rows} checks")
    graph = _TannerGraph(h)
    post, hard, conv = _bp_batch(graph, s.to_array()[None, :], cfg)
    return post[0], BitVector.from_array(hard[0]), bool(conv[0])


def _bp_batch(
    graph: _TannerGraph, syndromes: np.ndarray, cfg: DecoderConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flooding BP on a batch of syndromes, shape (shots, m).

    Outputs freeze per shot at its first converged iteration.
    """
    _check_prior(cfg.prior_flip_probability)
    shots = syndromes.shape[0]
    n = graph.n
    prior = cfg.prior_flip_probability
    prior_llr = float(np.log((1.0 - prior) / prior))

    out_post = np.full((shots, n), prior, dtype=np.float64)
    out_hard = np.zeros((shots, n), dtype=np.uint8)
    out_conv = np.zeros(shots, dtype=bool)

    if graph.n_edges == 0:
        # No constraints: the prior decides everything.
        if prior > 0.5:
            out_hard[:] = 1
        out_conv[:] = ~np.any(
            (graph.dense.astype(np.int64) @ out_hard.T % 2).T != syndromes, axis=1
        )
        return out_post, out_hard, out_conv

    e = graph.n_edges
    active = np.arange(shots)
    # Sign factor (-1)^s per edge, per active shot.
    sign = 1.0 - 2.0 * syndromes[:, graph.edge_check].T.astype(np.float64)
    v2c = np.full((e, len(active)), prior_llr)
    c2v = np.zeros((e, len(active)))
    dense_t = graph.dense.astype(np.int64).T

    for _ in range(cfg.max_iterations):
        t = np.tanh(np.clip(v2c, -LLR_CLAMP, LLR_CLAMP) / 2.0)
        t = np.where(np.abs(t) < 1e-12, np.where(t < 0.0, -1e-12, 1e-12), t)
        prod = np.multiply.reduceat(t, graph.check_starts, axis=0)
        excl = np.clip(prod[graph.edge_check_pos] / t, -1.0 + 1e-15, 1.0 - 1e-15)
        fresh = sign * 2.0 * np.arctanh(excl)
        if cfg.damping:
            c2v = cfg.damping * c2v + (1.0 - cfg.damping) * fresh
        else:
            c2v = fresh
        np.clip(c2v, -LLR_CLAMP, LLR_CLAMP, out=c2v)

        sums = np.add.reduceat(c2v[graph.var_perm], graph.var_starts, axis=0)
        totals = np.full((n, len(active)), prior_llr)
        totals[graph.var_ids] += sums
        np.clip(totals, -LLR_CLAMP, LLR_CLAMP, out=totals)
        v2c = np.clip(totals[graph.edge_var] - c2v, -LLR_CLAMP, LLR_CLAMP)

        hard = (totals < 0.0).astype(np.uint8)
        syn = (hard.T @ dense_t) % 2
        converged = ~np.any(syn != syndromes[active], axis=1)
        if np.any(converged):
            done = active[converged]
            out_post[done] = 1.0 / (1.0 + np.exp(totals[:, converged].T))
            out_hard[done] = hard[:, converged].T
            out_conv[done] = True
            keep = ~converged
            if not np.any(keep):
                return out_post, out_hard, out_conv
            active = active[keep]
            sign = sign[:, keep]
            v2c = v2c[:, keep]
            c2v = c2v[:, keep]

    out_post[active] = 1.0 / (1.0 + np.exp(totals[:, ~converged].T))
    out_hard[active] = hard[:, ~converged].T
    return out_post, out_hard, out_conv


def osd_postprocess(h: BitMatrix, s: BitVector, posteriors: np.ndarray) -> BitVector:
    """Order-0 ordered-statistics solve of H e = s.

    Raises:
        InconsistentSyndromeError: If s lies outside the column space of H,
            which cannot happen for syndromes produced by real errors.
    """
    if s.n != h.rows:
        raise ValueError(f"syndrome length {s.n} does not match {h.rows} checks")
    e = _osd_solve(h.to_array(), s.to_array(), np.asarray(posteriors, dtype=np.float64))
    return BitVector.from_array(e)


def _osd_solve(dense: np.ndarray, s_row: np.ndarray, posteriors: np.ndarray) -> np.ndarray:
    m, n = dense.shape
    order = np.argsort(-posteriors, kind="stable")
    aug = np.empty((m, n + 1), dtype=np.uint8)
    aug[:, :n] = dense[:, order]
    aug[:, n] = s_row
    pivot_rows: list[int] = []
    pivot_cols: list[int] = []
    r = 0
    for c in range(n):
        hot = np.nonzero(aug[r:, c])[0]
        if hot.size == 0:
            continue
        pr = r + int(hot[0])
        if pr != r:
            aug[[r, pr]] = aug[[pr, r]]
        mask = aug[:, c].astype(bool).copy()
        mask[r] = False
        if np.any(mask):
            aug[mask] ^= aug[r]
        pivot_rows.append(r)
        pivot_cols.append(c)
        r += 1
        if r == m:
            break
    if np.any(aug[r:, n]):
        raise InconsistentSyndromeError("syndrome outside the check column space")
    e_perm = np.zeros(n, dtype=np.uint8)
    e_perm[pivot_cols] = aug[pivot_rows, n]
    e = np.zeros(n, dtype=np.uint8)
    e[order] = e_perm
    return e


def decode_css(code: CssCode, s: Syndrome, cfg: DecoderConfig) -> PauliError:
    """Decode both error types; the X estimate uses only sx, the Z only sz.

    The returned estimate always satisfies Hz ex_hat = sx and
    Hx ez_hat = sz: BP's hard decision when it converged, otherwise the
    OSD solution.
    """
    ex_hat = _decode_side(_TannerGraph(code.hz), s.sx.to_array()[None, :], cfg)[0]
    ez_hat = _decode_side(_TannerGraph(code.hx), s.sz.to_array()[None, :], cfg)[0]
    return PauliError(ex=BitVector.from_array(ex_hat), ez=BitVector.from_array(ez_hat))


def _decode_side(graph: _TannerGraph, syndromes: np.ndarray, cfg: DecoderConfig) -> np.ndarray:
    post, hard, conv = _bp_batch(graph, syndromes, cfg)
    for i in np.flatnonzero(~conv):
        hard[i] = _osd_solve(graph.dense, syndromes[i], post[i])
    return hard


class BlockDecoder:
    """Reusable decoder for many shots on one code.

    Caches the Tanner graphs of both sides; `decode` maps (shots, n) error
    blocks to syndrome-consistent estimate blocks.
    """

    def __init__(self, code: CssCode, cfg: DecoderConfig):
        self.code = code
        self.cfg = cfg
        self._graph_x = _TannerGraph(code.hz)
        self._graph_z = _TannerGraph(code.hx)
        self._hz_t = self._graph_x.dense.astype(np.int64).T
        self._hx_t = self._graph_z.dense.astype(np.int64).T
        self._lz_t = code.lz.to_array().astype(np.int64).T
        self._lx_t = code.lx.to_array().astype(np.int64).T

    def syndromes(self, ex: np.ndarray, ez: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sx = (ex.astype(np.int64) @ self._hz_t) % 2
        sz = (ez.astype(np.int64) @ self._hx_t) % 2
        return sx.astype(np.uint8), sz.astype(np.uint8)

    def failures(
        self,
        ex: np.ndarray,
        ez: np.ndarray,
        ex_hat: np.ndarray,
        ez_hat: np.ndarray,
    ) -> np.ndarray:
        """Mask of shots whose residual error acts on the logical space."""
        rx = (ex ^ ex_hat).astype(np.int64)
        rz = (ez ^ ez_hat).astype(np.int64)
        fx = np.any((rx @ self._lz_t) % 2, axis=1)
        fz = np.any((rz @ self._lx_t) % 2, axis=1)
        return fx | fz

    def decode(self, sx: np.ndarray, sz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ex_hat = _decode_side(self._graph_x, sx, self.cfg)
        ez_hat = _decode_side(self._graph_z, sz, self.cfg)
        # Decoder validity contract: estimates must reproduce the syndromes.
        if np.any((ex_hat.astype(np.int64) @ self._hz_t) % 2 != sx) or np.any(
            (ez_hat.astype(np.int64) @ self._hx_t) % 2 != sz
        ):
            raise DecoderContractError("decoded estimate violates its syndrome")
        return ex_hat, ez_hat


def decode_block(
    code: CssCode, cfg: DecoderConfig, ex: np.ndarray, ez: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Decode a (shots, n) error block; returns estimate blocks."""
    decoder = BlockDecoder(code, cfg)
    sx, sz = decoder.syndromes(ex, ez)
    return decoder.decode(sx, sz)


def is_logical_failure(code: CssCode, e: PauliError, ehat: PauliError) -> bool:
    """Whether the residual error acts nontrivially on a logical qubit.

    Raises:
        DecoderContractError: If the residual has a nonzero syndrome, i.e.
            e and ehat disagree on some check.
    """
    rx = e.ex ^ ehat.ex
    rz = e.ez ^ ehat.ez
    if not mat_vec(code.hz, rx).is_zero() or not mat_vec(code.hx, rz).is_zero():
        raise DecoderContractError("residual error has a nonzero syndrome")
    return not mat_vec(code.lz, rx).is_zero() or not mat_vec(code.lx, rz).is_zero()
