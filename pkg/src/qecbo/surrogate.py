"""Gaussian process regression of log logical error rates over embeddings.

The surrogate places a Matern-kernel GP with a linear mean on top of the
code embedding and trains both jointly by gradient ascent on the log
marginal likelihood.  Targets are natural-log error rates, standardized
per dataset; predictions come back in standardized units with accessors
to undo the transform.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import autodiff as ad
from .autodiff import FactorizationError, Graph, NonFiniteError, ParamVector
from .codes import CssCode
from .embedding import EmbeddingConfig, embed_with, init_params, param_layout

HALF_INTEGER_SMOOTHNESS = (0.5, 1.5, 2.5)
JITTER_LADDER = (1e-10, 1e-8, 1e-6)
INITIAL_FIT_STEPS = 200
REFIT_STEPS = 50
# Warm refit whose length scale drops below this fraction of the median
# pairwise embedding distance is retried from a fresh initialization.
# Healthy short-scale fits sit around 1e-2; genuine delta-kernel collapse
# lands below 1e-3 of the median distance.
_COLLAPSE_RATIO = 1e-3

# Added under the distance before the square root; keeps the gradient of
# the exact-zero diagonal finite without visibly perturbing the kernel.
_DISTANCE_EPS = 1e-18

_MIN_LINE_SEARCH_STEP = 1e-12


class FitDivergenceError(RuntimeError):
    """Marginal-likelihood ascent hit a non-finite value.

    Carries the last finite parameter vector and objective value so the
    caller can recover or report.
    """

    def __init__(self, message: str, params: ParamVector, value: float):
        super().__init__(message)
        self.params = params
        self.value = value


@dataclass(frozen=True, eq=False)
class GpHyper:
    """Kernel and mean hyperparameters in their natural (positive) units."""

    length_scale: float
    signal_variance: float
    noise_variance: float
    smoothness: float
    mean_weights: np.ndarray
    mean_bias: float

    def __post_init__(self):
        if self.length_scale <= 0 or self.signal_variance <= 0 or self.noise_variance <= 0:
            raise ValueError("length scale and variances must be positive")
        if self.smoothness not in HALF_INTEGER_SMOOTHNESS:
            raise ValueError(f"smoothness must be one of {HALF_INTEGER_SMOOTHNESS}")
        object.__setattr__(
            self, "mean_weights", np.asarray(self.mean_weights, dtype=float).ravel()
        )


def matern(r, h: GpHyper):
    """Half-integer Matern kernel value at distance r (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distances must be nonnegative")
    if h.smoothness == 0.5:
        return h.signal_variance * np.exp(-r / h.length_scale)
    if h.smoothness == 1.5:
        u = math.sqrt(3.0) * r / h.length_scale
        return h.signal_variance * (1.0 + u) * np.exp(-u)
    u = math.sqrt(5.0) * r / h.length_scale
    return h.signal_variance * (1.0 + u + u * u / 3.0) * np.exp(-u)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs with raw targets and the standardization applied to them.

    ``raw_targets`` holds natural-log logical error rates (finite: any
    zero-failure flooring happens upstream); ``targets`` is the
    standardized view the GP actually regresses on.
    """

    inputs: tuple
    raw_targets: np.ndarray
    mean: float
    scale: float

    @classmethod
    def from_raw(cls, inputs: Sequence, raw_targets) -> "Dataset":
        y = np.asarray(raw_targets, dtype=float).ravel()
        if y.size != len(inputs):
            raise ValueError("inputs and targets must have equal length")
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        if y.size == 0:
            return cls(tuple(inputs), y, 0.0, 1.0)
        scale = float(np.std(y))
        if scale < 1e-12:
            scale = 1.0
        return cls(tuple(inputs), y, float(np.mean(y)), scale)

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def targets(self) -> np.ndarray:
        return (self.raw_targets - self.mean) / self.scale

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.mean) / self.scale

    def destandardize_mean(self, mu) -> np.ndarray:
        return self.mean + self.scale * np.asarray(mu, dtype=float)

    def destandardize_variance(self, var) -> np.ndarray:
        return self.scale * self.scale * np.asarray(var, dtype=float)


def dataset_fingerprint(data: Dataset) -> str:
    """Content hash binding a checkpoint to the data it was fitted on."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(data.raw_targets).tobytes())
    for x in data.inputs:
        if isinstance(x, CssCode):
            digest.update(np.ascontiguousarray(x.hx.to_array()).tobytes())
            digest.update(np.ascontiguousarray(x.hz.to_array()).tobytes())
        else:
            digest.update(np.ascontiguousarray(np.asarray(x, dtype=float)).tobytes())
    return digest.hexdigest()


class Metrics(NamedTuple):
    mse: float
    r2: float
    avg_nll: float


def metrics(mu, var, targets) -> Metrics:
    """Regression quality of Gaussian predictions against held-out targets."""
    mu = np.asarray(mu, dtype=float).ravel()
    var = np.asarray(var, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if not (mu.size == var.size == y.size) or y.size < 2:
        raise ValueError("predictions and targets must share a length of at least 2")
    if np.any(var <= 0):
        raise ValueError("predictive variances must be positive")
    mse = float(np.mean((y - mu) ** 2))
    spread = float(np.var(y))
    if spread < 1e-300:
        raise ValueError("r2 undefined: targets have zero variance")
    avg_nll = float(np.mean(0.5 * np.log(2.0 * math.pi * var) + (y - mu) ** 2 / (2.0 * var)))
    return Metrics(mse, 1.0 - mse / spread, avg_nll)


class _CodeEncoder:
    """Learned chain-complex embedding of a CssCode."""

    def __init__(self, cfg: EmbeddingConfig):
        self.cfg = cfg

    @property
    def d_f(self) -> int:
        return self.cfg.d_f

    def layout(self):
        return param_layout(self.cfg)

    def init(self, rng: np.random.Generator) -> ParamVector:
        return init_params(self.cfg, rng)

    def apply(self, code: CssCode, get):
        return embed_with(code, get, self.cfg)

    def describe(self) -> tuple:
        c = self.cfg
        return ("code", c.variant, c.aggregation, str(c.d_hidden), str(c.d_f), str(c.layers_per_view))


class _FeatureEncoder:
    """Identity embedding for inputs that already are feature vectors."""

    def __init__(self, d_f: int):
        if d_f < 1:
            raise ValueError("feature dimension must be positive")
        self.d_f = d_f

    def layout(self):
        return []

    def init(self, rng: np.random.Generator) -> ParamVector:
        return ParamVector.from_segments({})

    def apply(self, x, get):
        row = np.asarray(x, dtype=float).reshape(1, -1)
        if row.shape[1] != self.d_f:
            raise ValueError(f"expected {self.d_f} features, got {row.shape[1]}")
        return row

    def describe(self) -> tuple:
        return ("features", str(self.d_f))


@lru_cache(maxsize=8)
def _difference_operator(n: int) -> np.ndarray:
    """Constant (n^2, n) map taking Z to the flat list of row differences."""
    p = np.zeros((n * n, n))
    for i in range(n):
        block = slice(i * n, (i + 1) * n)
        p[block, i] += 1.0
        p[block, :] -= np.eye(n)
    return p


def _matern_graph(r, log_ell, log_sf2, smoothness: float):
    inv_ell = ad.exp(ad.mul(log_ell, -1.0))
    sf2 = ad.exp(log_sf2)
    if smoothness == 0.5:
        u = ad.mul(r, inv_ell)
        return ad.mul(sf2, ad.exp(ad.mul(u, -1.0)))
    root = math.sqrt(3.0) if smoothness == 1.5 else math.sqrt(5.0)
    u = ad.mul(ad.mul(r, inv_ell), root)
    decay = ad.exp(ad.mul(u, -1.0))
    if smoothness == 1.5:
        poly = ad.add(u, 1.0)
    else:
        poly = ad.add(ad.add(u, 1.0), ad.mul(ad.mul(u, u), 1.0 / 3.0))
    return ad.mul(sf2, ad.mul(poly, decay))


SURROGATE_FORMAT_VERSION = 1

_GP_SEGMENT_PREFIX = "gp."


def _gp_layout(d_f: int):
    return [
        ("gp.log_length_scale", (1, 1)),
        ("gp.log_signal_variance", (1, 1)),
        ("gp.log_noise_variance", (1, 1)),
        ("gp.mean_weights", (d_f, 1)),
        ("gp.mean_bias", (1, 1)),
    ]


class Surrogate:
    """GP over code embeddings, trained jointly with the embedding.

    Construct with an EmbeddingConfig for code inputs, or via
    ``Surrogate.on_features`` when inputs are plain feature vectors.
    ``fit`` runs backtracking gradient ascent on the log marginal
    likelihood; ``predict`` returns the posterior mean and latent
    variance in standardized target units.
    """

    def __init__(
        self,
        config: Optional[EmbeddingConfig] = None,
        *,
        smoothness: float = 2.5,
        seed: int = 0,
        _encoder=None,
    ):
        if smoothness not in HALF_INTEGER_SMOOTHNESS:
            raise ValueError(f"smoothness must be one of {HALF_INTEGER_SMOOTHNESS}")
        self.smoothness = float(smoothness)
        self.seed = int(seed)
        self._encoder = _encoder if _encoder is not None else _CodeEncoder(config or EmbeddingConfig())
        self._params = self._fresh_params()
        self._dataset: Optional[Dataset] = None
        self._posterior = None
        self._fit_count = 0

    @classmethod
    def on_features(cls, d_f: int, *, smoothness: float = 2.5, seed: int = 0) -> "Surrogate":
        return cls(smoothness=smoothness, seed=seed, _encoder=_FeatureEncoder(d_f))

    # -- parameters ----------------------------------------------------

    def _fresh_params(self) -> ParamVector:
        rng = np.random.default_rng(self.seed)
        segments = {}
        emb = self._encoder.init(rng)
        for name in emb.names:
            segments[name] = emb.segment(name)
        d_f = self._encoder.d_f
        segments["gp.log_length_scale"] = np.zeros((1, 1))
        segments["gp.log_signal_variance"] = np.zeros((1, 1))
        segments["gp.log_noise_variance"] = np.full((1, 1), math.log(0.1))
        # Nonzero mean weights break the exact degeneracy between the
        # embedding head bias and the mean: a common shift of all
        # embeddings leaves every pairwise distance unchanged, so with
        # w = 0 that bias would have an identically zero gradient.
        segments["gp.mean_weights"] = 0.1 * rng.standard_normal((d_f, 1))
        segments["gp.mean_bias"] = np.zeros((1, 1))
        return ParamVector.from_segments(segments)

    @property
    def params(self) -> ParamVector:
        return self._params

    @property
    def hyper(self) -> GpHyper:
        seg = self._params.segment
        return GpHyper(
            length_scale=float(np.exp(seg("gp.log_length_scale")[0, 0])),
            signal_variance=float(np.exp(seg("gp.log_signal_variance")[0, 0])),
            noise_variance=float(np.exp(seg("gp.log_noise_variance")[0, 0])),
            smoothness=self.smoothness,
            mean_weights=seg("gp.mean_weights").ravel().copy(),
            mean_bias=float(seg("gp.mean_bias")[0, 0]),
        )

    def set_hyper(
        self,
        *,
        length_scale: Optional[float] = None,
        signal_variance: Optional[float] = None,
        noise_variance: Optional[float] = None,
        mean_weights=None,
        mean_bias: Optional[float] = None,
    ) -> None:
        seg = self._params.segment
        if length_scale is not None:
            seg("gp.log_length_scale")[:] = math.log(length_scale)
        if signal_variance is not None:
            seg("gp.log_signal_variance")[:] = math.log(signal_variance)
        if noise_variance is not None:
            seg("gp.log_noise_variance")[:] = math.log(noise_variance)
        if mean_weights is not None:
            seg("gp.mean_weights")[:] = np.asarray(mean_weights, dtype=float).reshape(-1, 1)
        if mean_bias is not None:
            seg("gp.mean_bias")[:] = mean_bias
        self._posterior = None

    # -- dataset and mean ----------------------------------------------

    def attach(self, data: Dataset) -> None:
        """Bind a dataset for prediction without refitting parameters."""
        self._dataset = data
        self._posterior = None

    @property
    def dataset(self) -> Optional[Dataset]:
        return self._dataset

    def _encode_matrix(self, inputs) -> np.ndarray:
        seg = self._params.segment
        rows = [np.asarray(self._encoder.apply(x, seg), dtype=float).reshape(-1) for x in inputs]
        if not rows:
            return np.zeros((0, self._encoder.d_f))
        return np.vstack(rows)

    def _mean_of(self, z: np.ndarray) -> np.ndarray:
        h = self.hyper
        return z @ h.mean_weights + h.mean_bias

    # -- marginal likelihood -------------------------------------------

    def _lml_graph(self, data: Dataset, jitter: float) -> Graph:
        inputs = data.inputs
        n = len(inputs)
        y = data.targets.reshape(n, 1)
        p_diff = _difference_operator(n)
        jitter_eye = jitter * np.eye(n)
        eye = np.eye(n)
        ones_df = np.ones((self._encoder.d_f, 1))
        const_term = -0.5 * n * math.log(2.0 * math.pi)
        encoder = self._encoder
        smoothness = self.smoothness

        def build(leaves):
            get = leaves.__getitem__
            rows = [encoder.apply(x, get) for x in inputs]
            z = ad.concat(rows, axis=0)
            mean_vec = ad.add(ad.matmul(z, leaves["gp.mean_weights"]), leaves["gp.mean_bias"])
            resid = ad.sub(y, mean_vec)
            diff = ad.matmul(p_diff, z)
            d2 = ad.matmul(ad.mul(diff, diff), ones_df)
            r = ad.sqrt(ad.add(d2, _DISTANCE_EPS))
            k_flat = _matern_graph(
                r, leaves["gp.log_length_scale"], leaves["gp.log_signal_variance"], smoothness
            )
            cols = [ad.slice_rows(k_flat, i * n, (i + 1) * n) for i in range(n)]
            gram = ad.concat(cols, axis=1)
            noisy = ad.add(gram, ad.mul(eye, ad.exp(leaves["gp.log_noise_variance"])))
            ktilde = ad.add(noisy, jitter_eye)
            solved = ad.spd_solve(ktilde, resid)
            quad = ad.sum_all(ad.mul(resid, solved))
            logdet = ad.logdet_spd(ktilde)
            return ad.add(ad.add(ad.mul(quad, -0.5), ad.mul(logdet, -0.5)), const_term)

        return Graph(build)

    def _escalate(self, attempt):
        last = None
        for level, jitter in enumerate(JITTER_LADDER):
            try:
                return attempt(jitter)
            except FactorizationError as err:
                last = err
                if level + 1 < len(JITTER_LADDER):
                    warnings.warn(
                        f"kernel factorization failed at jitter {jitter:g}; "
                        f"escalating to {JITTER_LADDER[level + 1]:g}",
                        RuntimeWarning,
                    )
        raise FactorizationError(
            f"kernel matrix not positive definite at jitter {JITTER_LADDER[-1]:g}"
        ) from last

    def log_marginal_likelihood(self, data: Optional[Dataset] = None) -> float:
        data = data if data is not None else self._dataset
        if data is None or len(data) == 0:
            raise ValueError("marginal likelihood needs a nonempty dataset")
        return self._escalate(
            lambda j: ad.numeric_value(self._lml_graph(data, j), self._params)
        )

    def _value_and_grad(self, theta: ParamVector, data: Dataset):
        return self._escalate(
            lambda j: ad.value_and_gradient(self._lml_graph(data, j), theta)
        )

    def _numeric_lml(self, theta: ParamVector, data: Dataset) -> float:
        return self._escalate(lambda j: ad.numeric_value(self._lml_graph(data, j), theta))

    # -- fitting ---------------------------------------------------------

    def _set_median_length_scale(self, data: Dataset) -> None:
        z = self._encode_matrix(data.inputs)
        d2 = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=-1)
        dists = np.sqrt(d2[np.triu_indices(len(data), k=1)])
        positive = dists[dists > 0]
        median = float(np.median(positive)) if positive.size else 1.0
        self._params.segment("gp.log_length_scale")[:] = math.log(median)

    def _length_scale_collapsed(self, data: Dataset) -> bool:
        """Whether the kernel can no longer resolve the data's geometry.

        A length scale far below the median pairwise embedding distance
        makes the Gram matrix effectively diagonal: predictions revert to
        the mean everywhere off the training set.  This is a degenerate
        local optimum of the marginal likelihood, not a fit of the data.
        """
        z = self._encode_matrix(data.inputs)
        d2 = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=-1)
        dists = np.sqrt(d2[np.triu_indices(len(data), k=1)])
        positive = dists[dists > 0]
        if not positive.size:
            return False
        return self.hyper.length_scale < _COLLAPSE_RATIO * float(np.median(positive))

    def fit(self, data: Dataset, steps: Optional[int] = None, warm: Optional[bool] = None) -> list:
        """Ascend the log marginal likelihood; returns the value history.

        Fresh fits reinitialize parameters (length scale from the median
        pairwise embedding distance); warm fits continue from the current
        parameters.  A warm refit that lands on a collapsed length scale
        is retried fresh and the higher-likelihood result is kept, so a
        degenerate delta-kernel optimum cannot persist across a whole
        refit chain.  The history is nondecreasing by construction of the
        backtracking line search.
        """
        if len(data) < 2:
            raise ValueError("fitting needs at least 2 observations")
        if warm is None:
            warm = self._fit_count > 0
        if steps is None:
            steps = REFIT_STEPS if warm else INITIAL_FIT_STEPS
        if not warm:
            self._params = self._fresh_params()
            self._set_median_length_scale(data)
        self._dataset = data
        self._posterior = None

        history = self._ascend(data, steps)
        if warm and self._length_scale_collapsed(data):
            kept_params, kept_value = self._params, history[-1]
            self._params = self._fresh_params()
            self._set_median_length_scale(data)
            retry = self._ascend(data, INITIAL_FIT_STEPS)
            if retry[-1] > kept_value:
                history = retry
            else:
                self._params = kept_params
        self._fit_count += 1
        self._posterior = None
        return history

    def _ascend(self, data: Dataset, steps: int) -> list:
        try:
            value, grad = self._value_and_grad(self._params, data)
        except NonFiniteError as err:
            raise FitDivergenceError(str(err), self._params, math.nan) from err
        if not (math.isfinite(value) and np.all(np.isfinite(grad.values))):
            raise FitDivergenceError(
                "non-finite marginal likelihood at the starting point", self._params, value
            )

        history = [value]
        step = 0.1
        for _ in range(steps):
            trial_values = None
            trial_value = None
            while step >= _MIN_LINE_SEARCH_STEP:
                candidate = self._params.values + step * grad.values
                try:
                    cand_value = self._numeric_lml(self._params.replace(candidate), data)
                except (NonFiniteError, FactorizationError):
                    cand_value = math.nan
                if math.isfinite(cand_value) and cand_value >= value:
                    trial_values, trial_value = candidate, cand_value
                    break
                step *= 0.5
            if trial_values is None:
                break
            self._params = self._params.replace(trial_values)
            try:
                value, grad = self._value_and_grad(self._params, data)
            except NonFiniteError as err:
                raise FitDivergenceError(str(err), self._params, trial_value) from err
            if not np.all(np.isfinite(grad.values)):
                raise FitDivergenceError(
                    "non-finite gradient during ascent", self._params, value
                )
            history.append(value)
            step = min(step * 2.0, 1.0)

        return history

    # -- prediction ------------------------------------------------------

    def _ensure_posterior(self):
        if self._posterior is not None:
            return self._posterior
        data = self._dataset
        z = self._encode_matrix(data.inputs)
        h = self.hyper
        d2 = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=-1)
        gram = matern(np.sqrt(d2), h)
        ktilde = gram + h.noise_variance * np.eye(len(data))

        def attempt(jitter):
            try:
                return cho_factor(ktilde + jitter * np.eye(len(data)), lower=True)
            except np.linalg.LinAlgError as err:
                raise FactorizationError(str(err)) from err

        factor = self._escalate(attempt)
        resid = data.targets - self._mean_of(z)
        alpha = cho_solve(factor, resid)
        self._posterior = (z, factor, alpha)
        return self._posterior

    def predict(self, x, *, include_noise: bool = False) -> tuple:
        """Posterior mean and variance at one input, standardized units.

        The variance is the latent-function variance, clamped to
        [0, signal_variance]; pass include_noise=True to add the
        observation noise.
        """
        z = np.asarray(self._encoder.apply(x, self._params.segment), dtype=float).ravel()
        h = self.hyper
        extra = h.noise_variance if include_noise else 0.0
        if self._dataset is None or len(self._dataset) == 0:
            mu = float(z @ h.mean_weights + h.mean_bias)
            return mu, h.signal_variance + extra
        z_train, factor, alpha = self._ensure_posterior()
        dist = np.sqrt(np.sum((z_train - z) ** 2, axis=1))
        k_star = matern(dist, h)
        mu = float(z @ h.mean_weights + h.mean_bias + k_star @ alpha)
        var = h.signal_variance - float(k_star @ cho_solve(factor, k_star))
        var = min(max(var, 0.0), h.signal_variance)
        return mu, var + extra

    def predict_raw(self, x, *, include_noise: bool = False) -> tuple:
        """Posterior moments mapped back to the raw (log error rate) scale."""
        mu, var = self.predict(x, include_noise=include_noise)
        data = self._dataset
        if data is None:
            return mu, var
        return (
            float(data.destandardize_mean(mu)),
            float(data.destandardize_variance(var)),
        )

    # -- checkpointing ----------------------------------------------------

    def save(self, path) -> None:
        """Versioned checkpoint: parameters, smoothness, standardization,
        dataset fingerprint, and the encoder description."""
        arrays = {name: self._params.segment(name) for name in self._params.names}
        arrays["__surrogate_format__"] = np.asarray([SURROGATE_FORMAT_VERSION])
        arrays["__segment_order__"] = np.asarray(self._params.names, dtype=np.str_)
        arrays["__smoothness__"] = np.asarray([self.smoothness])
        arrays["__encoder__"] = np.asarray(self._encoder.describe(), dtype=np.str_)
        if self._dataset is not None:
            arrays["__standardization__"] = np.asarray([self._dataset.mean, self._dataset.scale])
            arrays["__fingerprint__"] = np.asarray(dataset_fingerprint(self._dataset), dtype=np.str_)
        else:
            arrays["__standardization__"] = np.asarray([0.0, 1.0])
            arrays["__fingerprint__"] = np.asarray("", dtype=np.str_)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, data: Optional[Dataset] = None) -> "Surrogate":
        """Rebuild from a checkpoint; verifies the fingerprint when a
        dataset is supplied."""
        with np.load(path) as payload:
            version = int(payload["__surrogate_format__"][0])
            if version != SURROGATE_FORMAT_VERSION:
                raise ValueError(f"unsupported surrogate checkpoint version {version}")
            desc = [str(s) for s in payload["__encoder__"]]
            smoothness = float(payload["__smoothness__"][0])
            if desc[0] == "features":
                model = cls.on_features(int(desc[1]), smoothness=smoothness)
            else:
                _, variant, aggregation, dh, d_f, layers = desc
                cfg = EmbeddingConfig(
                    d_hidden=int(dh),
                    d_f=int(d_f),
                    layers_per_view=int(layers),
                    aggregation=aggregation,
                    variant=variant,
                )
                model = cls(cfg, smoothness=smoothness)
            names = [str(n) for n in payload["__segment_order__"]]
            model._params = ParamVector.from_segments({n: payload[n] for n in names})
            stored_fingerprint = str(payload["__fingerprint__"])
        model._fit_count = 1
        if data is not None:
            if stored_fingerprint and dataset_fingerprint(data) != stored_fingerprint:
                raise ValueError("dataset does not match the checkpoint fingerprint")
            model.attach(data)
        return model
