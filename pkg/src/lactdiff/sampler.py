"""Conditional reverse-diffusion reconstruction with measurement consistency.

One chain starts from white noise and walks the shortened reverse schedule;
every step takes a (optionally guidance-blended) noise prediction, applies
the stochastic reverse transition, and, when configured, pulls the iterate
toward the measurements with the proximal consistency map.  Averaging many
chains estimates the posterior mean; the per-pixel spread is an uncertainty
proxy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import (
    DataError,
    DimensionError,
    Image,
    NumericalError,
    ParameterError,
    SeededRng,
    Sinogram,
)
from .denoiser import ConditionInput, ConditionSource, Denoiser, denoise, guided_epsilon
from .diffusion import NoiseSchedule, interpolate_variance, respace, reverse_step
from .solvers import ProxConfig, prox_consistency, rls_reconstruct
from .tomography import FilterKind, Geometry, TomoOperator, fbp_reconstruct


@dataclass(frozen=True)
class SamplerConfig:
    """Chain length, guidance weight, consistency settings, and seeding.

    prox is None to disable the data-consistency step entirely; prox_skip
    leaves the first few (largest-noise) steps unconstrained.  Guidance
    weights other than 1 require an unconditional model.
    """

    steps: int
    guidance: float = 1.0
    prox: Optional[ProxConfig] = None
    prox_skip: int = 0
    seed: int = 0
    n_samples: int = 8

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError("steps must be >= 1")
        if self.n_samples < 1:
            raise ParameterError("n_samples must be >= 1")
        if self.prox_skip < 0:
            raise ParameterError("prox_skip must be >= 0")
        if not np.isfinite(self.guidance):
            raise ParameterError("guidance weight must be finite")


@dataclass
class ChainTrace:
    """Measurement residuals recorded while a chain runs.

    residuals holds ||A x - y|| after every completed step; prox_residuals
    holds (before, after) pairs around each consistency application.
    """

    residuals: List[float] = field(default_factory=list)
    prox_residuals: List[Tuple[float, float]] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Samples from one configuration plus enough provenance to rerun it."""

    samples: Tuple[Image, ...]
    config: SamplerConfig
    context_digest: str = ""

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise ParameterError("sample set must not be empty")
        shape = samples[0].shape
        if any(s.shape != shape for s in samples):
            raise DimensionError("samples in a set must share one shape")
        object.__setattr__(self, "samples", samples)


def build_condition(sino: Sinogram, geom: Geometry, method: str) -> ConditionInput:
    """Low-fidelity reconstruction rescaled to [0, 1] for conditioning.

    Constant reconstructions map to all-zeros.
    """
    if method == "fbp":
        recon = fbp_reconstruct(sino, geom, FilterKind.RAM_LAK)
        source = ConditionSource.FBP
    elif method == "rls":
        recon = rls_reconstruct(sino, geom)
        source = ConditionSource.RLS
    else:
        raise ParameterError(f"condition method must be 'fbp' or 'rls', got {method!r}")
    arr = recon.as_f64()
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        arr = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    else:
        arr = np.zeros_like(arr)
    return ConditionInput(Image(geom.image_rows, geom.image_cols, arr), source)


def _zeros_like(img: Image) -> Image:
    return Image(img.rows, img.cols, np.zeros(img.shape))


def sample_posterior(
    model: Denoiser,
    measurements: Optional[np.ndarray],
    operator,
    shape: Tuple[int, int],
    cond: ConditionInput,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    uncond_model: Optional[Denoiser] = None,
    seed: Optional[int] = None,
    trace: Optional[ChainTrace] = None,
) -> Image:
    """Run one reverse chain and return the reconstructed image.

    The chain draws its start from N(0, I), then for each shortened step:
    noise prediction (guidance-blended when the weight is not 1), variance
    from the v head or the schedule lower bound, the stochastic reverse
    update (no noise on the final step), and the consistency prox when
    enabled.  The denoiser receives original-schedule timestep indices.
    Everything is a pure function of (seed, config, inputs).
    """
    if cfg.guidance != 1.0 and uncond_model is None:
        raise ParameterError("guidance weight != 1 requires an unconditional model")
    needs_operator = cfg.prox is not None or trace is not None
    if needs_operator and (operator is None or measurements is None):
        raise ParameterError("consistency and tracing need measurements and an operator")
    y = None
    if measurements is not None:
        y = np.asarray(measurements, dtype=np.float64).ravel()
        if operator is not None and y.size != operator.shape[0]:
            raise DimensionError(
                f"measurements have dim {y.size}, operator expects {operator.shape[0]}"
            )
    rows, cols = shape

    if cfg.steps > sched.T:
        raise ParameterError(f"steps={cfg.steps} exceeds schedule length {sched.T}")
    if cfg.steps == sched.T:
        chain_sched = sched
        indices = np.arange(1, sched.T + 1)
    else:
        tmap = respace(sched, cfg.steps)
        chain_sched = tmap.schedule
        indices = tmap.indices
    K = chain_sched.T

    rng = SeededRng(cfg.seed if seed is None else seed)
    x = rng.normal_image(rows, cols)
    cond_none = ConditionInput.none(rows, cols)

    def residual(img: Image) -> float:
        return float(np.linalg.norm(operator.forward(img.as_f64().ravel()) - y))

    for k in range(K, 0, -1):
        step_index = K - k  # 0 for the first (noisiest) step
        t_orig = int(indices[k - 1])
        try:
            out = denoise(model, x, t_orig, cond)
            if cfg.guidance != 1.0:
                out_u = denoise(uncond_model, x, t_orig, cond_none)
                out = guided_epsilon(out, out_u, cfg.guidance)
            if k == 1:
                sigma2 = _zeros_like(x)
                z = _zeros_like(x)
            else:
                if out.v is not None:
                    sigma2 = interpolate_variance(out.v, k, chain_sched)
                else:
                    sigma2 = Image(
                        rows, cols, np.full(shape, chain_sched.beta_tilde_at(k))
                    )
                z = rng.normal_image(rows, cols)
            x = reverse_step(x, out.eps, sigma2, k, chain_sched, z)
            if cfg.prox is not None and step_index >= cfg.prox_skip:
                before = residual(x) if trace is not None else None
                z_flat, _report = prox_consistency(
                    x.as_f64().ravel(),
                    y,
                    operator,
                    cfg.prox,
                    gamma=cfg.prox.gamma_for_step(k),
                )
                x = Image(rows, cols, z_flat.reshape(shape))
                if trace is not None:
                    trace.prox_residuals.append((before, residual(x)))
        except DataError as exc:
            raise NumericalError(
                f"chain state became non-finite at step {k} (t={t_orig}): {exc}"
            ) from exc
        if trace is not None:
            trace.residuals.append(residual(x))
    return x


def sample_posterior_ct(
    model: Denoiser,
    sino: Sinogram,
    geom: Geometry,
    cond: ConditionInput,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    uncond_model: Optional[Denoiser] = None,
    seed: Optional[int] = None,
    trace: Optional[ChainTrace] = None,
) -> Image:
    """Tomographic wrapper around sample_posterior."""
    geom.matches_sinogram(sino)
    return sample_posterior(
        model,
        sino.as_f64().ravel(),
        TomoOperator(geom),
        (geom.image_rows, geom.image_cols),
        cond,
        sched,
        cfg,
        uncond_model=uncond_model,
        seed=seed,
        trace=trace,
    )


def draw_samples(
    model: Denoiser,
    measurements: Optional[np.ndarray],
    operator,
    shape: Tuple[int, int],
    cond: ConditionInput,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    uncond_model: Optional[Denoiser] = None,
    context_digest: str = "",
    traces: Optional[List[ChainTrace]] = None,
) -> SampleSet:
    """cfg.n_samples independent chains; chain i uses seed cfg.seed + i.

    Chains are independent and could run concurrently; results do not depend
    on execution order.
    """
    samples = []
    for i in range(cfg.n_samples):
        trace = None
        if traces is not None:
            trace = ChainTrace()
            traces.append(trace)
        samples.append(
            sample_posterior(
                model,
                measurements,
                operator,
                shape,
                cond,
                sched,
                cfg,
                uncond_model=uncond_model,
                seed=(cfg.seed + i) % (1 << 64),
                trace=trace,
            )
        )
    return SampleSet(tuple(samples), cfg, context_digest)


def sample_average(sample_set: SampleSet) -> Image:
    """Elementwise mean over the set; estimates the posterior mean."""
    stack = np.stack([s.as_f64() for s in sample_set.samples])
    first = sample_set.samples[0]
    return Image(first.rows, first.cols, stack.mean(axis=0))


def uncertainty_map(sample_set: SampleSet) -> Image:
    """Per-pixel sample standard deviation (unbiased, divisor n-1)."""
    if len(sample_set.samples) < 2:
        raise ParameterError("uncertainty map needs at least 2 samples")
    stack = np.stack([s.as_f64() for s in sample_set.samples])
    first = sample_set.samples[0]
    return Image(first.rows, first.cols, stack.std(axis=0, ddof=1))
