"""Noise-prediction interface and analytic stand-ins for a trained network.

A denoiser maps (x_t, t, condition) to a noise estimate eps (and optionally
a per-pixel variance-interpolation coefficient v in [0, 1]).  For Gaussian
mixture priors the minimum-MSE estimator E[x0 | x_t] is available in closed
form, which yields an exact eps-predictor:

    eps_hat = (x_t - sqrt(ab_t) * E[x0 | x_t]) / sqrt(1 - ab_t)
            = -sqrt(1 - ab_t) * grad log p_t(x_t).

These analytic denoisers let the whole sampling stack be verified against
closed-form posteriors; no network training happens here.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .core import DataError, DimensionError, Image, ParameterError
from .diffusion import NoiseSchedule


class ConditionSource(enum.Enum):
    FBP = "fbp"
    RLS = "rls"
    NONE = "none"


@dataclass(frozen=True)
class ConditionInput:
    """Low-fidelity reconstruction used as conditioning, normalized to [0, 1]."""

    image: Image
    source: ConditionSource

    def __post_init__(self):
        if self.source is not ConditionSource.NONE:
            arr = self.image.data
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise DataError("condition image values must lie in [0, 1]")

    @classmethod
    def none(cls, rows: int, cols: int) -> "ConditionInput":
        return cls(Image(rows, cols, np.zeros((rows, cols))), ConditionSource.NONE)


@dataclass(frozen=True)
class DenoiserOutput:
    """eps prediction plus optional variance-interpolation coefficient."""

    eps: Image
    v: Optional[Image] = None

    def __post_init__(self):
        if self.v is not None:
            if self.v.shape != self.eps.shape:
                raise DimensionError("v head shape differs from eps shape")
            arr = self.v.data
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise DataError("variance coefficient v must lie in [0, 1]")


@runtime_checkable
class Denoiser(Protocol):
    """Pure function of (x_t, t, cond); must accept cond.source == NONE."""

    def denoise(self, x_t: Image, t: int, cond: ConditionInput) -> DenoiserOutput:
        ...


def denoise(model: Denoiser, x_t: Image, t: int, cond: ConditionInput) -> DenoiserOutput:
    """Validated call through the denoiser interface."""
    if cond.source is not ConditionSource.NONE and cond.image.shape != x_t.shape:
        raise DimensionError(
            f"condition {cond.image.shape} does not match sample {x_t.shape}"
        )
    out = model.denoise(x_t, t, cond)
    if out.eps.shape != x_t.shape:
        raise DimensionError(f"denoiser returned eps of shape {out.eps.shape}")
    return out


def guided_epsilon(
    cond_out: DenoiserOutput, uncond_out: DenoiserOutput, lam: float
) -> DenoiserOutput:
    """Blend conditional and unconditional predictions:
    eps = lam * eps_cond + (1 - lam) * eps_uncond, v taken from the
    conditional branch.  lam = 1 returns the conditional prediction exactly
    (guidance off); lam = 0 the unconditional one.
    """
    if cond_out.eps.shape != uncond_out.eps.shape:
        raise DimensionError("guidance branches have mismatched shapes")
    if lam == 1.0:
        return cond_out
    if lam == 0.0:
        return DenoiserOutput(uncond_out.eps, cond_out.v)
    mixed = lam * cond_out.eps.as_f64() + (1.0 - lam) * uncond_out.eps.as_f64()
    return DenoiserOutput(Image(cond_out.eps.rows, cond_out.eps.cols, mixed), cond_out.v)


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """Isotropic Gaussian mixture over flattened images.

    weights are normalized at construction; each component is
    N(mean_i, variance_i * I) on R^dim.
    """

    dim: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel().copy()
        mu = np.asarray(self.means, dtype=np.float64).reshape(w.size, -1).copy()
        s2 = np.asarray(self.variances, dtype=np.float64).ravel().copy()
        if w.size < 1:
            raise ParameterError("mixture needs at least one component")
        if s2.size != w.size:
            raise ParameterError("one variance per component is required")
        if mu.shape[1] != self.dim:
            raise DimensionError(
                f"component means have dim {mu.shape[1]}, expected {self.dim}"
            )
        if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
            raise ParameterError("component weights must be positive and finite")
        if np.any(s2 <= 0.0) or not np.all(np.isfinite(s2)):
            raise ParameterError("component variances must be positive and finite")
        if not np.all(np.isfinite(mu)):
            raise ParameterError("component means must be finite")
        w /= w.sum()
        for arr in (w, mu, s2):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", s2)

    @property
    def n_components(self) -> int:
        return self.weights.size


def save_gmm_prior(path, prior: GmmPrior) -> None:
    """One line per component: weight, dim mean entries, variance."""
    with open(path, "w", encoding="ascii") as fh:
        for w, mu, s2 in zip(prior.weights, prior.means, prior.variances):
            fields = [f"{w:.17g}"] + [f"{m:.17g}" for m in mu] + [f"{s2:.17g}"]
            fh.write(" ".join(fields) + "\n")


def load_gmm_prior(path) -> GmmPrior:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(tok) for tok in line.split()])
    if not rows:
        raise ParameterError(f"no mixture components found in {path}")
    width = len(rows[0])
    if width < 3 or any(len(r) != width for r in rows):
        raise ParameterError("every component line needs weight, means, variance")
    arr = np.asarray(rows, dtype=np.float64)
    return GmmPrior(width - 2, arr[:, 0], arr[:, 1:-1], arr[:, -1])


def _diffused_components(prior: GmmPrior, t: int, sched: NoiseSchedule):
    """Marginal of x_t per component: N(sqrt(ab)*mu_i, (ab*s2_i + 1 - ab) I)."""
    ab = sched.alpha_bar_at(t)
    return ab, np.sqrt(ab) * prior.means, ab * prior.variances + (1.0 - ab)


def gmm_log_marginal(prior: GmmPrior, x_t: np.ndarray, t: int, sched: NoiseSchedule) -> float:
    """log p_t(x_t) of the diffused mixture (log-sum-exp stabilized)."""
    x = np.asarray(x_t, dtype=np.float64).ravel()
    if x.size != prior.dim:
        raise DimensionError(f"x has dim {x.size}, prior has dim {prior.dim}")
    _, centers, m2 = _diffused_components(prior, t, sched)
    sq = ((x[None, :] - centers) ** 2).sum(axis=1)
    log_comp = -0.5 * (prior.dim * np.log(2.0 * np.pi * m2) + sq / m2)
    return float(logsumexp(log_comp + np.log(prior.weights)))


def gmm_posterior_mean(
    prior: GmmPrior, x_t: np.ndarray, t: int, sched: NoiseSchedule
) -> np.ndarray:
    """Exact E[x0 | x_t] under the mixture prior.

    Component responsibilities come from the diffused marginals; each
    component contributes its conjugate-Gaussian posterior mean
    (sqrt(ab)*s2*x_t + (1-ab)*mu) / (ab*s2 + 1 - ab).
    """
    x = np.asarray(x_t, dtype=np.float64).ravel()
    if x.size != prior.dim:
        raise DimensionError(f"x has dim {x.size}, prior has dim {prior.dim}")
    ab, centers, m2 = _diffused_components(prior, t, sched)
    sq = ((x[None, :] - centers) ** 2).sum(axis=1)
    log_resp = np.log(prior.weights) - 0.5 * (prior.dim * np.log(2.0 * np.pi * m2) + sq / m2)
    log_resp -= logsumexp(log_resp)
    resp = np.exp(log_resp)
    sqrt_ab = np.sqrt(ab)
    comp_means = (
        sqrt_ab * prior.variances[:, None] * x[None, :] + (1.0 - ab) * prior.means
    ) / m2[:, None]
    return resp @ comp_means


def _eps_from_posterior_mean(x: np.ndarray, post_mean: np.ndarray, ab: float) -> np.ndarray:
    return (x - np.sqrt(ab) * post_mean) / np.sqrt(1.0 - ab)


class GmmDenoiser:
    """Exact eps-predictor for a Gaussian-mixture data distribution.

    Returns v = 0 everywhere (the lower-bound reverse variance); the exact
    reverse variance of an analytic model is distribution dependent, and the
    lower bound is the conservative fallback.
    """

    def __init__(self, prior: GmmPrior, sched: NoiseSchedule):
        self.prior = prior
        self.sched = sched

    def denoise(self, x_t: Image, t: int, cond: ConditionInput) -> DenoiserOutput:
        x = x_t.as_f64().ravel()
        ab = self.sched.alpha_bar_at(t)
        eps = _eps_from_posterior_mean(
            x, gmm_posterior_mean(self.prior, x, t, self.sched), ab
        )
        shape = x_t.shape
        return DenoiserOutput(
            Image(*shape, eps.reshape(shape)), Image(*shape, np.zeros(shape))
        )


def gmm_denoiser(prior: GmmPrior, sched: NoiseSchedule) -> GmmDenoiser:
    return GmmDenoiser(prior, sched)


@dataclass(frozen=True, eq=False)
class GaussianMixtureFull:
    """Mixture with full covariances; used for measurement posteriors."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray


class ConditionalGmmDenoiser:
    """Exact eps-predictor for the posterior of a GMM prior under a linear
    Gaussian measurement y = A x0 + noise.

    The posterior of a mixture under such a likelihood is again a mixture
    (reweighted components, updated means, full covariances), so the exact
    conditional MMSE denoiser is available in closed form.  Used as the
    conditional branch in guidance and sampling tests; `posterior` exposes
    the updated mixture for oracle cross-checks.
    """

    def __init__(
        self,
        prior: GmmPrior,
        matrix: np.ndarray,
        y: np.ndarray,
        noise_var: float,
        sched: NoiseSchedule,
    ):
        matrix = np.asarray(matrix, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if matrix.ndim != 2 or matrix.shape[1] != prior.dim:
            raise DimensionError(
                f"measurement matrix {matrix.shape} does not act on dim {prior.dim}"
            )
        if y.size != matrix.shape[0]:
            raise DimensionError(
                f"measurement vector has dim {y.size}, matrix has {matrix.shape[0]} rows"
            )
        if not (noise_var > 0.0 and np.isfinite(noise_var)):
            raise ParameterError("noise_var must be positive and finite")
        self.sched = sched
        dim = prior.dim
        gram = matrix.T @ matrix
        at_y = matrix.T @ y

        k = prior.n_components
        means = np.empty((k, dim))
        covs = np.empty((k, dim, dim))
        log_w = np.empty(k)
        eye = np.eye(dim)
        for i in range(k):
            s2 = prior.variances[i]
            prec = eye / s2 + gram / noise_var
            cov = np.linalg.inv(prec)
            cov = 0.5 * (cov + cov.T)
            means[i] = cov @ (prior.means[i] / s2 + at_y / noise_var)
            covs[i] = cov
            # evidence N(y; A mu_i, s2 A A^T + noise_var I)
            ev_cov = s2 * (matrix @ matrix.T) + noise_var * np.eye(y.size)
            diff = y - matrix @ prior.means[i]
            sign, logdet = np.linalg.slogdet(ev_cov)
            if sign <= 0:
                raise ParameterError("evidence covariance is not positive definite")
            log_w[i] = (
                np.log(prior.weights[i])
                - 0.5 * (y.size * np.log(2.0 * np.pi) + logdet)
                - 0.5 * float(diff @ np.linalg.solve(ev_cov, diff))
            )
        log_w -= logsumexp(log_w)
        self.posterior = GaussianMixtureFull(np.exp(log_w), means, covs)
        # eigendecompositions make every timestep's marginals cheap
        self._eigvals = np.empty((k, dim))
        self._eigvecs = np.empty((k, dim, dim))
        for i in range(k):
            vals, vecs = np.linalg.eigh(covs[i])
            self._eigvals[i] = np.maximum(vals, 0.0)
            self._eigvecs[i] = vecs

    def posterior_mean_x0(self, x_t_flat: np.ndarray, t: int) -> np.ndarray:
        """E[x0 | x_t, y] for the full-covariance posterior mixture."""
        x = np.asarray(x_t_flat, dtype=np.float64).ravel()
        post = self.posterior
        ab = self.sched.alpha_bar_at(t)
        sqrt_ab = np.sqrt(ab)
        dim = x.size
        k = post.weights.size
        log_resp = np.empty(k)
        comp_means = np.empty((k, dim))
        for i in range(k):
            q = self._eigvecs[i]
            lam = self._eigvals[i]
            marg = ab * lam + (1.0 - ab)
            diff = x - sqrt_ab * post.means[i]
            proj = q.T @ diff
            log_resp[i] = np.log(post.weights[i]) - 0.5 * (
                dim * np.log(2.0 * np.pi) + np.log(marg).sum() + ((proj**2) / marg).sum()
            )
            gain = lam / marg
            comp_means[i] = post.means[i] + sqrt_ab * (q @ (gain * proj))
        log_resp -= logsumexp(log_resp)
        return np.exp(log_resp) @ comp_means

    def denoise(self, x_t: Image, t: int, cond: ConditionInput) -> DenoiserOutput:
        x = x_t.as_f64().ravel()
        ab = self.sched.alpha_bar_at(t)
        eps = _eps_from_posterior_mean(x, self.posterior_mean_x0(x, t), ab)
        shape = x_t.shape
        return DenoiserOutput(
            Image(*shape, eps.reshape(shape)), Image(*shape, np.zeros(shape))
        )


def conditional_gmm_denoiser(
    prior: GmmPrior,
    matrix: np.ndarray,
    y: np.ndarray,
    noise_var: float,
    sched: NoiseSchedule,
) -> ConditionalGmmDenoiser:
    return ConditionalGmmDenoiser(prior, matrix, y, noise_var, sched)


class TableDenoiser:
    """Piecewise-linear elementwise response loaded from a file.

    Each line of the file holds an (input, output) knot pair; the prediction
    applies linear interpolation through the sorted knots to every pixel,
    independent of t and the condition.  Deterministic stand-in for a
    trained model in integration tests.
    """

    def __init__(self, knots_x, knots_y):
        x = np.asarray(knots_x, dtype=np.float64).ravel()
        y = np.asarray(knots_y, dtype=np.float64).ravel()
        if x.size != y.size or x.size < 2:
            raise ParameterError("need at least two (x, y) knots")
        if np.any(np.diff(x) <= 0.0):
            raise ParameterError("knot inputs must be strictly increasing")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ParameterError("knots must be finite")
        self.knots_x = x
        self.knots_y = y

    @classmethod
    def from_file(cls, path) -> "TableDenoiser":
        pairs = []
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                a, b = line.split()
                pairs.append((float(a), float(b)))
        if len(pairs) < 2:
            raise ParameterError(f"no usable knots in {path}")
        arr = np.asarray(pairs)
        return cls(arr[:, 0], arr[:, 1])

    def denoise(self, x_t: Image, t: int, cond: ConditionInput) -> DenoiserOutput:
        eps = np.interp(x_t.as_f64(), self.knots_x, self.knots_y)
        return DenoiserOutput(Image(x_t.rows, x_t.cols, eps))
