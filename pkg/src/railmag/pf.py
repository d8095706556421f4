"""Particle filter over along-track position and velocity.

Particles follow a constant-velocity model with white-acceleration noise and
are weighted by how well the map field at their position explains the
measured field.  All randomness comes from one ``numpy`` Generator (Philox)
per filter, so a seed fixes the whole trajectory of the ensemble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from railmag.errors import DomainError, FilterCollapse
from railmag.signal import TimeSignal
from railmag.track import TrackMap

MODIFIED = "modified"
GAUSSIAN = "gaussian"
KERNELS = (MODIFIED, GAUSSIAN)


@dataclass(frozen=True)
class PfConfig:
    q: float = 0.53
    kernel: str = MODIFIED
    sigma: float = 10.0
    dt: float = 0.1
    ess_frac: float = 0.5
    var_threshold: float = 50.0**2

    def __post_init__(self):
        if not self.q > 0:
            raise DomainError(f"q must be positive, got {self.q}")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.kernel not in KERNELS:
            raise DomainError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        if self.kernel == GAUSSIAN and not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.ess_frac <= 1:
            raise DomainError(f"ess_frac must lie in (0, 1], got {self.ess_frac}")
        if not self.var_threshold > 0:
            raise DomainError("var_threshold must be positive")


@dataclass(eq=False)
class FilterState:
    """Particle ensemble.  ``rng`` is owned by the state and advanced in place
    by every random operation."""

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    rng_seed: int
    rng: np.random.Generator = field(repr=False, default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        n = self.x.shape[0]
        if n < 1 or self.v.shape != (n,) or self.w.shape != (n,):
            raise DomainError("particle arrays must be non-empty and of equal length")
        if self.rng is None:
            self.rng = make_rng(self.rng_seed)

    @property
    def n_particles(self) -> int:
        return self.x.shape[0]

    def _with(self, x=None, v=None, w=None) -> FilterState:
        return FilterState(
            self.x if x is None else x,
            self.v if v is None else v,
            self.w if w is None else w,
            self.rng_seed,
            self.rng,
        )


@dataclass(frozen=True)
class StateEstimate:
    x_hat: float
    v_hat: float
    var_x: float
    ess: float


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def process_noise_cov(q: float, dt: float) -> np.ndarray:
    """White-acceleration covariance ``q * [[dt^3/3, dt^2/2], [dt^2/2, dt]]``."""
    if not q > 0:
        raise DomainError(f"q must be positive, got {q}")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    return q * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])


def transition_matrix(dt: float) -> np.ndarray:
    return np.array([[1.0, dt], [0.0, 1.0]])


def _noise_factor(q: float, dt: float) -> np.ndarray:
    # closed-form lower Cholesky factor of process_noise_cov
    s = math.sqrt(q * dt)
    return s * np.array([[dt / math.sqrt(3.0), 0.0], [math.sqrt(3.0) / 2.0, 0.5]])


def propagate(state: FilterState, cfg: PfConfig) -> FilterState:
    """Draw ``(x, v)' ~ N(F (x, v), Q)`` for every particle."""
    L = _noise_factor(cfg.q, cfg.dt)
    e = state.rng.standard_normal((2, state.n_particles))
    x = state.x + cfg.dt * state.v + L[0, 0] * e[0]
    v = state.v + L[1, 0] * e[0] + L[1, 1] * e[1]
    return state._with(x=x, v=v)


def kernel_modified(a, b) -> float:
    """Heavy-tailed weight ``1 / (1 + |a - b|)``."""
    return 1.0 / (1.0 + float(np.linalg.norm(np.subtract(a, b))))


def kernel_gaussian(a, b, sigma: float) -> float:
    """Unnormalised Gaussian weight ``exp(-|a - b|^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    d = np.subtract(a, b)
    return math.exp(-float(d @ d) / (2.0 * sigma * sigma))


def log_kernel(dist: np.ndarray, cfg: PfConfig) -> np.ndarray:
    if cfg.kernel == MODIFIED:
        return -np.log1p(dist)
    return -(dist * dist) / (2.0 * cfg.sigma * cfg.sigma)


@nb.njit(cache=True)
def _log_weights(x, w, b, dx, length, z, gaussian, sigma):
    """Unshifted log posterior weights; ``-inf`` off the map or at zero prior.

    Field interpolation matches :func:`railmag.track.lookup_fields`.
    """
    n = x.shape[0]
    last = b.shape[0] - 1
    out = np.empty(n)
    inv2s2 = 0.5 / (sigma * sigma)
    for p in range(n):
        s = x[p]
        if not (s >= 0.0 and s <= length) or w[p] <= 0.0:
            out[p] = -np.inf
            continue
        u = s / dx
        k = np.rint(u)
        if abs(u - k) <= 1e-9:
            i = int(k)
            frac = 0.0
        else:
            i = int(np.floor(u))
            frac = u - i
        i = min(i, last)
        j = min(i + 1, last)
        acc = 0.0
        for a in range(3):
            f = b[i, a] + frac * (b[j, a] - b[i, a])
            d = f - z[a]
            acc += d * d
        if gaussian:
            lk = -acc * inv2s2
        else:
            lk = -np.log1p(np.sqrt(acc))
        out[p] = lk + np.log(w[p])
    return out


def reweight_evidence(state: FilterState, track: TrackMap, z, cfg: PfConfig) -> tuple[FilterState, float]:
    """:func:`reweight` plus ``log sum_i w_i K_i``, the prior-weighted mean
    kernel factor of this measurement."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (3,) or not np.all(np.isfinite(z)):
        raise DomainError("measurement must be a finite 3-vector")
    logw = _log_weights(state.x, state.w, track.b, track.dx, track.length, z, cfg.kernel == GAUSSIAN, cfg.sigma)
    top = logw.max()
    if not np.isfinite(top):
        raise FilterCollapse("all particles left the map or carry zero weight")
    w = np.exp(logw - top)
    total = w.sum()
    return state._with(w=w / total), float(top + math.log(total))


def reweight(state: FilterState, track: TrackMap, z, cfg: PfConfig) -> FilterState:
    """Multiply weights by the kernel of map field against ``z`` and renormalise.

    Factors are formed in the log domain and shifted by their maximum, which
    the normalisation absorbs; this keeps narrow Gaussian kernels from
    underflowing to a spurious collapse.  Particles off the map get zero.

    Raises:
        FilterCollapse: no particle keeps a positive weight.
    """
    return reweight_evidence(state, track, z, cfg)[0]


def effective_sample_size(state: FilterState) -> float:
    return float(1.0 / np.sum(state.w * state.w))


def systematic_indices(w: np.ndarray, u: float) -> np.ndarray:
    """Offspring parent indices for strata ``(u + i) / N``."""
    n = w.shape[0]
    c = np.cumsum(w)
    c[-1] = 1.0
    return np.searchsorted(c, (u + np.arange(n)) / n, side="right")


def resample_systematic(state: FilterState) -> FilterState:
    idx = systematic_indices(state.w, state.rng.random())
    n = state.n_particles
    return state._with(x=state.x[idx], v=state.v[idx], w=np.full(n, 1.0 / n))


def estimate(state: FilterState) -> StateEstimate:
    w = state.w
    x_hat = float(w @ state.x)
    v_hat = float(w @ state.v)
    var_x = float(w @ (state.x - x_hat) ** 2)
    return StateEstimate(x_hat=x_hat, v_hat=v_hat, var_x=max(var_x, 0.0), ess=effective_sample_size(state))


def step_evidence(state: FilterState, track: TrackMap, z, cfg: PfConfig) -> tuple[FilterState, StateEstimate, float]:
    """:func:`step` that also returns the log evidence of ``z``."""
    state = propagate(state, cfg)
    state, logz = reweight_evidence(state, track, z, cfg)
    if effective_sample_size(state) < cfg.ess_frac * state.n_particles:
        state = resample_systematic(state)
    return state, estimate(state), logz


def step(state: FilterState, track: TrackMap, z, cfg: PfConfig) -> tuple[FilterState, StateEstimate]:
    """propagate, reweight, resample when ESS drops below ``ess_frac * N``, estimate."""
    state, est, _ = step_evidence(state, track, z, cfg)
    return state, est


def init_uniform(track: TrackMap, n: int, v_prior: tuple[float, float], seed: int) -> FilterState:
    """Particles spread uniformly over the whole track."""
    if n < 1:
        raise DomainError("need at least one particle")
    lo, hi = v_prior
    if hi < lo:
        raise DomainError(f"invalid velocity prior {v_prior}")
    rng = make_rng(seed)
    x = rng.uniform(0.0, track.length, n)
    v = rng.uniform(lo, hi, n)
    return FilterState(x, v, np.full(n, 1.0 / n), seed, rng)


def init_local(
    x0: float,
    spread: float,
    v0: float,
    v_spread: float,
    n: int,
    seed: int,
    bounds: tuple[float, float] | None = None,
) -> FilterState:
    """Particles uniform in ``[x0 - spread, x0 + spread]`` with Gaussian velocities.

    ``bounds`` (usually ``(0, track.length)``) clamps the positions.
    """
    if n < 1:
        raise DomainError("need at least one particle")
    if spread < 0 or v_spread < 0:
        raise DomainError("spreads must be non-negative")
    rng = make_rng(seed)
    x = x0 + spread * rng.uniform(-1.0, 1.0, n)
    v = v0 + v_spread * rng.standard_normal(n)
    if bounds is not None:
        x = np.clip(x, bounds[0], bounds[1])
    return FilterState(x, v, np.full(n, 1.0 / n), seed, rng)


# --------------------------------------------------------------------------
# measurement epochs


@dataclass(frozen=True)
class Epochs:
    """Update times and the averaged measurement for each."""

    t: np.ndarray
    z: np.ndarray
    v: np.ndarray | None

    def __len__(self) -> int:
        return self.t.shape[0]


def measurement_epochs(sig: TimeSignal, dt: float, t_start: float | None = None) -> Epochs:
    """Average raw samples into one measurement per update.

    Epoch ``k`` sits at ``t_start + k*dt`` and averages every sample in
    ``[t_k - dt/2, t_k + dt/2)``, so the mean refers to the epoch time rather
    than lagging it by half an interval.  Epoch 0 is the filter's initial
    time and is not returned; epochs whose interval runs past the signal are
    dropped.
    """
    if not dt > 0:
        raise DomainError(f"update interval must be positive, got {dt}")
    t = sig.t
    if t_start is None:
        t_start = float(t[0])
    k_max = int(math.floor((t[-1] - t_start) / dt - 0.5 + 1e-9))
    if k_max < 1:
        return Epochs(np.empty(0), np.empty((0, 3)), None if sig.v is None else np.empty(0))
    ks = np.arange(1, k_max + 1)
    tk = t_start + ks * dt
    # sample i belongs to interval floor((t_i - t_start)/dt + 1/2)
    u = (t - t_start) / dt + 0.5
    lab = np.floor(u + 1e-9).astype(np.int64)
    keep = (lab >= 1) & (lab <= k_max)
    cnt = np.bincount(lab[keep] - 1, minlength=k_max).astype(np.float64)
    if np.any(cnt == 0):
        raise DomainError(f"update interval {dt} s is shorter than the sample interval {sig.dt} s")
    z = np.stack([np.bincount(lab[keep] - 1, weights=sig.b[keep, a], minlength=k_max) for a in range(3)], axis=1)
    z /= cnt[:, None]
    v = None
    if sig.v is not None:
        v = np.bincount(lab[keep] - 1, weights=sig.v[keep], minlength=k_max) / cnt
    return Epochs(tk, z, v)


def run_filter(state: FilterState, track: TrackMap, epochs: Epochs, cfg: PfConfig, on_step=None):
    """Step through every epoch; returns the final state and the estimates.

    ``on_step(k, state, estimate)`` is called after each update.
    """
    out = []
    for k in range(len(epochs)):
        state, est = step(state, track, epochs.z[k], cfg)
        out.append(est)
        if on_step is not None:
            on_step(k, state, est)
    return state, out
