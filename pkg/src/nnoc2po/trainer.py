"""Unfolded C2PO: forward pass, reverse-mode gradients and Adam training.

Everything here runs on the real embedding (``linalg.embed_*``), with a
leading sample axis so a whole training set is processed in one pass.  The
graph per sample is::

    x_0 = H^H s
    z_t = x_{t-1} - tau_t * M x_{t-1}          (M = real embedding of A^H A)
    x_t = clip(rho_t * z_t, xi)
    xq  = Q(x_tmax)                            (1-bit quantizer)
    w   = H xq,   d = s^H w,   beta = ||s||^2 / d,   s_hat = beta * w

and the cost is ``mean_k ||s_k - s_hat_k||^2``.  In the reverse pass the
quantizer is replaced by ``clip(., xi)`` (straight-through estimator), and
the clip subgradient is 1 on the closed interval ``[-xi, xi]``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .channel import ChannelSample, Dataset, draw_sample, ChannelModelConfig
from .linalg import embed_matrix, embed_vector, lift_vector
from .precoders import DEFAULT_RHO, DEFAULT_TAU, DegeneratePrecodingError, PrecoderSchedule, xi_for
from .rng import stream

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    """Training produced a non-finite cost or a non-positive ``rho``."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class RealBatch:
    """Real-embedded, stacked training inputs."""

    s: np.ndarray       # (K, 2U)
    H: np.ndarray       # (K, 2U, 2B)
    x0: np.ndarray      # (K, 2B)
    M: np.ndarray       # (K, 2B, 2B)
    s_norm2: np.ndarray  # (K,)

    @classmethod
    def from_samples(cls, samples) -> "RealBatch":
        if isinstance(samples, Dataset):
            samples = samples.samples
        if isinstance(samples, ChannelSample):
            samples = [samples]
        s = np.stack([smp.s for smp in samples])
        return cls(
            s=embed_vector(s),
            H=embed_matrix(np.stack([smp.H for smp in samples])),
            x0=embed_vector(np.stack([smp.x0 for smp in samples])),
            M=embed_matrix(np.stack([smp.AHA for smp in samples])),
            s_norm2=np.sum(np.abs(s) ** 2, axis=-1),
        )

    @property
    def K(self) -> int:
        return self.s.shape[0]

    @property
    def U(self) -> int:
        return self.s.shape[1] // 2

    @property
    def B(self) -> int:
        return self.x0.shape[1] // 2


@dataclass
class GradientTape:
    """Forward intermediates needed by :func:`backward`."""

    x_prev: list[np.ndarray] = field(default_factory=list)  # x_{t-1}
    Mx_prev: list[np.ndarray] = field(default_factory=list)  # M x_{t-1}
    z: list[np.ndarray] = field(default_factory=list)
    pre_clip: list[np.ndarray] = field(default_factory=list)  # rho_t * z_t
    clip_mask: list[np.ndarray] = field(default_factory=list)  # |rho_t z_t| <= xi
    x_final: np.ndarray | None = None
    xq: np.ndarray | None = None
    ste_mask: np.ndarray | None = None
    w: np.ndarray | None = None
    d: tuple[np.ndarray, np.ndarray] | None = None  # (Re, Im) of s^H w
    beta: tuple[np.ndarray, np.ndarray] | None = None
    s_hat: np.ndarray | None = None
    s: np.ndarray | None = None
    s_norm2: np.ndarray | None = None
    H: np.ndarray | None = None
    M: np.ndarray | None = None

    @property
    def t_max(self) -> int:
        return len(self.z)


def _mv(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (M @ x[..., None])[..., 0]


def _as_batch(data) -> tuple[RealBatch, bool]:
    if isinstance(data, RealBatch):
        return data, False
    if isinstance(data, ChannelSample):
        return RealBatch.from_samples([data]), True
    return RealBatch.from_samples(data), False


def forward(data, schedule: PrecoderSchedule, quantizer: str = "sign"):
    """Run the unfolded graph.

    Parameters
    ----------
    data : ChannelSample, list of ChannelSample, Dataset or RealBatch
    schedule : PrecoderSchedule
    quantizer : {"sign", "clip"}
        ``"sign"`` is the 1-bit quantizer used at inference and training time.
        ``"clip"`` replaces it with ``clip(., xi)``, the smooth surrogate whose
        exact gradient the reverse pass computes; used for gradient checking.

    Returns
    -------
    s_hat : ndarray
        Complex estimates, ``(U,)`` for a single sample else ``(K, U)``.
    tape : GradientTape
    """
    batch, single = _as_batch(data)
    schedule.check_antennas(batch.B)
    xi = schedule.xi
    tape = GradientTape(s=batch.s, s_norm2=batch.s_norm2, H=batch.H, M=batch.M)

    x = batch.x0
    for tau, rho in zip(schedule.tau, schedule.rho):
        Mx = _mv(batch.M, x)
        z = x - tau * Mx
        v = rho * z
        tape.x_prev.append(x)
        tape.Mx_prev.append(Mx)
        tape.z.append(z)
        tape.pre_clip.append(v)
        tape.clip_mask.append(np.abs(v) <= xi)
        x = np.clip(v, -xi, xi)

    tape.x_final = x
    tape.ste_mask = np.abs(x) <= xi
    if quantizer == "sign":
        xq = xi * np.where(x >= 0, 1.0, -1.0)
    elif quantizer == "clip":
        xq = np.clip(x, -xi, xi)
    else:
        raise ValueError(f"unknown quantizer {quantizer!r}")
    tape.xq = xq

    U = batch.U
    w = _mv(batch.H, xq)
    w_re, w_im = w[:, :U], w[:, U:]
    s_re, s_im = batch.s[:, :U], batch.s[:, U:]
    d_re = np.sum(s_re * w_re + s_im * w_im, axis=-1)
    d_im = np.sum(s_re * w_im - s_im * w_re, axis=-1)
    m = d_re**2 + d_im**2
    if np.any(m == 0):
        raise DegeneratePrecodingError("s^H H xq is zero for at least one sample")
    b_re = batch.s_norm2 * d_re / m
    b_im = -batch.s_norm2 * d_im / m
    sh_re = b_re[:, None] * w_re - b_im[:, None] * w_im
    sh_im = b_re[:, None] * w_im + b_im[:, None] * w_re

    tape.w = w
    tape.d = (d_re, d_im)
    tape.beta = (b_re, b_im)
    tape.s_hat = np.concatenate([sh_re, sh_im], axis=-1)
    s_hat = lift_vector(tape.s_hat, U)
    return (s_hat[0] if single else s_hat), tape


def cost(s, s_hat) -> float:
    """Mean over samples of ``||s_k - s_hat_k||^2`` (not divided by ``U``)."""
    s = np.atleast_2d(np.asarray(s))
    s_hat = np.atleast_2d(np.asarray(s_hat))
    if s.shape != s_hat.shape:
        raise ValueError(f"shape mismatch {s.shape} vs {s_hat.shape}")
    return float(np.mean(np.sum(np.abs(s - s_hat) ** 2, axis=-1)))


def tape_cost(tape: GradientTape) -> float:
    return float(np.mean(np.sum((tape.s_hat - tape.s) ** 2, axis=-1)))


def cost_gradient(tape: GradientTape) -> np.ndarray:
    """Gradient of the mean cost with respect to the real-embedded ``s_hat``."""
    K = tape.s.shape[0]
    return 2.0 * (tape.s_hat - tape.s) / K


def backward(tape: GradientTape, schedule: PrecoderSchedule, ds_bar: np.ndarray | None = None):
    """Reverse pass; returns ``{"tau": dC/dtau_t, "rho": dC/drho_t}`` arrays.

    ``ds_bar`` is the upstream gradient with respect to the real-embedded
    ``s_hat`` (shape ``(K, 2U)``); defaults to that of the mean cost.
    """
    if ds_bar is None:
        ds_bar = cost_gradient(tape)
    if ds_bar.shape != tape.s_hat.shape:
        raise ValueError(f"upstream gradient has shape {ds_bar.shape}, expected {tape.s_hat.shape}")
    if tape.t_max != schedule.t_max:
        raise ValueError(f"tape has {tape.t_max} iterations, schedule has {schedule.t_max}")

    U = tape.s.shape[1] // 2
    g_re, g_im = ds_bar[:, :U], ds_bar[:, U:]
    w_re, w_im = tape.w[:, :U], tape.w[:, U:]
    s_re, s_im = tape.s[:, :U], tape.s[:, U:]
    b_re, b_im = tape.beta
    d_re, d_im = tape.d
    n = tape.s_norm2

    # s_hat = beta * w
    gb_re = np.sum(g_re * w_re + g_im * w_im, axis=-1)
    gb_im = np.sum(-g_re * w_im + g_im * w_re, axis=-1)
    gw_re = g_re * b_re[:, None] + g_im * b_im[:, None]
    gw_im = -g_re * b_im[:, None] + g_im * b_re[:, None]

    # beta = n * conj(d) / |d|^2
    m2 = (d_re**2 + d_im**2) ** 2
    dbre_ddre = n * (d_im**2 - d_re**2) / m2
    dbre_ddim = -2.0 * n * d_re * d_im / m2
    dbim_ddre = 2.0 * n * d_re * d_im / m2
    dbim_ddim = n * (d_im**2 - d_re**2) / m2
    gd_re = gb_re * dbre_ddre + gb_im * dbim_ddre
    gd_im = gb_re * dbre_ddim + gb_im * dbim_ddim

    # d = s^H w
    gw_re = gw_re + gd_re[:, None] * s_re - gd_im[:, None] * s_im
    gw_im = gw_im + gd_re[:, None] * s_im + gd_im[:, None] * s_re

    # w = H xq, then straight-through: dQ/dx -> clip mask
    gw = np.concatenate([gw_re, gw_im], axis=-1)
    gx = (np.swapaxes(tape.H, -1, -2) @ gw[..., None])[..., 0]
    gx = gx * tape.ste_mask

    g_tau = np.zeros(schedule.t_max)
    g_rho = np.zeros(schedule.t_max)
    for t in reversed(range(schedule.t_max)):
        gv = gx * tape.clip_mask[t]
        g_rho[t] = np.sum(gv * tape.z[t])
        gz = schedule.rho[t] * gv
        g_tau[t] = -np.sum(gz * tape.Mx_prev[t])
        if t > 0:
            # M is symmetric (embedding of a Hermitian matrix)
            gx = gz - schedule.tau[t] * _mv(tape.M, gz)
    return {"tau": g_tau, "rho": g_rho}


# --- optimizer -------------------------------------------------------------


@dataclass
class TrainingConfig:
    t_max: int = 4
    epochs: int | None = None
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    init_tau: float = DEFAULT_TAU
    init_rho: float = DEFAULT_RHO
    power: float = 1.0
    tied: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs is None:
            self.epochs = 100 * self.t_max
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1 for training")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, config: TrainingConfig):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    b1, b2 = config.adam_beta1, config.adam_beta2
    step = state.step + 1
    m = b1 * state.m + (1 - b1) * grads
    v = b2 * state.v + (1 - b2) * grads**2
    m_hat = m / (1 - b1**step)
    v_hat = v / (1 - b2**step)
    new = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return new, AdamState(m, v, step)


@dataclass
class LossReport:
    costs: list[float]
    schedule: PrecoderSchedule
    final_cost: float

    @property
    def initial_cost(self) -> float:
        return self.costs[0] if self.costs else self.final_cost

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "cost"])
            for epoch, c in enumerate(self.costs):
                writer.writerow([epoch, repr(c)])


def _schedule_from(params: np.ndarray, config: TrainingConfig, B: int) -> PrecoderSchedule:
    T = config.t_max
    if config.tied:
        tau, rho = [params[0]] * T, [params[1]] * T
    else:
        tau, rho = list(params[:T]), list(params[T:])
    return PrecoderSchedule(T, tau, rho, xi_for(config.power, B), config.power)


def objective_and_gradient(batch: RealBatch, params: np.ndarray, config: TrainingConfig):
    """Cost and its gradient with respect to the flat parameter vector.

    The vector is ``[tau_1..tau_T, rho_1..rho_T]``, or ``[tau, rho]`` when
    ``config.tied``; tied gradients sum the per-iteration ones.
    """
    schedule = _schedule_from(params, config, batch.B)
    _, tape = forward(batch, schedule)
    g = backward(tape, schedule)
    if config.tied:
        grads = np.array([g["tau"].sum(), g["rho"].sum()])
    else:
        grads = np.concatenate([g["tau"], g["rho"]])
    return tape_cost(tape), grads


def initial_parameters(config: TrainingConfig) -> np.ndarray:
    if config.tied:
        return np.array([config.init_tau, config.init_rho], dtype=np.float64)
    T = config.t_max
    return np.concatenate([np.full(T, config.init_tau), np.full(T, config.init_rho)])


def train(dataset, config: TrainingConfig, callback: Callable[[int, float], None] | None = None) -> LossReport:
    """Full-batch Adam on ``{tau_t, rho_t}``; one step per epoch.

    In tied mode a single ``(tau, rho)`` pair is shared by all iterations
    and its gradient is the sum of the per-iteration gradients.

    Raises
    ------
    TrainingDivergence
        If the cost or a gradient becomes non-finite, or some ``rho`` drops
        to zero or below.  ``tau`` is unconstrained; a sign change is logged.
    """
    batch = dataset if isinstance(dataset, RealBatch) else RealBatch.from_samples(dataset)
    if batch.K < 1:
        raise ValueError("dataset is empty")
    T = config.t_max
    params = initial_parameters(config)
    state = AdamState.zeros(params.size)

    costs = []
    warned_tau = False
    for epoch in range(config.epochs):
        c, grads = objective_and_gradient(batch, params, config)
        if not math.isfinite(c):
            raise TrainingDivergence(epoch, f"cost is {c}")
        costs.append(c)
        if callback is not None:
            callback(epoch, c)
        if not np.all(np.isfinite(grads)):
            raise TrainingDivergence(epoch, "non-finite gradient")
        params, state = adam_step(params, grads, state, config)
        rho = params[1:] if config.tied else params[T:]
        if np.any(rho <= 0):
            raise TrainingDivergence(epoch, f"rho left the positive range: {rho.tolist()}")
        tau = params[:1] if config.tied else params[:T]
        if np.any(tau <= 0) and not warned_tau:
            log.warning("epoch %d: tau crossed zero: %s", epoch, tau.tolist())
            warned_tau = True

    schedule = _schedule_from(params, config, batch.B)
    _, tape = forward(batch, schedule)
    final = tape_cost(tape)
    if not math.isfinite(final):
        raise TrainingDivergence(config.epochs, f"cost is {final}")
    return LossReport(costs, schedule, final)


# --- gradient check ----------------------------------------------------------


@dataclass
class GradCheckResult:
    instance: int
    parameter: str
    analytic: float
    numeric: float
    rel_error: float
    passed: bool


def _boundary_clear(tape: GradientTape, xi: float, margin: float) -> bool:
    for v in tape.pre_clip:
        if np.any(np.abs(np.abs(v) - xi) < margin):
            return False
    if tape.t_max == 0 and np.any(np.abs(np.abs(tape.x_final) - xi) < margin):
        return False
    return True


def random_instance(rng: np.random.Generator, U: int, B: int, t_max: int, power: float = 1.0):
    """Random Rayleigh sample plus a random positive schedule."""
    sample, _ = draw_sample(ChannelModelConfig(U=U, B=B), rng)
    tau = rng.uniform(0.02, 0.15, size=t_max)
    rho = rng.uniform(0.1, 1.0, size=t_max)
    return sample, PrecoderSchedule(t_max, list(tau), list(rho), xi_for(power, B), power)


def gradient_check(instances: int = 50, U: int = 2, B: int = 4, t_max: int = 3, seed: int = 0,
                   step: float = 1e-6, rtol: float = 1e-5, margin: float = 1e-4,
                   scale_floor: float = 1e-3, backward_fn=backward, max_draws: int = 100000):
    """Compare :func:`backward` with central differences of the surrogate cost.

    The surrogate replaces the 1-bit quantizer by ``clip(., xi)``, whose exact
    derivative is what the straight-through reverse pass computes.  Instances
    with any ``|rho_t z_t|`` within ``margin`` of ``xi`` are redrawn.  The
    relative error is ``|a - n| / max(|a|, |n|, scale_floor)``.
    """
    results: list[GradCheckResult] = []
    accepted = 0
    draw = 0
    while accepted < instances:
        if draw >= max_draws:
            raise RuntimeError(f"could not find {instances} boundary-clear instances")
        sample, sched = random_instance(stream(seed, "gradcheck", draw), U, B, t_max)
        draw += 1
        batch = RealBatch.from_samples([sample])
        _, tape = forward(batch, sched, quantizer="clip")
        if not _boundary_clear(tape, sched.xi, margin):
            continue
        grads = backward_fn(tape, sched)
        for name in ("tau", "rho"):
            for t in range(t_max):
                def c_at(delta):
                    vals = {"tau": list(sched.tau), "rho": list(sched.rho)}
                    vals[name][t] += delta
                    s2 = PrecoderSchedule(t_max, vals["tau"], vals["rho"], sched.xi, sched.power)
                    return tape_cost(forward(batch, s2, quantizer="clip")[1])
                numeric = (c_at(step) - c_at(-step)) / (2 * step)
                analytic = float(grads[name][t])
                err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), scale_floor)
                results.append(GradCheckResult(accepted, f"{name}[{t}]", analytic, numeric,
                                               err, err <= rtol))
        accepted += 1
    return results
