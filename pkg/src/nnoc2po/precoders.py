"""1-bit C2PO precoding, its building blocks and the ZF reference.

C2PO runs projected-gradient style iterations on the relaxed problem

    minimize  0.5 * ||A x||^2 - 0.5 * delta * ||x||^2   over the box [-xi, xi]^2B

with ``A = (I - s s^H / ||s||^2) H``:

    z_t = x_{t-1} - tau_t * A^H A x_{t-1}
    x_t = clip(rho_t * Re z_t, xi) + 1j * clip(rho_t * Im z_t, xi)

starting from ``x_0 = H^H s``, and finally quantizes ``x_tmax`` to
``{+-xi +- 1j xi}``.  Classic C2PO uses one ``(tau, rho)`` pair for all
iterations; the learned variant uses a distinct pair per iteration.  Both
are a :class:`PrecoderSchedule`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import as_complex_matrix, as_complex_vector, gram, matvec

DEFAULT_TAU = 2.0**-8
DEFAULT_RHO = 1.25


class DegeneratePrecodingError(ArithmeticError):
    """Raised when ``s^H H x`` vanishes and no receive scale exists."""


def xi_for(power: float, B: int) -> float:
    """Per-dimension 1-bit amplitude so that ``||x||^2 = power``."""
    return math.sqrt(power / (2 * B))


@dataclass
class PrecoderSchedule:
    """Per-iteration step sizes ``tau`` and prox scalings ``rho``."""

    t_max: int
    tau: list[float]
    rho: list[float]
    xi: float
    power: float = 1.0
    training_provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = [float(t) for t in self.tau]
        self.rho = [float(r) for r in self.rho]
        if self.t_max < 0:
            raise ValueError("t_max must be nonnegative")
        if len(self.tau) != self.t_max or len(self.rho) != self.t_max:
            raise ValueError(
                f"schedule has t_max={self.t_max} but {len(self.tau)} tau and {len(self.rho)} rho values"
            )
        if not np.all(np.isfinite(self.tau)):
            raise ValueError("tau values must be finite")
        # tau may cross zero during training (a step of either sign is well defined)
        positive = np.array(self.rho + [self.xi, self.power])
        if not np.all(np.isfinite(positive)) or np.any(positive <= 0):
            raise ValueError("rho, xi and power must be finite and positive")

    @classmethod
    def constant(cls, t_max: int, B: int, tau: float = DEFAULT_TAU, rho: float = DEFAULT_RHO,
                 power: float = 1.0) -> "PrecoderSchedule":
        return cls(t_max, [tau] * t_max, [rho] * t_max, xi_for(power, B), power)

    @property
    def B(self) -> int:
        return int(round(self.power / (2 * self.xi**2)))

    @property
    def is_tied(self) -> bool:
        return len(set(self.tau)) <= 1 and len(set(self.rho)) <= 1

    def check_antennas(self, B: int) -> None:
        if not math.isclose(self.xi, xi_for(self.power, B), rel_tol=1e-12):
            raise ValueError(f"schedule xi={self.xi!r} was not built for B={B}")

    def to_json(self) -> str:
        doc = {
            "t_max": self.t_max,
            "tau": self.tau,
            "rho": self.rho,
            "xi": self.xi,
            "power": self.power,
            "training_provenance": self.training_provenance,
        }
        # repr-based float encoding in json is round-trip exact
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PrecoderSchedule":
        doc = json.loads(text)
        return cls(int(doc["t_max"]), doc["tau"], doc["rho"], float(doc["xi"]),
                   float(doc.get("power", 1.0)), doc.get("training_provenance", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "PrecoderSchedule":
        return cls.from_json(Path(path).read_text())


@dataclass
class PrecodeResult:
    xq: np.ndarray
    beta: complex
    trajectory: list[np.ndarray] | None = None


def _check_s(s: np.ndarray) -> float:
    norm2 = float(np.sum(np.abs(s) ** 2, axis=-1).min())
    if norm2 == 0.0:
        raise ValueError("symbol vector s must be nonzero")
    return norm2


def build_A(H, s) -> np.ndarray:
    """``(I - s s^H / ||s||^2) H``, the part of ``H`` not aligned with ``s``."""
    H = np.asarray(H, dtype=np.complex128)
    s = np.asarray(s, dtype=np.complex128)
    if H.shape[-2] != s.shape[-1]:
        raise ValueError(f"H has {H.shape[-2]} rows but s has {s.shape[-1]} entries")
    _check_s(s)
    sH = s.conj()[..., None, :] @ H  # (..., 1, B)
    norm2 = np.sum(np.abs(s) ** 2, axis=-1)[..., None, None]
    return H - s[..., :, None] * sH / norm2


def alpha_hat(s, H, x) -> complex:
    """Least-squares scale ``s^H H x / ||s||^2`` of ``s`` fitting ``H x``."""
    s = as_complex_vector(s, "s")
    norm2 = _check_s(s)
    return complex(np.vdot(s, matvec(as_complex_matrix(H, "H"), x)) / norm2)


def prox_g(z, rho: float, xi: float) -> np.ndarray:
    """Entrywise ``clip(rho * Re z, xi) + 1j * clip(rho * Im z, xi)``."""
    z = np.asarray(z, dtype=np.complex128)
    return np.clip(rho * z.real, -xi, xi) + 1j * np.clip(rho * z.imag, -xi, xi)


def _sign(v: np.ndarray) -> np.ndarray:
    # sign(0) := +1
    return np.where(v >= 0, 1.0, -1.0)


def quantize_1bit(x, xi: float) -> np.ndarray:
    """Map each entry to ``xi*sign(Re) + 1j*xi*sign(Im)`` with ``sign(0) = +1``."""
    x = np.asarray(x, dtype=np.complex128)
    return xi * (_sign(x.real) + 1j * _sign(x.imag))


def beta_hat(s, H, xq):
    """Receive scale ``||s||^2 / (s^H H xq)``; batched over leading axes."""
    s = np.asarray(s, dtype=np.complex128)
    denom = np.sum(s.conj() * matvec(np.asarray(H, dtype=np.complex128), xq), axis=-1)
    if np.any(denom == 0):
        raise DegeneratePrecodingError("s^H H x is zero: precoder output carries no signal along s")
    beta = np.sum(np.abs(s) ** 2, axis=-1) / denom
    return complex(beta) if np.ndim(beta) == 0 else beta


def c2po_iterate(x0: np.ndarray, AHA: np.ndarray, schedule: PrecoderSchedule,
                 capture_trajectory: bool = False):
    """Run the ``t_max`` iterations from ``x0`` with a precomputed ``A^H A``.

    Works on single samples ``(B,)`` or stacks ``(K, B)``.  Returns the final
    unquantized iterate and, if requested, the list ``[x_0, ..., x_tmax]``.
    """
    x = x0
    traj = [x0] if capture_trajectory else None
    for tau, rho in zip(schedule.tau, schedule.rho):
        z = x - tau * matvec(AHA, x)
        x = prox_g(z, rho, schedule.xi)
        if traj is not None:
            traj.append(x)
    return x, traj


def c2po(H, s, schedule: PrecoderSchedule, capture_trajectory: bool = False) -> PrecodeResult:
    """Precode one symbol vector with C2PO.

    ``t_max = 0`` yields the quantized maximum-ratio output ``Q(H^H s)``.
    """
    H = as_complex_matrix(H, "H")
    s = as_complex_vector(s, "s")
    schedule.check_antennas(H.shape[1])
    AHA = gram(build_A(H, s))
    x0 = H.conj().T @ s
    x, traj = c2po_iterate(x0, AHA, schedule, capture_trajectory)
    xq = quantize_1bit(x, schedule.xi)
    return PrecodeResult(xq, beta_hat(s, H, xq), traj)


def c2po_batch(H: np.ndarray, s: np.ndarray, schedule: PrecoderSchedule):
    """Stacked C2PO: ``H`` is ``(K, U, B)``, ``s`` is ``(K, U)``.

    Returns ``(xq, beta)`` with shapes ``(K, B)`` and ``(K,)``.
    """
    schedule.check_antennas(H.shape[-1])
    AHA = gram(build_A(H, s))
    x0 = matvec(np.swapaxes(H, -1, -2).conj(), s)
    x, _ = c2po_iterate(x0, AHA, schedule)
    xq = quantize_1bit(x, schedule.xi)
    return xq, beta_hat(s, H, xq)


def _zf_vector(H: np.ndarray, s: np.ndarray, power: float) -> np.ndarray:
    HHh = H @ np.swapaxes(H, -1, -2).conj()
    if H.shape[-2] > H.shape[-1] or np.any(np.linalg.cond(HHh) > 1e12):
        raise np.linalg.LinAlgError("channel matrix is rank deficient; ZF undefined")
    w = np.linalg.solve(HHh, s[..., None])[..., 0]
    x = matvec(np.swapaxes(H, -1, -2).conj(), w)
    norm = np.sqrt(np.sum(np.abs(x) ** 2, axis=-1, keepdims=True))
    return x * np.sqrt(power) / norm


def zf_precode(H, s, power: float = 1.0) -> PrecodeResult:
    """Infinite-resolution zero-forcing, scaled to ``||x||^2 = power``."""
    H = as_complex_matrix(H, "H")
    s = as_complex_vector(s, "s")
    _check_s(s)
    x = _zf_vector(H, s, power)
    return PrecodeResult(x, beta_hat(s, H, x))


def zf_batch(H: np.ndarray, s: np.ndarray, power: float = 1.0):
    x = _zf_vector(H, s, power)
    return x, beta_hat(s, H, x)


class C2POPrecoder:
    """Batched C2PO with a fixed schedule, usable by the evaluator."""

    def __init__(self, schedule: PrecoderSchedule, name: str | None = None):
        self.schedule = schedule
        self.t_max = schedule.t_max
        self.name = name or ("c2po" if schedule.is_tied else "nno-c2po")
        self.train_seed = schedule.training_provenance.get("seed")

    def __call__(self, H, s):
        return c2po_batch(H, s, self.schedule)


class ZFPrecoder:
    name = "zf"
    t_max = 0
    train_seed = None

    def __init__(self, power: float = 1.0):
        self.power = power

    def __call__(self, H, s):
        return zf_batch(H, s, self.power)
