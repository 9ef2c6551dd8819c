"""Monte Carlo BER curves and minimum-iteration sweeps.

The SNR axis is the normalized transmit power ``P / N0`` in dB with
``P = 1``.  Each evaluation sample ``k`` owns a random stream derived from
``(seed, "eval", k)`` that draws the channel, the bits and one standard
complex Gaussian noise vector; the noise is rescaled for every SNR point, so
all points (and all precoders evaluated with the same seed) see the same
channels, symbols and noise directions.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from . import modulation
from .channel import ChannelKind, ChannelModelConfig, gen_channel
from .precoders import C2POPrecoder, PrecoderSchedule
from .rng import stream

BER_HEADER = ["precoder", "channel", "t_max", "snr_db", "bit_errors", "total_bits", "ber", "ci_low", "ci_high"]
SWEEP_HEADER = ["precoder", "channel", "power_db", "min_tmax"]
THREADS_ENV = "NNOC2PO_THREADS"


class EvaluationError(RuntimeError):
    pass


def default_threads() -> int:
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


@dataclass
class EvalConfig:
    snr_grid_dB: list[float]
    K_eval: int = 1000
    target_ber: float = 0.01
    t_max_grid: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6, 7, 8])
    seed: int = 1
    power: float = 1.0
    chunk_size: int = 250

    def __post_init__(self):
        self.snr_grid_dB = [float(v) for v in self.snr_grid_dB]
        self.t_max_grid = [int(t) for t in self.t_max_grid]
        if self.K_eval < 1:
            raise ValueError("K_eval must be positive")
        if not 0 < self.target_ber < 1:
            raise ValueError("target_ber must lie in (0, 1)")
        for name in ("snr_grid_dB", "t_max_grid"):
            grid = getattr(self, name)
            if any(b < a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be sorted ascending")
        if not self.t_max_grid:
            raise ValueError("t_max_grid must be nonempty")

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown eval config fields: {sorted(unknown)}")
        return cls(**doc)


def clopper_pearson(errors: int, total: int, level: float = 0.95) -> tuple[float, float]:
    a = 1 - level
    lo = 0.0 if errors == 0 else float(stats.beta.ppf(a / 2, errors, total - errors + 1))
    hi = 1.0 if errors == total else float(stats.beta.ppf(1 - a / 2, errors + 1, total - errors))
    return lo, hi


@dataclass
class BerPoint:
    precoder: str
    channel: str
    t_max: int
    snr_db: float
    bit_errors: int
    total_bits: int
    ber: float
    ci_low: float
    ci_high: float


@dataclass
class EvalReport:
    points: list[BerPoint]
    metadata: dict = field(default_factory=dict)
    # (precoder name) -> (K_eval, n_snr) bit errors per sample
    per_sample_errors: dict = field(default_factory=dict)

    def curve(self, precoder: str) -> tuple[np.ndarray, np.ndarray]:
        pts = [p for p in self.points if p.precoder == precoder]
        return np.array([p.snr_db for p in pts]), np.array([p.ber for p in pts])

    def select(self, precoder: str) -> list[BerPoint]:
        return [p for p in self.points if p.precoder == precoder]

    @classmethod
    def merge(cls, *reports: "EvalReport") -> "EvalReport":
        out = cls([], {})
        for r in reports:
            out.points.extend(r.points)
            out.per_sample_errors.update(r.per_sample_errors)
            out.metadata.setdefault("runs", []).append(r.metadata)
        return out


def _draw_eval_chunk(config: ChannelModelConfig, seed: int, indices: range):
    Hs, bits, noise = [], [], []
    for k in indices:
        rng = stream(seed, "eval", k)
        Hs.append(gen_channel(config, rng))
        bits.append(modulation.random_bits(rng, config.U))
        noise.append((rng.standard_normal(config.U) + 1j * rng.standard_normal(config.U)) / np.sqrt(2.0))
    bits = np.stack(bits)
    return np.stack(Hs), bits, modulation.modulate(bits, config.U), np.stack(noise)


def _noise_std(snr_db: float, power: float) -> float:
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return math.sqrt(power / 10.0 ** (snr_db / 10.0))


def _eval_chunk(precoder, config, eval_config, indices):
    H, bits, s, n = _draw_eval_chunk(config, eval_config.seed, indices)
    try:
        x, beta = precoder(H, s)
    except Exception:
        # locate the failing sample for the error message
        for j, k in enumerate(indices):
            try:
                precoder(H[j:j + 1], s[j:j + 1])
            except Exception as exc:
                raise EvaluationError(f"precoder {precoder.name} failed on sample {k}: {exc}") from exc
        raise
    Hx = (H @ x[..., None])[..., 0]
    errors = np.empty((len(indices), len(eval_config.snr_grid_dB)), dtype=np.int64)
    for i, snr in enumerate(eval_config.snr_grid_dB):
        y = Hx + _noise_std(snr, eval_config.power) * n
        rx = modulation.demodulate(np.asarray(beta)[:, None] * y)
        errors[:, i] = np.count_nonzero(rx != bits, axis=-1)
    return errors


def ber_curve(precoder, channel_config: ChannelModelConfig, eval_config: EvalConfig,
              threads: int | None = None, channel_name: str | None = None) -> EvalReport:
    """BER of ``precoder`` at every point of ``eval_config.snr_grid_dB``.

    ``precoder`` is a callable ``(H (K,U,B), s (K,U)) -> (x (K,B), beta (K,))``
    with ``name``, ``t_max`` and ``train_seed`` attributes (see
    :class:`~nnoc2po.precoders.C2POPrecoder`).  The receiver scales ``y`` by
    the ``beta`` the precoder reports.
    """
    if getattr(precoder, "train_seed", None) is not None and precoder.train_seed == eval_config.seed:
        raise ValueError("evaluation seed equals the training seed; evaluation data would not be fresh")
    if channel_config.kind is ChannelKind.JOINT:
        raise ValueError("evaluate LoS and NLoS separately")
    threads = threads or default_threads()
    K = eval_config.K_eval
    cs = eval_config.chunk_size
    chunks = [range(a, min(a + cs, K)) for a in range(0, K, cs)]

    def work(idx):
        return _eval_chunk(precoder, channel_config, eval_config, idx)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    errors = np.concatenate(parts, axis=0)

    channel = channel_name or channel_config.kind.name.lower()
    total = modulation.BITS_PER_SYMBOL * channel_config.U * K
    points = []
    for i, snr in enumerate(eval_config.snr_grid_dB):
        e = int(errors[:, i].sum())
        lo, hi = clopper_pearson(e, total)
        points.append(BerPoint(precoder.name, channel, int(precoder.t_max), snr, e, total, e / total, lo, hi))
    meta = {
        "B": channel_config.B,
        "U": channel_config.U,
        "channel": channel,
        "K_eval": K,
        "seed": eval_config.seed,
        "precoder": precoder.name,
        "schedule_provenance": getattr(getattr(precoder, "schedule", None), "training_provenance", None),
    }
    return EvalReport(points, meta, {precoder.name: errors})


def power_at_target(snr_db, ber, target: float, total_bits: int | None = None) -> float | None:
    """Smallest power where the curve reaches ``target``, interpolating log10(BER).

    Returns ``None`` if the curve never reaches the target on the grid.
    Zero-error points are floored at half an error when ``total_bits`` is
    given (else at ``1e-12``) before taking logs.
    """
    snr_db = np.asarray(snr_db, dtype=float)
    ber = np.asarray(ber, dtype=float)
    hit = np.nonzero(ber <= target)[0]
    if hit.size == 0:
        return None
    i = int(hit[0])
    if i == 0:
        return float(snr_db[0])
    floor = 0.5 / total_bits if total_bits else 1e-12
    y0, y1 = np.log10(max(ber[i - 1], floor)), np.log10(max(ber[i], floor))
    yt = np.log10(target)
    if y1 == y0:
        return float(snr_db[i])
    return float(snr_db[i - 1] + (yt - y0) * (snr_db[i] - snr_db[i - 1]) / (y1 - y0))


def report_power_at_target(report: EvalReport, precoder: str, target: float) -> float | None:
    pts = report.select(precoder)
    if not pts:
        raise KeyError(precoder)
    return power_at_target([p.snr_db for p in pts], [p.ber for p in pts], target, pts[0].total_bits)


@dataclass
class SweepResult:
    precoder: str
    channel: str
    power_db: list[float]
    min_tmax: list[int | None]
    reports: dict[int, EvalReport] = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        """Whether min-iterations is non-increasing in power (unreached counts as infinite)."""
        vals = [math.inf if v is None else v for v in self.min_tmax]
        return all(b <= a for a, b in zip(vals, vals[1:]))


def min_iterations_sweep(schedules: dict[int, PrecoderSchedule], channel_config: ChannelModelConfig,
                         eval_config: EvalConfig, name: str = "nno-c2po", threads: int | None = None,
                         channel_name: str | None = None,
                         precoder_factory: Callable[[PrecoderSchedule, str], object] = C2POPrecoder,
                         ) -> SweepResult:
    """Smallest ``t_max`` in the grid whose BER meets the target at each power."""
    missing = [t for t in eval_config.t_max_grid if t not in schedules]
    if missing:
        raise KeyError(f"no schedule for t_max in {missing}")
    channel = channel_name or channel_config.kind.name.lower()
    reports = {}
    for t in eval_config.t_max_grid:
        if schedules[t].t_max != t:
            raise ValueError(f"schedule registered for t_max={t} has t_max={schedules[t].t_max}")
        reports[t] = ber_curve(precoder_factory(schedules[t], name), channel_config, eval_config,
                               threads, channel)
    min_tmax = []
    for i, _ in enumerate(eval_config.snr_grid_dB):
        found = None
        for t in eval_config.t_max_grid:
            if reports[t].points[i].ber <= eval_config.target_ber:
                found = t
                break
        min_tmax.append(found)
    return SweepResult(name, channel, list(eval_config.snr_grid_dB), min_tmax, reports)


def _fmt(v) -> str:
    return repr(float(v))


def export_csv(obj, path) -> None:
    """Write an :class:`EvalReport` or :class:`SweepResult` as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if isinstance(obj, EvalReport):
            writer.writerow(BER_HEADER)
            for p in obj.points:
                writer.writerow([p.precoder, p.channel, p.t_max, _fmt(p.snr_db), p.bit_errors,
                                 p.total_bits, _fmt(p.ber), _fmt(p.ci_low), _fmt(p.ci_high)])
        elif isinstance(obj, SweepResult):
            writer.writerow(SWEEP_HEADER)
            for power, t in zip(obj.power_db, obj.min_tmax):
                writer.writerow([obj.precoder, obj.channel, _fmt(power), -1 if t is None else t])
        else:
            raise TypeError(f"cannot export {type(obj).__name__}")
