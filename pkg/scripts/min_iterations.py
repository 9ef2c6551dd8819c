"""Minimum number of iterations to reach a target BER, per transmit power.

For every t_max in the grid a schedule is trained (learned and tied) on the
chosen channel, and the sweep reports the smallest t_max meeting the target
at each power.  Output rows follow the ``sweep-iters`` CSV format; ``-1``
marks powers where no t_max in the grid reaches the target.

    python scripts/min_iterations.py --channel los --out results/sweep_los.csv
"""

from __future__ import annotations

import argparse
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from nnoc2po.channel import ChannelKind, ChannelModelConfig, generate_dataset
from nnoc2po.evaluation import SWEEP_HEADER, EvalConfig, min_iterations_sweep
from nnoc2po.trainer import RealBatch, TrainingConfig, train

log = logging.getLogger("min_iterations")


@dataclass
class Sweep:
    channel: str = "los"
    t_max_grid: list[int] = field(default_factory=lambda: list(range(1, 9)))
    power_grid_dB: list[float] = field(default_factory=lambda: list(range(-10, 31, 2)))
    target_ber: float = 0.01
    U: int = 8
    B: int = 128
    K_train: int = 500
    train_seed: int = 31
    K_eval: int = 1000
    eval_seed: int = 131


def run(sweep: Sweep, out: Path):
    kind = ChannelKind.parse(sweep.channel)
    channel = ChannelModelConfig(kind=kind, U=sweep.U, B=sweep.B, seed=sweep.train_seed)
    batch = RealBatch.from_samples(generate_dataset(channel, sweep.K_train))
    ec = EvalConfig(snr_grid_dB=sweep.power_grid_dB, K_eval=sweep.K_eval, target_ber=sweep.target_ber,
                    t_max_grid=sweep.t_max_grid, seed=sweep.eval_seed)
    results = []
    for tied in (False, True):
        name = "c2po" if tied else "nno-c2po"
        schedules = {}
        for t in sweep.t_max_grid:
            schedules[t] = train(batch, TrainingConfig(t_max=t, tied=tied)).schedule
            log.info("trained %s t_max=%d", name, t)
        results.append(min_iterations_sweep(schedules, channel, ec, name=name))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in results:
            for power, t in zip(r.power_db, r.min_tmax):
                w.writerow([r.precoder, r.channel, repr(float(power)), -1 if t is None else t])
    return results


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--channel", choices=["rayleigh", "los", "nlos"], default="los")
    p.add_argument("--t-max-grid", type=int, nargs="+", default=list(range(1, 9)))
    p.add_argument("--out", type=Path, default=None)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = args.out or Path(f"results/sweep_{args.channel}.csv")
    for r in run(Sweep(channel=args.channel, t_max_grid=args.t_max_grid), out):
        print(r.precoder, ["-" if t is None else t for t in r.min_tmax], "monotone" if r.monotone else "")


if __name__ == "__main__":
    main()
