"""BER versus P/N0 on i.i.d. Rayleigh channels for learned and tied schedules.

Trains NNO-C2PO (per-iteration parameters) and tied C2PO for each requested
t_max on one fixed training set, evaluates all of them plus ZF on fresh
channels, and writes a single CSV in the ``eval-ber`` format.

    python scripts/ber_curves.py --t-max 2 4 8 --out results/ber_rayleigh.csv
"""

from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path

from nnoc2po.channel import ChannelModelConfig, generate_dataset
from nnoc2po.evaluation import EvalConfig, EvalReport, ber_curve, export_csv
from nnoc2po.precoders import C2POPrecoder, ZFPrecoder
from nnoc2po.trainer import RealBatch, TrainingConfig, train

log = logging.getLogger("ber_curves")


@dataclass
class Experiment:
    t_max: list[int] = field(default_factory=lambda: [2, 4, 8])
    U: int = 8
    B: int = 128
    K_train: int = 500
    train_seed: int = 11
    snr_grid_dB: list[float] = field(default_factory=lambda: list(range(-10, 31, 2)))
    K_eval: int = 1000
    eval_seed: int = 99


def run(exp: Experiment, out: Path, schedule_dir: Path | None = None) -> EvalReport:
    channel = ChannelModelConfig(U=exp.U, B=exp.B, seed=exp.train_seed)
    batch = RealBatch.from_samples(generate_dataset(channel, exp.K_train))
    ec = EvalConfig(snr_grid_dB=exp.snr_grid_dB, K_eval=exp.K_eval, seed=exp.eval_seed)
    reports = []
    for t in exp.t_max:
        for tied in (False, True):
            name = "c2po" if tied else "nno-c2po"
            rep = train(batch, TrainingConfig(t_max=t, tied=tied))
            log.info("%s t_max=%d: cost %.4f -> %.4f", name, t, rep.initial_cost, rep.final_cost)
            if schedule_dir is not None:
                schedule_dir.mkdir(parents=True, exist_ok=True)
                rep.schedule.save(schedule_dir / f"{name}_t{t}.json")
            reports.append(ber_curve(C2POPrecoder(rep.schedule, name), channel, ec))
    reports.append(ber_curve(ZFPrecoder(), channel, ec))
    merged = EvalReport.merge(*reports)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_csv(merged, out)
    return merged


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--t-max", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--K-eval", type=int, default=1000)
    p.add_argument("--out", type=Path, default=Path("results/ber_rayleigh.csv"))
    p.add_argument("--schedules", type=Path, help="directory to keep the trained schedules in")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    report = run(Experiment(t_max=args.t_max, K_eval=args.K_eval), args.out, args.schedules)
    for pt in report.points:
        print(f"{pt.precoder:9s} t={pt.t_max} {pt.snr_db:6.1f} dB  BER {pt.ber:.2e}")


if __name__ == "__main__":
    main()
