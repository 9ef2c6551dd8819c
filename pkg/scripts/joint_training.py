"""Separate versus joint (LoS + NLoS) training at a fixed number of iterations.

Prints the power needed for the target BER on each channel, for schedules
trained on that channel alone and on the interleaved mixture.

    python scripts/joint_training.py --t-max 5
"""

from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass

import numpy as np

from nnoc2po.channel import ChannelKind, ChannelModelConfig, generate_dataset, generate_joint_dataset
from nnoc2po.evaluation import EvalConfig, ber_curve, report_power_at_target
from nnoc2po.precoders import C2POPrecoder
from nnoc2po.trainer import RealBatch, TrainingConfig, train


@dataclass
class JointExperiment:
    t_max: int = 5
    U: int = 8
    B: int = 128
    K_train: int = 500
    target_ber: float = 0.01
    K_eval: int = 1000


def run(exp: JointExperiment) -> dict:
    cfg = {k: ChannelModelConfig(kind=k, U=exp.U, B=exp.B, seed=seed)
           for k, seed in ((ChannelKind.LOS, 21), (ChannelKind.NLOS, 22), (ChannelKind.JOINT, 23))}
    data = {
        "los": generate_dataset(cfg[ChannelKind.LOS], exp.K_train),
        "nlos": generate_dataset(cfg[ChannelKind.NLOS], exp.K_train),
        "joint": generate_joint_dataset(cfg[ChannelKind.JOINT], exp.K_train),
    }
    schedules = {}
    for key, ds in data.items():
        batch = RealBatch.from_samples(ds)
        for tied in (False, True):
            schedules[key, tied] = train(batch, TrainingConfig(t_max=exp.t_max, tied=tied)).schedule
            logging.info("trained %s tied=%s", key, tied)
    grid = list(np.arange(-10, 40.5, 1.0))
    table = {}
    for name, kind, seed in (("los", ChannelKind.LOS, 101), ("nlos", ChannelKind.NLOS, 102)):
        ec = EvalConfig(snr_grid_dB=grid, K_eval=exp.K_eval, target_ber=exp.target_ber, seed=seed)
        for train_on in (name, "joint"):
            for tied in (False, True):
                r = ber_curve(C2POPrecoder(schedules[train_on, tied], "p"), cfg[kind], ec)
                table[name, train_on, tied] = report_power_at_target(r, "p", exp.target_ber)
    return table


def _fmt(v) -> str:
    return "    never" if v is None else f"{v:9.2f}"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--t-max", type=int, default=5)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    table = run(JointExperiment(t_max=args.t_max))
    print(f"{'eval':5s} {'precoder':9s} {'separate':>9s} {'joint':>9s}  (dB at target BER)")
    for ch in ("los", "nlos"):
        for tied in (False, True):
            sep, joint = table[ch, ch, tied], table[ch, "joint", tied]
            print(f"{ch:5s} {'c2po' if tied else 'nno-c2po':9s} {_fmt(sep)} {_fmt(joint)}")


if __name__ == "__main__":
    main()
