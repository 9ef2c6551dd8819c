"""Command-line entry point: ``nnoc2po <command> [options]``.

Commands: ``gen-data``, ``train``, ``eval-ber``, ``sweep-iters``, ``gradcheck``.
Each accepts ``--config FILE.json``; explicit flags override config fields.
A single ``--seed`` is expanded into the named sub-streams ``data`` and
``eval``.  Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import trainer
from .channel import (ChannelKind, ChannelModelConfig, DatasetFormatError, generate_dataset,
                      load_dataset, manifest, save_dataset)
from .evaluation import (EvalConfig, EvaluationError, THREADS_ENV, ber_curve, default_threads,
                         export_csv, min_iterations_sweep, EvalReport)
from .precoders import C2POPrecoder, DegeneratePrecodingError, PrecoderSchedule, ZFPrecoder
from .rng import derive_seed

log = logging.getLogger("nnoc2po")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _digest(schedule) -> str:
    return hashlib.sha256(schedule.to_json().encode()).hexdigest()[:16]


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None


def _override(doc: dict, **flags) -> dict:
    out = dict(doc)
    for k, v in flags.items():
        if v is not None:
            out[k] = v
    return out


def _require(doc: dict, key: str, what: str):
    if doc.get(key) is None:
        raise UsageError(f"missing {what} (--{key.replace('_', '-')} or config field {key!r})")
    return doc[key]


def _write_meta(path, doc: dict) -> None:
    Path(str(path) + ".meta.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    doc = _load_config(args.config)
    channel_doc = dict(doc.get("channel", {}))
    channel_doc = _override(channel_doc, kind=args.kind, U=args.U, B=args.B,
                            ricean_factor_dB=args.ricean_factor_db,
                            antenna_spacing_wavelengths=args.antenna_spacing,
                            num_paths=args.num_paths)
    top = _override({k: v for k, v in doc.items() if k != "channel"}, K=args.K, seed=args.seed, out=args.out)
    K = int(top.get("K", 500))
    master = int(top.get("seed", 0))
    out = _require(top, "out", "output path")
    effective = {"channel": channel_doc, "K": K, "seed": master}
    try:
        channel_doc["seed"] = derive_seed(master, "data")
        cfg = ChannelModelConfig.from_dict(channel_doc)
        ds = generate_dataset(cfg, K)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid data config: {exc}") from None
    save_dataset(ds, out)
    info = json.loads(manifest(ds, out))
    info["master_seed"] = master
    info["config_hash"] = config_hash(effective)
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    tdoc = _override(dict(doc.get("training", {})), t_max=args.t_max, epochs=args.epochs,
                     learning_rate=args.lr, tied=True if args.tied else None)
    top = _override({k: v for k, v in doc.items() if k != "training"}, dataset=args.dataset,
                    out=args.out, loss_csv=args.loss_csv)
    dataset_path = _require(top, "dataset", "dataset path")
    out = _require(top, "out", "output schedule path")
    try:
        ds = load_dataset(dataset_path)
    except FileNotFoundError:
        raise UsageError(f"dataset not found: {dataset_path}") from None
    except DatasetFormatError as exc:
        raise UsageError(str(exc)) from None
    tdoc.setdefault("seed", ds.seed)
    try:
        tcfg = trainer.TrainingConfig.from_dict(tdoc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    effective = {"training": {**tdoc, "epochs": tcfg.epochs}, "dataset_crc32": json.loads(manifest(ds))["payload_crc32"]}
    try:
        report = trainer.train(ds, tcfg)
    except trainer.TrainingDivergence as exc:
        raise NumericalFailure(f"training diverged at epoch {exc.epoch}: {exc}") from None
    kinds = sorted(set(ds.sample_kinds))
    report.schedule.training_provenance = {
        "channel_kinds": kinds,
        "seed": ds.seed,
        "epochs": tcfg.epochs,
        "tied": tcfg.tied,
        "learning_rate": tcfg.learning_rate,
        "K": ds.K,
        "initial_cost": report.initial_cost,
        "final_cost": report.final_cost,
        "config_hash": config_hash(effective),
    }
    report.schedule.save(out)
    if top.get("loss_csv"):
        report.to_csv(top["loss_csv"])
    print(json.dumps({"schedule": str(out), "t_max": tcfg.t_max, "tied": tcfg.tied,
                      "initial_cost": report.initial_cost, "final_cost": report.final_cost},
                     sort_keys=True))
    return EXIT_OK


def _channel_for_eval(doc: dict, args) -> ChannelModelConfig:
    channel_doc = _override(dict(doc.get("channel", {})), kind=args.channel, U=args.U, B=args.B)
    try:
        cfg = ChannelModelConfig.from_dict(channel_doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid channel config: {exc}") from None
    if cfg.kind is ChannelKind.JOINT:
        raise UsageError("evaluation needs a single channel model (rayleigh, los or nlos)")
    return cfg


def _eval_config(doc: dict, args, grid_flag) -> tuple[EvalConfig, int]:
    edoc = _override(dict(doc.get("eval", {})), snr_grid_dB=grid_flag, K_eval=args.K_eval,
                     target_ber=getattr(args, "target_ber", None))
    master = int(args.seed if args.seed is not None else doc.get("seed", 0))
    edoc["seed"] = derive_seed(master, "eval")
    edoc.setdefault("snr_grid_dB", [])
    try:
        return EvalConfig.from_dict(edoc), master
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid eval config: {exc}") from None


def _load_schedules(paths) -> list[PrecoderSchedule]:
    out = []
    for p in paths:
        try:
            out.append(PrecoderSchedule.load(p))
        except FileNotFoundError:
            raise UsageError(f"schedule not found: {p}") from None
        except (KeyError, ValueError) as exc:
            raise UsageError(f"invalid schedule {p}: {exc}") from None
    return out


def cmd_eval_ber(args) -> int:
    doc = _load_config(args.config)
    channel = _channel_for_eval(doc, args)
    ecfg, master = _eval_config(doc, args, args.snr)
    schedule_paths = list(doc.get("schedules", [])) + (args.schedule or [])
    names = list(doc.get("names", [])) + (args.name or [])
    out = _require(_override(doc, out=args.out), "out", "output CSV path")
    precoders = []
    for i, sch in enumerate(_load_schedules(schedule_paths)):
        name = names[i] if i < len(names) else ("c2po" if sch.training_provenance.get("tied") else "nno-c2po")
        try:
            sch.check_antennas(channel.B)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        precoders.append(C2POPrecoder(sch, name))
    if args.zf or doc.get("zf"):
        precoders.append(ZFPrecoder(ecfg.power))
    if not precoders:
        raise UsageError("nothing to evaluate: pass --schedule and/or --zf")
    threads = args.threads or default_threads()
    reports = []
    try:
        for pc in precoders:
            reports.append(ber_curve(pc, channel, ecfg, threads))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    except (EvaluationError, DegeneratePrecodingError, ArithmeticError) as exc:
        raise NumericalFailure(str(exc)) from None
    export_csv(EvalReport.merge(*reports), out)
    # schedules enter by content, so the hash does not depend on file locations
    effective = {"channel": channel.to_dict(), "eval": vars(ecfg),
                 "schedules": [[pc.name, _digest(pc.schedule)] for pc in precoders if hasattr(pc, "schedule")],
                 "zf": bool(args.zf or doc.get("zf"))}
    _write_meta(out, {"config_hash": config_hash(effective), "master_seed": master,
                      "eval_seed": ecfg.seed, "precoders": [pc.name for pc in precoders]})
    return EXIT_OK


def cmd_sweep_iters(args) -> int:
    doc = _load_config(args.config)
    channel = _channel_for_eval(doc, args)
    ecfg, master = _eval_config(doc, args, args.power_grid)
    out = _require(_override(doc, out=args.out), "out", "output CSV path")
    schedules = {s.t_max: s for s in _load_schedules(list(doc.get("schedules", [])) + (args.schedule or []))}
    if not schedules:
        raise UsageError("no schedules given (--schedule, one per t_max)")
    ecfg.t_max_grid = sorted(schedules)
    name = args.name or doc.get("name", "nno-c2po")
    try:
        result = min_iterations_sweep(schedules, channel, ecfg, name, args.threads or default_threads())
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    except (EvaluationError, ArithmeticError) as exc:
        raise NumericalFailure(str(exc)) from None
    export_csv(result, out)
    if not result.monotone:
        log.warning("minimum iteration count is not monotone in power: %s", result.min_tmax)
    effective = {"channel": channel.to_dict(), "eval": vars(ecfg), "name": name,
                 "schedules": [_digest(schedules[t]) for t in sorted(schedules)]}
    _write_meta(out, {"config_hash": config_hash(effective), "master_seed": master,
                      "eval_seed": ecfg.seed, "monotone": result.monotone})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    doc = _override(_load_config(args.config), instances=args.instances, U=args.U, B=args.B,
                    t_max=args.t_max, seed=args.seed, rtol=args.rtol)
    instances = int(doc.get("instances", 50))
    if instances < 0:
        raise UsageError("--instances must be nonnegative")
    if instances == 0:
        log.warning("gradcheck with 0 instances passes vacuously")
        print(json.dumps({"instances": 0, "checked": 0, "failed": 0, "passed": True}))
        return EXIT_OK
    results = trainer.gradient_check(
        instances=instances, U=int(doc.get("U", 2)), B=int(doc.get("B", 4)),
        t_max=int(doc.get("t_max", 3)), seed=int(doc.get("seed", 0)),
        rtol=float(doc.get("rtol", 1e-5)), backward_fn=trainer.backward)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL instance={r.instance} parameter={r.parameter} analytic={r.analytic!r} "
              f"numeric={r.numeric!r} rel_error={r.rel_error:.3e}")
    worst = max(r.rel_error for r in results)
    print(json.dumps({"instances": instances, "checked": len(results), "failed": len(failed),
                      "max_rel_error": worst, "passed": not failed}))
    return EXIT_NUMERICAL if failed else EXIT_OK


# --- parser -------------------------------------------------------------------


def _grid(text: str) -> float:
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nnoc2po", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads for evaluation (default: ${THREADS_ENV} or 1)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a training dataset file")
    g.add_argument("--config")
    g.add_argument("--kind", choices=["rayleigh", "los", "nlos", "joint"])
    g.add_argument("--K", type=int)
    g.add_argument("--U", type=int)
    g.add_argument("--B", type=int)
    g.add_argument("--ricean-factor-db", type=float)
    g.add_argument("--antenna-spacing", type=float)
    g.add_argument("--num-paths", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="learn a schedule by unfolded training")
    t.add_argument("--config")
    t.add_argument("--dataset")
    t.add_argument("--t-max", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--tied", action="store_true", help="share one (tau, rho) across iterations")
    t.add_argument("--out")
    t.add_argument("--loss-csv")
    t.set_defaults(func=cmd_train)

    for name, func, grid_name in (("eval-ber", cmd_eval_ber, "--snr"),
                                  ("sweep-iters", cmd_sweep_iters, "--power-grid")):
        e = sub.add_parser(name)
        e.add_argument("--config")
        e.add_argument("--schedule", action="append", help="schedule JSON (repeatable)")
        e.add_argument("--name", action="append" if name == "eval-ber" else "store")
        e.add_argument("--channel", choices=["rayleigh", "los", "nlos"])
        e.add_argument("--U", type=int)
        e.add_argument("--B", type=int)
        e.add_argument(grid_name, nargs="*", type=_grid, dest="snr" if name == "eval-ber" else "power_grid",
                       default=None, help="normalized transmit power grid P/N0 in dB")
        e.add_argument("--K-eval", type=int, dest="K_eval")
        e.add_argument("--seed", type=int)
        e.add_argument("--out")
        if name == "eval-ber":
            e.add_argument("--zf", action="store_true", help="include the ZF reference")
        else:
            e.add_argument("--target-ber", type=float)
        e.set_defaults(func=func)

    c = sub.add_parser("gradcheck", help="finite-difference check of the reverse pass")
    c.add_argument("--config")
    c.add_argument("--instances", type=int)
    c.add_argument("--U", type=int)
    c.add_argument("--B", type=int)
    c.add_argument("--t-max", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--rtol", type=float)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"nnoc2po: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"nnoc2po: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
