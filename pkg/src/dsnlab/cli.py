"""``dsnlab`` command line: gen | train | eval | sweep | gradcheck.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 I/O error.
Files written under the output directory::

    dataset.bin       generated dataset
    checkpoint.bin    final model (encoder, head, classifier, response, pretrained)
    ckpt_epochNNN.bin periodic checkpoints when checkpoint_every > 0
    train_log.csv     epoch,classifier_loss,mean_advantage,hit_rate,wall_ms
    metrics.csv/json  one row per (policy, M_test)
    selections.csv    per-clip selection probabilities on the test split
    sweep.csv         one row per (M_test, policy)
    sweep_<policy>.dat  whitespace-delimited "M_test top1" per policy
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import bench, gradcheck
from .checkpoint import ModelBundle, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .errors import ConfigError, ContractError, FormatError
from .numeric import Prng
from .synthgen import atomic_write_bytes, generate_dataset, read_dataset, write_dataset
from .trainer import init_models, pretrain_classifier, train_dsn

log = logging.getLogger("dsnlab")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
LOG_COLUMNS = ["epoch", "classifier_loss", "mean_advantage", "hit_rate", "wall_ms"]


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path(cfg["out_dir"])


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise CliError("--config is required", EXIT_CONFIG)
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_IO) from None
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "fix_classifier", False):
        overrides["fix_classifier"] = True
    if getattr(args, "epochs", None) is not None:
        overrides.update(epochs=args.epochs, pretrain_epochs=args.epochs, response_epochs=args.epochs)
    return cfg.with_overrides(**overrides) if overrides else cfg


def _read_dataset(path: Path):
    try:
        return read_dataset(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc}", EXIT_IO) from None
    except FormatError as exc:
        raise CliError(f"dataset {path}: {exc}", EXIT_IO) from None


def cmd_gen(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    ds = generate_dataset(cfg.dataset_spec)
    try:
        digest = write_dataset(ds, out / "dataset.bin")
    except OSError as exc:
        raise CliError(f"cannot write dataset: {exc}", EXIT_IO) from None
    print(f"sha256 {digest}  {out / 'dataset.bin'}")
    return EXIT_OK


def _log_csv(entries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for e in entries:
        w.writerow([e.epoch, repr(e.classifier_loss), repr(e.mean_advantage), repr(e.hit_rate), e.wall_ms])
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    ds = _read_dataset(out / "dataset.bin")
    spec = ds.spec
    want = cfg.dataset_spec
    if (spec.feature_dim, spec.clips_per_section, spec.num_classes) != (
        want.feature_dim, want.clips_per_section, want.num_classes
    ):
        raise CliError(
            f"dataset dims (D={spec.feature_dim}, N={spec.clips_per_section}, J={spec.num_classes}) "
            f"do not match config (D={want.feature_dim}, N={want.clips_per_section}, J={want.num_classes})",
            EXIT_CONFIG,
        )
    tcfg = cfg.train_config
    obs, clf = init_models(spec, tcfg)
    pretrain_classifier(ds, tcfg, clf)
    pretrained = clf.copy()
    every = cfg["checkpoint_every"]

    def on_epoch(entry, o, c):
        log.info("epoch %d loss=%.4f adv=%.4f hit=%.4f", entry.epoch, entry.classifier_loss,
                 entry.mean_advantage, entry.hit_rate)
        if every and entry.epoch % every == 0:
            save_checkpoint(out / f"ckpt_epoch{entry.epoch:03d}.bin", ModelBundle(o, c, pretrained=pretrained))

    result = train_dsn(ds, tcfg, obs, clf, on_epoch=on_epoch)
    response = bench.train_max_response(ds, tcfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    try:
        digest = save_checkpoint(ckpt, ModelBundle(obs, clf, response, pretrained))
        atomic_write_bytes(out / "train_log.csv", _log_csv(result.log).encode())
    except OSError as exc:
        raise CliError(f"cannot write outputs: {exc}", EXIT_IO) from None
    print(f"sha256 {digest}  {ckpt}")
    return EXIT_OK


def _eval_inputs(args, cfg):
    out = _out_dir(args, cfg)
    ds = _read_dataset(out / "dataset.bin")
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    try:
        models = load_checkpoint(ckpt)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {ckpt}: {exc}", EXIT_IO) from None
    except (FormatError, ContractError) as exc:
        raise CliError(f"checkpoint {ckpt}: {exc}", EXIT_IO) from None
    spec = ds.spec
    obs, clf = models.obs, models.clf
    ck_dims = (obs.feature_dim, obs.clips, clf.num_classes)
    ds_dims = (spec.feature_dim, spec.clips_per_section, spec.num_classes)
    if ck_dims != ds_dims or clf.net.input_dim != spec.feature_dim:
        raise CliError(
            f"checkpoint dims (D, N, J) = {ck_dims} do not match dataset dims {ds_dims}", EXIT_CONFIG
        )
    if "max_response" in cfg["policies"] and models.response is None:
        raise CliError("policy 'max_response' needs a checkpoint with a response net", EXIT_CONFIG)
    return out, ds, models


def _report_json(reports) -> str:
    rows = [r.row() for r in reports]
    return json.dumps(rows, indent=2) + "\n"


def cmd_eval(args) -> int:
    cfg = _load(args)
    out, ds, models = _eval_inputs(args, cfg)
    seed = cfg["seed"]
    cm = bench.CostModel.from_nets(models.obs, models.clf, models.response)
    reports = []
    for m_test in cfg["m_test"]:
        for policy in cfg["policies"]:
            clf = models.clf if policy == "dsn" else models.baseline_classifier()
            reports.append(bench.eval_policy(
                ds.test, policy, clf, obs=models.obs, M_test=m_test,
                rng=Prng(seed).substream(f"eval/{policy}/{m_test}"), response=models.response,
                fusion=cfg["fusion"], oracle_mode=cfg["oracle_mode"], cost_model=cm, seed=seed,
            ))
    try:
        atomic_write_bytes(out / "metrics.csv", bench.metrics_csv(reports).encode())
        atomic_write_bytes(out / "metrics.json", _report_json(reports).encode())
        bench.dump_selections(ds.test, models.obs, out / "selections.csv")
    except OSError as exc:
        raise CliError(f"cannot write outputs: {exc}", EXIT_IO) from None
    for r in reports:
        print(f"{r.policy:<13} M_test={r.M_test} top1={r.top1:.4f} cost={r.cost_macs}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out, ds, models = _eval_inputs(args, cfg)
    reports = bench.sweep_M(
        ds.test, models.clf, models.obs, cfg["sweep_m"], cfg["policies"], response=models.response,
        seed=cfg["seed"], fusion=cfg["fusion"], baseline_clf=models.baseline_classifier(),
    )
    try:
        atomic_write_bytes(out / "sweep.csv", bench.metrics_csv(reports).encode())
        for policy in cfg["policies"]:
            lines = [f"{r.M_test} {r.top1!r}" for r in reports if r.policy == policy]
            atomic_write_bytes(out / f"sweep_{policy}.dat", ("\n".join(lines) + "\n").encode())
    except OSError as exc:
        raise CliError(f"cannot write outputs: {exc}", EXIT_IO) from None
    print(f"wrote {len(reports)} rows to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = gradcheck.run_all(seed=seed, corrupt=args.corrupt_gradients)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsnlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.bin)")
    parser.add_argument("--fix-classifier", action="store_true", help="train DSN-f (frozen classifier)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (default: config out_dir)")
    parser.add_argument("--epochs", type=int, help="override every training-phase epoch count")
    parser.add_argument("-v", "--verbose", action="store_true")
    # test hook: scales analytic gradients so gradcheck must fail
    parser.add_argument("--corrupt-gradients", type=float, default=0.0, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
