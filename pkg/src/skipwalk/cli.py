"""Command-line entry point: ``skipwalk {sample,train,eval,sweep}``.

Settings come from three layers, later ones winning: built-in defaults, a
config file (``--config``, one ``key = value`` per line, ``#`` comments),
and command-line flags. Keys are the flag names with ``_`` for ``-``.

Exit codes: 0 success, 2 parse error, 3 validation error, 4 numeric
failure, 5 sample rejected by the K-S check.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import kg as kgmod
from .evaluate import (RankingResult, ZeroNormError, align_entities, complete_triples,
                       frequency_baseline_ranks, summarize)
from .kg import KgError, TripleParseError, add_reverse_relations, build_joint_graph
from .model import VARIANTS, RsnModel, TrainConfig
from .pipeline import AlignmentTask, completion_walk_config, fit, split_alignment
from .srp import SamplingError, SrpConfig, sample_dataset, write_stats
from .walker import WalkConfig

log = logging.getLogger("skipwalk")

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_SAMPLING = 0, 2, 3, 4, 5

CHECKPOINT = "checkpoint.skw"

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "out": "run",
    "kg1": None,
    "kg2": None,
    "alignment": None,
    "test": None,
    "task": "align",
    "variant": "rsn",
    "prior": 0.3,
    "direction": "1->2",
    "dim": 256,
    "lr": 0.003,
    "batch": 512,
    "epochs": 30,
    "negatives": 64,
    "dropout": 0.2,
    "layers": 2,
    "dtype": "float32",
    "alpha": 0.9,
    "beta": 0.9,
    "walk_length": 15,
    "walks_per_entity": 5,
    "eval_every": 0,
    "target": 15000,
    "segments": 10,
    "epsilon": 0.05,
    "damping": 0.85,
    "dense": False,
    "retries": 10,
}

_STR_KEYS = {"out", "kg1", "kg2", "alignment", "test", "task", "variant", "direction", "dtype"}
# sweep values stay strings until expanded
_SWEEP_KEYS = ("walk_length", "prior", "variant")


class ConfigError(ValueError):
    """Malformed config file or flag value."""


class UsageError(ValueError):
    """Settings that parse but cannot be used together."""


def _convert(key: str, raw: str):
    default = DEFAULTS[key]
    if key in _STR_KEYS:
        return raw
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}") from None


def read_config(path) -> dict:
    """Parse a ``key = value`` file into typed settings."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _convert(key, value)
    return out


def parse_range(text: str, key: str) -> list:
    """``a..b[:step]`` (inclusive) or a comma list."""
    if key == "variant":
        vals = [v.strip() for v in text.split(",") if v.strip()]
        for v in vals:
            if v not in VARIANTS:
                raise ConfigError(f"variant must be one of {VARIANTS}, got {v!r}")
        return vals
    conv = int if key == "walk_length" else float
    try:
        if ".." in text:
            lo, rest = text.split("..", 1)
            hi, _, step = rest.partition(":")
            lo, hi = conv(lo), conv(hi)
            step = conv(step) if step else (5 if conv is int else 0.1)
            if step <= 0 or hi < lo:
                raise ConfigError(f"bad range {text!r}")
            n = int(round((hi - lo) / step)) + 1
            vals = [lo + i * step for i in range(n)]
            return [int(v) for v in vals] if conv is int else [round(v, 10) for v in vals]
        return [conv(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse {key} values {text!r}") from None


# ---------------------------------------------------------------- argument parsing


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory")


def _add_data(p: argparse.ArgumentParser):
    p.add_argument("--kg1", help="tab-separated triples of the first KG")
    p.add_argument("--kg2", help="tab-separated triples of the second KG")
    p.add_argument("--alignment", help="tab-separated aligned entity pairs")


def _add_train(p: argparse.ArgumentParser, sweep: bool = False):
    p.add_argument("--task", choices=("align", "completion"))
    p.add_argument("--test", help="held-out triples for completion evaluation")
    if sweep:
        p.add_argument("--variant", help="comma list, e.g. rsn,rnn,rrn")
        p.add_argument("--prior", help="range a..b[:step] or comma list")
        p.add_argument("--walk-length", dest="walk_length", help="range a..b[:step] or comma list")
    else:
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--prior", type=float, help="prior alignment fraction")
        p.add_argument("--walk-length", dest="walk_length", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--walks-per-entity", dest="walks_per_entity", type=int)
    p.add_argument("--direction", choices=("1->2", "2->1", "mean"))
    p.add_argument("--eval-every", dest="eval_every", type=int)


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="skipwalk", description=__doc__.split("\n")[0])
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="SRP-sample a KG couple", argument_default=argparse.SUPPRESS)
    _add_common(p)
    _add_data(p)
    p.add_argument("--target", type=int, help="sampled entities per KG")
    p.add_argument("--segments", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--damping", type=float)
    p.add_argument("--retries", type=int)
    p.add_argument("--dense", action="store_true", help="double the average degree first")

    p = sub.add_parser("train", help="train a model", argument_default=argparse.SUPPRESS)
    _add_common(p)
    _add_data(p)
    _add_train(p)
    p.add_argument("--resume", action="store_true", default=False,
                   help="continue from the run directory's checkpoint")

    p = sub.add_parser("eval", help="evaluate a trained run", argument_default=argparse.SUPPRESS)
    _add_common(p)
    p.add_argument("--checkpoint", help="default: <out>/" + CHECKPOINT)
    p.add_argument("--direction", choices=("1->2", "2->1", "mean"))
    p.add_argument("--test", help="held-out triples for completion evaluation")

    p = sub.add_parser("sweep", help="train and evaluate over a parameter range",
                       argument_default=argparse.SUPPRESS)
    _add_common(p)
    _add_data(p)
    _add_train(p, sweep=True)
    return top


def resolve(args: argparse.Namespace) -> dict:
    """Defaults < config file < flags."""
    cfg = dict(DEFAULTS)
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "verbose", "config", "resume", "checkpoint")}
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    cfg.update(flags)
    return cfg


# ---------------------------------------------------------------- config objects


def walk_config(cfg: dict) -> WalkConfig:
    wc = WalkConfig(alpha=cfg["alpha"], beta=cfg["beta"], length=cfg["walk_length"],
                    walks_per_entity=cfg["walks_per_entity"], seed=cfg["seed"])
    return completion_walk_config(wc) if cfg["task"] == "completion" else wc


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(dim=cfg["dim"], lr=cfg["lr"], batch=cfg["batch"], epochs=cfg["epochs"],
                       negatives=cfg["negatives"], dropout=cfg["dropout"], variant=cfg["variant"],
                       seed=cfg["seed"], dtype=cfg["dtype"], layers=cfg["layers"])


def _require(cfg: dict, *keys):
    for k in keys:
        if not cfg.get(k):
            raise UsageError(f"--{k.replace('_', '-')} is required")
        if k in ("kg1", "kg2", "alignment", "test") and not os.path.exists(cfg[k]):
            raise FileNotFoundError(f"{k}: {cfg[k]} does not exist")


def _json_dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- commands


def cmd_sample(cfg: dict) -> int:
    _require(cfg, "kg1", "kg2", "alignment")
    kg1, kg2 = kgmod.load_triples(cfg["kg1"]), kgmod.load_triples(cfg["kg2"])
    al = kgmod.load_alignment(cfg["alignment"], kg1, kg2)
    scfg = SrpConfig(target_entities=cfg["target"], segments=cfg["segments"], epsilon=cfg["epsilon"],
                     damping=cfg["damping"], dense=cfg["dense"], seed=cfg["seed"], retries=cfg["retries"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    try:
        couple = sample_dataset(kg1, kg2, al.pairs, scfg)
    except SamplingError as exc:
        write_stats({**exc.stats, "accepted": False}, os.path.join(out, "stats.json"))
        raise
    kgmod.write_triples(couple.kg1, os.path.join(out, "kg1.tsv"))
    kgmod.write_triples(couple.kg2, os.path.join(out, "kg2.tsv"))
    kgmod.write_alignment(couple.alignment, couple.kg1, couple.kg2, os.path.join(out, "alignment.tsv"))
    write_stats({**couple.stats, "accepted": True}, os.path.join(out, "stats.json"))
    ks = couple.stats["ks"]
    print(f"sampled {couple.kg1.n_entities}/{couple.kg2.n_entities} entities, "
          f"{len(couple.alignment)} aligned pairs, K-S {ks[0]:.4f}/{ks[1]:.4f}")
    return EXIT_OK


class _Run:
    """Data and graph of a train/eval run, rebuilt from its settings."""

    def __init__(self, cfg: dict, out: str):
        self.cfg = cfg
        self.task = cfg["task"]
        self.kg1 = kgmod.load_triples(cfg["kg1"])
        if self.task == "align":
            self.kg2 = kgmod.load_triples(cfg["kg2"])
            pairs = kgmod.load_alignment(cfg["alignment"], self.kg1, self.kg2).pairs
            prior_path = os.path.join(out, "prior.tsv")
            if os.path.exists(prior_path):
                # a recorded split wins so evaluation sees the training split
                prior = kgmod.load_alignment(prior_path, self.kg1, self.kg2).pairs
                test = kgmod.load_alignment(os.path.join(out, "test.tsv"), self.kg1, self.kg2).pairs
            else:
                prior, test = split_alignment(pairs, cfg["prior"], cfg["seed"])
            self.align = AlignmentTask(self.kg1, self.kg2, prior, test)
            self.graph = self.align.graph
        else:
            self.kg2 = None
            self.align = None
            self.graph = build_joint_graph(add_reverse_relations(self.kg1))

    def write_split(self, out: str):
        if self.align is not None:
            kgmod.write_alignment(self.align.prior, self.kg1, self.kg2, os.path.join(out, "prior.tsv"))
            kgmod.write_alignment(self.align.test, self.kg1, self.kg2, os.path.join(out, "test.tsv"))

    def check_model(self, model: RsnModel):
        if (model.n_entities, model.n_relations) != (self.graph.n_entities, self.graph.n_relations):
            raise UsageError(
                f"checkpoint vocabulary {model.n_entities} entities/{model.n_relations} relations "
                f"does not match the data ({self.graph.n_entities}/{self.graph.n_relations})"
            )

    def evaluate(self, model: RsnModel, direction: str, test_path: str | None = None):
        """Returns ``(model result, baseline result or None)``."""
        if self.align is not None:
            return self.align.evaluate(model, direction), None
        if not test_path:
            raise UsageError("completion evaluation needs --test")
        test = _completion_queries(self.kg1, test_path)
        n_base = self.kg1.n_relations
        known = np.concatenate([self.kg1.triples, test])
        known = add_reverse_relations(kgmod.Kg(self.kg1.entities, self.kg1.relations, known)).triples
        res, _ = complete_triples(model, test, n_base, known)
        train_rev = add_reverse_relations(self.kg1).triples
        base = summarize(frequency_baseline_ranks(test, n_base, known, self.kg1.n_entities,
                                                  counts_from=train_rev), "both")
        return res, base


def _completion_queries(kg: kgmod.Kg, path) -> np.ndarray:
    rows = []
    for lineno, (s, r, o) in enumerate(kgmod._read_tsv(path, 3), 1):
        try:
            rows.append((kg.entity_index[s], kg.relation_index[r], kg.entity_index[o]))
        except KeyError as exc:
            raise KgError(f"{path}:{lineno}: unknown label {exc.args[0]!r}") from None
    if not rows:
        raise KgError(f"{path}: no triples")
    return np.array(rows, dtype=np.int64)


def _file_logger(path: str) -> logging.Handler:
    h = logging.FileHandler(path, encoding="utf-8")
    h.setFormatter(logging.Formatter("%(message)s"))
    h.addFilter(lambda rec: rec.getMessage().startswith("epoch="))
    return h


def train_run(cfg: dict, resume: bool = False) -> tuple[RankingResult | None, RankingResult | None]:
    """Train into ``cfg['out']``; returns final ``(metrics, baseline)``."""
    if cfg["task"] == "align":
        _require(cfg, "kg1", "kg2", "alignment")
    else:
        _require(cfg, "kg1")
        if cfg.get("test"):
            _require(cfg, "test")
    if not 0 < cfg["prior"] < 1:
        raise UsageError("--prior must be in (0, 1)")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, CHECKPOINT)
    if resume and not os.path.exists(ckpt):
        raise FileNotFoundError(f"--resume: no checkpoint at {ckpt}")
    if not resume:
        for name in ("prior.tsv", "test.tsv", "train.log"):
            if os.path.exists(os.path.join(out, name)):
                os.remove(os.path.join(out, name))
    wc, tc = walk_config(cfg), train_config(cfg)
    run = _Run(cfg, out)
    model, start = None, 0
    if resume:
        model, meta = RsnModel.load(ckpt, tc)
        run.check_model(model)
        start = int(meta.get("epoch", 0))
    else:
        run.write_split(out)
        _json_dump({k: v for k, v in cfg.items()}, os.path.join(out, "config.json"))

    def on_epoch(m: RsnModel, rec):
        tmp = ckpt + ".tmp"
        m.save(tmp, {"epoch": rec.epoch})
        os.replace(tmp, ckpt)
        if cfg["eval_every"] and rec.epoch % cfg["eval_every"] == 0 and run.align is not None:
            rec.metrics = run.align.evaluate(m, cfg["direction"])
            log.info("epoch %d %s", rec.epoch, rec.metrics.to_json())

    handler = _file_logger(os.path.join(out, "train.log"))
    plog = logging.getLogger("skipwalk.pipeline")
    plog.addHandler(handler)
    old_level = plog.level
    plog.setLevel(logging.INFO)
    try:
        model, _ = fit(run.graph, wc, tc, model=model, start_epoch=start, on_epoch=on_epoch)
    finally:
        plog.removeHandler(handler)
        plog.setLevel(old_level)
        handler.close()
    if model is None:
        model, _ = RsnModel.load(ckpt, tc)
    if run.align is None and not cfg.get("test"):
        return None, None
    res, base = run.evaluate(model, cfg["direction"], cfg.get("test"))
    _json_dump(asdict(res), os.path.join(out, "metrics.json"))
    if base is not None:
        _json_dump(asdict(base), os.path.join(out, "baseline.json"))
    return res, base


def cmd_train(cfg: dict, resume: bool) -> int:
    res, base = train_run(cfg, resume)
    if res is not None:
        print(res.table())
    if base is not None:
        print("frequency baseline")
        print(base.table())
    return EXIT_OK


def cmd_eval(cfg: dict, flags: dict) -> int:
    out = cfg["out"]
    path = os.path.join(out, "config.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path}: not a run directory")
    with open(path, encoding="utf-8") as fh:
        run_cfg = {**DEFAULTS, **json.load(fh)}
    run_cfg.update({k: v for k, v in flags.items() if k in ("direction", "test")})
    ckpt = flags.get("checkpoint") or os.path.join(out, CHECKPOINT)
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"no checkpoint at {ckpt}")
    run = _Run(run_cfg, out)
    model, _ = RsnModel.load(ckpt, train_config(run_cfg))
    run.check_model(model)
    res, base = run.evaluate(model, run_cfg["direction"], run_cfg.get("test"))
    _json_dump(asdict(res), os.path.join(out, "metrics.json"))
    print(res.table())
    if base is not None:
        _json_dump(asdict(base), os.path.join(out, "baseline.json"))
        print("frequency baseline")
        print(base.table())
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    cfg = dict(cfg)
    swept = []
    for k in _SWEEP_KEYS:
        if isinstance(cfg[k], str) and (k != "variant" or "," in cfg[k]):
            vals = parse_range(cfg[k], k)
            if len(vals) > 1:
                swept.append((k, vals))
            else:
                cfg[k] = vals[0]
    if len(swept) != 1:
        raise UsageError("sweep needs exactly one of --walk-length, --prior, --variant as a range or list")
    key, values = swept[0]
    root = cfg["out"]
    os.makedirs(root, exist_ok=True)
    rows = []
    for v in values:
        sub = dict(cfg, **{key: v, "out": os.path.join(root, f"{key}={v}")})
        res, _ = train_run(sub)
        if res is None:
            raise UsageError("sweep needs an evaluable task (completion requires --test)")
        rows.append({key: v, **asdict(res)})
    with open(os.path.join(root, "sweep.jsonl"), "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    print(f"{key:>12} {'Hits@1':>8} {'Hits@10':>8} {'MRR':>7}")
    for r in rows:
        print(f"{str(r[key]):>12} {r['hits1']:>8.2f} {r['hits10']:>8.2f} {r['mrr']:>7.4f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        flags = vars(args)
        if args.command == "sample":
            return cmd_sample(cfg)
        if args.command == "train":
            return cmd_train(cfg, flags.get("resume", False))
        if args.command == "eval":
            return cmd_eval(cfg, flags)
        return cmd_sweep(cfg)
    except (ConfigError, TripleParseError) as exc:
        print(f"skipwalk: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SamplingError as exc:
        print(f"skipwalk: sampling rejected: {exc}", file=sys.stderr)
        return EXIT_SAMPLING
    except (FloatingPointError, ZeroNormError) as exc:
        print(f"skipwalk: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError) as exc:
        print(f"skipwalk: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
