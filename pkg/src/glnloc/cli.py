"""Command-line entry points: generate, train, embed, zs-train, evaluate, predict.

Every run writes the exact resolved configuration to `<out>/config.json`;
re-running a subcommand with `--config <that file>` reproduces the outputs
byte for byte (logs and reports carry no timestamps). Exit codes: 0 success,
1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets, evalmetrics, floorplan, gln_model, map2vec, zeroshot
from .numerics import NumericError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


DEFAULTS = {
    "generate": {
        "width": 6, "height": 10, "rho": 0.5, "sigma": 0.1,
        "samples_per_location": 8, "dim": None, "train_ratio": 0.75, "seed": 0,
    },
    "train": {
        "sample_split": None, "train_ratio": 0.75, "val_ratio": 0.0,
        "hidden": 256, "layers": 1, "attention": False, "self_loops": True,
        "dropout": 0.5, "epochs": 200, "batch_size": 32, "lr": 3e-4,
        "patience": 20, "seed": 0,
    },
    "embed": {
        "layers": 2, "dim": None, "epochs": 400, "lr": 1e-2,
        "self_loops": True, "seed": 0,
    },
    "zs-train": {
        "mode": "zeroshot", "embeddings": None, "split": "alternating",
        "val_ratio": 0.2, "hidden": 256, "layers": 1, "attention": False,
        "self_loops": True, "dropout": 0.5, "epochs": 200, "batch_size": 32,
        "lr": 3e-4, "patience": 20, "seed": 0,
    },
    "evaluate": {
        "mode": "standard", "sample_split": None, "cdf_step": 1.0, "seed": 0,
    },
    "predict": {
        "k_best": 5, "seed": 0,
    },
}


def _resolve(sub: str, args: argparse.Namespace) -> dict:
    """defaults < --config file < explicit flags."""
    merged = dict(DEFAULTS[sub])
    explicit = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        loaded.pop("subcommand", None)
        unknown = set(loaded) - set(merged) - {"plan", "features", "out", "checkpoint"}
        if unknown:
            raise UsageError(f"config file has unknown keys {sorted(unknown)}")
        merged.update(loaded)
    merged.update(explicit)
    return merged


def _echo_config(out_dir: Path, sub: str, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"subcommand": sub, **cfg}
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_log(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row.format() + "\n")


def _gln_config(cfg: dict, feature_dim: int, out_dim: int) -> gln_model.GLNConfig:
    return gln_model.GLNConfig(
        feature_dim=feature_dim, hidden_dim=cfg["hidden"], layers=cfg["layers"],
        attention=cfg["attention"], dropout_p=cfg["dropout"],
        self_loops=cfg["self_loops"], out_dim=out_dim,
    )


def _train_config(cfg: dict) -> gln_model.TrainConfig:
    return gln_model.TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                                 lr=cfg["lr"], patience=cfg["patience"], seed=cfg["seed"])


def _load_world(cfg: dict):
    plan = floorplan.load_floorplan(cfg["plan"])
    table = datasets.load_features(cfg["features"])
    return plan, table, datasets.assemble_samples(table, plan)


def _train_val(samples, val_ratio: float, seed: int):
    if val_ratio <= 0:
        return samples, None
    return datasets.standard_split(samples, 1.0 - val_ratio, seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: dict) -> int:
    out = Path(cfg["out"])
    synth = datasets.SynthConfig(width=cfg["width"], height=cfg["height"], rho=cfg["rho"],
                                 noise=cfg["sigma"], samples_per_location=cfg["samples_per_location"],
                                 dim=cfg["dim"], seed=cfg["seed"])
    plan, table = datasets.generate_synthetic(synth)
    out.mkdir(parents=True, exist_ok=True)
    (out / "splits").mkdir(exist_ok=True)
    floorplan.save_floorplan(out / "plan.txt", plan)
    datasets.save_features(out / "features.ftb", table)

    split = floorplan.alternating_split(plan)
    floorplan.save_split(out / "splits" / "locations.txt", split)
    datasets.save_features(out / "features-seen.ftb",
                           datasets.table_subset_by_locations(table, split.seen))
    datasets.save_features(out / "features-unseen.ftb",
                           datasets.table_subset_by_locations(table, split.unseen))

    samples = datasets.assemble_samples(table, plan)
    train, test = datasets.standard_split(samples, cfg["train_ratio"], cfg["seed"])
    datasets.save_sample_split(out / "splits" / "samples.txt", train, test)
    _echo_config(out, "generate", cfg)
    print(f"generated {plan.k} locations, {table.n_records} records "
          f"(dim {table.dim}), {len(train)}/{len(test)} train/test groups")
    return 0


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out"])
    plan, table, samples = _load_world(cfg)
    if cfg["sample_split"]:
        train, _ = datasets.standard_split(samples, cfg["sample_split"])
    else:
        train, _ = datasets.standard_split(samples, cfg["train_ratio"], cfg["seed"])
    train, val = _train_val(train, cfg["val_ratio"], cfg["seed"])
    config = _gln_config(cfg, table.dim, plan.k)
    params, log = gln_model.train_standard(train, val, config, _train_config(cfg))
    out.mkdir(parents=True, exist_ok=True)
    gln_model.save_checkpoint(out / "model.gln", params, config, kind="standard")
    _write_log(out / "train_log.txt", log)
    _echo_config(out, "train", cfg)
    print(f"trained standard model on {len(train)} samples "
          f"({len(log) - 1} epochs); final train_loss {log[-1].train_loss:.6f}")
    return 0


def cmd_embed(cfg: dict) -> int:
    out = Path(cfg["out"])
    plan = floorplan.load_floorplan(cfg["plan"])
    config = map2vec.Map2VecConfig(layers=cfg["layers"], dim=cfg["dim"], epochs=cfg["epochs"],
                                   lr=cfg["lr"], seed=cfg["seed"], self_loops=cfg["self_loops"])
    table, log = map2vec.train_map2vec(plan, config)
    out.mkdir(parents=True, exist_ok=True)
    map2vec.save_embeddings(out / "embeddings.txt", table)
    with open(out / "embed_log.txt", "w", encoding="utf-8") as fh:
        for epoch, loss in log:
            fh.write(f"epoch {epoch} loss {loss:.6f}\n")
    _echo_config(out, "embed", cfg)
    print(f"trained {table.k}x{table.dim} embedding table")
    return 0


def cmd_zstrain(cfg: dict) -> int:
    out = Path(cfg["out"])
    plan, table, samples = _load_world(cfg)
    if cfg["split"] == "alternating":
        split = floorplan.alternating_split(plan)
    else:
        split = floorplan.load_split(cfg["split"], plan)
    train, val = _train_val(samples, cfg["val_ratio"], cfg["seed"])
    config = _gln_config(cfg, table.dim, plan.k)
    tc = _train_config(cfg)
    if cfg["mode"] == "baseline-coord":
        model, log = zeroshot.baseline_coord_model(plan, split, train, val, config, tc)
    elif cfg["mode"] == "zeroshot":
        if not cfg["embeddings"]:
            raise UsageError("zs-train in zeroshot mode needs --embeddings")
        emb = map2vec.load_embeddings(cfg["embeddings"])
        if emb.k != plan.k:
            raise datasets.DataError(f"embedding table k {emb.k} != plan k {plan.k}")
        model, log = zeroshot.train_compatibility(train, val, emb, split, config, tc)
    else:
        raise UsageError(f"unknown zs-train mode {cfg['mode']!r}")
    out.mkdir(parents=True, exist_ok=True)
    zeroshot.save_compatibility(out / "model.gln", model)
    _write_log(out / "train_log.txt", log)
    _echo_config(out, "zs-train", cfg)
    print(f"trained {model.kind} model on {len(train)} seen-class samples "
          f"({len(log) - 1} epochs)")
    return 0


def _evaluate_rankings(cfg: dict, plan, samples):
    params, config, meta = gln_model.load_checkpoint(cfg["checkpoint"])
    kind = meta.get("kind")
    if cfg["mode"] != kind:
        raise datasets.DataError(f"--mode {cfg['mode']} does not match checkpoint kind {kind}")
    if cfg["mode"] == "standard":
        probs = gln_model.predict_proba(samples, params, config)
        return np.stack([gln_model.rank_scores(row) for row in probs])
    model = zeroshot.load_compatibility(cfg["checkpoint"])
    return zeroshot.rankings_for(samples, model)


def cmd_evaluate(cfg: dict) -> int:
    out = Path(cfg["out"])
    plan, table, samples = _load_world(cfg)
    if cfg["sample_split"]:
        _, samples = datasets.standard_split(samples, cfg["sample_split"])
    rankings = _evaluate_rankings(cfg, plan, samples)
    truths = samples.labels()
    report = evalmetrics.build_report(rankings, truths, plan)
    errors = evalmetrics.prediction_errors(rankings[:, 0], truths, plan)
    max_d = float(np.ceil(floorplan.distance_matrix(plan).max()))
    curve = evalmetrics.emit_cdf_curve(errors, max_d, cfg["cdf_step"])
    out.mkdir(parents=True, exist_ok=True)
    evalmetrics.write_report(out / "report.txt", report)
    evalmetrics.write_cdf_curve(out / "cdf.txt", curve)
    _echo_config(out, "evaluate", cfg)
    for line in report.lines():
        print(line)
    return 0


def cmd_predict(cfg: dict) -> int:
    params, config, meta = gln_model.load_checkpoint(cfg["checkpoint"])
    kind = meta.get("kind")
    table = datasets.load_features(cfg["features"])
    k_best = cfg["k_best"]
    plan_k = config.out_dim if kind == "standard" else None
    if kind != "standard":
        model = zeroshot.load_compatibility(cfg["checkpoint"])
        plan_k = model.embeddings.k
    if not 1 <= k_best <= plan_k:
        raise UsageError(f"--k-best must be in 1..{plan_k}")
    lines = []
    for sample in datasets.group_samples(table):
        if kind == "standard":
            pairs = gln_model.predict_topk(sample, params, config, k_best)
        else:
            pairs = zeroshot.zero_shot_predict(sample, model, k_best)
        ranked = ",".join(f"{i}:{score:.6g}" for i, score in pairs)
        lines.append(f"{sample.group}: {ranked}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "predictions.txt").write_text(text, encoding="utf-8")
        _echo_config(out, "predict", cfg)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    sup = argparse.SUPPRESS
    parser = _Parser(prog="gln", description=__doc__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, func, **kwargs):
        p = subs.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--config", default=None, help="JSON config file with defaults")
        p.add_argument("--seed", type=int, default=sup)
        return p

    g = add("generate", cmd_generate, help="write a synthetic corridor world")
    g.add_argument("--out", required=True)
    g.add_argument("--width", type=int, default=sup)
    g.add_argument("--height", type=int, default=sup)
    g.add_argument("--rho", type=float, default=sup)
    g.add_argument("--sigma", type=float, default=sup)
    g.add_argument("--samples-per-location", dest="samples_per_location", type=int, default=sup)
    g.add_argument("--dim", type=int, default=sup)
    g.add_argument("--train-ratio", dest="train_ratio", type=float, default=sup)

    def add_model_flags(p):
        p.add_argument("--hidden", type=int, default=sup)
        p.add_argument("--layers", type=int, default=sup)
        p.add_argument("--attention", action=argparse.BooleanOptionalAction, default=sup)
        p.add_argument("--self-loops", dest="self_loops",
                       action=argparse.BooleanOptionalAction, default=sup)
        p.add_argument("--dropout", type=float, default=sup)
        p.add_argument("--epochs", type=int, default=sup)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=sup)
        p.add_argument("--lr", type=float, default=sup)
        p.add_argument("--patience", type=int, default=sup)

    t = add("train", cmd_train, help="train the supervised location classifier")
    t.add_argument("--plan", required=True)
    t.add_argument("--features", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--sample-split", dest="sample_split", default=sup)
    t.add_argument("--train-ratio", dest="train_ratio", type=float, default=sup)
    t.add_argument("--val-ratio", dest="val_ratio", type=float, default=sup)
    add_model_flags(t)

    e = add("embed", cmd_embed, help="train floor-plan location embeddings")
    e.add_argument("--plan", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--layers", type=int, default=sup)
    e.add_argument("--dim", type=int, default=sup)
    e.add_argument("--epochs", type=int, default=sup)
    e.add_argument("--lr", type=float, default=sup)
    e.add_argument("--self-loops", dest="self_loops",
                   action=argparse.BooleanOptionalAction, default=sup)

    z = add("zs-train", cmd_zstrain, help="train the compatibility model on seen classes")
    z.add_argument("--plan", required=True)
    z.add_argument("--features", required=True, help="seen-class samples only")
    z.add_argument("--out", required=True)
    z.add_argument("--embeddings", default=sup)
    z.add_argument("--split", default=sup, help="split file, or 'alternating'")
    z.add_argument("--mode", choices=["zeroshot", "baseline-coord"], default=sup)
    z.add_argument("--val-ratio", dest="val_ratio", type=float, default=sup)
    add_model_flags(z)

    v = add("evaluate", cmd_evaluate, help="run metrics on a checkpoint")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--features", required=True)
    v.add_argument("--plan", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--mode", choices=["standard", "zeroshot", "baseline-coord"], default=sup)
    v.add_argument("--sample-split", dest="sample_split", default=sup,
                   help="keep only this split file's test groups")
    v.add_argument("--cdf-step", dest="cdf_step", type=float, default=sup)

    p = add("predict", cmd_predict, help="rank locations for query groups")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--k-best", dest="k_best", type=int, default=sup)
    p.add_argument("--out", default=sup)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args.subcommand, args)
        return args.func(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
