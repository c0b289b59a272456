"""Command line: synth, train, ablate, embed-export.

Exit codes: 0 success, 1 validation error, 2 training divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import ShapeError
from .bundle import (
    BundleError,
    ConfigFileError,
    atomic_write_text,
    csv_text,
    dumps_json,
    fmt,
    format_run_config,
    load_run_config,
    read_bundle,
    write_bundle,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import CLASS_NAMES, DatasetError, synth_generate
from .encoders import ConfigError, encode
from .graph import add_self_loops, knn_graph
from .metrics import MetricError
from .train import LOSS_COLUMNS, DivergenceError, TrainConfig, forward, run_cv

log = logging.getLogger("crossview")

VALIDATION_ERRORS = (
    BundleError,
    ConfigFileError,
    ConfigError,
    CheckpointError,
    DatasetError,
    MetricError,
    ShapeError,
    ValueError,
)


def _mkdir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise BundleError(f"cannot create output directory {p}: {e}") from e
    return p


def _config(args) -> TrainConfig:
    cfg = load_run_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = TrainConfig(**{**cfg.to_dict(), "seed": args.seed})
    return cfg


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    data = synth_generate(
        n=args.n,
        image_size=args.image_size,
        separation=args.separation,
        label_noise=args.noise,
        seed=seed,
    )
    meta = {
        "generator": "synth_generate",
        "seed": seed,
        "separation": args.separation,
        "label_noise": args.noise,
        "image_size": args.image_size,
    }
    out = write_bundle(data, args.out, meta)
    print(f"wrote {data.n} patients to {out}")
    return 0


def _roc_csv(points) -> str:
    return csv_text(["fpr", "tpr", "threshold"], ([fmt(a), fmt(b), fmt(c)] for a, b, c in points))


def train_to_dir(data, cfg: TrainConfig, out: Path) -> dict:
    """Run the protocol and write metrics, loss curves, ROC points, predictions and checkpoints."""
    res = run_cv(data, cfg, keep_states=True)
    for k, (rep, state) in enumerate(zip(res.folds, res.states)):
        rows = ([str(e), *(fmt(h[c]) for c in LOSS_COLUMNS)] for e, h in enumerate(rep.loss_history))
        atomic_write_text(out / f"losses_fold{k}.csv", csv_text(["epoch", *LOSS_COLUMNS], rows))
        atomic_write_text(out / f"roc_fold{k}.csv", _roc_csv(rep.roc_points))
        save_checkpoint(out / f"checkpoint_fold{k}.npz", cfg, state, res.encoder, res.masks[k][0], k)
    atomic_write_text(out / "roc_pooled.csv", _roc_csv(res.pooled.roc_points))
    fold_of = np.empty(data.n, dtype=int)
    for k, (_, test) in enumerate(res.masks):
        fold_of[test] = k
    pred_rows = (
        [data.ids[i], CLASS_NAMES[int(data.class_index[i])], str(fold_of[i]), *map(fmt, p)]
        for i, p in zip(res.test_index, res.probabilities)
    )
    atomic_write_text(
        out / "predictions.csv",
        csv_text(["id", "label", "fold", *(f"p_{c}" for c in CLASS_NAMES)], pred_rows),
    )
    report = {"config": cfg.to_dict(), **res.to_dict()}
    atomic_write_text(out / "metrics.json", dumps_json(report))
    atomic_write_text(out / "config.txt", format_run_config(cfg))
    return report


def cmd_train(args) -> int:
    cfg = _config(args)
    data = read_bundle(args.data)
    out = _mkdir(args.out)
    report = train_to_dir(data, cfg, out)
    pooled = report["pooled"]
    print(
        f"pooled accuracy {pooled['accuracy']:.4f}  pooled AUC {pooled['auc']:.4f}  "
        f"fold AUC {report['fold_auc_mean']:.4f} +/- {report['fold_auc_std']:.4f}"
    )
    return 0


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _words(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


ABLATION_COLUMNS = [
    "gnn",
    "backbone",
    "beta",
    "delta",
    "accuracy",
    "f1_normal",
    "f1_abnormal",
    "sensitivity_normal",
    "sensitivity_abnormal",
    "precision_normal",
    "precision_abnormal",
    "auc_pooled",
    "auc_fold_mean",
    "error",
]


def ablation_rows(data, base: TrainConfig, gnns, backbones, betas, deltas):
    for gnn, backbone, beta, delta in itertools.product(gnns, backbones, betas, deltas):
        head = [gnn, backbone, fmt(beta), fmt(delta)]
        try:
            cfg = TrainConfig(**{**base.to_dict(), "gnn": gnn, "backbone": backbone, "beta": beta, "delta": delta})
            res = run_cv(data, cfg)
        except (DivergenceError, *VALIDATION_ERRORS) as e:
            log.warning("ablation cell %s failed: %s", head, e)
            yield head + [""] * (len(ABLATION_COLUMNS) - 5) + [type(e).__name__ + ": " + str(e)]
            continue
        p = res.pooled
        yield head + [
            fmt(p.accuracy),
            *map(fmt, p.f1),
            *map(fmt, p.sensitivity),
            *map(fmt, p.precision),
            fmt(p.auc) if p.auc is not None else "",
            fmt(res.mean_auc),
            "",
        ]


def cmd_ablate(args) -> int:
    base = _config(args)
    if args.epochs is not None:
        base = TrainConfig(**{**base.to_dict(), "epochs": args.epochs})
    gnns, backbones = _words(args.gnn), _words(args.backbone)
    betas, deltas = _floats(args.beta), _floats(args.delta)
    if not (gnns and backbones and betas and deltas):
        raise ValueError("ablation grid is empty")
    data = read_bundle(args.data)
    out = _mkdir(args.out)
    rows = list(ablation_rows(data, base, gnns, backbones, betas, deltas))
    atomic_write_text(out / "ablation.csv", csv_text(ABLATION_COLUMNS, rows))
    print(f"wrote {len(rows)} ablation rows to {out / 'ablation.csv'}")
    return 0


def embed_export(checkpoint, data) -> tuple[np.ndarray, np.ndarray]:
    """Fused embeddings and similarity matrix of a saved fold model over the whole cohort."""
    cfg, state, encoder, _ = load_checkpoint(checkpoint)
    if data.embeddings is not None:
        Q = np.asarray(data.embeddings, dtype=np.float64)
    else:
        Q = encode(data.images, encoder, cfg.encoder_config())
    if Q.shape[1] != state.image_mean.shape[0] or data.clinical.shape[1] != state.clinical_mean.shape[0]:
        raise ShapeError(
            f"checkpoint expects {state.image_mean.shape[0]} image and {state.clinical_mean.shape[0]} clinical "
            f"features, dataset has {Q.shape[1]} and {data.clinical.shape[1]}"
        )
    Xm = (Q - state.image_mean) / state.image_std
    Xf = (data.clinical - state.clinical_mean) / state.clinical_std
    gm = add_self_loops(knn_graph(Xm, cfg.knn_k, cfg.metric))
    gf = add_self_loops(knn_graph(Xf, cfg.knn_k, cfg.metric))
    fw = forward(state, gm, gf, Xm, Xf, cfg.normalize_similarity)
    return fw.Zhat.data, fw.S.data


def cmd_embed_export(args) -> int:
    data = read_bundle(args.data)
    Z, S = embed_export(args.checkpoint, data)
    out = _mkdir(args.out)
    labels = [CLASS_NAMES[c] for c in data.class_index]
    rows = ([pid, lab, *map(fmt, z)] for pid, lab, z in zip(data.ids, labels, Z))
    atomic_write_text(out / "embeddings.csv", csv_text(["id", "label", *(f"z{j}" for j in range(Z.shape[1]))], rows))
    atomic_write_text(out / "similarity.csv", csv_text(["id", *data.ids], ([pid, *map(fmt, r)] for pid, r in zip(data.ids, S))))
    print(f"wrote {Z.shape[0]} fused embeddings and a {S.shape[0]}x{S.shape[1]} similarity matrix to {out}")
    return 0


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides the config file)")
    common.add_argument("--config", default=None, help="run config file of key = value lines")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="crossview", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset bundle")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--separation", type=float, default=3.0)
    s.add_argument("--noise", type=float, default=0.05, help="fraction of labels flipped")
    s.add_argument("--image-size", type=int, default=16)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="cross-validate on a bundle")
    t.add_argument("--data", required=True, help="dataset bundle directory")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", parents=[common], help="grid over gnn, backbone, beta, delta")
    a.add_argument("--data", required=True)
    a.add_argument("--gnn", default="gat,gcn")
    a.add_argument("--backbone", default="conv")
    a.add_argument("--beta", default="0,0.5")
    a.add_argument("--delta", default="0.2")
    a.add_argument("--epochs", type=int, default=None)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("embed-export", parents=[common], help="export fused embeddings and similarities")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_embed_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
