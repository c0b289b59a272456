"""Mean fold AUC of several configurations over a range of training seeds.

Used to compare the contrastive weight against the cross-entropy-only model:

    python3 scripts/beta_sweep.py --separation 1.0 --seeds 5 \
        --config beta=0 --config beta=0.5 --config beta=0.5,contrastive_scale=pairs
"""

import argparse

import numpy as np

from crossview.bundle import coerce
from crossview.data import synth_generate
from crossview.train import TrainConfig, run_cv


def parse_overrides(text: str) -> dict:
    types = TrainConfig.field_types()
    out = {}
    for part in filter(None, text.split(",")):
        key, value = part.split("=", 1)
        out[key.strip()] = coerce(value.strip(), types[key.strip()])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--separation", type=float, default=1.0)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--config", action="append", default=[], help="comma list of key=value overrides")
    args = ap.parse_args()

    data = synth_generate(n=200, separation=args.separation, label_noise=args.noise, seed=args.data_seed)
    for text in args.config or ["beta=0", "beta=0.5"]:
        over = parse_overrides(text)
        aucs = [run_cv(data, TrainConfig(**{**over, "seed": s})).mean_auc for s in range(args.seeds)]
        print(f"{text:45s} mean {np.mean(aucs):.4f}  per seed {np.round(aucs, 4).tolist()}", flush=True)


if __name__ == "__main__":
    main()
