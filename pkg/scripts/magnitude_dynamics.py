#!/usr/bin/env python3
"""Trace magnitude statistics over training for two contrasting variants.

Runs dot (magnitude free to drift) against dnorm (doc side normalized,
query magnitude carries the effective temperature) and prints the logged
magnitude means and dispersions at every evaluation step, ending with the
query-CV ratio between the two runs.

    python3 scripts/magnitude_dynamics.py
    python3 scripts/magnitude_dynamics.py --epochs 60 --eval-every 20
"""

import argparse

from magnorm import simcore
from magnorm.datagen import TaskSpec, gen_asymmetric
from magnorm.model import TrainConfig, init_encoder, train
from magnorm.objective import LossConfig

TASK = dict(
    n_docs=512,
    n_queries=2048,
    feature_dim=32,
    n_clusters=16,
    hub_fraction=0.05,
    hub_multiplicity=32,
    noise_sigma=0.1,
)


def run(task, kind_name, args):
    cfg = TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        loss=LossConfig(kind=simcore.kind_from_name(kind_name), tau=1.0, alpha=20.0),
        eval_every=args.eval_every,
    )
    encoder = init_encoder(task.doc_features.shape[1], 64, 32, False, args.seed)
    return train(task, encoder, cfg)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--eval-every", type=int, default=50)
    ap.add_argument("--kinds", default="dot,dnorm")
    args = ap.parse_args()

    task = gen_asymmetric(TaskSpec(seed=args.seed, **TASK))
    names = [n.strip() for n in args.kinds.split(",")]
    logs = {name: run(task, name, args).log for name in names}

    for name in names:
        print(f"\n{name}")
        print(f"{'step':>6}{'loss':>10}{'val@10':>9}{'q_mean':>9}{'q_cv':>8}{'d_mean':>9}{'d_cv':>8}")
        for row in logs[name]:
            print(
                f"{row.step:>6}{row.loss:>10.4f}{row.val_ndcg10:>9.3f}"
                f"{row.q_mag_mean:>9.3f}{row.q_mag_cv:>8.3f}"
                f"{row.d_mag_mean:>9.3f}{row.d_mag_cv:>8.3f}"
            )

    if "dot" in logs and "dnorm" in logs:
        base = logs["dot"][-1].q_mag_cv
        if base > 0:
            ratio = logs["dnorm"][-1].q_mag_cv / base
            print(f"\nfinal query-CV ratio dnorm/dot: {ratio:.3f}")


if __name__ == "__main__":
    main()
