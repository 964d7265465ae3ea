#!/usr/bin/env python3
"""Five-variant sweep on the reference hub task, printed as one table.

Trains every similarity variant under the same seed and data order, then
reports selected-checkpoint quality next to magnitude statistics so the
normalization-dependent differences are visible side by side.

    python3 scripts/run_reference_sweep.py --seed 0
    python3 scripts/run_reference_sweep.py --epochs 40 --kinds dot,dnorm
"""

import argparse
import time

import numpy as np

from magnorm import simcore
from magnorm.datagen import TaskSpec, gen_asymmetric
from magnorm.diagnostics import cohens_d
from magnorm.metrics import pearson
from magnorm.model import (
    TrainConfig,
    forward,
    init_encoder,
    restore_snapshot,
    select_checkpoint,
    train,
)
from magnorm.objective import LossConfig

REFERENCE_TASK = dict(
    n_docs=512,
    n_queries=2048,
    feature_dim=32,
    n_clusters=16,
    hub_fraction=0.05,
    hub_multiplicity=32,
    noise_sigma=0.1,
)


def run_one(task, kind_name, args):
    kind = simcore.kind_from_name(kind_name)
    cfg = TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        loss=LossConfig(kind=kind, tau=args.tau, alpha=args.alpha),
        eval_every=args.eval_every,
    )
    encoder = init_encoder(task.doc_features.shape[1], args.hidden, args.embed_dim, False, args.seed)
    t0 = time.perf_counter()
    result = train(task, encoder, cfg)
    elapsed = time.perf_counter() - t0
    best = select_checkpoint(result.log, result.snapshots)
    restore_snapshot(encoder, best)

    mags = np.linalg.norm(forward(encoder, task.doc_features, "doc"), axis=1)
    counts = [task.relevance_count[d] for d in task.doc_ids]
    r = pearson(mags.tolist(), counts)
    hubs = set(task.hub_ids)
    d_hub = cohens_d(
        [float(mags[i]) for i, d in enumerate(task.doc_ids) if d in hubs],
        [float(mags[i]) for i, d in enumerate(task.doc_ids) if d not in hubs],
    )
    return {
        "kind": kind_name,
        "step": best.step,
        "val": best.val_ndcg10,
        "val0": result.log[0].val_ndcg10,
        "pearson": r,
        "d_hub": d_hub,
        "doc_cv": float(mags.std() / mags.mean()),
        "sec": elapsed,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--eval-every", type=int, default=50)
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--alpha", type=float, default=20.0)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--embed-dim", type=int, default=32)
    ap.add_argument("--kinds", default="cosine,dot,qnorm,dnorm,learnable")
    args = ap.parse_args()

    task = gen_asymmetric(TaskSpec(seed=args.seed, **REFERENCE_TASK))
    hub_counts = [task.relevance_count[d] for d in task.hub_ids]
    print(
        f"task: {len(task.doc_ids)} docs, {len(task.query_ids)} queries, "
        f"{len(task.hub_ids)} hubs averaging {np.mean(hub_counts):.1f} relevant queries"
    )

    rows = [run_one(task, name.strip(), args) for name in args.kinds.split(",")]

    hdr = f"{'kind':<11}{'step':>6}{'val@sel':>9}{'val@0':>8}{'pearson':>9}{'d_hub':>8}{'doc_cv':>8}{'sec':>7}"
    print(hdr)
    print("-" * len(hdr))
    for r in rows:
        print(
            f"{r['kind']:<11}{r['step']:>6}{r['val']:>9.3f}{r['val0']:>8.3f}"
            f"{r['pearson']:>9.3f}{r['d_hub']:>8.3f}{r['doc_cv']:>8.3f}{r['sec']:>7.1f}"
        )

    dot = next((r for r in rows if r["kind"] == "dot"), None)
    if dot is not None:
        verdict = "present" if dot["pearson"] >= 0.3 and dot["d_hub"] >= 0.5 else "absent"
        print(
            f"relevance-counter effect under dot: {verdict} "
            f"(pearson {dot['pearson']:.3f}, hub d {dot['d_hub']:.3f})"
        )


if __name__ == "__main__":
    main()
