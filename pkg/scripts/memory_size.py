"""Memory-size sweep: async mushrooms runs with c = 5, 10, 15 on identical seeds.

Writes mean_re_by_memory.csv and prints the mean number of RE increases per c.

    python scripts/memory_size.py [--config configs/mushrooms_memory.toml] [--active 2] [--out runs/memory]
"""

import argparse
import dataclasses
from pathlib import Path

from lbfgs_admm.config import load_config
from lbfgs_admm.experiments import memory_sweep

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=ROOT / "configs" / "mushrooms_memory.toml")
    ap.add_argument("--active", type=int, default=None, help="agents woken per tick (overrides config)")
    ap.add_argument("--memories", default="5,10,15")
    ap.add_argument("--out", default="runs/memory")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.active is not None:
        cfg.schedule = dataclasses.replace(cfg.schedule, active_count=args.active)
    memories = [int(c) for c in args.memories.split(",")]
    res = memory_sweep(cfg, memories)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    iters = res[memories[0]]["iters"]
    with open(out / "mean_re_by_memory.csv", "w") as fh:
        fh.write("iter," + ",".join(f"c{c}" for c in memories) + "\n")
        for k, t in enumerate(iters):
            fh.write(f"{t}," + ",".join(repr(float(res[c]["mean_re"][k])) for c in memories) + "\n")
    for c in memories:
        r = res[c]
        print(f"c = {c:2d}: mean RE increases {r['mean_increases']:.1f}  final mean RE {r['mean_re'][-1]:.3e}")
    print(f"wrote {out / 'mean_re_by_memory.csv'}")


if __name__ == "__main__":
    main()
