#!/usr/bin/env python3
"""Reproduce the sampling-method comparison: PSNR and worst-percentile PSNR
versus samples per pixel for unstratified / stratified / robust sampling,
scored against the 384-sample reference.

Example:
    python scripts/run_sampler_study.py --scene two-spheres --beta 0.003 \
        --checkpoint out/proposal.vsmp --spp 2,4,8,16,32 --out-dir out/study
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from volsampler.bench import BenchSpec, run_bench
from volsampler.geometry import default_camera
from volsampler.scenes import make_scene


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scene", default="two-spheres")
    ap.add_argument("--beta", type=float, default=0.003)
    ap.add_argument("--resolution", type=int, default=128)
    ap.add_argument("--spp", default="2,4,8,16,32")
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--checkpoint", default="",
                    help="trained proposal checkpoint; omit for probe-lift mode")
    ap.add_argument("--workers", type=int, default=2)
    ap.add_argument("--out-dir", default="out/study")
    args = ap.parse_args()

    spec = BenchSpec(
        scene=make_scene(args.scene, beta=args.beta),
        camera=default_camera(args.resolution, args.resolution),
        methods=("unstratified", "stratified", "robust"),
        spp_list=tuple(int(v) for v in args.spp.split(",")),
        trials=args.trials, seed=args.seed,
        proposal_source="checkpoint" if args.checkpoint else "probe-lift",
        checkpoint=args.checkpoint, workers=args.workers)
    rows, _ = run_bench(spec, out_dir=args.out_dir)

    print(f"\n{'method':>14s} {'spp':>4s} {'psnr':>8s} {'worst10':>8s} "
          f"{'worst1':>8s} {'worst0.1':>8s}")
    agg = {}
    for r in rows:
        agg.setdefault((r.method, r.spp), []).append(r)
    for (method, spp), rs in sorted(agg.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        print(f"{method:>14s} {spp:>4d} "
              f"{np.mean([r.psnr for r in rs]):>8.2f} "
              f"{np.mean([r.worst10 for r in rs]):>8.2f} "
              f"{np.mean([r.worst1 for r in rs]):>8.2f} "
              f"{np.mean([r.worst01 for r in rs]):>8.2f}")
    print(f"\nCSV and previews in {args.out_dir}/")


if __name__ == "__main__":
    main()
