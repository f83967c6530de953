"""Quotient growth below the theory exponent on the trapped model.

Evaluates the smoothing quotient for quasimode data at several s and prints the ratio of
consecutive quotients per doubling of k.  Below the sharp exponent the quotient should
grow without bound; a pure power law gives a ratio of 2^(2 (theory - s)) per doubling
(quotients compare squared norms).

    python scripts/sharpness_probe.py [--kmax 128] [--s 0.4 0.5 0.6]
"""
import argparse

import numpy as np

from warpsmooth import smoothing as sm
from warpsmooth.geometry import ManifoldModel, RadialGrid

ap = argparse.ArgumentParser()
ap.add_argument("--kmax", type=int, default=128)
ap.add_argument("--s", type=float, nargs="+", default=[0.4, 0.5, 0.6])
ap.add_argument("--T", type=float, default=1.0)
a = ap.parse_args()

model = ManifoldModel.default()
grid = RadialGrid(8.0, 4607)
ks = [2 ** p for p in range(3, int(np.log2(a.kmax)) + 1)]
cfg = sm.EvolveConfig(T=a.T)
rows = sm.sweep(model, sm.QUASIMODE_FAMILY, ks, grid, cfg, tuple(a.s))
print("theory exponent", sm.theory_exponent(model.m))
print("k      " + "".join(f"  s={s:<8.2f}" for s in a.s))
for k, recs in zip(ks, rows):
    print(f"{k:<6d} " + "".join(f"  {r.quotient:<10.4g}" for r in recs))
Q = np.array([[r.quotient for r in recs] for recs in rows])
print("ratio per doubling")
for i in range(1, len(ks)):
    print(f"{ks[i - 1]:>4d}->{ks[i]:<4d}" + "".join(f"  {v:<10.3f}" for v in Q[i] / Q[i - 1]))
