"""
Graph regularizer versus its continuum limit
============================================

Sample M points on the unit square, connect those closer than C_r * eps and
compare the normalized graph regularizer of a ramp with the Dirichlet
energy of the same ramp.  The ratio settles as M grows.
"""

from oglr import diffusion_lab as dl

for kind in ("identity", "curved"):
    print(kind)
    for t in dl.convergence_experiment(kind, (250, 500, 1000, 2000, 4000), gamma=1.0):
        print(f"  M {t.m:5d}  eps {t.epsilon:.3f}  S_G {t.s_g:10.2f}  ratio {t.ratio:.4f}")
