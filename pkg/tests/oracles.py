"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np

from brdfdiff.brdf import HalfDiffAngles, valid_angles
from brdfdiff.field import N_PARAMS, FieldBatch, _forward, nf_init, nf_loss

KINK_MARGIN = 1e-3


def central_difference(fn, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def random_field_config(rng, n_points=6):
    """Random weights and batch with every ReLU input and residual away from 0.

    Configurations landing within ``KINK_MARGIN`` of a kink are redrawn so the
    loss is smooth over the finite-difference stencil.
    """
    ang = valid_angles()
    while True:
        w = nf_init(seed=int(rng.integers(1 << 31))).flat.copy()
        w += rng.normal(0, 0.1, N_PARAMS)
        idx = rng.choice(ang.theta_h.size, n_points, replace=False)
        a = HalfDiffAngles(*(x[idx] for x in ang))
        batch = FieldBatch.from_samples(a, rng.exponential(0.5, (n_points, 3)))
        z1, _, z2, _, o = _forward(w, batch.inputs)
        r = batch.log_targets - np.log1p(np.exp(o) * batch.cos_i[:, None])
        if min(np.abs(z1).min(), np.abs(z2).min(), np.abs(r).min()) > KINK_MARGIN and batch.cos_i.min() > 0.05:
            return w, batch


def fd_gradient(w, batch, h=1e-5):
    return central_difference(lambda v: nf_loss(v, batch), w, h)


def brute_mmd(R, S, d):
    return sum(min(d(r, s) for s in S) for r in R) / len(R)


def brute_cov(R, S, d):
    covered = set()
    for s in S:
        best = 0
        for j in range(1, len(R)):
            if d(R[j], s) < d(R[best], s):
                best = j
        covered.add(best)
    return len(covered) / len(R)


def brute_one_nna(R, S, d):
    pool = [(x, 0) for x in R] + [(x, 1) for x in S]
    hits = 0
    for i, (x, lab) in enumerate(pool):
        best = None
        for j, (y, _) in enumerate(pool):
            if j == i:
                continue
            if best is None or d(x, y) < d(x, pool[best][0]):
                best = j
        hits += pool[best][1] == lab
    return hits / len(pool)
