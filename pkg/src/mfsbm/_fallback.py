"""Pure numpy implementations of the hot kernels.

Each function here has a compiled twin in ``_core.pyx`` with the same
signature and the same arithmetic, so the two agree to rounding.
"""
import numpy as np

_TWO_PI = 2.0 * np.pi


def chain_weights(parents, times, x, normals):
    """Place the integration points of a batch of index triples.

    parents : int array (T, K, 2), parent of each of the two slots feeding
        variable k; 0 is the evaluation point, b >= 1 is variable b.
    times : (M, K+1) parent times; column 0 is the evaluation time, column k the
        time of variable k (decreasing along a row).
    x : evaluation point.
    normals : (M, K) standard normals.

    Variable k is drawn from the product of its two Gaussian factors; the
    leftover normalising constant p_{a+b}(u - v) multiplies the weight.
    Returns (points (T, M, K), weights (T, M)).
    """
    T, K, _ = parents.shape
    M = times.shape[0]
    pts = np.empty((T, M, K + 1))
    pts[:, :, 0] = x
    w = np.ones((T, M))
    tt = times.T  # (K+1, M)
    for k in range(1, K + 1):
        pu = parents[:, k - 1, 0]
        pv = parents[:, k - 1, 1]
        a = tt[pu] - tt[k]  # (T, M)
        b = tt[pv] - tt[k]
        u = np.take_along_axis(pts, np.broadcast_to(pu[:, None, None], (T, M, 1)), axis=2)[:, :, 0]
        v = np.take_along_axis(pts, np.broadcast_to(pv[:, None, None], (T, M, 1)), axis=2)[:, :, 0]
        s = a + b
        d = u - v
        w *= np.exp(-0.5 * d * d / s) / np.sqrt(_TWO_PI * s)
        mean = (b * u + a * v) / s
        sd = np.sqrt(a * b / s)
        pts[:, :, k] = mean + sd * normals[:, k - 1]
    return pts[:, :, 1:], w


def advance_segments(pos, rem, rate, expo, normals, coins):
    """One round of exact event resolution inside a time step.

    A segment is a particle with ``rem`` time left in the current step and a
    frozen branching ``rate``. Its next event comes after expo/rate; if that
    is beyond ``rem`` it just diffuses to the end of the step. Otherwise it
    diffuses up to the event and is replaced by 0 or 2 children (coins < 0.5
    means 0) that start there with the leftover time.

    Returns (new_pos, event_time, died, n_children) per segment, where
    event_time is the time elapsed inside the step.
    """
    with np.errstate(divide="ignore"):
        tau = np.where(rate > 0, expo / rate, np.inf)
    died = tau < rem
    dt = np.where(died, tau, rem)
    new_pos = pos + np.sqrt(dt) * normals
    n_children = np.where(died, np.where(coins < 0.5, 0, 2), 1)
    return new_pos, dt, died, n_children


def power_sums(pos, replica, n_replicas, points, delta, max_power, lo, hi):
    """Per replica and point, sums over particles of p_delta(point - pos)^j, j = 1..max_power.

    pos must be sorted; only particles lo[g]:hi[g] contribute to point g.
    Returns array (max_power, n_replicas, len(points)).
    """
    out = np.zeros((max_power, n_replicas, len(points)))
    norm = 1.0 / np.sqrt(_TWO_PI * delta)
    for g, y in enumerate(points):
        d = y - pos[lo[g]:hi[g]]
        rep = replica[lo[g]:hi[g]]
        phi = norm * np.exp(-0.5 * d * d / delta)
        acc = phi.copy()
        for j in range(max_power):
            if j:
                acc = acc * phi
            out[j, :, g] = np.bincount(rep, weights=acc, minlength=n_replicas)
    return out
