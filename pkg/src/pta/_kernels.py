"""Compiled fine-integration loops for the built-in models.

Each built-in system carries a small integer kernel id plus a packed
parameter vector; every hot loop (convergence-stopped running averages,
fixed windows, closest-point tracking, long reference runs) lives here as a
single njit function branching on that id. Flags: ``coupled`` switches the
order-epsilon terms (drift and load motion) on or off, ``frozen`` pins the
load only. All math is strict float64; no RNG, no threads, so repeated calls
are bitwise reproducible.
"""

import numpy as np
from numba import njit

MODEL_ROTATING = 0
MODEL_SPRINGS = 1
MODEL_RELAX = 2

INTEG_RK4 = 0
INTEG_VERLET = 1

# springs parameter packing
P_K1, P_M1, P_K2, P_M2, P_ETA, P_C1, P_C2, P_TF, P_TS = range(9)


@njit(cache=True, nogil=True, inline="always")
def _deriv(model, prm, eps, coupled, frozen, x, l, dx, dl):
    if model == MODEL_ROTATING:
        r = np.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3])
        dx[0] = (1.0 - r) * x[0] + x[2]
        dx[1] = (1.0 - r) * x[1] + x[3]
        dx[2] = (1.0 - r) * x[2] - x[0]
        dx[3] = (1.0 - r) * x[3] - x[1]
        if coupled:
            dx[0] += eps * (-x[1])
            dx[1] += eps * x[0]
    elif model == MODEL_SPRINGS:
        tf = prm[P_TF]
        dash = prm[P_ETA] * (x[3] - x[1])
        dx[0] = tf * x[1]
        dx[1] = -tf * ((prm[P_K1] * (x[0] - l[0]) - dash) / prm[P_M1])
        dx[2] = tf * x[3]
        dx[3] = -tf * ((prm[P_K2] * (x[2] - l[1]) + dash) / prm[P_M2])
        if coupled and not frozen:
            dl[0] = eps * prm[P_TS] * prm[P_C1]
            dl[1] = eps * prm[P_TS] * prm[P_C2]
        else:
            dl[0] = 0.0
            dl[1] = 0.0
    else:
        y = x[0]
        z = x[1]
        w = x[2]
        zy = z - y
        ring = 0.125 - w * w - zy * zy
        dx[0] = -l[0] + y - y * y * y
        dx[1] = w + zy * ring
        dx[2] = -zy + w * ring
        if coupled and not frozen:
            dl[0] = eps * z
        else:
            dl[0] = 0.0


@njit(cache=True, nogil=True, inline="always")
def _spring_acc(prm, x1, y1, x2, y2, w1, w2, out):
    dash = prm[P_ETA] * (y2 - y1)
    out[0] = -prm[P_TF] * ((prm[P_K1] * (x1 - w1) - dash) / prm[P_M1])
    out[1] = -prm[P_TF] * ((prm[P_K2] * (x2 - w2) + dash) / prm[P_M2])


@njit(cache=True, nogil=True)
def _step(model, integ, prm, eps, coupled, frozen, n, m, x, l, ds,
          kx, kl, xt, lt, acc):
    if integ == INTEG_VERLET:
        tf = prm[P_TF]
        x1 = x[0]
        y1 = x[1]
        x2 = x[2]
        y2 = x[3]
        w1 = l[0]
        w2 = l[1]
        _spring_acc(prm, x1, y1, x2, y2, w1, w2, acc)
        a1 = acc[0]
        a2 = acc[1]
        x1n = x1 + ds * tf * y1 + 0.5 * ds * ds * tf * a1
        x2n = x2 + ds * tf * y2 + 0.5 * ds * ds * tf * a2
        _spring_acc(prm, x1n, y1 + ds * a1, x2n, y2 + ds * a2, w1, w2, acc)
        y1h = y1 + 0.5 * ds * (a1 + acc[0])
        y2h = y2 + 0.5 * ds * (a2 + acc[1])
        _spring_acc(prm, x1n, y1h, x2n, y2h, w1, w2, acc)
        x[0] = x1n
        x[1] = y1 + 0.5 * ds * (a1 + acc[0])
        x[2] = x2n
        x[3] = y2 + 0.5 * ds * (a2 + acc[1])
        if coupled and not frozen:
            l[0] = w1 + ds * eps * prm[P_TS] * prm[P_C1]
            l[1] = w2 + ds * eps * prm[P_TS] * prm[P_C2]
        return
    # classical RK4 on (x, l) jointly
    _deriv(model, prm, eps, coupled, frozen, x, l, kx[0], kl[0])
    for i in range(n):
        xt[i] = x[i] + 0.5 * ds * kx[0, i]
    for j in range(m):
        lt[j] = l[j] + 0.5 * ds * kl[0, j]
    _deriv(model, prm, eps, coupled, frozen, xt, lt, kx[1], kl[1])
    for i in range(n):
        xt[i] = x[i] + 0.5 * ds * kx[1, i]
    for j in range(m):
        lt[j] = l[j] + 0.5 * ds * kl[1, j]
    _deriv(model, prm, eps, coupled, frozen, xt, lt, kx[2], kl[2])
    for i in range(n):
        xt[i] = x[i] + ds * kx[2, i]
    for j in range(m):
        lt[j] = l[j] + ds * kl[2, j]
    _deriv(model, prm, eps, coupled, frozen, xt, lt, kx[3], kl[3])
    for i in range(n):
        x[i] += (ds / 6.0) * (kx[0, i] + 2.0 * kx[1, i] + 2.0 * kx[2, i] + kx[3, i])
    for j in range(m):
        l[j] += (ds / 6.0) * (kl[0, j] + 2.0 * kl[1, j] + 2.0 * kl[2, j] + kl[3, j])


@njit(cache=True, nogil=True, inline="always")
def _load_rate(model, prm, x, l, out):
    # slow-form load rate L(x, l): dl/dt on the slow clock
    if model == MODEL_SPRINGS:
        out[0] = prm[P_TS] * prm[P_C1]
        out[1] = prm[P_TS] * prm[P_C2]
    elif model == MODEL_RELAX:
        out[0] = x[1]


@njit(cache=True, nogil=True, inline="always")
def _measure(model, prm, x, l, norms, out):
    if model == MODEL_ROTATING:
        for i in range(4):
            out[i] = x[i] / norms[i]
            out[4 + i] = x[i] * x[i] / norms[4 + i]
    elif model == MODEL_SPRINGS:
        s1 = x[0] - l[0]
        s2 = x[2] - l[1]
        out[0] = 0.5 * (prm[P_M1] * x[1] * x[1] + prm[P_M2] * x[3] * x[3]) / norms[0]
        out[1] = (0.5 * prm[P_K1] * s1 * s1 + 0.5 * prm[P_K2] * s2 * s2) / norms[1]
        out[2] = -prm[P_K2] * s2 / norms[2]
        out[3] = l[0] / norms[3]
        out[4] = l[1] / norms[4]
    else:
        out[0] = x[0] / norms[0]
        out[1] = x[1] / norms[1]
        out[2] = x[2] / norms[2]
        out[3] = l[0] / norms[3]


@njit(cache=True, nogil=True)
def _work(n, m):
    return (np.empty((4, n)), np.empty((4, max(m, 1))), np.empty(n),
            np.empty(max(m, 1)), np.empty(2))


@njit(cache=True, nogil=True, inline="always")
def _conv_check(hist, count, n_meas, k, p, tol1, tol2, gate):
    size = hist.shape[0]
    ia = count - p * k
    if ia < 1:
        ia = 1
    for c in range(n_meas):
        if not gate[c]:
            continue
        anchor = hist[(ia - 1) % size, c]
        small = np.abs(anchor) < tol2
        for j in range(p + 1):
            ij = count - j * k
            if ij < 1:
                ij = 1
            mj = hist[(ij - 1) % size, c]
            if small:
                if np.abs(mj) > tol2:
                    return False
            else:
                if np.abs(mj - anchor) > tol1 * np.abs(anchor):
                    return False
    return True


@njit(cache=True, nogil=True)
def k_converge(model, integ, prm, norms, n, m, n_meas, eps, coupled, frozen,
               x0, l0, ds, burn, n_min, n_max, k, p, tol1, tol2, gate):
    """Run until the running averages of all measurements converge.

    Returns (R, load_rate, n_total, x_end, l_end, converged); n_total counts
    every fine increment including the burn-in, (x_end, l_end) is the state
    at the convergence sample, and load_rate is the averaged slow-form load
    rate over the same samples (the measure average of L, which drives the
    limit load motion).
    """
    x = x0.copy()
    l = l0.copy()
    kx, kl, xt, lt, acc = _work(n, m)
    mv = np.empty(n_meas)
    lr = np.zeros(max(m, 1))
    lr_sums = np.zeros(max(m, 1))
    sums = np.zeros(n_meas)
    hist = np.empty((p * k + 1, n_meas))
    count = 0
    total = 0
    for _ in range(burn):
        _step(model, integ, prm, eps, coupled, frozen, n, m, x, l, ds,
              kx, kl, xt, lt, acc)
        total += 1
    while count < n_max:
        _step(model, integ, prm, eps, coupled, frozen, n, m, x, l, ds,
              kx, kl, xt, lt, acc)
        total += 1
        count += 1
        _measure(model, prm, x, l, norms, mv)
        if m > 0:
            _load_rate(model, prm, x, l, lr)
            for j in range(m):
                lr_sums[j] += lr[j]
        for c in range(n_meas):
            sums[c] += mv[c]
            hist[(count - 1) % hist.shape[0], c] = sums[c] / count
        if (count >= n_min and count % k == 0
                and _conv_check(hist, count, n_meas, k, p, tol1, tol2, gate)):
            return sums / count, lr_sums[:m] / count, total, x, l, True
    return sums / count, lr_sums[:m] / count, total, x, l, False


@njit(cache=True, nogil=True)
def k_window(model, integ, prm, norms, n, m, n_meas, eps, coupled, frozen,
             x0, l0, ds, n_steps, burn):
    """Mean of the measurements over post-step samples burn+1 .. n_steps."""
    x = x0.copy()
    l = l0.copy()
    kx, kl, xt, lt, acc = _work(n, m)
    mv = np.empty(n_meas)
    sums = np.zeros(n_meas)
    for i in range(n_steps):
        _step(model, integ, prm, eps, coupled, frozen, n, m, x, l, ds,
              kx, kl, xt, lt, acc)
        if i >= burn:
            _measure(model, prm, x, l, norms, mv)
            for c in range(n_meas):
                sums[c] += mv[c]
    return sums / (n_steps - burn), x, l


@njit(cache=True, nogil=True)
def k_project(model, integ, prm, n, m, eps, coupled, frozen,
              x0, l0, ds, max_steps, xref, lref, weights):
    """Trajectory sample closest to (xref, lref) within max_steps increments.

    Distance is Euclidean on the weighted (nondimensionalized) state; ties
    break toward the earliest sample; the starting state is a candidate.
    """
    x = x0.copy()
    l = l0.copy()
    kx, kl, xt, lt, acc = _work(n, m)
    best_d2 = 0.0
    for i in range(n):
        best_d2 += (weights[i] * (x[i] - xref[i])) ** 2
    for j in range(m):
        best_d2 += (weights[n + j] * (l[j] - lref[j])) ** 2
    best_x = x.copy()
    best_l = l.copy()
    best_i = 0
    for step in range(1, max_steps + 1):
        _step(model, integ, prm, eps, coupled, frozen, n, m, x, l, ds,
              kx, kl, xt, lt, acc)
        d2 = 0.0
        for i in range(n):
            d2 += (weights[i] * (x[i] - xref[i])) ** 2
        for j in range(m):
            d2 += (weights[n + j] * (l[j] - lref[j])) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best_i = step
            for i in range(n):
                best_x[i] = x[i]
            for j in range(m):
                best_l[j] = l[j]
    return best_x, best_l, best_i, best_d2


@njit(cache=True, nogil=True)
def k_collect(model, integ, prm, n, m, eps, coupled, frozen,
              x0, l0, ds, n_steps, stride):
    """Materialize a (strided) trajectory including the initial sample."""
    n_keep = n_steps // stride + 1
    xs = np.empty((n_keep, n))
    ls = np.empty((n_keep, m))
    x = x0.copy()
    l = l0.copy()
    kx, kl, xt, lt, acc = _work(n, m)
    for i in range(n):
        xs[0, i] = x[i]
    for j in range(m):
        ls[0, j] = l[j]
    kept = 1
    for step in range(1, n_steps + 1):
        _step(model, integ, prm, eps, coupled, frozen, n, m, x, l, ds,
              kx, kl, xt, lt, acc)
        if step % stride == 0 and kept < n_keep:
            for i in range(n):
                xs[kept, i] = x[i]
            for j in range(m):
                ls[kept, j] = l[j]
            kept += 1
    return xs[:kept], ls[:kept], x, l


@njit(cache=True, nogil=True)
def k_fine_windows(model, integ, prm, norms, n, m, n_meas, eps,
                   x0, l0, ds, total_steps, starts, n_prime):
    """One long coupled run accumulating means over disjoint sample windows.

    Window g covers post-step samples starts[g]+1 .. starts[g]+n_prime;
    starts must be sorted and non-overlapping.
    """
    x = x0.copy()
    l = l0.copy()
    kx, kl, xt, lt, acc = _work(n, m)
    mv = np.empty(n_meas)
    n_win = starts.shape[0]
    means = np.zeros((n_win, n_meas))
    g = 0
    for step in range(1, total_steps + 1):
        _step(model, integ, prm, eps, True, False, n, m, x, l, ds,
              kx, kl, xt, lt, acc)
        while g < n_win and step > starts[g] + n_prime:
            g += 1
        if g < n_win and starts[g] < step <= starts[g] + n_prime:
            _measure(model, prm, x, l, norms, mv)
            for c in range(n_meas):
                means[g, c] += mv[c]
    return means / n_prime, x, l
