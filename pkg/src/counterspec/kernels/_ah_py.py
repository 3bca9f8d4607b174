"""Pure-numpy Arrow-Hurwicz loop for all-quadratic programs.

Reference implementation and fallback for the compiled ``_ah_cy`` module;
both share the signature and status codes below.
"""
import numpy as np

CONVERGED, ITERATION_CAP, DIVERGED = 0, 1, 2


# overflow surfaces as a non-finite iterate and the DIVERGED status
@np.errstate(over="ignore", invalid="ignore")
def arrow_hurwicz_qp(P0, q0, Pc, qc, rc, group, m_s, inv_scale, s_fixed,
                     counterfactual, x0, lam0, eta, max_iter, tol, trace_stride):
    m = Pc.shape[0]
    x = np.array(x0, dtype=float)
    lam = np.array(lam0, dtype=float)
    group = np.asarray(group, dtype=np.intp)
    cap = max_iter // trace_stride + 2
    tr_it = np.empty(cap, dtype=np.int64)
    tr_x = np.empty((cap, x.size))
    tr_lam = np.empty((cap, m))
    tr_s = np.empty((cap, m_s))
    tr_res = np.empty((cap, 4))
    k = 0
    res = np.empty(4)
    status = ITERATION_CAP
    t = 0
    while True:
        if counterfactual:
            agg = np.bincount(group, weights=lam, minlength=m_s)
            s = inv_scale * agg
        else:
            s = s_fixed
        Px = Pc @ x
        f = 0.5 * (Px @ x) + qc @ x + rc
        grads = Px + qc
        g = P0 @ x + q0 + lam @ grads
        gap = f - s[group]
        res[0] = np.sqrt(g @ g)
        res[1] = max(gap.max(), 0.0)
        res[2] = np.abs(lam * gap).max()
        if counterfactual:
            d = s / inv_scale - agg
            res[3] = np.sqrt(d @ d)
            worst = res.max()
        else:
            res[3] = np.nan
            worst = res[:3].max()
        done = worst <= tol
        if done:
            status = CONVERGED
        elif t >= max_iter:
            status = ITERATION_CAP
            done = True
        if t % trace_stride == 0 or done:
            tr_it[k] = t
            tr_x[k] = x
            tr_lam[k] = lam
            tr_s[k] = s
            tr_res[k] = res
            k += 1
        if done:
            break
        x_new = x - eta * g
        lam_new = np.maximum(lam + eta * gap, 0.0)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(lam_new))):
            status = DIVERGED
            break
        x, lam = x_new, lam_new
        t += 1
    return (x, lam, np.array(s, dtype=float), res.copy(), t, status,
            tr_it[:k], tr_x[:k], tr_lam[:k], tr_s[:k], tr_res[:k])
