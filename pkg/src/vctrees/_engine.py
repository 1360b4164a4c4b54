"""Numba kernels for the tree-ensemble Gibbs sweep.

Tree storage is flat and stacked: every tree owns `cap` node slots in the
stacked arrays, addressed as feat[t, node].  Node 0 is always the root.
feat codes: >= 0 split axis, -1 leaf, -2 free slot.  Free slots form a
per-tree stack so node ids stay stable across grow/prune (observation ->
leaf caches never need renumbering).

All kernels draw from a numpy Generator passed in by the caller; draw order
is fixed by the code path, which is what makes chains bit-reproducible.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LEAF = -1
FREE = -2

# counters columns
GROW_PROP, GROW_ACC, PRUNE_PROP, PRUNE_ACC, REJ_NONFINITE, REJ_CAPACITY = range(6)


@njit(cache=True, inline="always")
def _split_prob(d, variant, base, gamma, maxdepth):
    """Split probability at depth d; variant 0 = base/(1+d)^2, 1 = gamma^d."""
    if maxdepth >= 0 and d >= maxdepth:
        return 0.0
    if variant == 0:
        return base / ((1.0 + d) * (1.0 + d))
    return gamma ** d


@njit(cache=True)
def _route_point(feat, thr, left, right, t, z):
    node = 0
    while feat[t, node] >= 0:
        if z[feat[t, node]] < thr[t, node]:
            node = left[t, node]
        else:
            node = right[t, node]
    return node


@njit(cache=True)
def _route_all(feat, thr, left, right, t, Z, out):
    for i in range(Z.shape[0]):
        out[i] = _route_point(feat, thr, left, right, t, Z[i])


@njit(cache=True)
def _collect_leaves(feat, t, cap, scratch):
    n = 0
    for node in range(cap):
        if feat[t, node] == LEAF:
            scratch[n] = node
            n += 1
    return n


@njit(cache=True)
def _count_nogs(feat, left, right, t, cap):
    n = 0
    for node in range(cap):
        if feat[t, node] >= 0:
            if feat[t, left[t, node]] == LEAF and feat[t, right[t, node]] == LEAF:
                n += 1
    return n


@njit(cache=True)
def _pick_nog(feat, left, right, t, cap, k):
    seen = 0
    for node in range(cap):
        if feat[t, node] >= 0:
            if feat[t, left[t, node]] == LEAF and feat[t, right[t, node]] == LEAF:
                if seen == k:
                    return node
                seen += 1
    return -1


@njit(cache=True)
def _tree_log_prior(feat, depth, t, cap, variant, base, gamma, maxdepth):
    total = 0.0
    for node in range(cap):
        code = feat[t, node]
        if code == FREE:
            continue
        p = _split_prob(depth[t, node], variant, base, gamma, maxdepth)
        if code == LEAF:
            if p >= 1.0:
                return -np.inf
            total += math.log1p(-p)
        else:
            if p <= 0.0:
                return -np.inf
            total += math.log(p)
    return total


@njit(cache=True, inline="always")
def _leafcore(A, B, v, sigma2):
    """Leaf marginal-likelihood core with the Gaussian jump integrated out.

    Omits the (2*pi*sigma2)^{-n/2} and |r|^2/(2 sigma2) factors, which cancel
    in grow/prune ratios because child observation sets partition the parent.
    """
    if A == 0.0 and B == 0.0:
        return 0.0
    return -0.5 * math.log1p(v * A / sigma2) + 0.5 * B * B * v / (sigma2 * (sigma2 + v * A))


@njit(cache=True)
def _leaf_log_marginal(n, A, B, r2, v, sigma2):
    """Full log of the leaf-marginalized Gaussian integral."""
    return (
        -0.5 * n * math.log(2.0 * math.pi * sigma2)
        - 0.5 * r2 / sigma2
        + _leafcore(A, B, v, sigma2)
    )


@njit(cache=True)
def _apply_grow(feat, thr, left, right, parent, depth, mu, free, nfree, t, leaf, axis, cut):
    """Split a leaf; children inherit its jump so the step function is unchanged.

    Returns (child_left, child_right).  Caller must have checked capacity.
    """
    c1 = free[t, nfree[t] - 1]
    c2 = free[t, nfree[t] - 2]
    nfree[t] -= 2
    feat[t, leaf] = axis
    thr[t, leaf] = cut
    left[t, leaf] = c1
    right[t, leaf] = c2
    d = depth[t, leaf] + 1
    for c in (c1, c2):
        feat[t, c] = LEAF
        left[t, c] = -1
        right[t, c] = -1
        parent[t, c] = leaf
        depth[t, c] = d
        mu[t, c] = mu[t, leaf]
    return c1, c2


@njit(cache=True)
def _apply_prune(feat, thr, left, right, parent, depth, mu, free, nfree, t, nog):
    """Collapse a nog node back to a leaf; its jump is the children's mean
    (placeholder until the next leaf redraw)."""
    c1 = left[t, nog]
    c2 = right[t, nog]
    mu[t, nog] = 0.5 * (mu[t, c1] + mu[t, c2])
    feat[t, nog] = LEAF
    left[t, nog] = -1
    right[t, nog] = -1
    # push in reverse pop order so a following grow reuses (c1, c2)
    free[t, nfree[t]] = c2
    free[t, nfree[t] + 1] = c1
    nfree[t] += 2
    feat[t, c1] = FREE
    feat[t, c2] = FREE
    return c1, c2


@njit(cache=True)
def _draw_axis(theta_j, u):
    acc = 0.0
    for r in range(theta_j.size):
        acc += theta_j[r]
        if u < acc:
            return r
    return theta_j.size - 1


@njit(cache=True)
def _gibbs_update_tree(
    feat, thr, left, right, parent, depth, mu, free, nfree, leafid, acache,
    xj, Z, resid, v, sigma2, theta_j,
    variant, base, gamma, maxdepth, cutmode, cutvals, cutlen,
    t, do_mh, do_redraw, counters_row, scratch_ids, scratch_b, rng,
):
    """One tree visit: remove its fit from resid, optionally MH-update the
    structure on the leaf-marginalized likelihood, optionally redraw the
    jumps from their Gaussian conditionals, then restore the fit.

    While this function runs, resid holds the leave-one-tree-out partial
    residuals for tree t.  Returns the MH outcome: -1 no MH step, 0 grow
    rejected, 1 grow accepted, 2 prune rejected, 3 prune accepted.
    """
    cap = feat.shape[1]
    nobs = xj.size
    outcome = -1

    for i in range(nobs):
        resid[i] += xj[i] * mu[t, leafid[t, i]]

    if do_mh:
        nalloc = cap - nfree[t]
        n_leaves = (nalloc + 1) // 2
        grow = True
        p_grow_cur = 1.0
        if n_leaves > 1:
            p_grow_cur = 0.5
            grow = rng.random() < 0.5

        if grow:
            outcome = 0
            counters_row[GROW_PROP] += 1
            nl = _collect_leaves(feat, t, cap, scratch_ids)
            leaf = scratch_ids[rng.integers(0, nl)]
            axis = _draw_axis(theta_j, rng.random())
            if cutmode == 0:
                cut = rng.random()
            else:
                cut = cutvals[axis, rng.integers(0, cutlen[axis])]
            d = depth[t, leaf]
            pd = _split_prob(d, variant, base, gamma, maxdepth)
            pd1 = _split_prob(d + 1, variant, base, gamma, maxdepth)
            if nfree[t] < 2:
                counters_row[REJ_CAPACITY] += 1
            elif pd <= 0.0:
                pass  # zero prior mass for the grown topology: auto-reject
            else:
                a_l = 0.0
                b_l = 0.0
                a_r = 0.0
                b_r = 0.0
                for i in range(nobs):
                    if leafid[t, i] == leaf:
                        x = xj[i]
                        if Z[i, axis] < cut:
                            a_l += x * x
                            b_l += x * resid[i]
                        else:
                            a_r += x * x
                            b_r += x * resid[i]
                dloglik = (
                    _leafcore(a_l, b_l, v, sigma2)
                    + _leafcore(a_r, b_r, v, sigma2)
                    - _leafcore(a_l + a_r, b_l + b_r, v, sigma2)
                )
                dtopo = math.log(pd) + 2.0 * math.log1p(-pd1) - math.log1p(-pd)
                nogs = _count_nogs(feat, left, right, t, cap)
                pid = parent[t, leaf]
                parent_was_nog = False
                if nalloc > 1:
                    sib = right[t, pid] if left[t, pid] == leaf else left[t, pid]
                    parent_was_nog = feat[t, sib] == LEAF
                nogs_new = nogs + 1 - (1 if parent_was_nog else 0)
                log_alpha = (
                    dtopo
                    + math.log(0.5) - math.log(nogs_new)
                    - math.log(p_grow_cur) + math.log(n_leaves)
                    + dloglik
                )
                if math.isnan(log_alpha):
                    counters_row[REJ_NONFINITE] += 1
                elif math.log(rng.random()) < log_alpha:
                    c1, c2 = _apply_grow(
                        feat, thr, left, right, parent, depth, mu, free, nfree, t, leaf, axis, cut
                    )
                    for i in range(nobs):
                        if leafid[t, i] == leaf:
                            leafid[t, i] = c1 if Z[i, axis] < cut else c2
                    acache[t, c1] = a_l
                    acache[t, c2] = a_r
                    counters_row[GROW_ACC] += 1
                    outcome = 1
        else:
            outcome = 2
            counters_row[PRUNE_PROP] += 1
            nogs = _count_nogs(feat, left, right, t, cap)
            nog = _pick_nog(feat, left, right, t, cap, rng.integers(0, nogs))
            c1 = left[t, nog]
            c2 = right[t, nog]
            d = depth[t, nog]
            pd = _split_prob(d, variant, base, gamma, maxdepth)
            pd1 = _split_prob(d + 1, variant, base, gamma, maxdepth)
            a_l = acache[t, c1]
            a_r = acache[t, c2]
            b_l = 0.0
            b_r = 0.0
            for i in range(nobs):
                li = leafid[t, i]
                if li == c1:
                    b_l += xj[i] * resid[i]
                elif li == c2:
                    b_r += xj[i] * resid[i]
            dloglik = (
                _leafcore(a_l + a_r, b_l + b_r, v, sigma2)
                - _leafcore(a_l, b_l, v, sigma2)
                - _leafcore(a_r, b_r, v, sigma2)
            )
            dtopo = -(math.log(pd) + 2.0 * math.log1p(-pd1) - math.log1p(-pd))
            p_grow_new = 1.0 if n_leaves - 1 == 1 else 0.5
            log_alpha = (
                dtopo
                + math.log(p_grow_new) - math.log(n_leaves - 1)
                - math.log(0.5) + math.log(nogs)
                + dloglik
            )
            if math.isnan(log_alpha):
                counters_row[REJ_NONFINITE] += 1
            elif math.log(rng.random()) < log_alpha:
                _apply_prune(feat, thr, left, right, parent, depth, mu, free, nfree, t, nog)
                for i in range(nobs):
                    if leafid[t, i] == c1 or leafid[t, i] == c2:
                        leafid[t, i] = nog
                acache[t, nog] = a_l + a_r
                counters_row[PRUNE_ACC] += 1
                outcome = 3

    if do_redraw:
        for node in range(cap):
            scratch_b[node] = 0.0
        for i in range(nobs):
            scratch_b[leafid[t, i]] += xj[i] * resid[i]
        for node in range(cap):
            if feat[t, node] == LEAF:
                var = 1.0 / (acache[t, node] / sigma2 + 1.0 / v)
                mean = var * scratch_b[node] / sigma2
                mu[t, node] = mean + math.sqrt(var) * rng.standard_normal()

    for i in range(nobs):
        resid[i] -= xj[i] * mu[t, leafid[t, i]]
    return outcome


@njit(cache=True)
def _sweep_trees(
    feat, thr, left, right, parent, depth, mu, free, nfree, leafid, acache,
    XT, Z, resid, v, sigma2, theta, ens_start,
    variant, base, gamma, maxdepth, cutmode, cutvals, cutlen,
    counters, rng,
):
    cap = feat.shape[1]
    scratch_ids = np.empty(cap, np.int64)
    scratch_b = np.empty(cap, np.float64)
    n_ens = ens_start.size - 1
    for j in range(n_ens):
        xj = XT[j]
        for t in range(ens_start[j], ens_start[j + 1]):
            _gibbs_update_tree(
                feat, thr, left, right, parent, depth, mu, free, nfree, leafid, acache,
                xj, Z, resid, v[j], sigma2, theta[j],
                variant, base, gamma, maxdepth, cutmode, cutvals, cutlen,
                t, True, True, counters[j], scratch_ids, scratch_b, rng,
            )


@njit(cache=True)
def _split_counts(feat, ens_start, counts):
    cap = feat.shape[1]
    counts[:, :] = 0
    for j in range(ens_start.size - 1):
        for t in range(ens_start[j], ens_start[j + 1]):
            for node in range(cap):
                if feat[t, node] >= 0:
                    counts[j, feat[t, node]] += 1


@njit(cache=True)
def _ensemble_sums(feat, mu, nfree, ens_start, S, L):
    """Per-ensemble sum of squared jumps and total leaf count."""
    cap = feat.shape[1]
    for j in range(ens_start.size - 1):
        s = 0.0
        l = 0
        for t in range(ens_start[j], ens_start[j + 1]):
            for node in range(cap):
                if feat[t, node] == LEAF:
                    s += mu[t, node] * mu[t, node]
                    l += 1
        S[j] = s
        L[j] = l


@njit(cache=True)
def _eval_ensembles(feat, thr, left, right, mu, ens_start, Zq, out):
    """Coefficient surfaces on query points: out[g, j] = beta_j(z_g)."""
    out[:, :] = 0.0
    for j in range(ens_start.size - 1):
        for t in range(ens_start[j], ens_start[j + 1]):
            for g in range(Zq.shape[0]):
                node = _route_point(feat, thr, left, right, t, Zq[g])
                out[g, j] += mu[t, node]


@njit(cache=True)
def _recompute_fit(feat, thr, left, right, mu, ens_start, XT, Z, fit):
    """Fit recomputed from scratch by walking every tree (no leaf cache)."""
    fit[:] = 0.0
    for j in range(ens_start.size - 1):
        for t in range(ens_start[j], ens_start[j + 1]):
            for i in range(Z.shape[0]):
                node = _route_point(feat, thr, left, right, t, Z[i])
                fit[i] += XT[j, i] * mu[t, node]


@njit(cache=True)
def _recompute_acache(feat, leafid, ens_start, XT, acache_out):
    acache_out[:, :] = 0.0
    for j in range(ens_start.size - 1):
        for t in range(ens_start[j], ens_start[j + 1]):
            for i in range(leafid.shape[1]):
                x = XT[j, i]
                acache_out[t, leafid[t, i]] += x * x


@njit(cache=True)
def _leaf_suff_stats(leafid, t, xj, r, A, B, R2, N_):
    """Per-node sufficient statistics for one tree (dense over node slots)."""
    A[:] = 0.0
    B[:] = 0.0
    R2[:] = 0.0
    N_[:] = 0
    for i in range(xj.size):
        node = leafid[t, i]
        A[node] += xj[i] * xj[i]
        B[node] += xj[i] * r[i]
        R2[node] += r[i] * r[i]
        N_[node] += 1
