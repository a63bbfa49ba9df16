"""Compiled inner loops: sparse assembly, relaxation sweeps, AMG setup."""

import numpy as np
from numba import njit

# ---------------------------------------------------------------- assembly


@njit(cache=True)
def build_pattern(cell_dofs, n):
    """CSR sparsity pattern (indptr, indices) of all dof pairs sharing a cell."""
    m, k = cell_dofs.shape
    counts = np.zeros(n + 1, dtype=np.int64)
    for c in range(m):
        for a in range(k):
            counts[cell_dofs[c, a] + 1] += k
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    buf = np.empty(start[-1], dtype=np.int32)
    for c in range(m):
        for a in range(k):
            r = cell_dofs[c, a]
            p = fill[r]
            for b in range(k):
                buf[p + b] = cell_dofs[c, b]
            fill[r] = p + k
    indptr = np.zeros(n + 1, dtype=np.int64)
    out = 0
    for r in range(n):
        seg = np.sort(buf[start[r]:start[r + 1]])
        last = -1
        for v in seg:
            if v != last:
                buf[out] = v
                out += 1
                last = v
        indptr[r + 1] = out
    return indptr, buf[:out].copy()


@njit(cache=True)
def _find(indices, lo, hi, col):
    while lo < hi:
        mid = (lo + hi) >> 1
        if indices[mid] < col:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def scatter_matrix(indptr, indices, data, dofs, ke):
    """data += element matrices ``ke`` (m, k, k) at rows/cols ``dofs`` (m, k)."""
    m, k = dofs.shape
    for c in range(m):
        for a in range(k):
            r = dofs[c, a]
            lo = indptr[r]
            hi = indptr[r + 1]
            for b in range(k):
                p = _find(indices, lo, hi, dofs[c, b])
                data[p] += ke[c, a, b]


# ---------------------------------------------------------------- relaxation


@njit(cache=True)
def gauss_seidel_sweep(indptr, indices, data, x, b, start, stop, step):
    for i in range(start, stop, step):
        diag = 0.0
        s = b[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j == i:
                diag += data[p]
            else:
                s -= data[p] * x[j]
        x[i] = s / diag


# ---------------------------------------------------------------- classical AMG


@njit(cache=True)
def rs_cf_splitting(s_indptr, s_indices, t_indptr, t_indices):
    """Ruge-Stuben first-pass C/F splitting.

    ``S`` holds strong dependencies (row i: points i depends on), ``T`` its
    transpose. Returns 1 for C points and 0 for F points. Ties in the
    measure are broken by most recently updated point, deterministic for a
    fixed input ordering.
    """
    n = s_indptr.shape[0] - 1
    UNSET, FPT, CPT = -1, 0, 1
    state = np.full(n, UNSET, dtype=np.int64)
    lam = np.empty(n, dtype=np.int64)
    maxlam = 0
    for i in range(n):
        lam[i] = t_indptr[i + 1] - t_indptr[i]
        if lam[i] > maxlam:
            maxlam = lam[i]
    nb = 2 * maxlam + 2
    head = np.full(nb, -1, dtype=np.int64)
    nxt = np.full(n, -1, dtype=np.int64)
    prv = np.full(n, -1, dtype=np.int64)

    def insert(i):
        b = lam[i]
        nxt[i] = head[b]
        prv[i] = -1
        if head[b] >= 0:
            prv[head[b]] = i
        head[b] = i

    def remove(i):
        b = lam[i]
        if prv[i] >= 0:
            nxt[prv[i]] = nxt[i]
        else:
            head[b] = nxt[i]
        if nxt[i] >= 0:
            prv[nxt[i]] = prv[i]
        nxt[i] = -1
        prv[i] = -1

    for i in range(n):
        if lam[i] == 0:
            state[i] = FPT
        else:
            insert(i)

    top = nb - 1
    while True:
        while top >= 0 and head[top] < 0:
            top -= 1
        if top < 0:
            break
        i = head[top]
        remove(i)
        if lam[i] == 0:
            # nobody left depends on i: it only needs to be C when it has
            # no strong C point to interpolate from
            has_c = False
            for p in range(s_indptr[i], s_indptr[i + 1]):
                if state[s_indices[p]] == CPT:
                    has_c = True
                    break
            if has_c:
                state[i] = FPT
                continue
        state[i] = CPT
        for p in range(t_indptr[i], t_indptr[i + 1]):
            j = t_indices[p]
            if state[j] == UNSET:
                remove(j)
                state[j] = FPT
                for q in range(s_indptr[j], s_indptr[j + 1]):
                    k = s_indices[q]
                    if state[k] == UNSET:
                        remove(k)
                        lam[k] += 1
                        insert(k)
                        if lam[k] > top:
                            top = lam[k]
        for p in range(s_indptr[i], s_indptr[i + 1]):
            j = s_indices[p]
            if state[j] == UNSET:
                remove(j)
                lam[j] -= 1
                if lam[j] <= 0:
                    lam[j] = 0
                insert(j)
    for i in range(n):
        if state[i] == UNSET:
            state[i] = FPT
    return state


@njit(cache=True)
def direct_interpolation(a_indptr, a_indices, a_data, s_indptr, s_indices, splitting):
    """Direct interpolation weights; returns CSR arrays of P (n x n_coarse)."""
    n = a_indptr.shape[0] - 1
    cindex = np.full(n, -1, dtype=np.int64)
    nc = 0
    for i in range(n):
        if splitting[i] == 1:
            cindex[i] = nc
            nc += 1
    # strong C-neighbour marks per row
    is_strong = np.zeros(n, dtype=np.bool_)
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        if splitting[i] == 1:
            indptr[i + 1] = 1
        else:
            cnt = 0
            for p in range(s_indptr[i], s_indptr[i + 1]):
                j = s_indices[p]
                if j != i and splitting[j] == 1:
                    cnt += 1
            indptr[i + 1] = cnt
    for i in range(n):
        indptr[i + 1] += indptr[i]
    indices = np.empty(indptr[n], dtype=np.int64)
    data = np.empty(indptr[n], dtype=np.float64)
    for i in range(n):
        pos = indptr[i]
        if splitting[i] == 1:
            indices[pos] = cindex[i]
            data[pos] = 1.0
            continue
        for p in range(s_indptr[i], s_indptr[i + 1]):
            j = s_indices[p]
            if j != i and splitting[j] == 1:
                is_strong[j] = True
        sum_neg = 0.0
        sum_pos = 0.0
        sum_neg_c = 0.0
        sum_pos_c = 0.0
        diag = 0.0
        for p in range(a_indptr[i], a_indptr[i + 1]):
            j = a_indices[p]
            v = a_data[p]
            if j == i:
                diag += v
                continue
            if v < 0:
                sum_neg += v
                if is_strong[j]:
                    sum_neg_c += v
            else:
                sum_pos += v
                if is_strong[j]:
                    sum_pos_c += v
        alpha = sum_neg / sum_neg_c if sum_neg_c != 0.0 else 0.0
        if sum_pos_c != 0.0:
            beta = sum_pos / sum_pos_c
        else:
            beta = 0.0
            diag += sum_pos
        for p in range(a_indptr[i], a_indptr[i + 1]):
            j = a_indices[p]
            if j != i and is_strong[j]:
                v = a_data[p]
                w = -(alpha if v < 0 else beta) * v / diag
                indices[pos] = cindex[j]
                data[pos] = w
                pos += 1
                is_strong[j] = False
        for p in range(s_indptr[i], s_indptr[i + 1]):
            is_strong[s_indices[p]] = False
    return indptr, indices, data, nc


# ---------------------------------------------------------------- aggregation


@njit(cache=True)
def standard_aggregation(indptr, indices, weights):
    """Greedy three-pass aggregation on a symmetric strength graph.

    Pass 1 forms aggregates from whole free neighbourhoods, pass 2 attaches
    leftover nodes to the pass-1 aggregate they are most strongly coupled to
    (by ``weights``), pass 3 groups what remains. Nodes without strong
    neighbours stay unaggregated (-1).
    """
    n = indptr.shape[0] - 1
    agg = np.full(n, -1, dtype=np.int64)
    na = 0
    isolated = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        has = False
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] != i:
                has = True
                break
        isolated[i] = not has
    # pass 1: whole neighbourhoods that are still free
    for i in range(n):
        if agg[i] >= 0 or isolated[i]:
            continue
        free = True
        for p in range(indptr[i], indptr[i + 1]):
            if agg[indices[p]] >= 0:
                free = False
                break
        if not free:
            continue
        agg[i] = na
        for p in range(indptr[i], indptr[i + 1]):
            agg[indices[p]] = na
        na += 1
    # pass 2: attach leftovers to the most strongly coupled pass-1 aggregate
    snapshot = agg.copy()
    for i in range(n):
        if agg[i] >= 0 or isolated[i]:
            continue
        best = -1.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j != i and snapshot[j] >= 0 and weights[p] > best:
                best = weights[p]
                agg[i] = snapshot[j]
    # pass 3: remaining nodes form aggregates with free neighbours
    for i in range(n):
        if agg[i] >= 0 or isolated[i]:
            continue
        agg[i] = na
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if agg[j] < 0 and not isolated[j]:
                agg[j] = na
        na += 1
    return agg, na


@njit(cache=True)
def rs_second_pass(s_indptr, s_indices, splitting):
    """Promote F points so strongly coupled F pairs share a strong C point.

    When an F point i has a strongly connected F point j with no common
    strong C point, j becomes C tentatively; a second such j makes i a C
    point instead and the tentative promotion is undone.
    """
    n = s_indptr.shape[0] - 1
    state = splitting.copy()
    mark = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if state[i] != 0:
            continue
        for p in range(s_indptr[i], s_indptr[i + 1]):
            j = s_indices[p]
            if j != i and state[j] == 1:
                mark[j] = i
        tentative = -1
        for p in range(s_indptr[i], s_indptr[i + 1]):
            j = s_indices[p]
            if j == i or state[j] != 0:
                continue
            common = False
            for q in range(s_indptr[j], s_indptr[j + 1]):
                k = s_indices[q]
                if state[k] == 1 and mark[k] == i:
                    common = True
                    break
            if common:
                continue
            if tentative >= 0:
                state[tentative] = 0
                state[i] = 1
                tentative = -1
                break
            tentative = j
            state[j] = 1
            mark[j] = i
    return state


@njit(cache=True)
def classical_strength(indptr, indices, data, theta, negative_only):
    """Strong off-diagonal couplings of each row.

    With ``negative_only`` j is strong for i when ``-a_ij >= theta * max_k
    (-a_ik)`` (and ``-a_ij > 0``); otherwise magnitudes ``|a_ij|`` are used.
    """
    n = indptr.shape[0] - 1
    s_indptr = np.zeros(n + 1, dtype=np.int64)
    s_indices = np.empty(indices.shape[0], dtype=np.int32)
    sign = -1.0 if negative_only else 1.0
    pos = 0
    for i in range(n):
        rmax = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] != i:
                v = sign * data[p] if negative_only else abs(data[p])
                if v > rmax:
                    rmax = v
        if rmax > 0.0:
            cut = theta * rmax
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = sign * data[p] if negative_only else abs(data[p])
                if j != i and v > 0.0 and v >= cut:
                    s_indices[pos] = j
                    pos += 1
        s_indptr[i + 1] = pos
    return s_indptr, s_indices[:pos].copy()
