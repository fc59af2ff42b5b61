"""Compiled inner loops for the separation oracle.

Every kernel works on a flat layout of the ``rho`` indicator bits: bit
``offset[k] + i`` is ``theta^{(k)}_i``. Observed entries are given by
``gcoords``, a ``(u, p)`` array of global bit ids, and ``bit_ptr`` /
``bit_terms`` list, per bit, the entries it touches (CSR layout).
"""
import numpy as np
from numba import njit

OUTCOME_COMPLETE = 0
OUTCOME_EARLY_STOP = 1
OUTCOME_BUDGET = 2


@njit(cache=True)
def z_value(gcoords, c, psi, lam, theta):
    # Canonical evaluation order; every exact comparison goes through here.
    u, p = gcoords.shape
    total = 0.0
    for j in range(u):
        cov = 1.0
        for k in range(p):
            if theta[gcoords[j, k]] == 0:
                cov = 0.0
                break
        total += c[j] * (psi[j] - lam * cov)
    return total


@njit(cache=True)
def am_sweep(gcoords, bit_ptr, bit_terms, c, lam, theta):
    """One pass of single-bit flips over all bits in order, in place.

    A flip is kept only when it strictly increases the objective. Returns
    the number of accepted flips and the accumulated increase.
    """
    u, p = gcoords.shape
    rho = bit_ptr.size - 1
    ones = np.zeros(u, dtype=np.int64)
    for j in range(u):
        for k in range(p):
            ones[j] += theta[gcoords[j, k]]
    accepted = 0
    gained = 0.0
    for b in range(rho):
        delta = 0.0
        if theta[b] == 0:
            for t in range(bit_ptr[b], bit_ptr[b + 1]):
                j = bit_terms[t]
                if ones[j] == p - 1:
                    delta -= lam * c[j]
        else:
            for t in range(bit_ptr[b], bit_ptr[b + 1]):
                j = bit_terms[t]
                if ones[j] == p:
                    delta += lam * c[j]
        if delta > 0.0:
            accepted += 1
            gained += delta
            if theta[b] == 0:
                theta[b] = 1
                for t in range(bit_ptr[b], bit_ptr[b + 1]):
                    ones[bit_terms[t]] += 1
            else:
                theta[b] = 0
                for t in range(bit_ptr[b], bit_ptr[b + 1]):
                    ones[bit_terms[t]] -= 1
    return accepted, gained


@njit(cache=True)
def nested_bound(w_sorted, base, status, bits0, lvl_bits, lvl_off, child_ptr, ptr_off,
                 buf_a, buf_b):
    """Upper bound on the objective over all completions of a partial assignment.

    Entries are grouped mode by mode, innermost first (see ``Support``).
    At every level a group's subtotal is kept if its bit is fixed to one,
    dropped if fixed to zero, and clipped at zero if the bit is free. The
    clipping lets each outer group pick inner bits on its own, which is
    what makes this a relaxation; it is exact once only the outermost
    mode is free. ``status`` is -1 for free bits, else the fixed value.
    """
    n0 = w_sorted.size
    prev = buf_a
    cur = buf_b
    for i in range(n0):
        s = status[bits0[i]]
        v = w_sorted[i]
        if s == 1:
            prev[i] = v
        elif s == 0:
            prev[i] = 0.0
        else:
            prev[i] = v if v > 0.0 else 0.0
    count = n0
    for lv in range(lvl_off.size - 1):
        lo = lvl_off[lv]
        count = lvl_off[lv + 1] - lo
        po = ptr_off[lv]
        for g in range(count):
            tot = 0.0
            for i in range(child_ptr[po + g], child_ptr[po + g + 1]):
                tot += prev[i]
            s = status[lvl_bits[lo + g]]
            if s == 1:
                cur[g] = tot
            elif s == 0:
                cur[g] = 0.0
            else:
                cur[g] = tot if tot > 0.0 else 0.0
        tmp = prev
        prev = cur
        cur = tmp
    total = 0.0
    for g in range(count):
        total += prev[g]
    return base + total


@njit(cache=True)
def _complete(gcoords, w, outer_mode, outer_lo, outer_hi, status, incumbent, cand,
              slice_sum, base):
    # Fixed bits kept, free inner bits copied from the incumbent, free outer
    # bits chosen optimally for that inner assignment. Returns the value up
    # to rounding; callers confirm with z_value.
    u, p = gcoords.shape
    for b in range(status.size):
        cand[b] = status[b] if status[b] >= 0 else incumbent[b]
    for b in range(outer_lo, outer_hi):
        slice_sum[b] = 0.0
    for j in range(u):
        ok = True
        for k in range(p):
            if k != outer_mode and cand[gcoords[j, k]] == 0:
                ok = False
                break
        if ok:
            slice_sum[gcoords[j, outer_mode]] += w[j]
    val = base
    for b in range(outer_lo, outer_hi):
        if status[b] < 0:
            cand[b] = 1 if slice_sum[b] > 0.0 else 0
        if cand[b] == 1:
            val += slice_sum[b]
    return val


@njit(cache=True)
def _fix(bit_ptr, bit_terms, status, nzero, b, v):
    status[b] = v
    if v == 0:
        for t in range(bit_ptr[b], bit_ptr[b + 1]):
            nzero[bit_terms[t]] += 1


@njit(cache=True)
def _unfix(bit_ptr, bit_terms, status, nzero, b):
    if status[b] == 0:
        for t in range(bit_ptr[b], bit_ptr[b + 1]):
            nzero[bit_terms[t]] -= 1
    status[b] = -1


@njit(cache=True)
def branch_and_bound(gcoords, bit_ptr, bit_terms, branch_modes, outer_mode, mode_off,
                     dims, order, bits0, lvl_bits, lvl_off, child_ptr, ptr_off,
                     c, psi, lam, init_theta, use_early, early_target, use_dual,
                     dual_target, node_budget, slack):
    """Depth-first branch-and-bound maximizing ``z_value`` over binary theta.

    Bits of ``branch_modes`` are fixed one mode at a time; the outer mode
    is never branched on because the bound is exact once every other mode
    is fixed. Within a mode the bit carrying the most attainable
    negative-gradient mass goes first. Nodes are pruned when their bound is
    within ``slack`` of the incumbent, or (``use_dual``) when the bound is
    at most ``dual_target``. With ``use_early`` the search returns as soon
    as the incumbent exceeds ``early_target``.

    Returns ``(theta, value, dual_bound, root_bound, nodes, outcome)``.
    """
    u, p = gcoords.shape
    rho = bit_ptr.size - 1
    w = np.empty(u)
    base = 0.0
    for j in range(u):
        w[j] = -lam * c[j]
        base += c[j] * psi[j]
    outer_lo = mode_off[outer_mode]
    outer_hi = outer_lo + dims[outer_mode]
    w_sorted = np.empty(u)
    for i in range(u):
        w_sorted[i] = w[order[i]]

    status = np.full(rho, -1, dtype=np.int8)
    nzero = np.zeros(u, dtype=np.int64)
    buf_a = np.empty(u)
    buf_b = np.empty(u)
    mass = np.zeros(rho)
    cand = np.zeros(rho, dtype=np.uint8)
    best_theta = init_theta.copy()
    best = z_value(gcoords, c, psi, lam, best_theta)

    stack_bit = np.zeros(rho + 1, dtype=np.int64)
    stack_first = np.zeros(rho + 1, dtype=np.int8)
    stack_tried = np.zeros(rho + 1, dtype=np.int8)
    stack_ub = np.zeros(rho + 1)

    pruned_dual = -np.inf
    root_ub = np.inf
    nodes = 0
    depth = 0
    outcome = OUTCOME_COMPLETE
    evaluate = True
    if use_early and best > early_target:
        return best_theta, best, root_ub, root_ub, nodes, OUTCOME_EARLY_STOP

    while True:
        if evaluate:
            if nodes >= node_budget:
                outcome = OUTCOME_BUDGET
                break
            nodes += 1
            ub = nested_bound(w_sorted, base, status, bits0, lvl_bits, lvl_off,
                              child_ptr, ptr_off, buf_a, buf_b)
            if depth == 0:
                root_ub = ub
            if ub <= best + slack:
                evaluate = False
                continue
            # Nodes the incumbent cannot prune get a completion.
            approx = _complete(gcoords, w, outer_mode, outer_lo, outer_hi, status,
                               best_theta, cand, mass, base)
            if approx > best - slack:
                val = z_value(gcoords, c, psi, lam, cand)
                if val > best:
                    best = val
                    best_theta[:] = cand
                    if use_early and best > early_target:
                        outcome = OUTCOME_EARLY_STOP
                        break
            pruned = True
            if ub <= best + slack:
                pass
            elif use_dual and ub <= dual_target:
                if ub > pruned_dual:
                    pruned_dual = ub
            else:
                # First branch mode that still has free bits.
                m = -1
                for i in range(branch_modes.size):
                    mm = branch_modes[i]
                    for b in range(mode_off[mm], mode_off[mm] + dims[mm]):
                        if status[b] < 0:
                            m = mm
                            break
                    if m >= 0:
                        break
                if m >= 0:
                    lo = mode_off[m]
                    hi = lo + dims[m]
                    for b in range(lo, hi):
                        mass[b] = 0.0
                    for j in range(u):
                        if nzero[j] == 0 and w[j] > 0.0:
                            mass[gcoords[j, m]] += w[j]
                    bb = -1
                    bm = -1.0
                    for b in range(lo, hi):
                        if status[b] < 0 and mass[b] > bm:
                            bm = mass[b]
                            bb = b
                    pruned = False
                    stack_bit[depth] = bb
                    stack_first[depth] = cand[bb]
                    stack_tried[depth] = 1
                    stack_ub[depth] = ub
                    _fix(bit_ptr, bit_terms, status, nzero, bb, cand[bb])
                    depth += 1
            if not pruned:
                continue
            evaluate = False
        if depth == 0:
            break
        depth -= 1
        b = stack_bit[depth]
        _unfix(bit_ptr, bit_terms, status, nzero, b)
        if stack_tried[depth] == 1:
            stack_tried[depth] = 2
            _fix(bit_ptr, bit_terms, status, nzero, b, 1 - stack_first[depth])
            depth += 1
            evaluate = True

    if outcome == OUTCOME_COMPLETE:
        dual = max(best, pruned_dual)
    elif outcome == OUTCOME_EARLY_STOP:
        dual = root_ub
    else:
        dual = max(best, pruned_dual)
        if depth == 0:
            dual = max(dual, root_ub)
        else:
            # Unvisited siblings and the interrupted node sit below these bounds.
            dual = max(dual, stack_ub[depth - 1])
            for d in range(depth):
                if stack_tried[d] == 1:
                    dual = max(dual, stack_ub[d])
    return best_theta, best, dual, root_ub, nodes, outcome


@njit(cache=True)
def brute_force(gcoords, c, psi, lam, rho):
    """Enumerate all ``2**rho`` bit patterns; first maximizer wins."""
    theta = np.zeros(rho, dtype=np.uint8)
    best_theta = theta.copy()
    best = -np.inf
    for mask in range(1 << rho):
        for b in range(rho):
            theta[b] = (mask >> b) & 1
        val = z_value(gcoords, c, psi, lam, theta)
        if val > best:
            best = val
            best_theta[:] = theta
    return best_theta, best
