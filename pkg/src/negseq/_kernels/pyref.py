"""Pure-numpy reference implementations of the sampling hot loops.

These are the fallback backend when the compiled extension is unavailable
and the ground truth the compiled kernels are tested against. Both backends
must make identical accept/reject decisions for identical inputs so that
sample streams do not depend on which backend is active.
"""

import numpy as np


def accept_draws(out, filled, ks, us, prob, alias, support_ids, need,
                 excl_items, excl_indptr, scratch):
    """Run one rejection round of alias-table draws for a whole batch.

    ``ks``/``us`` hold the round's random cell indices and uniforms, laid
    out user by user (``need[b]`` entries for user ``b``). Draws that map
    to an item in the user's exclusion list are rejected; accepted items
    are appended to ``out[b]`` and ``filled[b]`` is advanced. ``scratch``
    is a zeroed uint8 membership array of size num_ids, restored to zero
    before returning.
    """
    n_slots = out.shape[1]
    pos = 0
    for b in range(filled.shape[0]):
        m = int(need[b])
        if m == 0:
            continue
        kb = ks[pos:pos + m]
        ub = us[pos:pos + m]
        pos += m
        cells = np.where(ub < prob[kb], kb, alias[kb])
        items = support_ids[cells]
        excl = excl_items[excl_indptr[b]:excl_indptr[b + 1]]
        scratch[excl] = 1
        accepted = items[scratch[items] == 0]
        scratch[excl] = 0
        f = int(filled[b])
        take = accepted[:n_slots - f]
        out[b, f:f + take.size] = take
        filled[b] = f + take.size


def member_mask(pool, excl_items, excl_indptr, scratch):
    """Per-user membership test: mask[b, p] = pool[b, p] in exclusion set b."""
    B, P = pool.shape
    mask = np.zeros((B, P), dtype=np.uint8)
    for b in range(B):
        excl = excl_items[excl_indptr[b]:excl_indptr[b + 1]]
        scratch[excl] = 1
        mask[b] = scratch[pool[b]]
        scratch[excl] = 0
    return mask
