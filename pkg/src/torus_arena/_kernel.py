"""Compiled single-turn resolver.

All arrays are flat, row-major, length ``n = width * height``.  ``nbr[d, i]``
is the site reached from ``i`` in direction ``d`` (``nbr[0]`` is identity).
"""

import numpy as np
from numba import njit

CAP = 255

OK = 0
FAULT_STRENGTH = 1
FAULT_OWNER = 2
FAULT_CONTESTED = 3


@njit(cache=True, nogil=True)
def resolve_turn(owner, strength, production, dirs, nbr, num_players,
                 out_owner, out_strength):
    n = owner.shape[0]
    layers = num_players + 1
    piece = np.zeros((layers, n), dtype=np.int32)
    present = np.zeros((layers, n), dtype=np.bool_)

    # production, movement and same-owner merging
    for i in range(n):
        o = owner[i]
        s = strength[i]
        if s < 0 or s > CAP:
            return FAULT_STRENGTH
        if o < 0 or o > num_players:
            return FAULT_OWNER
        if o == 0:
            piece[0, i] = s
            present[0, i] = True
            continue
        d = dirs[i]
        if d == 0:
            s = min(s + production[i], CAP)
            j = i
        else:
            present[o, i] = True
            j = nbr[d, i]
        piece[o, j] = min(piece[o, j] + s, CAP)
        present[o, j] = True

    damage = np.zeros((layers, n), dtype=np.int32)
    engaged = np.zeros((layers, n), dtype=np.bool_)

    # every player piece hits every enemy piece in its 5-site neighbourhood;
    # neutrals trade blows only with co-located player pieces
    for i in range(n):
        for p in range(1, layers):
            if not present[p, i]:
                continue
            s = piece[p, i]
            for k in range(5):
                j = nbr[k, i]
                for q in range(1, layers):
                    if q != p and present[q, j]:
                        damage[q, j] += s
                        engaged[q, j] = True
            if present[0, i]:
                damage[0, i] += s
                engaged[0, i] = True
                damage[p, i] += piece[0, i]
                engaged[p, i] = True

    for i in range(n):
        winner = 0
        left = 0
        survivors = 0
        for p in range(layers):
            if not present[p, i]:
                continue
            if engaged[p, i] and damage[p, i] >= piece[p, i]:
                continue
            survivors += 1
            winner = p
            left = piece[p, i] - damage[p, i]
        if survivors > 1:
            return FAULT_CONTESTED
        out_owner[i] = winner
        out_strength[i] = left
    return OK
