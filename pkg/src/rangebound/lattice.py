"""Lattice primitives: unit directions, neighbor bitmasks, isometry classes.

Directions of Z^d are indexed 0..2d-1 in the fixed order
(+e_1, -e_1, +e_2, -e_2, ...), so the antipode of direction v is v ^ 1.
A subset V of the 2d unit neighbors is encoded as a bitmask of width 2d
(bit v set iff direction v belongs to V).  Everything downstream (first-visit
masks, escape probabilities, partition counts) relies on this bit order.
"""

from functools import lru_cache
from itertools import permutations, product

import numpy as np

__all__ = [
    "unit_directions",
    "direction_array",
    "antipode",
    "mask_directions",
    "mask_from_directions",
    "isometry_index_maps",
    "apply_isometry",
    "canonical_class",
    "orbit",
    "all_canonical_masks",
]


def _check_dim(d):
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")


def unit_directions(d):
    """The 2d unit vectors of Z^d as tuples, in index order
    (+e_1, -e_1, +e_2, -e_2, ...)."""
    _check_dim(d)
    out = []
    for j in range(d):
        for sign in (1, -1):
            e = [0] * d
            e[j] = sign
            out.append(tuple(e))
    return out


def direction_array(d):
    """Same as unit_directions but as a (2d, d) int64 array."""
    return np.array(unit_directions(d), dtype=np.int64)


def antipode(v):
    """Index of the opposite direction; O(1) thanks to the bit order."""
    return v ^ 1


def mask_directions(mask, d):
    """Direction indices contained in a neighbor mask."""
    if mask < 0 or mask >> (2 * d):
        raise ValueError(f"mask {mask:#x} invalid for d={d}")
    return [v for v in range(2 * d) if (mask >> v) & 1]


def mask_from_directions(dirs, d):
    m = 0
    for v in dirs:
        if not 0 <= v < 2 * d:
            raise ValueError(f"direction index {v} out of range for d={d}")
        m |= 1 << v
    return m


@lru_cache(maxsize=None)
def isometry_index_maps(d):
    """All 2^d * d! signed coordinate permutations, as direction-index maps.

    Returns an int64 array of shape (group order, 2d); row g maps direction
    index v to its image under isometry g.
    """
    _check_dim(d)
    maps = []
    for perm in permutations(range(d)):
        for signs in product((0, 1), repeat=d):
            # e_j -> (+/-) e_{perm[j]}; direction 2j+b has sign bit b
            m = [0] * (2 * d)
            for j in range(d):
                for b in (0, 1):
                    m[2 * j + b] = 2 * perm[j] + (b ^ signs[j])
            maps.append(m)
    return np.array(maps, dtype=np.int64)


def apply_isometry(mask, index_map):
    out = 0
    v = 0
    while mask >> v:
        if (mask >> v) & 1:
            out |= 1 << int(index_map[v])
        v += 1
    return out


@lru_cache(maxsize=None)
def _canonical_table(d):
    """Canonical (minimum-over-orbit) mask for every mask of width 2d."""
    maps = isometry_index_maps(d)
    nmask = 1 << (2 * d)
    table = np.empty(nmask, dtype=np.int64)
    # vectorized orbit minimum: image of mask under map g, for all masks
    bit_images = 1 << maps  # (G, 2d): image bit value of each direction
    masks = np.arange(nmask, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(2 * d)[None, :]) & 1  # (nmask, 2d)
    images = bits @ bit_images.T  # (nmask, G); disjoint bits so sum == or
    table[:] = images.min(axis=1)
    return table


def canonical_class(mask, d):
    """Canonical representative of the isometry class of a neighbor mask.

    Two masks share a class iff a signed coordinate permutation maps one
    onto the other; the representative is the numerically smallest mask in
    the orbit.
    """
    if mask < 0 or mask >> (2 * d):
        raise ValueError(f"mask {mask:#x} invalid for d={d}")
    return int(_canonical_table(d)[mask])


def orbit(mask, d):
    """All masks in the isometry orbit of mask (sorted, no duplicates)."""
    maps = isometry_index_maps(d)
    return sorted({apply_isometry(mask, m) for m in maps})


def all_canonical_masks(d, nonempty=True):
    """Sorted canonical representatives of all (nonempty) classes."""
    table = _canonical_table(d)
    reps = sorted(set(int(x) for x in table))
    if nonempty:
        reps = [r for r in reps if r != 0]
    return reps


def canonical_table(d):
    """Mask -> canonical-representative lookup as an int64 array."""
    return _canonical_table(d).copy()
