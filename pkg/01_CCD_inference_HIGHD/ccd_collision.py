# COLLISION HELPERS FOR ORIENTED RECTANGLES
# Staged test: bounding circle, then axis-aligned box, then separating axis theorem (SAT).
# The first two stages only ever reject; the SAT verdict is final.
# Every function broadcasts over numpy arrays so many poses can be tested in one call.
import numpy as np


def _axis_gap(dx, dy, nx_, ny_, ca, sa, hla, hwa, cb, sb, hlb, hwb):
    # distance between the two projections on axis n (> 0 means separated)
    dist = np.abs(dx * nx_ + dy * ny_)
    ra = hla * np.abs(ca * nx_ + sa * ny_) + hwa * np.abs(-sa * nx_ + ca * ny_)
    rb = hlb * np.abs(cb * nx_ + sb * ny_) + hwb * np.abs(-sb * nx_ + cb * ny_)
    return dist - (ra + rb)


def sat_margin(ax, ay, ah, a_hl, a_hw, bx, by, bh, b_hl, b_hw):
    """
    Largest projection gap over the four candidate axes (both rectangles' edge normals).

    :return: > 0 if a separating axis exists, <= 0 if the rectangles overlap or touch
    """
    dx, dy = np.subtract(bx, ax), np.subtract(by, ay)
    ca, sa, cb, sb = np.cos(ah), np.sin(ah), np.cos(bh), np.sin(bh)
    rect = (ca, sa, a_hl, a_hw, cb, sb, b_hl, b_hw)
    gaps = [_axis_gap(dx, dy, ca, sa, *rect), _axis_gap(dx, dy, -sa, ca, *rect),
            _axis_gap(dx, dy, cb, sb, *rect), _axis_gap(dx, dy, -sb, cb, *rect)]
    return np.maximum.reduce(gaps)


def overlaps(ax, ay, ah, a_hl, a_hw, bx, by, bh, b_hl, b_hw):
    """
    Do rectangles a and b overlap? Each rectangle is centre (x, y), heading h and half extents
    (hl along heading, hw across). Inputs broadcast; returns a bool array of the broadcast shape.
    """
    args = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                 for v in (ax, ay, ah, a_hl, a_hw, bx, by, bh, b_hl, b_hw)))
    shape = args[0].shape
    ax, ay, ah, a_hl, a_hw, bx, by, bh, b_hl, b_hw = (v.ravel() for v in args)
    hit = np.zeros(ax.shape, dtype=bool)

    # radius
    dx, dy = bx - ax, by - ay
    reach = np.hypot(a_hl, a_hw) + np.hypot(b_hl, b_hw)
    idx = np.flatnonzero(dx * dx + dy * dy <= reach * reach)
    if idx.size == 0:
        return hit.reshape(shape)

    # bounding box
    ca, sa = np.abs(np.cos(ah[idx])), np.abs(np.sin(ah[idx]))
    cb, sb = np.abs(np.cos(bh[idx])), np.abs(np.sin(bh[idx]))
    ex = a_hl[idx] * ca + a_hw[idx] * sa + b_hl[idx] * cb + b_hw[idx] * sb
    ey = a_hl[idx] * sa + a_hw[idx] * ca + b_hl[idx] * sb + b_hw[idx] * cb
    keep = (np.abs(dx[idx]) <= ex) & (np.abs(dy[idx]) <= ey)
    idx = idx[keep]
    if idx.size == 0:
        return hit.reshape(shape)

    # SAT
    margin = sat_margin(ax[idx], ay[idx], ah[idx], a_hl[idx], a_hw[idx],
                        bx[idx], by[idx], bh[idx], b_hl[idx], b_hw[idx])
    hit[idx] = margin <= 0
    return hit.reshape(shape)


def closest_approach(px, py, ux, uy, horizon):
    """
    Smallest distance of the point p + u * tau for tau in [0, horizon] (vectorised over rows).
    Used to skip pairs whose bounding circles can never meet.
    """
    px, py, ux, uy = (np.asarray(v, dtype=float) for v in (px, py, ux, uy))
    uu = ux * ux + uy * uy
    with np.errstate(divide='ignore', invalid='ignore'):
        tau = np.where(uu > 0, -(px * ux + py * uy) / uu, 0.0)
    tau = np.clip(tau, 0.0, horizon)
    return np.hypot(px + ux * tau, py + uy * tau)
