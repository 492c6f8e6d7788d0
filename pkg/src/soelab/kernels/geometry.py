"""Polyline and oriented-box kernels.

Every public kernel has a ``_nb`` loop body (compiled by numba when the
backend allows) and a ``_np`` vectorised twin.  The unsuffixed name is
bound to whichever the active backend prefers.
"""

from __future__ import annotations

import math

import numpy as np

from soelab._backend import njit, pick

TWO_PI = 2.0 * math.pi


@njit
def wrap_angle(a):
    """Map an angle into (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    r = (a + math.pi) % TWO_PI - math.pi
    if r <= -math.pi:
        r += TWO_PI
    return r


# --------------------------------------------------------------------------
# projection onto a polyline
# --------------------------------------------------------------------------


@njit
def _project_nb(pts, cum_s, units, x, y):
    n_seg = pts.shape[0] - 1
    best = np.inf
    best_s = 0.0
    best_d = 0.0
    best_i = 0
    for i in range(n_seg):
        ux = units[i, 0]
        uy = units[i, 1]
        seg_len = cum_s[i + 1] - cum_s[i]
        px = x - pts[i, 0]
        py = y - pts[i, 1]
        t = px * ux + py * uy
        if i > 0 and t < 0.0:
            t = 0.0
        if i < n_seg - 1 and t > seg_len:
            t = seg_len
        cx = px - t * ux
        cy = py - t * uy
        dist2 = cx * cx + cy * cy
        if dist2 < best:
            best = dist2
            best_s = cum_s[i] + t
            best_d = ux * py - uy * px
            best_i = i
    return best_s, best_d, best_i


def _project_np(pts, cum_s, units, x, y):
    n_seg = pts.shape[0] - 1
    px = x - pts[:-1, 0]
    py = y - pts[:-1, 1]
    ux = units[:, 0]
    uy = units[:, 1]
    seg_len = cum_s[1:] - cum_s[:-1]
    t = px * ux + py * uy
    lo = np.zeros(n_seg)
    lo[0] = -np.inf
    hi = seg_len.copy()
    hi[-1] = np.inf
    t = np.minimum(np.maximum(t, lo), hi)
    cx = px - t * ux
    cy = py - t * uy
    i = int(np.argmin(cx * cx + cy * cy))
    return float(cum_s[i] + t[i]), float(ux[i] * py[i] - uy[i] * px[i]), i


project_nb = _project_nb
project_np = _project_np
project = pick(_project_nb, _project_np)
"""(pts, cum_s, units, x, y) -> (arc length s, signed lateral offset d, segment).

Offsets are left-positive.  The first and last segments extend to infinity
so points before the start or past the end project with s < 0 or s > length.
"""


@njit
def _segment_index_nb(cum_s, s):
    n_seg = cum_s.shape[0] - 1
    i = np.searchsorted(cum_s, s, side="right") - 1
    if i < 0:
        i = 0
    if i > n_seg - 1:
        i = n_seg - 1
    return i


@njit
def point_at(pts, cum_s, units, s):
    """Point and tangent heading at arc length ``s`` (linear extrapolation past the ends)."""
    i = _segment_index_nb(cum_s, s)
    t = s - cum_s[i]
    ux = units[i, 0]
    uy = units[i, 1]
    return pts[i, 0] + t * ux, pts[i, 1] + t * uy, math.atan2(uy, ux)


@njit
def pose_at(pts, cum_s, units, s, d):
    """Pose of a point at arc length ``s`` and left-positive lateral offset ``d``."""
    i = _segment_index_nb(cum_s, s)
    t = s - cum_s[i]
    ux = units[i, 0]
    uy = units[i, 1]
    return pts[i, 0] + t * ux - d * uy, pts[i, 1] + t * uy + d * ux, math.atan2(uy, ux)


@njit
def _max_abs_curvature_nb(cum_s, kappa, s0, s1):
    m = cum_s.shape[0]
    best = 0.0
    # interpolated endpoints
    for s in (s0, s1):
        if s <= cum_s[0]:
            k = abs(kappa[0])
        elif s >= cum_s[m - 1]:
            k = abs(kappa[m - 1])
        else:
            i = np.searchsorted(cum_s, s, side="right") - 1
            w = (s - cum_s[i]) / (cum_s[i + 1] - cum_s[i])
            k = abs(kappa[i] * (1.0 - w) + kappa[i + 1] * w)
        if k > best:
            best = k
    lo = np.searchsorted(cum_s, s0, side="left")
    for i in range(lo, m):
        if cum_s[i] > s1:
            break
        k = abs(kappa[i])
        if k > best:
            best = k
    return best


def _max_abs_curvature_np(cum_s, kappa, s0, s1):
    ends = np.abs(np.interp([s0, s1], cum_s, kappa))
    inside = (cum_s >= s0) & (cum_s <= s1)
    best = float(ends.max())
    if inside.any():
        best = max(best, float(np.abs(kappa[inside]).max()))
    return best


max_abs_curvature_nb = _max_abs_curvature_nb
max_abs_curvature_np = _max_abs_curvature_np
max_abs_curvature = pick(_max_abs_curvature_nb, _max_abs_curvature_np)


# --------------------------------------------------------------------------
# oriented bounding boxes (separating axis test)
# --------------------------------------------------------------------------


@njit
def obb_overlap(x1, y1, h1, l1, w1, x2, y2, h2, l2, w2):
    """True when two oriented rectangles intersect (touching counts)."""
    c1 = math.cos(h1)
    s1 = math.sin(h1)
    c2 = math.cos(h2)
    s2 = math.sin(h2)
    dx = x2 - x1
    dy = y2 - y1
    hl1 = 0.5 * l1
    hw1 = 0.5 * w1
    hl2 = 0.5 * l2
    hw2 = 0.5 * w2
    # axes of box 1
    if abs(dx * c1 + dy * s1) > hl1 + hl2 * abs(c2 * c1 + s2 * s1) + hw2 * abs(-s2 * c1 + c2 * s1):
        return False
    if abs(-dx * s1 + dy * c1) > hw1 + hl2 * abs(-c2 * s1 + s2 * c1) + hw2 * abs(s2 * s1 + c2 * c1):
        return False
    # axes of box 2
    if abs(dx * c2 + dy * s2) > hl2 + hl1 * abs(c1 * c2 + s1 * s2) + hw1 * abs(-s1 * c2 + c1 * s2):
        return False
    if abs(-dx * s2 + dy * c2) > hw2 + hl1 * abs(-c1 * s2 + s1 * c2) + hw1 * abs(s1 * s2 + c1 * c2):
        return False
    return True


def obb_overlap_np(x1, y1, h1, l1, w1, x2, y2, h2, l2, w2):
    """Broadcasting numpy version of :func:`obb_overlap`."""
    c1, s1, c2, s2 = np.cos(h1), np.sin(h1), np.cos(h2), np.sin(h2)
    dx = x2 - x1
    dy = y2 - y1
    hl1, hw1, hl2, hw2 = 0.5 * l1, 0.5 * w1, 0.5 * l2, 0.5 * w2
    sep = np.abs(dx * c1 + dy * s1) > hl1 + hl2 * np.abs(c2 * c1 + s2 * s1) + hw2 * np.abs(-s2 * c1 + c2 * s1)
    sep |= np.abs(-dx * s1 + dy * c1) > hw1 + hl2 * np.abs(-c2 * s1 + s2 * c1) + hw2 * np.abs(s2 * s1 + c2 * c1)
    sep |= np.abs(dx * c2 + dy * s2) > hl2 + hl1 * np.abs(c1 * c2 + s1 * s2) + hw1 * np.abs(-s1 * c2 + c1 * s2)
    sep |= np.abs(-dx * s2 + dy * c2) > hw2 + hl1 * np.abs(-c1 * s2 + s1 * c2) + hw1 * np.abs(s1 * s2 + c1 * c2)
    return ~sep


@njit
def _any_overlap_nb(x, y, h, length, width, agents, agent_dims):
    for j in range(agents.shape[0]):
        if obb_overlap(x, y, h, length, width,
                       agents[j, 0], agents[j, 1], agents[j, 2], agent_dims[j, 0], agent_dims[j, 1]):
            return True
    return False


def _any_overlap_np(x, y, h, length, width, agents, agent_dims):
    if agents.shape[0] == 0:
        return False
    hit = obb_overlap_np(x, y, h, length, width,
                         agents[:, 0], agents[:, 1], agents[:, 2], agent_dims[:, 0], agent_dims[:, 1])
    return bool(hit.any())


any_overlap_nb = _any_overlap_nb
any_overlap_np = _any_overlap_np
any_overlap = pick(_any_overlap_nb, _any_overlap_np)


@njit
def _overlap_matrix_nb(ego, ego_dims, agents, agent_dims):
    n = ego.shape[0]
    a = agents.shape[1]
    out = np.zeros((n, a), dtype=np.bool_)
    for i in range(n):
        for j in range(a):
            out[i, j] = obb_overlap(ego[i, 0], ego[i, 1], ego[i, 2], ego_dims[0], ego_dims[1],
                                    agents[i, j, 0], agents[i, j, 1], agents[i, j, 2],
                                    agent_dims[j, 0], agent_dims[j, 1])
    return out


def _overlap_matrix_np(ego, ego_dims, agents, agent_dims):
    return obb_overlap_np(ego[:, None, 0], ego[:, None, 1], ego[:, None, 2], ego_dims[0], ego_dims[1],
                          agents[:, :, 0], agents[:, :, 1], agents[:, :, 2],
                          agent_dims[None, :, 0], agent_dims[None, :, 1])


overlap_matrix_nb = _overlap_matrix_nb
overlap_matrix_np = _overlap_matrix_np
overlap_matrix = pick(_overlap_matrix_nb, _overlap_matrix_np)
"""(ego (N,3), ego_dims (2,), agents (N,A,3), agent_dims (A,2)) -> (N,A) overlap flags."""


# --------------------------------------------------------------------------
# time to collision under constant velocity and heading
# --------------------------------------------------------------------------


@njit
def _min_ttc_nb(ego, ego_dims, agents, agent_dims, dt, n_horizon, min_speed):
    best = np.inf
    n = ego.shape[0]
    a = agents.shape[1]
    for i in range(n):
        ex, ey, eh, ev = ego[i, 0], ego[i, 1], ego[i, 2], ego[i, 3]
        if ev <= min_speed:
            continue
        ec = math.cos(eh)
        es = math.sin(eh)
        for j in range(a):
            ax, ay, ah, av = agents[i, j, 0], agents[i, j, 1], agents[i, j, 2], agents[i, j, 3]
            # only tracks in front of the ego
            if (ax - ex) * ec + (ay - ey) * es <= 0.0:
                continue
            if obb_overlap(ex, ey, eh, ego_dims[0], ego_dims[1], ax, ay, ah, agent_dims[j, 0], agent_dims[j, 1]):
                continue
            ac = math.cos(ah)
            asn = math.sin(ah)
            for k in range(1, n_horizon + 1):
                tau = k * dt
                if tau >= best:
                    break
                if obb_overlap(ex + ev * ec * tau, ey + ev * es * tau, eh, ego_dims[0], ego_dims[1],
                               ax + av * ac * tau, ay + av * asn * tau, ah, agent_dims[j, 0], agent_dims[j, 1]):
                    best = tau
                    break
    return best


def _min_ttc_np(ego, ego_dims, agents, agent_dims, dt, n_horizon, min_speed):
    if ego.shape[0] == 0 or agents.shape[1] == 0:
        return np.inf
    ex, ey, eh, ev = (ego[:, k, None] for k in range(4))
    ax, ay, ah, av = (agents[:, :, k] for k in range(4))
    ec, es = np.cos(eh), np.sin(eh)
    lj, wj = agent_dims[None, :, 0], agent_dims[None, :, 1]
    ahead = (ax - ex) * ec + (ay - ey) * es > 0.0
    now = obb_overlap_np(ex, ey, eh, ego_dims[0], ego_dims[1], ax, ay, ah, lj, wj)
    valid = (ev > min_speed) & ahead & ~now
    tau = dt * np.arange(1, n_horizon + 1)[None, None, :]
    hit = obb_overlap_np(
        (ex + ev * ec * tau[0])[:, None, :], (ey + ev * es * tau[0])[:, None, :], eh[:, :, None],
        ego_dims[0], ego_dims[1],
        ax[..., None] + (av * np.cos(ah))[..., None] * tau, ay[..., None] + (av * np.sin(ah))[..., None] * tau,
        ah[..., None], lj[..., None], wj[..., None],
    )
    hit &= valid[..., None]
    if not hit.any():
        return np.inf
    first = np.where(hit.any(axis=2), hit.argmax(axis=2), n_horizon)
    return float((first.min() + 1) * dt)


min_ttc_nb = _min_ttc_nb
min_ttc_np = _min_ttc_np
min_ttc = pick(_min_ttc_nb, _min_ttc_np)
"""(ego (N,4) x/y/heading/speed, ego_dims, agents (N,A,4), agent_dims, dt, n_horizon, min_speed) -> seconds.

Returns ``inf`` when no projected overlap occurs within ``n_horizon * dt``.
"""
