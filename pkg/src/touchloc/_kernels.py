"""Compiled inner loops for measurement-to-mesh distances.

Both the exhaustive and the index-pruned searches go through the same
``_face_cost`` routine on the same object-frame inputs, so for any face they
both visit they produce bit-identical values.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _dot(a0, a1, a2, b0, b1, b2):
    return a0 * b0 + a1 * b1 + a2 * b2


@njit(cache=True)
def _closest_sqdist(p0, p1, p2, tri):
    # Ericson, Real-Time Collision Detection, ClosestPtPointTriangle
    ax, ay, az = tri[0, 0], tri[0, 1], tri[0, 2]
    abx, aby, abz = tri[1, 0] - ax, tri[1, 1] - ay, tri[1, 2] - az
    acx, acy, acz = tri[2, 0] - ax, tri[2, 1] - ay, tri[2, 2] - az
    apx, apy, apz = p0 - ax, p1 - ay, p2 - az
    d1 = _dot(abx, aby, abz, apx, apy, apz)
    d2 = _dot(acx, acy, acz, apx, apy, apz)
    if d1 <= 0.0 and d2 <= 0.0:
        cx, cy, cz = ax, ay, az
    else:
        bpx, bpy, bpz = p0 - tri[1, 0], p1 - tri[1, 1], p2 - tri[1, 2]
        d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
        d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
        cpx, cpy, cpz = p0 - tri[2, 0], p1 - tri[2, 1], p2 - tri[2, 2]
        d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
        d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            cx, cy, cz = tri[1, 0], tri[1, 1], tri[1, 2]
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            cx, cy, cz = ax + v * abx, ay + v * aby, az + v * abz
        elif d6 >= 0.0 and d5 <= d6:
            cx, cy, cz = tri[2, 0], tri[2, 1], tri[2, 2]
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            w = d2 / (d2 - d6)
            cx, cy, cz = ax + w * acx, ay + w * acy, az + w * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            cx = tri[1, 0] + w * (tri[2, 0] - tri[1, 0])
            cy = tri[1, 1] + w * (tri[2, 1] - tri[1, 1])
            cz = tri[1, 2] + w * (tri[2, 2] - tri[1, 2])
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            cx = ax + abx * v + acx * w
            cy = ay + aby * v + acy * w
            cz = az + abz * v + acz * w
    dx, dy, dz = p0 - cx, p1 - cy, p2 - cz
    return dx * dx + dy * dy + dz * dz


@njit(cache=True)
def point_triangle_distance(p, tri):
    return math.sqrt(_closest_sqdist(p[0], p[1], p[2], tri))


@njit(cache=True)
def _angle(a0, a1, a2, b0, b1, b2):
    cx = a1 * b2 - a2 * b1
    cy = a2 * b0 - a0 * b2
    cz = a0 * b1 - a1 * b0
    return math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), a0 * b0 + a1 * b1 + a2 * b2)


@njit(cache=True)
def _face_cost(p0, p1, p2, n0, n1, n2, tri, normal, inv_sp, inv_sn):
    dp = math.sqrt(_closest_sqdist(p0, p1, p2, tri)) * inv_sp
    dn = _angle(n0, n1, n2, normal[0], normal[1], normal[2]) * inv_sn
    return math.sqrt(dp * dp + dn * dn)


@njit(cache=True)
def _to_object(R, t, p, n):
    # R^T (p - t), R^T n
    x, y, z = p[0] - t[0], p[1] - t[1], p[2] - t[2]
    p0 = R[0, 0] * x + R[1, 0] * y + R[2, 0] * z
    p1 = R[0, 1] * x + R[1, 1] * y + R[2, 1] * z
    p2 = R[0, 2] * x + R[1, 2] * y + R[2, 2] * z
    n0 = R[0, 0] * n[0] + R[1, 0] * n[1] + R[2, 0] * n[2]
    n1 = R[0, 1] * n[0] + R[1, 1] * n[1] + R[2, 1] * n[2]
    n2 = R[0, 2] * n[0] + R[1, 2] * n[1] + R[2, 2] * n[2]
    return p0, p1, p2, n0, n1, n2


@njit(cache=True)
def face_costs(R, t, p, n, tris, normals, face_ids, inv_sp, inv_sn):
    """Costs of one measurement against selected faces, for a single pose."""
    p0, p1, p2, n0, n1, n2 = _to_object(R, t, p, n)
    out = np.empty(len(face_ids))
    for j in range(len(face_ids)):
        f = face_ids[j]
        out[j] = _face_cost(p0, p1, p2, n0, n1, n2, tris[f], normals[f], inv_sp, inv_sn)
    return out


@njit(cache=True)
def object_distance_exhaustive(Rs, ts, P, Nn, tris, normals, inv_sp, inv_sn):
    npose = Rs.shape[0]
    nmeas = P.shape[0]
    nface = tris.shape[0]
    dist = np.empty((npose, nmeas))
    fid = np.empty((npose, nmeas), dtype=np.int64)
    for i in range(npose):
        R = Rs[i]
        t = ts[i]
        for k in range(nmeas):
            p0, p1, p2, n0, n1, n2 = _to_object(R, t, P[k], Nn[k])
            best = np.inf
            bf = -1
            for f in range(nface):
                c = _face_cost(p0, p1, p2, n0, n1, n2, tris[f], normals[f], inv_sp, inv_sn)
                if c < best:
                    best = c
                    bf = f
            dist[i, k] = best
            fid[i, k] = bf
    return dist, fid


@njit(cache=True)
def _bisect_left(a, x):
    lo, hi = 0, a.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _bisect_right(a, x):
    lo, hi = 0, a.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if x < a[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def candidate_range(alphas, alpha_y, delta):
    """Slice [start, end) of the sorted angle table selected for ``alpha_y``."""
    nf = alphas.shape[0]
    il = _bisect_right(alphas, alpha_y) - 1
    if il < 0:
        il = 0
    ih = _bisect_left(alphas, alpha_y)
    if ih >= nf:
        ih = nf - 1
    a_lo = alphas[il]
    a_hi = alphas[ih]
    start = min(_bisect_right(alphas, a_lo - delta), _bisect_left(alphas, a_lo))
    end = max(_bisect_left(alphas, a_hi + delta), _bisect_right(alphas, a_hi))
    return start, end


@njit(cache=True)
def object_distance_indexed(Rs, ts, P, Nn, tris, normals, inv_sp, inv_sn,
                            alphas, order, ref, delta):
    npose = Rs.shape[0]
    nmeas = P.shape[0]
    dist = np.empty((npose, nmeas))
    fid = np.empty((npose, nmeas), dtype=np.int64)
    nvisited = 0
    for i in range(npose):
        R = Rs[i]
        t = ts[i]
        for k in range(nmeas):
            p0, p1, p2, n0, n1, n2 = _to_object(R, t, P[k], Nn[k])
            ay = _angle(ref[0], ref[1], ref[2], n0, n1, n2)
            start, end = candidate_range(alphas, ay, delta)
            nvisited += end - start
            best = np.inf
            bf = -1
            for j in range(start, end):
                f = order[j]
                c = _face_cost(p0, p1, p2, n0, n1, n2, tris[f], normals[f], inv_sp, inv_sn)
                if c < best or (c == best and f < bf):
                    best = c
                    bf = f
            dist[i, k] = best
            fid[i, k] = bf
    return dist, fid, nvisited


@njit(cache=True)
def ray_hits(origin, direction, tris, eps):
    """Moller-Trumbore against every triangle; returns (t, u, v) with t=inf on miss."""
    nf = tris.shape[0]
    out = np.full((nf, 3), np.inf)
    for f in range(nf):
        e1 = tris[f, 1] - tris[f, 0]
        e2 = tris[f, 2] - tris[f, 0]
        px = direction[1] * e2[2] - direction[2] * e2[1]
        py = direction[2] * e2[0] - direction[0] * e2[2]
        pz = direction[0] * e2[1] - direction[1] * e2[0]
        det = e1[0] * px + e1[1] * py + e1[2] * pz
        if abs(det) < eps:
            continue
        inv = 1.0 / det
        s = origin - tris[f, 0]
        u = (s[0] * px + s[1] * py + s[2] * pz) * inv
        if u < -eps or u > 1.0 + eps:
            continue
        qx = s[1] * e1[2] - s[2] * e1[1]
        qy = s[2] * e1[0] - s[0] * e1[2]
        qz = s[0] * e1[1] - s[1] * e1[0]
        v = (direction[0] * qx + direction[1] * qy + direction[2] * qz) * inv
        if v < -eps or u + v > 1.0 + eps:
            continue
        tt = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
        if tt < eps:
            continue
        out[f, 0] = tt
        out[f, 1] = u
        out[f, 2] = v
    return out
