"""Numba twins of :mod:`.numpy_impl`, compiled lazily with ``@njit``.

Same names, signatures, and numerics as the numpy versions; scalar loop
style so the compiler can keep everything in registers. ``cache=True``
persists compilation across processes.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SHAPE_SPHERE = 0
SHAPE_BOX = 1
SHAPE_CYLINDER = 2


@njit(cache=True)
def _qmul(aw, ax, ay, az, bw, bx, by, bz):
    return (aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw)


@njit(cache=True)
def _qrot(qw, qx, qy, qz, vx, vy, vz):
    tx = 2.0 * (qy * vz - qz * vy)
    ty = 2.0 * (qz * vx - qx * vz)
    tz = 2.0 * (qx * vy - qy * vx)
    return (vx + qw * tx + qy * tz - qz * ty,
            vy + qw * ty + qz * tx - qx * tz,
            vz + qw * tz + qx * ty - qy * tx)


@njit(cache=True)
def quat_mul(a, b):
    out = np.empty(4)
    w, x, y, z = _qmul(a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3])
    out[0] = w
    out[1] = x
    out[2] = y
    out[3] = z
    return out


@njit(cache=True)
def quat_rotate(q, v):
    out = np.empty(3)
    x, y, z = _qrot(q[0], q[1], q[2], q[3], v[0], v[1], v[2])
    out[0] = x
    out[1] = y
    out[2] = z
    return out


@njit(cache=True)
def fk_chain(parent, org_pos, org_quat, axis, q):
    n = parent.shape[0]
    jpos = np.zeros((n, 3))
    jquat = np.zeros((n, 4))
    for i in range(n):
        p = parent[i]
        if p < 0:
            bpx = bpy = bpz = 0.0
            bqw, bqx, bqy, bqz = 1.0, 0.0, 0.0, 0.0
        else:
            bpx, bpy, bpz = jpos[p, 0], jpos[p, 1], jpos[p, 2]
            bqw, bqx, bqy, bqz = jquat[p, 0], jquat[p, 1], jquat[p, 2], jquat[p, 3]
        rx, ry, rz = _qrot(bqw, bqx, bqy, bqz, org_pos[i, 0], org_pos[i, 1], org_pos[i, 2])
        jpos[i, 0] = bpx + rx
        jpos[i, 1] = bpy + ry
        jpos[i, 2] = bpz + rz
        pw, px, py, pz = _qmul(bqw, bqx, bqy, bqz,
                               org_quat[i, 0], org_quat[i, 1], org_quat[i, 2], org_quat[i, 3])
        half = 0.5 * q[i]
        s = math.sin(half)
        aw, ax_, ay_, az_ = math.cos(half), axis[i, 0] * s, axis[i, 1] * s, axis[i, 2] * s
        w, x, y, z = _qmul(pw, px, py, pz, aw, ax_, ay_, az_)
        jquat[i, 0] = w
        jquat[i, 1] = x
        jquat[i, 2] = y
        jquat[i, 3] = z
    return jpos, jquat


@njit(cache=True)
def frame_world(jpos, jquat, fparent, fpos, fquat):
    m = fparent.shape[0]
    wpos = np.zeros((m, 3))
    wquat = np.zeros((m, 4))
    for i in range(m):
        p = fparent[i]
        if p < 0:
            for a in range(3):
                wpos[i, a] = fpos[i, a]
            for a in range(4):
                wquat[i, a] = fquat[i, a]
        else:
            rx, ry, rz = _qrot(jquat[p, 0], jquat[p, 1], jquat[p, 2], jquat[p, 3],
                               fpos[i, 0], fpos[i, 1], fpos[i, 2])
            wpos[i, 0] = jpos[p, 0] + rx
            wpos[i, 1] = jpos[p, 1] + ry
            wpos[i, 2] = jpos[p, 2] + rz
            w, x, y, z = _qmul(jquat[p, 0], jquat[p, 1], jquat[p, 2], jquat[p, 3],
                               fquat[i, 0], fquat[i, 1], fquat[i, 2], fquat[i, 3])
            wquat[i, 0] = w
            wquat[i, 1] = x
            wquat[i, 2] = y
            wquat[i, 3] = z
    return wpos, wquat


@njit(cache=True)
def jacobian_chain(jpos, jquat, axis, ancestor, target_pos):
    n = jpos.shape[0]
    jac = np.zeros((6, n))
    for i in range(n):
        if ancestor[i] == 0:
            continue
        zx, zy, zz = _qrot(jquat[i, 0], jquat[i, 1], jquat[i, 2], jquat[i, 3],
                           axis[i, 0], axis[i, 1], axis[i, 2])
        rx = target_pos[0] - jpos[i, 0]
        ry = target_pos[1] - jpos[i, 1]
        rz = target_pos[2] - jpos[i, 2]
        jac[0, i] = zx
        jac[1, i] = zy
        jac[2, i] = zz
        jac[3, i] = zy * rz - zz * ry
        jac[4, i] = zz * rx - zx * rz
        jac[5, i] = zx * ry - zy * rx
    return jac


@njit(cache=True)
def _sdf_local(objtype, params, px, py, pz):
    if objtype == SHAPE_SPHERE:
        r = params[0]
        d = math.sqrt(px * px + py * py + pz * pz)
        if d < 1e-12:
            return -r, 0.0, 0.0, 1.0
        return d - r, px / d, py / d, pz / d
    if objtype == SHAPE_BOX:
        qx = abs(px) - params[0]
        qy = abs(py) - params[1]
        qz = abs(pz) - params[2]
        mx = max(qx, max(qy, qz))
        if mx > 0.0:
            ox = max(qx, 0.0)
            oy = max(qy, 0.0)
            oz = max(qz, 0.0)
            dist = math.sqrt(ox * ox + oy * oy + oz * oz)
            nx = ox * (1.0 if px >= 0.0 else -1.0) / dist
            ny = oy * (1.0 if py >= 0.0 else -1.0) / dist
            nz = oz * (1.0 if pz >= 0.0 else -1.0) / dist
            return dist, nx, ny, nz
        if qx >= qy and qx >= qz:
            return mx, (1.0 if px >= 0.0 else -1.0), 0.0, 0.0
        if qy >= qz:
            return mx, 0.0, (1.0 if py >= 0.0 else -1.0), 0.0
        return mx, 0.0, 0.0, (1.0 if pz >= 0.0 else -1.0)
    r = params[0]
    hh = params[1]
    rxy = math.sqrt(px * px + py * py)
    dr = rxy - r
    dz = abs(pz) - hh
    if dr > 0.0 or dz > 0.0:
        odr = max(dr, 0.0)
        odz = max(dz, 0.0)
        dist = math.sqrt(odr * odr + odz * odz)
        nx = ny = 0.0
        if rxy > 1e-12 and odr > 0.0:
            nx = px / rxy * odr
            ny = py / rxy * odr
        nz = (1.0 if pz >= 0.0 else -1.0) * odz
        nn = math.sqrt(nx * nx + ny * ny + nz * nz)
        return dist, nx / nn, ny / nn, nz / nn
    if dr > dz:
        if rxy < 1e-12:
            return dr, 1.0, 0.0, 0.0
        return dr, px / rxy, py / rxy, 0.0
    return dz, 0.0, 0.0, (1.0 if pz >= 0.0 else -1.0)


@njit(cache=True)
def sdf_world(objtype, params, opos, oquat, point):
    lx, ly, lz = _qrot(oquat[0], -oquat[1], -oquat[2], -oquat[3],
                       point[0] - opos[0], point[1] - opos[1], point[2] - opos[2])
    dist, nx, ny, nz = _sdf_local(objtype, params, lx, ly, lz)
    wx, wy, wz = _qrot(oquat[0], oquat[1], oquat[2], oquat[3], nx, ny, nz)
    nw = np.empty(3)
    nw[0] = wx
    nw[1] = wy
    nw[2] = wz
    return dist, nw


@njit(cache=True)
def tip_contacts(tips, tip_radius, otypes, oparams, opos, oquat):
    k = tips.shape[0]
    nobj = otypes.shape[0]
    pen = np.zeros(k)
    normal = np.zeros((k, 3))
    objid = np.full(k, -1, dtype=np.int64)
    cpoint = np.zeros((k, 3))
    for i in range(k):
        best = 0.0
        for o in range(nobj):
            lx, ly, lz = _qrot(oquat[o, 0], -oquat[o, 1], -oquat[o, 2], -oquat[o, 3],
                               tips[i, 0] - opos[o, 0], tips[i, 1] - opos[o, 1],
                               tips[i, 2] - opos[o, 2])
            dist, nx, ny, nz = _sdf_local(otypes[o], oparams[o], lx, ly, lz)
            p = tip_radius - dist
            if p > best:
                best = p
                wx, wy, wz = _qrot(oquat[o, 0], oquat[o, 1], oquat[o, 2], oquat[o, 3],
                                   nx, ny, nz)
                pen[i] = p
                normal[i, 0] = wx
                normal[i, 1] = wy
                normal[i, 2] = wz
                objid[i] = o
                cpoint[i, 0] = tips[i, 0] - wx * dist
                cpoint[i, 1] = tips[i, 1] - wy * dist
                cpoint[i, 2] = tips[i, 2] - wz * dist
    return pen, normal, objid, cpoint


@njit(cache=True)
def _ray_primitive(objtype, params, ox, oy, oz, dx, dy, dz):
    tbest = np.inf
    if objtype == SHAPE_SPHERE:
        r = params[0]
        b = ox * dx + oy * dy + oz * dz
        c = ox * ox + oy * oy + oz * oz - r * r
        disc = b * b - c
        if disc >= 0.0:
            s = math.sqrt(disc)
            t = -b - s
            if t <= 1e-9:
                t = -b + s
            if t > 1e-9:
                tbest = t
    elif objtype == SHAPE_BOX:
        tmin = -np.inf
        tmax = np.inf
        ok = True
        for a in range(3):
            da = dx if a == 0 else (dy if a == 1 else dz)
            oa = ox if a == 0 else (oy if a == 1 else oz)
            if abs(da) < 1e-12:
                if abs(oa) > params[a]:
                    ok = False
                    break
            else:
                t1 = (-params[a] - oa) / da
                t2 = (params[a] - oa) / da
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
        if ok and tmax >= tmin and tmax > 1e-9:
            tbest = tmin if tmin > 1e-9 else tmax
    else:
        r = params[0]
        hh = params[1]
        a = dx * dx + dy * dy
        if a > 1e-16:
            b = ox * dx + oy * dy
            c = ox * ox + oy * oy - r * r
            disc = b * b - a * c
            if disc >= 0.0:
                s = math.sqrt(disc)
                t = (-b - s) / a
                if 1e-9 < t < tbest and abs(oz + t * dz) <= hh:
                    tbest = t
                t = (-b + s) / a
                if 1e-9 < t < tbest and abs(oz + t * dz) <= hh:
                    tbest = t
        if abs(dz) > 1e-12:
            for sgn in range(2):
                zc = -hh if sgn == 0 else hh
                t = (zc - oz) / dz
                if 1e-9 < t < tbest:
                    x = ox + t * dx
                    y = oy + t * dy
                    if x * x + y * y <= r * r:
                        tbest = t
    return tbest


@njit(cache=True)
def raycast_depth(cam_pos, cam_rot, focal_px, width, height,
                  otypes, oparams, opos, oquat, far):
    img = np.full((height, width), far)
    nobj = otypes.shape[0]
    locs = np.empty((nobj, 3))
    for o in range(nobj):
        lx, ly, lz = _qrot(oquat[o, 0], -oquat[o, 1], -oquat[o, 2], -oquat[o, 3],
                           cam_pos[0] - opos[o, 0], cam_pos[1] - opos[o, 1],
                           cam_pos[2] - opos[o, 2])
        locs[o, 0] = lx
        locs[o, 1] = ly
        locs[o, 2] = lz
    for v in range(height):
        for u in range(width):
            cx = (u - 0.5 * width) / focal_px
            cy = (v - 0.5 * height) / focal_px
            nrm = math.sqrt(cx * cx + cy * cy + 1.0)
            cx /= nrm
            cy /= nrm
            cz = 1.0 / nrm
            dwx = cam_rot[0, 0] * cx + cam_rot[0, 1] * cy + cam_rot[0, 2] * cz
            dwy = cam_rot[1, 0] * cx + cam_rot[1, 1] * cy + cam_rot[1, 2] * cz
            dwz = cam_rot[2, 0] * cx + cam_rot[2, 1] * cy + cam_rot[2, 2] * cz
            tbest = far
            for o in range(nobj):
                dlx, dly, dlz = _qrot(oquat[o, 0], -oquat[o, 1], -oquat[o, 2], -oquat[o, 3],
                                      dwx, dwy, dwz)
                t = _ray_primitive(otypes[o], oparams[o],
                                   locs[o, 0], locs[o, 1], locs[o, 2], dlx, dly, dlz)
                if t < tbest:
                    tbest = t
            img[v, u] = tbest
    return img


@njit(cache=True)
def tactile_patch(fn, sx, sy, rc, cc, sigma, rows, cols):
    w = np.empty((rows, cols))
    tot = 0.0
    inv = 1.0 / (2.0 * sigma * sigma)
    for i in range(rows):
        for j in range(cols):
            e = math.exp(-((i - rc) * (i - rc) + (j - cc) * (j - cc)) * inv)
            w[i, j] = e
            tot += e
    out = np.zeros((rows, cols, 3))
    for i in range(rows):
        for j in range(cols):
            wij = w[i, j] / tot
            out[i, j, 0] = sx * wij
            out[i, j, 1] = sy * wij
            out[i, j, 2] = fn * wij
    return out


@njit(cache=True)
def im2col(x, k, s, p):
    n, c, h, w = x.shape
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    cols = np.zeros((n, oh * ow, c * k * k))
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                row = i * ow + j
                for ch in range(c):
                    for ki in range(k):
                        hi = i * s + ki - p
                        if hi < 0 or hi >= h:
                            continue
                        for kj in range(k):
                            wj = j * s + kj - p
                            if wj < 0 or wj >= w:
                                continue
                            cols[b, row, ch * k * k + ki * k + kj] = x[b, ch, hi, wj]
    return cols


@njit(cache=True)
def col2im(cols, c, h, w, k, s, p):
    n = cols.shape[0]
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    x = np.zeros((n, c, h, w))
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                row = i * ow + j
                for ch in range(c):
                    for ki in range(k):
                        hi = i * s + ki - p
                        if hi < 0 or hi >= h:
                            continue
                        for kj in range(k):
                            wj = j * s + kj - p
                            if wj < 0 or wj >= w:
                                continue
                            x[b, ch, hi, wj] += cols[b, row, ch * k * k + ki * k + kj]
    return x
