"""Pure-numpy implementations of the hot kernels.

Reference semantics for the numba twins in :mod:`.numba_impl`; both expose
the same function names and signatures. Quaternions are (w, x, y, z) unit
arrays, poses are float64 throughout.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    # v + w*(2 qv x v) + qv x (2 qv x v), one normalization-free rotation
    qv = q[1:]
    t = 2.0 * np.cross(qv, v)
    return v + q[0] * t + np.cross(qv, t)


def _axis_angle_quat(axis: np.ndarray, angle: float) -> np.ndarray:
    half = 0.5 * angle
    s = np.sin(half)
    return np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


# ---------------------------------------------------------------------------
# Kinematic chains
# ---------------------------------------------------------------------------

def fk_chain(parent, org_pos, org_quat, axis, q):
    """World pose of every joint frame, root first.

    parent[i] < i indexes the parent joint (-1 for the base). Returns
    (pos (n, 3), quat (n, 4)).
    """
    n = parent.shape[0]
    jpos = np.zeros((n, 3))
    jquat = np.zeros((n, 4))
    for i in range(n):
        p = parent[i]
        if p < 0:
            base_pos = np.zeros(3)
            base_quat = np.array([1.0, 0.0, 0.0, 0.0])
        else:
            base_pos = jpos[p]
            base_quat = jquat[p]
        jpos[i] = base_pos + quat_rotate(base_quat, org_pos[i])
        pre = quat_mul(base_quat, org_quat[i])
        jquat[i] = quat_mul(pre, _axis_angle_quat(axis[i], q[i]))
    return jpos, jquat


def frame_world(jpos, jquat, fparent, fpos, fquat):
    """World pose of fixed frames attached to joints (-1 = world)."""
    m = fparent.shape[0]
    wpos = np.zeros((m, 3))
    wquat = np.zeros((m, 4))
    for i in range(m):
        p = fparent[i]
        if p < 0:
            wpos[i] = fpos[i]
            wquat[i] = fquat[i]
        else:
            wpos[i] = jpos[p] + quat_rotate(jquat[p], fpos[i])
            wquat[i] = quat_mul(jquat[p], fquat[i])
    return wpos, wquat


def jacobian_chain(jpos, jquat, axis, ancestor, target_pos):
    """Geometric world-frame Jacobian, angular rows 0..2, linear rows 3..5.

    ancestor[i] nonzero marks joints on the chain from the base to the
    target frame; other columns stay zero.
    """
    n = jpos.shape[0]
    jac = np.zeros((6, n))
    for i in range(n):
        if ancestor[i] == 0:
            continue
        z = quat_rotate(jquat[i], axis[i])
        jac[0:3, i] = z
        jac[3:6, i] = np.cross(z, target_pos - jpos[i])
    return jac


# ---------------------------------------------------------------------------
# Signed distances and fingertip contacts
# ---------------------------------------------------------------------------

SHAPE_SPHERE = 0
SHAPE_BOX = 1
SHAPE_CYLINDER = 2


def _sdf_local(objtype: int, params: np.ndarray, p: np.ndarray):
    """Signed distance and outward normal of one primitive, local frame."""
    if objtype == SHAPE_SPHERE:
        r = params[0]
        d = np.sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        if d < 1e-12:
            return -r, np.array([0.0, 0.0, 1.0])
        return d - r, p / d
    if objtype == SHAPE_BOX:
        h = params
        qv = np.abs(p) - h
        mx = max(qv[0], max(qv[1], qv[2]))
        if mx > 0.0:
            out = np.maximum(qv, 0.0)
            dist = np.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2)
            n = out * np.sign(p)
            return dist, n / dist
        # inside: face of least penetration
        ax = 0
        if qv[1] > qv[ax]:
            ax = 1
        if qv[2] > qv[ax]:
            ax = 2
        n = np.zeros(3)
        n[ax] = 1.0 if p[ax] >= 0.0 else -1.0
        return mx, n
    # capped cylinder, axis +z
    r, hh = params[0], params[1]
    rxy = np.sqrt(p[0] * p[0] + p[1] * p[1])
    dr = rxy - r
    dz = abs(p[2]) - hh
    if dr > 0.0 or dz > 0.0:
        odr = max(dr, 0.0)
        odz = max(dz, 0.0)
        dist = np.sqrt(odr * odr + odz * odz)
        n = np.zeros(3)
        if rxy > 1e-12 and odr > 0.0:
            n[0] = p[0] / rxy * odr
            n[1] = p[1] / rxy * odr
        n[2] = (1.0 if p[2] >= 0.0 else -1.0) * odz
        nn = np.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
        return dist, n / nn
    if dr > dz:
        if rxy < 1e-12:
            return dr, np.array([1.0, 0.0, 0.0])
        return dr, np.array([p[0] / rxy, p[1] / rxy, 0.0])
    return dz, np.array([0.0, 0.0, 1.0 if p[2] >= 0.0 else -1.0])


def _quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def sdf_world(objtype, params, opos, oquat, point):
    """Signed distance and outward world normal of one posed primitive."""
    qc = _quat_conj(oquat)
    local = quat_rotate(qc, point - opos)
    dist, nl = _sdf_local(int(objtype), params, local)
    return dist, quat_rotate(oquat, nl)


def tip_contacts(tips, tip_radius, otypes, oparams, opos, oquat):
    """Deepest-object contact per fingertip sphere.

    Returns (pen (k,), normal (k, 3), objid (k,), cpoint (k, 3)); pen <= 0
    means no contact and objid -1. Normals point out of the object.
    """
    k = tips.shape[0]
    nobj = otypes.shape[0]
    pen = np.zeros(k)
    normal = np.zeros((k, 3))
    objid = np.full(k, -1, dtype=np.int64)
    cpoint = np.zeros((k, 3))
    for i in range(k):
        best = 0.0
        for o in range(nobj):
            dist, nw = sdf_world(otypes[o], oparams[o], opos[o], oquat[o], tips[i])
            p = tip_radius - dist
            if p > best:
                best = p
                pen[i] = p
                normal[i] = nw
                objid[i] = o
                cpoint[i] = tips[i] - nw * dist
    return pen, normal, objid, cpoint


# ---------------------------------------------------------------------------
# Depth raycasting
# ---------------------------------------------------------------------------

def _ray_primitive(objtype, params, o, d):
    """Smallest positive hit distance in the primitive's local frame, or inf."""
    tbest = np.inf
    if objtype == SHAPE_SPHERE:
        r = params[0]
        b = o @ d
        c = o @ o - r * r
        disc = b * b - c
        if disc >= 0.0:
            s = np.sqrt(disc)
            t = -b - s
            if t <= 1e-9:
                t = -b + s
            if t > 1e-9:
                tbest = t
    elif objtype == SHAPE_BOX:
        tmin, tmax = -np.inf, np.inf
        ok = True
        for a in range(3):
            if abs(d[a]) < 1e-12:
                if abs(o[a]) > params[a]:
                    ok = False
                    break
            else:
                t1 = (-params[a] - o[a]) / d[a]
                t2 = (params[a] - o[a]) / d[a]
                if t1 > t2:
                    t1, t2 = t2, t1
                tmin = max(tmin, t1)
                tmax = min(tmax, t2)
        if ok and tmax >= tmin and tmax > 1e-9:
            t = tmin if tmin > 1e-9 else tmax
            tbest = t
    else:
        r, hh = params[0], params[1]
        a = d[0] * d[0] + d[1] * d[1]
        if a > 1e-16:
            b = o[0] * d[0] + o[1] * d[1]
            c = o[0] * o[0] + o[1] * o[1] - r * r
            disc = b * b - a * c
            if disc >= 0.0:
                s = np.sqrt(disc)
                for t in ((-b - s) / a, (-b + s) / a):
                    if 1e-9 < t < tbest and abs(o[2] + t * d[2]) <= hh:
                        tbest = t
        if abs(d[2]) > 1e-12:
            for zc in (-hh, hh):
                t = (zc - o[2]) / d[2]
                if 1e-9 < t < tbest:
                    x = o[0] + t * d[0]
                    y = o[1] + t * d[1]
                    if x * x + y * y <= r * r:
                        tbest = t
    return tbest


def raycast_depth(cam_pos, cam_rot, focal_px, width, height,
                  otypes, oparams, opos, oquat, far):
    """Ray-march free 32x32-style depth image: distance to first hit.

    cam_rot columns are the camera axes in world (x right, y down,
    z forward). Pixels with no hit inside ``far`` get ``far``.
    """
    img = np.full((height, width), far)
    nobj = otypes.shape[0]
    qcs = [ _quat_conj(oquat[o]) for o in range(nobj) ]
    locs = [ quat_rotate(qcs[o], cam_pos - opos[o]) for o in range(nobj) ]
    for v in range(height):
        for u in range(width):
            # pixel (w/2, h/2) samples the optical axis exactly
            dx = (u - 0.5 * width) / focal_px
            dy = (v - 0.5 * height) / focal_px
            dc = np.array([dx, dy, 1.0])
            dc /= np.sqrt(dc @ dc)
            dw = cam_rot @ dc
            tbest = far
            for o in range(nobj):
                dl = quat_rotate(qcs[o], dw)
                t = _ray_primitive(int(otypes[o]), oparams[o], locs[o], dl)
                if t < tbest:
                    tbest = t
            img[v, u] = tbest
    return img


# ---------------------------------------------------------------------------
# Taxel patches
# ---------------------------------------------------------------------------

def tactile_patch(fn, sx, sy, rc, cc, sigma, rows, cols):
    """Gaussian force patch over a rows x cols taxel grid.

    Weights are normalized to sum to one over the grid, so channel sums
    reproduce (sx, sy, fn) exactly. Channels: shear x, shear y, normal.
    """
    r = np.arange(rows, dtype=np.float64)[:, None]
    c = np.arange(cols, dtype=np.float64)[None, :]
    w = np.exp(-((r - rc) ** 2 + (c - cc) ** 2) / (2.0 * sigma * sigma))
    w /= w.sum()
    out = np.zeros((rows, cols, 3))
    out[:, :, 0] = sx * w
    out[:, :, 1] = sy * w
    out[:, :, 2] = fn * w
    return out


# ---------------------------------------------------------------------------
# Convolution plumbing
# ---------------------------------------------------------------------------

def im2col(x, k, s, p):
    """(N, C, H, W) -> (N, oh*ow, C*k*k) patch matrix."""
    n, c, h, w = x.shape
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    xp[:, :, p:p + h, p:p + w] = x
    sn, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, oh, ow, k, k), (sn, sc, sh * s, sw * s, sh, sw))
    # (N, oh, ow, C, k, k) -> (N, oh*ow, C*k*k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh * ow, c * k * k)


def col2im(cols, c, h, w, k, s, p):
    """Adjoint of :func:`im2col`: scatter-add patches back to (N, C, H, W)."""
    n = cols.shape[0]
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    cols6 = cols.reshape(n, oh, ow, c, k, k)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + oh * s:s, kj:kj + ow * s:s] += cols6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return xp[:, :, p:p + h, p:p + w]
