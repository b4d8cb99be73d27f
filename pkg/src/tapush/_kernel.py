"""Jitted planar contact stepper.

Everything here works on flat numpy arrays so a whole action (hundreds of
sub-steps) runs inside one compiled call. The public wrapper lives in
``world.py``.

Body conventions inside the kernel:

* robot parts 0..2 are kinematic boxes (palm, left finger, right finger);
* objects are dynamic discs (shape 0) or boxes (shape 1);
* static obstacles are fixed boxes.

Contact normals always point from body A to body B, where B is a dynamic
object.
"""

import math

import numpy as np
from numba import njit

DISC = 0
BOX = 1

KIND_ROBOT = 0
KIND_OBJECT = 1
KIND_STATIC = 2

MAX_CONTACTS = 256


@njit(cache=True)
def wrap_angle(a):
    # (-pi, pi]; values already in range pass through bit-unchanged
    if -math.pi < a <= math.pi:
        return a
    twopi = 2.0 * math.pi
    a = a - twopi * math.floor((a + math.pi) / twopi)
    if a <= -math.pi:
        a += twopi
    elif a > math.pi:
        a -= twopi
    return a


@njit(cache=True)
def point_in_polygon(px, py, poly):
    """Closed point-in-polygon test (boundary counts as inside)."""
    n = poly.shape[0]
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = poly[i, 0], poly[i, 1]
        xj, yj = poly[j, 0], poly[j, 1]
        # on-edge check
        ex, ey = xi - xj, yi - yj
        cross = (px - xj) * ey - (py - yj) * ex
        if abs(cross) <= 1e-12 * max(1.0, abs(ex) + abs(ey)):
            if min(xi, xj) - 1e-12 <= px <= max(xi, xj) + 1e-12 and \
                    min(yi, yj) - 1e-12 <= py <= max(yi, yj) + 1e-12:
                return True
        if (yi > py) != (yj > py):
            xc = (xj - xi) * (py - yi) / (yj - yi) + xi
            if px < xc:
                inside = not inside
        j = i
    return inside


@njit(cache=True)
def segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    if ll <= 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / ll
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


@njit(cache=True)
def boundary_distance(px, py, poly):
    n = poly.shape[0]
    best = np.inf
    j = n - 1
    for i in range(n):
        d = segment_distance(px, py, poly[j, 0], poly[j, 1], poly[i, 0], poly[i, 1])
        if d < best:
            best = d
        j = i
    return best


@njit(cache=True)
def box_distance(px, py, cx, cy, hx, hy, ang):
    """Distance from a point to a solid oriented box (0 inside)."""
    c, s = math.cos(ang), math.sin(ang)
    dx, dy = px - cx, py - cy
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    qx = max(abs(lx) - hx, 0.0)
    qy = max(abs(ly) - hy, 0.0)
    return math.hypot(qx, qy)


@njit(cache=True)
def in_safe_zone(px, py, poly, margin, obstacles):
    if not point_in_polygon(px, py, poly):
        return False
    if boundary_distance(px, py, poly) < margin:
        return False
    for k in range(obstacles.shape[0]):
        o = obstacles[k]
        if box_distance(px, py, o[0], o[1], o[2], o[3], o[4]) < margin:
            return False
    return True


# ---------------------------------------------------------------------------
# narrow phase


@njit(cache=True)
def _box_vertices(cx, cy, hx, hy, ang, out):
    c, s = math.cos(ang), math.sin(ang)
    lx = (-hx, hx, hx, -hx)
    ly = (-hy, -hy, hy, hy)
    for i in range(4):
        out[i, 0] = cx + c * lx[i] - s * ly[i]
        out[i, 1] = cy + s * lx[i] + c * ly[i]


@njit(cache=True)
def _box_normals(ang, out):
    c, s = math.cos(ang), math.sin(ang)
    nx = (0.0, 1.0, 0.0, -1.0)
    ny = (-1.0, 0.0, 1.0, 0.0)
    for i in range(4):
        out[i, 0] = c * nx[i] - s * ny[i]
        out[i, 1] = s * nx[i] + c * ny[i]


@njit(cache=True)
def _max_separation(va, na, vb):
    best = -np.inf
    idx = 0
    for i in range(4):
        smin = np.inf
        for j in range(4):
            d = na[i, 0] * (vb[j, 0] - va[i, 0]) + na[i, 1] * (vb[j, 1] - va[i, 1])
            if d < smin:
                smin = d
        if smin > best:
            best = smin
            idx = i
    return best, idx


@njit(cache=True)
def collide_box_box(ca, cb, out):
    """Box-box manifold (reference-face clipping).

    ``ca``/``cb`` are (cx, cy, hx, hy, angle). Writes up to two rows of
    (px, py, nx, ny, sep) into ``out`` and returns the count.
    """
    return _collide_box_box(ca, cb, out, np.empty((16, 2)))


@njit(cache=True)
def _collide_box_box(ca, cb, out, ws):
    va = ws[0:4]
    vb = ws[4:8]
    na = ws[8:12]
    nb = ws[12:16]
    _box_vertices(ca[0], ca[1], ca[2], ca[3], ca[4], va)
    _box_vertices(cb[0], cb[1], cb[2], cb[3], cb[4], vb)
    _box_normals(ca[4], na)
    _box_normals(cb[4], nb)
    sa, ia = _max_separation(va, na, vb)
    sb, ib = _max_separation(vb, nb, va)
    if sb > sa + 1e-6:
        rv, rn, iv, inn, ri, flip = vb, nb, va, na, ib, True
    else:
        rv, rn, iv, inn, ri, flip = va, na, vb, nb, ia, False
    nx, ny = rn[ri, 0], rn[ri, 1]
    # incident edge: most anti-parallel face on the other box
    best = np.inf
    ie = 0
    for j in range(4):
        d = inn[j, 0] * nx + inn[j, 1] * ny
        if d < best:
            best = d
            ie = j
    p0x, p0y = iv[ie, 0], iv[ie, 1]
    p1x, p1y = iv[(ie + 1) % 4, 0], iv[(ie + 1) % 4, 1]
    r1x, r1y = rv[ri, 0], rv[ri, 1]
    r2x, r2y = rv[(ri + 1) % 4, 0], rv[(ri + 1) % 4, 1]
    tx, ty = r2x - r1x, r2y - r1y
    tl = math.hypot(tx, ty)
    tx /= tl
    ty /= tl
    # clip against t.x >= t.r1
    lo = tx * r1x + ty * r1y
    d0 = tx * p0x + ty * p0y - lo
    d1 = tx * p1x + ty * p1y - lo
    if d0 < 0.0 and d1 < 0.0:
        return 0
    if d0 < 0.0:
        f = d0 / (d0 - d1)
        p0x, p0y = p0x + f * (p1x - p0x), p0y + f * (p1y - p0y)
    elif d1 < 0.0:
        f = d0 / (d0 - d1)
        p1x, p1y = p0x + f * (p1x - p0x), p0y + f * (p1y - p0y)
    # clip against t.x <= t.r2
    hi = tx * r2x + ty * r2y
    d0 = hi - (tx * p0x + ty * p0y)
    d1 = hi - (tx * p1x + ty * p1y)
    if d0 < 0.0 and d1 < 0.0:
        return 0
    if d0 < 0.0:
        f = d0 / (d0 - d1)
        p0x, p0y = p0x + f * (p1x - p0x), p0y + f * (p1y - p0y)
    elif d1 < 0.0:
        f = d0 / (d0 - d1)
        p1x, p1y = p0x + f * (p1x - p0x), p0y + f * (p1y - p0y)
    count = 0
    sgn = -1.0 if flip else 1.0
    for k in range(2):
        px = p0x if k == 0 else p1x
        py = p0y if k == 0 else p1y
        sep = nx * (px - r1x) + ny * (py - r1y)
        out[count, 0] = px - 0.5 * sep * nx
        out[count, 1] = py - 0.5 * sep * ny
        out[count, 2] = sgn * nx
        out[count, 3] = sgn * ny
        out[count, 4] = sep
        count += 1
    return count


@njit(cache=True)
def collide_box_disc(box, dcx, dcy, r, out):
    """Box (A) against disc (B); normal from box to disc."""
    c, s = math.cos(box[4]), math.sin(box[4])
    dx, dy = dcx - box[0], dcy - box[1]
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    hx, hy = box[2], box[3]
    if abs(lx) <= hx and abs(ly) <= hy:
        px_depth = hx - abs(lx)
        py_depth = hy - abs(ly)
        if px_depth < py_depth:
            nlx = 1.0 if lx >= 0.0 else -1.0
            nly = 0.0
            qx, qy = nlx * hx, ly
            sep = -px_depth - r
        else:
            nlx = 0.0
            nly = 1.0 if ly >= 0.0 else -1.0
            qx, qy = lx, nly * hy
            sep = -py_depth - r
    else:
        qx = min(max(lx, -hx), hx)
        qy = min(max(ly, -hy), hy)
        ex, ey = lx - qx, ly - qy
        dist = math.hypot(ex, ey)
        nlx, nly = ex / dist, ey / dist
        sep = dist - r
    nx = c * nlx - s * nly
    ny = s * nlx + c * nly
    wx = box[0] + c * qx - s * qy
    wy = box[1] + s * qx + c * qy
    out[0, 0] = wx + 0.5 * sep * nx
    out[0, 1] = wy + 0.5 * sep * ny
    out[0, 2] = nx
    out[0, 3] = ny
    out[0, 4] = sep
    return 1


@njit(cache=True)
def collide_disc_disc(ax, ay, ra, bx, by, rb, out):
    dx, dy = bx - ax, by - ay
    d = math.hypot(dx, dy)
    if d > 1e-12:
        nx, ny = dx / d, dy / d
    else:
        nx, ny = 1.0, 0.0
    sep = d - ra - rb
    out[0, 0] = ax + nx * (ra + 0.5 * sep)
    out[0, 1] = ay + ny * (ra + 0.5 * sep)
    out[0, 2] = nx
    out[0, 3] = ny
    out[0, 4] = sep
    return 1


@njit(cache=True)
def collide(sa, ga, sb, gb, out):
    """Dispatch on shapes. ``g`` = (cx, cy, d0, d1, angle)."""
    return _collide(sa, ga, sb, gb, out, np.empty((16, 2)))


@njit(cache=True)
def _collide(sa, ga, sb, gb, out, ws):
    if sa == BOX and sb == BOX:
        return _collide_box_box(ga, gb, out, ws)
    if sa == BOX and sb == DISC:
        return collide_box_disc(ga, gb[0], gb[1], gb[2], out)
    if sa == DISC and sb == BOX:
        n = collide_box_disc(gb, ga[0], ga[1], ga[2], out)
        out[0, 2] = -out[0, 2]
        out[0, 3] = -out[0, 3]
        return n
    return collide_disc_disc(ga[0], ga[1], ga[2], gb[0], gb[1], gb[2], out)


@njit(cache=True)
def bounding_radius(shape, d0, d1):
    if shape == DISC:
        return d0
    return math.hypot(d0, d1)


# ---------------------------------------------------------------------------
# robot geometry


@njit(cache=True)
def robot_parts(rq, geom, out):
    """Palm and finger boxes as rows of (cx, cy, hx, hy, angle)."""
    x, y, th, op = rq[0], rq[1], rq[2], rq[3]
    palm_hx, palm_hy, fin_hx, fin_hy = geom[0], geom[1], geom[2], geom[3]
    fx, fy = math.cos(th), math.sin(th)
    lx, ly = -fy, fx
    fwd = palm_hx + fin_hx
    lat = 0.5 * op + fin_hy
    out[0, 0] = x
    out[0, 1] = y
    out[0, 2] = palm_hx
    out[0, 3] = palm_hy
    out[0, 4] = th
    out[1, 0] = x + fx * fwd + lx * lat
    out[1, 1] = y + fy * fwd + ly * lat
    out[1, 2] = fin_hx
    out[1, 3] = fin_hy
    out[1, 4] = th
    out[2, 0] = x + fx * fwd - lx * lat
    out[2, 1] = y + fy * fwd - ly * lat
    out[2, 2] = fin_hx
    out[2, 3] = fin_hy
    out[2, 4] = th


@njit(cache=True)
def _robot_point_velocity(part, px, py, rq, rqd):
    vx = rqd[0] - rqd[2] * (py - rq[1])
    vy = rqd[1] + rqd[2] * (px - rq[0])
    if part > 0:
        th = rq[2]
        lx, ly = -math.sin(th), math.cos(th)
        sgn = 0.5 if part == 1 else -0.5
        vx += sgn * rqd[3] * lx
        vy += sgn * rqd[3] * ly
    return vx, vy


# ---------------------------------------------------------------------------
# contact generation


@njit(cache=True)
def _object_geom(i, pose, shape, dims, out):
    out[0] = pose[i, 0]
    out[1] = pose[i, 1]
    out[2] = dims[i, 0]
    out[3] = dims[i, 1]
    out[4] = pose[i, 2]


@njit(cache=True)
def find_contacts(rq, geom, pose, shape, dims, live, obstacles, margin, contacts):
    """Fill ``contacts`` rows with

    (kindA, idxA, idxB, px, py, nx, ny, sep)

    for every pair within ``margin``. Returns the count.
    """
    return _find_contacts(rq, geom, pose, shape, dims, live, obstacles, margin, contacts,
                          np.empty((7, 5)), np.empty((16, 2)))


@njit(cache=True)
def _find_contacts(rq, geom, pose, shape, dims, live, obstacles, margin, contacts, work, ws):
    # work rows: 0-2 robot parts, 3-4 manifold buffer, 5 and 6 object geometry
    nobj = pose.shape[0]
    parts = work[0:3]
    robot_parts(rq, geom, parts)
    buf = work[3:5]
    ga = work[5]
    gb = work[6]
    count = 0
    for b in range(nobj):
        if not live[b]:
            continue
        rb = bounding_radius(shape[b], dims[b, 0], dims[b, 1])
        _object_geom(b, pose, shape, dims, gb)
        # robot parts
        for p in range(3):
            rp = math.hypot(parts[p, 2], parts[p, 3])
            if math.hypot(pose[b, 0] - parts[p, 0], pose[b, 1] - parts[p, 1]) > rp + rb + margin:
                continue
            n = _collide(BOX, parts[p], shape[b], gb, buf, ws)
            for k in range(n):
                if buf[k, 4] <= margin and count < MAX_CONTACTS:
                    contacts[count, 0] = KIND_ROBOT
                    contacts[count, 1] = p
                    contacts[count, 2] = b
                    contacts[count, 3:8] = buf[k, :]
                    count += 1
        # static obstacles
        for o in range(obstacles.shape[0]):
            ro = math.hypot(obstacles[o, 2], obstacles[o, 3])
            if math.hypot(pose[b, 0] - obstacles[o, 0], pose[b, 1] - obstacles[o, 1]) > ro + rb + margin:
                continue
            n = _collide(BOX, obstacles[o], shape[b], gb, buf, ws)
            for k in range(n):
                if buf[k, 4] <= margin and count < MAX_CONTACTS:
                    contacts[count, 0] = KIND_STATIC
                    contacts[count, 1] = o
                    contacts[count, 2] = b
                    contacts[count, 3:8] = buf[k, :]
                    count += 1
        # other objects (a < b)
        for a in range(b):
            if not live[a]:
                continue
            ra = bounding_radius(shape[a], dims[a, 0], dims[a, 1])
            if math.hypot(pose[b, 0] - pose[a, 0], pose[b, 1] - pose[a, 1]) > ra + rb + margin:
                continue
            _object_geom(a, pose, shape, dims, ga)
            n = _collide(shape[a], ga, shape[b], gb, buf, ws)
            for k in range(n):
                if buf[k, 4] <= margin and count < MAX_CONTACTS:
                    contacts[count, 0] = KIND_OBJECT
                    contacts[count, 1] = a
                    contacts[count, 2] = b
                    contacts[count, 3:8] = buf[k, :]
                    count += 1
    return count


# ---------------------------------------------------------------------------
# velocity solve


@njit(cache=True)
def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


@njit(cache=True)
def solve_velocities(contacts, count, rq, rqd, pose, vel, inv_mass, inv_inertia, mu,
                     robot_mu, static_mu, dt, iterations):
    lam_n = np.zeros(count)
    lam_t = np.zeros(count)
    k_n = np.empty(count)
    k_t = np.empty(count)
    mus = np.empty(count)
    for c in range(count):
        kind = int(contacts[c, 0])
        a = int(contacts[c, 1])
        b = int(contacts[c, 2])
        px, py, nx, ny = contacts[c, 3], contacts[c, 4], contacts[c, 5], contacts[c, 6]
        tx, ty = -ny, nx
        rbx, rby = px - pose[b, 0], py - pose[b, 1]
        kn = inv_mass[b] + inv_inertia[b] * _cross(rbx, rby, nx, ny) ** 2
        kt = inv_mass[b] + inv_inertia[b] * _cross(rbx, rby, tx, ty) ** 2
        if kind == KIND_OBJECT:
            rax, ray = px - pose[a, 0], py - pose[a, 1]
            kn += inv_mass[a] + inv_inertia[a] * _cross(rax, ray, nx, ny) ** 2
            kt += inv_mass[a] + inv_inertia[a] * _cross(rax, ray, tx, ty) ** 2
            mus[c] = math.sqrt(mu[a] * mu[b])
        elif kind == KIND_ROBOT:
            mus[c] = math.sqrt(robot_mu * mu[b])
        else:
            mus[c] = math.sqrt(static_mu * mu[b])
        k_n[c] = kn
        k_t[c] = kt
    for _ in range(iterations):
        for c in range(count):
            kind = int(contacts[c, 0])
            a = int(contacts[c, 1])
            b = int(contacts[c, 2])
            px, py, nx, ny, sep = contacts[c, 3], contacts[c, 4], contacts[c, 5], contacts[c, 6], contacts[c, 7]
            tx, ty = -ny, nx
            rbx, rby = px - pose[b, 0], py - pose[b, 1]
            vbx = vel[b, 0] - vel[b, 2] * rby
            vby = vel[b, 1] + vel[b, 2] * rbx
            if kind == KIND_OBJECT:
                rax, ray = px - pose[a, 0], py - pose[a, 1]
                vax = vel[a, 0] - vel[a, 2] * ray
                vay = vel[a, 1] + vel[a, 2] * rax
            elif kind == KIND_ROBOT:
                rax, ray = 0.0, 0.0
                vax, vay = _robot_point_velocity(a, px, py, rq, rqd)
            else:
                rax, ray = 0.0, 0.0
                vax, vay = 0.0, 0.0
            # friction first, bounded by the current normal impulse
            vt = (vbx - vax) * tx + (vby - vay) * ty
            dl = -vt / k_t[c]
            bound = mus[c] * lam_n[c]
            old = lam_t[c]
            lam_t[c] = min(max(old + dl, -bound), bound)
            dl = lam_t[c] - old
            if dl != 0.0:
                ix, iy = dl * tx, dl * ty
                vel[b, 0] += inv_mass[b] * ix
                vel[b, 1] += inv_mass[b] * iy
                vel[b, 2] += inv_inertia[b] * _cross(rbx, rby, ix, iy)
                if kind == KIND_OBJECT:
                    vel[a, 0] -= inv_mass[a] * ix
                    vel[a, 1] -= inv_mass[a] * iy
                    vel[a, 2] -= inv_inertia[a] * _cross(rax, ray, ix, iy)
                vbx = vel[b, 0] - vel[b, 2] * rby
                vby = vel[b, 1] + vel[b, 2] * rbx
                if kind == KIND_OBJECT:
                    vax = vel[a, 0] - vel[a, 2] * ray
                    vay = vel[a, 1] + vel[a, 2] * rax
            # normal, speculative for positive separation
            vn = (vbx - vax) * nx + (vby - vay) * ny
            bias = sep / dt if sep > 0.0 else 0.0
            dl = -(vn + bias) / k_n[c]
            old = lam_n[c]
            lam_n[c] = max(old + dl, 0.0)
            dl = lam_n[c] - old
            if dl != 0.0:
                ix, iy = dl * nx, dl * ny
                vel[b, 0] += inv_mass[b] * ix
                vel[b, 1] += inv_mass[b] * iy
                vel[b, 2] += inv_inertia[b] * _cross(rbx, rby, ix, iy)
                if kind == KIND_OBJECT:
                    vel[a, 0] -= inv_mass[a] * ix
                    vel[a, 1] -= inv_mass[a] * iy
                    vel[a, 2] -= inv_inertia[a] * _cross(rax, ray, ix, iy)
    # stale friction can exceed a normal impulse that shrank afterwards;
    # clip it back so the solve never adds energy
    for c in range(count):
        bound = mus[c] * lam_n[c]
        if lam_t[c] > bound or lam_t[c] < -bound:
            kind = int(contacts[c, 0])
            a = int(contacts[c, 1])
            b = int(contacts[c, 2])
            px, py, nx, ny = contacts[c, 3], contacts[c, 4], contacts[c, 5], contacts[c, 6]
            tx, ty = -ny, nx
            target = min(max(lam_t[c], -bound), bound)
            dl = target - lam_t[c]
            lam_t[c] = target
            ix, iy = dl * tx, dl * ty
            rbx, rby = px - pose[b, 0], py - pose[b, 1]
            vel[b, 0] += inv_mass[b] * ix
            vel[b, 1] += inv_mass[b] * iy
            vel[b, 2] += inv_inertia[b] * _cross(rbx, rby, ix, iy)
            if kind == KIND_OBJECT:
                rax, ray = px - pose[a, 0], py - pose[a, 1]
                vel[a, 0] -= inv_mass[a] * ix
                vel[a, 1] -= inv_mass[a] * iy
                vel[a, 2] -= inv_inertia[a] * _cross(rax, ray, ix, iy)


# ---------------------------------------------------------------------------
# position projection


@njit(cache=True)
def project_positions(rq, geom, pose, shape, dims, live, inv_mass, obstacles, slop,
                      max_iter, contacts, work, ws):
    """Translate objects apart until every overlap is below ``slop``.

    Only positions move; velocities are untouched so this stage never adds
    kinetic energy. Returns the worst remaining penetration.
    """
    target = 0.25 * slop
    worst = 0.0
    for _ in range(max_iter):
        count = _find_contacts(rq, geom, pose, shape, dims, live, obstacles, 0.0, contacts,
                               work, ws)
        worst = 0.0
        for c in range(count):
            pen = -contacts[c, 7]
            if pen > worst:
                worst = pen
        if worst <= 0.5 * slop:
            return worst
        for c in range(count):
            kind = int(contacts[c, 0])
            a = int(contacts[c, 1])
            b = int(contacts[c, 2])
            nx, ny = contacts[c, 5], contacts[c, 6]
            # refresh separation along n using the motion done so far in this pass
            pen = -contacts[c, 7]
            if pen <= target:
                continue
            corr = pen - target
            if kind == KIND_OBJECT:
                wsum = inv_mass[a] + inv_mass[b]
                wa = inv_mass[a] / wsum
                wb = inv_mass[b] / wsum
                pose[a, 0] -= wa * corr * nx
                pose[a, 1] -= wa * corr * ny
                pose[b, 0] += wb * corr * nx
                pose[b, 1] += wb * corr * ny
            else:
                pose[b, 0] += corr * nx
                pose[b, 1] += corr * ny
            # later contacts on the same bodies see a partially fixed pair;
            # mark the rest of this pair's manifold as resolved
            for c2 in range(c + 1, count):
                if contacts[c2, 0] == contacts[c, 0] and contacts[c2, 1] == contacts[c, 1] \
                        and contacts[c2, 2] == contacts[c, 2]:
                    contacts[c2, 7] += corr
    count = _find_contacts(rq, geom, pose, shape, dims, live, obstacles, 0.0, contacts,
                           work, ws)
    worst = 0.0
    for c in range(count):
        pen = -contacts[c, 7]
        if pen > worst:
            worst = pen
    return worst


# ---------------------------------------------------------------------------
# main loop


@njit(cache=True)
def kinetic_energy(vel, mass, inertia, live):
    e = 0.0
    for i in range(vel.shape[0]):
        if live[i]:
            e += 0.5 * mass[i] * (vel[i, 0] ** 2 + vel[i, 1] ** 2) + 0.5 * inertia[i] * vel[i, 2] ** 2
    return e


@njit(cache=True)
def _at_rest(vel, live, rest_lin, rest_ang):
    for i in range(vel.shape[0]):
        if live[i]:
            if math.hypot(vel[i, 0], vel[i, 1]) >= rest_lin or abs(vel[i, 2]) >= rest_ang:
                return False
    return True


@njit(cache=True)
def simulate(rq, rqd, pose, vel, fallen, shape, dims, mass, inertia, mu, torsion,
             poly, obstacles, geom, command, n_sub, dt, noise, noise_scale, settle,
             phys, frames, record_every, energy):
    """Advance the world ``n_sub`` sub-steps in place.

    ``phys`` = (gravity, robot_mu, static_mu, slop, margin, iterations,
    projection_iterations, rest_lin, rest_ang). ``noise`` is either empty
    or (n_sub, 4 + 3 D) standard normals scaled column-wise by
    ``noise_scale``. With ``settle`` set the robot is held still, the loop
    exits as soon as every object is at rest and no noise is applied.

    Returns (sub-steps executed, worst penetration, frames written); the
    largest kinetic-energy gain seen across a contact solve with the robot
    at rest goes into ``energy[0]``.
    """
    g = phys[0]
    robot_mu = phys[1]
    static_mu = phys[2]
    slop = phys[3]
    margin = phys[4]
    iterations = int(phys[5])
    proj_iter = int(phys[6])
    rest_lin = phys[7]
    rest_ang = phys[8]
    max_open = geom[4]
    nobj = pose.shape[0]
    inv_mass = np.empty(nobj)
    inv_inertia = np.empty(nobj)
    live = np.empty(nobj, dtype=np.bool_)
    for i in range(nobj):
        inv_mass[i] = 1.0 / mass[i]
        inv_inertia[i] = 1.0 / inertia[i]
        live[i] = not fallen[i]
    contacts = np.empty((MAX_CONTACTS, 8))
    work = np.empty((7, 5))
    ws = np.empty((16, 2))
    use_noise = noise.shape[0] > 0 and not settle
    worst_pen = 0.0
    worst_gain = 0.0
    n_frames = 0
    done = 0
    for step in range(n_sub):
        if settle and _at_rest(vel, live, rest_lin, rest_ang):
            break
        # robot velocity for this sub-step
        for j in range(4):
            if settle:
                rqd[j] = 0.0
            else:
                rqd[j] = command[j]
                if use_noise:
                    rqd[j] += noise[step, j] * noise_scale[j]
        if (rq[3] <= 0.0 and rqd[3] < 0.0) or (rq[3] >= max_open and rqd[3] > 0.0):
            rqd[3] = 0.0
        # object velocity noise and table friction
        for i in range(nobj):
            if not live[i]:
                continue
            if use_noise:
                for j in range(3):
                    vel[i, j] += noise[step, 4 + 3 * i + j] * noise_scale[4 + 3 * i + j]
            sp = math.hypot(vel[i, 0], vel[i, 1])
            dv = mu[i] * g * dt
            if sp <= dv:
                vel[i, 0] = 0.0
                vel[i, 1] = 0.0
            else:
                f = (sp - dv) / sp
                vel[i, 0] *= f
                vel[i, 1] *= f
            dw = torsion[i] * dt
            if abs(vel[i, 2]) <= dw:
                vel[i, 2] = 0.0
            elif vel[i, 2] > 0.0:
                vel[i, 2] -= dw
            else:
                vel[i, 2] += dw
        e0 = kinetic_energy(vel, mass, inertia, live)
        count = _find_contacts(rq, geom, pose, shape, dims, live, obstacles, margin, contacts,
                               work, ws)
        # force-limited gripper: fingers stall rather than crush an object
        if rqd[3] < 0.0:
            for c in range(count):
                if contacts[c, 0] == KIND_ROBOT and contacts[c, 1] > 0 and contacts[c, 7] <= 0.5 * slop:
                    rqd[3] = 0.0
                    break
        if count > 0:
            solve_velocities(contacts, count, rq, rqd, pose, vel, inv_mass, inv_inertia, mu,
                             robot_mu, static_mu, dt, iterations)
        e1 = kinetic_energy(vel, mass, inertia, live)
        all_static = True
        for j in range(4):
            if rqd[j] != 0.0:
                all_static = False
        if all_static and e1 - e0 > worst_gain:
            worst_gain = e1 - e0
        # integrate
        rq[0] += rqd[0] * dt
        rq[1] += rqd[1] * dt
        if rqd[2] != 0.0:
            rq[2] = wrap_angle(rq[2] + rqd[2] * dt)
        rq[3] = min(max(rq[3] + rqd[3] * dt, 0.0), max_open)
        for i in range(nobj):
            if live[i]:
                pose[i, 0] += vel[i, 0] * dt
                pose[i, 1] += vel[i, 1] * dt
                if vel[i, 2] != 0.0:
                    pose[i, 2] = wrap_angle(pose[i, 2] + vel[i, 2] * dt)
        if count > 0:
            pen = project_positions(rq, geom, pose, shape, dims, live, inv_mass, obstacles,
                                    slop, proj_iter, contacts, work, ws)
            if pen > worst_pen:
                worst_pen = pen
        # falling off the table
        for i in range(nobj):
            if live[i] and not point_in_polygon(pose[i, 0], pose[i, 1], poly):
                live[i] = False
                fallen[i] = True
                vel[i, 0] = 0.0
                vel[i, 1] = 0.0
                vel[i, 2] = 0.0
        done += 1
        if record_every > 0 and done % record_every == 0 and n_frames < frames.shape[0]:
            _write_frame(frames, n_frames, done * dt, rq, rqd, pose, vel, fallen)
            n_frames += 1
    if settle:
        for j in range(4):
            rqd[j] = 0.0
    energy[0] = worst_gain
    return done, worst_pen, n_frames


@njit(cache=True)
def _write_frame(frames, k, t, rq, rqd, pose, vel, fallen):
    frames[k, 0] = t
    for j in range(4):
        frames[k, 1 + j] = rq[j]
        frames[k, 5 + j] = rqd[j]
    off = 9
    for i in range(pose.shape[0]):
        for j in range(3):
            frames[k, off + j] = pose[i, j]
            frames[k, off + 3 + j] = vel[i, j]
        frames[k, off + 6] = 1.0 if fallen[i] else 0.0
        off += 7
