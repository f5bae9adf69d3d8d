"""Numba kernels for the planar articulated-body engine.

Generalized coordinates: [base_x, base_z, base_pitch, q_0 .. q_{J-1}].
Link i >= 1 is driven by joint i-1 (dof index i+2); links are stored in tree
order, so every parent precedes its children.

Contacts use a penalty normal force plus anchor-spring (stick/slip) Coulomb
friction; the tangential anchors are part of the simulation state.

All kernels are pure functions of their arguments and use float64 throughout,
so repeated calls are bit-identical.
"""

import numpy as np
from numba import njit

# contact record columns
C_LINK = 0      # link index, -1 for the object itself
C_KIND = 1      # 0 = ground, 1 = object
C_PX = 2
C_PZ = 3
C_FN = 4
C_FT = 5
C_DEPTH = 6
C_NX = 7        # world outward normal (toward the robot point)
C_NZ = 8
C_STICK = 9     # 1 while the friction anchor holds, 0 during slip
NC_COLS = 10


@njit(cache=True)
def fk_links(qpos, parent, anchor, com):
    """World link-frame origins, angles and COM positions."""
    L = parent.shape[0]
    pos = np.empty((L, 2))
    ang = np.empty(L)
    cw = np.empty((L, 2))
    pos[0, 0] = qpos[0]
    pos[0, 1] = qpos[1]
    ang[0] = qpos[2]
    for i in range(1, L):
        p = parent[i]
        cp = np.cos(ang[p])
        sp = np.sin(ang[p])
        pos[i, 0] = pos[p, 0] + cp * anchor[i, 0] - sp * anchor[i, 1]
        pos[i, 1] = pos[p, 1] + sp * anchor[i, 0] + cp * anchor[i, 1]
        ang[i] = ang[p] + qpos[i + 2]
    for i in range(L):
        c = np.cos(ang[i])
        s = np.sin(ang[i])
        cw[i, 0] = pos[i, 0] + c * com[i, 0] - s * com[i, 1]
        cw[i, 1] = pos[i, 1] + s * com[i, 0] + c * com[i, 1]
    return pos, ang, cw


@njit(cache=True)
def link_velocities(qvel, parent, pos):
    """World origin velocities and angular velocities per link."""
    L = parent.shape[0]
    vel = np.empty((L, 2))
    omg = np.empty(L)
    vel[0, 0] = qvel[0]
    vel[0, 1] = qvel[1]
    omg[0] = qvel[2]
    for i in range(1, L):
        p = parent[i]
        rx = pos[i, 0] - pos[p, 0]
        rz = pos[i, 1] - pos[p, 1]
        vel[i, 0] = vel[p, 0] - omg[p] * rz
        vel[i, 1] = vel[p, 1] + omg[p] * rx
        omg[i] = omg[p] + qvel[i + 2]
    return vel, omg


@njit(cache=True)
def mass_matrix(parent, pos, cw, mass, inertia):
    L = parent.shape[0]
    ndof = L + 2
    M = np.zeros((ndof, ndof))
    dofs = np.empty(ndof, dtype=np.int64)
    colx = np.empty(ndof)
    colz = np.empty(ndof)
    rot = np.empty(ndof)
    for i in range(L):
        # active dofs: base x, z, pitch, then ancestor joints
        nd = 0
        dofs[nd] = 0
        colx[nd] = 1.0
        colz[nd] = 0.0
        rot[nd] = 0.0
        nd += 1
        dofs[nd] = 1
        colx[nd] = 0.0
        colz[nd] = 1.0
        rot[nd] = 0.0
        nd += 1
        dofs[nd] = 2
        colx[nd] = -(cw[i, 1] - pos[0, 1])
        colz[nd] = cw[i, 0] - pos[0, 0]
        rot[nd] = 1.0
        nd += 1
        k = i
        while k >= 1:
            dofs[nd] = k + 2
            colx[nd] = -(cw[i, 1] - pos[k, 1])
            colz[nd] = cw[i, 0] - pos[k, 0]
            rot[nd] = 1.0
            nd += 1
            k = parent[k]
        m = mass[i]
        Ii = inertia[i]
        for a in range(nd):
            da = dofs[a]
            for b in range(nd):
                db = dofs[b]
                M[da, db] += m * (colx[a] * colx[b] + colz[a] * colz[b]) \
                    + Ii * rot[a] * rot[b]
    return M


@njit(cache=True)
def bias_forces(parent, pos, ang, cw, vel, omg, mass, inertia, gravity):
    """h(q, qd) with M qdd = Q - h: velocity products plus gravity.

    Recursive Newton-Euler with qdd = 0 and fictitious base acceleration
    -gravity (gravity is the signed z acceleration, e.g. -9.81).
    """
    L = parent.shape[0]
    ndof = L + 2
    a_org = np.empty((L, 2))
    alp = np.zeros(L)
    a_org[0, 0] = 0.0
    a_org[0, 1] = -gravity
    for i in range(1, L):
        p = parent[i]
        rx = pos[i, 0] - pos[p, 0]
        rz = pos[i, 1] - pos[p, 1]
        w2 = omg[p] * omg[p]
        a_org[i, 0] = a_org[p, 0] - alp[p] * rz - w2 * rx
        a_org[i, 1] = a_org[p, 1] + alp[p] * rx - w2 * rz
        alp[i] = alp[p]
    f = np.empty((L, 2))
    n = np.empty(L)
    for i in range(L):
        rcx = cw[i, 0] - pos[i, 0]
        rcz = cw[i, 1] - pos[i, 1]
        acx = a_org[i, 0] - alp[i] * rcz - omg[i] * omg[i] * rcx
        acz = a_org[i, 1] + alp[i] * rcx - omg[i] * omg[i] * rcz
        f[i, 0] = mass[i] * acx
        f[i, 1] = mass[i] * acz
        n[i] = inertia[i] * alp[i] + rcx * f[i, 1] - rcz * f[i, 0]
    h = np.zeros(ndof)
    for i in range(L - 1, 0, -1):
        h[i + 2] = n[i]
        p = parent[i]
        rx = pos[i, 0] - pos[p, 0]
        rz = pos[i, 1] - pos[p, 1]
        n[p] += n[i] + rx * f[i, 1] - rz * f[i, 0]
        f[p, 0] += f[i, 0]
        f[p, 1] += f[i, 1]
    h[0] = f[0, 0]
    h[1] = f[0, 1]
    h[2] = n[0]
    return h


@njit(cache=True)
def _rect_contact(plx, plz, hex_, hez_):
    """Depth and outward local normal for a point inside a rectangle.

    Returns (depth, nx, nz); depth <= 0 means no contact.
    """
    dx = hex_ - abs(plx)
    dz = hez_ - abs(plz)
    if dx <= 0.0 or dz <= 0.0:
        return -1.0, 0.0, 0.0
    if dx < dz:
        if plx >= 0.0:
            return dx, 1.0, 0.0
        return dx, -1.0, 0.0
    if plz >= 0.0:
        return dz, 0.0, 1.0
    return dz, 0.0, -1.0


@njit(cache=True)
def _friction(s_t, a_t, k_n, k_t, mu, depth):
    """Anchor-spring Coulomb friction along one tangent coordinate.

    Returns (fn, ft, new_anchor, stick) for a contact at tangential position
    s_t with anchor a_t (nan when the contact is fresh).  Forces are the
    elastic parts only; damping is handled implicitly by the stepper.
    """
    fn = k_n * depth
    if np.isnan(a_t):
        a_t = s_t
    ft = -k_t * (s_t - a_t)
    lim = mu * fn
    stick = 1.0
    if ft > lim:
        ft = lim
        a_t = s_t + ft / k_t
        stick = 0.0
    elif ft < -lim:
        ft = -lim
        a_t = s_t + ft / k_t
        stick = 0.0
    return fn, ft, a_t, stick


@njit(cache=True)
def compute_contacts(pos, ang, cp_local, cp_link,
                     obj_q, rect_off, rect_he, k_n, mu,
                     anc_ground, anc_obj, anc_corner):
    """Penalty contacts for robot points vs ground/object and object vs ground.

    Elastic forces only; contact damping is applied implicitly by the stepper
    from the recorded geometry.  Mutates the anchor arrays (stick/slip state).
    Returns (point_forces (P,2), obj_wrench (3,), records, n_records).
    """
    P = cp_local.shape[0]
    R = rect_off.shape[0]
    max_rec = P * (1 + R) + 4 * R
    rec = np.zeros((max_rec, NC_COLS))
    nrec = 0
    pf = np.zeros((P, 2))
    ow = np.zeros(3)
    co = np.cos(obj_q[2])
    so = np.sin(obj_q[2])
    k_t = k_n
    for p in range(P):
        li = cp_link[p]
        c = np.cos(ang[li])
        s = np.sin(ang[li])
        lx = cp_local[p, 0]
        lz = cp_local[p, 1]
        pwx = pos[li, 0] + c * lx - s * lz
        pwz = pos[li, 1] + s * lx + c * lz
        # ground half-plane z <= 0
        depth = -pwz
        if depth > 0.0:
            fn, ft, anc_ground[p], stick = _friction(
                pwx, anc_ground[p], k_n, k_t, mu, depth)
            pf[p, 0] += ft
            pf[p, 1] += fn
            rec[nrec, C_LINK] = li
            rec[nrec, C_KIND] = 0.0
            rec[nrec, C_PX] = pwx
            rec[nrec, C_PZ] = pwz
            rec[nrec, C_FN] = fn
            rec[nrec, C_FT] = ft
            rec[nrec, C_DEPTH] = depth
            rec[nrec, C_NX] = 0.0
            rec[nrec, C_NZ] = 1.0
            rec[nrec, C_STICK] = stick
            nrec += 1
        else:
            anc_ground[p] = np.nan
        # object rectangles; anchors live in the object frame
        dxw = pwx - obj_q[0]
        dzw = pwz - obj_q[1]
        plx = co * dxw + so * dzw
        plz = -so * dxw + co * dzw
        for r in range(R):
            qx = plx - rect_off[r, 0]
            qz = plz - rect_off[r, 1]
            depth, nlx, nlz = _rect_contact(qx, qz, rect_he[r, 0], rect_he[r, 1])
            if depth <= 0.0:
                anc_obj[p, r] = np.nan
                continue
            # local tangent = normal rotated +90deg
            tlx = -nlz
            tlz = nlx
            s_t = plx * tlx + plz * tlz
            fn, ft, anc_obj[p, r], stick = _friction(
                s_t, anc_obj[p, r], k_n, k_t, mu, depth)
            # world-frame force on the robot point
            nx = co * nlx - so * nlz
            nz = so * nlx + co * nlz
            tx = co * tlx - so * tlz
            tz = so * tlx + co * tlz
            fx = nx * fn + tx * ft
            fz = nz * fn + tz * ft
            pf[p, 0] += fx
            pf[p, 1] += fz
            ow[0] -= fx
            ow[1] -= fz
            ow[2] -= dxw * fz - dzw * fx
            rec[nrec, C_LINK] = li
            rec[nrec, C_KIND] = 1.0
            rec[nrec, C_PX] = pwx
            rec[nrec, C_PZ] = pwz
            rec[nrec, C_FN] = fn
            rec[nrec, C_FT] = ft
            rec[nrec, C_DEPTH] = depth
            rec[nrec, C_NX] = nx
            rec[nrec, C_NZ] = nz
            rec[nrec, C_STICK] = stick
            nrec += 1
    # object corners vs ground
    ci = 0
    for r in range(R):
        for cx in range(2):
            for cz in range(2):
                lx = rect_off[r, 0] + (2 * cx - 1) * rect_he[r, 0]
                lz = rect_off[r, 1] + (2 * cz - 1) * rect_he[r, 1]
                dxw = co * lx - so * lz
                dzw = so * lx + co * lz
                pwx = obj_q[0] + dxw
                pwz = obj_q[1] + dzw
                depth = -pwz
                if depth <= 0.0:
                    anc_corner[ci] = np.nan
                    ci += 1
                    continue
                fn, ft, anc_corner[ci], stick = _friction(
                    pwx, anc_corner[ci], k_n, k_t, mu, depth)
                ow[0] += ft
                ow[1] += fn
                ow[2] += dxw * fn - dzw * ft
                rec[nrec, C_LINK] = -1.0
                rec[nrec, C_KIND] = 0.0
                rec[nrec, C_PX] = pwx
                rec[nrec, C_PZ] = pwz
                rec[nrec, C_FN] = fn
                rec[nrec, C_FT] = ft
                rec[nrec, C_DEPTH] = depth
                rec[nrec, C_NX] = 0.0
                rec[nrec, C_NZ] = 1.0
                rec[nrec, C_STICK] = stick
                nrec += 1
                ci += 1
    return pf, ow, rec, nrec


@njit(cache=True)
def apply_point_forces(parent, pos, pf, cp_link, cp_world, ndof):
    """Jacobian-transpose mapping of collision-point forces to generalized forces."""
    Q = np.zeros(ndof)
    P = cp_link.shape[0]
    for p in range(P):
        fx = pf[p, 0]
        fz = pf[p, 1]
        if fx == 0.0 and fz == 0.0:
            continue
        px = cp_world[p, 0]
        pz = cp_world[p, 1]
        Q[0] += fx
        Q[1] += fz
        Q[2] += (px - pos[0, 0]) * fz - (pz - pos[0, 1]) * fx
        k = cp_link[p]
        while k >= 1:
            Q[k + 2] += (px - pos[k, 0]) * fz - (pz - pos[k, 1]) * fx
            k = parent[k]
    return Q


@njit(cache=True)
def point_world(pos, ang, cp_local, cp_link):
    P = cp_local.shape[0]
    out = np.empty((P, 2))
    for p in range(P):
        li = cp_link[p]
        c = np.cos(ang[li])
        s = np.sin(ang[li])
        out[p, 0] = pos[li, 0] + c * cp_local[p, 0] - s * cp_local[p, 1]
        out[p, 1] = pos[li, 1] + s * cp_local[p, 0] + c * cp_local[p, 1]
    return out


@njit(cache=True)
def pd_torques_kernel(targets, qpos, qvel, kp, kd, tau_lim):
    J = kp.shape[0]
    tau = np.empty(J)
    for j in range(J):
        t = kp[j] * (targets[j] - qpos[3 + j]) - kd[j] * qvel[3 + j]
        if t > tau_lim[j]:
            t = tau_lim[j]
        elif t < -tau_lim[j]:
            t = -tau_lim[j]
        tau[j] = t
    return tau


@njit(cache=True)
def _solve_spd(A, b):
    """Solve A x = b in place for symmetric positive-definite A (Cholesky)."""
    n = A.shape[0]
    for j in range(n):
        d = A[j, j]
        for k in range(j):
            d -= A[j, k] * A[j, k]
        d = np.sqrt(d)
        A[j, j] = d
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= A[i, k] * A[j, k]
            A[i, j] = s / d
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= A[i, k] * b[k]
        b[i] = s / A[i, i]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= A[k, i] * b[k]
        b[i] = s / A[i, i]
    return b


@njit(cache=True)
def _contact_damping(A, rec, nrec, parent, pos, obj_q, dt, c_n, c_t, ndof):
    """Add dt * J^T C J to A for every active contact (implicit damping).

    The combined dof vector is [robot qvel (ndof), object vx, vz, omega].
    Normal damping c_n always; tangential damping c_t only while sticking
    (Coulomb slip handles sliding dissipation).
    """
    nt = ndof + 3
    jx = np.empty(nt)
    jz = np.empty(nt)
    row = np.empty(nt)
    for k in range(nrec):
        for d in range(nt):
            jx[d] = 0.0
            jz[d] = 0.0
        li = int(rec[k, C_LINK])
        px = rec[k, C_PX]
        pz = rec[k, C_PZ]
        if li >= 0:
            jx[0] = 1.0
            jz[1] = 1.0
            jx[2] = -(pz - pos[0, 1])
            jz[2] = px - pos[0, 0]
            kk = li
            while kk >= 1:
                jx[kk + 2] = -(pz - pos[kk, 1])
                jz[kk + 2] = px - pos[kk, 0]
                kk = parent[kk]
            if rec[k, C_KIND] == 1.0:
                # relative to the object's material point
                dxo = px - obj_q[0]
                dzo = pz - obj_q[1]
                jx[ndof] = -1.0
                jx[ndof + 2] = dzo
                jz[ndof + 1] = -1.0
                jz[ndof + 2] = -dxo
        else:
            dxo = px - obj_q[0]
            dzo = pz - obj_q[1]
            jx[ndof] = 1.0
            jx[ndof + 2] = -dzo
            jz[ndof + 1] = 1.0
            jz[ndof + 2] = dxo
        nx = rec[k, C_NX]
        nz = rec[k, C_NZ]
        # normal direction
        for d in range(nt):
            row[d] = nx * jx[d] + nz * jz[d]
        for a in range(nt):
            ra = dt * c_n * row[a]
            if ra != 0.0:
                for b in range(nt):
                    A[a, b] += ra * row[b]
        if rec[k, C_STICK] == 1.0 and c_t > 0.0:
            # tangent = normal rotated +90 degrees
            for d in range(nt):
                row[d] = -nz * jx[d] + nx * jz[d]
            for a in range(nt):
                ra = dt * c_t * row[a]
                if ra != 0.0:
                    for b in range(nt):
                        A[a, b] += ra * row[b]


@njit(cache=True)
def step_kernel(qpos, qvel, obj_q, obj_v, anc_ground, anc_obj, anc_corner,
                targets, obj_wrench,
                parent, anchor, com, mass, inertia,
                kp, kd, tau_lim, q_lo, q_hi,
                cp_local, cp_link, rect_off, rect_he,
                obj_mass, obj_inertia,
                dt, decimation, gravity, k_n, c_d, mu, joint_damping):
    """Advance `decimation` semi-implicit Euler substeps in place.

    Robot and object velocities are solved jointly so that stiff contact
    damping and PD derivative terms can be integrated implicitly:
    (M + dt D) v+ = M v + dt (Q - h).

    Returns (diverged, records, n_records, link_obj_fn) with contact data from
    the final substep; link_obj_fn[l] is the summed object-contact normal force
    on link l.
    """
    L = parent.shape[0]
    ndof = L + 2
    nt = ndof + 3
    rec = np.zeros((1, NC_COLS))
    nrec = 0
    link_fn = np.zeros(L)
    diverged = False
    c_t = 0.2 * c_d
    for it in range(decimation):
        pos, ang, cw = fk_links(qpos, parent, anchor, com)
        vel, omg = link_velocities(qvel, parent, pos)
        pf, ow, rec, nrec = compute_contacts(
            pos, ang, cp_local, cp_link, obj_q,
            rect_off, rect_he, k_n, mu,
            anc_ground, anc_obj, anc_corner)
        cpw = point_world(pos, ang, cp_local, cp_link)
        Q = apply_point_forces(parent, pos, pf, cp_link, cpw, ndof)
        # proportional torque explicit and clamped; derivative terms are
        # integrated implicitly below for stability at stiff gains
        for j in range(L - 1):
            t = kp[j] * (targets[j] - qpos[3 + j])
            if t > tau_lim[j]:
                t = tau_lim[j]
            elif t < -tau_lim[j]:
                t = -tau_lim[j]
            Q[3 + j] += t
        h = bias_forces(parent, pos, ang, cw, vel, omg, mass, inertia, gravity)
        M = mass_matrix(parent, pos, cw, mass, inertia)
        A = np.zeros((nt, nt))
        rhs = np.empty(nt)
        for a in range(ndof):
            for b in range(ndof):
                A[a, b] = M[a, b]
        mv = M @ qvel
        for d in range(ndof):
            rhs[d] = mv[d] + dt * (Q[d] - h[d])
        for j in range(L - 1):
            A[3 + j, 3 + j] += dt * (kd[j] + joint_damping)
        A[ndof, ndof] = obj_mass
        A[ndof + 1, ndof + 1] = obj_mass
        A[ndof + 2, ndof + 2] = obj_inertia
        rhs[ndof] = obj_mass * obj_v[0] + dt * (ow[0] + obj_wrench[0])
        rhs[ndof + 1] = obj_mass * obj_v[1] + dt * (
            ow[1] + obj_wrench[1] + obj_mass * gravity)
        rhs[ndof + 2] = obj_inertia * obj_v[2] + dt * (ow[2] + obj_wrench[2])
        _contact_damping(A, rec, nrec, parent, pos, obj_q, dt, c_d, c_t, ndof)
        vnew = _solve_spd(A, rhs)
        for d in range(ndof):
            qvel[d] = vnew[d]
            qpos[d] += dt * vnew[d]
        for j in range(L - 1):
            d = 3 + j
            if qpos[d] < q_lo[j]:
                qpos[d] = q_lo[j]
                if qvel[d] < 0.0:
                    qvel[d] = 0.0
            elif qpos[d] > q_hi[j]:
                qpos[d] = q_hi[j]
                if qvel[d] > 0.0:
                    qvel[d] = 0.0
        for d in range(3):
            obj_v[d] = vnew[ndof + d]
            obj_q[d] += dt * vnew[ndof + d]
        for d in range(ndof):
            if abs(qpos[d]) > 1e6 or abs(qvel[d]) > 1e6:
                diverged = True
        for d in range(3):
            if abs(obj_q[d]) > 1e6 or abs(obj_v[d]) > 1e6:
                diverged = True
        if diverged:
            break
    # per-link object-contact normal force from the final substep
    for k in range(nrec):
        if rec[k, C_KIND] == 1.0 and rec[k, C_LINK] >= 0:
            link_fn[int(rec[k, C_LINK])] += rec[k, C_FN]
    return diverged, rec, nrec, link_fn
