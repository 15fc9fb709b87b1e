"""Voxel rasterizers, the attenuation projector, and bilinear resize.

Each kernel exists twice: a vectorized numpy version (``*_np``) and a numba
loop version (``*_nb``). The arithmetic in both is written expression-for-
expression identical, including association order, so results match bitwise;
the public wrappers dispatch on accel.USE_NUMBA. Volumes are indexed
``vox[z, y, x]`` (x fastest).
"""

from __future__ import annotations

import numpy as np

from . import accel

# ---------------------------------------------------------------------------
# numpy implementations


def _grids(shape):
    nz, ny, nx = shape
    z = np.arange(nz, dtype=np.float64)[:, None, None]
    y = np.arange(ny, dtype=np.float64)[None, :, None]
    x = np.arange(nx, dtype=np.float64)[None, None, :]
    return z, y, x


def fill_ellipsoid_np(vox, cx, cy, cz, rx, ry, rz, hu):
    z, y, x = _grids(vox.shape)
    dx = (x - cx) / rx
    dy = (y - cy) / ry
    dz = (z - cz) / rz
    inside = (dx * dx + dy * dy) + dz * dz <= 1.0
    vox[inside] = hu


def fill_box_np(vox, x0, x1, y0, y1, z0, z1, hu):
    z, y, x = _grids(vox.shape)
    inside = ((x >= x0) & (x <= x1)) & ((y >= y0) & (y <= y1)) & ((z >= z0) & (z <= z1))
    vox[inside] = hu


def fill_cylinder_y_np(vox, cx, cz, r, y0, y1, hu):
    z, y, x = _grids(vox.shape)
    dx = x - cx
    dz = z - cz
    inside = (dx * dx + dz * dz <= r * r) & ((y >= y0) & (y <= y1))
    vox[inside] = hu


def fill_cylinder_z_np(vox, cx, cy, r, z0, z1, hu):
    z, y, x = _grids(vox.shape)
    dx = x - cx
    dy = y - cy
    inside = (dx * dx + dy * dy <= r * r) & ((z >= z0) & (z <= z1))
    vox[inside] = hu


def project_axis1_np(vox, mu_water, step):
    """Attenuation line integrals along axis 1 of a (n0, n1, n2) HU grid."""
    n0, n1, n2 = vox.shape
    acc = np.zeros((n0, n2), dtype=np.float64)
    for j in range(n1):
        mu = mu_water * (1.0 + vox[:, j, :] / 1000.0)
        np.maximum(mu, 0.0, out=mu)
        acc += mu * step
    return acc


def bilinear_resize_np(img, oh, ow):
    """Half-pixel-centered bilinear resample with clamp-at-edge sampling."""
    ih, iw = img.shape
    sy = ih / oh
    sx = iw / ow
    ys = (np.arange(oh, dtype=np.float64) + 0.5) * sy - 0.5
    xs = (np.arange(ow, dtype=np.float64) + 0.5) * sx - 0.5
    ys = np.minimum(np.maximum(ys, 0.0), ih - 1.0)
    xs = np.minimum(np.maximum(xs, 0.0), iw - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v00 = img[y0[:, None], x0[None, :]]
    v01 = img[y0[:, None], x1[None, :]]
    v10 = img[y1[:, None], x0[None, :]]
    v11 = img[y1[:, None], x1[None, :]]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


# ---------------------------------------------------------------------------
# numba implementations (same arithmetic, scalar loops)


def _fill_ellipsoid_loops(vox, cx, cy, cz, rx, ry, rz, hu):
    nz, ny, nx = vox.shape
    for iz in range(nz):
        dz = (iz - cz) / rz
        for iy in range(ny):
            dy = (iy - cy) / ry
            for ix in range(nx):
                dx = (ix - cx) / rx
                if (dx * dx + dy * dy) + dz * dz <= 1.0:
                    vox[iz, iy, ix] = hu


def _fill_box_loops(vox, x0, x1, y0, y1, z0, z1, hu):
    nz, ny, nx = vox.shape
    for iz in range(nz):
        if iz < z0 or iz > z1:
            continue
        for iy in range(ny):
            if iy < y0 or iy > y1:
                continue
            for ix in range(nx):
                if x0 <= ix <= x1:
                    vox[iz, iy, ix] = hu


def _fill_cylinder_y_loops(vox, cx, cz, r, y0, y1, hu):
    nz, ny, nx = vox.shape
    rr = r * r
    for iz in range(nz):
        dz = iz - cz
        for iy in range(ny):
            if iy < y0 or iy > y1:
                continue
            for ix in range(nx):
                dx = ix - cx
                if dx * dx + dz * dz <= rr:
                    vox[iz, iy, ix] = hu


def _fill_cylinder_z_loops(vox, cx, cy, r, z0, z1, hu):
    nz, ny, nx = vox.shape
    rr = r * r
    for iz in range(nz):
        if iz < z0 or iz > z1:
            continue
        for iy in range(ny):
            dy = iy - cy
            for ix in range(nx):
                dx = ix - cx
                if dx * dx + dy * dy <= rr:
                    vox[iz, iy, ix] = hu


def _project_axis1_loops(vox, mu_water, step):
    n0, n1, n2 = vox.shape
    acc = np.zeros((n0, n2), dtype=np.float64)
    for i in range(n0):
        for k in range(n2):
            s = 0.0
            for j in range(n1):
                mu = mu_water * (1.0 + vox[i, j, k] / 1000.0)
                if mu < 0.0:
                    mu = 0.0
                s = s + mu * step
            acc[i, k] = s
    return acc


def _bilinear_resize_loops(img, oh, ow):
    ih, iw = img.shape
    sy = ih / oh
    sx = iw / ow
    out = np.empty((oh, ow), dtype=np.float64)
    for i in range(oh):
        ys = (i + 0.5) * sy - 0.5
        if ys < 0.0:
            ys = 0.0
        if ys > ih - 1.0:
            ys = ih - 1.0
        y0 = int(np.floor(ys))
        y1 = min(y0 + 1, ih - 1)
        fy = ys - y0
        for j in range(ow):
            xs = (j + 0.5) * sx - 0.5
            if xs < 0.0:
                xs = 0.0
            if xs > iw - 1.0:
                xs = iw - 1.0
            x0 = int(np.floor(xs))
            x1 = min(x0 + 1, iw - 1)
            fx = xs - x0
            top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
            out[i, j] = top * (1.0 - fy) + bot * fy
    return out


if accel.HAS_NUMBA:
    _jit = accel.njit(cache=True, nogil=True)
    fill_ellipsoid_nb = _jit(_fill_ellipsoid_loops)
    fill_box_nb = _jit(_fill_box_loops)
    fill_cylinder_y_nb = _jit(_fill_cylinder_y_loops)
    fill_cylinder_z_nb = _jit(_fill_cylinder_z_loops)
    project_axis1_nb = _jit(_project_axis1_loops)
    bilinear_resize_nb = _jit(_bilinear_resize_loops)
else:  # pragma: no cover
    fill_ellipsoid_nb = None
    fill_box_nb = None
    fill_cylinder_y_nb = None
    fill_cylinder_z_nb = None
    project_axis1_nb = None
    bilinear_resize_nb = None


# ---------------------------------------------------------------------------
# dispatching wrappers


def _pick(np_impl, nb_impl):
    return nb_impl if (accel.USE_NUMBA and nb_impl is not None) else np_impl


def fill_ellipsoid(vox, cx, cy, cz, rx, ry, rz, hu):
    _pick(fill_ellipsoid_np, fill_ellipsoid_nb)(
        vox, float(cx), float(cy), float(cz), float(rx), float(ry), float(rz), float(hu))


def fill_box(vox, x0, x1, y0, y1, z0, z1, hu):
    _pick(fill_box_np, fill_box_nb)(
        vox, float(x0), float(x1), float(y0), float(y1), float(z0), float(z1), float(hu))


def fill_cylinder_y(vox, cx, cz, r, y0, y1, hu):
    _pick(fill_cylinder_y_np, fill_cylinder_y_nb)(
        vox, float(cx), float(cz), float(r), float(y0), float(y1), float(hu))


def fill_cylinder_z(vox, cx, cy, r, z0, z1, hu):
    _pick(fill_cylinder_z_np, fill_cylinder_z_nb)(
        vox, float(cx), float(cy), float(r), float(z0), float(z1), float(hu))


def project_axis1(vox, mu_water, step):
    return _pick(project_axis1_np, project_axis1_nb)(vox, float(mu_water), float(step))


def bilinear_resize(img, oh, ow):
    return _pick(bilinear_resize_np, bilinear_resize_nb)(img, int(oh), int(ow))
