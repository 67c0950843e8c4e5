"""Flat-shaded painter's-algorithm rasterizer behind a pinhole camera."""
from __future__ import annotations

import numpy as np

from .scene import TABLE_SIZE, Camera, Domain, Primitive, Scene

AMBIENT = 0.55
SUPERSAMPLE = 2
_CYL_SIDES = 12
TARGET_ID = 1


def camera_basis(cam: Camera) -> np.ndarray:
    """Rows: right, up, forward (camera axes in world coordinates)."""
    f = cam.look_at - cam.position
    f = f / np.linalg.norm(f)
    r = np.cross(f, np.array([0.0, 0.0, 1.0]))
    r = r / np.linalg.norm(r)
    u = np.cross(r, f)
    return np.stack([r, u, f])


def project(cam: Camera, points, resolution: int) -> np.ndarray:
    """Pinhole projection to continuous pixel coordinates (u right, v down, depth).

    Pixel ``i`` spans ``[i, i + 1)``, so its centre is at ``i + 0.5``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    c = (pts - cam.position) @ camera_basis(cam).T
    f = 0.5 * resolution / np.tan(0.5 * cam.fov)
    u = 0.5 * resolution + f * c[:, 0] / c[:, 2]
    v = 0.5 * resolution - f * c[:, 1] / c[:, 2]
    return np.stack([u, v, c[:, 2]], axis=1)


def _rot_z(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _box_faces(center, half, yaw):
    R = _rot_z(yaw)
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    corners = center + (signs * half) @ R.T
    # vertex index = 4*(sx>0) + 2*(sy>0) + (sz>0)
    quads = {(1, 0, 0): (4, 6, 7, 5), (-1, 0, 0): (0, 1, 3, 2), (0, 1, 0): (2, 3, 7, 6),
             (0, -1, 0): (0, 4, 5, 1), (0, 0, 1): (1, 5, 7, 3), (0, 0, -1): (0, 2, 6, 4)}
    return [(corners[list(ix)], R @ np.array(n, float)) for n, ix in quads.items()]


def _cylinder_faces(center_xy, base_z, r, h):
    ang = np.linspace(0, 2 * np.pi, _CYL_SIDES, endpoint=False)
    ring = np.stack([center_xy[0] + r * np.cos(ang), center_xy[1] + r * np.sin(ang)], axis=1)
    lo = np.column_stack([ring, np.full(_CYL_SIDES, base_z)])
    hi = np.column_stack([ring, np.full(_CYL_SIDES, base_z + h)])
    faces = [(hi, np.array([0.0, 0.0, 1.0]))]
    for i in range(_CYL_SIDES):
        j = (i + 1) % _CYL_SIDES
        mid = 0.5 * (ang[i] + ang[i] + 2 * np.pi / _CYL_SIDES)
        faces.append((np.array([lo[i], lo[j], hi[j], hi[i]]),
                      np.array([np.cos(mid), np.sin(mid), 0.0])))
    return faces


def primitive_faces(p: Primitive, table_z: float):
    """Polygons ``(vertices, normal)``, or a ``("disc", centre, radius)`` for spheres."""
    s = p.shape
    if s.kind == "cuboid":
        half = 0.5 * np.array(s.dims)
        return _box_faces(np.array([*p.position, table_z + half[2]]), half, p.yaw)
    if s.kind == "cylinder":
        return _cylinder_faces(p.position, table_z, s.dims[0], s.dims[1])
    if s.kind == "sphere":
        return [("disc", np.array([*p.position, table_z + s.dims[0]]), s.dims[0])]
    raise ValueError(f"unknown primitive kind {s.kind!r}")


def _shade(color, normal, light, gain):
    lam = max(0.0, float(np.dot(normal, light)))
    return np.clip(np.asarray(color) * (AMBIENT + (1 - AMBIENT) * lam) * gain, 0.0, 1.0)


def _fill_polygon(img, ids, uv, color, oid):
    h, w = ids.shape
    u0 = max(int(np.floor(uv[:, 0].min())), 0)
    u1 = min(int(np.ceil(uv[:, 0].max())), w)
    v0 = max(int(np.floor(uv[:, 1].min())), 0)
    v1 = min(int(np.ceil(uv[:, 1].max())), h)
    if u0 >= u1 or v0 >= v1:
        return
    px = np.arange(u0, u1) + 0.5
    py = np.arange(v0, v1) + 0.5
    X, Y = np.meshgrid(px, py)
    area = 0.0
    n = len(uv)
    for i in range(n):
        a, b = uv[i], uv[(i + 1) % n]
        area += a[0] * b[1] - b[0] * a[1]
    if abs(area) < 1e-12:
        return
    sgn = 1.0 if area > 0 else -1.0
    inside = np.ones(X.shape, dtype=bool)
    for i in range(n):
        a, b = uv[i], uv[(i + 1) % n]
        inside &= sgn * ((b[0] - a[0]) * (Y - a[1]) - (b[1] - a[1]) * (X - a[0])) >= 0
    img[v0:v1, u0:u1][inside] = color
    ids[v0:v1, u0:u1][inside] = oid


def _fill_disc(img, ids, c, r, color, oid):
    h, w = ids.shape
    u0, u1 = max(int(c[0] - r), 0), min(int(np.ceil(c[0] + r)) + 1, w)
    v0, v1 = max(int(c[1] - r), 0), min(int(np.ceil(c[1] + r)) + 1, h)
    if u0 >= u1 or v0 >= v1:
        return
    X, Y = np.meshgrid(np.arange(u0, u1) + 0.5, np.arange(v0, v1) + 0.5)
    inside = (X - c[0]) ** 2 + (Y - c[1]) ** 2 <= r * r
    img[v0:v1, u0:u1][inside] = color
    ids[v0:v1, u0:u1][inside] = oid


def rasterize(scene: Scene, size: int, extra: list[Primitive] | None = None):
    """Colour buffer in [0, 1] and object-id buffer at ``size`` x ``size``.

    Ids: 0 background/table, 1 target, 2.. distractors in order.
    """
    cam = scene.camera
    light = np.asarray(scene.profile.light_dir, float)
    light = light / np.linalg.norm(light)
    gain = scene.light_gain
    img = np.empty((size, size, 3))
    img[:] = np.clip(scene.floor_color * gain, 0, 1)
    ids = np.zeros((size, size), dtype=np.int16)

    half = 0.5 * TABLE_SIZE[:2]
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float) * half
    R = _rot_z(scene.table_yaw)[:2, :2]
    tbl = np.column_stack([scene.table_center + corners @ R.T, np.full(4, scene.table_z)])
    _fill_polygon(img, ids, project(cam, tbl, size)[:, :2],
                  _shade(scene.table_color, np.array([0, 0, 1.0]), light, gain), 0)

    prims = [scene.target] + list(scene.distractors) + list(extra or [])
    items = []
    for oid, p in enumerate(prims, start=1):
        for face in primitive_faces(p, scene.table_z):
            if isinstance(face[0], str):
                _, centre, r = face
                pc = project(cam, centre, size)[0]
                f = 0.5 * size / np.tan(0.5 * cam.fov)
                shade = _shade(p.color, -camera_basis(cam)[2], light, gain)
                items.append((pc[2], "disc", (pc, f * r / pc[2]), shade, oid))
                continue
            verts, normal = face
            centre = verts.mean(axis=0)
            if np.dot(normal, cam.position - centre) <= 0:
                continue  # back face
            pv = project(cam, verts, size)
            depth = float(np.linalg.norm(centre - cam.position))
            items.append((depth, "poly", pv[:, :2], _shade(p.color, normal, light, gain), oid))
    items.sort(key=lambda t: -t[0])
    for _, kind, geom, shade, oid in items:
        if kind == "poly":
            _fill_polygon(img, ids, geom, shade, oid)
        else:
            _fill_disc(img, ids, geom[0], geom[1], shade, oid)
    return img, ids


def render(scene: Scene, resolution: int | None = None, supersample: int = SUPERSAMPLE) -> np.ndarray:
    """Render to an H x W x 3 float image in [-1, 1].

    PSEUDO_REAL scenes get their lighting gain (already folded into shading)
    and additive Gaussian pixel noise drawn from the scene's noise seed.
    """
    res = resolution or scene.profile.resolution
    ss = max(int(supersample), 1)
    col, _ = rasterize(scene, res * ss)
    col = col.reshape(res, ss, res, ss, 3).mean(axis=(1, 3))
    out = 2.0 * col - 1.0
    if scene.profile.domain is Domain.PSEUDO_REAL and scene.profile.pixel_noise > 0:
        noise_rng = np.random.default_rng(scene.noise_seed)
        out = out + noise_rng.normal(0.0, scene.profile.pixel_noise, out.shape)
    return np.clip(out, -1.0, 1.0)


def target_mask(scene: Scene, resolution: int | None = None, extra=None) -> np.ndarray:
    """Boolean mask of visible target pixels at the output resolution."""
    res = resolution or scene.profile.resolution
    _, ids = rasterize(scene, res, extra)
    return ids == TARGET_ID


def occlusion_fraction(scene: Scene, occluder: Primitive, resolution: int = 64) -> float:
    """Fraction of the target's visible pixels hidden once ``occluder`` is added."""
    before = target_mask(scene, resolution).sum()
    if before == 0:
        return 0.0
    after = target_mask(scene, resolution, [occluder]).sum()
    return float(1.0 - after / before)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 127.5 - 1.0
