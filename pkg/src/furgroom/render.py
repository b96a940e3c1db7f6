"""Image-domain tools: cameras, Gabor orientation maps, Gaussian-segment splatting.

Pixel ``(x, y)`` has its centre at integer coordinates, ``x`` to the right
and ``y`` down. Image-plane angles are ``atan2(dy, dx)`` in that frame and
are undirected (taken mod pi).

The renderer composites depth-sorted 2D Gaussians front to back. Each
Gaussian carries the doubled-angle colour ``(cos 2a, sin 2a)`` of its
projected segment, so the composited colour averages undirected
orientations. Gradients of both image losses are propagated through
compositing, covariance projection and the segment parametrisation back
to the strand points.
"""

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from . import kernels
from .strands import K_SCALE, STRAND_WIDTH

DILATION = 0.3
ALPHA_MAX = 0.99
TAU_FLOOR = 1e-4
NEAR = 1e-3


# ---------------------------------------------------------------- cameras

@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # world-to-camera
    translation: np.ndarray   # cm
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), fov_deg=40.0, width=64, height=64):
        """Pinhole camera at ``eye`` looking at ``target`` (camera +z forward, +y down)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, [1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, (width - 1) / 2, (height - 1) / 2, R, -R @ eye, width, height)

    def to_camera(self, X):
        return np.asarray(X, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, X):
        """Pixel coordinates and depth of world points."""
        Xc = self.to_camera(X)
        z = Xc[..., 2]
        u = self.fx * Xc[..., 0] / z + self.cx
        v = self.fy * Xc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def jacobian(self, Xc):
        """``d(u, v) / d X_cam`` as ``(..., 2, 3)``."""
        x, y, z = Xc[..., 0], Xc[..., 1], Xc[..., 2]
        J = np.zeros(Xc.shape[:-1] + (2, 3))
        J[..., 0, 0] = self.fx / z
        J[..., 0, 2] = -self.fx * x / z ** 2
        J[..., 1, 1] = self.fy / z
        J[..., 1, 2] = -self.fy * y / z ** 2
        return J

    def to_dict(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return {"intrinsics": {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy},
                "world_to_camera": M.tolist(), "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        for key in ("intrinsics", "world_to_camera", "width", "height"):
            if key not in d:
                raise ValueError(f"camera: missing field {key!r}")
        intr = d["intrinsics"]
        for key in ("fx", "fy", "cx", "cy"):
            if key not in intr:
                raise ValueError(f"camera: missing field 'intrinsics.{key}'")
        M = np.asarray(d["world_to_camera"], dtype=np.float64)
        if M.shape not in ((4, 4), (3, 4)):
            raise ValueError("camera: 'world_to_camera' must be 3x4 or 4x4")
        return cls(float(intr["fx"]), float(intr["fy"]), float(intr["cx"]), float(intr["cy"]),
                   M[:3, :3], M[:3, 3], d["width"], d["height"])


def load_cameras(path):
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise ValueError("camera file must hold a JSON list")
    return [Camera.from_dict(d) for d in doc]


def save_cameras(path, cameras):
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in cameras], fh, indent=1)


def orbit_cameras(n, center, radius, elevation_deg=20.0, fov_deg=40.0, width=64, height=64):
    """``n`` cameras evenly spaced on a circle around ``center`` (y up)."""
    center = np.asarray(center, dtype=np.float64)
    el = np.radians(elevation_deg)
    cams = []
    for k in range(n):
        az = 2 * np.pi * k / n
        eye = center + radius * np.array([np.cos(el) * np.sin(az), np.sin(el),
                                          np.cos(el) * np.cos(az)])
        cams.append(Camera.look_at(eye, center, (0, 1, 0), fov_deg, width, height))
    return cams


# ---------------------------------------------------------------- image I/O

def read_image(path):
    """8-bit PNG as float grayscale in ``[0, 1]``."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_png(path, img):
    arr = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def write_pfm(path, img):
    """Single-channel float32 PFM, little endian, rows stored bottom-up."""
    img = np.asarray(img, dtype="<f4")
    if img.ndim != 2:
        raise ValueError("PFM writer expects a 2D map")
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{img.shape[1]} {img.shape[0]}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind != b"Pf":
            raise ValueError("only single-channel PFM is supported")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h)
    return data.reshape(h, w)[::-1].astype(np.float32)


# ---------------------------------------------------------------- Gabor

@dataclass
class OrientationMap:
    angle: np.ndarray       # [0, pi)
    magnitude: np.ndarray
    mask: np.ndarray


def gabor_kernels(n_orientations=16, wavelength=4.0, sigma=2.0):
    """Quadrature pairs ``(even, odd)`` tuned to lines at angles ``k pi / n``."""
    half = int(np.ceil(3 * sigma))
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    env = np.exp(-(xs ** 2 + ys ** 2) / (2 * sigma ** 2))
    out = []
    for k in range(n_orientations):
        th = np.pi * k / n_orientations
        across = -np.sin(th) * xs + np.cos(th) * ys
        even = env * np.cos(2 * np.pi * across / wavelength)
        even -= env * (even.sum() / env.sum())
        odd = env * np.sin(2 * np.pi * across / wavelength)
        out.append((even, odd))
    return out


def gabor_orientation_map(image, n_orientations=16, wavelength=4.0, sigma=2.0, mask=None):
    """Per-pixel dominant line orientation from oriented quadrature Gabor energy."""
    if n_orientations < 4:
        raise ValueError("need at least 4 orientations")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image.mean(axis=2)
    bank = gabor_kernels(n_orientations, wavelength, sigma)
    size = bank[0][0].shape[0]
    if image.shape[0] < size or image.shape[1] < size:
        raise ValueError(f"image {image.shape} smaller than the {size}x{size} Gabor kernel")
    resp = np.empty((n_orientations,) + image.shape)
    for k, (even, odd) in enumerate(bank):
        e = ndimage.correlate(image, even, mode="reflect")
        o = ndimage.correlate(image, odd, mode="reflect")
        resp[k] = np.hypot(e, o)
    best = np.argmax(resp, axis=0)
    angle = best * (np.pi / n_orientations)
    mag = np.take_along_axis(resp, best[None], 0)[0]
    if mask is None:
        mask = np.ones(image.shape, dtype=bool)
    return OrientationMap(angle, mag, np.asarray(mask, dtype=bool))


# ---------------------------------------------------------------- splatting

@dataclass
class SplatResult:
    silhouette: np.ndarray     # accumulated opacity, also the confidence tau
    direction: np.ndarray      # beta in [0, pi)
    accum: np.ndarray          # (H, W, 2) weighted doubled-angle colour
    cache: dict

    @property
    def confidence(self):
        return self.silhouette


def _segment_params(strands, width, k_scale):
    d = np.diff(strands, axis=-2).reshape(-1, 3)
    mu = 0.5 * (strands[..., 1:, :] + strands[..., :-1, :]).reshape(-1, 3)
    return mu, d, width, k_scale


def _cov3d(d, width, k_scale):
    n2 = np.sum(d * d, axis=1)
    dd = d[:, :, None] * d[:, None, :]
    return (k_scale ** 2 - width ** 2 / n2)[:, None, None] * dd + width ** 2 * np.eye(3)


def _doubled(v):
    n = np.sum(v * v, axis=1)
    ok = n > 1e-24
    n = np.where(ok, n, 1.0)
    c = np.where(ok, (v[:, 0] ** 2 - v[:, 1] ** 2) / n, 0.0)
    s = np.where(ok, 2 * v[:, 0] * v[:, 1] / n, 0.0)
    return np.stack([c, s], axis=1), ok, n


def render_strands(strands, camera, opacity=0.8, width=STRAND_WIDTH, k_scale=K_SCALE):
    """Splat every strand segment as a Gaussian; see :func:`splat_render`."""
    strands = np.asarray(strands, dtype=np.float64)
    mu, d, _, _ = _segment_params(strands, width, k_scale)
    return splat_render(mu, d, camera, opacity, width, k_scale, n_points=strands.shape[:-1])


def splat_render(means, segments, camera, opacity=0.8, width=STRAND_WIDTH, k_scale=K_SCALE,
                 n_points=None):
    """Render Gaussian segments given by midpoints and segment vectors."""
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 3)
    H, W = camera.height, camera.width
    Xc = camera.to_camera(means)
    keep = np.nonzero(Xc[:, 2] > NEAR)[0]
    order = keep[np.argsort(Xc[keep, 2], kind="stable")]
    Xc_o = Xc[order]
    R = camera.rotation
    J = camera.jacobian(Xc_o)
    C = _cov3d(segments[order], width, k_scale)
    S = R @ C @ R.T
    cov2 = J @ S @ np.swapaxes(J, 1, 2) + DILATION * np.eye(2)
    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
    conics = np.stack([cov2[:, 1, 1], -cov2[:, 0, 1], cov2[:, 0, 0]], axis=1) / det[:, None]
    m2 = np.stack([camera.fx * Xc_o[:, 0] / Xc_o[:, 2] + camera.cx,
                   camera.fy * Xc_o[:, 1] / Xc_o[:, 2] + camera.cy], axis=1)
    v = np.einsum("gij,gj->gi", J, segments[order] @ R.T)
    colors, _, _ = _doubled(v)
    op = np.full(len(order), float(opacity))
    # cutoff where the raw alpha falls below 1/255
    lam = 0.5 * (cov2[:, 0, 0] + cov2[:, 1, 1]) + np.sqrt(
        0.25 * (cov2[:, 0, 0] - cov2[:, 1, 1]) ** 2 + cov2[:, 0, 1] ** 2)
    rad = np.sqrt(2.0 * np.log(max(255.0 * opacity, 1.0 + 1e-9)) * lam)
    bb = np.stack([np.ceil(m2[:, 0] - rad), np.floor(m2[:, 0] + rad) + 1,
                   np.ceil(m2[:, 1] - rad), np.floor(m2[:, 1] + rad) + 1], axis=1)
    bb = np.nan_to_num(bb, nan=0.0, posinf=0.0, neginf=0.0)
    bb[:, :2] = np.clip(bb[:, :2], 0, W)
    bb[:, 2:] = np.clip(bb[:, 2:], 0, H)
    bb = bb.astype(np.int64)
    trans, accum = kernels.splat_forward(m2, conics, op, colors, bb, H, W, ALPHA_MAX)
    sil = 1.0 - trans
    beta = np.mod(0.5 * np.arctan2(accum[..., 1], accum[..., 0]), np.pi)
    cache = dict(order=order, Xc=Xc_o, J=J, S=S, cov2=cov2, conics=conics, m2=m2, v=v,
                 colors=colors, op=op, bb=bb, trans=trans, segments=segments[order],
                 n_total=len(means), camera=camera, width=width, k_scale=k_scale,
                 n_points=n_points)
    return SplatResult(sil, beta, accum, cache)


def splat_backward(result, grad_sil, grad_accum):
    """Gradients w.r.t. Gaussian means and segment vectors, each ``(G, 3)``."""
    c = result.cache
    cam = c["camera"]
    g_m2, g_conic, g_color = kernels.splat_backward(
        c["m2"], c["conics"], c["op"], c["colors"], c["bb"], c["trans"], result.accum,
        np.ascontiguousarray(grad_sil, dtype=np.float64),
        np.ascontiguousarray(grad_accum, dtype=np.float64), ALPHA_MAX)
    R, J, S, K = cam.rotation, c["J"], c["S"], None
    Xc, v, seg = c["Xc"], c["v"], c["segments"]
    conics = c["conics"]
    K = np.stack([np.stack([conics[:, 0], conics[:, 1]], 1),
                  np.stack([conics[:, 1], conics[:, 2]], 1)], 1)
    Gk = np.stack([np.stack([g_conic[:, 0], 0.5 * g_conic[:, 1]], 1),
                   np.stack([0.5 * g_conic[:, 1], g_conic[:, 2]], 1)], 1)
    G2 = -K @ Gk @ K                                            # dL/dcov2
    Jt = np.swapaxes(J, 1, 2)
    gS = Jt @ G2 @ J
    gJ = 2.0 * G2 @ J @ S
    gC = np.swapaxes(R, 0, 1)[None] @ gS @ R[None]
    # doubled-angle colour
    _, ok, n = _doubled(v)
    vx, vy = v[:, 0], v[:, 1]
    n2 = n * n
    gv = np.zeros_like(v)
    gv[:, 0] = (g_color[:, 0] * 4 * vx * vy ** 2 + g_color[:, 1] * 2 * vy * (vy ** 2 - vx ** 2)) / n2
    gv[:, 1] = (-g_color[:, 0] * 4 * vy * vx ** 2 + g_color[:, 1] * 2 * vx * (vx ** 2 - vy ** 2)) / n2
    gv = np.where(ok[:, None], gv, 0.0)
    Rd = seg @ R.T
    gJ += gv[:, :, None] * Rd[:, None, :]
    g_seg = np.einsum("gij,gi->gj", J, gv) @ R
    # mean through projection and through J(Xc)
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    g_Xc = np.einsum("gij,gi->gj", J, g_m2)
    g_Xc[:, 0] += gJ[:, 0, 2] * (-cam.fx / z ** 2)
    g_Xc[:, 1] += gJ[:, 1, 2] * (-cam.fy / z ** 2)
    g_Xc[:, 2] += (gJ[:, 0, 0] * (-cam.fx / z ** 2) + gJ[:, 0, 2] * (2 * cam.fx * x / z ** 3)
                   + gJ[:, 1, 1] * (-cam.fy / z ** 2) + gJ[:, 1, 2] * (2 * cam.fy * y / z ** 3))
    g_mu = g_Xc @ R
    # 3D covariance C(d)
    gCs = 0.5 * (gC + np.swapaxes(gC, 1, 2))
    w2, k2 = c["width"] ** 2, c["k_scale"] ** 2
    dn2 = np.sum(seg * seg, axis=1)
    Gd = np.einsum("gij,gj->gi", gCs, seg)
    dGd = np.sum(seg * Gd, axis=1)
    g_seg += 2 * k2 * Gd - w2 * (2 * Gd / dn2[:, None] - 2 * (dGd / dn2 ** 2)[:, None] * seg)
    out_mu = np.zeros((c["n_total"], 3))
    out_seg = np.zeros((c["n_total"], 3))
    out_mu[c["order"]] = g_mu
    out_seg[c["order"]] = g_seg
    return out_mu, out_seg


def strand_gradient(result, g_mu, g_seg):
    """Map midpoint and segment-vector gradients onto strand points ``(N, L, 3)``."""
    shape = result.cache["n_points"]
    N, L = shape
    g_mu = g_mu.reshape(N, L - 1, 3)
    g_seg = g_seg.reshape(N, L - 1, 3)
    grad = np.zeros((N, L, 3))
    grad[:, :-1] += 0.5 * g_mu - g_seg
    grad[:, 1:] += 0.5 * g_mu + g_seg
    return grad


# ---------------------------------------------------------------- image losses

def silhouette_loss(rendered, target_mask, non_bald_mask):
    """Mean absolute difference over ``non_bald_mask`` pixels.

    Returns ``(value, dL/dsilhouette)``.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target_mask, dtype=np.float64)
    mask = np.asarray(non_bald_mask, dtype=bool)
    if rendered.shape != target.shape or rendered.shape != mask.shape:
        raise ValueError("silhouette, target and mask resolutions differ")
    n = int(mask.sum())
    if n == 0:
        return 0.0, np.zeros_like(rendered)
    diff = rendered - target
    value = float(np.sum(np.abs(diff[mask])) / n)
    grad = np.where(mask, np.sign(diff), 0.0) / n
    return value, grad


def _wrap_half(a):
    """Signed difference wrapped into ``[-pi/2, pi/2)``."""
    return (a + 0.5 * np.pi) % np.pi - 0.5 * np.pi


def orientation_loss(beta, tau, target_beta, mask, reduction="mean"):
    """``tau * min(d, |d - pi|, |d + pi|) - log tau`` over masked pixels with tau >= floor.

    Returns ``(value, dL/dbeta, dL/dtau)``; ``reduction`` is ``"mean"`` or ``"sum"``.
    """
    beta = np.asarray(beta, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    target = np.asarray(target_beta, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not (beta.shape == tau.shape == target.shape == mask.shape):
        raise ValueError("orientation maps have different resolutions")
    use = mask & (tau >= TAU_FLOOR)
    n = int(use.sum())
    if n == 0:
        z = np.zeros_like(beta)
        return 0.0, z, z.copy()
    delta = _wrap_half(beta - target)
    ang = np.abs(delta)
    t = np.where(use, tau, 1.0)
    per = t * ang - np.log(t)
    norm = n if reduction == "mean" else 1
    value = float(np.sum(per[use]) / norm)
    g_beta = np.where(use, t * np.sign(delta), 0.0) / norm
    g_tau = np.where(use, ang - 1.0 / t, 0.0) / norm
    return value, g_beta, g_tau


def image_losses(strands, camera, target_mask, target_orientation, non_bald_mask,
                 opacity=0.8, width=STRAND_WIDTH, k_scale=K_SCALE, need=("sil", "dir")):
    """Silhouette and orientation losses for one view with strand-point gradients.

    Returns ``{name: (value, grad (N, L, 3))}`` for the requested terms.
    """
    res = render_strands(strands, camera, opacity, width, k_scale)
    out = {}
    H, W = camera.height, camera.width
    for name in need:
        g_sil = np.zeros((H, W))
        g_acc = np.zeros((H, W, 2))
        if name == "sil":
            value, g_sil = silhouette_loss(res.silhouette, target_mask, non_bald_mask)
        elif name == "dir":
            target = getattr(target_orientation, "angle", target_orientation)
            value, g_beta, g_tau = orientation_loss(res.direction, res.silhouette, target,
                                                    non_bald_mask)
            cc, ss = res.accum[..., 0], res.accum[..., 1]
            r2 = cc * cc + ss * ss
            safe = r2 > 1e-300
            r2 = np.where(safe, r2, 1.0)
            g_acc[..., 0] = np.where(safe, -0.5 * ss / r2 * g_beta, 0.0)
            g_acc[..., 1] = np.where(safe, 0.5 * cc / r2 * g_beta, 0.0)
            g_sil = g_tau
        else:
            raise ValueError(f"unknown image loss {name!r}")
        g_mu, g_seg = splat_backward(res, g_sil, g_acc)
        out[name] = (value, strand_gradient(res, g_mu, g_seg))
    return out
