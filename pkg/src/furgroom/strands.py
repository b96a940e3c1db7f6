"""Neural strand field: positional encoding, MLP, analytic decoder, placement.

Latent layout (64 entries), with ``s = l / (L - 1)`` the arc parameter:

* ``z[0:20]``, ``z[20:40]``, ``z[40:60]``: modes ``sin(m pi s) / (m pi)``,
  ``m = 1..20``, along the local tangent, bitangent and normal. Their
  s-derivatives are cosine modes, so every strand is smooth and starts at
  the origin.
* ``z[60]``, ``z[61]``, ``z[62]``: ``s`` along t, b, n (``z[62]`` is the
  straight-up mode).
* ``z[63]``: ``s**2`` along n.

Strands are ``(N, L, 3)`` arrays whose first point is the root.
"""

import numpy as np
from scipy.integrate import quad

N_POINTS = 100
LATENT_DIM = 64
N_MODES = 20
STRAIGHT_UP = 62
STRAND_WIDTH = 0.0025
K_SCALE = 0.5


# ---------------------------------------------------------------- encoding

def positional_encoding(x, bands=10):
    """``[x, sin(2^k pi x), cos(2^k pi x) for k < bands]``; width ``3 + 6 bands``."""
    if bands < 1:
        raise ValueError("bands must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    freq = (2.0 ** np.arange(bands)) * np.pi
    ang = x[..., None, :] * freq[:, None]                      # (..., bands, 3)
    sc = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)   # (..., bands, 6)
    return np.concatenate([x, sc.reshape(x.shape[:-1] + (6 * bands,))], axis=-1)


def positional_encoding_jacobian(x, bands=10):
    """``d PE / d x`` as ``(..., 3 + 6 bands, 3)``."""
    x = np.asarray(x, dtype=np.float64)
    freq = (2.0 ** np.arange(bands)) * np.pi
    ang = x[..., None, :] * freq[:, None]
    eye = np.eye(3)
    ds = (np.cos(ang) * freq[:, None])[..., None] * eye         # (..., bands, 3, 3)
    dc = (-np.sin(ang) * freq[:, None])[..., None] * eye
    blocks = np.concatenate([ds, dc], axis=-2).reshape(x.shape[:-1] + (6 * bands, 3))
    head = np.broadcast_to(eye, x.shape[:-1] + (3, 3))
    return np.concatenate([head, blocks], axis=-2)


# ---------------------------------------------------------------- MLP field

class StrandField:
    """MLP ``PE(normalized root) -> z``: tanh hidden layers, linear output.

    Roots are normalized as ``(p - center) / scale`` before encoding.
    """

    def __init__(self, weights, biases, bands=10, center=(0.0, 0.0, 0.0), scale=1.0):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.bands = int(bands)
        self.center = np.asarray(center, dtype=np.float64)
        self.scale = float(scale)
        if self.weights[0].shape[0] != 3 + 6 * self.bands:
            raise ValueError("first layer does not match the encoding width")
        if self.weights[-1].shape[1] != LATENT_DIM:
            raise ValueError(f"output layer must produce {LATENT_DIM} values")

    @classmethod
    def init(cls, seed=0, hidden=(128, 128, 128, 128), bands=10, center=(0, 0, 0), scale=1.0,
             out_scale=0.1, straight=1.0):
        """LeCun-normal weights, zero biases; the output bias starts as a straight strand."""
        rng = np.random.default_rng(seed)
        sizes = (3 + 6 * bands,) + tuple(hidden) + (LATENT_DIM,)
        ws, bs = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.normal(0.0, 1.0 / np.sqrt(a), (a, b))
            if i == len(sizes) - 2:
                w *= out_scale
            ws.append(w)
            bs.append(np.zeros(b))
        bs[-1][STRAIGHT_UP] = straight
        return cls(ws, bs, bands, center, scale)

    def params(self):
        d = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            d[f"W{i}"] = w
            d[f"b{i}"] = b
        return d

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        return StrandField([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                           self.bands, self.center.copy(), self.scale)

    def encode(self, roots):
        return positional_encoding((np.asarray(roots, float) - self.center) / self.scale, self.bands)

    def forward(self, roots, keep=False):
        h = self.encode(roots)
        acts = [h]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < n - 1:
                h = np.tanh(h)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts, grad_z):
        """Parameter gradients given ``dL/dz`` and activations from :meth:`forward`."""
        grads = {}
        g = grad_z
        n = len(self.weights)
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            grads[f"W{i}"] = acts[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g

    def root_jacobian(self, roots):
        """``dz / d root`` as ``(N, 64, 3)``."""
        roots = np.asarray(roots, dtype=np.float64).reshape(-1, 3)
        _, acts = self.forward(roots, keep=True)
        x = (roots - self.center) / self.scale
        jac = positional_encoding_jacobian(x, self.bands) / self.scale   # (N, E, 3)
        n = len(self.weights)
        for i, w in enumerate(self.weights):
            jac = np.einsum("nec,eh->nhc", jac, w)
            if i < n - 1:
                jac = jac * (1.0 - acts[i + 1] ** 2)[..., None]
        return jac

    def save(self, path):
        arrays = {f"W{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        np.savez(path, bands=self.bands, center=self.center, scale=self.scale,
                 n_layers=len(self.weights), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as d:
            n = int(d["n_layers"])
            return cls([d[f"W{i}"] for i in range(n)], [d[f"b{i}"] for i in range(n)],
                       int(d["bands"]), d["center"], float(d["scale"]))


def query_field(field, roots):
    return field.forward(roots)


# ---------------------------------------------------------------- decoder

def decoder_basis(n_points=N_POINTS):
    """``(64, L, 3)`` basis so that ``decode(z) = einsum('j,jlc->lc', z, B)``."""
    s = np.linspace(0.0, 1.0, n_points)
    B = np.zeros((LATENT_DIM, n_points, 3))
    m = np.arange(1, N_MODES + 1)
    modes = np.sin(np.pi * m[:, None] * s[None]) / (np.pi * m[:, None])
    for c in range(3):
        B[c * N_MODES:(c + 1) * N_MODES, :, c] = modes
    B[60, :, 0] = s
    B[61, :, 1] = s
    B[62, :, 2] = s
    B[63, :, 2] = s ** 2
    return B


_BASIS_CACHE = {}


def _basis(n_points):
    if n_points not in _BASIS_CACHE:
        _BASIS_CACHE[n_points] = decoder_basis(n_points)
    return _BASIS_CACHE[n_points]


def decode(z, n_points=N_POINTS):
    """Local-frame polyline(s) ``(..., L, 3)`` for latent(s) ``(..., 64)``."""
    return np.einsum("...j,jlc->...lc", np.asarray(z, dtype=np.float64), _basis(n_points))


def decode_derivative(z, s):
    """``d p' / d s`` of the continuous decoder at parameters ``s``."""
    z = np.asarray(z, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    m = np.arange(1, N_MODES + 1)
    cosm = np.cos(np.pi * m[None] * s[:, None])                  # (S, 20)
    out = np.zeros(s.shape + (3,))
    for c in range(3):
        out[:, c] = cosm @ z[c * N_MODES:(c + 1) * N_MODES]
    out[:, 0] += z[60]
    out[:, 1] += z[61]
    out[:, 2] += z[62] + 2.0 * z[63] * s
    return out


def curve_arc_length(z, tol=1e-12):
    """Arc length of the continuous decoded curve by adaptive quadrature."""
    def speed(s):
        return float(np.linalg.norm(decode_derivative(z, np.array([s]))[0]))
    # breakpoints at the half period of the highest mode keep each panel smooth
    pts = np.linspace(0.0, 1.0, 2 * N_MODES + 1)[1:-1]
    return float(quad(speed, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=1000, points=pts)[0])


def polyline_length(points):
    points = np.asarray(points, dtype=np.float64)
    return np.sum(np.linalg.norm(np.diff(points, axis=-2), axis=-1), axis=-1)


# ---------------------------------------------------------------- length and placement

def normalize_and_scale(polyline, length):
    """Scale so the polyline arc length equals ``length``.

    Returns ``(points, bald)``; ``bald`` marks zero-length strands, whose
    points are all at the origin and must not be emitted.
    """
    polyline = np.asarray(polyline, dtype=np.float64)
    length = np.broadcast_to(np.asarray(length, dtype=np.float64), polyline.shape[:-2])
    if np.any(length < 0):
        raise ValueError("lengths must be non-negative")
    arc = polyline_length(polyline)
    bald = length == 0
    if np.any((arc <= 0) & ~bald):
        raise ValueError("zero arc-length polyline cannot be scaled to a positive length")
    factor = np.where(bald, 0.0, length / np.where(arc > 0, arc, 1.0))
    return polyline * factor[..., None, None], bald


def normalize_backward(polyline, length, grad_out):
    """Gradient through :func:`normalize_and_scale` w.r.t. the input polyline."""
    q = np.asarray(polyline, dtype=np.float64)
    d = np.diff(q, axis=-2)
    seg = np.linalg.norm(d, axis=-1)
    u = d / np.maximum(seg, 1e-300)[..., None]
    arc = seg.sum(axis=-1)
    length = np.broadcast_to(np.asarray(length, dtype=np.float64), arc.shape)
    k = np.where(length == 0, 0.0, length / np.where(arc > 0, arc, 1.0))
    # dA/dq_l = u_{l-1} - u_l
    dA = np.zeros_like(q)
    dA[..., 1:, :] += u
    dA[..., :-1, :] -= u
    inner = np.sum(grad_out * q, axis=(-2, -1))
    coef = np.where(arc > 0, k / np.where(arc > 0, arc, 1.0), 0.0)
    return k[..., None, None] * grad_out - (coef * inner)[..., None, None] * dA


def to_world(local, frame, root):
    """``root + [t b n] p'`` (rigid placement)."""
    R = frame.matrix() if hasattr(frame, "matrix") else np.asarray(frame)
    return np.asarray(root, dtype=np.float64)[..., None, :] + np.einsum("...ij,...lj->...li", R, local)


# ---------------------------------------------------------------- Gaussian segments

def segment_frames(b):
    """Orthonormal completion ``(t_hat, n_hat)`` of unit directions ``b``."""
    ref = np.where(np.abs(b[..., :1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    t = np.cross(b, ref)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    return t, np.cross(b, t)


class GaussianSegments:
    """Gaussians constrained to strand segments (arrays over ``(..., L-1)``)."""

    def __init__(self, means, directions, lengths, scale, width, opacity):
        self.means = means
        self.directions = directions
        self.lengths = lengths
        self.scale = scale            # f = k_scale * |d|
        self.width = width            # epsilon
        self.opacity = opacity

    def __len__(self):
        return int(np.prod(self.means.shape[:-1]))

    def covariances(self):
        b = self.directions
        f2 = (self.scale ** 2)[..., None, None]
        e2 = self.width ** 2
        bb = b[..., :, None] * b[..., None, :]
        return f2 * bb + e2 * (np.eye(3) - bb)

    def factors(self):
        """``E D`` with ``E = [b t n]`` and ``D = diag(f, eps, eps)``."""
        t, n = segment_frames(self.directions)
        E = np.stack([self.directions, t, n], axis=-1)
        D = np.stack([self.scale, np.full_like(self.scale, self.width),
                      np.full_like(self.scale, self.width)], axis=-1)
        return E * D[..., None, :]


def gaussian_segments(strands, width=STRAND_WIDTH, k_scale=K_SCALE, opacity=0.8):
    strands = np.asarray(strands, dtype=np.float64)
    d = np.diff(strands, axis=-2)
    lengths = np.linalg.norm(d, axis=-1)
    if np.any(lengths <= 1e-12):
        raise ValueError("degenerate strand segment")
    means = 0.5 * (strands[..., 1:, :] + strands[..., :-1, :])
    return GaussianSegments(means, d / lengths[..., None], lengths, k_scale * lengths, width,
                            np.full(lengths.shape, opacity))
