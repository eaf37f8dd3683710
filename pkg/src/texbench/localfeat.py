"""Dense upright SIFT.

Descriptors are computed on a regular grid at several support sizes, without
orientation assignment.  Each descriptor is the usual 4x4 spatial x 8
orientation histogram of gradient magnitude with trilinear soft binning and
a Gaussian window whose sigma is half the support size.

Layout of the 128-vector: ``index = (4 * spatial_row + spatial_col) * 8 +
orientation_bin``.  Orientation bin ``o`` covers angles around ``o * 45``
degrees measured by ``atan2(gy, gx)`` in image coordinates (x right, y down).
"""

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import to_gray

DESC_DIM = 128
N_SPATIAL = 4
N_ORI = 8
CLAMP = 0.2

_DSC_MAGIC = b"DSC1"


@dataclass(frozen=True)
class DenseSamplingSpec:
    step: int = 8
    patch_sizes: tuple = (16, 24, 32)
    boundary_margin: int = 16

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if not self.patch_sizes or min(self.patch_sizes) < 8:
            raise ValueError("patch sizes must be >= 8")
        if self.boundary_margin < max(self.patch_sizes) / 2:
            raise ValueError("boundary_margin must be at least half the largest patch size")


@dataclass(frozen=True)
class Descriptor:
    vector: np.ndarray
    x: float
    y: float
    scale: float


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    """Descriptors of one image stored as arrays.

    ``vectors`` is ``(n, 128)`` float32 and ``keypoints`` is ``(n, 3)`` with
    columns ``x, y, scale``.
    """

    vectors: np.ndarray
    keypoints: np.ndarray

    def __len__(self):
        return len(self.vectors)

    def __getitem__(self, i):
        x, y, s = self.keypoints[i]
        return Descriptor(self.vectors[i], float(x), float(y), float(s))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def _grid(width, height, spec):
    m = spec.boundary_margin
    return np.arange(m, width - m, spec.step), np.arange(m, height - m, spec.step)


def dense_keypoints(width, height, spec):
    """Grid keypoints ``(x, y, scale)``, scale-major then row-major."""
    xs, ys = _grid(width, height, spec)
    return [(int(x), int(y), s) for s in spec.patch_sizes for y in ys for x in xs]


def image_gradients(gray):
    """Central differences with replicated border."""
    p = np.pad(np.asarray(gray, dtype=np.float64), 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def orientation_planes(gx, gy):
    """Gradient magnitude split over 8 orientation bins by linear interpolation.

    Returns an array of shape ``(8, H, W)``.
    """
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    pos = theta * (N_ORI / (2 * np.pi))
    o0 = np.floor(pos)
    frac = pos - o0
    o0 = o0.astype(np.intp) % N_ORI
    o1 = (o0 + 1) % N_ORI
    planes = np.zeros((N_ORI,) + gx.shape)
    for o in range(N_ORI):
        planes[o] = mag * (np.where(o0 == o, 1.0 - frac, 0.0) + np.where(o1 == o, frac, 0.0))
    return planes


def axis_weights(size):
    """Per-pixel weights of a window axis onto the 4 spatial bins.

    Combines the linear spatial interpolation with the 1-D factor of the
    Gaussian window (sigma = size / 2).  Shape ``(size, 4)``.
    """
    u = np.arange(size) + 0.5
    b = u / (size / N_SPATIAL) - 0.5
    b0 = np.floor(b)
    f = b - b0
    b0 = b0.astype(np.intp)
    w = np.zeros((size, N_SPATIAL))
    for j in range(N_SPATIAL):
        w[:, j] = np.where(b0 == j, 1.0 - f, 0.0) + np.where(b0 + 1 == j, f, 0.0)
    sigma = size / 2.0
    g = np.exp(-((u - size / 2.0) ** 2) / (2 * sigma**2))
    return w * g[:, None]


def normalize_descriptors(raw):
    """Unit L2, clamp at 0.2, unit L2 again; zero rows stay zero."""
    raw = np.asarray(raw, dtype=np.float64)
    out = np.zeros_like(raw)
    norm = np.linalg.norm(raw, axis=1)
    nz = norm > 0
    v = raw[nz] / norm[nz, None]
    v = np.minimum(v, CLAMP)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    out[nz] = v
    return out


def _grid_descriptors(planes, xs, ys, size):
    """Raw (unnormalized) descriptors on the grid ``ys x xs`` at one support size."""
    w = axis_weights(size)
    half = size // 2
    x0 = np.asarray(xs) - half
    y0 = np.asarray(ys) - half
    # horizontal pass at the grid columns: (8, H, nx, 4)
    win = sliding_window_view(planes, size, axis=2)[:, :, x0, :]
    cols = win @ w
    # vertical pass at the grid rows: (8, ny, nx, 4[col], 4[row])
    win = sliding_window_view(cols, size, axis=1)[:, y0]
    hist = win @ w
    # -> (ny, nx, row, col, ori)
    hist = np.transpose(hist, (1, 2, 4, 3, 0))
    return hist.reshape(len(y0) * len(x0), DESC_DIM)


def sift_descriptor(gray, keypoint):
    """Upright SIFT descriptor of ``gray`` at ``keypoint = (x, y, size)``."""
    gray = np.asarray(gray, dtype=np.float64)
    x, y, size = (int(round(v)) for v in keypoint)
    h, w = gray.shape
    half = size // 2
    if x - half < 0 or y - half < 0 or x - half + size > w or y - half + size > h:
        raise ValueError(f"descriptor support of size {size} at ({x}, {y}) leaves the {w}x{h} image")
    planes = orientation_planes(*image_gradients(gray))
    raw = _grid_descriptors(planes, [x], [y], size)
    vec = normalize_descriptors(raw)[0].astype(np.float32)
    return Descriptor(vec, float(x), float(y), float(size))


def extract_dense_sift(patch, spec=None):
    """Dense SIFT of an :class:`~texbench.dataset.ImagePatch` (or RGB array)."""
    spec = spec or DenseSamplingSpec()
    pixels = getattr(patch, "pixels", patch)
    gray = to_gray(pixels)
    h, w = gray.shape
    xs, ys = _grid(w, h, spec)
    if len(xs) == 0 or len(ys) == 0:
        return DescriptorSet(np.zeros((0, DESC_DIM), np.float32), np.zeros((0, 3), np.float32))
    planes = orientation_planes(*image_gradients(gray))
    vecs, kps = [], []
    gx, gy = np.meshgrid(xs, ys)
    for size in spec.patch_sizes:
        vecs.append(normalize_descriptors(_grid_descriptors(planes, xs, ys, size)))
        kps.append(np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, size)]))
    return DescriptorSet(np.concatenate(vecs).astype(np.float32), np.concatenate(kps).astype(np.float32))


def write_descriptors(path, descriptors):
    """Write a :class:`DescriptorSet` as ``DSC1``.

    Layout (little-endian): magic ``DSC1``, u32 count, u32 dim (128), then
    per row ``dim`` float32 values followed by float32 ``x, y, scale``.
    """
    rows = np.hstack([descriptors.vectors, descriptors.keypoints]).astype("<f4")
    with open(path, "wb") as f:
        f.write(_DSC_MAGIC + struct.pack("<II", len(rows), DESC_DIM))
        f.write(rows.tobytes())


def read_descriptors(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _DSC_MAGIC:
        raise ValueError(f"{path}: not a DSC1 file")
    n, dim = struct.unpack_from("<II", data, 4)
    rows = np.frombuffer(data, dtype="<f4", offset=12)
    if rows.size != n * (dim + 3):
        raise ValueError(f"{path}: expected {n} rows of {dim + 3} floats, found {rows.size} values")
    rows = rows.reshape(n, dim + 3).astype(np.float32)
    return DescriptorSet(rows[:, :dim].copy(), rows[:, dim:].copy())
