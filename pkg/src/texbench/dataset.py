"""Labeled RGB patches: loading, synthetic generation and CNN preprocessing.

Patches keep their native (heterogeneous) size.  Only the CNN and raw-pixel
pipelines resize them, via :func:`preprocess`, to the input size declared by
the network; dense SIFT runs on the native pixels.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .rng import make_rng

IMAGE_SUFFIXES = (".png", ".ppm")

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ImagePatch:
    """One labeled RGB patch; ``pixels`` is a ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray
    label: int
    id: str

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
            raise DatasetError(f"patch {self.id!r}: expected (H, W, 3) uint8 pixels, got {px.dtype} {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DatasetError(f"patch {self.id!r}: empty image")
        if self.label < 0:
            raise DatasetError(f"patch {self.id!r}: negative label")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    patches: tuple
    class_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        ids = set()
        for p in self.patches:
            if p.label >= len(self.class_names):
                raise DatasetError(f"patch {p.id!r} has label {p.label} but only {len(self.class_names)} classes")
            if p.id in ids:
                raise DatasetError(f"duplicate patch id {p.id!r}")
            ids.add(p.id)

    def __len__(self):
        return len(self.patches)

    @property
    def labels(self):
        return np.array([p.label for p in self.patches], dtype=np.int64)

    @property
    def num_classes(self):
        return len(self.class_names)

    def subset(self, indices):
        return Dataset([self.patches[i] for i in indices], self.class_names)


@dataclass(frozen=True)
class TextureSpec:
    """Texture family and its parameters for one synthetic class.

    Families and the keys they read from ``params`` (defaults in brackets):

    * ``oriented-grating``: ``angle`` degrees [0], ``angle_jitter`` [5],
      ``period`` px [12]
    * ``checker``: ``cell`` px [8], ``angle`` [0], ``angle_jitter`` [5]
    * ``blob-noise``: ``sigma`` px [3]

    All families also read ``amplitude`` (intensity std of the texture) [40].
    """

    family: str
    params: dict = field(default_factory=dict)


TEXTURE_FAMILIES = ("oriented-grating", "checker", "blob-noise")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    patches_per_class: int
    textures: tuple
    size_range: tuple = (150, 600)
    noise_sigma: float = 8.0
    seed: int = 0
    base_rgb: tuple = (150.0, 110.0, 120.0)
    class_names: tuple = None

    def validate(self):
        if self.num_classes < 2:
            raise DatasetError("num_classes must be >= 2")
        if self.patches_per_class < 1:
            raise DatasetError("patches_per_class must be >= 1")
        lo, hi = self.size_range
        if lo < 32 or hi < lo:
            raise DatasetError(f"invalid size_range {self.size_range}: need 32 <= min <= max")
        if len(self.textures) != self.num_classes:
            raise DatasetError(f"{len(self.textures)} textures given for {self.num_classes} classes")
        for t in self.textures:
            if t.family not in TEXTURE_FAMILIES:
                raise DatasetError(f"unknown texture family {t.family!r}")
        if self.noise_sigma < 0:
            raise DatasetError("noise_sigma must be >= 0")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise DatasetError("class_names length differs from num_classes")


@dataclass(frozen=True)
class PreprocessSpec:
    target_width: int
    target_height: int
    mean_rgb: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.target_width < 8 or self.target_height < 8:
            raise DatasetError("target dimensions must be >= 8")
        if len(self.mean_rgb) != 3 or not all(0.0 <= m <= 255.0 for m in self.mean_rgb):
            raise DatasetError(f"mean_rgb must be three values in [0, 255], got {self.mean_rgb}")


def _read_image(path):
    try:
        with Image.open(path) as im:
            im.load()
            if im.format == "PPM" and im.mode != "RGB":
                raise DatasetError(f"{path}: only binary RGB PPM (P6, maxval 255) is supported")
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except DatasetError:
        raise
    except Exception as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    return rgb


def load_dataset(root):
    """Load ``<root>/<class_name>/<image files>`` into a :class:`Dataset`.

    Classes are the sorted subdirectory names; files are taken in
    lexicographic order.  Files whose suffix is not ``.png``/``.ppm`` are
    ignored.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir() and not d.name.startswith("."))
    if not class_dirs:
        raise DatasetError(f"no class directories under {root}")
    patches = []
    for label, cdir in enumerate(class_dirs):
        files = sorted(f for f in cdir.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DatasetError(f"class directory {cdir} contains no images")
        for f in files:
            patches.append(ImagePatch(_read_image(f), label, f"{cdir.name}/{f.name}"))
    return Dataset(patches, [d.name for d in class_dirs])


def save_dataset(dataset, root):
    """Write ``dataset`` as PNG files in the layout read by :func:`load_dataset`.

    Returns the list of written paths.
    """
    root = Path(root)
    written = []
    for name in dataset.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    for p in dataset.patches:
        cname = dataset.class_names[p.label]
        stem = p.id.split("/")[-1]
        path = root / cname / (Path(stem).stem + ".png")
        Image.fromarray(p.pixels, "RGB").save(path, optimize=False)
        written.append(path)
    return written


def _render_texture(family, params, width, height, rng):
    """Unit-variance texture field of shape (height, width)."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    if family == "oriented-grating":
        theta = np.deg2rad(params.get("angle", 0.0) + rng.uniform(-1, 1) * params.get("angle_jitter", 5.0))
        period = float(params.get("period", 12.0))
        phase = rng.uniform(0, 2 * np.pi)
        t = np.sqrt(2.0) * np.sin(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / period + phase)
    elif family == "checker":
        theta = np.deg2rad(params.get("angle", 0.0) + rng.uniform(-1, 1) * params.get("angle_jitter", 5.0))
        cell = float(params.get("cell", 8.0))
        ox, oy = rng.uniform(0, 2 * cell, size=2)
        u = x * np.cos(theta) + y * np.sin(theta) + ox
        v = -x * np.sin(theta) + y * np.cos(theta) + oy
        t = np.where((np.floor(u / cell) + np.floor(v / cell)) % 2 == 0, 1.0, -1.0)
    elif family == "blob-noise":
        sigma = float(params.get("sigma", 3.0))
        t = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap")
        t = (t - t.mean()) / max(t.std(), 1e-12)
    else:
        raise DatasetError(f"unknown texture family {family!r}")
    return t


def generate_synthetic(spec):
    """Deterministic synthetic texture dataset described by ``spec``.

    Width and height of each patch are drawn independently and uniformly
    from ``size_range``; every class has exactly ``patches_per_class``
    patches and shares the same mean color, so classes differ only in
    texture structure.
    """
    spec.validate()
    lo, hi = spec.size_range
    names = spec.class_names or tuple(f"class{c}" for c in range(spec.num_classes))
    base = np.asarray(spec.base_rgb, dtype=np.float64)
    patches = []
    for c, tex in enumerate(spec.textures):
        amp = float(tex.params.get("amplitude", 40.0))
        for i in range(spec.patches_per_class):
            rng = make_rng(spec.seed, c, i)
            w, h = (int(v) for v in rng.integers(lo, hi, size=2, endpoint=True))
            t = _render_texture(tex.family, tex.params, w, h, rng)
            img = base + amp * t[:, :, None] + spec.noise_sigma * rng.standard_normal((h, w, 3))
            px = np.clip(np.rint(img), 0, 255).astype(np.uint8)
            patches.append(ImagePatch(px, c, f"{names[c]}/{names[c]}_{i:04d}"))
    return Dataset(patches, names)


def _bilinear_axis(n_in, n_out):
    # half-pixel centers: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_float(pixels, target_width, target_height):
    """Bilinear resize of an (H, W, C) array, returning float64 without rounding."""
    if target_width < 1 or target_height < 1:
        raise DatasetError("resize targets must be >= 1")
    img = np.asarray(pixels, dtype=np.float64)
    h, w = img.shape[:2]
    if (w, h) == (target_width, target_height):
        return img.copy()
    y0, y1, fy = _bilinear_axis(h, target_height)
    x0, x1, fx = _bilinear_axis(w, target_width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(patch, target_width, target_height):
    """Resize ``patch`` to exactly ``target_width`` x ``target_height``.

    The whole patch is stretched (aspect ratio is not preserved).  Results
    are rounded back to 8 bits.
    """
    if (patch.width, patch.height) == (target_width, target_height):
        return patch
    out = resize_float(patch.pixels, target_width, target_height)
    px = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return ImagePatch(px, patch.label, patch.id)


def compute_mean_rgb(patches, target_width, target_height):
    """Per-channel mean over all pixels of ``patches`` after resizing."""
    patches = list(patches)
    if not patches:
        raise DatasetError("compute_mean_rgb needs at least one patch")
    total = np.zeros(3)
    for p in patches:
        total += resize_bilinear(p, target_width, target_height).pixels.reshape(-1, 3).mean(axis=0)
    return tuple(float(v) for v in total / len(patches))


def preprocess(patch, spec):
    """Resize, convert to float32 and subtract the mean color.

    Returns a ``(3, target_height, target_width)`` float32 array in RGB
    order.  No other scaling is applied.
    """
    resized = resize_bilinear(patch, spec.target_width, spec.target_height)
    return subtract_mean(resized.pixels, spec.mean_rgb)


def subtract_mean(pixels, mean_rgb):
    """(H, W, 3) uint8 image to a mean-subtracted (3, H, W) float32 tensor."""
    chw = np.transpose(np.asarray(pixels, dtype=np.float32), (2, 0, 1))
    return np.ascontiguousarray(chw - np.asarray(mean_rgb, dtype=np.float32)[:, None, None])


def to_gray(pixels):
    """Luma image (float64) of an (H, W, 3) RGB array."""
    return np.asarray(pixels, dtype=np.float64) @ LUMA_WEIGHTS


def size_histogram(dataset, bin_width):
    """Per-class counts of ``max(width, height) // bin_width``.

    Returns an int array of shape ``(num_classes, n_bins)``; every class row
    sums to its patch count.
    """
    if bin_width < 1:
        raise DatasetError("bin_width must be >= 1")
    bins = [max(p.width, p.height) // bin_width for p in dataset.patches]
    n_bins = max(bins) + 1 if bins else 0
    hist = np.zeros((dataset.num_classes, n_bins), dtype=np.int64)
    for p, b in zip(dataset.patches, bins):
        hist[p.label, b] += 1
    return hist
