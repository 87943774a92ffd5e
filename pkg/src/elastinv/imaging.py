"""Synthetic phantom images, deformation warping, and noise injection.

Images are stored row-major with the origin at the physical bottom-left:
``values[j, i]`` is the pixel in column i, row j, whose center sits at
((i + 0.5) * hx, (j + 0.5) * hy).
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from matplotlib.tri import LinearTriInterpolator, Triangulation
from scipy.ndimage import gaussian_filter, map_coordinates

from .elasticity import DisplacementField, evaluate_displacement_many
from .mesh import Mesh, locate_points

PUSH_FORWARD = "push_forward"
COMPOSITION = "composition"


@dataclass(frozen=True)
class ScalarImage:
    values: np.ndarray  # (height, width) float64
    extent: tuple[float, float]  # physical (lx1, lx2) in mm

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"expected 2D values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def pixel_size(self) -> tuple[float, float]:
        return self.extent[0] / self.width, self.extent[1] / self.height

    def pixel_centers(self) -> np.ndarray:
        """Flattened (H * W, 2) physical pixel-center coordinates."""
        hx, hy = self.pixel_size
        xs = (np.arange(self.width) + 0.5) * hx
        ys = (np.arange(self.height) + 0.5) * hy
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned elliptical inclusion (center and semi-axes in mm)."""

    cx: float
    cy: float
    ax: float
    ay: float
    brightness: float


@dataclass(frozen=True)
class PhantomSpec:
    inclusions: tuple[Ellipse, ...]
    background_value: float = 0.15
    blur_sigma: float = 1.0          # px
    speckle_amplitude: float = 0.05
    speckle_corr: float = 2.0        # px
    seed: int = 0

    def __post_init__(self):
        for inc in self.inclusions:
            if not 0.0 <= inc.brightness <= 1.0:
                raise ValueError(f"brightness {inc.brightness} outside [0, 1]")


def _ellipse_mask(pts: np.ndarray, e: Ellipse) -> np.ndarray:
    return (((pts[:, 0] - e.cx) / e.ax) ** 2
            + ((pts[:, 1] - e.cy) / e.ay) ** 2) <= 1.0


def generate_phantom(spec: PhantomSpec, mesh: Mesh) -> tuple[ScalarImage, np.ndarray]:
    """Rasterize the phantom and label mesh triangles by region.

    Returns the speckled, blurred, [0, 1]-rescaled image together with
    per-triangle labels (0 = background, k >= 1 = inclusion k). The
    image grid is the mesh pixel grid (mesh.nx x mesh.ny).
    """
    extent = (mesh.lx1, mesh.lx2)
    W, H = mesh.nx, mesh.ny
    probe = ScalarImage(values=np.zeros((H, W)), extent=extent)
    centers = probe.pixel_centers()

    for e in spec.inclusions:
        if (e.cx - e.ax < 0 or e.cx + e.ax > mesh.lx1
                or e.cy - e.ay < 0 or e.cy + e.ay > mesh.lx2):
            raise ValueError(f"inclusion {e} extends beyond the sample rectangle")

    img = np.full(H * W, spec.background_value)
    covered = np.zeros(H * W, dtype=bool)
    for e in spec.inclusions:
        mask = _ellipse_mask(centers, e)
        if np.any(covered & mask):
            raise ValueError("inclusions overlap")
        covered |= mask
        img[mask] = e.brightness
    img = img.reshape(H, W)

    if spec.blur_sigma > 0:
        img = gaussian_filter(img, spec.blur_sigma, mode="nearest")

    if spec.speckle_amplitude > 0:
        rng = np.random.default_rng(spec.seed)
        xi = rng.uniform(-1.0, 1.0, size=(H, W))
        if spec.speckle_corr > 0:
            xi = gaussian_filter(xi, spec.speckle_corr, mode="wrap")
        xi /= np.max(np.abs(xi))
        img = img * (1.0 + spec.speckle_amplitude * xi)

    img = np.clip(img, 0.0, 1.0)
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak

    # Triangle labels by centroid membership; later inclusions would
    # shadow earlier ones, but overlaps were rejected above.
    centroids = mesh.triangle_centroids()
    labels = np.zeros(mesh.n_triangles, dtype=np.int64)
    for k, e in enumerate(spec.inclusions, start=1):
        labels[_ellipse_mask(centroids, e)] = k

    return ScalarImage(values=img, extent=extent), labels


def _sample_bilinear(img: ScalarImage, pts: np.ndarray, fill: float) -> np.ndarray:
    """Bilinear interpolation of the pixel-center grid at physical points."""
    hx, hy = img.pixel_size
    cols = pts[:, 0] / hx - 0.5
    rows = pts[:, 1] / hy - 0.5
    # grid-constant blends toward the fill value beyond the last pixel
    # center instead of snapping to it, so floating-point jitter at the
    # frame edge cannot flip an in-frame sample to pure fill.
    return map_coordinates(img.values, [rows, cols], order=1,
                           mode="grid-constant", cval=fill)


def warp_image(source: ScalarImage, u: DisplacementField, mesh: Mesh,
               mode: str, fill: float = 0.0) -> ScalarImage:
    """Warp an image through the displacement field.

    PUSH_FORWARD carries the image along with the deforming material
    (used to synthesize the compressed image): pixel values become a P1
    function on the pixel-center triangulation, the vertices move by u,
    and the result is resampled on the original grid. Uncovered pixels
    get `fill`.

    COMPOSITION evaluates source(x + u(x)) at every pixel center
    (the forward operator of the inversion); out-of-frame targets get
    `fill`.
    """
    if (source.width, source.height) != (mesh.nx, mesh.ny):
        raise ValueError(
            f"image grid {source.width}x{source.height} does not match "
            f"mesh grid {mesh.nx}x{mesh.ny}")

    centers = source.pixel_centers()
    disp = evaluate_displacement_many(u, mesh, centers)

    if mode == COMPOSITION:
        out = _sample_bilinear(source, centers + disp, fill)
        return ScalarImage(values=out.reshape(source.height, source.width),
                           extent=source.extent)

    if mode == PUSH_FORWARD:
        moved = centers + disp
        tri = _pixel_center_triangles(source.width, source.height)
        triang = Triangulation(moved[:, 0], moved[:, 1], tri)
        interp = LinearTriInterpolator(triang, source.values.ravel())
        out = interp(centers[:, 0], centers[:, 1])
        out = np.ma.filled(out, fill)
        return ScalarImage(values=out.reshape(source.height, source.width),
                           extent=source.extent)

    raise ValueError(f"unknown warp mode {mode!r}")


def _pixel_center_triangles(W: int, H: int) -> np.ndarray:
    """Triangulate the pixel-center grid with the usual diagonal split."""
    i = np.arange(W - 1)
    j = np.arange(H - 1)
    I, J = np.meshgrid(i, j)
    n00 = (J * W + I).ravel()
    n10 = n00 + 1
    n01 = n00 + W
    n11 = n01 + 1
    tri = np.empty((2 * (W - 1) * (H - 1), 3), dtype=np.int64)
    tri[0::2] = np.column_stack([n00, n10, n11])
    tri[1::2] = np.column_stack([n00, n11, n01])
    return tri


@dataclass(frozen=True)
class NoiseSpec:
    delta: float
    seed: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"noise level must be >= 0, got {self.delta}")


def add_relative_noise(img: ScalarImage, n: NoiseSpec) -> ScalarImage:
    """Add uniform noise scaled to an exact relative L2 error of delta."""
    if n.delta == 0:
        return img
    rng = np.random.default_rng(n.seed)
    eta = rng.uniform(-1.0, 1.0, size=img.values.shape)
    scale = n.delta * np.linalg.norm(img.values) / np.linalg.norm(eta)
    return ScalarImage(values=img.values + scale * eta, extent=img.extent)


def write_pgm(img: ScalarImage, path) -> None:
    """16-bit binary PGM, rows flipped so the top of the sample is up."""
    scaled = np.clip(np.round(img.values * 65535.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        fh.write(f"# extent {img.extent[0]} {img.extent[1]}\n".encode())
        fh.write(f"{img.width} {img.height}\n65535\n".encode())
        fh.write(scaled[::-1].tobytes())


def read_pgm(path) -> ScalarImage:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ValueError(f"{path}: not a binary PGM file")
        extent = None
        line = fh.readline()
        while line.startswith(b"#"):
            parts = line.split()
            if len(parts) == 4 and parts[1] == b"extent":
                extent = (float(parts[2]), float(parts[3]))
            line = fh.readline()
        w, h = map(int, line.split())
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(w * h * 2), dtype=">u2").reshape(h, w)
    if extent is None:
        raise ValueError(f"{path}: missing extent header comment")
    return ScalarImage(values=data[::-1].astype(float) / maxval, extent=extent)


def write_image_csv(img: ScalarImage, path) -> None:
    """Lossless float dump, one CSV row per image row (bottom first)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["width", "height", "lx1", "lx2"])
        writer.writerow([img.width, img.height,
                         repr(img.extent[0]), repr(img.extent[1])])
        for row in img.values:
            writer.writerow([repr(float(v)) for v in row])


def read_image_csv(path) -> ScalarImage:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        w, h, lx1, lx2 = next(reader)
        values = np.array([[float(v) for v in row] for row in reader])
    if values.shape != (int(h), int(w)):
        raise ValueError(f"{path}: shape {values.shape} does not match header")
    return ScalarImage(values=values, extent=(float(lx1), float(lx2)))
