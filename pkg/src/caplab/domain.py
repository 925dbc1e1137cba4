"""Uniform-grid cell masks for bounded Euclidean domains and excision regions.

A cell is active when its center lies inside the shape. Every grid keeps a
one-cell inactive margin so that the discrete Dirichlet condition is always
imposable: the value at an inactive neighbor is zero.

Conventions
-----------
Cell ``idx`` has center ``origin + (idx + 0.5) * h``. For boxes the active
cells are the interior nodes of the box (``round(L/h) - 1`` per axis), so the
discrete spectrum is exactly the finite-difference spectrum of the box.
Balls are centered on a cell center so their masks are symmetric.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

__all__ = [
    "GridDomain",
    "Region",
    "DomainError",
    "make_box",
    "make_ball",
    "make_ellipsoid",
    "excise",
    "union_ball",
    "measure",
    "corrected_perimeter",
    "domain_center",
    "annulus_region",
    "ball_region",
    "box_region",
    "empty_region",
    "full_region",
    "spiked_ball",
    "random_blob",
    "random_region",
    "embed",
    "translate",
    "unit_ball_volume",
    "STAIRCASE_CORRECTION",
    "save_dmask",
    "load_dmask",
    "dumps_dmask",
    "loads_dmask",
]

# Mean of |n|_1 over the unit sphere: ratio of staircase to smooth perimeter
# for isotropic shapes.
STAIRCASE_CORRECTION = {2: 4.0 / math.pi, 3: 1.5}


class DomainError(ValueError):
    """Invalid geometry or grid parameters."""


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def _face_structure(dim):
    return ndimage.generate_binary_structure(dim, 1)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=bool)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Active-cell mask on a uniform grid.

    Parameters
    ----------
    mask : ndarray of bool
        True for cells inside the domain. Must have an inactive margin.
    h : float
        Cell side length.
    origin : tuple of float, optional
        Physical coordinate of the corner of cell ``(0, ..., 0)``.
    """

    mask: np.ndarray
    h: float
    origin: tuple = None
    name: str = field(default="domain", compare=False)

    def __post_init__(self):
        mask = _freeze(self.mask)
        object.__setattr__(self, "mask", mask)
        if mask.ndim not in (2, 3):
            raise DomainError(f"dimension must be 2 or 3, got {mask.ndim}")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise DomainError(f"spacing must be positive, got {self.h}")
        object.__setattr__(self, "h", float(self.h))
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * mask.ndim)
        else:
            object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.origin) != mask.ndim:
            raise DomainError("origin length does not match dimension")
        if not mask.any():
            raise DomainError("domain has no active cells")
        for ax in range(mask.ndim):
            if mask.take(0, axis=ax).any() or mask.take(-1, axis=ax).any():
                raise DomainError("active cells touch the grid edge; a one-cell margin is required")

    @property
    def dim(self) -> int:
        return self.mask.ndim

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def n_components(self) -> int:
        _, n = ndimage.label(self.mask, structure=_face_structure(self.dim))
        return int(n)

    @property
    def is_connected(self) -> bool:
        return self.n_components == 1

    @cached_property
    def domain_id(self) -> str:
        digest = hashlib.sha1()
        digest.update(repr((self.shape, self.h, self.origin)).encode())
        digest.update(np.packbits(self.mask).tobytes())
        return digest.hexdigest()[:12]

    def centers(self) -> list:
        """Cell-center coordinate arrays, one per axis."""
        return _grid_centers(self.shape, self.origin, self.h)

    def radius_from(self, center) -> np.ndarray:
        """Distance of every cell center to ``center``."""
        return np.sqrt(self.sq_radius_cells(center)) * self.h

    def sq_radius_cells(self, center) -> np.ndarray:
        """Squared distance to ``center`` in cell units.

        Offsets that are within rounding of a (half-)integer are snapped, so
        balls about a cell center or vertex come out exactly symmetric.
        """
        sq = 0.0
        for ax, (o, n, c) in enumerate(zip(self.origin, self.shape, center)):
            u = _snap_half((o - c) / self.h + 0.5)
            shape = [1] * self.dim
            shape[ax] = n
            sq = sq + ((np.arange(n) + u) ** 2).reshape(shape)
        return np.broadcast_to(sq, self.shape)

    def inside_ball(self, center, radius: float) -> np.ndarray:
        return self.sq_radius_cells(center) < _snap_half(radius / self.h) ** 2

    @property
    def grid_center(self) -> tuple:
        return tuple(o + n * self.h / 2 for o, n in zip(self.origin, self.shape))

    def same_grid(self, other) -> bool:
        return (
            self.shape == other.shape
            and self.h == other.h
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-9 * self.h)
        )

    def with_mask(self, mask, name=None) -> "GridDomain":
        return GridDomain(mask, self.h, self.origin, name=name or self.name)

    def volume(self) -> float:
        return self.n_active * self.cell_volume


@dataclass(frozen=True, eq=False)
class Region:
    """Cell mask on the grid of a parent domain; may extend outside it."""

    mask: np.ndarray
    parent_shape: tuple
    name: str = field(default="region", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mask", _freeze(self.mask))
        object.__setattr__(self, "parent_shape", tuple(self.parent_shape))
        if self.mask.shape != self.parent_shape:
            raise DomainError(f"region shape {self.mask.shape} != parent shape {self.parent_shape}")

    @cached_property
    def region_id(self) -> str:
        return hashlib.sha1(np.packbits(self.mask).tobytes() + repr(self.parent_shape).encode()).hexdigest()[:12]

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    def __or__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.mask | other.mask, self.parent_shape, name=f"{self.name}|{other.name}")

    def __and__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.mask & other.mask, self.parent_shape, name=f"{self.name}&{other.name}")

    def __le__(self, other: "Region") -> bool:
        self._check(other)
        return not (self.mask & ~other.mask).any()

    def _check(self, other):
        if self.parent_shape != other.parent_shape:
            raise DomainError("regions live on different grids")

    def dilate(self, cells: int = 1) -> "Region":
        if cells <= 0:
            return self
        m = ndimage.binary_dilation(self.mask, _face_structure(self.mask.ndim), iterations=cells)
        return Region(m, self.parent_shape, name=f"{self.name}+{cells}")

    def within(self, domain: GridDomain) -> np.ndarray:
        """Cells of the region that are active in ``domain``."""
        _check_region(domain, self)
        return self.mask & domain.mask

    def volume_in(self, domain: GridDomain) -> float:
        return float(self.within(domain).sum()) * domain.cell_volume


def _snap_half(x: float) -> float:
    r = round(2 * x) / 2
    return r if abs(x - r) < 1e-9 else x


def _check_region(domain, region):
    if region.parent_shape != domain.shape:
        raise DomainError(f"region grid {region.parent_shape} does not match domain grid {domain.shape}")


def _check_resolution(h, *lengths, minimum=4.0, what="length"):
    if not (h > 0 and math.isfinite(h)):
        raise DomainError(f"spacing must be positive, got {h}")
    for L in lengths:
        if not L >= minimum * h:
            raise DomainError(f"{what} {L} is below {minimum:g} cells at h={h}")


def make_box(dim: int, side_lengths, h: float, pad: int = 1, corner=None) -> GridDomain:
    """Axis-aligned box whose active cells are the interior grid nodes.

    ``round(L/h) - 1`` active cells per axis, so the discrete eigenvalues are
    ``(2/h^2) * sum(1 - cos(m_j pi h / L_j))`` when ``L_j/h`` is an integer.
    """
    side_lengths = tuple(float(s) for s in side_lengths)
    if len(side_lengths) != dim:
        raise DomainError("need one side length per axis")
    _check_resolution(h, *side_lengths, what="side length")
    counts = [int(round(L / h)) - 1 for L in side_lengths]
    mask = np.zeros([c + 2 * pad for c in counts], dtype=bool)
    mask[tuple(slice(pad, pad + c) for c in counts)] = True
    corner = (0.0,) * dim if corner is None else tuple(corner)
    # first active center sits one h inside the box corner
    origin = tuple(c + h - (pad + 0.5) * h for c in corner)
    return GridDomain(mask, h, origin, name=f"box{side_lengths}")


def _centered_grid(dim, half_extent, h, pad, center):
    n_half = int(math.ceil(half_extent / h)) + pad
    origin = tuple(c - (n_half + 0.5) * h for c in center)
    return (2 * n_half + 1,) * dim, origin


def make_ball(dim: int, radius: float, h: float, pad: int = 1, center=None, extent=None) -> GridDomain:
    """Cells whose centers lie strictly inside the ball.

    ``extent`` widens the bounding box (half-width) beyond ``radius``.
    """
    _check_resolution(h, radius, what="radius")
    center = (0.0,) * dim if center is None else tuple(float(c) for c in center)
    shape, origin = _centered_grid(dim, max(radius, extent or 0.0), h, pad, center)
    mask = lattice_ball(shape, radius / h)
    return GridDomain(mask, h, origin, name=f"ball(r={radius:g})")


def lattice_ball(shape, radius_cells: float) -> np.ndarray:
    """Cells whose integer offset from the middle cell has norm < ``radius_cells``.

    Integer arithmetic keeps the mask exactly symmetric.
    """
    offsets = np.meshgrid(*[np.arange(n) - n // 2 for n in shape], indexing="ij")
    sq = sum(o.astype(np.int64) ** 2 for o in offsets)
    if abs(radius_cells - round(radius_cells)) < 1e-9:
        radius_cells = round(radius_cells)
    return sq < radius_cells**2


def _grid_centers(shape, origin, h):
    axes = [o + (np.arange(n) + 0.5) * h for o, n in zip(origin, shape)]
    return np.meshgrid(*axes, indexing="ij")


def _radius(grids, center):
    return np.sqrt(sum((x - c) ** 2 for x, c in zip(grids, center)))


def make_ellipsoid(semi_axes, h: float, pad: int = 1) -> GridDomain:
    """Axis-aligned ellipsoid centered at the origin."""
    semi_axes = tuple(float(a) for a in semi_axes)
    dim = len(semi_axes)
    _check_resolution(h, *semi_axes, what="semi-axis")
    counts = [2 * (int(math.ceil(a / h)) + pad) + 1 for a in semi_axes]
    origin = tuple(-(n / 2) * h for n in counts)
    grids = _grid_centers(counts, origin, h)
    q = sum((x / a) ** 2 for x, a in zip(grids, semi_axes))
    return GridDomain(q < 1.0, h, origin, name=f"ellipsoid{semi_axes}")


def excise(domain: GridDomain, region: Region) -> GridDomain:
    """Domain with the region's cells removed. Cells of the region outside the domain are ignored."""
    _check_region(domain, region)
    mask = domain.mask & ~region.mask
    if not mask.any():
        raise DomainError("excision removes every active cell")
    return domain.with_mask(mask, name=f"{domain.name}\\{region.name}")


def union_ball(domain: GridDomain, center, radius: float) -> GridDomain:
    """Union of the domain with the ball of given center and radius."""
    ball = _ball_mask(domain, center, radius)
    return domain.with_mask(domain.mask | ball, name=f"{domain.name}+ball")


def _ball_mask(domain, center, radius):
    center = tuple(float(c) for c in center)
    if len(center) != domain.dim:
        raise DomainError("center dimension mismatch")
    h = domain.h
    need = 0
    for ax, (c, o, n) in enumerate(zip(center, domain.origin, domain.shape)):
        lo = (c - radius - o) / h - 0.5  # index of lowest cell center possibly inside
        hi = (c + radius - o) / h - 0.5
        need = max(need, math.ceil(1 - lo), math.ceil(hi - (n - 2)))
    if need > 0:
        raise DomainError(f"ball exceeds the grid; pad the grid by at least {need} cells per side")
    return domain.inside_ball(center, radius)


def measure(domain: GridDomain) -> tuple:
    """Volume and raw staircase perimeter (faces between active and inactive cells)."""
    m = domain.mask
    faces = 0
    for ax in range(domain.dim):
        faces += int(np.count_nonzero(np.diff(m.astype(np.int8), axis=ax)))
    return domain.volume(), faces * domain.h ** (domain.dim - 1)


def corrected_perimeter(domain: GridDomain) -> float:
    """Staircase perimeter divided by the isotropic correction factor."""
    return measure(domain)[1] / STAIRCASE_CORRECTION[domain.dim]


# -- regions -----------------------------------------------------------------


def empty_region(domain: GridDomain) -> Region:
    return Region(np.zeros(domain.shape, bool), domain.shape, name="empty")


def full_region(domain: GridDomain) -> Region:
    return Region(domain.mask.copy(), domain.shape, name="all")


def ball_region(domain: GridDomain, radius: float, center=None) -> Region:
    center = domain_center(domain) if center is None else center
    return Region(domain.inside_ball(center, radius), domain.shape, name=f"ball(r={radius:g})")


def annulus_region(domain: GridDomain, r_in: float, r_out: float, center=None) -> Region:
    """Cells with ``r_in <= |x - center| < r_out``."""
    if not 0 <= r_in < r_out:
        raise DomainError(f"annulus needs 0 <= r_in < r_out, got {r_in}, {r_out}")
    center = domain_center(domain) if center is None else center
    mask = domain.inside_ball(center, r_out) & ~domain.inside_ball(center, r_in)
    if not mask.any():
        raise DomainError(f"annulus [{r_in}, {r_out}) contains no cell center at h={domain.h}")
    return Region(mask, domain.shape, name=f"annulus({r_in:g},{r_out:g})")


def box_region(domain: GridDomain, lower, upper) -> Region:
    grids = domain.centers()
    mask = np.ones(domain.shape, bool)
    for x, lo, hi in zip(grids, lower, upper):
        mask &= (x >= lo) & (x < hi)
    return Region(mask, domain.shape, name="box")


def domain_center(domain: GridDomain) -> tuple:
    """Center of the active cells' bounding box, snapped to a cell center."""
    idx = np.argwhere(domain.mask)
    mid = (idx.min(axis=0) + idx.max(axis=0)) // 2
    return tuple(o + (i + 0.5) * domain.h for o, i in zip(domain.origin, mid))


def random_region(rng: np.random.Generator, domain: GridDomain, n_balls=None, max_radius=0.15) -> Region:
    """Union of a few random small balls with centers among active cells."""
    n_balls = int(rng.integers(1, 4)) if n_balls is None else n_balls
    active = np.argwhere(domain.mask)
    scale = min(domain.shape) * domain.h
    mask = np.zeros(domain.shape, bool)
    for _ in range(n_balls):
        i = active[rng.integers(len(active))]
        c = [o + (j + 0.5) * domain.h for o, j in zip(domain.origin, i)]
        r = domain.h * 0.6 + rng.random() * max_radius * scale
        mask |= domain.inside_ball(c, r)
    return Region(mask, domain.shape, name="random")


# -- generators ----------------------------------------------------------------


def spiked_ball(dim: int, R: float, spike_len: float, spike_width: float, h: float, pad: int = 1,
                extent=None) -> GridDomain:
    """Ball of radius R with a thin box-shaped spike along +x.

    The spike is ``round(spike_width / h)`` cells wide in every transverse
    direction (even counts sit half a cell off axis) and runs from the center
    to ``R + spike_len``. ``extent`` is the half-width of the grid around the
    ball center (defaults to just enough for the spike).
    """
    _check_resolution(h, R, what="radius")
    n_w = int(round(spike_width / h))
    if n_w < 1:
        raise DomainError(f"spike width {spike_width} is below one cell at h={h}")
    if spike_len < 0:
        raise DomainError("spike length must be nonnegative")
    half = max(R + spike_len, extent or 0.0)
    shape, origin = _centered_grid(dim, half, h, pad, (0.0,) * dim)
    grids = _grid_centers(shape, origin, h)
    mask = lattice_ball(shape, R / h)
    spike = (grids[0] >= 0) & (grids[0] < R + spike_len)
    lo = shape[1] // 2 - n_w // 2
    for ax in range(1, dim):
        sel = np.zeros(shape[ax], bool)
        sel[lo:lo + n_w] = True
        spike &= sel.reshape([-1 if a == ax else 1 for a in range(dim)])
    mask = mask | spike
    return GridDomain(mask, h, origin, name=f"spiked(R={R:g},L={spike_len:g},w={spike_width:g})")


def random_blob(seed: int, dim: int, h: float, n_lobes: int = 5, size: float = 1.0) -> GridDomain:
    """Connected union of overlapping balls, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    _check_resolution(h, size / 4, what="blob lobe radius")
    centers = [np.zeros(dim)]
    radii = [size / 2]
    for _ in range(n_lobes - 1):
        parent = int(rng.integers(len(centers)))
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        r = size * (0.25 + 0.25 * rng.random())
        centers.append(centers[parent] + direction * radii[parent] * 0.8)
        radii.append(r)
    extent = max(np.abs(c).max() + r for c, r in zip(centers, radii))
    shape, origin = _centered_grid(dim, extent, h, 1, (0.0,) * dim)
    grids = _grid_centers(shape, origin, h)
    mask = np.zeros(shape, bool)
    for c, r in zip(centers, radii):
        mask |= _radius(grids, c) < r
    lab, n = ndimage.label(mask, structure=_face_structure(dim))
    if n > 1:
        keep = 1 + int(np.argmax(ndimage.sum(mask, lab, range(1, n + 1))))
        mask = lab == keep
    return GridDomain(mask, h, origin, name=f"blob(seed={seed})")


def embed(domain: GridDomain, pad: int) -> GridDomain:
    """Same domain on a grid enlarged by ``pad`` inactive cells per side."""
    if pad <= 0:
        return domain
    mask = np.pad(domain.mask, pad)
    origin = tuple(o - pad * domain.h for o in domain.origin)
    return GridDomain(mask, domain.h, origin, name=domain.name)


def translate(domain: GridDomain, shift) -> GridDomain:
    """Shift the mask by whole cells inside the same grid (physical origin unchanged)."""
    mask = domain.mask
    for ax, s in enumerate(shift):
        mask = np.roll(mask, s, axis=ax)
        if s > 0 and mask.take(range(0, s + 1), axis=ax).any() or s < 0 and mask.take(
                range(mask.shape[ax] + s - 1, mask.shape[ax]), axis=ax).any():
            raise DomainError("translation pushes the domain into the grid margin")
    return domain.with_mask(mask, name=f"{domain.name}>>{tuple(shift)}")


# -- DMASK v1 ------------------------------------------------------------------


def dumps_dmask(mask: np.ndarray, h: float) -> str:
    mask = np.asarray(mask, dtype=bool)
    lines = ["DMASK 1", f"{mask.ndim} {float(h)!r}", " ".join(str(n) for n in mask.shape)]
    slabs = mask.reshape((-1,) + mask.shape[-2:]) if mask.ndim > 2 else mask[None]
    blocks = []
    for slab in slabs:
        blocks.append("\n".join("".join("1" if v else "0" for v in row) for row in slab))
    return "\n".join(lines) + "\n" + "\n\n".join(blocks) + "\n"


def loads_dmask(text: str) -> tuple:
    """Parse a DMASK v1 document into ``(mask, h)``."""
    lines = text.split("\n")
    if lines[0].strip() != "DMASK 1":
        raise DomainError("not a DMASK v1 file")
    dim_s, h_s = lines[1].split()
    dim, h = int(dim_s), float(h_s)
    shape = tuple(int(s) for s in lines[2].split())
    if len(shape) != dim:
        raise DomainError("axis count does not match dimension")
    rows = [ln for ln in lines[3:] if ln != ""]
    expected = int(np.prod(shape[:-1]))
    if len(rows) != expected or any(len(r) != shape[-1] for r in rows):
        raise DomainError("DMASK body does not match the declared shape")
    flat = np.frombuffer("".join(rows).encode(), dtype=np.uint8) - ord("0")
    if flat.max(initial=0) > 1:
        raise DomainError("DMASK body must contain only 0/1")
    return flat.astype(bool).reshape(shape), h


def save_dmask(path, domain: GridDomain) -> None:
    Path(path).write_text(dumps_dmask(domain.mask, domain.h))


def load_dmask(path, origin=None) -> GridDomain:
    mask, h = loads_dmask(Path(path).read_text())
    return GridDomain(mask, h, origin)
