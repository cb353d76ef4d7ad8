"""Web-Mercator projection and zoom-level tiling arithmetic.

All coordinates are in projected meters with the origin at the north-west
corner of the world square and ``y`` growing southward, so that rasters
(row-major, row 0 at the top) and graphs share one orientation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import OutOfProjectionRange

EARTH_CIRCUMFERENCE = 40075016.686
MAX_LATITUDE = 85.0511


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float


def project(p: GeoPoint) -> tuple[float, float]:
    """Project ``p`` to Web-Mercator meters in ``[0, C]``."""
    if not abs(p.lat) <= MAX_LATITUDE:
        raise OutOfProjectionRange(f"latitude {p.lat} outside +-{MAX_LATITUDE}")
    if not -180.0 <= p.lon <= 180.0:
        raise OutOfProjectionRange(f"longitude {p.lon} outside [-180, 180]")
    phi = math.radians(p.lat)
    x = (p.lon + 180.0) / 360.0 * EARTH_CIRCUMFERENCE
    y = (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * EARTH_CIRCUMFERENCE
    return x, y


def unproject(x: float, y: float) -> GeoPoint:
    lon = x / EARTH_CIRCUMFERENCE * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y / EARTH_CIRCUMFERENCE))))
    return GeoPoint(lat, lon)


@dataclass(frozen=True)
class CropSpec:
    """One square map tile split into ``cells_per_side`` squared cells."""

    tile_x: int
    tile_y: int
    zoom: int = 15
    cells_per_side: int = 16
    pixels_per_cell: int = 16

    def __post_init__(self) -> None:
        n = 1 << self.zoom
        if not (0 <= self.tile_x < n and 0 <= self.tile_y < n):
            raise ValueError(f"tile ({self.tile_x}, {self.tile_y}) outside zoom {self.zoom} grid")
        if self.cells_per_side < 1 or self.pixels_per_cell < 1:
            raise ValueError("cells_per_side and pixels_per_cell must be positive")

    @property
    def side_m(self) -> float:
        return EARTH_CIRCUMFERENCE / (1 << self.zoom)

    @property
    def cell_m(self) -> float:
        return self.side_m / self.cells_per_side

    @property
    def pixel_m(self) -> float:
        return self.cell_m / self.pixels_per_cell

    @property
    def pixels(self) -> int:
        return self.cells_per_side * self.pixels_per_cell


def crop_bounds(c: CropSpec) -> tuple[float, float, float, float]:
    side = c.side_m
    x_min = c.tile_x * side
    y_min = c.tile_y * side
    return x_min, y_min, x_min + side, y_min + side


def world_to_pixel(x: float, y: float, c: CropSpec) -> tuple[float, float]:
    """Map world meters to fractional ``(col, row)`` pixel coordinates of ``c``.

    Pixel ``i`` is centred on coordinate ``i``; rounding a fractional
    coordinate yields the pixel that contains the point.
    """
    x_min, y_min, _, _ = crop_bounds(c)
    return (x - x_min) / c.pixel_m, (y - y_min) / c.pixel_m


def tile_of(p: GeoPoint, zoom: int = 15) -> tuple[int, int]:
    x, y = project(p)
    side = EARTH_CIRCUMFERENCE / (1 << zoom)
    n = (1 << zoom) - 1
    return min(int(x // side), n), min(int(y // side), n)


@dataclass(frozen=True)
class Region:
    """A rectangle of whole cells anchored at the north-west corner of a tile.

    Graphs and rasters of a region use local meters: world coordinates minus
    the anchor corner. A single crop is a region of 16 x 16 cells.
    """

    tile_x: int
    tile_y: int
    cells_x: int
    cells_y: int
    zoom: int = 15
    cells_per_side: int = 16
    pixels_per_cell: int = 16

    @classmethod
    def from_crop(cls, c: CropSpec, tiles_x: int = 1, tiles_y: int = 1) -> Region:
        return cls(c.tile_x, c.tile_y, tiles_x * c.cells_per_side, tiles_y * c.cells_per_side,
                   c.zoom, c.cells_per_side, c.pixels_per_cell)

    @classmethod
    def from_bbox(cls, south: float, west: float, north: float, east: float, zoom: int = 15) -> Region:
        """Smallest tile-aligned region covering a lat/lon bounding box."""
        tx0, ty0 = tile_of(GeoPoint(north, west), zoom)
        tx1, ty1 = tile_of(GeoPoint(south, east), zoom)
        if tx1 < tx0 or ty1 < ty0:
            raise ValueError("bounding box is empty or inverted")
        return cls(tx0, ty0, (tx1 - tx0 + 1) * 16, (ty1 - ty0 + 1) * 16, zoom)

    @property
    def anchor(self) -> CropSpec:
        return CropSpec(self.tile_x, self.tile_y, self.zoom, self.cells_per_side, self.pixels_per_cell)

    @property
    def cell_m(self) -> float:
        return self.anchor.cell_m

    @property
    def pixel_m(self) -> float:
        return self.anchor.pixel_m

    @property
    def width_px(self) -> int:
        return self.cells_x * self.pixels_per_cell

    @property
    def height_px(self) -> int:
        return self.cells_y * self.pixels_per_cell

    @property
    def width_m(self) -> float:
        return self.cells_x * self.cell_m

    @property
    def height_m(self) -> float:
        return self.cells_y * self.cell_m

    @property
    def origin(self) -> tuple[float, float]:
        x_min, y_min, _, _ = crop_bounds(self.anchor)
        return x_min, y_min

    def to_local(self, x: float, y: float) -> tuple[float, float]:
        ox, oy = self.origin
        return x - ox, y - oy

    def to_world(self, x: float, y: float) -> tuple[float, float]:
        ox, oy = self.origin
        return x + ox, y + oy

    def crops(self) -> list[CropSpec]:
        if self.cells_x % self.cells_per_side or self.cells_y % self.cells_per_side:
            raise ValueError("region is not a whole number of tiles")
        return [
            CropSpec(self.tile_x + i, self.tile_y + j, self.zoom, self.cells_per_side, self.pixels_per_cell)
            for j in range(self.cells_y // self.cells_per_side)
            for i in range(self.cells_x // self.cells_per_side)
        ]

    def to_dict(self) -> dict:
        return {"kind": "region", **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> Region:
        fields = {k: int(d[k]) for k in ("tile_x", "tile_y", "cells_x", "cells_y")}
        for k in ("zoom", "cells_per_side", "pixels_per_cell"):
            if k in d:
                fields[k] = int(d[k])
        return cls(**fields)
