"""Nadir camera geometry: swath widths, ground footprints, pixel georeferencing.

Coordinate conventions used throughout the toolkit:

  ENU frame (meters, about a chosen geodetic origin):
    x = east, y = north. All planning and census geometry lives here.

  Heading: degrees clockwise from true north, in [0, 360). The along-track
  unit vector of a camera at heading h is (sin h, cos h) in ENU; the
  across-track vector (to the right of travel) is (cos h, -sin h).

  Image frame: pixel x right, pixel y down, origin at the top-left corner.
  The top edge of the image faces the direction of travel. Pixels are
  treated as continuous coordinates in [0, width] x [0, height], so the
  four image corners map exactly onto the four footprint corners.

The camera is modeled as a nadir-pointing pinhole over flat ground with a
gimbal that cancels vehicle attitude; there is no lens distortion or
terrain model. Survey extents are a few kilometers, so geodetic <-> ENU
conversion uses a local tangent plane.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError

# Meters per degree of latitude (spherical model); longitude degrees are
# scaled by cos(latitude). Adequate below-0.01% error for spans under 1 deg.
METERS_PER_DEGREE = 110_574.0

# Largest geodetic span (degrees) accepted by the tangent-plane projection.
MAX_ENU_SPAN_DEG = 1.0


@dataclass(frozen=True)
class GeoPoint:
    """Geodetic position, WGS84 degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValidationError(f"latitude/longitude out of range: {self.lat}, {self.lon}")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Physical camera parameters; field-of-view quantities derive from these."""

    sensor_width_mm: float
    sensor_height_mm: float
    focal_mm: float
    image_width_px: int
    image_height_px: int

    def __post_init__(self):
        for name in ("sensor_width_mm", "sensor_height_mm", "focal_mm",
                     "image_width_px", "image_height_px"):
            value = getattr(self, name)
            if not (value > 0):
                raise ValidationError(f"camera intrinsics: {name} must be > 0, got {value}")
        sensor_aspect = self.sensor_width_mm / self.sensor_height_mm
        pixel_aspect = self.image_width_px / self.image_height_px
        if abs(sensor_aspect - pixel_aspect) > 0.01 * pixel_aspect:
            raise ValidationError(
                f"sensor aspect {sensor_aspect:.4f} does not match pixel grid "
                f"aspect {pixel_aspect:.4f} within 1%"
            )

    @property
    def h_fov_deg(self) -> float:
        """Across-track field of view, degrees."""
        return math.degrees(2.0 * math.atan(self.sensor_width_mm / (2.0 * self.focal_mm)))

    @property
    def v_fov_deg(self) -> float:
        """Along-track field of view, degrees."""
        return math.degrees(2.0 * math.atan(self.sensor_height_mm / (2.0 * self.focal_mm)))

    def gsd_m(self, alt_agl_m: float) -> float:
        """Across-track ground sample distance (m/px) at the given altitude."""
        return ground_swath(self, alt_agl_m) / self.image_width_px


# Built-in cameras. Phantom 4 Pro values come from DJI's published camera
# specifications (1" CMOS, 13.2 x 8.8 mm, 8.8 mm lens, 5472 x 3648 stills),
# not from any survey data product. The advertised 84 deg field of view is
# the diagonal figure these intrinsics reproduce (2*atan(15.86/17.6) = 84.1
# deg); formulas only ever use the stored intrinsics.
PHANTOM_4_PRO = CameraIntrinsics(
    sensor_width_mm=13.2,
    sensor_height_mm=8.8,
    focal_mm=8.8,
    image_width_px=5472,
    image_height_px=3648,
)

# Small synthetic camera used by generated fixtures; same optics as above
# but a 1296 x 864 pixel grid so placeholder images stay small.
SYNTH_SMALL = CameraIntrinsics(
    sensor_width_mm=13.2,
    sensor_height_mm=8.8,
    focal_mm=8.8,
    image_width_px=1296,
    image_height_px=864,
)


def builtin_cameras() -> dict[str, CameraIntrinsics]:
    return {"phantom4pro": PHANTOM_4_PRO, "synth_small": SYNTH_SMALL}


def load_cameras(path: str | Path) -> dict[str, CameraIntrinsics]:
    """Load named cameras from a flat key-value config file.

    One camera per named section:

        [phantom4pro]
        sensor_width_mm = 13.2
        sensor_height_mm = 8.8
        focal_mm = 8.8
        image_width_px = 5472
        image_height_px = 3648
    """
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise OSError(f"camera config not found: {path}")
    cameras: dict[str, CameraIntrinsics] = {}
    for section in parser.sections():
        try:
            cameras[section] = CameraIntrinsics(
                sensor_width_mm=parser.getfloat(section, "sensor_width_mm"),
                sensor_height_mm=parser.getfloat(section, "sensor_height_mm"),
                focal_mm=parser.getfloat(section, "focal_mm"),
                image_width_px=parser.getint(section, "image_width_px"),
                image_height_px=parser.getint(section, "image_height_px"),
            )
        except (configparser.Error, ValueError) as exc:
            raise ValidationError(f"camera config [{section}]: {exc}") from exc
    return cameras


def save_cameras(cameras: dict[str, CameraIntrinsics], path: str | Path) -> None:
    parser = configparser.ConfigParser()
    for name in sorted(cameras):
        cam = cameras[name]
        parser[name] = {
            "sensor_width_mm": repr(cam.sensor_width_mm),
            "sensor_height_mm": repr(cam.sensor_height_mm),
            "focal_mm": repr(cam.focal_mm),
            "image_width_px": str(cam.image_width_px),
            "image_height_px": str(cam.image_height_px),
        }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


@dataclass(frozen=True)
class FlightPose:
    """Camera pose at exposure time: geodetic position, AGL altitude, heading."""

    position: GeoPoint
    alt_agl_m: float
    heading_deg: float
    timestamp_utc: float

    def __post_init__(self):
        if not math.isfinite(self.alt_agl_m):
            raise ValidationError(f"altitude must be finite, got {self.alt_agl_m}")
        if not (0.0 <= self.heading_deg < 360.0):
            raise ValidationError(f"heading must be in [0, 360), got {self.heading_deg}")


@dataclass(frozen=True)
class GroundFootprint:
    """Ground rectangle imaged by one exposure, in ENU meters.

    Corners are ordered by the image corner they correspond to:
    top-left, top-right, bottom-right, bottom-left (top = direction of travel).
    """

    corners: tuple[tuple[float, float], ...]
    center: tuple[float, float]
    swath_across_m: float
    extent_along_m: float

    @property
    def area_m2(self) -> float:
        """Shoelace area of the corner quadrilateral."""
        pts = self.corners
        acc = 0.0
        for i in range(4):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % 4]
            acc += x0 * y1 - x1 * y0
        return abs(acc) / 2.0

    def contains(self, point: tuple[float, float]) -> bool:
        """True if the ENU point lies inside the footprint rectangle."""
        px, py = point
        inside = True
        for i in range(4):
            x0, y0 = self.corners[i]
            x1, y1 = self.corners[(i + 1) % 4]
            cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
            inside = inside and cross <= 1e-9
        return inside


def _check_altitude(alt_agl_m: float) -> None:
    if not (alt_agl_m > 0.0) or not math.isfinite(alt_agl_m):
        raise ValidationError(f"altitude above ground must be > 0, got {alt_agl_m}")


def ground_swath(intr: CameraIntrinsics, alt_agl_m: float) -> float:
    """Across-track ground width (m) imaged from the given altitude."""
    _check_altitude(alt_agl_m)
    return 2.0 * alt_agl_m * (intr.sensor_width_mm / (2.0 * intr.focal_mm))


def along_track_extent(intr: CameraIntrinsics, alt_agl_m: float) -> float:
    """Along-track ground length (m) imaged from the given altitude."""
    _check_altitude(alt_agl_m)
    return 2.0 * alt_agl_m * (intr.sensor_height_mm / (2.0 * intr.focal_mm))


def forward_overlap(speed_mps: float, interval_s: float, extent_along_m: float) -> float:
    """Fraction of ground shared by consecutive along-track photographs."""
    if speed_mps < 0:
        raise ValidationError(f"speed must be >= 0, got {speed_mps}")
    if not (interval_s > 0):
        raise ValidationError(f"photo interval must be > 0, got {interval_s}")
    if not (extent_along_m > 0):
        raise ValidationError(f"along-track extent must be > 0, got {extent_along_m}")
    advance = speed_mps * interval_s
    return max(0.0, (extent_along_m - advance) / extent_along_m)


def heading_basis(heading_deg: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """(across-track-right, along-track) unit vectors in ENU for a heading."""
    h = math.radians(heading_deg)
    along = (math.sin(h), math.cos(h))
    across = (math.cos(h), -math.sin(h))
    return across, along


def enu_project(origin: GeoPoint, point: GeoPoint) -> tuple[float, float]:
    """Geodetic point -> (east, north) meters about origin (tangent plane)."""
    dlat = point.lat - origin.lat
    dlon = point.lon - origin.lon
    if abs(dlat) >= MAX_ENU_SPAN_DEG or abs(dlon) >= MAX_ENU_SPAN_DEG:
        raise ValidationError(
            f"span {dlat:.3f}/{dlon:.3f} deg exceeds the {MAX_ENU_SPAN_DEG} deg "
            f"tangent-plane limit"
        )
    east = dlon * math.cos(math.radians(origin.lat)) * METERS_PER_DEGREE
    north = dlat * METERS_PER_DEGREE
    return east, north


def enu_unproject(origin: GeoPoint, east: float, north: float) -> GeoPoint:
    """Inverse of :func:`enu_project`; round-trips within 1e-9 degrees."""
    lat = origin.lat + north / METERS_PER_DEGREE
    lon = origin.lon + east / (METERS_PER_DEGREE * math.cos(math.radians(origin.lat)))
    point = GeoPoint(lat=lat, lon=lon)
    if abs(lat - origin.lat) >= MAX_ENU_SPAN_DEG or abs(lon - origin.lon) >= MAX_ENU_SPAN_DEG:
        raise ValidationError(
            f"ENU offset ({east:.1f}, {north:.1f}) m exceeds the tangent-plane limit"
        )
    return point


def footprint_polygon(pose: FlightPose, intr: CameraIntrinsics,
                      origin: GeoPoint) -> GroundFootprint:
    """Ground rectangle imaged by a nadir exposure, in ENU about origin."""
    _check_altitude(pose.alt_agl_m)
    half_w = ground_swath(intr, pose.alt_agl_m) / 2.0
    half_l = along_track_extent(intr, pose.alt_agl_m) / 2.0
    ce, cn = enu_project(origin, pose.position)
    (ax, ay), (lx, ly) = heading_basis(pose.heading_deg)
    corners = (
        (ce - half_w * ax + half_l * lx, cn - half_w * ay + half_l * ly),  # top-left
        (ce + half_w * ax + half_l * lx, cn + half_w * ay + half_l * ly),  # top-right
        (ce + half_w * ax - half_l * lx, cn + half_w * ay - half_l * ly),  # bottom-right
        (ce - half_w * ax - half_l * lx, cn - half_w * ay - half_l * ly),  # bottom-left
    )
    return GroundFootprint(
        corners=corners,
        center=(ce, cn),
        swath_across_m=2.0 * half_w,
        extent_along_m=2.0 * half_l,
    )


def pixel_to_ground(pose: FlightPose, intr: CameraIntrinsics,
                    pixel: tuple[float, float], origin: GeoPoint) -> tuple[float, float]:
    """Project an image pixel onto the ground plane (ENU meters about origin).

    Pixels are continuous coordinates in [0, width] x [0, height]; the
    principal point sits at the image center.
    """
    _check_altitude(pose.alt_agl_m)
    px, py = pixel
    if not (0.0 <= px <= intr.image_width_px) or not (0.0 <= py <= intr.image_height_px):
        raise ValidationError(
            f"pixel ({px}, {py}) outside image bounds "
            f"{intr.image_width_px} x {intr.image_height_px}"
        )
    right = pose.alt_agl_m * (px - intr.image_width_px / 2.0) * (
        intr.sensor_width_mm / (intr.image_width_px * intr.focal_mm))
    forward = pose.alt_agl_m * (intr.image_height_px / 2.0 - py) * (
        intr.sensor_height_mm / (intr.image_height_px * intr.focal_mm))
    ce, cn = enu_project(origin, pose.position)
    (ax, ay), (lx, ly) = heading_basis(pose.heading_deg)
    return (ce + right * ax + forward * lx, cn + right * ay + forward * ly)


def ground_to_pixel(pose: FlightPose, intr: CameraIntrinsics,
                    point: tuple[float, float], origin: GeoPoint) -> tuple[float, float]:
    """Inverse of :func:`pixel_to_ground` for points inside the footprint."""
    _check_altitude(pose.alt_agl_m)
    ce, cn = enu_project(origin, pose.position)
    dx, dy = point[0] - ce, point[1] - cn
    (ax, ay), (lx, ly) = heading_basis(pose.heading_deg)
    right = dx * ax + dy * ay
    forward = dx * lx + dy * ly
    px = intr.image_width_px / 2.0 + right * intr.image_width_px * intr.focal_mm / (
        pose.alt_agl_m * intr.sensor_width_mm)
    py = intr.image_height_px / 2.0 - forward * intr.image_height_px * intr.focal_mm / (
        pose.alt_agl_m * intr.sensor_height_mm)
    if not (0.0 <= px <= intr.image_width_px) or not (0.0 <= py <= intr.image_height_px):
        raise ValidationError(f"ground point {point} falls outside the image footprint")
    return px, py
