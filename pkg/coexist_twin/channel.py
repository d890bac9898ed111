"""
Channel module for Coexist Twin.

Indoor-factory (dense clutter, high base station) path loss, LOS probability and
log-normal shadowing, plus an SINR abstraction with co-channel interference.

The full cluster/ray MIMO response is not modelled. Fast fading is a per-TTI
unit-mean exponential power gain on the wanted signal and the 2x2 arrays are a
constant combining gain.
"""

from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from .errors import DomainError
from .scenario import Direction, RadioParams

logger = logging.getLogger(__name__)

BOLTZMANN = 1.380649e-23
NOISE_TEMPERATURE_K = 290.0
NEG_INF_DB = float("-inf")


@dataclass(frozen=True)
class LinkGeometry:
    """
    Geometry of one device-gNB link.

    Attributes:
        d_2d: Ground distance (m)
        d_3d: Slant distance (m)
        f_c: Carrier frequency (GHz)
        h_gnb: gNB antenna height (m)
        h_device: Device height (m)
        h_clut: Clutter height (m)
        d_clut: Typical clutter size (m)
        r_clut: Clutter density, fraction of the surface covered
    """
    d_2d: float
    d_3d: float
    f_c: float
    h_gnb: float = 8.0
    h_device: float = 1.5
    h_clut: float = 6.0
    d_clut: float = 2.0
    r_clut: float = 0.6

    def __post_init__(self) -> None:
        if self.d_2d < 0 or self.d_3d < self.d_2d:
            raise DomainError(f"d_3d >= d_2d >= 0 violated: d_2d={self.d_2d}, d_3d={self.d_3d}")
        if not 0.0 < self.r_clut < 1.0:
            raise DomainError(f"r_clut must be in (0, 1), got {self.r_clut}")
        if self.h_gnb <= self.h_device:
            raise DomainError(f"h_gnb must exceed h_device, got {self.h_gnb} <= {self.h_device}")

    @classmethod
    def between(cls, device: Sequence[float], gnb: Sequence[float], radio: RadioParams) -> "LinkGeometry":
        """Geometry from two 3D points; antenna heights are taken from the points."""
        dx, dy = gnb[0] - device[0], gnb[1] - device[1]
        d_2d = math.hypot(dx, dy)
        d_3d = math.sqrt(d_2d * d_2d + (gnb[2] - device[2]) ** 2)
        return cls(
            d_2d=d_2d,
            d_3d=max(d_3d, d_2d),
            f_c=radio.carrier_ghz,
            h_gnb=gnb[2],
            h_device=device[2],
            h_clut=radio.clutter_height_m,
            d_clut=radio.clutter_size_m,
            r_clut=radio.clutter_density,
        )


@dataclass
class LinkState:
    """
    Large-scale state of one link, drawn once per (device position, gNB) per run.

    Attributes:
        los: Line-of-sight flag
        shadowing_db: Log-normal shadowing draw (dB, added to the path loss)
        path_loss_db: Distance-dependent path loss for the drawn LOS state
        last_sinr_db: Latest realized SINR per direction (None before any transmission)
    """
    los: bool
    shadowing_db: float
    path_loss_db: float
    last_sinr_db: Dict[Direction, Optional[float]] = field(
        default_factory=lambda: {Direction.UL: None, Direction.DL: None}
    )

    def __post_init__(self) -> None:
        if self.path_loss_db < 0:
            raise DomainError(f"path_loss_db cannot be negative, got {self.path_loss_db}")

    @property
    def total_loss_db(self) -> float:
        return self.path_loss_db + self.shadowing_db

    @property
    def gain(self) -> float:
        """Linear power gain including shadowing."""
        return 10.0 ** (-self.total_loss_db / 10.0)


def _check_distance(geom: LinkGeometry) -> None:
    if geom.d_3d <= 0:
        raise DomainError(f"path loss undefined for d_3d <= 0, got {geom.d_3d}")
    if geom.f_c <= 0:
        raise DomainError(f"path loss undefined for f_c <= 0, got {geom.f_c}")


def path_loss_los(geom: LinkGeometry) -> float:
    """LOS path loss in dB: 31.84 + 21.5 log10(d_3d) + 19 log10(f_c)."""
    _check_distance(geom)
    return 31.84 + 21.5 * math.log10(geom.d_3d) + 19.0 * math.log10(geom.f_c)


def path_loss_nlos(geom: LinkGeometry) -> float:
    """NLOS path loss in dB for dense clutter, never below the LOS value."""
    _check_distance(geom)
    dense_high = 33.63 + 21.9 * math.log10(geom.d_3d) + 20.0 * math.log10(geom.f_c)
    return max(path_loss_los(geom), dense_high)


def los_probability(geom: LinkGeometry) -> float:
    """Probability that the link is LOS, clamped to [0, 1]."""
    if not 0.0 < geom.r_clut < 1.0:
        raise DomainError(f"r_clut must be in (0, 1), got {geom.r_clut}")
    if geom.h_gnb == geom.h_device:
        raise DomainError("LOS probability undefined when h_gnb == h_device")
    exponent = (
        geom.d_2d * math.log(1.0 - geom.r_clut) * (geom.h_clut - geom.h_device)
        / (geom.d_clut * (geom.h_gnb - geom.h_device))
    )
    return min(1.0, max(0.0, math.exp(exponent)))


def thermal_noise_w(bandwidth_hz: float, noise_figure_db: float) -> float:
    """k*T*B scaled by the receiver noise figure."""
    return BOLTZMANN * NOISE_TEMPERATURE_K * bandwidth_hz * 10.0 ** (noise_figure_db / 10.0)


def sinr_db(
    link: LinkState,
    tx_power_w: float,
    interferers: Iterable[Tuple[LinkState, float]],
    bandwidth_hz: float,
    noise_figure_db: float,
    combining_gain_db: float = 0.0,
    fading_gain: float = 1.0,
) -> float:
    """
    SINR of one transmission in dB.

    Args:
        link: Wanted link
        tx_power_w: Wanted transmit power over the resource pool
        interferers: (link to the victim receiver, effective transmit power) for each
            co-scheduled transmission in another cell in the same TTI
        bandwidth_hz: Bandwidth of the resource pool
        noise_figure_db: Receiver noise figure
        combining_gain_db: Constant array combining gain on the wanted signal
        fading_gain: Fast-fading power gain on the wanted signal

    Returns:
        SINR in dB, or -inf when the wanted signal vanishes
    """
    if bandwidth_hz <= 0:
        raise DomainError(f"bandwidth must be positive, got {bandwidth_hz}")
    signal = tx_power_w * link.gain * fading_gain * 10.0 ** (combining_gain_db / 10.0)
    if not signal > 0:
        return NEG_INF_DB
    interference = sum(power * other.gain for other, power in interferers)
    denominator = thermal_noise_w(bandwidth_hz, noise_figure_db) + interference
    return 10.0 * math.log10(signal / denominator)


class ChannelModel:
    """
    Per-run cache of link states plus fast-fading draws.

    Owned by a single engine. LOS and shadowing are drawn exactly once per
    (device, quantized position, gNB); later queries return the cached state.
    """

    def __init__(self, radio: RadioParams, gnb_positions: Sequence[Sequence[float]],
                 rng: np.random.Generator, fading_rng: Optional[np.random.Generator] = None):
        self.radio = radio
        self.gnb_positions = [tuple(p) for p in gnb_positions]
        self.rng = rng
        self.fading_rng = fading_rng if fading_rng is not None else rng
        self._links: Dict[Tuple[Hashable, Tuple[int, int, int], int], LinkState] = {}

    def _cell_of(self, position: Sequence[float]) -> Tuple[int, int, int]:
        grid = self.radio.position_grid_m
        return (int(round(position[0] / grid)), int(round(position[1] / grid)), int(round(position[2] / grid)))

    def draw_shadowing(self, los: bool) -> float:
        std = self.radio.shadowing_std_los_db if los else self.radio.shadowing_std_nlos_db
        return float(self.rng.normal(0.0, std))

    def link(self, device_id: Hashable, position: Sequence[float], gnb: int) -> LinkState:
        """Link state for a device at a position towards gNB `gnb` (cached)."""
        key = (device_id, self._cell_of(position), gnb)
        state = self._links.get(key)
        if state is None:
            geom = LinkGeometry.between(position, self.gnb_positions[gnb], self.radio)
            los = bool(self.rng.random() < los_probability(geom))
            path_loss = path_loss_los(geom) if los else path_loss_nlos(geom)
            state = LinkState(los=los, shadowing_db=self.draw_shadowing(los), path_loss_db=path_loss)
            self._links[key] = state
            logger.debug("link %s gnb=%d los=%s pl=%.1f dB", device_id, gnb, los, path_loss)
        return state

    def fading_gain(self) -> float:
        """Unit-mean exponential power gain (Rayleigh envelope)."""
        if not self.radio.fast_fading:
            return 1.0
        return float(self.fading_rng.exponential(1.0))

    def strongest_gnb(self, device_id: Hashable, position: Sequence[float]) -> int:
        """Serving cell: strongest average received power, ties to the lowest index."""
        gains = [self.link(device_id, position, g).gain for g in range(len(self.gnb_positions))]
        return int(np.argmax(gains))

    @property
    def cached_links(self) -> int:
        return len(self._links)
