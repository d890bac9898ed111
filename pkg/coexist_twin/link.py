"""
Link abstraction for Coexist Twin.

Replaces link-level BLER curves with a logistic curve around a Shannon-gap
threshold, and picks the modulation-and-coding rate from an 8-entry table.
"""

from dataclasses import dataclass
from typing import Tuple
import math

from .errors import DomainError

DATA_RES_PER_RB = 144  # 12 subcarriers x 14 symbols minus reference/control overhead
SHANNON_GAP_DB = 2.0
PER_SLOPE_PER_DB = 1.5
BLOCK_PENALTY_DB_PER_DECADE = 0.5
REFERENCE_BLOCK_BYTES = 100


@dataclass(frozen=True)
class McsEntry:
    """
    One row of the rate table.

    Attributes:
        index: Position in the table (0 = most robust)
        spectral_efficiency: Information bits per resource element
    """
    index: int
    spectral_efficiency: float

    @property
    def bits_per_rb(self) -> int:
        """Transport-block bits one RB carries in one TTI."""
        return int(self.spectral_efficiency * DATA_RES_PER_RB)

    @property
    def threshold_db(self) -> float:
        """SINR at which a reference-size block fails half of the time."""
        return 10.0 * math.log10(2.0 ** self.spectral_efficiency - 1.0) + SHANNON_GAP_DB


MCS_TABLE: Tuple[McsEntry, ...] = tuple(
    McsEntry(i, se)
    for i, se in enumerate((0.2344, 0.3770, 0.8770, 1.4766, 2.4063, 3.3223, 4.5234, 5.5547))
)


def per_threshold_db(mcs: McsEntry, block_bytes: int) -> float:
    """Midpoint of the error curve; larger blocks need slightly more SINR."""
    return mcs.threshold_db + BLOCK_PENALTY_DB_PER_DECADE * math.log10(block_bytes / REFERENCE_BLOCK_BYTES)


def per_from_sinr(sinr_db: float, block_bytes: int, mcs: McsEntry = MCS_TABLE[0]) -> float:
    """
    Transport-block error probability.

    Logistic in SINR around the rate's Shannon-gap threshold; monotone decreasing in
    SINR and increasing in block size.
    """
    if block_bytes <= 0:
        raise DomainError(f"block_bytes must be positive, got {block_bytes}")
    if sinr_db == float("inf"):
        return 0.0
    if sinr_db == float("-inf"):
        return 1.0
    x = PER_SLOPE_PER_DB * (sinr_db - per_threshold_db(mcs, block_bytes))
    # 1 / (1 + e^x) without overflow
    if x >= 0:
        z = math.exp(-x)
        return z / (1.0 + z)
    return 1.0 / (1.0 + math.exp(x))


def select_mcs(sinr_estimate_db: float, target_bler: float = 0.1) -> McsEntry:
    """Highest rate whose predicted error at the estimate meets the target; else the lowest."""
    chosen = MCS_TABLE[0]
    for entry in MCS_TABLE:
        if per_from_sinr(sinr_estimate_db, REFERENCE_BLOCK_BYTES, entry) <= target_bler:
            chosen = entry
    return chosen


def rbs_for_bytes(nbytes: int, mcs: McsEntry) -> int:
    """Smallest RB count whose transport block holds `nbytes`."""
    return max(1, math.ceil(nbytes * 8 / mcs.bits_per_rb))
