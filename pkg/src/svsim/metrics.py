"""Quality and traffic metrics.

PSNR follows the usual 8-bit luma definition: 10*log10(255^2 / MSE), with
MSE averaged over every pixel of the frame. Zero MSE maps to a 99 dB cap
so reports stay finite. Traffic metrics (throughput series, mean delay,
loss percentage) operate on the per-packet delivery log.
"""

import math

import numpy as np

from .model import RateDistortionTable, PSNR_CAP_DB
from .streaming import FrameOutcome


class FrameBuffer:
    """Row-major 8-bit luma plane."""

    def __init__(self, width: int, height: int, samples):
        arr = np.asarray(samples, dtype=np.int64).reshape(height, width)
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("luma samples must lie in [0, 255]")
        self.width = width
        self.height = height
        self.samples = arr

    @staticmethod
    def flat(width: int, height: int, value: int) -> "FrameBuffer":
        return FrameBuffer(width, height, np.full(height * width, value))


def _check_dims(org: FrameBuffer, rec: FrameBuffer):
    if (org.width, org.height) != (rec.width, rec.height):
        raise ValueError(
            f"dimension mismatch: {org.width}x{org.height} vs {rec.width}x{rec.height}")


def mse(org: FrameBuffer, rec: FrameBuffer) -> float:
    _check_dims(org, rec)
    diff = org.samples - rec.samples
    return float(np.mean(diff * diff))


def psnr(mse_value: float, cap_db: float = PSNR_CAP_DB) -> float:
    if mse_value < 0:
        raise ValueError("MSE cannot be negative")
    if mse_value == 0:
        return cap_db
    return 10.0 * math.log10(255.0 ** 2 / mse_value)


def frame_diff_map(org: FrameBuffer, rec: FrameBuffer) -> np.ndarray:
    """Per-pixel squared-error grid; its mean equals mse(org, rec)."""
    _check_dims(org, rec)
    diff = org.samples - rec.samples
    return (diff * diff).astype(np.float64)


def ledger_psnr(outcome: FrameOutcome, rd_table: RateDistortionTable) -> float:
    if outcome.timing == "on-time" and outcome.quality_id is not None:
        return rd_table.psnr_for(outcome.quality_id)
    return rd_table.floor


def build_quality_ledger(outcomes, rd_table: RateDistortionTable) -> list[float]:
    return [ledger_psnr(o, rd_table) for o in outcomes]


def sequence_average_psnr(ledger) -> float:
    if not ledger:
        raise ValueError("ledger is empty")
    return sum(ledger) / len(ledger)


def throughput_series(delivery_log, bin_s: float, duration_s: float) -> list[float]:
    """Received bits/s per time bin.

    ``delivery_log`` rows are (size_bytes, recv_time_s) for delivered packets.
    """
    if bin_s <= 0:
        raise ValueError("bin width must be positive")
    n_bins = max(1, math.ceil(duration_s / bin_s))
    bits = [0.0] * n_bins
    for size, recv_s in delivery_log:
        idx = min(int(recv_s / bin_s), n_bins - 1)
        bits[idx] += size * 8
    return [b / bin_s for b in bits]


def mean_delay(delays_s) -> float:
    delays = list(delays_s)
    if not delays:
        raise ValueError("no delivered packets")
    return sum(delays) / len(delays)


def loss_percentage(sent: float, lost: float) -> float:
    """Packet loss as a percentage, reported to two decimals."""
    if sent <= 0:
        raise ValueError("sent count must be positive")
    if lost < 0 or lost > sent:
        raise ValueError("lost count must be within [0, sent]")
    return round(100.0 * lost / sent, 2)


def diff_map_to_text(grid) -> str:
    """Plain-text matrix dump of a squared-error grid, one row per line."""
    arr = np.asarray(grid)
    return "\n".join(" ".join(str(int(v)) for v in row) for row in arr)


def capacity_bits_in_window(initial_capacity: float, events, t1: float, t2: float) -> float:
    """Integral of a stepwise capacity over [t1, t2], in bits.

    ``events`` is the bandwidth schedule: ordered (time, new capacity).
    """
    if t2 <= t1:
        return 0.0
    points = [(0.0, initial_capacity)] + [(t, c) for t, c in events]
    total = 0.0
    for i, (start, cap) in enumerate(points):
        end = points[i + 1][0] if i + 1 < len(points) else float("inf")
        lo, hi = max(start, t1), min(end, t2)
        if hi > lo:
            total += cap * (hi - lo)
    return total
