"""Local micro-benchmarks that fit a CalibrationProfile."""

import errno
import logging
import os
import socket
import tempfile
import threading
import time
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tenacity import (
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from thetamr.exceptions import CalibrationError, TimerResolutionError
from thetamr.types import MIB, CalibrationProfile

logger = logging.getLogger(__name__)

SPILL_SIZES = [1 << 16, 1 << 18, 1 << 20, 1 << 22, 1 << 24, 1 << 26]
QUICK_SPILL_SIZES = [1 << 16, 1 << 20, 1 << 24]
CONNECTION_COUNTS = [1, 2, 4, 8, 16, 32]
QUICK_CONNECTION_COUNTS = [1, 4, 16]
TRANSFER_BYTES = 8 * MIB
QUICK_TRANSFER_BYTES = 1 * MIB

_retry_timer = retry(
    retry=retry_if_exception_type(TimerResolutionError),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.01, min=0, max=0.1),
    reraise=True,
)


def monotone(knots: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """Force a table to be non-decreasing with a running maximum."""
    ys = np.maximum.accumulate(np.array([y for _, y in knots], dtype=np.float64))
    return [(float(x), float(y)) for (x, _), y in zip(knots, ys)]


class Calibrator:
    """Measures I/O, copy and connection costs on the local machine."""

    def __init__(
        self,
        scratch_dir: Optional[Union[str, Path]] = None,
        quick: bool = False,
        workers: int = 16,
        clock: Callable[[], float] = time.perf_counter,
    ):
        self.scratch_dir = Path(scratch_dir or tempfile.gettempdir())
        self.quick = quick
        self.workers = workers
        self.clock = clock
        self.resolution = time.get_clock_info("perf_counter").resolution
        self.sizes = QUICK_SPILL_SIZES if quick else SPILL_SIZES
        self._payload = np.random.default_rng(0).bytes(max(self.sizes))

    def _elapsed(self, start: float, what: str) -> float:
        elapsed = self.clock() - start
        if elapsed <= self.resolution * 10:
            raise TimerResolutionError(
                f"{what} finished in {elapsed:.3g}s, below the timer resolution"
            )
        return elapsed

    @_retry_timer
    def measure_write(self, size: int) -> Tuple[float, float]:
        """(write, read) seconds per byte for one spill file of `size` bytes."""
        name: Optional[str] = None
        try:
            spill = tempfile.NamedTemporaryFile(dir=self.scratch_dir, delete=False)
            with spill as handle:
                name = handle.name
                start = self.clock()
                handle.write(self._payload[:size])
                handle.flush()
                os.fsync(handle.fileno())
                write = self._elapsed(start, f"write of {size} bytes")
            start = self.clock()
            with open(name, "rb") as reader:
                while reader.read(1 << 20):
                    pass
            read = self._elapsed(start, f"read of {size} bytes")
        except OSError as e:
            if e.errno == errno.ENOSPC:
                raise CalibrationError(f"insufficient disk space in {self.scratch_dir}")
            raise CalibrationError(f"spill benchmark failed: {e}")
        finally:
            if name is not None:
                Path(name).unlink(missing_ok=True)
        return write / size, read / size

    @_retry_timer
    def measure_transfer(self, size: int) -> float:
        """Seconds per byte sent over a loopback TCP connection."""
        try:
            with socket.create_server(("127.0.0.1", 0)) as server:
                port = server.getsockname()[1]
                received: List[int] = []

                def sink() -> None:
                    conn, _ = server.accept()
                    with conn:
                        total = 0
                        while total < size:
                            chunk = conn.recv(1 << 20)
                            if not chunk:
                                break
                            total += len(chunk)
                        received.append(total)

                thread = threading.Thread(target=sink)
                thread.start()
                payload = self._payload[:size]
                start = self.clock()
                with socket.create_connection(("127.0.0.1", port)) as client:
                    client.sendall(payload)
                thread.join()
                elapsed = self._elapsed(start, f"transfer of {size} bytes")
        except OSError as e:
            raise CalibrationError(f"loopback transfer failed: {e}")
        return elapsed / size

    @_retry_timer
    def measure_fanout(self, connections: int) -> float:
        """Seconds per connection when one sender serves `connections` receivers."""
        try:
            servers = [
                socket.create_server(("127.0.0.1", 0)) for _ in range(connections)
            ]
            try:
                start = self.clock()
                for server in servers:
                    with socket.create_connection(server.getsockname()[:2]) as client:
                        client.sendall(b"x" * 64)
                    conn, _ = server.accept()
                    conn.recv(64)
                    conn.close()
                elapsed = self._elapsed(start, f"fan-out to {connections} connections")
            finally:
                for server in servers:
                    server.close()
        except OSError as e:
            raise CalibrationError(f"loopback fan-out failed: {e}")
        return elapsed / connections

    def run(self) -> CalibrationProfile:
        """Run every benchmark and fit the profile."""
        sizes = self.sizes
        counts = QUICK_CONNECTION_COUNTS if self.quick else CONNECTION_COUNTS
        transfer = QUICK_TRANSFER_BYTES if self.quick else TRANSFER_BYTES

        p_knots = []
        read_rate = 0.0
        for size in sizes:
            write_rate, read_rate = self.measure_write(size)
            logger.info("spill %d bytes: %.3g s/byte", size, write_rate)
            p_knots.append((float(size), write_rate))
        c2 = self.measure_transfer(transfer)
        q_knots = [(float(n), self.measure_fanout(n)) for n in counts]

        return CalibrationProfile(
            c1=read_rate,
            c2=c2,
            p_table=monotone(p_knots),
            q_table=monotone(q_knots),
            block_size=64 * MIB,
            map_slots=self.workers,
            source="calibrated-quick" if self.quick else "calibrated",
            low_confidence=self.quick,
        )


def calibrate(
    scratch_dir: Optional[Union[str, Path]] = None,
    quick: bool = False,
    workers: int = 16,
) -> CalibrationProfile:
    return Calibrator(scratch_dir, quick=quick, workers=workers).run()
