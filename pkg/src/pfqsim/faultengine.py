"""Electromagnetic pulse model: power response curve, arming and replay/skip prediction.

A pulse hits the first prefetch-queue refill that starts at or after
``trigger_cycle + floor(delay_ns * f_cpu)``. With probability given by the
response curve at the pulse power, that refill is suppressed: the buffer
keeps the previous line's bytes while the pc walks through the new line, so
the previous line is replayed in place of the current one.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .isa.assembler import LINE_BYTES, Program
from .memhier import CacheConfig, ns_to_cycles
from .simulator import RunResult, Simulator

__all__ = [
    "DEFAULT_PEAK_PROBABILITY",
    "DEFAULT_WIDTH_DBM",
    "DelayBeyondRun",
    "FaultOutcomePrediction",
    "FaultPulse",
    "PEAK_ALL_ON_DBM",
    "PEAK_OTHER_DBM",
    "POWER_RANGE_DBM",
    "PredictionUnavailable",
    "ResponseCurve",
    "arm",
    "arm_cycle",
    "default_curve",
    "load_curve",
    "predict",
    "roll_fault",
    "run_armed",
    "save_curve",
    "suppress_refill",
]

PEAK_ALL_ON_DBM = -1.7
PEAK_OTHER_DBM = 4.5
DEFAULT_PEAK_PROBABILITY = 0.96
DEFAULT_WIDTH_DBM = 3.0
POWER_RANGE_DBM = (-5.0, 9.0)

SHAPES = ("triangular", "gaussian", "flat")


class DelayBeyondRun(Exception):
    """No refill happens at or after the armed time."""

    def __init__(self, arm_cycle: int):
        self.arm_cycle = arm_cycle
        super().__init__(f"no prefetch refill at or after cycle {arm_cycle}")


class PredictionUnavailable(Exception):
    pass


@dataclass(frozen=True)
class FaultPulse:
    delay_ns: int
    power_dbm: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.delay_ns < 0:
            raise ValueError("delay_ns must be non-negative")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in 64 bits")

    @property
    def delay_cycles(self) -> int:
        return ns_to_cycles(self.delay_ns)


@dataclass(frozen=True)
class ResponseCurve:
    """Probability of suppressing the targeted refill as a function of power.

    Shapes: ``triangular`` falls linearly to zero at ``peak ± width``;
    ``gaussian`` uses `width` as the standard deviation; ``flat`` is
    ``peak_probability`` within ``± width`` and zero outside.
    """

    peak_power_dbm: float
    peak_probability: float = DEFAULT_PEAK_PROBABILITY
    width_dbm: float = DEFAULT_WIDTH_DBM
    shape: str = "triangular"

    def __post_init__(self):
        if not 0.0 <= self.peak_probability <= 1.0:
            raise ValueError("peak_probability must lie in [0, 1]")
        if not self.width_dbm > 0:
            raise ValueError("width_dbm must be positive")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")

    def __call__(self, power_dbm: float) -> float:
        distance = abs(power_dbm - self.peak_power_dbm)
        if self.shape == "triangular":
            scale = max(0.0, 1.0 - distance / self.width_dbm)
        elif self.shape == "gaussian":
            scale = math.exp(-0.5 * (distance / self.width_dbm) ** 2)
        else:
            scale = 1.0 if distance <= self.width_dbm else 0.0
        return self.peak_probability * scale

    def forced(self) -> "ResponseCurve":
        """Deterministic variant: probability 1 at every power."""
        return replace(self, peak_probability=1.0, shape="flat", width_dbm=math.inf)


def default_curve(config: CacheConfig, *, peak_probability: float = DEFAULT_PEAK_PROBABILITY,
                  width_dbm: float = DEFAULT_WIDTH_DBM) -> ResponseCurve:
    """Caches both on peak at lower power than any other configuration."""
    peak = PEAK_ALL_ON_DBM if config.caches_on else PEAK_OTHER_DBM
    return ResponseCurve(peak, peak_probability, width_dbm)


def roll_fault(pulse: FaultPulse, curve: ResponseCurve) -> bool:
    """Bernoulli draw at the curve's probability, reproducible from the pulse seed."""
    p = curve(pulse.power_dbm)
    if p <= 0.0:
        return False
    if p >= 1.0:
        return True
    return bool(np.random.default_rng(pulse.rng_seed).random() < p)


def arm_cycle(pulse: FaultPulse, trigger_cycle: int = 0) -> int:
    return trigger_cycle + pulse.delay_cycles


def arm(simulator: Simulator, pulse: FaultPulse, curve: ResponseCurve | None = None, *,
        trigger_cycle: int = 0, force: bool = False) -> Simulator:
    """Simulator armed at the pulse time; the fault fires if forced or the roll succeeds."""
    if curve is None:
        curve = default_curve(simulator.config)
    fire = True if force else roll_fault(pulse, curve)
    return simulator.arm(arm_cycle(pulse, trigger_cycle), fire)


def run_armed(simulator: Simulator, state=None, **kwargs) -> RunResult:
    """Run an armed simulator; raises DelayBeyondRun if the pulse never meets a refill."""
    if not simulator.armed:
        raise ValueError("simulator is not armed")
    result = simulator.run(state, **kwargs)
    if result.fault_target is None and not result.crashed:
        raise DelayBeyondRun(simulator.arm_cycle)
    return result


def suppress_refill(path, line_base: int) -> None:
    """Apply a suppressed refill to a FetchPath: tag moves to `line_base`, payload stays."""
    path.pfq.retag(line_base)


# -- analytical model ----------------------------------------------------------

@dataclass(frozen=True)
class FaultOutcomePrediction:
    replayed: tuple[int, ...]
    skipped: tuple[int, ...]
    resume_at: int | None

    def reorder(self, ordinals: list[int]) -> list[int]:
        """Apply the replay/skip window to a straight-line ordinal sequence."""
        if not self.skipped:
            return list(ordinals)
        start = ordinals.index(self.skipped[0])
        end = start + len(self.skipped)
        return ordinals[:start] + list(self.replayed) + ordinals[end:]


def _line_instructions(program: Program, line: int) -> list[tuple[int, int]]:
    """(ordinal, address) of instructions starting in the line at `line`."""
    out = []
    for addr in program.instructions:
        if line <= addr < line + LINE_BYTES:
            out.append((program.ordinal_of(addr), addr))
    return out


def predict(program: Program, fault_target_line: int) -> FaultOutcomePrediction:
    """Replay/skip window for a suppressed refill of the line at `fault_target_line`.

    Valid for straight-line code where the target line and the line before it
    hold same-width, non-branching instructions fully contained in each line.
    """
    line = fault_target_line
    if line % LINE_BYTES:
        raise ValueError(f"line address {line:#x} is not line aligned")
    prev = line - LINE_BYTES
    if prev < program.base_address:
        raise PredictionUnavailable("the first line has no predecessor to replay")
    replay = _line_instructions(program, prev)
    skip = _line_instructions(program, line)
    if not replay or not skip:
        raise PredictionUnavailable("replay or skip window holds no instructions")
    widths = set()
    for _, addr in replay + skip:
        instr = program.instruction_at(addr)
        if instr.is_branch:
            raise PredictionUnavailable(f"branch at {addr:#x} inside the window")
        if (addr % LINE_BYTES) + instr.size > LINE_BYTES:
            raise PredictionUnavailable(f"instruction at {addr:#x} straddles a line boundary")
        widths.add(instr.size)
    if len(widths) != 1:
        raise PredictionUnavailable("window mixes 16- and 32-bit instructions")
    (size,) = widths
    for window in (replay, skip):
        offsets = [a - (a & ~(LINE_BYTES - 1)) for _, a in window]
        if offsets != list(range(0, LINE_BYTES, size)):
            raise PredictionUnavailable("window does not fill its line")
    after = _line_instructions(program, line + LINE_BYTES)
    return FaultOutcomePrediction(
        tuple(o for o, _ in replay),
        tuple(o for o, _ in skip),
        after[0][0] if after else None,
    )


# -- curve files ---------------------------------------------------------------

def save_curve(curve: ResponseCurve, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(curve), indent=2) + "\n")


def curve_from_mapping(data: dict) -> ResponseCurve:
    allowed = {"peak_power_dbm", "peak_probability", "width_dbm", "shape"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown curve keys: {', '.join(sorted(unknown))}")
    if "peak_power_dbm" not in data:
        raise ValueError("curve needs peak_power_dbm")
    return ResponseCurve(**data)


def load_curve(path: str | Path) -> ResponseCurve:
    return curve_from_mapping(json.loads(Path(path).read_text()))
