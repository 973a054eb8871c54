"""Laser scan strategies: serpentine tracks, four-island splits, path files.

A scan path is an ordered list of straight segments grouped by layer; the
beam moves along each segment at its speed, jumps instantaneously between
segments, and dwells between layers.  The serpentine generator emits the
connector moves at the hatch turnarounds too, so the track is continuous as
in a real exposure.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScanSegment",
    "ScanPath",
    "serpentine",
    "four_islands",
    "parse_path_file",
    "serialize_path",
    "PathError",
]


class PathError(ValueError):
    """Malformed or inconsistent scan path input."""


@dataclass(frozen=True)
class ScanSegment:
    """One straight exposure move: start/end in metres, speed m/s, power W."""

    x0: float
    y0: float
    x1: float
    y1: float
    speed: float
    power: float
    layer: int = 0

    def __post_init__(self):
        if self.speed <= 0:
            raise PathError(f"segment speed must be positive, got {self.speed}")
        if self.power < 0:
            raise PathError(f"segment power must be nonnegative, got {self.power}")
        if self.x0 == self.x1 and self.y0 == self.y1:
            raise PathError("degenerate segment: start equals end")

    @property
    def length(self):
        return float(np.hypot(self.x1 - self.x0, self.y1 - self.y0))

    @property
    def duration(self):
        return self.length / self.speed


@dataclass
class ScanPath:
    """Segments grouped by layer, plus the interlayer dwell time."""

    segments: list = field(default_factory=list)
    dwell: float = 1.0  # s of cool-down after each layer

    def __post_init__(self):
        layers = [s.layer for s in self.segments]
        if any(b < a for a, b in zip(layers, layers[1:])):
            raise PathError("segment layers must be nondecreasing")
        if self.dwell < 0:
            raise PathError("dwell must be nonnegative")

    def layers(self):
        return sorted({s.layer for s in self.segments})

    def layer_segments(self, layer):
        return [s for s in self.segments if s.layer == layer]

    def active_time(self, layer):
        """Total beam-on time of one layer: sum of length/speed."""
        return sum(s.duration for s in self.layer_segments(layer))


def serpentine(extent, hatch, speed, power, layer=0):
    """Continuous serpentine over a rectangle: passes in y, hatching in x.

    extent is (x_min, y_min, x_max, y_max) in metres.  Pass count is
    floor(width/hatch) + 1; consecutive passes run in opposite y directions
    and are joined by hatch-length connector moves, so total track length is
    passes*height + (passes-1)*hatch.
    """
    x_min, y_min, x_max, y_max = (float(v) for v in extent)
    if hatch <= 0:
        raise PathError("hatch must be positive")
    if x_max <= x_min or y_max <= y_min:
        raise PathError("extent must be nondegenerate")
    width = x_max - x_min
    passes = int(np.floor(width / hatch + 1e-12)) + 1
    segs = []
    for p in range(passes):
        x = x_min + p * hatch
        if x > x_max + 1e-15:
            break
        if p % 2 == 0:
            ya, yb = y_min, y_max
        else:
            ya, yb = y_max, y_min
        segs.append(ScanSegment(x, ya, x, yb, speed, power, layer))
        if p + 1 < passes:
            segs.append(ScanSegment(x, yb, x + hatch, yb, speed, power, layer))
    return segs


def four_islands(extent, hatch, speed, power, layer=0):
    """Quarter the rectangle and run a serpentine per island.

    Island order is (-x,-y), (+x,-y), (-x,+y), (+x,+y) with no inter-island
    delay; no segment crosses an island boundary.
    """
    x_min, y_min, x_max, y_max = (float(v) for v in extent)
    xc = 0.5 * (x_min + x_max)
    yc = 0.5 * (y_min + y_max)
    quads = [
        (x_min, y_min, xc, yc),
        (xc, y_min, x_max, yc),
        (x_min, yc, xc, y_max),
        (xc, yc, x_max, y_max),
    ]
    segs = []
    for q in quads:
        segs.extend(serpentine(q, hatch, speed, power, layer))
    return segs


def parse_path_file(text):
    """Parse the line-based scan path format.

    Grammar (SI units, '#' comments):
        layer <n>
        segment <x0> <y0> <x1> <y1> <speed> <power>
        dwell <seconds>
    Segments belong to the most recent `layer` line (default 0); layer
    numbers must be nondecreasing.  Raises PathError with the line number on
    malformed input.
    """
    segments = []
    dwell = 1.0
    layer = 0
    last_layer = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0].lower()
        try:
            if tag == "layer":
                if len(parts) != 2:
                    raise PathError("expected: layer <n>")
                layer = int(parts[1])
                if last_layer is not None and layer < last_layer:
                    raise PathError(f"layer {layer} decreases below {last_layer}")
                last_layer = layer
            elif tag == "segment":
                if len(parts) != 7:
                    raise PathError("expected: segment <x0> <y0> <x1> <y1> <speed> <power>")
                x0, y0, x1, y1, speed, power = (float(v) for v in parts[1:])
                segments.append(ScanSegment(x0, y0, x1, y1, speed, power, layer))
                last_layer = layer
            elif tag == "dwell":
                if len(parts) != 2:
                    raise PathError("expected: dwell <seconds>")
                dwell = float(parts[1])
                if dwell < 0:
                    raise PathError("dwell must be nonnegative")
            else:
                raise PathError(f"unknown directive {tag!r}")
        except PathError as e:
            raise PathError(f"line {ln}: {e}") from None
        except ValueError as e:
            raise PathError(f"line {ln}: {e}") from None
    return ScanPath(segments, dwell)


def serialize_path(path):
    """Inverse of parse_path_file; round-trips to an identical ScanPath."""
    lines = [f"dwell {path.dwell!r}"]
    current = None
    for s in path.segments:
        if s.layer != current:
            lines.append(f"layer {s.layer}")
            current = s.layer
        lines.append(f"segment {s.x0!r} {s.y0!r} {s.x1!r} {s.y1!r} {s.speed!r} {s.power!r}")
    return "\n".join(lines) + "\n"


def beam_timeline(segments):
    """Cumulative (t_start, t_end) for each segment, jumps taking zero time."""
    t = 0.0
    spans = []
    for s in segments:
        spans.append((t, t + s.duration))
        t += s.duration
    return spans


def beam_position(segments, t):
    """Beam (x, y, power, on) at time t measured from the layer's first segment."""
    for s, (t0, t1) in zip(segments, beam_timeline(segments)):
        if t0 <= t <= t1:
            f = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            return (s.x0 + f * (s.x1 - s.x0), s.y0 + f * (s.y1 - s.y0), s.power, True)
    return (0.0, 0.0, 0.0, False)
