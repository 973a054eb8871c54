import numpy as np
import pytest

from ti64micro.scanpath import (
    PathError,
    ScanPath,
    ScanSegment,
    beam_position,
    beam_timeline,
    four_islands,
    parse_path_file,
    serialize_path,
    serpentine,
)

MM = 1e-3


def passes_of(segs):
    """Segments moving in y (the exposure passes, not the hatch connectors)."""
    return [s for s in segs if s.x0 == s.x1]


def test_serpentine_pass_count_and_direction():
    segs = serpentine((0.0, 0.0, 1.0 * MM, 1.0 * MM), 0.08 * MM, 0.96, 180.0)
    p = passes_of(segs)
    assert len(p) == 13  # floor(1/0.08) + 1
    dirs = [np.sign(s.y1 - s.y0) for s in p]
    assert all(a == -b for a, b in zip(dirs, dirs[1:]))


def test_serpentine_total_track_length():
    segs = serpentine((0.0, 0.0, 1.0 * MM, 1.0 * MM), 0.08 * MM, 0.96, 180.0)
    total = sum(s.length for s in segs)
    n = 13
    expected = n * 1.0 * MM + (n - 1) * 0.08 * MM
    assert total == pytest.approx(expected, rel=1e-12)


def test_serpentine_wide_hatch_single_pass():
    segs = serpentine((0.0, 0.0, 1.0 * MM, 1.0 * MM), 2.0 * MM, 0.96, 180.0)
    assert len(passes_of(segs)) == 1
    assert len(segs) == 1


def test_serpentine_validation():
    with pytest.raises(PathError):
        serpentine((0.0, 0.0, 1.0, 1.0), -0.1, 1.0, 180.0)
    with pytest.raises(PathError):
        serpentine((0.0, 0.0, 0.0, 1.0), 0.1, 1.0, 180.0)


def test_four_islands_quartering():
    ext = (0.0, 0.0, 1.0 * MM, 1.0 * MM)
    segs = four_islands(ext, 0.08 * MM, 0.96, 180.0)
    xc, yc = 0.5 * MM, 0.5 * MM
    # no segment crosses an island boundary
    for s in segs:
        assert (s.x0 - xc) * (s.x1 - xc) >= -1e-18
        assert (s.y0 - yc) * (s.y1 - yc) >= -1e-18
    # each quadrant is a serpentine of the half extent
    one = serpentine((0.0, 0.0, xc, yc), 0.08 * MM, 0.96, 180.0)
    assert len(segs) == 4 * len(one)
    assert sum(s.length for s in segs) == pytest.approx(4 * sum(s.length for s in one))


def test_segment_validation():
    with pytest.raises(PathError):
        ScanSegment(0, 0, 1, 1, 0.0, 100.0)
    with pytest.raises(PathError):
        ScanSegment(0, 0, 1, 1, 1.0, -5.0)
    with pytest.raises(PathError):
        ScanSegment(0, 0, 0, 0, 1.0, 100.0)


def test_parse_minimal_file():
    path = parse_path_file("layer 0\nsegment 0 0 1e-3 0 0.96 180\n")
    assert len(path.segments) == 1
    assert path.segments[0].speed == 0.96
    assert path.dwell == 1.0


def test_parse_dwell_and_comments():
    text = "# scan program\ndwell 1.0\nlayer 0\nsegment 0 0 1e-3 0 0.96 180 # track\n"
    path = parse_path_file(text)
    assert path.dwell == 1.0


def test_parse_errors_carry_line_numbers():
    with pytest.raises(PathError, match="line 2"):
        parse_path_file("layer 0\nsegment 0 0 1 1\n")
    with pytest.raises(PathError, match="line 1"):
        parse_path_file("segment 0 0 1 1 0 100\n")  # zero speed
    with pytest.raises(PathError, match="line 3"):
        parse_path_file("layer 2\nsegment 0 0 1 1 1 0\nlayer 1\n")
    with pytest.raises(PathError, match="line 1"):
        parse_path_file("orbit 1 2 3\n")


def test_round_trip():
    segs = serpentine((0.0, 0.0, 1.0 * MM, 1.0 * MM), 0.08 * MM, 0.96, 180.0, layer=0)
    segs += serpentine((0.0, 0.0, 1.0 * MM, 1.0 * MM), 0.08 * MM, 0.96, 180.0, layer=1)
    path = ScanPath(segs, dwell=0.5)
    again = parse_path_file(serialize_path(path))
    assert again.dwell == path.dwell
    assert len(again.segments) == len(path.segments)
    for a, b in zip(again.segments, path.segments):
        assert a == b


def test_beam_position_piecewise_linear():
    segs = [ScanSegment(0, 0, 1e-3, 0, 1.0, 180.0),
            ScanSegment(1e-3, 0, 1e-3, 2e-3, 1.0, 180.0)]
    spans = beam_timeline(segs)
    assert spans[0] == (0.0, pytest.approx(1e-3))
    assert spans[1][1] == pytest.approx(3e-3)
    x, y, p, on = beam_position(segs, 0.5e-3)
    assert (x, y, on) == (pytest.approx(0.5e-3), 0.0, True)
    x, y, p, on = beam_position(segs, 2e-3)
    assert (x, y) == (pytest.approx(1e-3), pytest.approx(1e-3))
    _, _, _, on = beam_position(segs, 5e-3)
    assert not on


def test_active_time_per_layer():
    segs = serpentine((0.0, 0.0, 1.0 * MM, 1.0 * MM), 0.08 * MM, 0.96, 180.0)
    path = ScanPath(segs)
    total_len = sum(s.length for s in segs)
    assert path.active_time(0) == pytest.approx(total_len / 0.96)


def test_layer_monotonicity_enforced():
    s0 = ScanSegment(0, 0, 1, 1, 1.0, 10.0, layer=1)
    s1 = ScanSegment(0, 0, 1, 1, 1.0, 10.0, layer=0)
    with pytest.raises(PathError):
        ScanPath([s0, s1])
