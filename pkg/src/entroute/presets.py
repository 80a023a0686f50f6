"""Placement families used by the shipped experiment configs.

Rate-versus-distance sweeps place the endpoints symmetrically around
the centre of a grid; the grid either has fixed dimensions or is sized
per placement with a fixed margin of slack rows to push boundary
effects away from the endpoints. Two-flow geometries put the four
endpoints on the corners or sides of a square sub-lattice.
"""

from __future__ import annotations

DEFAULT_MARGIN = 8


def auto_grid(dx: int, dy: int, margin: int = DEFAULT_MARGIN) -> tuple[int, int]:
    """Grid dimensions for a displacement with `margin` slack rows."""
    if dx < 0 or dy < 0 or dx + dy < 1:
        raise ValueError("displacement must be non-negative and non-zero")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    return (dx + 2 * margin + 1, dy + 2 * margin + 1)


def centered_endpoints(
    width: int, height: int, dx: int, dy: int
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Endpoint coordinates for a displacement centred on the grid."""
    if dx < 0 or dy < 0:
        raise ValueError("displacement must be non-negative")
    if dx > width - 1 or dy > height - 1:
        raise ValueError(
            f"displacement ({dx},{dy}) does not fit a {width}x{height} grid")
    ax = (width - 1 - dx) // 2
    ay = (height - 1 - dy) // 2
    return (ax, ay), (ax + dx, ay + dy)


def diagonal_placements(start: int, stop: int, step: int = 2) -> list[tuple[int, int]]:
    """Displacements (n, n) for n in start..stop inclusive."""
    if start < 1 or stop < start or step < 1:
        raise ValueError("need 1 <= start <= stop and step >= 1")
    return [(n, n) for n in range(start, stop + 1, step)]


def axis_placements(start: int, stop: int, step: int = 2) -> list[tuple[int, int]]:
    """Displacements (n, 0) for n in start..stop inclusive."""
    if start < 1 or stop < start or step < 1:
        raise ValueError("need 1 <= start <= stop and step >= 1")
    return [(n, 0) for n in range(start, stop + 1, step)]


def square_flow_corners(
    side: int, crossing: bool
) -> tuple[tuple[tuple[int, int], tuple[int, int]],
           tuple[tuple[int, int], tuple[int, int]]]:
    """Two flows on the corners of a `side` x `side` square.

    Crossing pairs join opposite corners (the flows cross at the
    centre); non-crossing pairs join the bottom and top sides.
    Coordinates assume the square spans (0,0)..(side,side), i.e. a
    grid of side+1 x side+1 nodes.
    """
    if side < 2:
        raise ValueError("side must be >= 2")
    if crossing:
        return (((0, 0), (side, side)), ((0, side), (side, 0)))
    return (((0, 0), (side, 0)), ((0, side), (side, side)))
