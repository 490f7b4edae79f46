"""Sudoku solving used as a deterministic CPU-bound engine workload.

Grids are 81-character strings, row-major, digits ``1``-``9`` for givens
and ``.`` (or ``0``) for blanks.  The solver does constraint propagation
(single-candidate and single-position) with minimum-remaining-values
backtracking; digits are always tried ascending, so the answer for a given
grid is deterministic.
"""

from __future__ import annotations

from ..errors import EngineParseError, NoSolutionError

_DIGITS = frozenset(range(1, 10))

# Precomputed geometry: for every cell, the 20 peers it must differ from.
_UNITS: list[list[tuple[int, ...]]] = [[] for _ in range(81)]
_PEERS: list[frozenset[int]] = []


def _build_geometry() -> None:
    unit_list: list[tuple[int, ...]] = []
    for r in range(9):
        unit_list.append(tuple(9 * r + c for c in range(9)))
    for c in range(9):
        unit_list.append(tuple(9 * r + c for r in range(9)))
    for br in (0, 3, 6):
        for bc in (0, 3, 6):
            unit_list.append(tuple(9 * (br + dr) + (bc + dc)
                                   for dr in range(3) for dc in range(3)))
    for cell in range(81):
        for unit in unit_list:
            if cell in unit:
                _UNITS[cell].append(unit)
    for cell in range(81):
        peers = {c for unit in _UNITS[cell] for c in unit} - {cell}
        _PEERS.append(frozenset(peers))


_build_geometry()


def parse_grid(text: str) -> list[int]:
    """Return 81 ints (0 for blank); malformed input fails with PARSE_ERROR."""

    cells = [c for c in text if not c.isspace()]
    if len(cells) != 81:
        raise EngineParseError(f"grid must have 81 cells, got {len(cells)}")
    out = []
    for i, c in enumerate(cells):
        if c in ".0":
            out.append(0)
        elif c.isdigit():
            out.append(int(c))
        else:
            raise EngineParseError(f"cell {i} is {c!r}; expected 1-9 or '.'")
    return out


def _assign(cand: list[set[int]], cell: int, digit: int) -> bool:
    """Fix ``cell`` to ``digit``, propagating eliminations; False on wipeout."""

    cand[cell] = {digit}
    queue = [(cell, digit)]
    while queue:
        cur, d = queue.pop()
        for peer in _PEERS[cur]:
            if d in cand[peer]:
                cand[peer] = cand[peer] - {d}
                if not cand[peer]:
                    return False
                if len(cand[peer]) == 1:
                    queue.append((peer, next(iter(cand[peer]))))
    return True


def _search(cand: list[set[int]]) -> list[set[int]] | None:
    if all(len(s) == 1 for s in cand):
        return cand
    # minimum remaining values heuristic, first such cell in grid order
    size, cell = min((len(cand[i]), i) for i in range(81) if len(cand[i]) > 1)
    for digit in sorted(cand[cell]):
        attempt = [set(s) for s in cand]
        if _assign(attempt, cell, digit):
            solved = _search(attempt)
            if solved is not None:
                return solved
    return None


def solve(text: str) -> str:
    """Solve a grid; a grid with no completion fails with NO_SOLUTION.

    A fully solved grid is a fixed point: it comes back unchanged.
    """

    grid = parse_grid(text)
    cand: list[set[int]] = [set(_DIGITS) for _ in range(81)]
    for cell, digit in enumerate(grid):
        if digit:
            if digit not in cand[cell]:
                raise NoSolutionError(f"given at cell {cell} contradicts its peers")
            if not _assign(cand, cell, digit):
                raise NoSolutionError(f"given at cell {cell} contradicts its peers")
    solved = _search(cand)
    if solved is None:
        raise NoSolutionError("grid has no completion")
    return "".join(str(next(iter(s))) for s in solved)
