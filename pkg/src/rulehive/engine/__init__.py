"""An embedded forward-chaining production system.

The engine understands a small s-expression grammar (``deffacts`` and
``defrule`` constructs over ordered facts), fires rules with refraction and
a deterministic conflict-resolution order, and can snapshot/restore its
whole state.  ``EngineShell`` exposes the interactive command surface that
development consoles and the EVAL action use.
"""

from .core import Engine, Fact
from .parser import parse_program
from .shell import EngineShell, burn
from .sudoku import solve as solve_sudoku

__all__ = ["Engine", "Fact", "EngineShell", "parse_program", "burn", "solve_sudoku"]
