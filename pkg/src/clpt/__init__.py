"""Control landscape phase transitions of one- and two-qubit state preparation."""
from .problems import (ControlProblem, PiecewiseControl, Protocol, build_single_qubit_problem,
                       build_two_qubit_problem)

__version__ = "0.1.0"
