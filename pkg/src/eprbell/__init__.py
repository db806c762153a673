"""Monte Carlo simulation of the three-angle EPR experiment.

Quantum and local hidden-variable sources are scored against the Bell and
CHSH inequalities; :mod:`eprbell.challenge` runs contenders as isolated
stations under a referee that enforces locality by message ordering.
"""

__version__ = "0.1.0"
