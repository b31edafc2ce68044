"""Control-coherent linear surrogates for two-phase reservoir flow.

Modules: ``core`` (domain types), ``simulator`` (IMPES ground truth),
``actuator`` (known well kinematics), ``ident`` (model fitting),
``surrogate`` (rollouts and gain diagnostics), ``metrics`` and
``harness`` (scenarios and experiment pipeline).
"""

__version__ = "0.1.0"
