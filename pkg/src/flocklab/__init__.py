"""Multi-scale numerical laboratory for alignment dynamics with singular weights.

Subpackages by scale: ``kernels`` (communication weights), ``particles``
(ODE systems and event-aware integration), ``diagnostics`` (observables and
theorem checkers), ``meanfield`` (atomic measures and bounded-Lipschitz
distance), ``hydro_torus`` (pseudo-spectral alignment hydrodynamics on the
1-torus), ``hydro_line`` (implicit solvers for the viscous system and the
degenerate diffusion limit on a truncated line), and ``cli`` (experiment
orchestration).
"""

__version__ = "0.1.0"
