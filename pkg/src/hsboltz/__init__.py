"""Hard-sphere Boltzmann perturbation solver on a periodic box with Besov diagnostics."""

__version__ = "0.1.0"
