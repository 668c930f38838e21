"""Structure-preserving learning and verification for stochastic
port-Hamiltonian systems: benchmark simulation, neural coefficient
learning with skew/PSD constraints built in, and Monte-Carlo checks of
the passivity and stability guarantees."""

__version__ = "0.1.0"
