"""Classical plasma simulations around Rydberg excitons: lifetimes, screening, transfer."""

__version__ = "0.1.0"
