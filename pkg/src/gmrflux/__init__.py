"""Space-time GMRF flux inversion from transport-integrated concentration data."""

__version__ = "0.1.0"
