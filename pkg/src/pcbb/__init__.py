"""Emergency-message dissemination for vehicular ad hoc networks."""

__version__ = "0.1.0"
