"""Discrete-event VANET simulator: data dissemination protocols, hovering
data clouds at traffic jam boundaries, and a jam-type classifier."""

__version__ = "0.1.0"
