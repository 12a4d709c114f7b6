"""Skip-to-output deep networks and their loss landscape."""

__version__ = "0.1.0"
