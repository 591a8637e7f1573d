"""Normal forms and unimodular invariants of near-standard totally real tori."""

__version__ = "0.1.0"
