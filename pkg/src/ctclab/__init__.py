"""Desk-scale bidirectional LSTM-CTC phoneme recognizer built on numpy.

Everything here is float64 and deterministic: same seed, same bytes out.
"""

__version__ = "0.1.0"
