"""Driver manoeuvre-intention decoding from EEG, with a synthetic session generator."""

__version__ = "0.1.0"
