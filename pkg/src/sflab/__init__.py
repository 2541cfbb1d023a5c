"""Universal d-semifaithful lossy coding: rate-distortion solver, success
probability oracles, first-hit codec and LZ extensions."""

__version__ = "0.1.0"
