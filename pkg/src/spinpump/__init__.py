"""Simulation of dissipative pumping of a spin chain into an entangled
Neel superposition, mediated by a cooled oscillator."""

__version__ = "0.1.0"
