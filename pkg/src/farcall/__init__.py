"""farcall: desk-scale runtime offload for an affine mini-IR.

A client interprets programs, scores their functions by estimated
arithmetic volume, ships hot functions to a server over TCP, and then
decides per call whether to run locally or remotely. The server proves
loops dependence-free, compiles them, and executes remote calls across
a worker pool.
"""

__version__ = "0.1.0"
