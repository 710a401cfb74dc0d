"""Dynamic multi-Gaussian triangle-soup scene engine.

Fit time-deformable flat-Gaussian scenes from posed timed images, render
them with a CPU splatter, and edit the result through estimated meshes,
direct soup transforms, or space warps.
"""

__version__ = "0.1.0"
