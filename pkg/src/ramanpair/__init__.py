"""Photon-collective-excitation pair states in spontaneous Raman scattering.

Modules: dispersion (Sellmeier media), fields (pump and lineshape),
jointamp (1D/3D joint-amplitude kernels), schmidt (purity), experiments
(sweeps and coincidence analysis), config and cli.
"""

__version__ = "0.1.0"
