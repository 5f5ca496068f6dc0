"""Equivariant mixture-property engine for electrolyte conductivity prediction.

Submodules are imported lazily; import what you need, e.g.
``from mixprop import autodiff`` or ``from mixprop.model import MixtureModel``.
"""

__version__ = "0.1.0"
