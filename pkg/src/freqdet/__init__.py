"""freqdet: desk-scale AI-generated-image detector built on a hand-rolled
autodiff engine, with dual frequency-domain branches and windowed attention.

Heavy imports live in the submodules; import what you need directly, e.g.
``from freqdet.tensor import Tensor`` or ``from freqdet.model import ModelConfig``.
"""

__version__ = "0.1.0"
