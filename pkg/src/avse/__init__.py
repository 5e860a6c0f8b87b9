"""Audio-visual speech enhancement: DSP front-end, differentiable temporal
convolution network, curriculum training on synthesized mixtures, and
source-separation metrics."""

__version__ = "0.1.0"
