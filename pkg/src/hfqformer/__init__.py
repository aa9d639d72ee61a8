"""Hierarchical query-based speech token compression with a numpy autodiff core."""

from .cost import ADAPTERS, LLMS, AdapterProfile, CostReport, LlmProfile
from .hfq import (
    CompressedTokens,
    Diagnostics,
    HfqConfig,
    HfqFormer,
    attention_mass_per_stage,
    compress_long_form,
    count_parameters,
    hfq_forward,
)
from .rng import Rng
from .tensor import Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"
