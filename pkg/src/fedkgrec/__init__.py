"""Desk-scale harness for federated, KG-grounded financial asset
recommendation alignment: data → knowledge graphs → prompts → binary-labeled
corpora → simulated federated rounds → Hits@3 evaluation."""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
