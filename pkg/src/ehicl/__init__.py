"""Exemplar-conditioned refinement of parametric hand estimates.

Subpackages:
  tensor     float64 autodiff engine (tape-based reverse mode)
  optim      AdamW optimizer
  kernels    numba/numpy hot kernels for the data-level geometry path
  hand       procedural rig + forward model
  metrics    alignment and position-error evaluation suite
  retrieval  involvement classification, description embedding, template lookup
  icl        tokenizer, masked refinement transformer, losses
  harness    synthetic corpus, training/eval loops, checkpoints, CLI
"""

__version__ = "0.1.0"
