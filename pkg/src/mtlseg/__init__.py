"""Multi-task building footprint segmentation on a from-scratch numpy autodiff core.

Modules: :mod:`mtlseg.tensor` (tensors, ops, backward, SGD),
:mod:`mtlseg.nn` (three-headed encoder/decoder, checkpoints),
:mod:`mtlseg.losses` (task losses, fixed and uncertainty weighting),
:mod:`mtlseg.data` (synthetic scenes, augmentation, dataset I/O),
:mod:`mtlseg.evaluation` (metrics, morphology, fusion) and
:mod:`mtlseg.pipeline` / :mod:`mtlseg.cli` (training and experiments).
"""

__version__ = "0.1.0"
