"""Teacher-student compression and knowledge transfer for small convolutional networks.

Subpackages and modules:

* :mod:`edgekt.gradcore` -- reverse-mode autograd over numpy arrays
* :mod:`edgekt.archspec` -- network specs, models and checkpoints
* :mod:`edgekt.compressor` -- activation-sparsity pruning and depth reduction
* :mod:`edgekt.ktengine` -- block-mapped knowledge transfer
* :mod:`edgekt.datapipe` -- datasets, splits and augmentation
* :mod:`edgekt.harness` -- command line and experiment recipes
"""

__version__ = "0.1.0"
