"""Graph quasi-framelets with generalized p-Laplacian smoothing.

Modules: :mod:`plapf.graph`, :mod:`plapf.filters`, :mod:`plapf.framelet`,
:mod:`plapf.plap`, :mod:`plapf.models` and the ``plapf`` experiment CLI in
:mod:`plapf.pipeline`.
"""

__version__ = "0.1.0"
