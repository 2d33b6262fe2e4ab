"""condforge: a corpus-to-training-triplet factory.

Filters images geometrically and aesthetically, synthesizes bounding-box and
vanishing-line conditioning rasters, emits training manifests, and ships a
desk-scale verifiable flow-matching core.  Hot kernels run through a compiled
extension with a pure-Python fallback selected at import.
"""

from ._kernels import BACKEND_NAME

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]
