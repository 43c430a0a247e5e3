"""Formality-controlled machine translation toolkit.

Pipeline stages: extract a formal/informal lexicon from contrastive tagged
references, auto-annotate a parallel corpus, train a tag-controlled
transformer, translate with a requested register, and evaluate with the
matched-accuracy metric and in-tag masked-token accuracy. Exposed through
a CLI (``fmtmt``), an HTTP service, and a web console.
"""

from .labels import FormalityLabel

__version__ = "0.1.0"

__all__ = ["FormalityLabel", "__version__"]
