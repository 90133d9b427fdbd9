"""Frame-length bias toolkit for text-video retrieval experiments.

Subpackages cover the full desk-scale pipeline: data model and file formats
(`core`), class relevancy (`relevance`), train/test bias auditing (`audit`),
pruning debiasers (`debias`), length-based partitioning (`splitter`), the
trainable two-tower matcher (`model`), stratified training and similarity
fusion (`causal`), ranking metrics (`metrics`), synthetic benchmark
generation (`synth`) and the command line front end (`cli`).
"""

__version__ = "0.1.0"
