"""Multi-task molecular property prediction engine.

Pipeline: SMILES -> directed molecular graph -> message passing encoder ->
fusion with physicochemical / quantum descriptors -> per-task classifier
heads, trained with a sample-scale adaptive task weighting loss.
"""

__version__ = "0.1.0"
