"""Multi-view indoor localization with graph location networks.

Subpackages: `numerics` (autodiff core), `floorplan` (location graphs),
`gln_model` (message passing + classifier), `map2vec` (location embeddings),
`zeroshot` (bilinear compatibility), `datasets` (ingestion + synthetic
worlds), `evalmetrics` (Recall/CDF/MED), `cli` (the `gln` command).
"""

__version__ = "0.1.0"
