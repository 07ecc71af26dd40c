"""Link prediction with a linear graph autoencoder and classic heuristics.

Kept intentionally light so the CLI can configure BLAS thread limits from
LINKGAE_THREADS before numpy is imported. Import submodules directly:

    from linkgae import graph, heuristics, engine, model, train, evaluation
"""

__version__ = "0.1.0"
