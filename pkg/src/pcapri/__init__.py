"""NL-PCA and PRI-NLM denoising for 3D magnitude MR volumes."""

from . import experiments, io, metrics, nlpca, noise, phantom, pipeline, prinlm, tuner, volume
from .nlpca import NlpcaParams
from .pipeline import PipelineSpec, pca_pri_pcar
from .prinlm import PrinlmParams
from .volume import Volume3D

__version__ = "0.1.0"

__all__ = [
    "experiments",
    "io",
    "metrics",
    "nlpca",
    "noise",
    "phantom",
    "pipeline",
    "prinlm",
    "tuner",
    "volume",
    "NlpcaParams",
    "PrinlmParams",
    "PipelineSpec",
    "Volume3D",
    "pca_pri_pcar",
]
