"""Optimal-transport barycenters learned by adversarial minimax training."""
from .costs import CostSpec
from .data import gen_clusters, gen_latent_curve, gen_mixture, synthetic_images
from .estimators import (BarycentricAutoencoder, BaryNetClustering, FactorDiscovery,
                         SemiSupervisedBaryNet, SupervisedBaryNet)
from .nets import DiscriminatorPair, LabelNet, NetSpec, TransportNet
from .objectives import LabeledSample
from .optimizers import NumericalAbort

__version__ = "0.1.0"

__all__ = [
    "BarycentricAutoencoder", "BaryNetClustering", "CostSpec", "DiscriminatorPair",
    "FactorDiscovery", "LabelNet", "LabeledSample", "NetSpec", "NumericalAbort",
    "SemiSupervisedBaryNet", "SupervisedBaryNet", "TransportNet", "gen_clusters",
    "gen_latent_curve", "gen_mixture", "synthetic_images",
]
