"""Decentralized neural controllers with compositional ISS-Lyapunov certificates."""

from .certificates import (CertificateBundle, DecentralizedPolicy, IssCertificate, PortError,
                           new_bundle, port_certificate)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .environments import make_env
from .estimator import NetworkCertificateLearner, check_network_states
from .training import TrainConfig, train
from .verification import CheckReport, check_certificate

__version__ = "0.1.0"

__all__ = [
    "CertificateBundle", "CheckReport", "CheckpointError", "DecentralizedPolicy",
    "IssCertificate", "NetworkCertificateLearner", "PortError", "TrainConfig",
    "check_certificate", "check_network_states", "load_checkpoint", "make_env", "new_bundle",
    "port_certificate", "save_checkpoint", "train",
]
