"""Pre-trained desk-scale classifiers and their datasets."""
from .data import DATA_DIR_ENV, LabeledSet, load_dataset, read_idx
from .models import ZOO, ConvBN, LeNetBN, LinearBN, ResNet8BN, ZooModelSpec, bn_layers, get_spec
from .training import evaluate, freeze, load_checkpoint, pretrain, save_checkpoint

__all__ = [
    "DATA_DIR_ENV",
    "ConvBN",
    "LabeledSet",
    "LeNetBN",
    "LinearBN",
    "ResNet8BN",
    "ZOO",
    "ZooModelSpec",
    "bn_layers",
    "evaluate",
    "freeze",
    "get_spec",
    "load_checkpoint",
    "load_dataset",
    "pretrain",
    "read_idx",
    "save_checkpoint",
]
