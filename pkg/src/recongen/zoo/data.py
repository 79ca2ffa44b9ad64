"""Dataset ingestion for the desk-scale zoo.

Sources
-------
mnist_like
    ``idx``: the four standard IDX archives under ``<data_dir>/mnist``
    (optionally downloaded and md5-checked). ``bundled``: the real
    5000-image MNIST subset shipped with ``mlxtend``, split 4000/1000.
cifar_like
    ``pickle``: the python batches under ``<data_dir>/cifar-10-batches-py``.

Images are scaled to [-1, 1] to match the generators' tanh output.
"""
from __future__ import annotations

import gzip
import hashlib
import logging
import os
import pickle
import struct
import tarfile
import urllib.request
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .. import audit
from ..errors import ConfigError, IngestionError, InputError

log = logging.getLogger(__name__)

DATA_DIR_ENV = "AUTORECON_DATA_DIR"

MNIST_MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"
MNIST_FILES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"
CIFAR_MD5 = "c58f30108f718f92721af3b95e74349a"

DATASETS = ("mnist_like", "cifar_like")


class LabeledSet:
    """Real labeled images. Every read is reported to :mod:`recongen.audit`."""

    def __init__(self, images: torch.Tensor, labels: torch.Tensor, name: str = ""):
        if len(images) != len(labels):
            raise InputError("images and labels differ in length")
        self._images = images
        self._labels = labels
        self.name = name

    def __len__(self):
        return len(self._labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self._images.shape[1:])

    @property
    def num_classes(self) -> int:
        return int(self._labels.max()) + 1 if len(self) else 0

    def tensors(self) -> tuple[torch.Tensor, torch.Tensor]:
        audit.touch(len(self))
        return self._images, self._labels

    def batches(self, batch_size: int, *, shuffle: bool = False, generator: torch.Generator | None = None):
        order = torch.randperm(len(self), generator=generator) if shuffle else torch.arange(len(self))
        for i in range(0, len(self), batch_size):
            idx = order[i:i + batch_size]
            audit.touch(len(idx))
            yield self._images[idx], self._labels[idx]

    def subset(self, n: int) -> "LabeledSet":
        return LabeledSet(self._images[:n], self._labels[:n], self.name)


def resolve_data_dir(data_dir=None) -> Path | None:
    if data_dir is None:
        data_dir = os.environ.get(DATA_DIR_ENV)
    return Path(data_dir) if data_dir else None


def _md5(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fetch(url: str, dest: Path, md5: str) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    log.info("downloading %s", url)
    try:
        urllib.request.urlretrieve(url, dest)
    except OSError as exc:
        raise IngestionError(f"download of {url} failed: {exc}") from exc
    if _md5(dest) != md5:
        dest.unlink()
        raise IngestionError(f"checksum mismatch for {dest.name}")


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped) into a numpy array."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code != 0x08:
        raise IngestionError(f"{path.name}: not an unsigned-byte IDX file")
    shape = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    if arr.size != int(np.prod(shape)):
        raise IngestionError(f"{path.name}: truncated payload")
    return arr.reshape(shape)


def _mnist_tensor(raw: np.ndarray, image_size: int) -> torch.Tensor:
    x = torch.tensor(raw, dtype=torch.float32).view(-1, 1, 28, 28) / 127.5 - 1.0
    x = F.pad(x, (2, 2, 2, 2), value=-1.0)
    if image_size == 16:
        x = F.avg_pool2d(x, 2)
    elif image_size != 32:
        raise ConfigError("mnist_like supports image_size 16 or 32")
    return x


def _find_idx(root: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz"):
        if (root / name).exists():
            return root / name
    return None


def load_mnist_idx(data_dir, *, download: bool = False, image_size: int = 16):
    root = Path(data_dir) / "mnist"
    stems = [n[:-3] for n in MNIST_FILES]
    missing = [s for s in stems if _find_idx(root, s) is None]
    if missing:
        if not download:
            raise IngestionError(f"MNIST archives missing under {root}: {missing} (downloads disabled)")
        for name, md5 in MNIST_FILES.items():
            if name[:-3] in missing:
                _fetch(MNIST_MIRROR + name, root / name, md5)
    arrays = [read_idx(_find_idx(root, s)) for s in stems]
    train = LabeledSet(_mnist_tensor(arrays[0], image_size), torch.tensor(arrays[1], dtype=torch.long), "mnist_like/train")
    test = LabeledSet(_mnist_tensor(arrays[2], image_size), torch.tensor(arrays[3], dtype=torch.long), "mnist_like/test")
    return train, test


def load_mnist_bundled(*, image_size: int = 16, test_size: int = 1000):
    from mlxtend.data import mnist_data
    from sklearn.model_selection import train_test_split

    X, y = mnist_data()
    idx = np.arange(len(y))
    tr, te = train_test_split(idx, test_size=test_size, stratify=y, random_state=0)
    tr, te = np.sort(tr), np.sort(te)
    images = _mnist_tensor(X.astype(np.uint8), image_size)
    labels = torch.tensor(y, dtype=torch.long)
    return (LabeledSet(images[tr], labels[tr], "mnist_like/train"),
            LabeledSet(images[te], labels[te], "mnist_like/test"))


def _unpickle(path: Path) -> dict:
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="bytes")


def load_cifar_pickle(data_dir, *, download: bool = False):
    root = Path(data_dir) / "cifar-10-batches-py"
    names = [f"data_batch_{i}" for i in range(1, 6)] + ["test_batch"]
    if not all((root / n).exists() for n in names):
        if not download:
            raise IngestionError(f"CIFAR batches missing under {root} (downloads disabled)")
        archive = Path(data_dir) / "cifar-10-python.tar.gz"
        _fetch(CIFAR_URL, archive, CIFAR_MD5)
        with tarfile.open(archive) as tar:
            tar.extractall(data_dir)

    def load(files):
        xs, ys = [], []
        for n in files:
            d = _unpickle(root / n)
            xs.append(np.asarray(d[b"data"], dtype=np.uint8))
            ys.extend(d[b"labels"])
        x = torch.tensor(np.concatenate(xs), dtype=torch.float32).view(-1, 3, 32, 32) / 127.5 - 1.0
        return x, torch.tensor(ys, dtype=torch.long)

    return (LabeledSet(*load(names[:5]), "cifar_like/train"),
            LabeledSet(*load(names[5:]), "cifar_like/test"))


def load_dataset(name: str, data_dir=None, *, source: str = "auto", download: bool = False,
                 image_size: int = 16):
    """Return ``(train, test)`` :class:`LabeledSet` objects.

    With ``source="auto"`` an explicit (or environment-provided) data
    directory selects the on-disk archives; otherwise mnist_like falls back
    to the bundled subset.
    """
    if name not in DATASETS:
        raise ConfigError(f"unknown dataset {name!r}")
    root = resolve_data_dir(data_dir)
    if name == "mnist_like":
        if source == "bundled" or (source == "auto" and root is None):
            return load_mnist_bundled(image_size=image_size)
        if root is None:
            raise IngestionError(f"no data directory given (set {DATA_DIR_ENV})")
        return load_mnist_idx(root, download=download, image_size=image_size)
    if root is None:
        raise IngestionError(f"cifar_like needs a data directory (set {DATA_DIR_ENV})")
    return load_cifar_pickle(root, download=download)
