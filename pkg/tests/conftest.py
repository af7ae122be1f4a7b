"""Session-wide desk-scale lab: corpora, trained victims, cached crafts.

Training the victim networks dominates suite runtime, so everything heavy
is built once per session and shared between the unit tests that need a
realistic trained model and the acceptance criteria.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from uapcraft.baselines import UapConfig, random_perturbation, uap_craft
from uapcraft.data import save_idx, synth_dataset
from uapcraft.evaluate import fooling_rate
from uapcraft.fff import CraftConfig, craft
from uapcraft.modelio import save_model, save_perturbation
from uapcraft.presets import build_preset
from uapcraft.tensorops import Rng
from uapcraft.train import TrainConfig, accuracy, train

# corpus and training setup shared by all desk-scale experiments
CLASSES = 10
SHAPE = (1, 28, 28)
N_TRAIN = 2500
N_TEST = 1000
CONTRAST = 4.0
NOISE_STD = 8.0
CORPUS_SEEDS = {"c1": 101, "c2": 202}
TRAIN_CFG = dict(epochs=4, batch_size=100, lr=3e-3, eval_fraction=0.0)
FFF_MAX_ITERS = 2000
UAP_EPOCHS = 5
ACCEPT_SEEDS = (0, 1, 2)


class DeskLab:
    def __init__(self, root: Path):
        self.root = root
        self._data = {}
        self._models = {}
        self._fff = {}
        self._uap = {}

    # -- corpora -----------------------------------------------------------
    def corpus(self, tag: str):
        """(train, test) datasets for corpus ``tag``; also materialized as
        IDX files so CLI runs exercise the same bytes."""
        if tag not in self._data:
            full = synth_dataset(Rng(CORPUS_SEEDS[tag]), CLASSES,
                                 N_TRAIN + N_TEST, SHAPE, contrast=CONTRAST,
                                 noise_std=NOISE_STD, name=tag)
            tr = full.subset(np.arange(N_TRAIN))
            te = full.subset(np.arange(N_TRAIN, N_TRAIN + N_TEST))
            paths = {}
            for split, ds in (("train", tr), ("test", te)):
                ipath = self.root / f"{tag}-{split}-images.idx"
                lpath = self.root / f"{tag}-{split}-labels.idx"
                save_idx(ds, ipath, lpath)
                paths[split] = (str(ipath), str(lpath))
            self._data[tag] = (tr, te, paths)
        return self._data[tag]

    def corpus_arg(self, tag: str, split: str) -> str:
        _, _, paths = self.corpus(tag)
        return "idx:{},{}".format(*paths[split])

    # -- victims -----------------------------------------------------------
    def model(self, arch: str, tag: str = "c1"):
        """Returns (model, ffm_path, test_accuracy, train_seconds)."""
        key = (arch, tag)
        if key not in self._models:
            tr, te, _ = self.corpus(tag)
            t0 = time.perf_counter()
            model, _ = train(build_preset(arch, SHAPE, CLASSES), tr,
                             TrainConfig(seed=0, **TRAIN_CFG))
            seconds = time.perf_counter() - t0
            path = self.root / f"{arch}-{tag}.ffm"
            save_model(model, path)
            self._models[key] = (model, str(path), accuracy(model, te), seconds)
        return self._models[key]

    # -- perturbations -----------------------------------------------------
    def fff(self, arch: str, xi: float, seed: int, tag: str = "c1",
            init_delta=None):
        key = (arch, tag, xi, seed, init_delta is not None)
        if key not in self._fff:
            model, _, _, _ = self.model(arch, tag)
            cfg = CraftConfig(xi=xi, seed=seed, max_iters=FFF_MAX_ITERS,
                              init_delta=init_delta)
            pert, trace = craft(model, cfg)
            path = self.root / f"fff-{arch}-{tag}-{xi}-{seed}-{key[-1]}.ffp"
            save_perturbation(pert, path)
            self._fff[key] = (pert, trace, str(path))
        return self._fff[key]

    def uap(self, samples: int, seed: int, arch: str = "convA",
            tag: str = "c1"):
        key = (arch, tag, samples, seed)
        if key not in self._uap:
            model, _, _, _ = self.model(arch, tag)
            tr, _, _ = self.corpus(tag)
            cfg = UapConfig(xi=10.0, sample_count=samples,
                            max_epochs=UAP_EPOCHS, seed=seed)
            pert, trace = uap_craft(model, tr, cfg)
            self._uap[key] = (pert, trace)
        return self._uap[key]

    def random_delta(self, xi: float, seed: int):
        return random_perturbation(SHAPE, xi, Rng(seed))

    def rate(self, model, pert, tag: str = "c1") -> float:
        _, te, _ = self.corpus(tag)
        return fooling_rate(model, pert, te).fooling_rate


@pytest.fixture(scope="session")
def lab(tmp_path_factory) -> DeskLab:
    return DeskLab(tmp_path_factory.mktemp("desklab"))
