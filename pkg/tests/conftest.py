"""Session fixtures: desk-scale datasets and a cache of trained toy models."""
import pytest

from wtamem.activation import fixed_l
from wtamem.data import make_synthetic
from wtamem.model import ModelConfig, build
from wtamem.training import TrainConfig, evaluate, inference_mode, train

DESK_TRAIN = 5000
DESK_TEST = 2000
DESK_EPOCHS = 20
DESK_WIDTHS = (16, 32, 64)

ACCEPTANCE_LINES = []


class ToyTrainer:
    """Trains each (group, seed, t_init, t_final) configuration at most once."""

    def __init__(self):
        self.train_set = make_synthetic(DESK_TRAIN, seed=[0, 0])
        self.test_set = make_synthetic(DESK_TEST, seed=[0, 1])
        self._models = {}
        self._scores = {}

    def model(self, group=fixed_l(2), seed=0, t_init=1.0, t_final=1000.0):
        key = (group, seed, t_init, t_final)
        if key not in self._models:
            cfg = ModelConfig(widths=DESK_WIDTHS, stem_stride=2, group=group, mode="anneal")
            model = build(cfg, seed=seed)
            train(model, self.train_set, TrainConfig(epochs=DESK_EPOCHS, seed=seed,
                                                     t_init=t_init, t_final=t_final))
            self._models[key] = model
        return self._models[key]

    def accuracy(self, group=fixed_l(2), seed=0, t_init=1.0, t_final=1000.0):
        key = (group, seed, t_init, t_final)
        if key not in self._scores:
            model = self.model(group, seed, t_init, t_final)
            self._scores[key] = evaluate(model, self.test_set, mode=inference_mode(model))
        return self._scores[key]


@pytest.fixture(scope="session")
def toy_trainer():
    return ToyTrainer()


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


