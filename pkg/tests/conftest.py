import os

import pytest
from hypothesis import HealthCheck, settings

from eleson.config import Architecture, TrainConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TINY_ARCH = Architecture(n_steps=10, feature_dim=8, motion_conv=(4, 4), motion_fc=16, mag_conv=(4, 4), mag_fc=16,
                         gen_hidden=(16, 16), aux_hidden=8, adv_hidden=8, evidence_hidden=(16, 8))


def tiny_config(**kw) -> TrainConfig:
    return TrainConfig(arch=TINY_ARCH, **kw)


@pytest.fixture
def tiny_cfg():
    return tiny_config(epochs=2, batch_size=16)


@pytest.fixture(scope="session")
def small_dataset():
    from eleson.synth import gen_dataset
    return gen_dataset(40, seed=11, n_windows=150)


# -- shared synthetic benchmark ------------------------------------------------------------

BENCH_SEED = 0
VARIANTS = {
    "full": {},
    "raw": {"mag_input": "raw"},
    "causal_only": {"magnetic_branch": False},
    "mag_only": {"causal_branch": False},
    "novar": {"variance_term": False},
}


class Benchmark:
    """3,000 training windows and 1,000 behavior- and location-shifted test windows; models trained on demand."""

    def __init__(self, seed: int = BENCH_SEED):
        import time

        from eleson.synth import SHIFTED_BEHAVIOR_MIX, gen_dataset
        from eleson.train import split_by_session

        t0 = time.perf_counter()
        self.seed = seed
        self.cfg = TrainConfig(seed=seed)
        self.data = gen_dataset(500, seed=seed, n_windows=3000)
        self.train, self.valid = split_by_session(self.data, self.cfg.valid_fraction, seed)
        self.test = gen_dataset(200, seed=seed + 1000, n_windows=1000, behavior_mix=SHIFTED_BEHAVIOR_MIX,
                                field_range=(50.0, 65.0))
        self.seconds = {"data": time.perf_counter() - t0}
        self._models = {}
        self._reports = {}

    def model(self, name: str):
        import time

        from eleson.train import baseline_e2e_softmax, temperature_scale, train

        if name not in self._models:
            t0 = time.perf_counter()
            if name == "baseline":
                bundle = baseline_e2e_softmax(self.cfg, self.train, self.valid)
                bundle.temperature = temperature_scale(bundle, self.valid)
            else:
                bundle = train(self.cfg.replace(**VARIANTS[name]), self.train, self.valid)
            self._models[name] = bundle
            self.seconds[name] = time.perf_counter() - t0
        return self._models[name]

    def report(self, name: str, tau: float):
        import time

        from eleson.train import evaluate

        key = (name, tau)
        if key not in self._reports:
            bundle = self.model(name)
            t0 = time.perf_counter()
            self._reports[key] = evaluate(bundle, self.test, tau)
            self.seconds[f"eval_{name}"] = self.seconds.get(f"eval_{name}", 0.0) + time.perf_counter() - t0
        return self._reports[key]


@pytest.fixture(scope="session")
def benchmark():
    return Benchmark()


# acceptance verdicts are echoed in the terminal summary so they survive output capture
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
