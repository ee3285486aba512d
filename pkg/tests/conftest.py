import hashlib
import json
import time
from pathlib import Path

import pytest

import cpgate
from cpgate.harness.campaign import checkpoint_name, evaluate_policies, load_learned, run_training
from cpgate.harness.config import ExperimentConfig
from cpgate.harness.metrics import read_metrics_csv, write_metrics_csv
from cpgate.protocols import BaselinePolicy

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _RESULTS[number] = ("PASS" if rep.passed else "FAIL", text)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, text = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {text}")


def _source_digest(config: ExperimentConfig) -> str:
    h = hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode())
    root = Path(cpgate.__file__).parent
    for path in sorted(root.rglob("*")):
        if path.suffix in (".py", ".json"):
            h.update(path.relative_to(root).as_posix().encode())
            h.update(path.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def desk_config() -> ExperimentConfig:
    return ExperimentConfig.desk_scale()


@pytest.fixture(scope="session")
def trained(request, desk_config):
    """Desk-scale training run, cached on disk per source tree and config."""
    cache = request.config.cache.mkdir("cpgate-desk") / _source_digest(desk_config)
    meta_path = cache / "training.json"
    if not meta_path.exists():
        start = time.perf_counter()
        res = run_training(desk_config, cache)
        meta = {"seconds": time.perf_counter() - start, "episodes": res.episodes,
                "steps": sorted(res.checkpoints)}
        meta_path.write_text(json.dumps(meta))
    meta = json.loads(meta_path.read_text())
    meta["dir"] = cache
    meta["checkpoints"] = {s: cache / checkpoint_name(s) for s in meta["steps"]}
    return meta


@pytest.fixture(scope="session")
def desk_evaluation(trained, desk_config):
    """Paired-seed sweep of the final checkpoint against the baseline on the evaluation map."""
    path = trained["dir"] / "eval_metrics.csv"
    meta_path = trained["dir"] / "eval.json"
    if not meta_path.exists():
        final = trained["checkpoints"][max(trained["checkpoints"])]
        start = time.perf_counter()
        records = evaluate_policies(desk_config, [load_learned(final, desk_config), (BaselinePolicy(), None)])
        seconds = time.perf_counter() - start
        write_metrics_csv(records, path)
        meta_path.write_text(json.dumps({"seconds": seconds}))
    return {"records": read_metrics_csv(path), **json.loads(meta_path.read_text())}
