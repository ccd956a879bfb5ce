from __future__ import annotations

import textwrap

import pytest


STUB_CONFIG = textwrap.dedent(
    """\
    endpoints:
      judge:
        base_url: stub://judge{noise}
        model_name: stub-judge
        requests_per_second_cap: 100000
      guard:
        base_url: stub://guard
        model_name: stub-guard
        requests_per_second_cap: 100000
      reward_model:
        base_url: stub://reward-model
        model_name: stub-rm
        requests_per_second_cap: 100000
      reference:
        base_url: stub://reference
        model_name: stub-ref
        requests_per_second_cap: 100000
    annotate:
      workers: {workers}
      checkpoint_every: {checkpoint}
      default_dataset: {dataset}
      default_subset: {subset}
    """
)


@pytest.fixture
def stub_config(tmp_path):
    """Write a stub-endpoint config file and return its path."""

    def _write(workers=1, checkpoint=100, dataset="rawdemo", subset="unit", noisy=True):
        path = tmp_path / "config.yaml"
        path.write_text(
            STUB_CONFIG.format(
                noise="?noise=1" if noisy else "",
                workers=workers,
                checkpoint=checkpoint,
                dataset=dataset,
                subset=subset,
            ),
            encoding="utf-8",
        )
        return path

    return _write
